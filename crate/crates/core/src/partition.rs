//! Recursive simplex partitioning calibrators.
//!
//! Both fitters start from a single region covering the simplex and
//! repeatedly split one region around an affine threshold into `K` children.
//! Candidate splits are ranked by
//!
//! ```text
//! M_R(gamma) = sum_k W(S_k) * || mean_R - mean_{S_k} ||_1
//! ```
//!
//! computed on raw (unsmoothed) weighted label means. The multi-class IRP
//! fitter ([`fit_mc_irp`]) only accepts a split if the calibrated forecasts
//! stay ROC monotone; [`fit_recursive_bins`] accepts any informative split.
//! Leaf values are Laplace smoothed: `(sum w*onehot(y) + alpha) / (W + alpha*K)`.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::roc::{fold_gaps, lattice_thresholds, DiffSystem, DEFAULT_GRID_CAP};
use crate::simplex::{region_of, AffineThreshold};

pub const DEFAULT_ALPHA: f64 = 1.0;

/// Where candidate thresholds come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CandidateSource {
    /// Forecasts of the samples inside the region being split.
    DataPoints,
    /// A regular lattice on the threshold plane (see [`lattice_thresholds`]).
    Lattice { step: f64 },
    DataPointsAndLattice { step: f64 },
}

impl CandidateSource {
    fn lattice_step(&self) -> Option<f64> {
        match *self {
            CandidateSource::DataPoints => None,
            CandidateSource::Lattice { step } | CandidateSource::DataPointsAndLattice { step } => {
                Some(step)
            }
        }
    }

    fn uses_data(&self) -> bool {
        !matches!(self, CandidateSource::Lattice { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOptions {
    pub candidates: CandidateSource,
    pub alpha: f64,
    pub max_leaves: Option<usize>,
}

impl Default for PartitionOptions {
    fn default() -> Self {
        Self {
            candidates: CandidateSource::DataPoints,
            alpha: DEFAULT_ALPHA,
            max_leaves: None,
        }
    }
}

/// A node of the fitted partition tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionNode {
    pub id: usize,
    /// Smoothed leaf value (also kept on split nodes for prefix models).
    pub value: Vec<f64>,
    /// Weighted mean one-hot label of the calibration samples in the region.
    pub raw_mean: Vec<f64>,
    pub count: usize,
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitNode {
    pub gamma: AffineThreshold,
    pub iteration: usize,
    /// One child per region of `gamma`, in region order.
    pub children: Vec<RegionNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub iteration: usize,
    pub region: usize,
    pub gamma: AffineThreshold,
    pub criterion: f64,
    /// Nonempty leaves after the split.
    pub leaves: usize,
}

/// Piecewise-constant calibration map on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexPartitionModel {
    k: usize,
    alpha: f64,
    root: RegionNode,
    split_log: Vec<SplitRecord>,
}

impl SimplexPartitionModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn root(&self) -> &RegionNode {
        &self.root
    }

    pub fn split_log(&self) -> &[SplitRecord] {
        &self.split_log
    }

    /// Thresholds of all applied splits, in application order.
    pub fn introduced_thresholds(&self) -> Vec<AffineThreshold> {
        self.split_log.iter().map(|r| r.gamma.clone()).collect()
    }

    fn leaf(&self, p: &[f64]) -> &RegionNode {
        let mut node = &self.root;
        while let Some(split) = &node.split {
            node = &split.children[region_of(p, split.gamma.as_slice())];
        }
        node
    }

    fn check_dim(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: p.len() });
        }
        Ok(())
    }

    /// Smoothed value of the leaf containing `p`.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        Ok(self.leaf(p).value.clone())
    }

    /// Unsmoothed mean of the leaf containing `p`.
    pub fn apply_raw(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(p)?;
        Ok(self.leaf(p).raw_mean.clone())
    }

    pub fn leaf_id(&self, p: &[f64]) -> usize {
        self.leaf(p).id
    }

    pub fn calibrate(&self, forecasts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        forecasts.iter().map(|p| self.apply(p)).collect()
    }

    pub fn calibrate_raw(&self, forecasts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        forecasts.iter().map(|p| self.apply_raw(p)).collect()
    }

    /// Leaves holding calibration weight.
    pub fn n_leaves(&self) -> usize {
        fn walk(n: &RegionNode) -> usize {
            match &n.split {
                Some(s) => s.children.iter().map(walk).sum(),
                None => (n.weight > 0.0) as usize,
            }
        }
        walk(&self.root)
    }

    /// The model as it stood after its first `splits` splits.
    pub fn truncated(&self, splits: usize) -> Self {
        fn cut(n: &RegionNode, splits: usize) -> RegionNode {
            let mut out = n.clone();
            out.split = match &n.split {
                Some(s) if s.iteration < splits => Some(SplitNode {
                    gamma: s.gamma.clone(),
                    iteration: s.iteration,
                    children: s.children.iter().map(|c| cut(c, splits)).collect(),
                }),
                _ => None,
            };
            out
        }
        Self {
            k: self.k,
            alpha: self.alpha,
            root: cut(&self.root, splits),
            split_log: self.split_log[..splits.min(self.split_log.len())].to_vec(),
        }
    }

    /// Same partition with leaf values re-smoothed at a new `alpha`.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        fn redo(n: &mut RegionNode, parent: Option<&[f64]>, alpha: f64, k: usize) {
            n.value = if n.weight > 0.0 {
                leaf_value(&n.raw_mean, n.weight, alpha, k)
            } else {
                parent.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0 / k as f64; k])
            };
            let value = n.value.clone();
            if let Some(s) = &mut n.split {
                for c in &mut s.children {
                    redo(c, Some(&value), alpha, k);
                }
            }
        }
        let mut out = self.clone();
        out.alpha = alpha;
        redo(&mut out.root, None, alpha, self.k);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        fn walk(n: &RegionNode, k: usize) -> Result<()> {
            if n.value.len() != k || n.raw_mean.len() != k {
                return Err(Error::invalid(format!("node {}: vectors must have length {k}", n.id)));
            }
            if let Some(s) = &n.split {
                if s.children.len() != k || s.gamma.dim() != k {
                    return Err(Error::invalid(format!("node {}: split must have {k} children", n.id)));
                }
                s.children.iter().try_for_each(|c| walk(c, k))?;
            }
            Ok(())
        }
        if self.k < 2 {
            return Err(Error::invalid("partition model needs K >= 2"));
        }
        check_alpha(self.alpha)?;
        walk(&self.root, self.k)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(())
}

/// Output value of a nonempty leaf; exactly the raw mean when `alpha = 0`.
fn leaf_value(raw_mean: &[f64], weight: f64, alpha: f64, k: usize) -> Vec<f64> {
    if alpha == 0.0 {
        raw_mean.to_vec()
    } else {
        smoothed(raw_mean, weight, alpha, k)
    }
}

fn smoothed(raw_mean: &[f64], weight: f64, alpha: f64, k: usize) -> Vec<f64> {
    let denom = weight + alpha * k as f64;
    raw_mean.iter().map(|m| (m * weight + alpha) / denom).collect()
}

/// Per-child weighted label totals of a region under one threshold.
struct ChildStats {
    class_w: Vec<Vec<f64>>,
    weight: Vec<f64>,
}

impl ChildStats {
    fn compute(ds: &Dataset, members: &[usize], gamma: &[f64], k: usize) -> Self {
        let mut s = ChildStats { class_w: vec![vec![0.0; k]; k], weight: vec![0.0; k] };
        for &i in members {
            let r = region_of(&ds.forecasts()[i], gamma);
            let w = ds.weights()[i];
            s.class_w[r][ds.labels()[i]] += w;
            s.weight[r] += w;
        }
        s
    }

    fn nonempty(&self) -> usize {
        self.weight.iter().filter(|w| **w > 0.0).count()
    }

    fn criterion(&self, parent_mean: &[f64]) -> f64 {
        (0..self.weight.len())
            .filter(|&c| self.weight[c] > 0.0)
            .map(|c| {
                let w = self.weight[c];
                let l1: f64 = self.class_w[c]
                    .iter()
                    .zip(parent_mean)
                    .map(|(cw, m)| (cw / w - m).abs())
                    .sum();
                w * l1
            })
            .sum()
    }
}

fn region_mean(ds: &Dataset, members: &[usize], k: usize) -> (Vec<f64>, f64) {
    let mut class_w = vec![0.0; k];
    let mut weight = 0.0;
    for &i in members {
        class_w[ds.labels()[i]] += ds.weights()[i];
        weight += ds.weights()[i];
    }
    if weight > 0.0 {
        class_w.iter_mut().for_each(|c| *c /= weight);
    }
    (class_w, weight)
}

/// Splitting criterion of `gamma` on the samples `members` of `ds`: the
/// weight of each nonempty child times the L1 distance between the parent's
/// and the child's mean label vectors, summed over children.
pub fn split_criterion(ds: &Dataset, members: &[usize], gamma: &AffineThreshold) -> Result<f64> {
    if gamma.dim() != ds.k() {
        return Err(Error::DimensionMismatch { expected: ds.k(), got: gamma.dim() });
    }
    if members.is_empty() {
        return Err(Error::invalid("split criterion of an empty region"));
    }
    if let Some(&i) = members.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::invalid(format!("sample index {i} out of range")));
    }
    let (mean, _) = region_mean(ds, members, ds.k());
    Ok(ChildStats::compute(ds, members, gamma.as_slice(), ds.k()).criterion(&mean))
}

fn bounds_of(ds: &Dataset, members: &[usize], k: usize) -> Vec<f64> {
    let mut b = vec![f64::INFINITY; k * k];
    for &i in members {
        fold_gaps(&mut b, &ds.forecasts()[i]);
    }
    b
}

#[derive(Debug, Clone)]
struct Candidate {
    gamma: AffineThreshold,
    criterion: f64,
}

struct ArenaNode {
    /// Raw mean label; zero vector for empty nodes.
    mean: Vec<f64>,
    /// `bounds[a*K + j]`: smallest `p[a] - p[j]` over raw forecasts inside.
    bounds: Vec<f64>,
    weight: f64,
    count: usize,
    split: Option<(AffineThreshold, usize, Vec<usize>)>,
}

struct OpenRegion {
    node: usize,
    members: Vec<usize>,
    mean: Vec<f64>,
    candidates: Option<Vec<Candidate>>,
}

struct Fitter<'a> {
    ds: &'a Dataset,
    k: usize,
    monotone: bool,
    source: CandidateSource,
    lattice: Vec<AffineThreshold>,
    arena: Vec<ArenaNode>,
    leaf_of: Vec<usize>,
    open: Vec<OpenRegion>,
    introduced: Vec<AffineThreshold>,
    log: Vec<SplitRecord>,
}

impl<'a> Fitter<'a> {
    fn new(ds: &'a Dataset, opts: &PartitionOptions, monotone: bool) -> Result<Self> {
        check_alpha(opts.alpha)?;
        if opts.max_leaves == Some(0) {
            return Err(Error::invalid("max_leaves must be at least 1"));
        }
        let k = ds.k();
        let lattice = match opts.candidates.lattice_step() {
            Some(step) => lattice_thresholds(k, step, DEFAULT_GRID_CAP)?,
            None => Vec::new(),
        };
        let members: Vec<usize> = (0..ds.len()).collect();
        let (mean, weight) = region_mean(ds, &members, k);
        if !(weight > 0.0) {
            return Err(Error::invalid("dataset has zero total weight"));
        }
        Ok(Self {
            ds,
            k,
            monotone,
            source: opts.candidates,
            lattice,
            arena: vec![ArenaNode {
                bounds: bounds_of(ds, &members, k),
                mean: mean.clone(),
                weight,
                count: ds.len(),
                split: None,
            }],
            leaf_of: vec![0; ds.len()],
            open: vec![OpenRegion { node: 0, members, mean, candidates: None }],
            introduced: Vec::new(),
            log: Vec::new(),
        })
    }

    fn n_leaves(&self) -> usize {
        self.arena
            .iter()
            .filter(|n| n.split.is_none() && n.weight > 0.0)
            .count()
    }

    fn candidates(&self, region: &OpenRegion) -> Vec<Candidate> {
        let mut gammas: Vec<AffineThreshold> = Vec::new();
        if self.source.uses_data() {
            let mut seen = HashSet::new();
            for &i in &region.members {
                let p = &self.ds.forecasts()[i];
                if seen.insert(p.iter().map(|x| x.to_bits()).collect::<Vec<_>>()) {
                    gammas.push(AffineThreshold::from_unchecked(p.clone()));
                }
            }
        }
        gammas.extend(self.lattice.iter().cloned());

        let weight = self.arena[region.node].weight;
        let floor = 1e-12 * weight;
        let mut out: Vec<Candidate> = gammas
            .into_par_iter()
            .filter_map(|gamma| {
                let stats = ChildStats::compute(self.ds, &region.members, gamma.as_slice(), self.k);
                if stats.nonempty() < 2 {
                    return None;
                }
                let criterion = stats.criterion(&region.mean);
                (criterion > floor).then_some(Candidate { gamma, criterion })
            })
            .collect();
        out.sort_by(|a, b| {
            b.criterion
                .total_cmp(&a.criterion)
                .then_with(|| a.gamma.lex_cmp(&b.gamma))
        });
        out
    }

    /// Whether splitting `region` at `gamma` keeps the calibrated forecasts
    /// ROC monotone.
    ///
    /// Checked on raw means; smoothing only touches the emitted values.
    ///
    /// Locally, the new children's means must still be told apart by some
    /// threshold the way `gamma` tells their samples apart: child `c`'s mean
    /// in region `c`. Globally, under each introduced threshold and the
    /// candidate, the calibrated partition must be realizable on the raw
    /// forecasts. Leaves are constant on the calibrated side, so each one
    /// contributes its precomputed raw gap bounds to the realizability system.
    fn admissible(&self, region: &OpenRegion, gamma: &AffineThreshold) -> bool {
        let k = self.k;
        let mut class_w = vec![vec![0.0; k]; k];
        let mut weight = vec![0.0; k];
        let mut bounds = vec![vec![f64::INFINITY; k * k]; k];
        for &i in &region.members {
            let p = &self.ds.forecasts()[i];
            let c = region_of(p, gamma.as_slice());
            class_w[c][self.ds.labels()[i]] += self.ds.weights()[i];
            weight[c] += self.ds.weights()[i];
            fold_gaps(&mut bounds[c], p);
        }
        let children: Vec<(usize, Vec<f64>)> = (0..k)
            .filter(|&c| weight[c] > 0.0)
            .map(|c| (c, class_w[c].iter().map(|x| x / weight[c]).collect()))
            .collect();

        let mut local = DiffSystem::new(k);
        for (c, mean) in &children {
            local.require_point(*c, mean);
        }
        if !local.feasible() {
            return false;
        }

        let mut groups: Vec<(&[f64], &[f64])> = self
            .arena
            .iter()
            .enumerate()
            .filter(|(id, n)| n.split.is_none() && n.weight > 0.0 && *id != region.node)
            .map(|(_, n)| (n.mean.as_slice(), n.bounds.as_slice()))
            .collect();
        groups.extend(children.iter().map(|(c, m)| (m.as_slice(), bounds[*c].as_slice())));

        self.introduced.iter().chain(std::iter::once(gamma)).all(|probe| {
            let mut sys = DiffSystem::new(k);
            for (value, b) in &groups {
                sys.require(region_of(value, probe.as_slice()), b);
            }
            sys.feasible()
        })
    }

    fn best_split(&self, region: &OpenRegion) -> Option<usize> {
        let cands = region.candidates.as_ref()?;
        if self.monotone {
            cands.iter().position(|c| self.admissible(region, &c.gamma))
        } else if cands.is_empty() {
            None
        } else {
            Some(0)
        }
    }

    fn apply(&mut self, open_idx: usize, cand: usize) {
        let region = self.open.remove(open_idx);
        let Candidate { gamma, criterion } = region.candidates.as_ref().unwrap()[cand].clone();
        let iteration = self.log.len();
        let first_child = self.arena.len();
        let mut child_members = vec![Vec::new(); self.k];
        for &i in &region.members {
            child_members[region_of(&self.ds.forecasts()[i], gamma.as_slice())].push(i);
        }
        for (c, members) in child_members.into_iter().enumerate() {
            let (mean, weight) = region_mean(self.ds, &members, self.k);
            let id = first_child + c;
            for &i in &members {
                self.leaf_of[i] = id;
            }
            self.arena.push(ArenaNode {
                bounds: if self.monotone { bounds_of(self.ds, &members, self.k) } else { Vec::new() },
                mean: mean.clone(),
                weight,
                count: members.len(),
                split: None,
            });
            if weight > 0.0 {
                self.open.push(OpenRegion { node: id, members, mean, candidates: None });
            }
        }
        self.arena[region.node].split =
            Some((gamma.clone(), iteration, (first_child..first_child + self.k).collect()));
        self.introduced.push(gamma.clone());
        let leaves = self.n_leaves();
        self.log.push(SplitRecord {
            iteration,
            region: region.node,
            gamma,
            criterion,
            leaves,
        });
    }

    fn run(mut self, max_leaves: Option<usize>, alpha: f64) -> SimplexPartitionModel {
        loop {
            if max_leaves.is_some_and(|m| self.n_leaves() >= m) {
                break;
            }
            let pending: Vec<usize> = (0..self.open.len())
                .filter(|&r| self.open[r].candidates.is_none())
                .collect();
            for r in pending {
                let c = self.candidates(&self.open[r]);
                self.open[r].candidates = Some(c);
            }
            let choices: Vec<Option<usize>> = self
                .open
                .par_iter()
                .map(|region| self.best_split(region))
                .collect();

            // largest criterion wins; ties go to the earlier region, whose
            // list is already ordered by threshold
            let mut best: Option<(usize, usize, f64)> = None;
            for (r, choice) in choices.iter().enumerate() {
                if let Some(c) = *choice {
                    let m = self.open[r].candidates.as_ref().unwrap()[c].criterion;
                    if best.is_none_or(|(_, _, bm)| m > bm) {
                        best = Some((r, c, m));
                    }
                }
            }
            let Some((r, c, _)) = best else {
                self.open.clear();
                break;
            };
            let node = self.open[r].node;
            let mut keep = choices.iter().map(Option::is_some);
            self.open.retain(|_| keep.next().unwrap());
            let r = self.open.iter().position(|o| o.node == node).unwrap();
            self.apply(r, c);
        }
        self.finish(alpha)
    }

    fn finish(self, alpha: f64) -> SimplexPartitionModel {
        fn build(arena: &[ArenaNode], id: usize, parent: Option<(&[f64], &[f64])>, alpha: f64, k: usize) -> RegionNode {
            let n = &arena[id];
            let (raw_mean, value) = if n.weight > 0.0 {
                (n.mean.clone(), leaf_value(&n.mean, n.weight, alpha, k))
            } else {
                let (r, v) = parent.expect("root has positive weight");
                (r.to_vec(), v.to_vec())
            };
            let split = n.split.as_ref().map(|(gamma, iteration, children)| SplitNode {
                gamma: gamma.clone(),
                iteration: *iteration,
                children: children
                    .iter()
                    .map(|&c| build(arena, c, Some((&raw_mean, &value)), alpha, k))
                    .collect(),
            });
            RegionNode { id, value, raw_mean, count: n.count, weight: n.weight, split }
        }
        SimplexPartitionModel {
            k: self.k,
            alpha,
            root: build(&self.arena, 0, None, alpha, self.k),
            split_log: self.log,
        }
    }
}

/// Multi-class isotonic recursive partitioning.
///
/// At every iteration each open region proposes its best admissible split
/// (largest criterion among candidates that keep the calibrated forecasts
/// ROC monotone); the split with the largest criterion overall is applied.
/// Regions with no admissible split are closed. For `K = 2` and
/// `alpha = 0` the result equals weighted isotonic regression.
pub fn fit_mc_irp(ds: &Dataset, opts: &PartitionOptions) -> Result<SimplexPartitionModel> {
    Ok(Fitter::new(ds, opts, true)?.run(opts.max_leaves, opts.alpha))
}

/// Recursive binning without the monotony constraint: any split producing
/// at least two nonempty children with a positive criterion is accepted.
pub fn fit_recursive_bins(ds: &Dataset, opts: &PartitionOptions) -> Result<SimplexPartitionModel> {
    Ok(Fitter::new(ds, opts, false)?.run(opts.max_leaves, opts.alpha))
}

/// Equal-width binning of the class-2 score of a binary classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedBinsModel {
    values: Vec<f64>,
    counts: Vec<usize>,
    alpha: f64,
}

impl FixedBinsModel {
    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bin_of(&self, score: f64) -> usize {
        let m = self.values.len();
        ((score * m as f64).floor().max(0.0) as usize).min(m - 1)
    }

    /// Calibrated class-2 probability.
    pub fn predict(&self, score: f64) -> f64 {
        self.values[self.bin_of(score)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.counts.len() {
            return Err(Error::invalid("fixed-bins model: inconsistent bin arrays"));
        }
        check_alpha(self.alpha)
    }
}

/// `m` equal-width bins on `[0,1]`; each bin's value is its Laplace-smoothed
/// mean label, empty bins take their center.
pub fn fit_fixed_bins(ds: &Dataset, m: usize, alpha: f64) -> Result<FixedBinsModel> {
    if ds.k() != 2 {
        return Err(Error::Contract(format!("fixed bins need K=2, got K={}", ds.k())));
    }
    if m < 1 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    check_alpha(alpha)?;
    let mut model = FixedBinsModel { values: vec![0.0; m], counts: vec![0; m], alpha };
    let (mut pos, mut total) = (vec![0.0; m], vec![0.0; m]);
    for ((p, &y), &w) in ds.forecasts().iter().zip(ds.labels()).zip(ds.weights()) {
        let b = model.bin_of(p[1]);
        model.counts[b] += 1;
        total[b] += w;
        if y == 1 {
            pos[b] += w;
        }
    }
    for b in 0..m {
        model.values[b] = if total[b] > 0.0 {
            (pos[b] + alpha) / (total[b] + 2.0 * alpha)
        } else {
            (b as f64 + 0.5) / m as f64
        };
    }
    Ok(model)
}

/// Split log as CSV: `iteration,region,criterion,leaves,gamma1..gammaK`.
pub fn write_split_log_csv<W: std::io::Write>(log: &[SplitRecord], k: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["iteration", "region", "criterion", "leaves"].map(String::from).into();
    header.extend((1..=k).map(|i| format!("gamma{i}")));
    w.write_record(&header)?;
    for r in log {
        let mut rec = vec![
            r.iteration.to_string(),
            r.region.to_string(),
            r.criterion.to_string(),
            r.leaves.to_string(),
        ];
        rec.extend(r.gamma.as_slice().iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_simplex, LabeledForecast};
    use crate::metrics::ece_discrete;
    use crate::pav::pav_fit;
    use crate::roc::is_roc_monotone;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw_opts() -> PartitionOptions {
        PartitionOptions { alpha: 0.0, ..Default::default() }
    }

    #[test]
    fn criterion_by_hand() {
        let ds = Dataset::from_scores(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], None).unwrap();
        let all = [0, 1, 2, 3];
        let m = split_criterion(&ds, &all, &AffineThreshold::scalar(0.5)).unwrap();
        assert_eq!(m, 4.0);
        // everything on one side
        assert_eq!(split_criterion(&ds, &all, &AffineThreshold::scalar(0.95)).unwrap(), 0.0);
        let same = Dataset::from_scores(&[0.1, 0.2, 0.8], &[1, 1, 1], None).unwrap();
        assert_eq!(split_criterion(&same, &[0, 1, 2], &AffineThreshold::scalar(0.5)).unwrap(), 0.0);
    }

    #[test]
    fn split_log_csv_layout() {
        let ds = Dataset::from_scores(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], None).unwrap();
        let model = fit_mc_irp(&ds, &raw_opts()).unwrap();
        let mut out = Vec::new();
        write_split_log_csv(model.split_log(), 2, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iteration,region,criterion,leaves,gamma1,gamma2");
        assert_eq!(lines.len(), 1 + model.split_log().len());
    }

    #[test]
    fn constant_labels_give_one_leaf() {
        let ds = Dataset::from_scores(&[0.1, 0.4, 0.7, 0.9], &[1, 1, 1, 1], None).unwrap();
        let m = fit_mc_irp(&ds, &raw_opts()).unwrap();
        assert_eq!(m.n_leaves(), 1);
        assert!(m.split_log().is_empty());
    }

    #[test]
    fn binary_reduces_to_pav() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let n = rng.random_range(1..=60);
            let s: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 20.0).round() / 20.0).collect();
            let y: Vec<usize> = s.iter().map(|&v| (rng.random::<f64>() < v) as usize).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
            let ds = Dataset::from_scores(&s, &y, Some(&w)).unwrap();
            let model = fit_mc_irp(&ds, &raw_opts()).unwrap();
            let yf: Vec<f64> = y.iter().map(|&c| c as f64).collect();
            let pav = pav_fit(&s, &yf, &w).unwrap();
            for (i, p) in ds.forecasts().iter().enumerate() {
                let r = model.apply(p).unwrap();
                assert!((r[1] - pav.fitted[i]).abs() <= 1e-12, "sample {i}: {} vs {}", r[1], pav.fitted[i]);
            }
        }
    }

    #[test]
    fn noise_free_three_class_leaves_are_nearly_pure() {
        // the monotony check on introduced thresholds can block the last
        // purifying splits, so purity is not guaranteed on every seed
        let mut fully_pure = 0;
        for seed in 0..20 {
            let ds = synth_simplex(300, 3, 0.0, seed).unwrap();
            let m = fit_mc_irp(&ds, &raw_opts()).unwrap();
            assert!(m.n_leaves() >= 3);
            let raw = m.calibrate_raw(ds.forecasts()).unwrap();
            let pure = raw.iter().filter(|r| r.contains(&1.0)).count();
            let hits = raw
                .iter()
                .zip(ds.labels())
                .filter(|(r, &y)| (0..3).all(|j| j == y || r[j] < r[y]))
                .count();
            assert!(pure >= 240, "seed {seed}: {pure} samples in pure leaves");
            assert!(hits >= 270, "seed {seed}: leaf argmax right on {hits}");
            fully_pure += (pure == 300) as usize;
        }
        assert!(fully_pure >= 3);
    }

    #[test]
    fn zero_calibration_error_and_monotony() {
        for seed in 0..5 {
            let ds = synth_simplex(300, 3, 0.3, seed).unwrap();
            let m = fit_mc_irp(&ds, &raw_opts()).unwrap();
            let r = m.calibrate(ds.forecasts()).unwrap();
            assert!(ece_discrete(&r, ds.labels(), ds.weights()).unwrap() <= 1e-12);
            let gammas = m.introduced_thresholds();
            if !gammas.is_empty() {
                assert!(is_roc_monotone(ds.forecasts(), &r, &gammas).unwrap());
            }
        }
    }

    #[test]
    fn recursive_bins_grow_further() {
        let ds = synth_simplex(200, 3, 0.3, 2).unwrap();
        let irp = fit_mc_irp(&ds, &raw_opts()).unwrap();
        let bins = fit_recursive_bins(&ds, &raw_opts()).unwrap();
        assert!(bins.n_leaves() >= irp.n_leaves());
        let one = PartitionOptions { max_leaves: Some(1), ..raw_opts() };
        assert_eq!(fit_recursive_bins(&ds, &one).unwrap(), fit_mc_irp(&ds, &one).unwrap());
    }

    #[test]
    fn single_leaf_model_returns_global_mean() {
        let ds = synth_simplex(50, 3, 0.3, 1).unwrap();
        let opts = PartitionOptions { max_leaves: Some(1), ..Default::default() };
        let m = fit_mc_irp(&ds, &opts).unwrap();
        let mut counts = [0.0; 3];
        ds.labels().iter().for_each(|&y| counts[y] += 1.0);
        let expect: Vec<f64> = counts.iter().map(|c| (c + 1.0) / 53.0).collect();
        assert_eq!(m.apply(&[0.2, 0.3, 0.5]).unwrap(), expect);
        assert!(m.apply(&[0.5, 0.5]).is_err());
    }

    #[test]
    fn boundary_points_follow_tie_break() {
        let ds = Dataset::new(vec![
            LabeledForecast::new(vec![0.5, 0.5, 0.0], 0),
            LabeledForecast::new(vec![0.6, 0.2, 0.2], 0),
            LabeledForecast::new(vec![0.1, 0.8, 0.1], 1),
            LabeledForecast::new(vec![0.1, 0.1, 0.8], 2),
        ])
        .unwrap();
        let m = fit_recursive_bins(&ds, &raw_opts()).unwrap();
        for (i, p) in ds.forecasts().iter().enumerate() {
            let leaf = m.apply_raw(p).unwrap();
            assert_eq!(leaf[ds.labels()[i]], 1.0);
        }
    }

    #[test]
    fn laplace_value_is_regularized_optimum() {
        let ds = synth_simplex(400, 3, 0.3, 3).unwrap();
        let m = fit_mc_irp(&ds, &PartitionOptions { alpha: 2.0, ..Default::default() }).unwrap();
        fn check(n: &RegionNode, alpha: f64) {
            if n.weight > 0.0 {
                // stationarity of H(v, ybar) - lambda sum log v on the simplex:
                // (ybar_k + lambda) / v_k is the same for every k
                let lambda = alpha / n.weight;
                let ratios: Vec<f64> = n.raw_mean.iter().zip(&n.value).map(|(y, v)| (y + lambda) / v).collect();
                let mu = 1.0 + lambda * n.value.len() as f64;
                for r in ratios {
                    assert!((r - mu).abs() <= 1e-8);
                }
                assert!((n.value.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                assert!(n.value.iter().all(|&v| v > 0.0 && v < 1.0));
            }
            if let Some(s) = &n.split {
                s.children.iter().for_each(|c| check(c, alpha));
            }
        }
        check(m.root(), 2.0);
    }

    #[test]
    fn truncation_and_resmoothing() {
        let ds = synth_simplex(300, 3, 0.3, 6).unwrap();
        let m = fit_recursive_bins(&ds, &PartitionOptions { max_leaves: Some(10), ..Default::default() }).unwrap();
        assert_eq!(m.truncated(0).n_leaves(), 1);
        assert_eq!(m.truncated(m.split_log().len()), m);
        for (i, rec) in m.split_log().iter().enumerate() {
            assert_eq!(m.truncated(i + 1).n_leaves(), rec.leaves);
        }
        let again = m.with_alpha(0.0).unwrap().with_alpha(1.0).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = synth_simplex(300, 3, 0.3, 8).unwrap();
        let a = fit_mc_irp(&ds, &Default::default()).unwrap();
        let b = fit_mc_irp(&ds, &Default::default()).unwrap();
        assert_eq!(a.split_log(), b.split_log());
    }

    #[test]
    fn fixed_bins_basics() {
        let ds = Dataset::from_scores(&[0.05, 0.15, 0.55, 0.95], &[0, 1, 1, 1], None).unwrap();
        let one = fit_fixed_bins(&ds, 1, 1.0).unwrap();
        assert_eq!(one.values(), &[4.0 / 6.0]);
        let m = fit_fixed_bins(&ds, 100, 1.0).unwrap();
        assert_eq!(m.predict(0.505), 0.505);
        assert_eq!(m.counts()[5], 1);
        let k3 = synth_simplex(10, 3, 0.0, 0).unwrap();
        assert!(matches!(fit_fixed_bins(&k3, 4, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn fixed_bins_split_separable_labels() {
        let s: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let y: Vec<usize> = s.iter().map(|&v| (v > 0.5) as usize).collect();
        let ds = Dataset::from_scores(&s, &y, None).unwrap();
        let m = fit_fixed_bins(&ds, 10, 1.0).unwrap();
        for b in 0..10 {
            let expect = if b < 5 { 1.0 / 102.0 } else { 101.0 / 102.0 };
            assert!((m.values()[b] - expect).abs() < 1e-12);
        }
    }
}
