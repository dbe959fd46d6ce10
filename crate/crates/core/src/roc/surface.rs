//! Multi-class ROC surfaces, threshold grids and Monte Carlo VUS.

use std::collections::HashMap;
use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::RocGraph;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::simplex::{region_of, AffineThreshold};

/// Default cap on the number of lattice points enumerated.
pub const DEFAULT_GRID_CAP: usize = 1_000_000;

const VUS_BATCH: usize = 4096;

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// Identical forecast vectors collapsed into groups with per-class weight.
struct ForecastGroups<'a> {
    values: Vec<&'a [f64]>,
    class_weight: Vec<Vec<f64>>,
}

impl<'a> ForecastGroups<'a> {
    fn new(forecasts: &'a [Vec<f64>], labels: &[usize], weights: &[f64], k: usize) -> Self {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut values = Vec::new();
        let mut class_weight: Vec<Vec<f64>> = Vec::new();
        for ((p, &y), &w) in forecasts.iter().zip(labels).zip(weights) {
            let g = *index.entry(bits(p)).or_insert_with(|| {
                values.push(p.as_slice());
                class_weight.push(vec![0.0; k]);
                values.len() - 1
            });
            class_weight[g][y] += w;
        }
        Self { values, class_weight }
    }
}

/// ROC surface of `forecasts` over the given thresholds.
///
/// One point per threshold (coordinate `k` is the weighted fraction of
/// class-`k` samples assigned to region `k`); repeated points keep the
/// first threshold that produced them.
pub fn roc_surface(
    forecasts: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
    thresholds: &[AffineThreshold],
) -> Result<RocGraph> {
    let n = forecasts.len();
    if labels.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
    }
    if thresholds.is_empty() {
        return Err(Error::invalid("ROC surface needs at least one threshold"));
    }
    let k = thresholds[0].dim();
    if let Some(p) = forecasts.iter().find(|p| p.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: p.len() });
    }
    if let Some(t) = thresholds.iter().find(|t| t.dim() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: t.dim() });
    }
    let mut totals = vec![0.0; k];
    for (&y, &w) in labels.iter().zip(weights) {
        if y >= k {
            return Err(Error::invalid(format!("label {y} outside 0..{k}")));
        }
        totals[y] += w;
    }
    if let Some(missing) = totals.iter().position(|t| !(*t > 0.0)) {
        return Err(Error::invalid(format!("class {} absent; ROC surface undefined", missing + 1)));
    }

    let groups = ForecastGroups::new(forecasts, labels, weights, k);
    let raw_points: Vec<Vec<f64>> = thresholds
        .par_iter()
        .map(|t| {
            let mut hit = vec![0.0; k];
            for (p, cw) in groups.values.iter().zip(&groups.class_weight) {
                let r = region_of(p, t.as_slice());
                hit[r] += cw[r];
            }
            hit.iter()
                .zip(&totals)
                .map(|(h, t)| (h / t).clamp(0.0, 1.0))
                .collect()
        })
        .collect();

    let mut seen = HashSet::new();
    let (mut points, mut kept) = (Vec::new(), Vec::new());
    for (p, t) in raw_points.into_iter().zip(thresholds) {
        if seen.insert(bits(&p)) {
            points.push(p);
            kept.push(t.clone());
        }
    }
    RocGraph::new(k, points, kept)
}

pub fn roc_surface_dataset(ds: &Dataset, thresholds: &[AffineThreshold]) -> Result<RocGraph> {
    roc_surface(ds.forecasts(), ds.labels(), ds.weights(), thresholds)
}

/// Regular lattice on the threshold plane: the first `K - 1` coordinates run
/// over `-1, -1 + step, ..., 2`, the last closes the sum to 1 and must also
/// lie in `[-1, 2]`.
pub fn lattice_thresholds(k: usize, step: f64, cap: usize) -> Result<Vec<AffineThreshold>> {
    if k < 2 {
        return Err(Error::invalid("K must be at least 2"));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::invalid(format!("lattice step must be positive, got {step}")));
    }
    let per_axis = (3.0 / step + 1e-9).floor() as usize + 1;
    let size = (per_axis as f64).powi(k as i32 - 1);
    if size > cap as f64 {
        return Err(Error::invalid(format!(
            "lattice with step {step} in K={k} has {size:.0} points, above the cap of {cap}"
        )));
    }
    let coord = |i: usize| -1.0 + i as f64 * step;
    let mut out = Vec::new();
    let mut idx = vec![0usize; k - 1];
    loop {
        let mut g: Vec<f64> = idx.iter().map(|&i| coord(i)).collect();
        let last = 1.0 - g.iter().sum::<f64>();
        if (-1.0 - 1e-9..=2.0 + 1e-9).contains(&last) {
            g.push(last);
            out.push(AffineThreshold::from_unchecked(g));
        }
        // odometer over the free coordinates
        let mut axis = 0;
        loop {
            if axis == k - 1 {
                return Ok(out);
            }
            idx[axis] += 1;
            if idx[axis] < per_axis {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// Every sample point as a threshold plus the lattice of the given step,
/// deduplicated in that order.
pub fn default_threshold_grid(ds: &Dataset, lattice_step: f64) -> Result<Vec<AffineThreshold>> {
    let lattice = lattice_thresholds(ds.k(), lattice_step, DEFAULT_GRID_CAP)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(ds.len() + lattice.len());
    for p in ds.forecasts() {
        if seen.insert(bits(p)) {
            out.push(AffineThreshold::new(p.clone())?);
        }
    }
    for t in lattice {
        if seen.insert(bits(t.as_slice())) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Monte Carlo volume estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VusEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y)
}

/// Points not dominated by another point, sorted by first coordinate
/// descending.
fn pareto_front(points: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut sorted: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
    sorted.sort_by(|a, b| {
        b.iter()
            .zip(a.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut front: Vec<&[f64]> = Vec::new();
    for p in sorted {
        // anything earlier has a lexicographically larger or equal vector
        if !front.iter().any(|q| dominates(q, p)) {
            front.push(p);
        }
    }
    front
}

/// Volume of `{x in [0,1]^K : x <= some point of g}` by seeded Monte Carlo.
///
/// Samples are drawn in fixed batches, each from its own ChaCha stream, so
/// the estimate does not depend on the number of worker threads.
pub fn vus(g: &RocGraph, mc_samples: usize, seed: u64) -> Result<VusEstimate> {
    if mc_samples < 1 {
        return Err(Error::invalid("VUS needs at least one Monte Carlo sample"));
    }
    if g.is_empty() {
        return Err(Error::invalid("VUS of an empty ROC graph"));
    }
    let k = g.k();
    let front = pareto_front(g.points());
    let batches = mc_samples.div_ceil(VUS_BATCH);
    let hits: usize = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = VUS_BATCH.min(mc_samples - b * VUS_BATCH);
            let mut x = vec![0.0; k];
            let mut count = 0;
            for _ in 0..len {
                x.iter_mut().for_each(|v| *v = rng.random::<f64>());
                for q in &front {
                    if q[0] < x[0] {
                        break;
                    }
                    if dominates(q, &x) {
                        count += 1;
                        break;
                    }
                }
            }
            count
        })
        .sum();
    let n = mc_samples as f64;
    let value = hits as f64 / n;
    Ok(VusEstimate {
        value,
        std_error: (value * (1.0 - value) / n).sqrt(),
        samples: mc_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_simplex;
    use crate::roc::{auc, sroc_curve};

    #[test]
    fn binary_lattice() {
        let l = lattice_thresholds(2, 0.5, DEFAULT_GRID_CAP).unwrap();
        let t: Vec<f64> = l.iter().map(|g| g.as_slice()[1]).collect();
        assert_eq!(t, vec![2.0, 1.5, 1.0, 0.5, 0.0, -0.5, -1.0]);
    }

    #[test]
    fn integer_lattice_in_three_classes() {
        let l = lattice_thresholds(3, 1.0, DEFAULT_GRID_CAP).unwrap();
        // brute force over integer triples in [-1,2] summing to 1
        let mut expect = Vec::new();
        for a in -1..=2i32 {
            for b in -1..=2 {
                for c in -1..=2 {
                    if a + b + c == 1 {
                        expect.push(vec![a as f64, b as f64, c as f64]);
                    }
                }
            }
        }
        let mut got: Vec<Vec<f64>> = l.iter().map(|g| g.as_slice().to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        expect.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, expect);
        assert!(got.contains(&vec![-1.0, 1.0, 1.0]));
    }

    #[test]
    fn lattice_cap() {
        let err = lattice_thresholds(4, 0.001, DEFAULT_GRID_CAP).unwrap_err().to_string();
        assert!(err.contains("1000000"), "{err}");
    }

    #[test]
    fn grid_includes_data_points() {
        let ds = synth_simplex(20, 2, 0.1, 0).unwrap();
        let grid = default_threshold_grid(&ds, 0.5).unwrap();
        assert_eq!(grid.len(), 20 + 7);
    }

    #[test]
    fn binary_surface_matches_sroc() {
        let raw = synth_simplex(40, 2, 0.3, 2).unwrap();
        // p0 == 1 - p1 exactly, as the scalar thresholds assume
        let ds = Dataset::from_scores(&raw.scores(), raw.labels(), None).unwrap();
        let curve = sroc_curve(&ds.scores(), ds.labels(), ds.weights()).unwrap();
        let surf = roc_surface_dataset(&ds, curve.thresholds()).unwrap();
        let mut a = curve.points().to_vec();
        let mut b = surf.points().to_vec();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        a.dedup();
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn outside_threshold_gives_axis_point() {
        let ds = synth_simplex(100, 3, 0.3, 1).unwrap();
        let g = roc_surface_dataset(&ds, &[AffineThreshold::corner(0, 3)]).unwrap();
        assert_eq!(g.points(), &[vec![1.0, 0.0, 0.0]]);
    }

    #[test]
    fn noise_free_barycenter_is_perfect() {
        let ds = synth_simplex(300, 3, 0.0, 1).unwrap();
        let bary = AffineThreshold::new(vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let g = roc_surface_dataset(&ds, &[bary]).unwrap();
        assert_eq!(g.points(), &[vec![1.0, 1.0, 1.0]]);
    }

    #[test]
    fn missing_class_is_an_error() {
        let ds = Dataset::from_scores(&[0.1, 0.2], &[0, 0], None).unwrap();
        assert!(roc_surface_dataset(&ds, &[AffineThreshold::scalar(0.5)]).is_err());
    }

    fn graph(points: Vec<Vec<f64>>) -> RocGraph {
        let k = points[0].len();
        let t = vec![AffineThreshold::corner(0, k); points.len()];
        RocGraph::new(k, points, t).unwrap()
    }

    #[test]
    fn vus_extremes() {
        let full = vus(&graph(vec![vec![1.0, 1.0, 1.0]]), 10_000, 0).unwrap();
        assert_eq!(full.value, 1.0);
        let axes = graph(vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]);
        assert_eq!(vus(&axes, 10_000, 0).unwrap().value, 0.0);
        assert!(vus(&axes, 0, 0).is_err());
    }

    #[test]
    fn vus_tracks_binary_auc() {
        for seed in 0..5 {
            let ds = synth_simplex(2000, 2, 0.25, seed).unwrap();
            let c = sroc_curve(&ds.scores(), ds.labels(), ds.weights()).unwrap();
            let v = vus(&c, 100_000, seed).unwrap();
            assert!((v.value - auc(&c).unwrap()).abs() <= 0.01);
        }
    }

    #[test]
    fn vus_superset_never_decreases() {
        let ds = synth_simplex(200, 3, 0.3, 4).unwrap();
        let grid = default_threshold_grid(&ds, 0.25).unwrap();
        let big = roc_surface_dataset(&ds, &grid).unwrap();
        let small = roc_surface_dataset(&ds, &grid[..50]).unwrap();
        let a = vus(&small, 20_000, 9).unwrap().value;
        let b = vus(&big, 20_000, 9).unwrap().value;
        assert!(b >= a);
    }

    #[test]
    fn vus_is_deterministic() {
        let ds = synth_simplex(200, 3, 0.3, 4).unwrap();
        let grid = default_threshold_grid(&ds, 0.25).unwrap();
        let g = roc_surface_dataset(&ds, &grid).unwrap();
        assert_eq!(vus(&g, 50_000, 3).unwrap(), vus(&g, 50_000, 3).unwrap());
    }
}
