//! Calibration and performance metrics: ECE, cross entropy and the
//! calibration/refinement decomposition of cross entropy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::SimplexPartitionModel;
use crate::roc::{auc, lattice_thresholds, roc_surface, sroc_curve, vus, DEFAULT_GRID_CAP};
use crate::simplex::AffineThreshold;

/// Default number of equal-width bins for continuous scores.
pub const DEFAULT_ECE_BINS: usize = 15;

fn check_inputs(forecasts: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<usize> {
    let n = forecasts.len();
    if labels.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if labels.len() != n { labels.len() } else { weights.len() },
        });
    }
    let k = forecasts
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("metrics need at least one forecast"))?;
    if k < 2 {
        return Err(Error::invalid("forecasts need at least 2 classes"));
    }
    if let Some(p) = forecasts.iter().find(|p| p.len() != k) {
        return Err(Error::DimensionMismatch { expected: k, got: p.len() });
    }
    if let Some(y) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {y} outside 0..{k}")));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("weights must be nonnegative with a positive total"));
    }
    Ok(k)
}

fn key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|x| x.to_bits()).collect()
}

/// Per-group weighted label histogram and forecast sum.
struct Groups {
    weight: Vec<f64>,
    label_weight: Vec<Vec<f64>>,
    forecast_sum: Vec<Vec<f64>>,
    exact_value: Vec<Vec<f64>>,
}

impl Groups {
    fn build<K: std::hash::Hash + Eq>(
        forecasts: &[Vec<f64>],
        labels: &[usize],
        weights: &[f64],
        k: usize,
        group_key: impl Fn(&[f64]) -> K,
    ) -> Self {
        let mut index: HashMap<K, usize> = HashMap::new();
        let mut g = Groups {
            weight: Vec::new(),
            label_weight: Vec::new(),
            forecast_sum: Vec::new(),
            exact_value: Vec::new(),
        };
        for ((p, &y), &w) in forecasts.iter().zip(labels).zip(weights) {
            let id = *index.entry(group_key(p)).or_insert_with(|| {
                g.weight.push(0.0);
                g.label_weight.push(vec![0.0; k]);
                g.forecast_sum.push(vec![0.0; k]);
                g.exact_value.push(p.clone());
                g.weight.len() - 1
            });
            g.weight[id] += w;
            g.label_weight[id][y] += w;
            for (s, v) in g.forecast_sum[id].iter_mut().zip(p) {
                *s += w * v;
            }
        }
        g
    }

    fn len(&self) -> usize {
        self.weight.len()
    }

    fn empirical(&self, g: usize) -> Vec<f64> {
        self.label_weight[g].iter().map(|c| c / self.weight[g]).collect()
    }

    fn mean_forecast(&self, g: usize) -> Vec<f64> {
        self.forecast_sum[g].iter().map(|s| s / self.weight[g]).collect()
    }

    fn ece(&self, k: usize, value: impl Fn(usize) -> Vec<f64>) -> f64 {
        let total: f64 = self.weight.iter().sum();
        (0..self.len())
            .filter(|&g| self.weight[g] > 0.0)
            .map(|g| {
                let emp = self.empirical(g);
                let val = value(g);
                let gap = if k == 2 {
                    (emp[1] - val[1]).abs()
                } else {
                    emp.iter().zip(&val).map(|(a, b)| (a - b).abs()).sum()
                };
                self.weight[g] / total * gap
            })
            .sum()
    }
}

/// ECE of forecasts taking finitely many values, grouped by exact value.
///
/// The gap is the absolute class-2 difference for `K = 2` and the L1 norm of
/// the vector difference for `K >= 3`.
pub fn ece_discrete(forecasts: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<f64> {
    let k = check_inputs(forecasts, labels, weights)?;
    let groups = Groups::build(forecasts, labels, weights, k, key);
    Ok(groups.ece(k, |g| groups.exact_value[g].clone()))
}

/// How continuous forecasts are discretized before measuring ECE.
#[derive(Debug, Clone, Copy)]
pub enum Binning<'a> {
    /// `m` equal-width bins on the class-2 score (binary only).
    EqualWidth(usize),
    /// One bin per leaf of a fitted partition model.
    Leaves(&'a SimplexPartitionModel),
    /// Regular grid of `m` cells per axis over the first `K - 1` coordinates.
    Grid(usize),
}

/// ECE after discretizing; each bin's forecast is its weighted mean forecast.
pub fn ece_binned(
    forecasts: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
    binning: Binning<'_>,
) -> Result<f64> {
    let k = check_inputs(forecasts, labels, weights)?;
    let cell = |v: f64, m: usize| ((v * m as f64).floor() as i64).clamp(0, m as i64 - 1);
    let groups = match binning {
        Binning::EqualWidth(m) | Binning::Grid(m) if m < 1 => {
            return Err(Error::invalid("bin count must be at least 1"));
        }
        Binning::EqualWidth(m) => {
            if k != 2 {
                return Err(Error::Contract(format!(
                    "equal-width score bins need K=2, got K={k}"
                )));
            }
            Groups::build(forecasts, labels, weights, k, |p| vec![cell(p[1], m)])
        }
        Binning::Grid(m) => Groups::build(forecasts, labels, weights, k, |p| {
            p[..k - 1].iter().map(|&v| cell(v, m)).collect::<Vec<_>>()
        }),
        Binning::Leaves(model) => {
            if model.k() != k {
                return Err(Error::DimensionMismatch { expected: model.k(), got: k });
            }
            Groups::build(forecasts, labels, weights, k, |p| vec![model.leaf_id(p) as i64])
        }
    };
    Ok(groups.ece(k, |g| groups.mean_forecast(g)))
}

/// Average cross entropy, plain and entropy-regularized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropy {
    /// `-(1/W) sum w_i log p_i[y_i]` in nats; `+inf` when some true class
    /// gets probability 0.
    pub h: f64,
    /// `h - (lambda/W) sum_i w_i sum_k log p_i[k]`.
    pub h_reg: f64,
    pub infinite: bool,
}

pub fn cross_entropy(
    forecasts: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
    lambda: f64,
) -> Result<CrossEntropy> {
    check_inputs(forecasts, labels, weights)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!("smoothing strength must be >= 0, got {lambda}")));
    }
    let total: f64 = weights.iter().sum();
    let (mut h, mut reg) = (0.0, 0.0);
    for ((p, &y), &w) in forecasts.iter().zip(labels).zip(weights) {
        if w == 0.0 {
            continue;
        }
        h -= w * p[y].ln();
        if lambda > 0.0 {
            reg -= w * p.iter().map(|v| v.ln()).sum::<f64>();
        }
    }
    let h = h / total;
    let h_reg = h + lambda * reg / total;
    Ok(CrossEntropy {
        h,
        h_reg,
        infinite: h.is_infinite() || h_reg.is_infinite(),
    })
}

/// Cross entropy split into a calibration (KL) and a refinement (entropy)
/// term over the groups of identical forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub cross_entropy: f64,
    /// `sum_g W_g/W * KL(q_g || f_g)`, `q_g` the group's label distribution
    /// and `f_g` its forecast.
    pub kl_term: f64,
    /// `sum_g W_g/W * H(q_g)`.
    pub refinement: f64,
    /// `|cross_entropy - kl_term - refinement|`; NaN when a term is infinite.
    pub residual: f64,
    pub infinite: bool,
}

pub fn decomposition_check(
    forecasts: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
) -> Result<Decomposition> {
    let k = check_inputs(forecasts, labels, weights)?;
    let ce = cross_entropy(forecasts, labels, weights, 0.0)?;
    let groups = Groups::build(forecasts, labels, weights, k, key);
    let total: f64 = groups.weight.iter().sum();
    let (mut kl, mut refinement) = (0.0, 0.0);
    for g in (0..groups.len()).filter(|&g| groups.weight[g] > 0.0) {
        let q = groups.empirical(g);
        let f = &groups.exact_value[g];
        let share = groups.weight[g] / total;
        for (qk, fk) in q.iter().zip(f) {
            if *qk > 0.0 {
                kl += share * qk * (qk / fk).ln();
                refinement -= share * qk * qk.ln();
            }
        }
    }
    let infinite = ce.infinite || kl.is_infinite();
    let residual = if infinite {
        f64::NAN
    } else {
        (ce.h - kl - refinement).abs()
    };
    Ok(Decomposition {
        cross_entropy: ce.h,
        kl_term: kl,
        refinement,
        residual,
        infinite,
    })
}

/// Which ECE estimator a report used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EceKind {
    Discrete,
    Binned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub n: usize,
    pub ece: f64,
    pub ece_kind: EceKind,
    pub cross_entropy: f64,
    pub cross_entropy_infinite: bool,
    pub regularized_cross_entropy: f64,
    pub lambda: f64,
    /// AUC for `K = 2`, Monte Carlo VUS otherwise; absent when a class is
    /// missing.
    pub auc_or_vus: Option<f64>,
    pub vus_std_error: Option<f64>,
    pub n_bins_or_leaves: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub bins: usize,
    pub lambda: f64,
    pub vus_samples: usize,
    pub seed: u64,
    pub lattice_step: f64,
    /// Force the discrete or binned ECE; `None` picks discrete when the
    /// forecasts take at most `n/2` distinct values.
    pub ece: Option<EceKind>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_ECE_BINS,
            lambda: 0.0,
            vus_samples: 100_000,
            seed: 0,
            lattice_step: 0.1,
            ece: None,
        }
    }
}

/// Full metrics report of one forecast set. `extra_thresholds` are added to
/// the VUS threshold grid (data points plus lattice).
pub fn evaluate(
    forecasts: &[Vec<f64>],
    labels: &[usize],
    weights: &[f64],
    opts: &EvalOptions,
    extra_thresholds: &[AffineThreshold],
) -> Result<MetricsReport> {
    let k = check_inputs(forecasts, labels, weights)?;
    let distinct = Groups::build(forecasts, labels, weights, k, key).len();
    let kind = opts.ece.unwrap_or(if 2 * distinct <= forecasts.len() {
        EceKind::Discrete
    } else {
        EceKind::Binned
    });
    let ece = match kind {
        EceKind::Discrete => ece_discrete(forecasts, labels, weights)?,
        EceKind::Binned if k == 2 => ece_binned(forecasts, labels, weights, Binning::EqualWidth(opts.bins))?,
        EceKind::Binned => ece_binned(forecasts, labels, weights, Binning::Grid(opts.bins))?,
    };
    let ce = cross_entropy(forecasts, labels, weights, opts.lambda)?;

    let mut present = vec![false; k];
    for (&y, &w) in labels.iter().zip(weights) {
        present[y] |= w > 0.0;
    }
    let (auc_or_vus, vus_std_error) = if !present.iter().all(|&p| p) {
        (None, None)
    } else if k == 2 {
        let scores: Vec<f64> = forecasts.iter().map(|p| p[1]).collect();
        (Some(auc(&sroc_curve(&scores, labels, weights)?)?), None)
    } else {
        let thresholds = surface_thresholds(forecasts, opts.lattice_step, extra_thresholds)?;
        let surface = roc_surface(forecasts, labels, weights, &thresholds)?;
        let est = vus(&surface, opts.vus_samples, opts.seed)?;
        (Some(est.value), Some(est.std_error))
    };

    Ok(MetricsReport {
        k,
        n: forecasts.len(),
        ece,
        ece_kind: kind,
        cross_entropy: ce.h,
        cross_entropy_infinite: ce.infinite,
        regularized_cross_entropy: ce.h_reg,
        lambda: opts.lambda,
        auc_or_vus,
        vus_std_error,
        n_bins_or_leaves: distinct,
    })
}

/// Distinct forecast vectors as thresholds, then the lattice, then extras.
pub(crate) fn surface_thresholds(
    forecasts: &[Vec<f64>],
    lattice_step: f64,
    extra: &[AffineThreshold],
) -> Result<Vec<AffineThreshold>> {
    let k = forecasts[0].len();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let lattice = lattice_thresholds(k, lattice_step, DEFAULT_GRID_CAP)?;
    let data = forecasts
        .iter()
        .map(|p| AffineThreshold::new(p.clone()))
        .collect::<Result<Vec<_>>>()?;
    for t in data.into_iter().chain(lattice).chain(extra.iter().cloned()) {
        if seen.insert(key(t.as_slice())) {
            out.push(t);
        }
    }
    Ok(out)
}
