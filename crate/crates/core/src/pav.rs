//! Weighted isotonic regression by pool adjacent violators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-constant nondecreasing map from scores to probabilities.
///
/// Bin `j` covers `[edge_{j-1}, edge_j)` where the outer edges are `-inf`
/// and `+inf`; only the finite interior edges are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotonicModel {
    edges: Vec<f64>,
    values: Vec<f64>,
    counts: Vec<usize>,
}

impl IsotonicModel {
    pub fn from_parts(edges: Vec<f64>, values: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let m = Self { edges, values, counts };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty()
            || self.edges.len() + 1 != self.values.len()
            || self.counts.len() != self.values.len()
        {
            return Err(Error::invalid("isotonic model: inconsistent bin arrays"));
        }
        if self.edges.windows(2).any(|w| !(w[0] < w[1])) || self.edges.iter().any(|e| !e.is_finite()) {
            return Err(Error::invalid("isotonic model: edges must be finite and strictly increasing"));
        }
        if self.values.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid("isotonic model: values must be nondecreasing"));
        }
        Ok(())
    }

    /// All `m + 1` bin boundaries including the infinite outer ones.
    pub fn boundaries(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.edges.len() + 2);
        b.push(f64::NEG_INFINITY);
        b.extend_from_slice(&self.edges);
        b.push(f64::INFINITY);
        b
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    pub fn bin_of(&self, score: f64) -> usize {
        self.edges.partition_point(|&e| e <= score)
    }

    pub fn predict(&self, score: f64) -> f64 {
        self.values[self.bin_of(score)]
    }
}

/// Result of a fit: the model plus the fitted value of every input sample
/// in input order.
#[derive(Debug, Clone)]
pub struct IsotonicFit {
    pub model: IsotonicModel,
    pub fitted: Vec<f64>,
}

struct Block {
    sum_wy: f64,
    sum_w: f64,
    count: usize,
    first: f64,
    last: f64,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum_wy / self.sum_w
    }
}

fn check_inputs(scores: &[f64], targets: &[f64], weights: &[f64]) -> Result<()> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::invalid("isotonic regression needs at least one sample"));
    }
    if targets.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if targets.len() != n { targets.len() } else { weights.len() },
        });
    }
    if scores.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("scores and targets must be finite"));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::invalid(format!("weights must be positive, got {w}")));
    }
    if targets.iter().any(|y| !(0.0..=1.0).contains(y)) {
        log::warn!("isotonic regression targets outside [0,1]; fitted values are not probabilities");
    }
    Ok(())
}

/// Stable ascending order of the scores.
fn sort_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    order
}

/// Minimizes `sum w_i (y_i - r_i)^2` over `r` nondecreasing in the score.
///
/// Tied scores are pooled before the pass, and adjacent blocks with equal
/// means are merged, so the model's values are strictly increasing.
pub fn pav_fit(scores: &[f64], targets: &[f64], weights: &[f64]) -> Result<IsotonicFit> {
    check_inputs(scores, targets, weights)?;
    let order = sort_order(scores);

    let mut stack: Vec<Block> = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut block = Block { sum_wy: 0.0, sum_w: 0.0, count: 0, first: s, last: s };
        while i < order.len() && scores[order[i]] == s {
            let j = order[i];
            block.sum_wy += weights[j] * targets[j];
            block.sum_w += weights[j];
            block.count += 1;
            i += 1;
        }
        while let Some(top) = stack.last() {
            if top.mean() < block.mean() {
                break;
            }
            let top = stack.pop().unwrap();
            block.sum_wy += top.sum_wy;
            block.sum_w += top.sum_w;
            block.count += top.count;
            block.first = top.first;
        }
        stack.push(block);
    }

    let edges = stack
        .windows(2)
        .map(|w| (w[0].last + w[1].first) / 2.0)
        .collect();
    let values: Vec<f64> = stack.iter().map(Block::mean).collect();
    let counts = stack.iter().map(|b| b.count).collect();

    let mut fitted = vec![0.0; scores.len()];
    let mut pos = 0;
    for (b, &v) in stack.iter().zip(&values) {
        for &j in &order[pos..pos + b.count] {
            fitted[j] = v;
        }
        pos += b.count;
    }
    Ok(IsotonicFit {
        model: IsotonicModel { edges, values, counts },
        fitted,
    })
}

/// Largest input accepted by [`pav_oracle`].
pub const ORACLE_MAX_N: usize = 12;

/// Exact isotonic fit by enumerating every contiguous block partition of the
/// sorted samples. Exponential; a reference for tests.
pub fn pav_oracle(scores: &[f64], targets: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    check_inputs(scores, targets, weights)?;
    let n = scores.len();
    if n > ORACLE_MAX_N {
        return Err(Error::invalid(format!(
            "oracle enumerates 2^(n-1) partitions; n={n} exceeds {ORACLE_MAX_N}"
        )));
    }
    let order = sort_order(scores);
    let s: Vec<f64> = order.iter().map(|&j| scores[j]).collect();
    let y: Vec<f64> = order.iter().map(|&j| targets[j]).collect();
    let w: Vec<f64> = order.iter().map(|&j| weights[j]).collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    'masks: for mask in 0u32..(1u32 << (n - 1)) {
        // bit i set: cut between sorted positions i and i+1
        let mut r = vec![0.0; n];
        let mut prev_mean = f64::NEG_INFINITY;
        let mut start = 0;
        for end in 1..=n {
            let cut = end == n || mask & (1 << (end - 1)) != 0;
            if !cut {
                continue;
            }
            if end < n && s[end - 1] == s[end] {
                continue 'masks;
            }
            let sw: f64 = w[start..end].iter().sum();
            let swy: f64 = (start..end).map(|t| w[t] * y[t]).sum();
            let mean = swy / sw;
            if mean < prev_mean {
                continue 'masks;
            }
            r[start..end].iter_mut().for_each(|v| *v = mean);
            prev_mean = mean;
            start = end;
        }
        let sse: f64 = (0..n).map(|t| w[t] * (y[t] - r[t]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b) {
            best = Some((sse, r));
        }
    }
    let (_, r_sorted) = best.expect("the single-block partition is always monotone");
    let mut out = vec![0.0; n];
    for (pos, &j) in order.iter().enumerate() {
        out[j] = r_sorted[pos];
    }
    Ok(out)
}
