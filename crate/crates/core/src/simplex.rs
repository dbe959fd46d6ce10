//! Simplex geometry: affine thresholds and the argmax region split.
//!
//! A threshold `gamma` lives on the affine plane `{x : sum(x) = 1}` and may
//! leave the probability simplex. It splits the simplex into `K` regions,
//! region `k` holding every `p` whose largest coordinate of `p - gamma` is
//! `k`. Ties go to the lowest index, so the regions partition the simplex.
//!
//! Region and class indices are zero-based throughout the crate; files and
//! user-facing output use one-based labels.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Tolerance on `sum(gamma) == 1` and `sum(p) == 1` once data is ingested.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AffineThreshold(Vec<f64>);

impl AffineThreshold {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::invalid("a threshold needs at least 2 coordinates"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("threshold coordinates must be finite"));
        }
        let sum: f64 = coords.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "threshold coordinates sum to {sum}, expected 1"
            )));
        }
        Ok(Self(coords))
    }

    /// Binary threshold on the class-2 score: region 0 is `score <= t`.
    pub fn scalar(t: f64) -> Self {
        Self(vec![1.0 - t, t])
    }

    /// A threshold that sends every point of the simplex to region `k`.
    pub fn corner(k: usize, dim: usize) -> Self {
        assert!(k < dim && dim >= 2);
        let other = 2.0 / (dim - 1) as f64;
        let mut coords = vec![other; dim];
        coords[k] = -1.0;
        Self(coords)
    }

    pub fn corners(dim: usize) -> Vec<Self> {
        (0..dim).map(|k| Self::corner(k, dim)).collect()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Total lexicographic order, used for deterministic tie-breaks.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.0.iter().zip(&other.0) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                ord => return ord,
            }
        }
        self.0.len().cmp(&other.0.len())
    }

    pub(crate) fn from_unchecked(coords: Vec<f64>) -> Self {
        Self(coords)
    }
}

impl TryFrom<Vec<f64>> for AffineThreshold {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AffineThreshold> for Vec<f64> {
    fn from(t: AffineThreshold) -> Self {
        t.0
    }
}

/// Region index of `p` under `gamma`, without dimension checks.
#[inline]
pub(crate) fn region_of(p: &[f64], gamma: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = p[0] - gamma[0];
    for k in 1..p.len() {
        let v = p[k] - gamma[k];
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    best
}

/// Index of the largest coordinate of `p - gamma`, lowest index on ties.
pub fn assign_region(p: &[f64], gamma: &AffineThreshold) -> Result<usize> {
    if p.len() != gamma.dim() {
        return Err(Error::DimensionMismatch {
            expected: gamma.dim(),
            got: p.len(),
        });
    }
    Ok(region_of(p, gamma.as_slice()))
}

/// Splits the (optionally restricted) sample indices of `ds` into the `K`
/// regions of `gamma`. Index order inside each set follows the input order.
pub fn partition_samples(
    ds: &Dataset,
    gamma: &AffineThreshold,
    restrict: Option<&[usize]>,
) -> Result<Vec<Vec<usize>>> {
    if gamma.dim() != ds.k() {
        return Err(Error::DimensionMismatch {
            expected: ds.k(),
            got: gamma.dim(),
        });
    }
    let mut sets = vec![Vec::new(); ds.k()];
    let mut place = |i: usize| -> Result<()> {
        let p = ds
            .forecasts()
            .get(i)
            .ok_or_else(|| Error::invalid(format!("sample index {i} out of range")))?;
        sets[region_of(p, gamma.as_slice())].push(i);
        Ok(())
    };
    match restrict {
        Some(idx) => idx.iter().try_for_each(|&i| place(i))?,
        None => (0..ds.len()).try_for_each(&mut place)?,
    }
    Ok(sets)
}
