//! ROC monotony: every split of the calibrated forecasts must be a split of
//! the raw forecasts.
//!
//! Whether a sample partition `{S_k}` is produced by some threshold `g` on
//! the forecasts `p` is a system of difference constraints: sample `i` lands
//! in region `t` iff `g_t - g_j <= p_i[t] - p_i[j]` for every `j`. The system
//! is feasible iff the constraint graph on the `K` classes has no negative
//! cycle, which is decided exactly without enumerating thresholds.

use crate::error::{Error, Result};
use crate::simplex::{region_of, AffineThreshold};

/// Cycle totals above `-CYCLE_TOLERANCE` count as feasible; partitions are
/// then realizable up to ties on region boundaries.
pub const CYCLE_TOLERANCE: f64 = 1e-12;

/// `out[a*K + b] = min over points of p[a] - p[b]`, folded into `out`.
pub(crate) fn fold_gaps(out: &mut [f64], p: &[f64]) {
    let k = p.len();
    for a in 0..k {
        for b in 0..k {
            let d = p[a] - p[b];
            if d < out[a * k + b] {
                out[a * k + b] = d;
            }
        }
    }
}

/// Difference constraints `g_t - g_j <= d[t][j]` on a threshold `g`.
#[derive(Debug, Clone)]
pub(crate) struct DiffSystem {
    k: usize,
    d: Vec<f64>,
}

impl DiffSystem {
    pub(crate) fn new(k: usize) -> Self {
        Self { k, d: vec![f64::INFINITY; k * k] }
    }

    /// Requires some points with pairwise gaps `gaps` to land in region `t`.
    pub(crate) fn require(&mut self, t: usize, gaps: &[f64]) {
        let k = self.k;
        for j in 0..k {
            if j != t && gaps[t * k + j] < self.d[t * k + j] {
                self.d[t * k + j] = gaps[t * k + j];
            }
        }
    }

    /// Requires the single point `p` to land in region `t`.
    pub(crate) fn require_point(&mut self, t: usize, p: &[f64]) {
        let k = self.k;
        for j in 0..k {
            let d = p[t] - p[j];
            if j != t && d < self.d[t * k + j] {
                self.d[t * k + j] = d;
            }
        }
    }

    pub(crate) fn feasible(&self) -> bool {
        let k = self.k;
        let mut dist = self.d.clone();
        for via in 0..k {
            for a in 0..k {
                let left = dist[a * k + via];
                if left == f64::INFINITY {
                    continue;
                }
                for b in 0..k {
                    let d = left + dist[via * k + b];
                    if d < dist[a * k + b] {
                        dist[a * k + b] = d;
                    }
                }
            }
            if (0..k).any(|a| dist[a * k + a] < -CYCLE_TOLERANCE) {
                return false;
            }
        }
        true
    }

    /// Smallest mean edge weight over cycles (Karp), `None` without cycles.
    fn min_mean_cycle(&self) -> Option<f64> {
        let k = self.k;
        // walks[m][v]: lightest walk of exactly m edges ending at v
        let mut walks = vec![vec![0.0; k]];
        for m in 1..=k {
            let prev = &walks[m - 1];
            let mut cur = vec![f64::INFINITY; k];
            for (v, slot) in cur.iter_mut().enumerate() {
                for u in 0..k {
                    // edge u -> v carries the constraint g_v - g_u <= d[v][u]
                    let w = if u == v { f64::INFINITY } else { self.d[v * k + u] };
                    *slot = slot.min(prev[u] + w);
                }
            }
            walks.push(cur);
        }
        (0..k)
            .filter(|&v| walks[k][v].is_finite())
            .map(|v| {
                (0..k)
                    .filter(|&m| walks[m][v].is_finite())
                    .map(|m| (walks[k][v] - walks[m][v]) / (k - m) as f64)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .reduce(f64::min)
    }

    /// A threshold on the plane `sum = 1` meeting every constraint, with
    /// slack where the cycles allow it.
    pub(crate) fn solve(&self) -> Option<Vec<f64>> {
        if !self.feasible() {
            return None;
        }
        let k = self.k;
        let margin = match self.min_mean_cycle() {
            None => 0.5,
            Some(mu) if mu > 0.0 => mu / 2.0,
            Some(_) => 0.0,
        };
        let mut g = vec![0.0; k];
        for _ in 0..k {
            for t in 0..k {
                for j in 0..k {
                    if j != t {
                        let bound = g[j] + self.d[t * k + j] - margin;
                        if bound < g[t] {
                            g[t] = bound;
                        }
                    }
                }
            }
        }
        let shift = (1.0 - g.iter().sum::<f64>()) / k as f64;
        g.iter_mut().for_each(|x| *x += shift);
        Some(g)
    }
}

fn check_dims(raw: &[Vec<f64>], calibrated: &[Vec<f64>], gammas: &[AffineThreshold]) -> Result<usize> {
    if gammas.is_empty() {
        return Err(Error::invalid("ROC monotony needs at least one threshold"));
    }
    if raw.len() != calibrated.len() {
        return Err(Error::DimensionMismatch { expected: raw.len(), got: calibrated.len() });
    }
    let k = raw
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("ROC monotony needs at least one forecast"))?;
    for p in raw.iter().chain(calibrated) {
        if p.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: p.len() });
        }
    }
    for g in gammas {
        if g.dim() != k {
            return Err(Error::DimensionMismatch { expected: k, got: g.dim() });
        }
    }
    Ok(k)
}

/// A threshold whose partition of `forecasts` puts sample `i` in region
/// `regions[i]`, or `None` if no threshold on the plane does.
pub fn realizing_threshold(forecasts: &[Vec<f64>], regions: &[usize]) -> Result<Option<AffineThreshold>> {
    if forecasts.len() != regions.len() {
        return Err(Error::DimensionMismatch { expected: forecasts.len(), got: regions.len() });
    }
    let Some(k) = forecasts.first().map(Vec::len) else {
        return Err(Error::invalid("no forecasts"));
    };
    let mut sys = DiffSystem::new(k);
    for (p, &t) in forecasts.iter().zip(regions) {
        if p.len() != k {
            return Err(Error::DimensionMismatch { expected: k, got: p.len() });
        }
        if t >= k {
            return Err(Error::invalid(format!("region {t} out of range for K={k}")));
        }
        sys.require_point(t, p);
    }
    Ok(sys.solve().map(AffineThreshold::from_unchecked))
}

/// For each `gamma`, a threshold `g'` with `S_k(raw, g') = S_k(calibrated,
/// gamma)` for every class `k`, or `None` where no such threshold exists.
pub fn matched_thresholds(
    raw: &[Vec<f64>],
    calibrated: &[Vec<f64>],
    gammas: &[AffineThreshold],
) -> Result<Vec<Option<AffineThreshold>>> {
    check_dims(raw, calibrated, gammas)?;
    gammas
        .iter()
        .map(|g| {
            let regions: Vec<usize> = calibrated.iter().map(|r| region_of(r, g.as_slice())).collect();
            realizing_threshold(raw, &regions)
        })
        .collect()
}

/// ROC monotony probed on `gammas`: for every `gamma` in the list, the
/// partition of the calibrated forecasts by `gamma` is the partition of the
/// raw forecasts by some threshold of the plane, class by class.
pub fn is_roc_monotone(
    raw: &[Vec<f64>],
    calibrated: &[Vec<f64>],
    gammas: &[AffineThreshold],
) -> Result<bool> {
    let k = check_dims(raw, calibrated, gammas)?;
    Ok(gammas.iter().all(|g| {
        let mut sys = DiffSystem::new(k);
        for (p, r) in raw.iter().zip(calibrated) {
            sys.require_point(region_of(r, g.as_slice()), p);
        }
        sys.feasible()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_simplex;
    use crate::simplex::region_of;
    use crate::pav::pav_fit;
    use proptest::prelude::*;

    fn binary(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&s| vec![1.0 - s, s]).collect()
    }

    #[test]
    fn pav_output_is_monotone() {
        let ds = synth_simplex(200, 2, 0.3, 8).unwrap();
        let y: Vec<f64> = ds.labels().iter().map(|&c| c as f64).collect();
        let fit = pav_fit(&ds.scores(), &y, ds.weights()).unwrap();
        // thresholds at the forecasts themselves so ties break identically
        let gammas: Vec<AffineThreshold> =
            ds.forecasts().iter().map(|p| AffineThreshold::new(p.clone()).unwrap()).collect();
        assert!(is_roc_monotone(ds.forecasts(), &binary(&fit.fitted), &gammas).unwrap());
    }

    #[test]
    fn order_reversal_is_not_monotone() {
        let s = [0.1, 0.2, 0.8, 0.9];
        let raw = binary(&s);
        let flipped: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
        let gammas = vec![AffineThreshold::scalar(0.5)];
        assert!(!is_roc_monotone(&raw, &binary(&flipped), &gammas).unwrap());
    }

    #[test]
    fn dimension_errors() {
        let raw = binary(&[0.1, 0.2]);
        let g = vec![AffineThreshold::scalar(0.5)];
        assert!(is_roc_monotone(&raw, &binary(&[0.1]), &g).is_err());
        assert!(is_roc_monotone(&raw, &raw, &[]).is_err());
        assert!(realizing_threshold(&raw, &[0]).is_err());
        let g3 = vec![AffineThreshold::corner(0, 3)];
        assert!(is_roc_monotone(&raw, &raw, &g3).is_err());
    }

    #[test]
    fn witnesses_reproduce_partitions() {
        let ds = synth_simplex(300, 3, 0.3, 4).unwrap();
        for i in 0..20 {
            let g = AffineThreshold::new(ds.forecasts()[i].clone()).unwrap();
            let regions: Vec<usize> = ds.forecasts().iter().map(|p| region_of(p, g.as_slice())).collect();
            let w = realizing_threshold(ds.forecasts(), &regions).unwrap().unwrap();
            let again: Vec<usize> = ds.forecasts().iter().map(|p| region_of(p, w.as_slice())).collect();
            assert_eq!(again, regions);
            assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unrealizable_partition() {
        // the middle point cannot be split away from both ends
        let raw = binary(&[0.1, 0.5, 0.9]);
        assert!(realizing_threshold(&raw, &[1, 0, 1]).unwrap().is_none());
        assert!(realizing_threshold(&raw, &[0, 0, 1]).unwrap().is_some());
        // three classes, the barycenter split is realizable
        let raw = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8]];
        let w = realizing_threshold(&raw, &[0, 1, 2]).unwrap().unwrap();
        assert_eq!(raw.iter().map(|p| region_of(p, w.as_slice())).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(realizing_threshold(&raw, &[1, 0, 2]).unwrap().is_none());
    }

    #[test]
    fn brute_force_agreement() {
        // realizability against a dense scan of thresholds on tiny inputs
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let mut grid = Vec::new();
        for a in -40..=80 {
            for b in -40..=80 {
                let (x, y) = (a as f64 / 40.0, b as f64 / 40.0);
                grid.push(vec![x, y, 1.0 - x - y]);
            }
        }
        for _ in 0..200 {
            let ds = synth_simplex(5, 3, 0.0, rng.random()).unwrap();
            let regions: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
            let found = grid.iter().any(|g| {
                ds.forecasts().iter().zip(&regions).all(|(p, &t)| region_of(p, g) == t)
            });
            let exact = realizing_threshold(ds.forecasts(), &regions).unwrap();
            if found {
                assert!(exact.is_some());
            }
            if let Some(w) = exact {
                let again: Vec<usize> = ds.forecasts().iter().map(|p| region_of(p, w.as_slice())).collect();
                assert_eq!(again, regions);
            }
        }
    }

    proptest! {
        #[test]
        fn identity_is_monotone(seed in 0u64..200, k in 2usize..5, m in 1usize..20) {
            let ds = synth_simplex(40, k, 0.3, seed).unwrap();
            let gammas: Vec<AffineThreshold> = ds.forecasts()[..m]
                .iter()
                .map(|p| AffineThreshold::new(p.clone()).unwrap())
                .collect();
            prop_assert!(is_roc_monotone(ds.forecasts(), ds.forecasts(), &gammas).unwrap());
        }
    }
}
