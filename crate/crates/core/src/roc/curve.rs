//! Binary ROC machinery: the symmetric ROC curve, its convex hull, AUC, and
//! the cumulative sum diagram with its greatest convex minorant.

use std::cmp::Ordering;

use super::RocGraph;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::simplex::AffineThreshold;

const HULL_TOL: f64 = 1e-12;

/// Symmetric ROC curve of binary scores (`labels` are 0 or 1).
///
/// Thresholds are one below every score plus each distinct score; region 0
/// is `score <= t`. The first point is `(0, 1)`, the last `(1, 0)`.
pub fn sroc_curve(scores: &[f64], labels: &[usize], weights: &[f64]) -> Result<RocGraph> {
    let n = scores.len();
    if labels.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: labels.len().min(weights.len()) });
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::invalid(format!("binary ROC curve got class index {y}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let total = |cls: usize| -> f64 {
        (0..n).filter(|&i| labels[i] == cls).map(|i| weights[i]).sum()
    };
    let (w0, w1) = (total(0), total(1));
    if !(w0 > 0.0 && w1 > 0.0) {
        return Err(Error::invalid("ROC curve needs both classes present"));
    }

    let min = scores[order[0]];
    let mut points = vec![vec![0.0, 1.0]];
    let mut thresholds = vec![AffineThreshold::scalar(min - 1.0)];
    let (mut c0, mut c1) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let s = scores[order[i]];
        while i < n && scores[order[i]] == s {
            let j = order[i];
            if labels[j] == 0 {
                c0 += weights[j];
            } else {
                c1 += weights[j];
            }
            i += 1;
        }
        let (x, y) = if i == n {
            (1.0, 0.0)
        } else {
            ((c0 / w0).min(1.0), ((w1 - c1) / w1).clamp(0.0, 1.0))
        };
        points.push(vec![x, y]);
        thresholds.push(AffineThreshold::scalar(s));
    }
    RocGraph::new(2, points, thresholds)
}

/// Symmetric ROC curve of a binary dataset, scored by the class-2 probability.
pub fn sroc_curve_dataset(ds: &Dataset) -> Result<RocGraph> {
    if ds.k() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: ds.k() });
    }
    sroc_curve(&ds.scores(), ds.labels(), ds.weights())
}

fn curve_order(a: &[f64], b: &[f64]) -> Ordering {
    a[0].total_cmp(&b[0]).then(b[1].total_cmp(&a[1]))
}

/// Trapezoidal area under a binary ROC graph in the `(p0, p1)` plane.
pub fn auc(g: &RocGraph) -> Result<f64> {
    if g.k() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: g.k() });
    }
    if g.len() < 2 {
        return Err(Error::invalid("AUC needs at least two ROC points"));
    }
    let mut pts: Vec<&[f64]> = g.points().iter().map(Vec::as_slice).collect();
    pts.sort_by(|a, b| curve_order(a, b));
    Ok(pts
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]) * (w[0][1] + w[1][1]) / 2.0)
        .sum())
}

fn cross(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Upper concave envelope of a binary ROC graph, in curve order.
///
/// Collinear interior points are dropped, so the result is the minimal
/// vertex set.
pub fn convex_hull_roc(g: &RocGraph) -> Result<RocGraph> {
    if g.k() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: g.k() });
    }
    let mut idx: Vec<usize> = (0..g.len()).collect();
    idx.sort_by(|&a, &b| curve_order(&g.points()[a], &g.points()[b]).then(a.cmp(&b)));
    idx.dedup_by(|a, b| g.points()[*a] == g.points()[*b]);

    let mut hull: Vec<usize> = Vec::with_capacity(idx.len());
    for &i in &idx {
        while hull.len() >= 2 {
            let o = &g.points()[hull[hull.len() - 2]];
            let a = &g.points()[hull[hull.len() - 1]];
            if cross(o, a, &g.points()[i]) >= -HULL_TOL {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    RocGraph::new(
        2,
        hull.iter().map(|&i| g.points()[i].clone()).collect(),
        hull.iter().map(|&i| g.thresholds()[i].clone()).collect(),
    )
}

/// Cumulative sum diagram: `(sum w, sum w*y)` over a score-ordered prefix,
/// starting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct CsdGraph {
    points: Vec<(f64, f64)>,
}

impl CsdGraph {
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Slope of each segment, left to right.
    pub fn slopes(&self) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect()
    }
}

/// CSD of targets already ordered by ascending score.
pub fn csd(sorted_targets: &[f64], weights: &[f64]) -> Result<CsdGraph> {
    if sorted_targets.len() != weights.len() {
        return Err(Error::DimensionMismatch { expected: sorted_targets.len(), got: weights.len() });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("CSD weights must be positive"));
    }
    let mut points = Vec::with_capacity(weights.len() + 1);
    let (mut x, mut y) = (0.0, 0.0);
    points.push((x, y));
    for (t, w) in sorted_targets.iter().zip(weights) {
        x += w;
        y += w * t;
        points.push((x, y));
    }
    Ok(CsdGraph { points })
}

/// CSD over raw scores: sorts and pools tied scores into one step each.
pub fn csd_from_scores(scores: &[f64], targets: &[f64], weights: &[f64]) -> Result<CsdGraph> {
    let n = scores.len();
    if targets.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: targets.len() });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::invalid("CSD weights must be positive"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut points = vec![(0.0, 0.0)];
    let (mut x, mut y) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let s = scores[order[i]];
        while i < n && scores[order[i]] == s {
            x += weights[order[i]];
            y += weights[order[i]] * targets[order[i]];
            i += 1;
        }
        points.push((x, y));
    }
    Ok(CsdGraph { points })
}

/// Greatest convex minorant of a CSD: its lower convex hull, collinear
/// vertices dropped.
pub fn gcm(c: &CsdGraph) -> CsdGraph {
    let scale = c.points.iter().fold(1.0f64, |m, p| m.max(p.0.abs()).max(p.1.abs()));
    let tol = HULL_TOL * scale * scale;
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(c.points.len());
    for &p in &c.points {
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let a = hull[hull.len() - 1];
            let turn = (a.0 - o.0) * (p.1 - o.1) - (a.1 - o.1) * (p.0 - o.0);
            if turn <= tol {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    CsdGraph { points: hull }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pav::pav_fit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pts(g: &RocGraph) -> Vec<(f64, f64)> {
        g.points().iter().map(|p| (p[0], p[1])).collect()
    }

    /// Fraction of correctly ordered (class 0, class 1) pairs, ties half.
    fn pairwise_auc(s: &[f64], y: &[usize]) -> f64 {
        let (mut good, mut total) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] == 0 && y[j] == 1 {
                    total += 1.0;
                    if s[j] > s[i] {
                        good += 1.0;
                    } else if s[j] == s[i] {
                        good += 0.5;
                    }
                }
            }
        }
        good / total
    }

    #[test]
    fn separated_scores_reach_corner() {
        let g = sroc_curve(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], &[1.0; 4]).unwrap();
        assert!(pts(&g).contains(&(1.0, 1.0)));
        assert_eq!(auc(&g).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_give_diagonal() {
        let g = sroc_curve(&[0.5; 4], &[0, 1, 0, 1], &[1.0; 4]).unwrap();
        assert_eq!(pts(&g), vec![(0.0, 1.0), (1.0, 0.0)]);
        assert_eq!(auc(&g).unwrap(), 0.5);
    }

    #[test]
    fn four_point_curve_by_counting() {
        let s = [0.1, 0.2, 0.3, 0.4];
        let y = [0, 1, 0, 1];
        let g = sroc_curve(&s, &y, &[1.0; 4]).unwrap();
        assert_eq!(g.len(), 5);
        for (p, t) in g.points().iter().zip(g.thresholds()) {
            let t = t.as_slice()[1];
            let neg_below = (0..4).filter(|&i| y[i] == 0 && s[i] <= t).count() as f64 / 2.0;
            let pos_above = (0..4).filter(|&i| y[i] == 1 && s[i] > t).count() as f64 / 2.0;
            assert_eq!((p[0], p[1]), (neg_below, pos_above));
        }
        assert_eq!(auc(&g).unwrap(), pairwise_auc(&s, &y));
        assert_eq!(auc(&g).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(sroc_curve(&[0.1, 0.2], &[1, 1], &[1.0; 2]).is_err());
    }

    #[test]
    fn auc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(2..60);
            let s: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
            let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
            y[0] = 0;
            y[1] = 1;
            let g = sroc_curve(&s, &y, &vec![1.0; n]).unwrap();
            assert!((auc(&g).unwrap() - pairwise_auc(&s, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn hull_of_convex_curve_is_identity() {
        let g = sroc_curve(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], &[1.0; 4]).unwrap();
        // strictly convex chain: (0,1) (1,1) (1,0) plus collinear intermediates dropped
        let h = convex_hull_roc(&g).unwrap();
        assert_eq!(pts(&h), vec![(0.0, 1.0), (1.0, 1.0), (1.0, 0.0)]);
        assert_eq!(convex_hull_roc(&h).unwrap(), h);
    }

    #[test]
    fn collinear_points_collapse() {
        let t = AffineThreshold::scalar(0.5);
        let g = RocGraph::new(
            2,
            vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![t.clone(), t.clone(), t],
        )
        .unwrap();
        assert_eq!(convex_hull_roc(&g).unwrap().len(), 2);
    }

    #[test]
    fn hull_equals_calibrated_curve_on_toy() {
        let s = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let y = [0, 1, 0, 0, 1, 1];
        let fit = pav_fit(&s, &y.map(|v| v as f64), &[1.0; 6]).unwrap();
        let raw = convex_hull_roc(&sroc_curve(&s, &y, &[1.0; 6]).unwrap()).unwrap();
        let cal = sroc_curve(&fit.fitted, &y, &[1.0; 6]).unwrap();
        assert_eq!(pts(&raw), pts(&cal));
    }

    #[test]
    fn csd_and_gcm_by_hand() {
        let c = csd(&[1.0, 0.0, 1.0], &[1.0; 3]).unwrap();
        assert_eq!(c.points(), &[(0.0, 0.0), (1.0, 1.0), (2.0, 1.0), (3.0, 2.0)]);
        let g = gcm(&c);
        assert_eq!(g.points(), &[(0.0, 0.0), (2.0, 1.0), (3.0, 2.0)]);
        assert_eq!(g.slopes(), vec![0.5, 1.0]);
    }

    #[test]
    fn gcm_of_monotone_targets_is_csd() {
        let c = csd(&[0.0, 0.5, 1.0], &[1.0, 2.0, 1.0]).unwrap();
        assert_eq!(gcm(&c), c);
    }

    #[test]
    fn gcm_slopes_are_pav_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let n = 50;
            let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
            let fit = pav_fit(&s, &y, &w).unwrap();
            let slopes = gcm(&csd_from_scores(&s, &y, &w).unwrap()).slopes();
            assert_eq!(slopes.len(), fit.model.n_bins());
            for (a, b) in slopes.iter().zip(fit.model.values()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
