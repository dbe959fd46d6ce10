//! ROC curves and surfaces, convex hulls, AUC/VUS and ROC monotony.

mod curve;
mod monotony;
mod surface;

use std::io::Write;

use crate::error::{Error, Result};
use crate::simplex::AffineThreshold;

pub use curve::{
    auc, convex_hull_roc, csd, csd_from_scores, gcm, sroc_curve, sroc_curve_dataset, CsdGraph,
};
pub use monotony::{is_roc_monotone, matched_thresholds, realizing_threshold, CYCLE_TOLERANCE};
pub(crate) use monotony::{fold_gaps, DiffSystem};
pub use surface::{
    default_threshold_grid, lattice_thresholds, roc_surface, roc_surface_dataset, vus, VusEstimate,
    DEFAULT_GRID_CAP,
};

/// A finite set of ROC points, each tagged with the threshold producing it.
///
/// Coordinate `k` of a point is the weighted fraction of class-`k` samples
/// that fall in region `k`. For `K = 2` this is the symmetric ROC curve:
/// `(P(score <= t | class 1), P(score > t | class 2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocGraph {
    k: usize,
    points: Vec<Vec<f64>>,
    thresholds: Vec<AffineThreshold>,
}

impl RocGraph {
    pub fn new(k: usize, points: Vec<Vec<f64>>, thresholds: Vec<AffineThreshold>) -> Result<Self> {
        if points.len() != thresholds.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: thresholds.len(),
            });
        }
        for (p, t) in points.iter().zip(&thresholds) {
            if p.len() != k || t.dim() != k {
                return Err(Error::DimensionMismatch { expected: k, got: p.len() });
            }
            if p.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::invalid("ROC coordinates must lie in [0,1]"));
            }
        }
        Ok(Self { k, points, thresholds })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn thresholds(&self) -> &[AffineThreshold] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Whether some point of `self` lies within `tol` (per coordinate) of `p`.
    pub fn contains_point(&self, p: &[f64], tol: f64) -> bool {
        self.points
            .iter()
            .any(|q| q.iter().zip(p).all(|(a, b)| (a - b).abs() <= tol))
    }

    /// CSV with header `coord1..coordK,gamma1..gammaK`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.k).map(|i| format!("coord{i}")).collect();
        header.extend((1..=self.k).map(|i| format!("gamma{i}")));
        wtr.write_record(&header)?;
        for (p, t) in self.points.iter().zip(&self.thresholds) {
            let rec: Vec<String> = p
                .iter()
                .chain(t.as_slice())
                .map(f64::to_string)
                .collect();
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
