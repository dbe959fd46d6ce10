//! Metric sweeps over the number of bins, the data behind the
//! "cross entropy versus number of bins" comparisons.
//!
//! Recursive methods are fitted once; one row is emitted per prefix of the
//! split log (the model after 0, 1, 2, ... splits). Fixed binning gets one
//! row per bin count. Calibration cross entropy is the smoothing-regularized
//! one, test cross entropy the plain one.

use std::io::Write;

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::cross_entropy;
use crate::model::{Calibrator, Method};
use crate::partition::{
    fit_fixed_bins, fit_mc_irp, fit_recursive_bins, CandidateSource, PartitionOptions,
    SimplexPartitionModel,
};
use crate::roc::{auc, roc_surface, sroc_curve, vus};
use crate::simplex::AffineThreshold;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub methods: Vec<Method>,
    pub alpha: f64,
    /// Leaf budget for recursive binning; mc-irp always runs to completion.
    pub max_leaves: Option<usize>,
    pub fixed_bins: Vec<usize>,
    pub candidates: CandidateSource,
    /// Smoothing weight of the regularized calibration cross entropy;
    /// `None` means `alpha / n_calib`.
    pub lambda: Option<f64>,
    pub vus_samples: usize,
    pub seed: u64,
    pub lattice_step: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::McIrp, Method::RecursiveBins],
            alpha: crate::partition::DEFAULT_ALPHA,
            max_leaves: None,
            fixed_bins: vec![1, 2, 5, 10, 20, 50, 100],
            candidates: CandidateSource::DataPoints,
            lambda: None,
            vus_samples: 100_000,
            seed: 0,
            lattice_step: 0.1,
        }
    }
}

/// One sweep row. AUC for `K = 2`, VUS otherwise; empty when a class is
/// missing from the split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub method: String,
    pub n_bins: usize,
    pub calib_ce_reg: f64,
    pub test_ce: f64,
    pub calib_auc_vus: Option<f64>,
    pub test_auc_vus: Option<f64>,
}

struct Scorer<'a> {
    calib: &'a Dataset,
    test: &'a Dataset,
    lambda: f64,
    opts: &'a SweepOptions,
}

impl Scorer<'_> {
    fn performance(&self, ds: &Dataset, forecasts: &[Vec<f64>], extra: &[AffineThreshold]) -> Result<Option<f64>> {
        if !(0..ds.k()).all(|c| ds.class_present(c)) {
            return Ok(None);
        }
        if ds.k() == 2 {
            let scores: Vec<f64> = forecasts.iter().map(|p| p[1]).collect();
            return Ok(Some(auc(&sroc_curve(&scores, ds.labels(), ds.weights())?)?));
        }
        let thresholds = crate::metrics::surface_thresholds(forecasts, self.opts.lattice_step, extra)?;
        let surface = roc_surface(forecasts, ds.labels(), ds.weights(), &thresholds)?;
        Ok(Some(vus(&surface, self.opts.vus_samples, self.opts.seed)?.value))
    }

    fn row(
        &self,
        method: &str,
        n_bins: usize,
        calib_r: &[Vec<f64>],
        test_r: &[Vec<f64>],
        extra: &[AffineThreshold],
    ) -> Result<SweepRow> {
        let c = self.calib;
        let t = self.test;
        Ok(SweepRow {
            method: method.to_string(),
            n_bins,
            calib_ce_reg: cross_entropy(calib_r, c.labels(), c.weights(), self.lambda)?.h_reg,
            test_ce: cross_entropy(test_r, t.labels(), t.weights(), 0.0)?.h,
            calib_auc_vus: self.performance(c, calib_r, extra)?,
            test_auc_vus: self.performance(t, test_r, extra)?,
        })
    }

    fn model_row(&self, method: &str, model: &dyn Calibrator, extra: &[AffineThreshold]) -> Result<SweepRow> {
        let calib_r = model.calibrate(self.calib.forecasts())?;
        let test_r = model.calibrate(self.test.forecasts())?;
        self.row(method, model.n_bins(), &calib_r, &test_r, extra)
    }

    fn prefix_rows(&self, method: &str, model: &SimplexPartitionModel) -> Result<Vec<SweepRow>> {
        let gammas = model.introduced_thresholds();
        (0..=model.split_log().len())
            .map(|s| self.model_row(method, &model.truncated(s), &gammas[..s]))
            .collect()
    }
}

/// Fits every requested method on `calib` and scores each prefix model (or
/// bin count) on both splits. The first row is the uncalibrated forecasts,
/// with the number of distinct calibration forecasts as `n_bins`.
pub fn run_sweep(calib: &Dataset, test: &Dataset, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if calib.k() != test.k() {
        return Err(Error::DimensionMismatch { expected: calib.k(), got: test.k() });
    }
    for m in &opts.methods {
        if m.binary_only() && calib.k() != 2 {
            return Err(Error::Contract(format!("method {m} needs K=2, got K={}", calib.k())));
        }
    }
    let lambda = opts.lambda.unwrap_or(opts.alpha / calib.len() as f64);
    let scorer = Scorer { calib, test, lambda, opts };
    let part = PartitionOptions {
        candidates: opts.candidates,
        alpha: opts.alpha,
        max_leaves: None,
    };

    let distinct = {
        let mut keys: Vec<Vec<u64>> = calib
            .forecasts()
            .iter()
            .map(|p| p.iter().map(|x| x.to_bits()).collect())
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    };
    let mut rows = vec![scorer.row("raw", distinct, calib.forecasts(), test.forecasts(), &[])?];

    for &method in &opts.methods {
        log::info!("sweep: fitting {method}");
        match method {
            Method::McIrp => rows.extend(scorer.prefix_rows(method.name(), &fit_mc_irp(calib, &part)?)?),
            Method::RecursiveBins => {
                let opts = PartitionOptions { max_leaves: opts.max_leaves, ..part.clone() };
                rows.extend(scorer.prefix_rows(method.name(), &fit_recursive_bins(calib, &opts)?)?)
            }
            Method::FixedBins => {
                for &m in &opts.fixed_bins {
                    let model = fit_fixed_bins(calib, m, opts.alpha)?;
                    rows.push(scorer.model_row(method.name(), &model, &[])?);
                }
            }
            Method::Pav => {
                let targets: Vec<f64> = calib.labels().iter().map(|&y| y as f64).collect();
                let model = crate::pav::pav_fit(&calib.scores(), &targets, calib.weights())?.model;
                rows.push(scorer.model_row(method.name(), &model, &[])?);
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
