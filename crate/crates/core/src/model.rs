//! Fitted calibrators behind one interface, and their JSON model file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::partition::{
    fit_fixed_bins, fit_mc_irp, fit_recursive_bins, CandidateSource, FixedBinsModel,
    PartitionOptions, SimplexPartitionModel,
};
use crate::pav::{pav_fit, IsotonicModel};

pub const SCHEMA_VERSION: u32 = 1;

/// Something that maps a forecast vector to a calibrated one.
pub trait Calibrator {
    fn k(&self) -> usize;

    /// Number of distinct output values (bins or leaves).
    fn n_bins(&self) -> usize;

    fn calibrate_one(&self, p: &[f64]) -> Result<Vec<f64>>;

    fn calibrate(&self, forecasts: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        forecasts.iter().map(|p| self.calibrate_one(p)).collect()
    }
}

fn binary_score(p: &[f64]) -> Result<f64> {
    if p.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: p.len() });
    }
    Ok(p[1])
}

impl Calibrator for IsotonicModel {
    fn k(&self) -> usize {
        2
    }

    fn n_bins(&self) -> usize {
        IsotonicModel::n_bins(self)
    }

    fn calibrate_one(&self, p: &[f64]) -> Result<Vec<f64>> {
        let v = self.predict(binary_score(p)?);
        Ok(vec![1.0 - v, v])
    }
}

impl Calibrator for FixedBinsModel {
    fn k(&self) -> usize {
        2
    }

    fn n_bins(&self) -> usize {
        FixedBinsModel::n_bins(self)
    }

    fn calibrate_one(&self, p: &[f64]) -> Result<Vec<f64>> {
        let v = self.predict(binary_score(p)?);
        Ok(vec![1.0 - v, v])
    }
}

impl Calibrator for SimplexPartitionModel {
    fn k(&self) -> usize {
        SimplexPartitionModel::k(self)
    }

    fn n_bins(&self) -> usize {
        self.n_leaves()
    }

    fn calibrate_one(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.apply(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Pav,
    FixedBins,
    McIrp,
    RecursiveBins,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Pav, Method::FixedBins, Method::McIrp, Method::RecursiveBins];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pav => "pav",
            Method::FixedBins => "fixed-bins",
            Method::McIrp => "mc-irp",
            Method::RecursiveBins => "recursive-bins",
        }
    }

    /// Methods that only calibrate a binary score.
    pub fn binary_only(self) -> bool {
        matches!(self, Method::Pav | Method::FixedBins)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Pav(IsotonicModel),
    FixedBins(FixedBinsModel),
    McIrp(SimplexPartitionModel),
    RecursiveBins(SimplexPartitionModel),
}

impl FittedModel {
    pub fn method(&self) -> Method {
        match self {
            FittedModel::Pav(_) => Method::Pav,
            FittedModel::FixedBins(_) => Method::FixedBins,
            FittedModel::McIrp(_) => Method::McIrp,
            FittedModel::RecursiveBins(_) => Method::RecursiveBins,
        }
    }

    pub fn calibrator(&self) -> &dyn Calibrator {
        match self {
            FittedModel::Pav(m) => m,
            FittedModel::FixedBins(m) => m,
            FittedModel::McIrp(m) | FittedModel::RecursiveBins(m) => m,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            FittedModel::Pav(_) => 0.0,
            FittedModel::FixedBins(m) => m.alpha(),
            FittedModel::McIrp(m) | FittedModel::RecursiveBins(m) => m.alpha(),
        }
    }

    pub fn partition(&self) -> Option<&SimplexPartitionModel> {
        match self {
            FittedModel::McIrp(m) | FittedModel::RecursiveBins(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub method: Method,
    pub alpha: f64,
    /// Leaf budget for the recursive methods, bin count for fixed bins.
    pub max_leaves: Option<usize>,
    pub candidates: CandidateSource,
}

impl FitConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            alpha: crate::partition::DEFAULT_ALPHA,
            max_leaves: None,
            candidates: CandidateSource::DataPoints,
        }
    }
}

pub const DEFAULT_FIXED_BINS: usize = 10;

/// Fits `config.method` on `ds`. Binary-only methods on `K != 2` are a
/// [`Error::Contract`] violation.
pub fn fit(ds: &Dataset, config: &FitConfig) -> Result<FittedModel> {
    if config.method.binary_only() && ds.k() != 2 {
        return Err(Error::Contract(format!(
            "method {} needs K=2, got K={}",
            config.method,
            ds.k()
        )));
    }
    let part = PartitionOptions {
        candidates: config.candidates,
        alpha: config.alpha,
        max_leaves: config.max_leaves,
    };
    Ok(match config.method {
        Method::Pav => {
            let targets: Vec<f64> = ds.labels().iter().map(|&y| y as f64).collect();
            FittedModel::Pav(pav_fit(&ds.scores(), &targets, ds.weights())?.model)
        }
        Method::FixedBins => FittedModel::FixedBins(fit_fixed_bins(
            ds,
            config.max_leaves.unwrap_or(DEFAULT_FIXED_BINS),
            config.alpha,
        )?),
        Method::McIrp => FittedModel::McIrp(fit_mc_irp(ds, &part)?),
        Method::RecursiveBins => FittedModel::RecursiveBins(fit_recursive_bins(ds, &part)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub candidate_source: Option<CandidateSource>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl FitMeta {
    pub fn now(n: usize, seed: Option<u64>, candidate_source: Option<CandidateSource>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self { n, seed, candidate_source, timestamp }
    }
}

/// A fitted model with its provenance, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: FittedModel,
    pub meta: FitMeta,
}

#[derive(Serialize, Deserialize)]
struct RawModelFile {
    schema_version: u32,
    method: Method,
    k: usize,
    alpha: f64,
    payload: serde_json::Value,
    meta: FitMeta,
}

impl ModelFile {
    pub fn new(model: FittedModel, meta: FitMeta) -> Self {
        Self { model, meta }
    }

    pub fn k(&self) -> usize {
        self.model.calibrator().k()
    }

    pub fn to_json(&self) -> Result<String> {
        let payload = match &self.model {
            FittedModel::Pav(m) => serde_json::to_value(m)?,
            FittedModel::FixedBins(m) => serde_json::to_value(m)?,
            FittedModel::McIrp(m) | FittedModel::RecursiveBins(m) => serde_json::to_value(m)?,
        };
        let raw = RawModelFile {
            schema_version: SCHEMA_VERSION,
            method: self.model.method(),
            k: self.k(),
            alpha: self.model.alpha(),
            payload,
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawModelFile = serde_json::from_str(text)?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model schema version {} (expected {SCHEMA_VERSION})",
                raw.schema_version
            )));
        }
        let model = match raw.method {
            Method::Pav => {
                let m: IsotonicModel = serde_json::from_value(raw.payload)?;
                m.validate()?;
                FittedModel::Pav(m)
            }
            Method::FixedBins => {
                let m: FixedBinsModel = serde_json::from_value(raw.payload)?;
                m.validate()?;
                FittedModel::FixedBins(m)
            }
            Method::McIrp | Method::RecursiveBins => {
                let m: SimplexPartitionModel = serde_json::from_value(raw.payload)?;
                m.validate()?;
                if raw.method == Method::McIrp {
                    FittedModel::McIrp(m)
                } else {
                    FittedModel::RecursiveBins(m)
                }
            }
        };
        let file = Self { model, meta: raw.meta };
        if file.k() != raw.k {
            return Err(Error::invalid(format!("model file says K={} but payload has K={}", raw.k, file.k())));
        }
        Ok(file)
    }

    pub fn read<R: Read>(mut reader: R) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    pub fn write<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_json()?.as_bytes())?;
        writer.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_simplex;

    fn round_trip(file: &ModelFile) -> ModelFile {
        ModelFile::from_json(&file.to_json().unwrap()).unwrap()
    }

    #[test]
    fn every_method_round_trips_bit_exactly() {
        let binary = synth_simplex(300, 2, 0.3, 1).unwrap();
        let three = synth_simplex(300, 3, 0.3, 1).unwrap();
        for method in Method::ALL {
            let ds = if method.binary_only() { &binary } else { &three };
            let model = fit(ds, &FitConfig::new(method)).unwrap();
            let file = ModelFile::new(model, FitMeta::now(ds.len(), Some(7), None));
            let back = round_trip(&file);
            assert_eq!(back, file, "{method}");
            let a = file.model.calibrator().calibrate(ds.forecasts()).unwrap();
            let b = back.model.calibrator().calibrate(ds.forecasts()).unwrap();
            for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn binary_methods_reject_three_classes() {
        let ds = synth_simplex(30, 3, 0.0, 0).unwrap();
        for m in [Method::Pav, Method::FixedBins] {
            assert!(matches!(fit(&ds, &FitConfig::new(m)), Err(Error::Contract(_))));
        }
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("isotonic".parse::<Method>().is_err());
    }

    #[test]
    fn rejects_bad_files() {
        let ds = synth_simplex(50, 2, 0.3, 0).unwrap();
        let file = ModelFile::new(fit(&ds, &FitConfig::new(Method::Pav)).unwrap(), FitMeta::now(50, None, None));
        let json = file.to_json().unwrap();
        assert!(ModelFile::from_json(&json.replace("\"schema_version\": 1", "\"schema_version\": 9")).is_err());
        assert!(ModelFile::from_json(&json.replace("\"k\": 2", "\"k\": 3")).is_err());
        assert!(ModelFile::from_json("{").is_err());
    }
}
