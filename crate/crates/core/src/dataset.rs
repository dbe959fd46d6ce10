//! Labeled forecast datasets: validation, CSV ingestion and synthetic data.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::simplex::SUM_TOLERANCE;

/// Maximum deviation of a CSV row's probability sum from 1 that is silently
/// renormalized.
pub const INGEST_TOLERANCE: f64 = 1e-6;

/// One forecast on the simplex with its observed class (zero-based) and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledForecast {
    pub p: Vec<f64>,
    pub y: usize,
    pub w: f64,
}

impl LabeledForecast {
    pub fn new(p: Vec<f64>, y: usize) -> Self {
        Self { p, y, w: 1.0 }
    }

    pub fn weighted(p: Vec<f64>, y: usize, w: f64) -> Self {
        Self { p, y, w }
    }
}

/// A nonempty set of forecasts sharing a class count `K >= 2`.
///
/// Stored column-wise so calibrators can borrow forecasts, labels and
/// weights independently.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    k: usize,
    forecasts: Vec<Vec<f64>>,
    labels: Vec<usize>,
    weights: Vec<f64>,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledForecast>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid("dataset must be nonempty"))?;
        let k = first.p.len();
        if k < 2 {
            return Err(Error::invalid("class count K must be at least 2"));
        }
        let mut ds = Dataset {
            k,
            forecasts: Vec::with_capacity(samples.len()),
            labels: Vec::with_capacity(samples.len()),
            weights: Vec::with_capacity(samples.len()),
        };
        for (i, s) in samples.into_iter().enumerate() {
            if s.p.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: s.p.len(),
                });
            }
            check_simplex(&s.p).map_err(|msg| Error::invalid(format!("sample {i}: {msg}")))?;
            if s.y >= k {
                return Err(Error::invalid(format!(
                    "sample {i}: label {} outside 0..{k}",
                    s.y
                )));
            }
            if !(s.w.is_finite() && s.w >= 0.0) {
                return Err(Error::invalid(format!("sample {i}: invalid weight {}", s.w)));
            }
            ds.forecasts.push(s.p);
            ds.labels.push(s.y);
            ds.weights.push(s.w);
        }
        Ok(ds)
    }

    /// Builds a dataset from column slices; labels are zero-based.
    pub fn from_parts(
        forecasts: Vec<Vec<f64>>,
        labels: Vec<usize>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = forecasts.len();
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weights.len(),
            });
        }
        let samples = forecasts
            .into_iter()
            .zip(labels)
            .zip(weights)
            .map(|((p, y), w)| LabeledForecast::weighted(p, y, w))
            .collect();
        Self::new(samples)
    }

    /// Binary dataset from class-2 scores in `[0,1]` and 0/1 labels.
    pub fn from_scores(scores: &[f64], labels: &[usize], weights: Option<&[f64]>) -> Result<Self> {
        let forecasts = scores.iter().map(|&s| vec![1.0 - s, s]).collect();
        Self::from_parts(forecasts, labels.to_vec(), weights.map(<[f64]>::to_vec))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn forecasts(&self) -> &[Vec<f64>] {
        &self.forecasts
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sample(&self, i: usize) -> LabeledForecast {
        LabeledForecast::weighted(self.forecasts[i].clone(), self.labels[i], self.weights[i])
    }

    /// Class-2 probabilities, the scalar score of a binary dataset.
    pub fn scores(&self) -> Vec<f64> {
        self.forecasts.iter().map(|p| p[1]).collect()
    }

    /// Same labels and weights, new forecasts (e.g. calibrated outputs).
    pub fn with_forecasts(&self, forecasts: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_parts(forecasts, self.labels.clone(), Some(self.weights.clone()))
    }

    pub fn class_present(&self, k: usize) -> bool {
        self.labels
            .iter()
            .zip(&self.weights)
            .any(|(&y, &w)| y == k && w > 0.0)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    /// Parses `p1,...,pK,y[,w]` with one-based labels.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let (k, has_weight) = parse_header(&header)?;
        let mut samples = Vec::new();
        for (idx, record) in rdr.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| Error::Row {
                row,
                msg: e.to_string(),
            })?;
            samples.push(parse_row(&record, k, has_weight, row)?);
        }
        if samples.is_empty() {
            return Err(Error::invalid("CSV contains no data rows"));
        }
        Self::new(samples)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.k).map(|k| format!("p{k}")).collect();
        header.push("y".into());
        header.push("w".into());
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.forecasts[i].iter().map(f64::to_string).collect();
            rec.push((self.labels[i] + 1).to_string());
            rec.push(self.weights[i].to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_simplex(p: &[f64]) -> std::result::Result<(), String> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
        return Err("probabilities must lie in [0,1]".into());
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(format!("probabilities sum to {s}, expected 1"));
    }
    Ok(())
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, bool)> {
    let cols: Vec<&str> = header.iter().collect();
    let malformed = |why: &str| Error::Row {
        row: 0,
        msg: format!("malformed header {:?}: {why}", cols.join(",")),
    };
    let has_weight = cols.last() == Some(&"w");
    let y_pos = if has_weight { cols.len().checked_sub(2) } else { cols.len().checked_sub(1) };
    let y_pos = y_pos.ok_or_else(|| malformed("missing y column"))?;
    if cols[y_pos] != "y" {
        return Err(malformed("expected `y` after the probability columns"));
    }
    let k = y_pos;
    if k < 2 {
        return Err(malformed("need at least p1,p2"));
    }
    for (i, c) in cols[..k].iter().enumerate() {
        if *c != format!("p{}", i + 1) {
            return Err(malformed(&format!("expected p{} in column {}", i + 1, i + 1)));
        }
    }
    Ok((k, has_weight))
}

fn parse_num(record: &csv::StringRecord, col: usize, row: usize) -> Result<f64> {
    let cell = &record[col];
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Row {
            row,
            msg: format!("non-numeric cell {cell:?} in column {}", col + 1),
        })
}

/// First `k` cells as a probability vector, renormalized when the sum is
/// within the ingest tolerance of one.
fn parse_probs(record: &csv::StringRecord, k: usize, row: usize) -> Result<Vec<f64>> {
    let mut p = Vec::with_capacity(k);
    for c in 0..k {
        let v = parse_num(record, c, row)?;
        if v < 0.0 {
            return Err(Error::Row {
                row,
                msg: format!("negative probability {v} in column {}", c + 1),
            });
        }
        p.push(v);
    }
    let sum: f64 = p.iter().sum();
    let dev = (sum - 1.0).abs();
    if dev > INGEST_TOLERANCE {
        return Err(Error::Row {
            row,
            msg: format!("p-sum deviation {dev:.3e} exceeds {INGEST_TOLERANCE:e}"),
        });
    }
    if sum != 1.0 {
        p.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(p)
}

/// Reads forecast vectors from a CSV whose leading columns are `p1..pK` or
/// `r1..rK`; any further columns (labels, weights) are ignored.
pub fn read_forecasts_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let prefix = match header.get(0) {
        Some(c) if c == "p1" || c == "r1" => &c[..1],
        _ => {
            return Err(Error::Row {
                row: 0,
                msg: "header must start with p1 or r1".into(),
            })
        }
    };
    let k = header
        .iter()
        .enumerate()
        .take_while(|(i, c)| *c == format!("{prefix}{}", i + 1))
        .count();
    if k < 2 {
        return Err(Error::Row {
            row: 0,
            msg: format!("need at least {prefix}1,{prefix}2"),
        });
    }
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Row { row, msg: e.to_string() })?;
        if record.len() < k {
            return Err(Error::Row {
                row,
                msg: format!("expected at least {k} cells, found {}", record.len()),
            });
        }
        out.push(parse_probs(&record, k, row)?);
    }
    if out.is_empty() {
        return Err(Error::invalid("CSV contains no data rows"));
    }
    Ok(out)
}

/// Writes forecasts as `r1..rK` rows.
pub fn write_forecasts_csv<W: Write>(forecasts: &[Vec<f64>], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let k = forecasts.first().map_or(0, Vec::len);
    wtr.write_record((1..=k).map(|i| format!("r{i}")))?;
    for p in forecasts {
        wtr.write_record(p.iter().map(f64::to_string))?;
    }
    wtr.flush()?;
    Ok(())
}

fn parse_row(
    record: &csv::StringRecord,
    k: usize,
    has_weight: bool,
    row: usize,
) -> Result<LabeledForecast> {
    let expected = k + 1 + has_weight as usize;
    if record.len() != expected {
        return Err(Error::Row {
            row,
            msg: format!("expected {expected} cells, found {}", record.len()),
        });
    }
    let p = parse_probs(record, k, row)?;
    let y_cell = &record[k];
    let y: usize = y_cell.parse().map_err(|_| Error::Row {
        row,
        msg: format!("label {y_cell:?} is not an integer"),
    })?;
    if y < 1 || y > k {
        return Err(Error::Row {
            row,
            msg: format!("label {y} outside 1..{k}"),
        });
    }
    let w = if has_weight { parse_num(record, k + 1, row)? } else { 1.0 };
    if w < 0.0 {
        return Err(Error::Row {
            row,
            msg: format!("negative weight {w}"),
        });
    }
    Ok(LabeledForecast::weighted(p, y - 1, w))
}

/// Uniform forecasts on the simplex with argmax labels, each label replaced
/// by a uniformly chosen other class with probability `noise`.
pub fn synth_simplex(n: usize, k: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if k < 2 {
        return Err(Error::invalid("K must be at least 2"));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::invalid(format!("noise {noise} outside [0,1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        // Dirichlet(1, ..., 1) via normalized unit exponentials
        let mut p: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= s);
        let top = argmax(&p);
        let y = if rng.random::<f64>() < noise {
            let other = rng.random_range(0..k - 1);
            if other >= top {
                other + 1
            } else {
                other
            }
        } else {
            top
        };
        samples.push(LabeledForecast::new(p, y));
    }
    Dataset::new(samples)
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..p.len() {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Dataset> {
        Dataset::read_csv(s.as_bytes())
    }

    #[test]
    fn reads_binary_row() {
        let ds = parse("p1,p2,y\n0.3,0.7,2\n").unwrap();
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.labels(), &[1]);
        assert_eq!(ds.weights(), &[1.0]);
    }

    #[test]
    fn renormalizes_small_deviation() {
        let ds = parse("p1,p2,y\n0.3000001,0.7,1\n").unwrap();
        let s: f64 = ds.forecasts()[0].iter().sum();
        assert!((s - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn rejects_large_deviation_with_row() {
        let err = parse("p1,p2,y\n0.5,0.5,1\n0.5,0.6,1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("deviation"), "{msg}");
    }

    #[test]
    fn rejects_bad_cells() {
        assert!(parse("p1,p2\n0.5,0.5\n").is_err());
        assert!(parse("p1,q2,y\n0.5,0.5,1\n").is_err());
        let e = parse("p1,p2,y\n0.5,abc,1\n").unwrap_err().to_string();
        assert!(e.contains("row 1") && e.contains("non-numeric"), "{e}");
        let e = parse("p1,p2,y\n0.5,0.5,3\n").unwrap_err().to_string();
        assert!(e.contains("outside 1..2"), "{e}");
        let e = parse("p1,p2,y,w\n0.5,0.5,1,1\n0.5,0.5,1,-1\n").unwrap_err().to_string();
        assert!(e.contains("row 2") && e.contains("negative weight"), "{e}");
        assert!(parse("p1,p2,y\n").is_err());
    }

    #[test]
    fn reads_weights() {
        let ds = parse("p1,p2,p3,y,w\n0.2,0.3,0.5,3,2.5\n").unwrap();
        assert_eq!(ds.k(), 3);
        assert_eq!(ds.labels(), &[2]);
        assert_eq!(ds.weights(), &[2.5]);
    }

    #[test]
    fn csv_round_trip() {
        let ds = synth_simplex(50, 4, 0.2, 3).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for (a, b) in back.forecasts().iter().zip(ds.forecasts()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn synth_noise_free_labels_are_argmax() {
        let ds = synth_simplex(500, 3, 0.0, 1).unwrap();
        for (p, &y) in ds.forecasts().iter().zip(ds.labels()) {
            assert_eq!(y, argmax(p));
        }
    }

    #[test]
    fn synth_flip_rate() {
        let ds = synth_simplex(10_000, 3, 0.3, 5).unwrap();
        let flips = ds
            .forecasts()
            .iter()
            .zip(ds.labels())
            .filter(|(p, &y)| y != argmax(p))
            .count();
        let rate = flips as f64 / 10_000.0;
        assert!((rate - 0.3).abs() <= 0.02, "flip rate {rate}");
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_simplex(100, 3, 0.3, 42).unwrap();
        let b = synth_simplex(100, 3, 0.3, 42).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert!(synth_simplex(10, 3, 1.5, 0).is_err());
    }

    #[test]
    fn forecasts_only_csv() {
        let f = read_forecasts_csv("r1,r2,r3\n0.2,0.3,0.5\n1,0,0\n".as_bytes()).unwrap();
        assert_eq!(f, vec![vec![0.2, 0.3, 0.5], vec![1.0, 0.0, 0.0]]);
        let f = read_forecasts_csv("p1,p2,y,w\n0.4,0.6,1,2\n".as_bytes()).unwrap();
        assert_eq!(f, vec![vec![0.4, 0.6]]);
        let mut out = Vec::new();
        write_forecasts_csv(&f, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "r1,r2\n0.4,0.6\n");
        assert!(matches!(
            read_forecasts_csv("r1,r2\n0.5,0.6\n".as_bytes()),
            Err(Error::Row { row: 1, .. })
        ));
        assert!(read_forecasts_csv("q1,q2\n0.5,0.5\n".as_bytes()).is_err());
    }
}
