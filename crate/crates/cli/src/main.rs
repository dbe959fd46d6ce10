use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isocal::metrics::{evaluate, EvalOptions};
use isocal::model::{FitMeta, DEFAULT_FIXED_BINS};
use isocal::partition::{write_split_log_csv, CandidateSource};
use isocal::roc::{lattice_thresholds, matched_thresholds, roc_surface, DEFAULT_GRID_CAP};
use isocal::sweep::{run_sweep, write_sweep_csv, SweepOptions};
use isocal::{
    fit, read_forecasts_csv, synth_simplex, write_forecasts_csv, AffineThreshold, Dataset,
    Error, FitConfig, Method, ModelFile,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "isocal", version, about = "Isotonic and simplex-partition probability calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a calibrator on a labeled forecast CSV (p1..pK,y[,w]).
    Fit(FitArgs),
    /// Apply a saved model to forecasts and write r1..rK rows.
    Apply(ApplyArgs),
    /// Print a metrics report as JSON.
    Eval(EvalArgs),
    /// Cross entropy and AUC/VUS as a function of the number of bins.
    Sweep(SweepArgs),
    /// Write a synthetic dataset with argmax labels and label noise.
    Synth(SynthArgs),
    /// Write ROC graphs of raw and calibrated forecasts.
    Roc(RocArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Candidates {
    DataPoints,
    Lattice,
    Both,
}

#[derive(Args)]
struct CandidateArgs {
    /// Split candidates for the recursive methods.
    #[arg(long, value_enum, default_value = "data-points")]
    candidates: Candidates,
    /// Lattice step for lattice candidates and ROC threshold grids.
    #[arg(long, default_value_t = 0.1)]
    lattice_step: f64,
}

impl CandidateArgs {
    fn source(&self) -> CandidateSource {
        let step = self.lattice_step;
        match self.candidates {
            Candidates::DataPoints => CandidateSource::DataPoints,
            Candidates::Lattice => CandidateSource::Lattice { step },
            Candidates::Both => CandidateSource::DataPointsAndLattice { step },
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    input: PathBuf,
    /// Laplace smoothing strength; ignored by pav.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Leaf budget (recursive methods) or bin count (fixed-bins).
    #[arg(long)]
    max_leaves: Option<usize>,
    #[command(flatten)]
    cand: CandidateArgs,
    #[arg(long, env = "ISOCAL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// Also write the split log as CSV (recursive methods only).
    #[arg(long)]
    split_log: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    vus_samples: usize,
}

#[derive(Args)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// CSV with p1..pK or r1..rK columns.
    #[arg(long)]
    forecasts: PathBuf,
    /// Labeled CSV (p1..pK,y[,w]) to take labels and weights from; defaults
    /// to the forecasts file itself.
    #[arg(long)]
    labels_from: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    bins: usize,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 100_000)]
    vus_samples: usize,
    #[arg(long, default_value_t = 0.1)]
    lattice_step: f64,
    #[arg(long, env = "ISOCAL_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "mc-irp,recursive-bins")]
    methods: Vec<Method>,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Leaf budget for recursive-bins.
    #[arg(long)]
    max_leaves: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100")]
    fixed_bins_grid: Vec<usize>,
    /// Calibration-set smoothing weight; defaults to alpha / n_calib.
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    cand: CandidateArgs,
    #[arg(long, default_value_t = 100_000)]
    vus_samples: usize,
    #[arg(long, env = "ISOCAL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, env = "ISOCAL_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RocArgs {
    #[arg(long)]
    model: PathBuf,
    /// Labeled CSV (p1..pK,y[,w]).
    #[arg(long)]
    input: PathBuf,
    /// Lattice step of the threshold grid; 0 disables the lattice.
    #[arg(long, default_value_t = 0.1)]
    lattice_step: f64,
    /// Add every raw data point as a threshold.
    #[arg(long)]
    data_thresholds: bool,
    /// Use raw leaf means instead of the smoothed leaf values. Split points
    /// are only guaranteed to lie on the raw graph for unsmoothed values.
    #[arg(long)]
    unsmoothed: bool,
    #[arg(long)]
    raw_output: PathBuf,
    #[arg(long)]
    calibrated_output: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Row { .. } | Error::InvalidInput(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 2,
        Error::Contract(_) | Error::DimensionMismatch { .. } => 3,
        Error::Invariant(_) => 4,
    }
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Row { row, msg } => Error::Row { row, msg: format!("{}: {msg}", path.display()) },
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, Error> {
    Dataset::load_csv(path).map_err(|e| with_path(path, e))
}

fn load_forecasts(path: &Path) -> Result<Vec<Vec<f64>>, Error> {
    File::open(path)
        .map_err(Error::from)
        .and_then(read_forecasts_csv)
        .map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| with_path(path, e.into()))
}

fn cmd_fit(a: FitArgs) -> Result<(), Error> {
    let ds = load_dataset(&a.input)?;
    let config = FitConfig {
        method: a.method,
        alpha: a.alpha,
        max_leaves: a.max_leaves,
        candidates: a.cand.source(),
    };
    let model = fit(&ds, &config)?;
    let candidates = model.partition().map(|_| config.candidates);
    let file = ModelFile::new(model, FitMeta::now(ds.len(), Some(a.seed), candidates));
    let partition = file.model.partition();
    file.save(&a.output).map_err(|e| with_path(&a.output, e))?;

    if let Some(path) = &a.split_log {
        let part = partition.ok_or_else(|| {
            Error::Contract(format!("method {} has no split log", a.method))
        })?;
        write_split_log_csv(part.split_log(), ds.k(), create(path)?)?;
    }

    let calibrated = file.model.calibrator().calibrate(ds.forecasts())?;
    let opts = EvalOptions {
        lambda: file.model.alpha() / ds.len() as f64,
        vus_samples: a.vus_samples,
        seed: a.seed,
        lattice_step: a.cand.lattice_step,
        ece: Some(isocal::metrics::EceKind::Discrete),
        ..Default::default()
    };
    let extra = partition.map(|p| p.introduced_thresholds()).unwrap_or_default();
    let report = evaluate(&calibrated, ds.labels(), ds.weights(), &opts, &extra)?;
    let summary = json!({
        "method": a.method.name(),
        "k": ds.k(),
        "n": ds.len(),
        "alpha": file.model.alpha(),
        "leaves": file.model.calibrator().n_bins(),
        "splits": partition.map(|p| p.split_log().len()),
        "ece": report.ece,
        "cross_entropy": report.cross_entropy,
        "regularized_cross_entropy": report.regularized_cross_entropy,
        "auc_or_vus": report.auc_or_vus,
        "model": a.output.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

fn cmd_apply(a: ApplyArgs) -> Result<(), Error> {
    let file = ModelFile::load(&a.model).map_err(|e| with_path(&a.model, e))?;
    let forecasts = load_forecasts(&a.input)?;
    let k = forecasts[0].len();
    if k != file.k() {
        return Err(Error::Contract(format!("model has K={}, input has K={k}", file.k())));
    }
    let calibrated = file.model.calibrator().calibrate(&forecasts)?;
    write_forecasts_csv(&calibrated, create(&a.output)?)
}

fn cmd_eval(a: EvalArgs) -> Result<(), Error> {
    let forecasts = load_forecasts(&a.forecasts)?;
    let labeled = load_dataset(a.labels_from.as_deref().unwrap_or(&a.forecasts))?;
    if labeled.len() != forecasts.len() {
        return Err(Error::InvalidInput(format!(
            "{} forecast rows but {} label rows",
            forecasts.len(),
            labeled.len()
        )));
    }
    if labeled.k() != forecasts[0].len() {
        return Err(Error::InvalidInput(format!(
            "forecasts have K={}, labels file has K={}",
            forecasts[0].len(),
            labeled.k()
        )));
    }
    let opts = EvalOptions {
        bins: a.bins,
        lambda: a.lambda,
        vus_samples: a.vus_samples,
        seed: a.seed,
        lattice_step: a.lattice_step,
        ece: None,
    };
    let report = evaluate(&forecasts, labeled.labels(), labeled.weights(), &opts, &[])?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Error> {
    let calib = load_dataset(&a.calib)?;
    let test = load_dataset(&a.test)?;
    let opts = SweepOptions {
        methods: a.methods,
        alpha: a.alpha,
        max_leaves: a.max_leaves,
        fixed_bins: if a.fixed_bins_grid.is_empty() { vec![DEFAULT_FIXED_BINS] } else { a.fixed_bins_grid },
        candidates: a.cand.source(),
        lambda: a.lambda,
        vus_samples: a.vus_samples,
        seed: a.seed,
        lattice_step: a.cand.lattice_step,
    };
    let rows = run_sweep(&calib, &test, &opts)?;
    write_sweep_csv(&rows, create(&a.output)?)
}

fn cmd_synth(a: SynthArgs) -> Result<(), Error> {
    let ds = synth_simplex(a.n, a.k, a.noise, a.seed)?;
    ds.write_csv(create(&a.output)?)
}

fn cmd_roc(a: RocArgs) -> Result<(), Error> {
    let file = ModelFile::load(&a.model).map_err(|e| with_path(&a.model, e))?;
    let ds = load_dataset(&a.input)?;
    if ds.k() != file.k() {
        return Err(Error::Contract(format!("model has K={}, input has K={}", file.k(), ds.k())));
    }
    let introduced: Vec<AffineThreshold> = file
        .model
        .partition()
        .map(|p| p.introduced_thresholds())
        .unwrap_or_default();
    let mut thresholds = introduced.clone();
    if a.lattice_step > 0.0 {
        thresholds.extend(lattice_thresholds(ds.k(), a.lattice_step, DEFAULT_GRID_CAP)?);
    }
    if a.data_thresholds {
        for p in ds.forecasts() {
            thresholds.push(AffineThreshold::new(p.clone())?);
        }
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidInput("empty threshold set".into()));
    }
    let calibrated = match file.model.partition() {
        Some(p) if a.unsmoothed => p.calibrate_raw(ds.forecasts())?,
        _ => file.model.calibrator().calibrate(ds.forecasts())?,
    };
    let cal_graph = roc_surface(&calibrated, ds.labels(), ds.weights(), &thresholds)?;

    // the raw graph also covers thresholds reproducing each calibrated partition
    let mut raw_thresholds = thresholds.clone();
    raw_thresholds.extend(matched_thresholds(ds.forecasts(), &calibrated, &thresholds)?.into_iter().flatten());
    let raw_graph = roc_surface(ds.forecasts(), ds.labels(), ds.weights(), &raw_thresholds)?;

    raw_graph.write_csv(create(&a.raw_output)?)?;
    cal_graph.write_csv(create(&a.calibrated_output)?)?;
    // only points at introduced splits are guaranteed to lie on the raw graph
    let (split_points, on_raw) = if introduced.is_empty() {
        (0, 0)
    } else {
        let g = roc_surface(&calibrated, ds.labels(), ds.weights(), &introduced)?;
        let on_raw = g.points().iter().filter(|p| raw_graph.contains_point(p, 1e-9)).count();
        (g.len(), on_raw)
    };
    println!(
        "{}",
        json!({
            "thresholds": thresholds.len(),
            "raw_points": raw_graph.len(),
            "calibrated_points": cal_graph.len(),
            "split_points": split_points,
            "split_points_on_raw": on_raw,
        })
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Apply(a) => cmd_apply(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Roc(a) => cmd_roc(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
