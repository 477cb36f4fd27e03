mod config;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use luxskim_core::classify::{save_json, ClassifierSpec, Registry, TrainingSet};
use luxskim_core::eval::{compare, write_report_csv, Dataset, EvalReport, GridCell, ReportSummary};
use luxskim_core::features::{featurize_all, write_features_csv, Normalization, Scheme};
use luxskim_core::synth::{
    decimate, generate_session, quantize, SynthConfig, SynthConfigFile, DEVICES, ENVIRONMENTS,
    INPUT_METHODS,
};
use luxskim_core::trace::{extract_windows, parse_session, write_session, Nanos, Session};
use luxskim_core::Error;
use serde_json::json;

use config::{resolve_seed, FileConfig};

const DEFAULT_FOLDS: usize = 10;
const DEFAULT_GUESSES: usize = 10;
const DEFAULT_MARGIN_MS: f64 = 100.0;

#[derive(Parser)]
#[command(
    name = "luxskim",
    version,
    about = "Ambient-light PIN inference experiments"
)]
struct Cli {
    /// Worker threads for evaluation (default: one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// TOML file using the same keys as the flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic session file.
    Synth {
        #[command(flatten)]
        synth: SynthFlags,
        /// Output path (default stdout).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Extract one feature vector per PIN entry as CSV.
    Featurize {
        #[arg(long)]
        session: PathBuf,
        #[command(flatten)]
        features: FeatureFlags,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Fit a classifier on a whole session and save the model as JSON.
    Train {
        #[arg(long)]
        session: PathBuf,
        /// Classifier spec such as `lda` or `knn:k=3`.
        #[arg(long)]
        classifier: Option<String>,
        #[command(flatten)]
        features: FeatureFlags,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Rank PINs for every entry of a session with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        session: PathBuf,
        #[command(flatten)]
        features: FeatureFlags,
        /// Guesses listed per entry.
        #[arg(long, default_value_t = DEFAULT_GUESSES)]
        top: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Cross-validate classifiers and feature schemes, optionally per sampling rate.
    Eval(Box<EvalArgs>),
    /// Decimate and/or re-quantize a session.
    Resample {
        #[arg(long)]
        session: PathBuf,
        /// Target sampling rate in Hz.
        #[arg(long)]
        rate: Option<f64>,
        /// Lux resolution to round to.
        #[arg(long)]
        resolution: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Show registered classifiers, feature schemes and presets.
    List,
}

#[derive(Args, Default)]
struct SynthFlags {
    /// PIN-set size (15, 30 or 50).
    #[arg(long)]
    pins: Option<usize>,
    /// Repetitions per PIN (3..=10).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    env: Option<String>,
    /// Input method: thumb-same, thumb-other or index-finger.
    #[arg(long)]
    input: Option<String>,
    /// Seed for all randomness; falls back to LUXSKIM_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subject: Option<String>,
    /// Allow PIN-set sizes and repetition counts outside the studied ranges.
    #[arg(long)]
    unsafe_cardinality: bool,
}

impl SynthFlags {
    fn overrides(&self) -> SynthConfigFile {
        SynthConfigFile {
            pin_set_size: self.pins,
            reps: self.reps,
            device: self.device.clone(),
            environment: self.env.clone(),
            input_method: self.input.clone(),
            seed: self.seed,
            subject: self.subject.clone(),
            unsafe_cardinality: self.unsafe_cardinality.then_some(true),
            ..Default::default()
        }
    }

    fn shapes_session(&self) -> bool {
        self.pins.is_some()
            || self.reps.is_some()
            || self.device.is_some()
            || self.env.is_some()
            || self.input.is_some()
            || self.subject.is_some()
            || self.unsafe_cardinality
    }
}

#[derive(Args)]
struct FeatureFlags {
    /// Feature scheme: l, lrgbw or poly3.
    #[arg(long)]
    scheme: Option<String>,
    /// Per-window normalization: minmax, colnorm or none.
    #[arg(long)]
    norm: Option<String>,
    /// Window margin around the first and last digit, in milliseconds.
    #[arg(long)]
    margin_ms: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Session file; without it a session is synthesized from the flags below.
    #[arg(long)]
    session: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthFlags,
    /// Classifier spec; repeat for several (default lda).
    #[arg(long = "classifier")]
    classifiers: Vec<String>,
    /// Feature schemes, comma-separated or repeated (default lrgbw).
    #[arg(long = "scheme", value_delimiter = ',')]
    schemes: Vec<String>,
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    margin_ms: Option<f64>,
    /// Number of cross-validation folds.
    #[arg(long)]
    k: Option<usize>,
    /// Seed for the fold shuffle (default: --seed, else the session header's seed).
    #[arg(long)]
    fold_seed: Option<u64>,
    /// Guesses reported per cell.
    #[arg(long)]
    guesses: Option<usize>,
    /// Report every N from 1 to the number of classes.
    #[arg(long)]
    guess_curve: bool,
    /// Decimate to each rate (Hz) and evaluate separately.
    #[arg(long, value_delimiter = ',')]
    sweep_rates: Vec<f64>,
    /// Report CSV path (`-` for stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Summary JSON path (`-` for stdout, the default when --csv is absent).
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn is_stdio(p: &Path) -> bool {
    p.as_os_str() == "-"
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        None => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) if is_stdio(p) => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
    })
}

fn read_session(path: &Path) -> anyhow::Result<Session> {
    let session = if is_stdio(path) {
        parse_session(io::stdin().lock())
    } else {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        parse_session(BufReader::new(f))
    };
    session.with_context(|| format!("reading session {}", path.display()))
}

fn parse_named<T: std::str::FromStr<Err = Error>>(v: &str) -> anyhow::Result<T> {
    Ok(v.parse::<T>()?)
}

fn margin_ns(flag: Option<f64>, file: &FileConfig) -> anyhow::Result<Nanos> {
    let ms = flag.or(file.margin_ms).unwrap_or(DEFAULT_MARGIN_MS);
    if !ms.is_finite() || ms < 0.0 {
        return Err(config_error(format!(
            "margin must be a non-negative number of ms, got {ms}"
        )));
    }
    Ok((ms * 1e6).round() as Nanos)
}

struct FeatureChoice {
    scheme: Scheme,
    norm: Normalization,
    margin: Nanos,
}

impl FeatureFlags {
    fn resolve(&self, file: &FileConfig) -> anyhow::Result<FeatureChoice> {
        let scheme = match (&self.scheme, file.scheme.as_deref()) {
            (Some(s), _) => parse_named(s)?,
            (None, Some([s, ..])) => parse_named(s)?,
            _ => Scheme::Lrgbw,
        };
        let norm = match self.norm.as_ref().or(file.normalization.as_ref()) {
            Some(n) => parse_named(n)?,
            None => Normalization::MinMax,
        };
        Ok(FeatureChoice {
            scheme,
            norm,
            margin: margin_ns(self.margin_ms, file)?,
        })
    }
}

fn synth_config(flags: &SynthFlags, file: &FileConfig) -> anyhow::Result<SynthConfig> {
    let mut merged = file.synth.merged(&flags.overrides());
    merged.seed = Some(resolve_seed(flags.seed, file.synth.seed)?.unwrap_or(0));
    Ok(merged.resolve()?)
}

fn dataset(session: &Session, f: &FeatureChoice) -> anyhow::Result<Dataset> {
    Ok(Dataset::from_session(session, f.scheme, f.norm, f.margin)?)
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(core) = e.downcast_ref::<Error>() {
        core.kind()
    } else if e.downcast_ref::<io::Error>().is_some() {
        "io"
    } else {
        "error"
    }
}

fn emit_error(e: &anyhow::Error, context: serde_json::Value) {
    let mut record = json!({ "error": error_kind(e), "message": format!("{e:#}") });
    if let (Some(obj), serde_json::Value::Object(ctx)) = (record.as_object_mut(), context) {
        obj.extend(ctx);
    }
    eprintln!("{record}");
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) | Some(Error::Unknown { .. }) => 2,
        _ => 1,
    }
}

fn cmd_synth(synth: &SynthFlags, out: Option<&Path>, file: &FileConfig) -> anyhow::Result<u8> {
    let cfg = synth_config(synth, file)?;
    let session = generate_session(&cfg)?;
    let mut w = output(out)?;
    write_session(&session, &mut w)?;
    w.flush()?;
    Ok(0)
}

fn cmd_featurize(
    session: &Path,
    features: &FeatureFlags,
    out: Option<&Path>,
    file: &FileConfig,
) -> anyhow::Result<u8> {
    let choice = features.resolve(file)?;
    let s = read_session(session)?;
    let windows = extract_windows(&s, choice.margin)?;
    for skipped in &windows.skipped {
        emit_error(
            &Error::InsufficientData(skipped.reason.clone()).into(),
            json!({ "entry": skipped.index, "label": skipped.label.as_str(), "skipped": true }),
        );
    }
    let feats = featurize_all(&windows.windows, choice.scheme, choice.norm)?;
    let mut w = output(out)?;
    write_features_csv(&feats, &mut w)?;
    w.flush()?;
    Ok(0)
}

fn cmd_train(
    session: &Path,
    classifier: Option<&str>,
    features: &FeatureFlags,
    out: Option<&Path>,
    file: &FileConfig,
) -> anyhow::Result<u8> {
    let choice = features.resolve(file)?;
    let spec: ClassifierSpec = match classifier {
        Some(c) => c.parse()?,
        None => match file.classifier.as_deref() {
            Some([c, ..]) => c.parse()?,
            _ => ClassifierSpec::named("lda"),
        },
    };
    let ds = dataset(&read_session(session)?, &choice)?;
    let ts = TrainingSet::from_features(&ds.features)?;
    let model = Registry::builtin().build(&spec)?.fit(&ts)?;
    let mut w = output(out)?;
    writeln!(w, "{}", save_json(model.as_ref()))?;
    w.flush()?;
    Ok(0)
}

fn cmd_predict(
    model: &Path,
    session: &Path,
    features: &FeatureFlags,
    top: usize,
    out: Option<&Path>,
    file: &FileConfig,
) -> anyhow::Result<u8> {
    let choice = features.resolve(file)?;
    let text = std::fs::read_to_string(model)
        .with_context(|| format!("reading model {}", model.display()))?;
    let model = Registry::builtin().load_json(&text)?;
    let ds = dataset(&read_session(session)?, &choice)?;
    let mut w = output(out)?;
    writeln!(w, "entry,label,rank,guesses")?;
    for (i, f) in ds.features.iter().enumerate() {
        let ranked = model.predict_ranked(&f.values)?;
        let rank = ranked
            .rank_of(f.label.as_str())
            .map(|r| r.to_string())
            .unwrap_or_default();
        let guesses: Vec<&str> = ranked.labels().take(top).collect();
        writeln!(w, "{i},{},{rank},{}", f.label, guesses.join(" "))?;
    }
    w.flush()?;
    Ok(0)
}

fn cmd_resample(
    session: &Path,
    rate: Option<f64>,
    resolution: Option<f64>,
    out: Option<&Path>,
) -> anyhow::Result<u8> {
    if rate.is_none() && resolution.is_none() {
        return Err(config_error("resample needs --rate and/or --resolution"));
    }
    let mut s = read_session(session)?;
    if let Some(r) = rate {
        s = decimate(&s, r)?;
    }
    if let Some(q) = resolution {
        s = quantize(&s, q)?;
    }
    let mut w = output(out)?;
    write_session(&s, &mut w)?;
    w.flush()?;
    Ok(0)
}

fn cmd_list() -> anyhow::Result<u8> {
    let mut w = output(None)?;
    writeln!(w, "classifiers:")?;
    for e in Registry::builtin().entries() {
        writeln!(w, "  {:<10} {}", e.name, e.summary)?;
    }
    let schemes: Vec<&str> = Scheme::ALL.iter().map(|s| s.name()).collect();
    writeln!(w, "schemes: {}", schemes.join(", "))?;
    writeln!(w, "normalizations: minmax, colnorm, none")?;
    writeln!(w, "devices: {}", DEVICES.join(", "))?;
    writeln!(w, "environments: {}", ENVIRONMENTS.join(", "))?;
    writeln!(w, "input methods: {}", INPUT_METHODS.join(", "))?;
    w.flush()?;
    Ok(0)
}

/// A failed cell, kept as plain data so one dataset failure can be reported
/// for every cell that needed it.
#[derive(Clone)]
struct CellError {
    kind: &'static str,
    message: String,
}

impl From<&anyhow::Error> for CellError {
    fn from(e: &anyhow::Error) -> Self {
        CellError {
            kind: error_kind(e),
            message: format!("{e:#}"),
        }
    }
}

fn cmd_eval(a: &EvalArgs, file: &FileConfig) -> anyhow::Result<u8> {
    let features = FeatureFlags {
        scheme: None,
        norm: a.norm.clone(),
        margin_ms: a.margin_ms,
    }
    .resolve(file)?;
    let schemes: Vec<Scheme> = if !a.schemes.is_empty() {
        a.schemes
            .iter()
            .map(|s| parse_named(s))
            .collect::<anyhow::Result<_>>()?
    } else if let Some(list) = &file.scheme {
        list.iter()
            .map(|s| parse_named(s))
            .collect::<anyhow::Result<_>>()?
    } else {
        vec![Scheme::Lrgbw]
    };
    let classifiers: Vec<ClassifierSpec> = {
        let raw: Vec<String> = if !a.classifiers.is_empty() {
            a.classifiers.clone()
        } else {
            file.classifier
                .clone()
                .unwrap_or_else(|| vec!["lda".into()])
        };
        raw.iter()
            .map(|c| c.parse())
            .collect::<Result<_, Error>>()?
    };
    let folds = a.k.or(file.k).unwrap_or(DEFAULT_FOLDS);
    let guesses = a.guesses.or(file.guesses).unwrap_or(DEFAULT_GUESSES);
    if guesses == 0 {
        return Err(config_error("--guesses must be at least 1"));
    }
    let full_curve = a.guess_curve || file.guess_curve.unwrap_or(false);

    let (session, synth) = match &a.session {
        Some(path) => {
            if a.synth.shapes_session() {
                return Err(config_error(
                    "give either --session or synthesis flags, not both",
                ));
            }
            (read_session(path)?, None)
        }
        None => {
            let cfg = synth_config(&a.synth, file)?;
            (generate_session(&cfg)?, Some(cfg))
        }
    };
    let seed = match &synth {
        Some(cfg) => cfg.seed,
        None => resolve_seed(a.synth.seed, file.synth.seed)?
            .or(session.meta().seed)
            .unwrap_or(0),
    };
    let fold_seed = a.fold_seed.or(file.fold_seed).unwrap_or(seed);

    let native = session.meta().rate_hz;
    let rates: Vec<f64> = if !a.sweep_rates.is_empty() {
        a.sweep_rates.clone()
    } else {
        file.sweep_rates.clone().unwrap_or_else(|| vec![native])
    };

    // One dataset per (rate, scheme); one cell per (rate, scheme, classifier).
    let mut datasets = Vec::new();
    let mut plan: Vec<(f64, Scheme, &ClassifierSpec, Result<usize, CellError>)> = Vec::new();
    for &rate in &rates {
        let resampled = if rate == native {
            Ok(session.clone())
        } else {
            decimate(&session, rate).map_err(|e| CellError::from(&e.into()))
        };
        for &scheme in &schemes {
            let choice = FeatureChoice {
                scheme,
                norm: features.norm,
                margin: features.margin,
            };
            let slot = resampled.clone().and_then(|s| match dataset(&s, &choice) {
                Ok(ds) => {
                    datasets.push(ds);
                    Ok(datasets.len() - 1)
                }
                Err(e) => Err(CellError::from(&e)),
            });
            for spec in &classifiers {
                plan.push((rate, scheme, spec, slot.clone()));
            }
        }
    }

    let mut job_of_cell = Vec::with_capacity(plan.len());
    let mut grid = Vec::new();
    for (_, _, spec, slot) in &plan {
        job_of_cell.push(slot.as_ref().ok().map(|&i| {
            grid.push(GridCell {
                classifier: (*spec).clone(),
                dataset: &datasets[i],
            });
            grid.len() - 1
        }));
    }
    let mut results: Vec<Option<luxskim_core::Result<EvalReport>>> =
        compare(&grid, &Registry::builtin(), folds, fold_seed)
            .into_iter()
            .map(Some)
            .collect();

    let mut ok_reports = Vec::new();
    let mut cells = Vec::new();
    let mut failed = 0usize;
    for ((rate, scheme, spec, slot), job) in plan.iter().zip(job_of_cell) {
        let outcome = match (slot, job) {
            (_, Some(i)) => results[i]
                .take()
                .expect("each job is read once")
                .map_err(|e| CellError::from(&e.into())),
            (Err(e), None) => Err(e.clone()),
            (Ok(_), None) => unreachable!("datasets that built always have a job"),
        };
        match outcome {
            Ok(report) => {
                cells.push(json!({
                    "status": "ok",
                    "result": ReportSummary::of(&report, guesses),
                }));
                ok_reports.push(report);
            }
            Err(e) => {
                failed += 1;
                let record = json!({
                    "error": e.kind,
                    "message": e.message,
                    "classifier": spec.to_string(),
                    "scheme": scheme.name(),
                    "rate_hz": rate,
                });
                eprintln!("{record}");
                let mut cell = record;
                cell["status"] = json!("error");
                cells.push(cell);
            }
        }
    }

    let summary = json!({
        "session": {
            "device": session.meta().device,
            "environment": session.meta().environment,
            "input_method": session.meta().input_method,
            "rate_hz": native,
            "entries": session.pins().len(),
        },
        "synth": synth,
        "folds": folds,
        "fold_seed": fold_seed,
        "normalization": features.norm.name(),
        "cells": cells,
    });

    let csv_rows = if full_curve { usize::MAX } else { guesses };
    let refs: Vec<&EvalReport> = ok_reports.iter().collect();
    let summary_path = match (&a.csv, &a.summary) {
        (_, Some(p)) => Some(p.clone()),
        (None, None) => Some(PathBuf::from("-")),
        (Some(_), None) => None,
    };
    if let (Some(c), Some(s)) = (&a.csv, &summary_path) {
        if is_stdio(c) && is_stdio(s) {
            return Err(config_error("--csv and --summary cannot both go to stdout"));
        }
    }
    if let Some(c) = &a.csv {
        let mut w = output(Some(c))?;
        write_report_csv(&refs, csv_rows, &mut w)?;
        w.flush()?;
    }
    if let Some(s) = &summary_path {
        let mut w = output(Some(s))?;
        writeln!(w, "{}", serde_json::to_string_pretty(&summary)?)?;
        w.flush()?;
    }
    Ok(if failed == 0 { 0 } else { 1 })
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(config_error("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match &cli.command {
        Command::Synth { synth, out } => cmd_synth(synth, out.as_deref(), &file),
        Command::Featurize {
            session,
            features,
            out,
        } => cmd_featurize(session, features, out.as_deref(), &file),
        Command::Train {
            session,
            classifier,
            features,
            out,
        } => cmd_train(
            session,
            classifier.as_deref(),
            features,
            out.as_deref(),
            &file,
        ),
        Command::Predict {
            model,
            session,
            features,
            top,
            out,
        } => cmd_predict(model, session, features, *top, out.as_deref(), &file),
        Command::Eval(args) => cmd_eval(args, &file),
        Command::Resample {
            session,
            rate,
            resolution,
            out,
        } => cmd_resample(session, *rate, *resolution, out.as_deref()),
        Command::List => cmd_list(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            emit_error(&e, json!({}));
            ExitCode::from(exit_code_for(&e))
        }
    }
}
