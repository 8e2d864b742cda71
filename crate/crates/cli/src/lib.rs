//! Command-line front end: corpus generation, feature extraction, training,
//! evaluation, single-clip localisation and gradient checking.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use cafnet_autograd::gradcheck::suite::{primitive_cases, run_case, GradCase, GradRow, DEFAULT_SEEDS};
use cafnet_autograd::{grad_check, write_atomic, ParamStore, Tensor};
use cafnet_core::corpus::{generate_corpus, load_wav, pad_or_trim, read_manifest, ClassLabel, Manifest};
use cafnet_core::features::{extract_features, extract_manifest, FeatureSet};
use cafnet_core::metrics::{build_report, scores_csv, write_report, EvalReport};
use cafnet_core::models::{trust_gate, FeatureBatch, Model, ModelSpec, Prediction};
use cafnet_core::training::{
    composite_cases, finetune_param_groups, fit, load_samples, CheckpointMeta, FitOptions, FitReport, Sample,
    FINETUNE_LRS,
};
use cafnet_core::{CoreError, CLIP_SECONDS, SAMPLE_RATE};
use clap::{Parser, Subcommand};

pub use config::RunConfig;

type Result<T> = std::result::Result<T, CoreError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_GRADCHECK: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_MISSING: i32 = 4;
pub const EXIT_NUMERIC: i32 = 5;
pub const EXIT_CHECKPOINT: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "cafnet", version, about = "Half-truth audio deepfake detection and localisation")]
pub struct Cli {
    /// Run configuration file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for corpus synthesis and training [default: 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single-threaded numerics and timestamp-free logs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Worker threads for generation and extraction.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesise the train/val/test corpus and manifests.
    Gen,
    /// Cache features for every manifest row.
    Extract {
        /// Manifests to process [default: every split under corpus_dir].
        #[arg(long)]
        manifest: Vec<PathBuf>,
    },
    /// Train on the train split, selecting on the val split.
    Train {
        /// Fine-tune from this checkpoint with layer-wise learning rates.
        #[arg(long, value_name = "FROM")]
        finetune: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write the JSON report and score CSV.
    Eval {
        /// Manifest to evaluate [default: corpus_dir/test.csv].
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Classify and localise a single WAV file.
    Localize {
        wav: PathBuf,
        /// Write waveform envelope and boundary markers as CSV.
        #[arg(long, value_name = "PATH")]
        plot_data: Option<PathBuf>,
        /// True splice boundaries in seconds, `start,end`, for the plot data.
        #[arg(long, value_name = "START,END")]
        truth: Option<String>,
    },
    /// Finite-difference check of every primitive and the composite loss.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: u64,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

pub fn exit_code(e: &CoreError) -> i32 {
    match e {
        CoreError::Config(_) | CoreError::Invalid(_) => EXIT_CONFIG,
        CoreError::Io { .. } | CoreError::Format { .. } => EXIT_IO,
        CoreError::Missing(_) | CoreError::Unreadable(_) => EXIT_MISSING,
        CoreError::Numeric(_) | CoreError::Autograd(_) => EXIT_NUMERIC,
        CoreError::Checkpoint(_) => EXIT_CHECKPOINT,
    }
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = (|| {
        let mut cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = cli.seed {
            cfg.train.seed = seed;
            cfg.synthesis.master_seed = seed;
        }
        cfg.deterministic |= cli.deterministic;
        let workers = if cfg.deterministic { 1 } else { cli.workers.max(1) };
        match &cli.command {
            Command::Gen => cmd_gen(&cfg, workers, out),
            Command::Extract { manifest } => cmd_extract(&cfg, manifest, workers, out),
            Command::Train { finetune } => cmd_train(&cfg, finetune.as_deref(), out, err).map(|_| EXIT_OK),
            Command::Eval { manifest } => cmd_eval(&cfg, manifest.as_deref(), out).map(|_| EXIT_OK),
            Command::Localize { wav, plot_data, truth } => {
                cmd_localize(&cfg, wav, plot_data.as_deref(), truth.as_deref(), out).map(|_| EXIT_OK)
            }
            Command::Gradcheck { seeds, inject_fault } => Ok(cmd_gradcheck(*seeds, *inject_fault, out)),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CoreError + '_ {
    move |e| CoreError::io(path, e)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(io_err(dir)),
        _ => Ok(()),
    }
}

fn require(paths: &[&Path]) -> Result<()> {
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.exists()).map(|p| p.to_path_buf()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CoreError::Missing(missing))
    }
}

fn write_out(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(text).map_err(|e| CoreError::io("<stdout>", e))
}

pub fn cmd_gen(cfg: &RunConfig, workers: usize, out: &mut dyn Write) -> Result<i32> {
    let manifests = generate_corpus(&cfg.synthesis, &cfg.corpus_dir, workers)?;
    for m in &manifests {
        let [r, f, h] = m.class_counts();
        write_out(out, format_args!("{:<5} real {r:>5}  fake {f:>5}  half_truth {h:>5}\n", m.split.name()))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_extract(cfg: &RunConfig, manifests: &[PathBuf], workers: usize, out: &mut dyn Write) -> Result<i32> {
    let paths: Vec<PathBuf> = if manifests.is_empty() {
        ["train", "val", "test"].iter().map(|s| cfg.manifest(s)).filter(|p| p.exists()).collect()
    } else {
        manifests.to_vec()
    };
    if paths.is_empty() {
        return Err(CoreError::Missing(vec![cfg.manifest("train")]));
    }
    require(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>())?;
    for path in &paths {
        let manifest = read_manifest(path)?;
        let s = extract_manifest(&manifest, path, &cfg.cache_dir, workers)?;
        write_out(out, format_args!("{}: {} written, {} up to date\n", path.display(), s.written, s.skipped))?;
    }
    Ok(EXIT_OK)
}

fn load_split(cfg: &RunConfig, path: &Path) -> Result<Vec<Sample>> {
    require(&[path])?;
    load_samples(&read_manifest(path)?, &cfg.cache_dir)
}

/// Model and parameters for a checkpoint, checked against the configured
/// model.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<(Model, ParamStore<f32>)> {
    require(&[checkpoint, &CheckpointMeta::path_for(checkpoint)])?;
    let meta = CheckpointMeta::read(checkpoint)?;
    if meta.model != cfg.model {
        return Err(CoreError::Checkpoint(format!(
            "{} holds a {} model with a different configuration than the run config ({})",
            checkpoint.display(),
            meta.model.name(),
            cfg.model.name()
        )));
    }
    let (model, mut store) = Model::init::<f32>(&meta.model, 0)?;
    store.load_checkpoint(checkpoint)?;
    Ok((model, store))
}

pub fn cmd_train(cfg: &RunConfig, finetune: Option<&Path>, out: &mut dyn Write, err: &mut dyn Write) -> Result<FitReport> {
    let train = load_split(cfg, &cfg.manifest("train"))?;
    let val = load_split(cfg, &cfg.manifest("val"))?;
    if matches!(cfg.model, ModelSpec::Mfaan(_)) && train.iter().any(|s| s.label.class == ClassLabel::HalfTruth) {
        let _ = writeln!(err, "note: binary model; half-truth rows are trained and scored as fake");
    }
    let (model, mut store, groups) = match finetune {
        Some(from) => {
            let (model, store) = load_model(cfg, from)?;
            let (backbone_lr, head_lr) = FINETUNE_LRS;
            let groups = finetune_param_groups(&store, &model.head_params(), backbone_lr, head_lr)?;
            for g in &groups.groups {
                let n: usize = g.ids.iter().map(|&id| store.value(id).len()).sum();
                write_out(out, format_args!("group {:<8} lr {:.0e}  params {n}\n", g.name, g.lr))?;
            }
            (model, store, Some(groups))
        }
        None => {
            let (model, store) = Model::init::<f32>(&cfg.model, cfg.train.seed)?;
            (model, store, None)
        }
    };
    ensure_parent(&cfg.checkpoint)?;
    let log = cfg.log_path();
    ensure_parent(&log)?;
    let opts = FitOptions { checkpoint: Some(cfg.checkpoint.clone()), log: Some(log), groups, deterministic: cfg.deterministic };
    let report = fit(&model, &cfg.model, &mut store, &train, &val, &cfg.train, &opts)?;
    for e in &report.epochs {
        write_out(
            out,
            format_args!(
                "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.1e}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_acc, e.lr
            ),
        )?;
    }
    write_out(out, format_args!("best epoch {} val_acc {:.4}\n", report.best_epoch, report.best_val_acc))?;
    Ok(report)
}

/// Eval-mode predictions in batches.
pub fn predict_all(model: &Model, store: &mut ParamStore<f32>, feats: &[&FeatureSet], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut preds = Vec::with_capacity(feats.len());
    for chunk in feats.chunks(batch_size.max(1)) {
        preds.extend(model.predict(store, &FeatureBatch::new(chunk)?)?);
    }
    Ok(preds)
}

pub fn scores_path(report: &Path) -> PathBuf {
    report.with_extension("scores.csv")
}

pub fn cmd_eval(cfg: &RunConfig, manifest: Option<&Path>, out: &mut dyn Write) -> Result<EvalReport> {
    let path = manifest.map(Path::to_path_buf).unwrap_or_else(|| cfg.manifest("test"));
    let samples = load_split(cfg, &path)?;
    let (model, mut store) = load_model(cfg, &cfg.checkpoint)?;
    let feats: Vec<&FeatureSet> = samples.iter().map(|s| &s.features).collect();
    let preds = predict_all(&model, &mut store, &feats, cfg.train.batch_size)?;
    let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
    let report = build_report(cfg.model.name(), &preds, &labels)?;

    ensure_parent(&cfg.report)?;
    write_report(&report, &cfg.report)?;
    let rows: Vec<(String, f64, usize)> = samples
        .iter()
        .zip(&preds)
        .map(|(s, p)| (s.name.clone(), 1.0 - p.probs[0], usize::from(s.label.class != ClassLabel::Real)))
        .collect();
    let csv_path = scores_path(&cfg.report);
    write_atomic(&csv_path, scores_csv(&rows).as_bytes()).map_err(io_err(&csv_path))?;

    write_out(
        out,
        format_args!(
            "{} clips  accuracy {:.4}  macro_auc {:.4}  eer {:.4}\n",
            report.n_clips, report.accuracy, report.macro_auc, report.eer
        ),
    )?;
    if let Some(l) = &report.localisation {
        write_out(
            out,
            format_args!("boundary MAE {:.3} s  median {:.3} s  p90 {:.3} s\n", l.overall.mae, l.overall.median, l.overall.p90),
        )?;
    }
    Ok(report)
}

/// Result of `localize` on one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Localisation {
    pub probs: Vec<f64>,
    /// Start and end in seconds.
    pub boundaries: Option<[f64; 2]>,
    pub trusted: bool,
}

/// RMS envelope over 10 ms frames, as (time in seconds, rms).
fn envelope(samples: &[f32]) -> Vec<(f64, f64)> {
    let hop = SAMPLE_RATE as usize / 100;
    samples
        .chunks(hop)
        .enumerate()
        .map(|(i, c)| {
            let rms = (c.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
            (i as f64 * hop as f64 / SAMPLE_RATE as f64, rms)
        })
        .collect()
}

fn parse_truth(s: &str) -> Result<[f64; 2]> {
    let bad = || CoreError::Config(format!("--truth {s}: expected START,END in seconds"));
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
    match v[..] {
        [a, b] if 0.0 <= a && a < b && b <= CLIP_SECONDS => Ok([a, b]),
        _ => Err(bad()),
    }
}

pub fn cmd_localize(
    cfg: &RunConfig,
    wav: &Path,
    plot: Option<&Path>,
    truth: Option<&str>,
    out: &mut dyn Write,
) -> Result<Localisation> {
    let truth = truth.map(parse_truth).transpose()?;
    let clip = pad_or_trim(&load_wav(wav)?)?;
    let (model, mut store) = load_model(cfg, &cfg.checkpoint)?;
    let feats = extract_features(&clip)?;
    let pred = model.predict(&mut store, &FeatureBatch::new(&[&feats])?)?.remove(0);
    let boundaries = pred.boundaries.map(|[s, e]| [s * CLIP_SECONDS, e * CLIP_SECONDS]);
    let trusted = pred.probs.len() == 3 && trust_gate(&[pred.probs[0], pred.probs[1], pred.probs[2]]);

    let names: &[&str] = if pred.probs.len() == 3 { &["real", "fake", "half_truth"] } else { &["real", "non_real"] };
    for (n, p) in names.iter().zip(&pred.probs) {
        write_out(out, format_args!("p_{n:<11} {p:.4}\n"))?;
    }
    match boundaries {
        Some([s, e]) => {
            let verdict = if trusted { "trusted" } else { "untrusted" };
            write_out(out, format_args!("boundaries {s:.2} s - {e:.2} s ({verdict})\n"))?;
        }
        None => write_out(out, format_args!("boundaries n/a (binary model)\n"))?,
    }

    if let Some(path) = plot {
        let mut csv = String::from("series,time_s,value\n");
        for (t, v) in envelope(&clip.samples) {
            csv.push_str(&format!("envelope,{t:.3},{v:.6}\n"));
        }
        let markers = [("pred", boundaries), ("true", truth)];
        for (kind, b) in markers {
            if let Some([s, e]) = b {
                csv.push_str(&format!("{kind}_start,{s:.4},1\n{kind}_end,{e:.4},1\n"));
            }
        }
        ensure_parent(path)?;
        write_atomic(path, csv.as_bytes()).map_err(io_err(path))?;
    }
    Ok(Localisation { probs: pred.probs, boundaries, trusted })
}

/// Deliberately wrong backward: the second factor of `x * x` is read back
/// as a constant, so the analytic gradient is half the true one.
pub fn injected_fault_case() -> GradCase {
    GradCase::new("injected_fault", 1e-6, |seed| {
        let x = Tensor::new(vec![1, 4], (0..4).map(|i| 0.5 + 0.1 * (i as f64 + seed as f64)).collect());
        let report = grad_check(
            |tape, v| {
                let detached = tape.constant(tape.tensor(v[0]))?;
                let y = tape.mul(v[0], detached)?;
                tape.sum(y)
            },
            &[x],
            1e-5,
        )?;
        Ok(report.max_rel_err)
    })
}

pub fn gradcheck_rows(seeds: u64, inject_fault: bool) -> Vec<GradRow> {
    let mut cases = primitive_cases();
    cases.extend(composite_cases());
    if inject_fault {
        cases.push(injected_fault_case());
    }
    cases.iter().map(|c| run_case(c, seeds)).collect()
}

pub fn cmd_gradcheck(seeds: u64, inject_fault: bool, out: &mut dyn Write) -> i32 {
    let rows = gradcheck_rows(seeds, inject_fault);
    let _ = writeln!(out, "{:<28} {:>10} {:>13} {:>6}  result", "case", "threshold", "max_rel_err", "seeds");
    for r in &rows {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{:<28} {:>10.0e} {:>13.3e} {:>6}  {verdict}", r.name, r.threshold, r.max_rel_err, r.seeds);
        if let Some(e) = &r.error {
            let _ = writeln!(out, "  error: {e}");
        }
    }
    if rows.iter().all(GradRow::passed) {
        EXIT_OK
    } else {
        EXIT_GRADCHECK
    }
}

/// Manifest rows resolved to WAV paths, for callers that need the audio.
pub fn wav_paths(manifest_path: &Path) -> Result<Vec<PathBuf>> {
    let m = read_manifest(manifest_path)?;
    Ok(m.entries.iter().map(|e| Manifest::resolve(manifest_path, e)).collect())
}
