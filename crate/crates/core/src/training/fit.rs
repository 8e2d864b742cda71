use std::path::{Path, PathBuf};
use std::time::Instant;

use cafnet_autograd::nn::Ctx;
use cafnet_autograd::{write_atomic, Mode, ParamId, ParamStore, Real, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::optim::{clip_grad_norm, AdamW, AdamWConfig, ParamGroups, PlateauScheduler};
use super::{composite_loss, TrainConfig, Targets};
use crate::corpus::{ClipLabel, Manifest};
use crate::error::{invalid, CoreError, Result};
use crate::features::{augment, cache_path, read_cache, FeatureSet};
use crate::models::{FeatureBatch, Model, ModelSpec};

/// One labelled clip with its cached features.
#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub features: FeatureSet,
    pub label: ClipLabel,
}

/// Read the cached features of every manifest row; all missing caches are
/// reported together.
pub fn load_samples(manifest: &Manifest, cache_dir: &Path) -> Result<Vec<Sample>> {
    let paths: Vec<PathBuf> = manifest.entries.iter().map(|e| cache_path(cache_dir, &e.path)).collect();
    let missing: Vec<PathBuf> = paths.iter().filter(|p| !p.is_file()).cloned().collect();
    if !missing.is_empty() {
        return Err(CoreError::Missing(missing));
    }
    manifest
        .entries
        .iter()
        .zip(&paths)
        .map(|(e, p)| Ok(Sample { name: e.path.clone(), features: read_cache(p)?, label: e.label }))
        .collect()
}

/// One line of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    /// Wall time of the epoch; recorded as 0 in deterministic mode.
    pub seconds: f64,
}

/// Sidecar written next to each saved checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config_hash: String,
    pub epoch: usize,
    pub val_acc: f64,
    pub model: ModelSpec,
}

impl CheckpointMeta {
    pub fn path_for(checkpoint: &Path) -> PathBuf {
        let mut s = checkpoint.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn read(checkpoint: &Path) -> Result<Self> {
        let path = Self::path_for(checkpoint);
        let text = std::fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::format(&path, e.to_string()))
    }
}

/// SHA-256 of the JSON form of the model and training configuration.
pub fn config_hash(spec: &ModelSpec, cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(&(spec, cfg)).expect("configs serialise");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Best checkpoint path; a `.json` sidecar is written beside it.
    pub checkpoint: Option<PathBuf>,
    /// JSONL log path, rewritten atomically after every epoch.
    pub log: Option<PathBuf>,
    /// Learning-rate groups; `None` puts every parameter at `cfg.lr`.
    pub groups: Option<ParamGroups>,
    /// Record zero wall time so logs are byte-identical across runs.
    pub deterministic: bool,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub steps: u64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SHUFFLE_STREAM: u64 = 1;
const AUGMENT_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// Mean composite loss and accuracy over `samples` in eval mode.
pub fn evaluate_loss<F: Real>(
    model: &Model,
    store: &mut ParamStore<F>,
    samples: &[Sample],
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return invalid("evaluation set is empty");
    }
    let n_classes = model.n_classes();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for chunk in samples.chunks(cfg.batch_size) {
        let feats: Vec<&FeatureSet> = chunk.iter().map(|s| &s.features).collect();
        let batch = FeatureBatch::<F>::new(&feats)?;
        let targets = Targets::<F>::new(chunk.iter().map(|s| &s.label), n_classes);
        let mut tape = Tape::inference();
        let mut cx = Ctx { tape: &mut tape, store, mode: Mode::Eval, rng: &mut rng };
        let vars = model.forward(&mut cx, &batch)?;
        let terms = composite_loss(&mut tape, &vars, &targets, &cfg.loss)?;
        loss_sum += tape.value(terms.total)[0].as_f64() * chunk.len() as f64;
        let logits = tape.value(vars.logits);
        for (row, &y) in logits.chunks(n_classes).zip(&targets.classes) {
            let pred = (0..n_classes).fold(0, |best, c| if row[c] > row[best] { c } else { best });
            correct += usize::from(pred == y);
        }
    }
    let n = samples.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

fn write_log(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let mut text = String::new();
    for e in epochs {
        text.push_str(&serde_json::to_string(e).expect("log rows serialise"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes()).map_err(|e| CoreError::io(path, e))
}

fn save_checkpoint<F: Real>(store: &ParamStore<F>, path: &Path, meta: &CheckpointMeta) -> Result<()> {
    store.save_checkpoint(path)?;
    let side = CheckpointMeta::path_for(path);
    let json = serde_json::to_string_pretty(meta).expect("metadata serialises");
    write_atomic(&side, json.as_bytes()).map_err(|e| CoreError::io(&side, e))
}

/// Train with early stopping on validation accuracy, ties broken by lower
/// validation loss. On return `store` holds the best epoch's parameters.
pub fn fit<F: Real>(
    model: &Model,
    spec: &ModelSpec,
    store: &mut ParamStore<F>,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    opts: &FitOptions,
) -> Result<FitReport> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return invalid("training and validation sets must be non-empty");
    }
    let n_classes = model.n_classes();
    let mut groups = opts.groups.clone().unwrap_or_else(|| ParamGroups::single(store, cfg.lr));
    let mut opt = AdamW::new(AdamWConfig { weight_decay: cfg.weight_decay, ..AdamWConfig::default() });
    let mut plateau = cfg.plateau.map(|p| PlateauScheduler::new(p.factor, p.patience));
    let hash = config_hash(spec, cfg);

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, f64, Vec<u8>)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = groups.groups.iter().map(|g| g.lr).fold(0.0, f64::max);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(cfg.seed, SHUFFLE_STREAM, epoch as u64)));

        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(cfg.batch_size).enumerate() {
            let feats: Vec<FeatureSet> = idx
                .iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, AUGMENT_STREAM, (epoch as u64) << 32 | i as u64));
                    augment(&train[i].features, &mut rng, &cfg.augment)
                })
                .collect();
            let refs: Vec<&FeatureSet> = feats.iter().collect();
            let batch = FeatureBatch::<F>::new(&refs)?;
            let targets = Targets::<F>::new(idx.iter().map(|&i| &train[i].label), n_classes);

            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, DROPOUT_STREAM, (epoch as u64) << 32 | step as u64));
            let mut tape = Tape::new();
            let mut cx = Ctx { tape: &mut tape, store, mode: Mode::Train, rng: &mut rng };
            let vars = model.forward(&mut cx, &batch)?;
            let terms = composite_loss(&mut tape, &vars, &targets, &cfg.loss)?;
            let loss = tape.value(terms.total)[0].as_f64();
            if !loss.is_finite() {
                return Err(CoreError::Numeric(format!("non-finite training loss at epoch {epoch}, step {}", step + 1)));
            }
            tape.backward(terms.total)?;
            let mut grads: Vec<(ParamId, Vec<F>)> = tape.param_grads().into_iter().map(|(id, g)| (id, g.to_vec())).collect();
            if let Some(max) = cfg.clip_norm {
                clip_grad_norm(&mut grads, max);
            }
            opt.step(store, &grads, &groups)?;
            loss_sum += loss * idx.len() as f64;
        }

        let (val_loss, val_acc) = evaluate_loss(model, store, val, cfg)?;
        if !val_loss.is_finite() {
            return Err(CoreError::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        let seconds = if opts.deterministic { 0.0 } else { started.elapsed().as_secs_f64() };
        epochs.push(EpochLog { epoch, train_loss: loss_sum / train.len() as f64, val_loss, val_acc, lr, seconds });
        if let Some(path) = &opts.log {
            write_log(path, &epochs)?;
        }

        if best.as_ref().is_none_or(|b| val_acc > b.1 || (val_acc == b.1 && val_loss < b.2)) {
            best = Some((epoch, val_acc, val_loss, store.to_checkpoint_bytes()));
            stale = 0;
            if let Some(path) = &opts.checkpoint {
                let meta = CheckpointMeta { config_hash: hash.clone(), epoch, val_acc, model: spec.clone() };
                save_checkpoint(store, path, &meta)?;
            }
        } else {
            stale += 1;
        }
        if let Some(p) = plateau.as_mut() {
            groups.scale(p.observe(val_loss));
        }
        if stale >= cfg.patience {
            break;
        }
    }

    let (best_epoch, best_val_acc, _, bytes) = best.expect("at least one epoch ran");
    store.load_checkpoint_bytes(&bytes)?;
    Ok(FitReport { epochs, best_epoch, best_val_acc, steps: opt.step })
}
