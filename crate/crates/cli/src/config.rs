//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use cafnet_core::corpus::SynthesisConfig;
use cafnet_core::models::{CafNetConfig, FeatureKind, MfaanConfig, ModelSpec};
use cafnet_core::training::{PlateauConfig, TrainConfig};
use cafnet_core::CoreError;

type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    /// Training log; defaults to the checkpoint path with `.log.jsonl`.
    pub log: Option<PathBuf>,
    pub synthesis: SynthesisConfig,
    pub train: TrainConfig,
    pub model: ModelSpec,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus_dir: "corpus".into(),
            cache_dir: "cache".into(),
            checkpoint: "runs/model.cafw".into(),
            report: "runs/report.json".into(),
            log: None,
            synthesis: SynthesisConfig::default(),
            train: TrainConfig::default(),
            model: ModelSpec::Cafnet(CafNetConfig::default()),
            deterministic: false,
        }
    }
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CoreError {
    CoreError::Config(format!("{key} = {value}: {why}"))
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| bad(key, v, e))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|p| num(key, p.trim())).collect()
}

fn pair(key: &str, v: &str) -> Result<(f64, f64)> {
    match list::<f64>(key, v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err(bad(key, v, "expected two comma-separated numbers")),
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, v, "expected true or false")),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text)
    }

    /// Parse config text; `#` starts a comment, unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut model_kind = "cafnet".to_string();
        let mut cafnet = CafNetConfig::default();
        let mut mfaan = MfaanConfig::default();
        let mut train_keys: Vec<(String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| CoreError::Config(format!("line {}: expected key = value", n + 1)))?;
            let s = &mut cfg.synthesis;
            match key {
                "corpus_dir" => cfg.corpus_dir = value.into(),
                "cache_dir" => cfg.cache_dir = value.into(),
                "checkpoint" => cfg.checkpoint = value.into(),
                "report" => cfg.report = value.into(),
                "log" => cfg.log = Some(value.into()),
                "deterministic" => cfg.deterministic = flag(key, value)?,
                "model" => model_kind = value.to_string(),
                "n_train" => s.n_train = num(key, value)?,
                "n_val" => s.n_val = num(key, value)?,
                "n_test" => s.n_test = num(key, value)?,
                "ratios" => {
                    s.ratios = list::<f64>(key, value)?.try_into().map_err(|_| bad(key, value, "expected three ratios"))?
                }
                "splice_range" => s.splice_range = pair(key, value)?,
                "f0_range" => s.f0_range = pair(key, value)?,
                "formant1_range" => s.formant_ranges[0] = pair(key, value)?,
                "formant2_range" => s.formant_ranges[1] = pair(key, value)?,
                "formant3_range" => s.formant_ranges[2] = pair(key, value)?,
                "am_rate_range" => s.am_rate_range = pair(key, value)?,
                "artefact_strength" => s.artefact_strength = num(key, value)?,
                "phase_jitter" => s.phase_jitter = num(key, value)?,
                "quant_bits" => s.quant_bits = num(key, value)?,
                "comb_range" => s.comb_range = pair(key, value)?,
                "comb_spacing" => s.comb_spacing = num(key, value)?,
                "comb_level" => s.comb_level = num(key, value)?,
                "master_seed" => s.master_seed = num(key, value)?,
                "path_attention" => cafnet.path_attention = flag(key, value)?,
                "mfaan_features" => {
                    mfaan.features = value
                        .split(',')
                        .map(|f| FeatureKind::from_name(f.trim()).ok_or_else(|| bad(key, value, "unknown feature")))
                        .collect::<Result<_>>()?
                }
                "batch_size" | "lr" | "weight_decay" | "clip_norm" | "patience" | "max_epochs" | "seed"
                | "plateau_factor" | "plateau_patience" | "augment" | "aux_coeff" | "temp_coeff" => {
                    train_keys.push((key.to_string(), value.to_string()))
                }
                _ => return Err(CoreError::Config(format!("line {}: unknown key '{key}'", n + 1))),
            }
        }
        cfg.model = match model_kind.as_str() {
            "cafnet" => ModelSpec::Cafnet(cafnet),
            "mfaan" => ModelSpec::Mfaan(mfaan),
            other => return Err(bad("model", other, "expected cafnet or mfaan")),
        };
        // Training defaults depend on the model, so apply overrides last.
        cfg.train = TrainConfig::for_model(&cfg.model);
        for (key, value) in &train_keys {
            cfg.apply_train_key(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_train_key(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "batch_size" => t.batch_size = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "clip_norm" => t.clip_norm = if value == "none" { None } else { Some(num(key, value)?) },
            "patience" => t.patience = num(key, value)?,
            "max_epochs" => t.max_epochs = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "plateau_factor" => {
                let patience = t.plateau.map_or(3, |p| p.patience);
                t.plateau = if value == "none" { None } else { Some(PlateauConfig { factor: num(key, value)?, patience }) }
            }
            "plateau_patience" => {
                let factor = t.plateau.map_or(0.5, |p| p.factor);
                t.plateau = Some(PlateauConfig { factor, patience: num(key, value)? })
            }
            "augment" => {
                if !flag(key, value)? {
                    t.augment = cafnet_core::features::AugmentConfig::disabled();
                }
            }
            "aux_coeff" => t.loss.aux_coeff = num(key, value)?,
            "temp_coeff" => t.loss.temp_coeff = num(key, value)?,
            _ => unreachable!("train keys are filtered by the caller"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.synthesis.validate()?;
        self.train.validate()?;
        match &self.model {
            ModelSpec::Cafnet(c) => c.validate(),
            ModelSpec::Mfaan(c) => c.validate(),
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| self.checkpoint.with_extension("log.jsonl"))
    }

    pub fn manifest(&self, split: &str) -> PathBuf {
        self.corpus_dir.join(format!("{split}.csv"))
    }
}
