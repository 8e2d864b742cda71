use cafnet_autograd::nn::{Conv2d, Ctx, Linear};
use cafnet_autograd::{ParamId, ParamStore, Real, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureKind;
use crate::error::{config_err, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfaanConfig {
    pub channels: (usize, usize),
    pub kernel: usize,
    pub dense_hidden: usize,
    pub dropout: f64,
    /// Feature subset fed to the model, for feature-contribution ablations.
    pub features: Vec<FeatureKind>,
}

impl Default for MfaanConfig {
    fn default() -> Self {
        Self {
            channels: (64, 128),
            kernel: 3,
            dense_hidden: 256,
            dropout: 0.3,
            features: vec![FeatureKind::Mfcc, FeatureKind::Lfcc, FeatureKind::Chroma],
        }
    }
}

impl MfaanConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.channels.0, self.channels.1, self.kernel, self.dense_hidden].contains(&0) || self.kernel % 2 == 0 {
            return config_err("MFAAN dimensions must be positive with an odd kernel");
        }
        if self.features.is_empty() {
            return config_err("MFAAN needs at least one feature");
        }
        let mut seen = self.features.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.features.len() {
            return config_err("MFAAN feature list has duplicates");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return config_err("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvBranch {
    conv1: Conv2d,
    conv2: Conv2d,
}

/// Binary baseline: a small 2-D CNN per feature, averaged and classified by
/// a dense head.
#[derive(Debug, Clone)]
pub struct Mfaan {
    pub cfg: MfaanConfig,
    branches: Vec<(FeatureKind, ConvBranch)>,
    pub hidden: Linear,
    pub out: Linear,
}

impl Mfaan {
    pub fn new<F: Real>(store: &mut ParamStore<F>, cfg: &MfaanConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (c1, c2) = cfg.channels;
        let pad = cfg.kernel / 2;
        let branches = cfg
            .features
            .iter()
            .map(|&kind| {
                let name = kind.name();
                let branch = ConvBranch {
                    conv1: Conv2d::new(store, &format!("{name}.conv1"), 1, c1, cfg.kernel, pad, rng),
                    conv2: Conv2d::new(store, &format!("{name}.conv2"), c1, c2, cfg.kernel, pad, rng),
                };
                (kind, branch)
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            branches,
            hidden: Linear::new(store, "head.hidden", c2 * cfg.features.len(), cfg.dense_hidden, rng),
            out: Linear::new(store, "head.out", cfg.dense_hidden, 2, rng),
        })
    }

    /// Inputs are `[B, 1, rows, T]` images; returns logits `[B, 2]`.
    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, mfcc: Var, lfcc: Var, chroma: Var) -> Result<Var> {
        let p = self.cfg.dropout;
        let mut pooled = Vec::with_capacity(self.branches.len());
        for (kind, b) in &self.branches {
            let x = match kind {
                FeatureKind::Mfcc => mfcc,
                FeatureKind::Lfcc => lfcc,
                FeatureKind::Chroma => chroma,
            };
            let h = b.conv1.forward(cx, x)?;
            let h = cx.tape.relu(h)?;
            let h = cx.dropout(h, p)?;
            let h = cx.tape.max_pool2d(h, 2)?;
            let h = b.conv2.forward(cx, h)?;
            let h = cx.tape.relu(h)?;
            let h = cx.dropout(h, p)?;
            let h = cx.tape.max_pool2d(h, 2)?;
            pooled.push(cx.tape.adaptive_avg_pool(h)?);
        }
        let joined = cx.tape.concat(&pooled, 1)?;
        let h = self.hidden.forward(cx, joined)?;
        let h = cx.tape.relu(h)?;
        let h = cx.dropout(h, p)?;
        Ok(self.out.forward(cx, h)?)
    }

    pub fn head_params(&self) -> Vec<ParamId> {
        [self.hidden.params(), self.out.params()].concat()
    }
}
