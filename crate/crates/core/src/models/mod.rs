//! CAFNet and the MFAAN baseline, built on the autograd layers.

mod cafnet;
mod mfaan;

pub use cafnet::{CafNet, CafNetConfig, CafNetOutput, CrossAttentionFusion, EnhancedPath, FusionOutput, PathOutput};
pub use mfaan::{Mfaan, MfaanConfig};

use cafnet_autograd::nn::Ctx;
use cafnet_autograd::{Mode, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ClassLabel;
use crate::error::{invalid, Result};
use crate::features::{FeatureSet, Matrix, N_CEPSTRAL, N_CHROMA, N_FRAMES};

/// Minimum half-truth probability for which predicted boundaries are trusted.
pub const TRUST_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfcc,
    Lfcc,
    Chroma,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 3] = [FeatureKind::Mfcc, FeatureKind::Lfcc, FeatureKind::Chroma];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Lfcc => "lfcc",
            FeatureKind::Chroma => "chroma",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn rows(self) -> usize {
        match self {
            FeatureKind::Chroma => N_CHROMA,
            _ => N_CEPSTRAL,
        }
    }

    pub fn select(self, f: &FeatureSet) -> &Matrix<f32> {
        match self {
            FeatureKind::Mfcc => &f.mfcc,
            FeatureKind::Lfcc => &f.lfcc,
            FeatureKind::Chroma => &f.chroma,
        }
    }
}

/// Stacked feature tensors `[B, rows, T]`, one per kind.
#[derive(Debug, Clone)]
pub struct FeatureBatch<F: Real> {
    pub mfcc: Tensor<F>,
    pub lfcc: Tensor<F>,
    pub chroma: Tensor<F>,
}

impl<F: Real> FeatureBatch<F> {
    pub fn new(items: &[&FeatureSet]) -> Result<Self> {
        if items.is_empty() {
            return invalid("empty feature batch");
        }
        let stack = |kind: FeatureKind| -> Result<Tensor<F>> {
            let rows = kind.rows();
            let mut data = Vec::with_capacity(items.len() * rows * N_FRAMES);
            for f in items {
                let m = kind.select(f);
                if m.shape() != (rows, N_FRAMES) {
                    return invalid(format!("{} has shape {:?}, expected ({rows}, {N_FRAMES})", kind.name(), m.shape()));
                }
                data.extend(m.data.iter().map(|&v| F::from_f64_lossy(v as f64)));
            }
            Ok(Tensor::new(vec![items.len(), rows, N_FRAMES], data))
        };
        Ok(Self { mfcc: stack(FeatureKind::Mfcc)?, lfcc: stack(FeatureKind::Lfcc)?, chroma: stack(FeatureKind::Chroma)? })
    }

    pub fn batch_size(&self) -> usize {
        self.mfcc.shape[0]
    }

    /// Record the three inputs as constants `[B, rows, T]`.
    pub fn sequences(&self, tape: &mut Tape<F>) -> Result<[Var; 3]> {
        Ok([tape.constant(self.mfcc.clone())?, tape.constant(self.lfcc.clone())?, tape.constant(self.chroma.clone())?])
    }

    /// Record the three inputs as one-channel images `[B, 1, rows, T]`.
    pub fn images(&self, tape: &mut Tape<F>) -> Result<[Var; 3]> {
        let img = |t: &Tensor<F>| {
            let mut t = t.clone();
            t.shape.insert(1, 1);
            t
        };
        Ok([tape.constant(img(&self.mfcc))?, tape.constant(img(&self.lfcc))?, tape.constant(img(&self.chroma))?])
    }
}

/// Architecture selector with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Cafnet(CafNetConfig),
    Mfaan(MfaanConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Cafnet(_) => "cafnet",
            ModelSpec::Mfaan(_) => "mfaan",
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            ModelSpec::Cafnet(_) => 3,
            ModelSpec::Mfaan(_) => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Model {
    CafNet(CafNet),
    Mfaan(Mfaan),
}

/// Tape handles for one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub logits: Var,
    pub aux_logits: Option<Var>,
    pub boundaries: Option<Var>,
}

/// Per-clip eval-mode output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub boundaries: Option<[f64; 2]>,
}

impl Prediction {
    pub fn class(&self) -> usize {
        (0..self.probs.len()).max_by(|&a, &b| self.probs[a].total_cmp(&self.probs[b]).then(b.cmp(&a))).unwrap_or(0)
    }
}

impl Model {
    pub fn build<F: Real>(spec: &ModelSpec, store: &mut ParamStore<F>, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Cafnet(c) => Model::CafNet(CafNet::new(store, c, rng)?),
            ModelSpec::Mfaan(c) => Model::Mfaan(Mfaan::new(store, c, rng)?),
        })
    }

    /// Build with a store seeded from `seed`.
    pub fn init<F: Real>(spec: &ModelSpec, seed: u64) -> Result<(Self, ParamStore<F>)> {
        let mut store = ParamStore::new();
        let model = Self::build(spec, &mut store, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok((model, store))
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::CafNet(_) => 3,
            Model::Mfaan(_) => 2,
        }
    }

    pub fn head_params(&self) -> Vec<ParamId> {
        match self {
            Model::CafNet(m) => m.head_params(),
            Model::Mfaan(m) => m.head_params(),
        }
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, batch: &FeatureBatch<F>) -> Result<ModelVars> {
        match self {
            Model::CafNet(net) => {
                let [m, l, c] = batch.sequences(cx.tape)?;
                let out = net.forward(cx, m, l, c)?;
                Ok(ModelVars { logits: out.main_logits, aux_logits: Some(out.aux_logits), boundaries: Some(out.boundaries) })
            }
            Model::Mfaan(net) => {
                let [m, l, c] = batch.images(cx.tape)?;
                Ok(ModelVars { logits: net.forward(cx, m, l, c)?, aux_logits: None, boundaries: None })
            }
        }
    }

    /// Eval-mode inference without recording gradients.
    pub fn predict<F: Real>(&self, store: &mut ParamStore<F>, batch: &FeatureBatch<F>) -> Result<Vec<Prediction>> {
        let mut tape = Tape::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cx = Ctx { tape: &mut tape, store, mode: Mode::Eval, rng: &mut rng };
        let vars = self.forward(&mut cx, batch)?;
        let logits: Vec<f64> = tape.value(vars.logits).iter().map(|v| v.as_f64()).collect();
        let probs = softmax_rows(&logits, self.n_classes());
        let bounds: Option<Vec<f64>> = vars.boundaries.map(|b| tape.value(b).iter().map(|v| v.as_f64()).collect());
        Ok(probs
            .into_iter()
            .enumerate()
            .map(|(i, probs)| Prediction { probs, boundaries: bounds.as_ref().map(|b| [b[2 * i], b[2 * i + 1]]) })
            .collect())
    }
}

/// Row-wise softmax of `[B, C]` logits, in 64-bit.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<Vec<f64>> {
    logits
        .chunks(classes)
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Boundaries are trusted iff the half-truth probability is at least 0.5.
pub fn trust_gate(probs: &[f64; 3]) -> bool {
    probs[ClassLabel::HalfTruth.index()] >= TRUST_THRESHOLD
}
