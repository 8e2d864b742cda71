use cafnet_autograd::nn::{BatchNorm, BiLstm, Conv1d, Ctx, Linear, MultiHeadAttention};
use cafnet_autograd::{ParamId, ParamStore, Real, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::features::{N_CEPSTRAL, N_CHROMA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CafNetConfig {
    /// Path widths after the first and second depthwise-separable blocks.
    pub channels: (usize, usize),
    pub depthwise_kernel: usize,
    /// Query/key width of the per-path self-attention.
    pub path_qk_dim: usize,
    /// Set false to ablate the per-path self-attention.
    pub path_attention: bool,
    pub fusion_heads: usize,
    pub main_hidden: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub path_dropout: f64,
    pub head_dropout: f64,
}

impl Default for CafNetConfig {
    fn default() -> Self {
        Self {
            channels: (64, 128),
            depthwise_kernel: 5,
            path_qk_dim: 16,
            path_attention: true,
            fusion_heads: 8,
            main_hidden: 256,
            lstm_layers: 2,
            lstm_hidden: 64,
            path_dropout: 0.2,
            head_dropout: 0.3,
        }
    }
}

impl CafNetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [self.channels.0, self.channels.1, self.depthwise_kernel, self.path_qk_dim, self.fusion_heads, self.main_hidden, self.lstm_layers, self.lstm_hidden];
        if dims.contains(&0) {
            return config_err("CAFNet dimensions must be positive");
        }
        if self.depthwise_kernel % 2 == 0 {
            return config_err("depthwise kernel must be odd to preserve length");
        }
        if self.channels.1 % self.fusion_heads != 0 {
            return config_err(format!("d_model {} not divisible by {} heads", self.channels.1, self.fusion_heads));
        }
        if !(0.0..1.0).contains(&self.path_dropout) || !(0.0..1.0).contains(&self.head_dropout) {
            return config_err("dropout rates must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Depthwise conv, pointwise conv, batch norm, relu, dropout.
#[derive(Debug, Clone)]
struct DsBlock {
    depthwise: Conv1d,
    pointwise: Conv1d,
    bn: BatchNorm,
}

impl DsBlock {
    fn new<F: Real>(store: &mut ParamStore<F>, name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            depthwise: Conv1d::new(store, &format!("{name}.depthwise"), c_in, c_in, k, c_in, rng),
            pointwise: Conv1d::new(store, &format!("{name}.pointwise"), c_in, c_out, 1, 1, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out),
        }
    }

    fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var, dropout: f64) -> Result<Var> {
        let h = self.depthwise.forward(cx, x)?;
        let h = self.pointwise.forward(cx, h)?;
        let h = self.bn.forward(cx, h)?;
        let h = cx.tape.relu(h)?;
        Ok(cx.dropout(h, dropout)?)
    }

    fn params(&self) -> Vec<ParamId> {
        [self.depthwise.params(), self.pointwise.params(), self.bn.params()].concat()
    }
}

/// Per-feature encoder: two DS blocks, gated self-attention over time and a
/// temporal max-pool.
#[derive(Debug, Clone)]
pub struct EnhancedPath {
    block1: DsBlock,
    block2: DsBlock,
    query: Linear,
    key: Linear,
    value: Linear,
    pub gamma: ParamId,
    attention: bool,
}

/// Pre-pool `[B, C, T]` and pooled `[B, C, T/2]` path outputs.
#[derive(Debug, Clone, Copy)]
pub struct PathOutput {
    pub pre_pool: Var,
    pub pooled: Var,
}

impl EnhancedPath {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, c_in: usize, cfg: &CafNetConfig, rng: &mut ChaCha8Rng) -> Self {
        let (c1, c2) = cfg.channels;
        let k = cfg.depthwise_kernel;
        Self {
            block1: DsBlock::new(store, &format!("{name}.ds1"), c_in, c1, k, rng),
            block2: DsBlock::new(store, &format!("{name}.ds2"), c1, c2, k, rng),
            query: Linear::new(store, &format!("{name}.attn.query"), c2, cfg.path_qk_dim, rng),
            key: Linear::new(store, &format!("{name}.attn.key"), c2, cfg.path_qk_dim, rng),
            value: Linear::new(store, &format!("{name}.attn.value"), c2, c2, rng),
            gamma: store.add_param(format!("{name}.attn.gamma"), Tensor::zeros(&[1])),
            attention: cfg.path_attention,
        }
    }

    /// DS-block output before the attention residual, `[B, C, T]`.
    pub fn encode<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var, dropout: f64) -> Result<Var> {
        let h = self.block1.forward(cx, x, dropout)?;
        self.block2.forward(cx, h, dropout)
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var, dropout: f64) -> Result<PathOutput> {
        let h = self.encode(cx, x, dropout)?;
        let pre_pool = if self.attention {
            let seq = cx.tape.transpose12(h)?; // [B, T, C]
            let q = self.query.forward(cx, seq)?;
            let k = self.key.forward(cx, seq)?;
            let v = self.value.forward(cx, seq)?;
            let a = cx.tape.scaled_dot_attention(q, k, v, 1)?;
            let a = cx.tape.transpose12(a)?;
            let gamma = cx.param(self.gamma)?;
            let a = cx.tape.mul_scalar(a, gamma)?;
            cx.tape.add(h, a)?
        } else {
            h
        };
        let pooled = cx.tape.max_pool1d(pre_pool, 2)?;
        Ok(PathOutput { pre_pool, pooled })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = [self.block1.params(), self.block2.params()].concat();
        p.extend(self.query.params());
        p.extend(self.key.params());
        p.extend(self.value.params());
        p.push(self.gamma);
        p
    }
}

/// MFCC-queried cross-attention over LFCC and chroma, plus a softmax gate
/// over the three path means.
#[derive(Debug, Clone)]
pub struct CrossAttentionFusion {
    pub attention: MultiHeadAttention,
    pub gate: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionOutput {
    /// `[B, D]`.
    pub fused: Var,
    /// Gate weights `[B, 3]`.
    pub gate: Var,
}

impl CrossAttentionFusion {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.mha"), d, heads, rng)?,
            gate: Linear::new(store, &format!("{name}.gate"), 3 * d, 3, rng),
            output: Linear::new(store, &format!("{name}.output"), 2 * d, d, rng),
        })
    }

    /// Inputs are pooled path outputs `[B, D, T]`.
    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, m: Var, l: Var, c: Var) -> Result<FusionOutput> {
        let t = &mut *cx.tape;
        let batch = t.shape(m)[0];
        let d = t.shape(m)[1];
        let q = t.transpose12(m)?;
        let lt = t.transpose12(l)?;
        let ct = t.transpose12(c)?;
        let kv = t.concat(&[lt, ct], 1)?; // [B, 2T, D]
        let attended = self.attention.forward(cx, q, kv, kv)?;
        let t = &mut *cx.tape;
        let f = t.mean_axis(attended, 1)?; // [B, D]

        let means = [t.mean_axis(m, 2)?, t.mean_axis(l, 2)?, t.mean_axis(c, 2)?];
        let flat = t.concat(&means, 1)?; // [B, 3D]
        let logits = self.gate.forward(cx, flat)?;
        let t = &mut *cx.tape;
        let gate = t.softmax(logits, 1)?;
        let g = t.reshape(gate, &[batch, 1, 3])?;
        let stacked = t.reshape(flat, &[batch, 3, d])?;
        let gated = t.bmm(g, stacked)?;
        let gated = t.reshape(gated, &[batch, d])?;
        let joined = t.concat(&[f, gated], 1)?;
        let fused = self.output.forward(cx, joined)?;
        Ok(FusionOutput { fused, gate })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.attention.params(), self.gate.params(), self.output.params()].concat()
    }
}

/// Joint ternary classifier and splice localiser.
#[derive(Debug, Clone)]
pub struct CafNet {
    pub cfg: CafNetConfig,
    pub mfcc_path: EnhancedPath,
    pub lfcc_path: EnhancedPath,
    pub chroma_path: EnhancedPath,
    pub fusion: CrossAttentionFusion,
    pub main_hidden: Linear,
    pub main_out: Linear,
    pub aux: Linear,
    pub lstm: BiLstm,
    pub boundary: Linear,
}

/// Batched outputs: main and aux logits `[B, 3]`, boundaries `[B, 2]`.
#[derive(Debug, Clone, Copy)]
pub struct CafNetOutput {
    pub main_logits: Var,
    pub aux_logits: Var,
    pub boundaries: Var,
    pub gate: Var,
}

impl CafNet {
    pub fn new<F: Real>(store: &mut ParamStore<F>, cfg: &CafNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.channels.1;
        Ok(Self {
            cfg: cfg.clone(),
            mfcc_path: EnhancedPath::new(store, "mfcc_path", N_CEPSTRAL, cfg, rng),
            lfcc_path: EnhancedPath::new(store, "lfcc_path", N_CEPSTRAL, cfg, rng),
            chroma_path: EnhancedPath::new(store, "chroma_path", N_CHROMA, cfg, rng),
            fusion: CrossAttentionFusion::new(store, "fusion", d, cfg.fusion_heads, rng)?,
            main_hidden: Linear::new(store, "main_head.hidden", d, cfg.main_hidden, rng),
            main_out: Linear::new(store, "main_head.out", cfg.main_hidden, 3, rng),
            aux: Linear::new(store, "aux_head", d, 3, rng),
            lstm: BiLstm::new(store, "temporal.lstm", 3 * d, cfg.lstm_hidden, cfg.lstm_layers, rng),
            boundary: Linear::new(store, "temporal.boundary", 2 * cfg.lstm_hidden, 2, rng),
        })
    }

    /// `mfcc`, `lfcc`: `[B, 40, T]`; `chroma`: `[B, 12, T]`.
    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, mfcc: Var, lfcc: Var, chroma: Var) -> Result<CafNetOutput> {
        let pd = self.cfg.path_dropout;
        let m = self.mfcc_path.forward(cx, mfcc, pd)?;
        let l = self.lfcc_path.forward(cx, lfcc, pd)?;
        let c = self.chroma_path.forward(cx, chroma, pd)?;
        let fusion = self.fusion.forward(cx, m.pooled, l.pooled, c.pooled)?;

        let h = self.main_hidden.forward(cx, fusion.fused)?;
        let h = cx.tape.relu(h)?;
        let h = cx.dropout(h, self.cfg.head_dropout)?;
        let main_logits = self.main_out.forward(cx, h)?;
        let aux_logits = self.aux.forward(cx, fusion.fused)?;

        let seq = cx.tape.concat(&[m.pre_pool, l.pre_pool, c.pre_pool], 1)?; // [B, 3D, T]
        let seq = cx.tape.transpose12(seq)?;
        let enc = self.lstm.forward(cx, seq)?;
        let pooled = cx.tape.mean_axis(enc, 1)?;
        let b = self.boundary.forward(cx, pooled)?;
        let boundaries = cx.tape.sigmoid(b)?;
        Ok(CafNetOutput { main_logits, aux_logits, boundaries, gate: fusion.gate })
    }

    /// Parameters of the classification and temporal heads plus the fusion
    /// output projection; everything else is backbone.
    pub fn head_params(&self) -> Vec<ParamId> {
        let mut p = self.fusion.output.params();
        p.extend(self.main_hidden.params());
        p.extend(self.main_out.params());
        p.extend(self.aux.params());
        p.extend(self.lstm.params());
        p.extend(self.boundary.params());
        p
    }

    pub fn aux_params(&self) -> Vec<ParamId> {
        self.aux.params()
    }
}
