//! Parameterised layers built from tape primitives.
//!
//! Layers only hold [`ParamId`]s; values live in a [`ParamStore`] so a model
//! can be cast to 64-bit for gradient checks or reloaded from a checkpoint.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Result};
use crate::ops::norm::RunningStats;
use crate::params::{ParamId, ParamStore};
use crate::real::Real;
use crate::tape::{Tape, Tensor, Var};
use crate::Mode;

/// Everything a layer needs during one forward pass.
pub struct Ctx<'a, F: Real> {
    pub tape: &'a mut Tape<F>,
    pub store: &'a mut ParamStore<F>,
    pub mode: Mode,
    pub rng: &'a mut ChaCha8Rng,
}

impl<F: Real> Ctx<'_, F> {
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        self.tape.param(self.store, id)
    }

    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        self.tape.dropout(x, p, self.rng, self.mode)
    }
}

/// `U(-bound, bound)` tensor.
pub fn uniform<F: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| F::from_f64_lossy(rng.random_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data)
}

fn filled<F: Real>(shape: &[usize], v: f64) -> Tensor<F> {
    Tensor::new(shape.to_vec(), vec![F::from_f64_lossy(v); shape.iter().product()])
}

/// Dense layer `x W + b`, `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add_param(format!("{name}.weight"), uniform(&[fan_in, fan_out], bound, rng));
        let b = store.add_param(format!("{name}.bias"), uniform(&[fan_out], bound, rng));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (w, b) = (cx.param(self.w)?, cx.param(self.b)?);
        cx.tape.affine(x, w, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// Grouped 1-D convolution with "same" padding for odd kernels.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub groups: usize,
    pub padding: usize,
}

impl Conv1d {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        groups: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in / groups * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add_param(format!("{name}.weight"), uniform(&[c_out, c_in / groups, kernel], bound, rng));
        let b = store.add_param(format!("{name}.bias"), uniform(&[c_out], bound, rng));
        Self { w, b, groups, padding: kernel / 2 }
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (w, b) = (cx.param(self.w)?, cx.param(self.b)?);
        cx.tape.conv1d(x, w, b, self.groups, self.padding)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub padding: usize,
}

impl Conv2d {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        padding: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / ((c_in * kernel * kernel) as f64).sqrt();
        let w = store.add_param(format!("{name}.weight"), uniform(&[c_out, c_in, kernel, kernel], bound, rng));
        let b = store.add_param(format!("{name}.bias"), uniform(&[c_out], bound, rng));
        Self { w, b, padding }
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (w, b) = (cx.param(self.w)?, cx.param(self.b)?);
        cx.tape.conv2d(x, w, b, self.padding)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// Batch normalisation with running statistics kept as store buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batches: ParamId,
}

impl BatchNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: store.add_param(format!("{name}.weight"), filled(&[channels], 1.0)),
            beta: store.add_param(format!("{name}.bias"), filled(&[channels], 0.0)),
            running_mean: store.add_buffer(format!("{name}.running_mean"), filled(&[channels], 0.0)),
            running_var: store.add_buffer(format!("{name}.running_var"), filled(&[channels], 1.0)),
            batches: store.add_buffer(format!("{name}.num_batches_tracked"), filled(&[1], 0.0)),
        }
    }

    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let (g, b) = (cx.param(self.gamma)?, cx.param(self.beta)?);
        let mut stats = RunningStats {
            mean: cx.store.value(self.running_mean).data.clone(),
            var: cx.store.value(self.running_var).data.clone(),
            batches: cx.store.value(self.batches).data[0].as_f64() as u64,
        };
        let y = cx.tape.batch_norm(x, g, b, &mut stats, &self.name, cx.mode)?;
        if cx.mode == Mode::Train {
            cx.store.value_mut(self.running_mean).data = stats.mean;
            cx.store.value_mut(self.running_var).data = stats.var;
            cx.store.value_mut(self.batches).data[0] = F::from_f64_lossy(stats.batches as f64);
        }
        Ok(y)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gamma, self.beta]
    }
}

/// Multi-head attention with learned input and output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return shape_err("multi_head_attention", format!("d_model {d_model} not divisible by {heads} heads"));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q_proj"), d_model, d_model, rng),
            k: Linear::new(store, &format!("{name}.k_proj"), d_model, d_model, rng),
            v: Linear::new(store, &format!("{name}.v_proj"), d_model, d_model, rng),
            out: Linear::new(store, &format!("{name}.out_proj"), d_model, d_model, rng),
            heads,
            d_model,
        })
    }

    /// `query: [B, Tq, D]`, `key`/`value: [B, Tk, D]` -> `[B, Tq, D]`.
    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, query: Var, key: Var, value: Var) -> Result<Var> {
        let q = self.q.forward(cx, query)?;
        let k = self.k.forward(cx, key)?;
        let v = self.v.forward(cx, value)?;
        let a = cx.tape.scaled_dot_attention(q, k, v, self.heads)?;
        self.out.forward(cx, a)
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.out].iter().flat_map(|l| l.params()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct LstmCellParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl LstmCellParams {
    fn new<F: Real>(store: &mut ParamStore<F>, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: store.add_param(format!("{name}.weight_ih"), uniform(&[input, 4 * hidden], bound, rng)),
            w_hh: store.add_param(format!("{name}.weight_hh"), uniform(&[hidden, 4 * hidden], bound, rng)),
            b_ih: store.add_param(format!("{name}.bias_ih"), uniform(&[4 * hidden], bound, rng)),
            b_hh: store.add_param(format!("{name}.bias_hh"), uniform(&[4 * hidden], bound, rng)),
        }
    }

    fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var, reverse: bool) -> Result<Var> {
        let w_ih = cx.param(self.w_ih)?;
        let w_hh = cx.param(self.w_hh)?;
        let b_ih = cx.param(self.b_ih)?;
        let b_hh = cx.param(self.b_hh)?;
        cx.tape.lstm_direction(x, w_ih, w_hh, b_ih, b_hh, reverse)
    }

    fn params(&self) -> Vec<ParamId> {
        vec![self.w_ih, self.w_hh, self.b_ih, self.b_hh]
    }
}

/// Stacked bidirectional LSTM; each layer concatenates forward and backward
/// outputs per step.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub layers: Vec<(LstmCellParams, LstmCellParams)>,
    pub hidden: usize,
}

impl BiLstm {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        input: usize,
        hidden: usize,
        layers: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (
                    LstmCellParams::new(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng),
                    LstmCellParams::new(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng),
                )
            })
            .collect();
        Self { layers, hidden }
    }

    /// `x: [B, T, I]` -> `[B, T, 2H]`.
    pub fn forward<F: Real>(&self, cx: &mut Ctx<'_, F>, x: Var) -> Result<Var> {
        let mut h = x;
        for (fwd, bwd) in &self.layers {
            let a = fwd.forward(cx, h, false)?;
            let b = bwd.forward(cx, h, true)?;
            h = cx.tape.concat(&[a, b], 2)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|(a, b)| a.params().into_iter().chain(b.params())).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn mha_parameter_count() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        MultiHeadAttention::new(&mut store, "mha", 128, 8, &mut rng).unwrap();
        assert_eq!(store.count_params(), 66_048);
        assert!(MultiHeadAttention::new(&mut ParamStore::<f32>::new(), "x", 128, 6, &mut rng).is_err());
    }

    #[test]
    fn bilstm_parameter_count() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        BiLstm::new(&mut store, "lstm", 384, 64, 2, &mut rng);
        let want = 2 * (4 * 64 * (384 + 64) + 8 * 64) + 2 * (4 * 64 * (128 + 64) + 8 * 64);
        assert_eq!(want, 329_728);
        assert_eq!(store.count_params(), want);
    }

    #[test]
    fn mha_output_shape() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mha = MultiHeadAttention::new(&mut store, "mha", 16, 4, &mut rng).unwrap();
        let mut tape = Tape::<f32>::new();
        let q = tape.constant(uniform(&[2, 3, 16], 1.0, &mut rng)).unwrap();
        let kv = tape.constant(uniform(&[2, 7, 16], 1.0, &mut rng)).unwrap();
        let mut cx = Ctx { tape: &mut tape, store: &mut store, mode: Mode::Eval, rng: &mut rng };
        let y = mha.forward(&mut cx, q, kv, kv).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 16]);
    }

    #[test]
    fn linear_single_affine_count() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Linear::new(&mut store, "fc", 10, 3, &mut rng);
        assert_eq!(store.count_params(), 33);
    }
}
