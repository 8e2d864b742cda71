//! Pointwise nonlinearities, dropout and softmax.

use rand::Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::real::Real;
use crate::tape::{Backward, Grads, Tape, Values, Var};
use crate::Mode;

struct ReluOp {
    x: Var,
}

impl<F: Real> Backward<F> for ReluOp {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let x = v.get(self.x);
        if let Some(gx) = grads.slot(self.x) {
            for i in 0..g.len() {
                if x[i] > F::zero() {
                    gx[i] += g[i];
                }
            }
        }
    }
}

struct SigmoidOp {
    x: Var,
}

impl<F: Real> Backward<F> for SigmoidOp {
    fn backward(&self, out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let y = v.get(out);
        if let Some(gx) = grads.slot(self.x) {
            for i in 0..g.len() {
                gx[i] += g[i] * y[i] * (F::one() - y[i]);
            }
        }
    }
}

struct TanhOp {
    x: Var,
}

impl<F: Real> Backward<F> for TanhOp {
    fn backward(&self, out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let y = v.get(out);
        if let Some(gx) = grads.slot(self.x) {
            for i in 0..g.len() {
                gx[i] += g[i] * (F::one() - y[i] * y[i]);
            }
        }
    }
}

struct DropoutOp<F> {
    x: Var,
    /// 0 for dropped entries, 1/(1-p) for survivors.
    mask: Vec<F>,
}

impl<F: Real> Backward<F> for DropoutOp<F> {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        if let Some(gx) = grads.slot(self.x) {
            for i in 0..g.len() {
                gx[i] += g[i] * self.mask[i];
            }
        }
    }
}

struct SoftmaxOp {
    x: Var,
    outer: usize,
    len: usize,
    inner: usize,
}

impl<F: Real> Backward<F> for SoftmaxOp {
    fn backward(&self, out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let y = v.get(out);
        let Some(gx) = grads.slot(self.x) else { return };
        for o in 0..self.outer {
            for i in 0..self.inner {
                let idx = |l: usize| (o * self.len + l) * self.inner + i;
                let dot: F = (0..self.len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                for l in 0..self.len {
                    gx[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                }
            }
        }
    }
}

pub(crate) fn sigmoid_scalar<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Numerically stable softmax over `len` elements spaced `stride` apart.
pub(crate) fn softmax_strided<F: Real>(src: &[F], dst: &mut [F], base: usize, len: usize, stride: usize) {
    let mut max = F::neg_infinity();
    for l in 0..len {
        max = max.max(src[base + l * stride]);
    }
    let mut total = F::zero();
    for l in 0..len {
        let e = (src[base + l * stride] - max).exp();
        dst[base + l * stride] = e;
        total += e;
    }
    for l in 0..len {
        dst[base + l * stride] /= total;
    }
}

impl<F: Real> Tape<F> {
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value: Vec<F> = self.value(x).iter().map(|&v| v.max(F::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push("relu", shape, value, &[x], ReluOp { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value: Vec<F> = self.value(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push("sigmoid", shape, value, &[x], SigmoidOp { x })
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value: Vec<F> = self.value(x).iter().map(|&v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        self.push("tanh", shape, value, &[x], TanhOp { x })
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R, mode: Mode) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return arg_err("dropout", format!("p = {p} outside [0, 1)"));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = F::from_f64_lossy(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<F> = (0..n).map(|_| if rng.random::<f64>() < p { F::zero() } else { keep }).collect();
        let value: Vec<F> = self.value(x).iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let shape = self.shape(x).to_vec();
        self.push("dropout", shape, value, &[x], DropoutOp { x, mask })
    }

    /// Softmax along `axis`, stabilised by subtracting the maximum.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return shape_err("softmax", format!("axis {axis} of {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![F::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                softmax_strided(xv, &mut out, o * len * inner + i, len, inner);
            }
        }
        self.push("softmax", shape, out, &[x], SoftmaxOp { x, outer, len, inner })
    }
}
