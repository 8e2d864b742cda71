//! Elementwise arithmetic, reductions and shape plumbing.

use crate::error::{shape_err, Result};
use crate::real::{gemm, MatMut, MatRef, Real};
use crate::tape::{Backward, Grads, Tape, Values, Var};

struct AddOp {
    a: Var,
    b: Var,
}

impl<F: Real> Backward<F> for AddOp {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        grads.add(self.a, g);
        grads.add(self.b, g);
    }
}

struct MulOp {
    a: Var,
    b: Var,
}

impl<F: Real> Backward<F> for MulOp {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let (a, b) = (v.get(self.a), v.get(self.b));
        if let Some(ga) = grads.slot(self.a) {
            for i in 0..g.len() {
                ga[i] += g[i] * b[i];
            }
        }
        if let Some(gb) = grads.slot(self.b) {
            for i in 0..g.len() {
                gb[i] += g[i] * a[i];
            }
        }
    }
}

struct ScaleOp<F> {
    x: Var,
    c: F,
}

impl<F: Real> Backward<F> for ScaleOp<F> {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        if let Some(gx) = grads.slot(self.x) {
            for (a, &d) in gx.iter_mut().zip(g) {
                *a += self.c * d;
            }
        }
    }
}

/// `x * s` where `s` holds a single learnable value.
struct MulScalarOp {
    x: Var,
    s: Var,
}

impl<F: Real> Backward<F> for MulScalarOp {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let s = v.get(self.s)[0];
        if grads.wants(self.s) {
            let x = v.get(self.x);
            let acc: F = g.iter().zip(x).map(|(&a, &b)| a * b).sum();
            grads.slot(self.s).unwrap()[0] += acc;
        }
        if let Some(gx) = grads.slot(self.x) {
            for (a, &d) in gx.iter_mut().zip(g) {
                *a += s * d;
            }
        }
    }
}

struct SumOp {
    x: Var,
}

impl<F: Real> Backward<F> for SumOp {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        if let Some(gx) = grads.slot(self.x) {
            gx.iter_mut().for_each(|a| *a += g[0]);
        }
    }
}

/// Mean over one axis, viewed as `[outer, len, inner]`.
struct MeanAxisOp {
    x: Var,
    outer: usize,
    len: usize,
    inner: usize,
}

impl<F: Real> Backward<F> for MeanAxisOp {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let Some(gx) = grads.slot(self.x) else { return };
        let scale = F::one() / F::from_usize(self.len).unwrap();
        for o in 0..self.outer {
            for l in 0..self.len {
                let base = (o * self.len + l) * self.inner;
                for i in 0..self.inner {
                    gx[base + i] += g[o * self.inner + i] * scale;
                }
            }
        }
    }
}

struct ReshapeOp {
    x: Var,
}

impl<F: Real> Backward<F> for ReshapeOp {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        grads.add(self.x, g);
    }
}

/// Swap the last two axes of a `[B, M, N]` tensor.
struct TransposeOp {
    x: Var,
    batch: usize,
    m: usize,
    n: usize,
}

impl<F: Real> Backward<F> for TransposeOp {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let Some(gx) = grads.slot(self.x) else { return };
        let (m, n) = (self.m, self.n);
        for b in 0..self.batch {
            let base = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    gx[base + i * n + j] += g[base + j * m + i];
                }
            }
        }
    }
}

/// Concatenation along one axis; `parts` hold each input's extent on that axis.
struct ConcatOp {
    inputs: Vec<Var>,
    parts: Vec<usize>,
    outer: usize,
    inner: usize,
}

impl<F: Real> Backward<F> for ConcatOp {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let total: usize = self.parts.iter().sum();
        let mut offset = 0;
        for (&x, &len) in self.inputs.iter().zip(&self.parts) {
            if let Some(gx) = grads.slot(x) {
                for o in 0..self.outer {
                    let src = (o * total + offset) * self.inner;
                    let dst = o * len * self.inner;
                    for i in 0..len * self.inner {
                        gx[dst + i] += g[src + i];
                    }
                }
            }
            offset += len;
        }
    }
}

/// Batched matrix product `[B, M, K] x [B, K, N]`.
struct BmmOp {
    a: Var,
    b: Var,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

impl<F: Real> Backward<F> for BmmOp {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let (bs, m, k, n) = (self.batch, self.m, self.k, self.n);
        if grads.wants(self.a) {
            let b = v.get(self.b);
            let ga = grads.slot(self.a).unwrap();
            for i in 0..bs {
                // dA = dC * B^T
                gemm(
                    F::one(),
                    MatRef::new(g, i * m * n, m, n),
                    MatRef::new(b, i * k * n, k, n).t(),
                    F::one(),
                    MatMut::new(ga, i * m * k, m, k),
                );
            }
        }
        if grads.wants(self.b) {
            let a = v.get(self.a);
            let gb = grads.slot(self.b).unwrap();
            for i in 0..bs {
                // dB = A^T * dC
                gemm(
                    F::one(),
                    MatRef::new(a, i * m * k, m, k).t(),
                    MatRef::new(g, i * m * n, m, n),
                    F::one(),
                    MatMut::new(gb, i * k * n, k, n),
                );
            }
        }
    }
}

impl<F: Real> Tape<F> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let value: Vec<F> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push("add", shape, value, &[a, b], AddOp { a, b })
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let value: Vec<F> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push("mul", shape, value, &[a, b], MulOp { a, b })
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let value: Vec<F> = self.value(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push("scale", shape, value, &[x], ScaleOp { x, c })
    }

    /// Multiply every element of `x` by the single value held in `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return shape_err("mul_scalar", format!("scalar operand has shape {:?}", self.shape(s)));
        }
        let sv = self.value(s)[0];
        let value: Vec<F> = self.value(x).iter().map(|&v| v * sv).collect();
        let shape = self.shape(x).to_vec();
        self.push("mul_scalar", shape, value, &[x, s], MulScalarOp { x, s })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: F = self.value(x).iter().copied().sum();
        self.push("sum", vec![], vec![total], &[x], SumOp { x })
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return shape_err("mean_axis", format!("axis {axis} of {shape:?}"));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let xv = self.value(x);
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xv[base + i];
                }
            }
        }
        let scale = F::one() / F::from_usize(len).unwrap();
        out.iter_mut().for_each(|v| *v *= scale);
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        self.push("mean_axis", new_shape, out, &[x], MeanAxisOp { x, outer, len, inner })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x)));
        }
        let value = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), value, &[x], ReshapeOp { x })
    }

    /// Swap the last two axes of a rank-3 tensor: `[B, M, N] -> [B, N, M]`.
    pub fn transpose12(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return shape_err("transpose12", format!("expected rank 3, got {shape:?}"));
        }
        let (batch, m, n) = (shape[0], shape[1], shape[2]);
        let xv = self.value(x);
        let mut out = vec![F::zero(); xv.len()];
        for b in 0..batch {
            let base = b * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[base + j * m + i] = xv[base + i * n + j];
                }
            }
        }
        self.push("transpose12", vec![batch, n, m], out, &[x], TransposeOp { x, batch, m, n })
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} of {base:?}"));
        }
        let mut parts = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err("concat", format!("{s:?} vs {base:?} on axis {axis}"));
            }
            parts.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = parts.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &len) in inputs.iter().zip(&parts) {
                let xv = self.value(x);
                out.extend_from_slice(&xv[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", shape, out, inputs, ConcatOp { inputs: inputs.to_vec(), parts, outer, inner })
    }

    /// Batched matrix product `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return shape_err("bmm", format!("{sa:?} x {sb:?}"));
        }
        let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![F::zero(); batch * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for i in 0..batch {
            gemm(
                F::one(),
                MatRef::new(av, i * m * k, m, k),
                MatRef::new(bv, i * k * n, k, n),
                F::zero(),
                MatMut::new(&mut out, i * m * n, m, n),
            );
        }
        self.push("bmm", vec![batch, m, n], out, &[a, b], BmmOp { a, b, batch, m, k, n })
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::{Tape, Tensor};

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, -3.0, 0.5, 2.0]), true).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]), true).unwrap();
        let y = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.5, 4.0]), true).unwrap();
        let p = tape.mul(x, y).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[-1.0, 0.5, 4.0]);
        assert_eq!(tape.grad(y).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_and_mean_shapes() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::new(vec![1, 2, 3], vec![1.0; 6])).unwrap();
        let b = tape.constant(Tensor::new(vec![1, 1, 3], vec![4.0; 3])).unwrap();
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.shape(c), &[1, 3, 3]);
        let m = tape.mean_axis(c, 1).unwrap();
        assert_eq!(tape.value(m), &[2.0, 2.0, 2.0]);
        assert!(tape.concat(&[a, b], 2).is_err());
    }

    #[test]
    fn transpose_round_trip() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::new(vec![1, 2, 3], (0..6).map(|x| x as f32).collect())).unwrap();
        let t = tape.transpose12(a).unwrap();
        assert_eq!(tape.value(t), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let back = tape.transpose12(t).unwrap();
        assert_eq!(tape.value(back), tape.value(a));
    }
}
