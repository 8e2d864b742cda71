use crate::error::{shape_err, Result};
use crate::ops::activation::softmax_strided;
use crate::real::{gemm, MatMut, MatRef, Real};
use crate::tape::{Backward, Grads, Tape, Values, Var};

#[derive(Clone, Copy)]
struct AttnGeom {
    batch: usize,
    heads: usize,
    tq: usize,
    tk: usize,
    d: usize,
    dv: usize,
}

impl AttnGeom {
    fn q_off(&self, b: usize, h: usize) -> usize {
        b * self.tq * self.heads * self.d + h * self.d
    }
    fn k_off(&self, b: usize, h: usize) -> usize {
        b * self.tk * self.heads * self.d + h * self.d
    }
    fn v_off(&self, b: usize, h: usize) -> usize {
        b * self.tk * self.heads * self.dv + h * self.dv
    }
    fn o_off(&self, b: usize, h: usize) -> usize {
        b * self.tq * self.heads * self.dv + h * self.dv
    }
    fn p_off(&self, b: usize, h: usize) -> usize {
        (b * self.heads + h) * self.tq * self.tk
    }
}

struct AttentionOp<F> {
    q: Var,
    k: Var,
    v: Var,
    geo: AttnGeom,
    scale: F,
    /// Softmax weights for every (batch, head), `[Tq, Tk]` each.
    probs: Vec<F>,
}

impl<F: Real> Backward<F> for AttentionOp<F> {
    fn backward(&self, _out: Var, g: &[F], vals: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let geo = self.geo;
        let (q, k, v) = (vals.get(self.q), vals.get(self.k), vals.get(self.v));
        let (dm, dvm) = (geo.heads * geo.d, geo.heads * geo.dv);
        let mut dp = vec![F::zero(); geo.tq * geo.tk];
        for b in 0..geo.batch {
            for h in 0..geo.heads {
                let p_off = geo.p_off(b, h);
                let p = MatRef::new(&self.probs, p_off, geo.tq, geo.tk);
                let d_out = MatRef::strided(g, geo.o_off(b, h), geo.tq, geo.dv, dvm, 1);
                if let Some(gv) = grads.slot(self.v) {
                    gemm(F::one(), p.t(), d_out, F::one(), MatMut::strided(gv, geo.v_off(b, h), geo.tk, geo.dv, dvm, 1));
                }
                if !grads.wants(self.q) && !grads.wants(self.k) {
                    continue;
                }
                gemm(
                    F::one(),
                    d_out,
                    MatRef::strided(v, geo.v_off(b, h), geo.tk, geo.dv, dvm, 1).t(),
                    F::zero(),
                    MatMut::new(&mut dp, 0, geo.tq, geo.tk),
                );
                for i in 0..geo.tq {
                    let row = &mut dp[i * geo.tk..(i + 1) * geo.tk];
                    let prow = &self.probs[p_off + i * geo.tk..p_off + (i + 1) * geo.tk];
                    let dot: F = row.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                    for (r, &pv) in row.iter_mut().zip(prow) {
                        *r = pv * (*r - dot);
                    }
                }
                let ds = MatRef::new(&dp, 0, geo.tq, geo.tk);
                if let Some(gq) = grads.slot(self.q) {
                    gemm(
                        self.scale,
                        ds,
                        MatRef::strided(k, geo.k_off(b, h), geo.tk, geo.d, dm, 1),
                        F::one(),
                        MatMut::strided(gq, geo.q_off(b, h), geo.tq, geo.d, dm, 1),
                    );
                }
                if let Some(gk) = grads.slot(self.k) {
                    gemm(
                        self.scale,
                        ds.t(),
                        MatRef::strided(q, geo.q_off(b, h), geo.tq, geo.d, dm, 1),
                        F::one(),
                        MatMut::strided(gk, geo.k_off(b, h), geo.tk, geo.d, dm, 1),
                    );
                }
            }
        }
    }
}

impl<F: Real> Tape<F> {
    /// `softmax(Q K^T / sqrt(d)) V`, computed independently for each of
    /// `heads` equal slices of the feature axis.
    ///
    /// `q: [B, Tq, H*d]`, `k: [B, Tk, H*d]`, `v: [B, Tk, H*dv]`, output
    /// `[B, Tq, H*dv]` with the heads concatenated in order.
    pub fn scaled_dot_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (qs, ks, vs) = (self.shape(q).to_vec(), self.shape(k).to_vec(), self.shape(v).to_vec());
        if qs.len() != 3 || ks.len() != 3 || vs.len() != 3 {
            return shape_err("scaled_dot_attention", format!("q {qs:?}, k {ks:?}, v {vs:?}"));
        }
        if qs[0] != ks[0] || ks[0] != vs[0] || qs[2] != ks[2] || ks[1] != vs[1] {
            return shape_err("scaled_dot_attention", format!("q {qs:?}, k {ks:?}, v {vs:?}"));
        }
        if heads == 0 || qs[2] % heads != 0 || vs[2] % heads != 0 || ks[1] == 0 {
            return shape_err("scaled_dot_attention", format!("{heads} heads for widths {} / {}", qs[2], vs[2]));
        }
        let geo = AttnGeom { batch: qs[0], heads, tq: qs[1], tk: ks[1], d: qs[2] / heads, dv: vs[2] / heads };
        let scale = F::one() / F::from_usize(geo.d).unwrap().sqrt();
        let (dm, dvm) = (heads * geo.d, heads * geo.dv);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![F::zero(); geo.batch * heads * geo.tq * geo.tk];
        let mut out = vec![F::zero(); geo.batch * geo.tq * dvm];
        for b in 0..geo.batch {
            for h in 0..heads {
                let p_off = geo.p_off(b, h);
                gemm(
                    scale,
                    MatRef::strided(qv, geo.q_off(b, h), geo.tq, geo.d, dm, 1),
                    MatRef::strided(kv, geo.k_off(b, h), geo.tk, geo.d, dm, 1).t(),
                    F::zero(),
                    MatMut::new(&mut probs, p_off, geo.tq, geo.tk),
                );
                for i in 0..geo.tq {
                    let base = p_off + i * geo.tk;
                    let row: Vec<F> = probs[base..base + geo.tk].to_vec();
                    softmax_strided(&row, &mut probs[base..base + geo.tk], 0, geo.tk, 1);
                }
                gemm(
                    F::one(),
                    MatRef::new(&probs, p_off, geo.tq, geo.tk),
                    MatRef::strided(vv, geo.v_off(b, h), geo.tk, geo.dv, dvm, 1),
                    F::zero(),
                    MatMut::strided(&mut out, geo.o_off(b, h), geo.tq, geo.dv, dvm, 1),
                );
            }
        }
        let shape = vec![geo.batch, geo.tq, dvm];
        self.push("scaled_dot_attention", shape, out, &[q, k, v], AttentionOp { q, k, v, geo, scale, probs })
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::{Tape, Tensor};

    #[test]
    fn equal_scores_average_values() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::new(vec![1, 2, 2], vec![0.0; 4])).unwrap();
        let k = tape.constant(Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let v = tape.constant(Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 6.0])).unwrap();
        let o = tape.scaled_dot_attention(q, k, v, 1).unwrap();
        for &x in tape.value(o) {
            assert!((x - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::new(vec![1, 1, 2], vec![0.3, -7.0])).unwrap();
        let k = tape.constant(Tensor::new(vec![1, 1, 2], vec![9.0, 1.5])).unwrap();
        let v = tape.constant(Tensor::new(vec![1, 1, 3], vec![1.0, -2.0, 0.5])).unwrap();
        let o = tape.scaled_dot_attention(q, k, v, 1).unwrap();
        assert_eq!(tape.value(o), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let q = tape.constant(Tensor::zeros(&[1, 2, 4])).unwrap();
        let k = tape.constant(Tensor::zeros(&[1, 3, 3])).unwrap();
        let v = tape.constant(Tensor::zeros(&[1, 3, 2])).unwrap();
        assert!(tape.scaled_dot_attention(q, k, v, 1).is_err());
    }
}
