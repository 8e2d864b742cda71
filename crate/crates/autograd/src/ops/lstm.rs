//! One direction of an LSTM layer as a single fused primitive with full
//! backpropagation through time.
//!
//! Gate layout along the `4H` axis is `[input, forget, cell, output]`.

use crate::error::{shape_err, Result};
use crate::ops::activation::sigmoid_scalar;
use crate::real::{gemm, MatMut, MatRef, Real};
use crate::tape::{Backward, Grads, Tape, Values, Var};

#[derive(Clone, Copy)]
struct LstmGeom {
    batch: usize,
    steps: usize,
    input: usize,
    hidden: usize,
    reverse: bool,
}

impl LstmGeom {
    /// Time index processed at sweep position `s`.
    fn time(&self, s: usize) -> usize {
        if self.reverse {
            self.steps - 1 - s
        } else {
            s
        }
    }
}

struct LstmOp<F> {
    x: Var,
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    geo: LstmGeom,
    /// Post-activation gates `[B, T, 4H]`.
    acts: Vec<F>,
    /// Cell states `[B, T, H]`.
    cell: Vec<F>,
    /// `tanh(cell)`.
    tanh_cell: Vec<F>,
}

impl<F: Real> Backward<F> for LstmOp<F> {
    fn backward(&self, out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let geo = self.geo;
        let (bsz, steps, hid) = (geo.batch, geo.steps, geo.hidden);
        let g4 = 4 * hid;
        let h_all = v.get(out);
        let w_hh = v.get(self.w_hh);
        let mut d_act = vec![F::zero(); bsz * steps * g4];
        let mut dh_next = vec![F::zero(); bsz * hid];
        let mut dc_next = vec![F::zero(); bsz * hid];
        for s in (0..steps).rev() {
            let t = geo.time(s);
            let t_prev = if s > 0 { Some(geo.time(s - 1)) } else { None };
            for b in 0..bsz {
                let hb = (b * steps + t) * hid;
                let ab = (b * steps + t) * g4;
                for j in 0..hid {
                    let ig = self.acts[ab + j];
                    let fg = self.acts[ab + hid + j];
                    let cg = self.acts[ab + 2 * hid + j];
                    let og = self.acts[ab + 3 * hid + j];
                    let tc = self.tanh_cell[hb + j];
                    let dh = g[hb + j] + dh_next[b * hid + j];
                    let d_o = dh * tc;
                    let dc = dc_next[b * hid + j] + dh * og * (F::one() - tc * tc);
                    let c_prev = match t_prev {
                        Some(tp) => self.cell[(b * steps + tp) * hid + j],
                        None => F::zero(),
                    };
                    d_act[ab + j] = dc * cg * ig * (F::one() - ig);
                    d_act[ab + hid + j] = dc * c_prev * fg * (F::one() - fg);
                    d_act[ab + 2 * hid + j] = dc * ig * (F::one() - cg * cg);
                    d_act[ab + 3 * hid + j] = d_o * og * (F::one() - og);
                    dc_next[b * hid + j] = dc * fg;
                }
            }
            if s > 0 {
                gemm(
                    F::one(),
                    MatRef::strided(&d_act, t * g4, bsz, g4, steps * g4, 1),
                    MatRef::new(w_hh, 0, hid, g4).t(),
                    F::zero(),
                    MatMut::new(&mut dh_next, 0, bsz, hid),
                );
            }
        }
        let rows = bsz * steps;
        let d_act_m = MatRef::new(&d_act, 0, rows, g4);
        if grads.wants(self.b_ih) || grads.wants(self.b_hh) {
            let mut db = vec![F::zero(); g4];
            for r in 0..rows {
                for (acc, &d) in db.iter_mut().zip(&d_act[r * g4..(r + 1) * g4]) {
                    *acc += d;
                }
            }
            grads.add(self.b_ih, &db);
            grads.add(self.b_hh, &db);
        }
        if grads.wants(self.w_hh) {
            let mut h_prev = vec![F::zero(); rows * hid];
            for s in 1..steps {
                let (t, tp) = (geo.time(s), geo.time(s - 1));
                for b in 0..bsz {
                    let dst = (b * steps + t) * hid;
                    let src = (b * steps + tp) * hid;
                    h_prev[dst..dst + hid].copy_from_slice(&h_all[src..src + hid]);
                }
            }
            let gw = grads.slot(self.w_hh).unwrap();
            gemm(F::one(), MatRef::new(&h_prev, 0, rows, hid).t(), d_act_m, F::one(), MatMut::new(gw, 0, hid, g4));
        }
        if grads.wants(self.w_ih) {
            let x = v.get(self.x);
            let gw = grads.slot(self.w_ih).unwrap();
            gemm(F::one(), MatRef::new(x, 0, rows, geo.input).t(), d_act_m, F::one(), MatMut::new(gw, 0, geo.input, g4));
        }
        if grads.wants(self.x) {
            let w_ih = v.get(self.w_ih);
            let gx = grads.slot(self.x).unwrap();
            gemm(F::one(), d_act_m, MatRef::new(w_ih, 0, geo.input, g4).t(), F::one(), MatMut::new(gx, 0, rows, geo.input));
        }
    }
}

impl<F: Real> Tape<F> {
    /// Single-direction LSTM over `x: [B, T, I]` with zero initial state.
    ///
    /// `w_ih: [I, 4H]`, `w_hh: [H, 4H]`, `b_ih, b_hh: [4H]`. With `reverse`
    /// the sequence is consumed from the last step to the first; the output
    /// `[B, T, H]` is always indexed by original time.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_direction(
        &mut self,
        x: Var,
        w_ih: Var,
        w_hh: Var,
        b_ih: Var,
        b_hh: Var,
        reverse: bool,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let wi = self.shape(w_ih).to_vec();
        let wh = self.shape(w_hh).to_vec();
        if xs.len() != 3 || wi.len() != 2 || wh.len() != 2 || xs[1] == 0 {
            return shape_err("lstm", format!("x {xs:?}, w_ih {wi:?}, w_hh {wh:?}"));
        }
        let (bsz, steps, input) = (xs[0], xs[1], xs[2]);
        let hid = wh[0];
        let g4 = 4 * hid;
        if wi != [input, g4] || wh != [hid, g4] || self.shape(b_ih) != [g4] || self.shape(b_hh) != [g4] {
            return shape_err("lstm", format!("x {xs:?}, w_ih {wi:?}, w_hh {wh:?}"));
        }
        let geo = LstmGeom { batch: bsz, steps, input, hidden: hid, reverse };
        let rows = bsz * steps;
        let mut acts = Vec::with_capacity(rows * g4);
        {
            let (bi, bh) = (self.value(b_ih), self.value(b_hh));
            let bias: Vec<F> = bi.iter().zip(bh).map(|(&a, &b)| a + b).collect();
            for _ in 0..rows {
                acts.extend_from_slice(&bias);
            }
        }
        gemm(
            F::one(),
            MatRef::new(self.value(x), 0, rows, input),
            MatRef::new(self.value(w_ih), 0, input, g4),
            F::one(),
            MatMut::new(&mut acts, 0, rows, g4),
        );
        let w_hh_v = self.value(w_hh);
        let mut cell = vec![F::zero(); rows * hid];
        let mut tanh_cell = vec![F::zero(); rows * hid];
        let mut h = vec![F::zero(); rows * hid];
        for s in 0..steps {
            let t = geo.time(s);
            let t_prev = if s > 0 { Some(geo.time(s - 1)) } else { None };
            if let Some(tp) = t_prev {
                gemm(
                    F::one(),
                    MatRef::strided(&h, tp * hid, bsz, hid, steps * hid, 1),
                    MatRef::new(w_hh_v, 0, hid, g4),
                    F::one(),
                    MatMut::strided(&mut acts, t * g4, bsz, g4, steps * g4, 1),
                );
            }
            for b in 0..bsz {
                let hb = (b * steps + t) * hid;
                let ab = (b * steps + t) * g4;
                for j in 0..hid {
                    let ig = sigmoid_scalar(acts[ab + j]);
                    let fg = sigmoid_scalar(acts[ab + hid + j]);
                    let cg = acts[ab + 2 * hid + j].tanh();
                    let og = sigmoid_scalar(acts[ab + 3 * hid + j]);
                    acts[ab + j] = ig;
                    acts[ab + hid + j] = fg;
                    acts[ab + 2 * hid + j] = cg;
                    acts[ab + 3 * hid + j] = og;
                    let c_prev = match t_prev {
                        Some(tp) => cell[(b * steps + tp) * hid + j],
                        None => F::zero(),
                    };
                    let c = fg * c_prev + ig * cg;
                    let tc = c.tanh();
                    cell[hb + j] = c;
                    tanh_cell[hb + j] = tc;
                    h[hb + j] = og * tc;
                }
            }
        }
        let op = LstmOp { x, w_ih, w_hh, b_ih, b_hh, geo, acts, cell, tanh_cell };
        self.push("lstm", vec![bsz, steps, hid], h, &[x, w_ih, w_hh, b_ih, b_hh], op)
    }
}
