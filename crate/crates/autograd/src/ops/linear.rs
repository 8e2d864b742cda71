use crate::error::{shape_err, Result};
use crate::real::{gemm, MatMut, MatRef, Real};
use crate::tape::{Backward, Grads, Tape, Values, Var};

struct AffineOp {
    x: Var,
    w: Var,
    b: Var,
    n: usize,
    i: usize,
    o: usize,
}

impl<F: Real> Backward<F> for AffineOp {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let (n, i, o) = (self.n, self.i, self.o);
        if grads.wants(self.x) {
            let w = v.get(self.w);
            let gx = grads.slot(self.x).unwrap();
            gemm(F::one(), MatRef::new(g, 0, n, o), MatRef::new(w, 0, i, o).t(), F::one(), MatMut::new(gx, 0, n, i));
        }
        if grads.wants(self.w) {
            let x = v.get(self.x);
            let gw = grads.slot(self.w).unwrap();
            gemm(F::one(), MatRef::new(x, 0, n, i).t(), MatRef::new(g, 0, n, o), F::one(), MatMut::new(gw, 0, i, o));
        }
        if let Some(gb) = grads.slot(self.b) {
            for r in 0..n {
                for c in 0..o {
                    gb[c] += g[r * o + c];
                }
            }
        }
    }
}

impl<F: Real> Tape<F> {
    /// `x W + b` for `x: [..., I]`, `W: [I, O]`, `b: [O]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] || bs != [ws[1]] {
            return shape_err("affine", format!("x {xs:?}, W {ws:?}, b {bs:?}"));
        }
        let (i, o) = (ws[0], ws[1]);
        let n = self.value(x).len() / i.max(1);
        let bv = self.value(b);
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(bv);
        }
        gemm(
            F::one(),
            MatRef::new(self.value(x), 0, n, i),
            MatRef::new(self.value(w), 0, i, o),
            F::one(),
            MatMut::new(&mut out, 0, n, o),
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = o;
        self.push("affine", shape, out, &[x, w, b], AffineOp { x, w, b, n, i, o })
    }
}
