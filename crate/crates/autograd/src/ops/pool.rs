use crate::error::{shape_err, Result};
use crate::real::Real;
use crate::tape::{Backward, Grads, Tape, Values, Var};

/// Routes each output gradient to the input index that won the max.
struct MaxPoolOp {
    x: Var,
    argmax: Vec<usize>,
}

impl<F: Real> Backward<F> for MaxPoolOp {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        if let Some(gx) = grads.slot(self.x) {
            for (&src, &d) in self.argmax.iter().zip(g) {
                gx[src] += d;
            }
        }
    }
}

struct AvgPoolOp {
    x: Var,
    inner: usize,
}

impl<F: Real> Backward<F> for AvgPoolOp {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let scale = F::one() / F::from_usize(self.inner).unwrap();
        if let Some(gx) = grads.slot(self.x) {
            for (row, &d) in g.iter().enumerate() {
                for v in &mut gx[row * self.inner..(row + 1) * self.inner] {
                    *v += d * scale;
                }
            }
        }
    }
}

impl<F: Real> Tape<F> {
    /// Non-overlapping max pooling over the last axis of `[B, C, T]`;
    /// a trailing partial window is dropped. Ties go to the lower index.
    pub fn max_pool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 || window == 0 || xs[2] < window {
            return shape_err("max_pool1d", format!("{xs:?} with window {window}"));
        }
        let (rows, t) = (xs[0] * xs[1], xs[2]);
        let t_out = t / window;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows * t_out);
        let mut argmax = Vec::with_capacity(rows * t_out);
        for r in 0..rows {
            for o in 0..t_out {
                let start = r * t + o * window;
                let mut best = start;
                for i in start + 1..start + window {
                    if xv[i] > xv[best] {
                        best = i;
                    }
                }
                out.push(xv[best]);
                argmax.push(best);
            }
        }
        self.push("max_pool1d", vec![xs[0], xs[1], t_out], out, &[x], MaxPoolOp { x, argmax })
    }

    /// Non-overlapping `window x window` max pooling of `[B, C, H, W]`.
    pub fn max_pool2d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || window == 0 || xs[2] < window || xs[3] < window {
            return shape_err("max_pool2d", format!("{xs:?} with window {window}"));
        }
        let (planes, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (h_out, w_out) = (h / window, w / window);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(planes * h_out * w_out);
        let mut argmax = Vec::with_capacity(planes * h_out * w_out);
        for p in 0..planes {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut best = p * h * w + oy * window * w + ox * window;
                    for dy in 0..window {
                        for dx in 0..window {
                            let i = p * h * w + (oy * window + dy) * w + ox * window + dx;
                            if xv[i] > xv[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        self.push("max_pool2d", vec![xs[0], xs[1], h_out, w_out], out, &[x], MaxPoolOp { x, argmax })
    }

    /// Mean over every axis after the channel axis: `[B, C, ...] -> [B, C]`.
    pub fn adaptive_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let inner: usize = xs.get(2..).map(|s| s.iter().product()).unwrap_or(0);
        if xs.len() < 3 || inner == 0 {
            return shape_err("adaptive_avg_pool", format!("{xs:?}"));
        }
        let scale = F::one() / F::from_usize(inner).unwrap();
        let out: Vec<F> = self.value(x).chunks(inner).map(|c| c.iter().copied().sum::<F>() * scale).collect();
        self.push("adaptive_avg_pool", vec![xs[0], xs[1]], out, &[x], AvgPoolOp { x, inner })
    }
}
