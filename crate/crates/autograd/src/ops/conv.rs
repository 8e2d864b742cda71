//! Stride-1 convolutions (cross-correlation), lowered to GEMM via im2col.

use crate::error::{shape_err, Result};
use crate::real::{gemm, MatMut, MatRef, Real};
use crate::tape::{Backward, Grads, Tape, Values, Var};

#[derive(Clone, Copy)]
struct Conv1dGeom {
    batch: usize,
    c_in: usize,
    t_in: usize,
    c_out: usize,
    k: usize,
    groups: usize,
    pad: usize,
    t_out: usize,
}

impl Conv1dGeom {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }
    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }
    fn is_depthwise(&self) -> bool {
        self.groups == self.c_in && self.c_out == self.c_in
    }
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }
}

/// Fill `cols` (`[cin_g * k, t_out]`) for batch `b`, group `g`.
fn im2col_1d<F: Real>(x: &[F], geo: &Conv1dGeom, b: usize, g: usize, cols: &mut [F]) {
    let (cin_g, k, t_out, t_in, pad) = (geo.cin_g(), geo.k, geo.t_out, geo.t_in, geo.pad as isize);
    for c in 0..cin_g {
        let src = (b * geo.c_in + g * cin_g + c) * t_in;
        for kk in 0..k {
            let row = (c * k + kk) * t_out;
            for t in 0..t_out {
                let pos = t as isize + kk as isize - pad;
                cols[row + t] = if pos >= 0 && (pos as usize) < t_in { x[src + pos as usize] } else { F::zero() };
            }
        }
    }
}

fn col2im_1d<F: Real>(cols: &[F], geo: &Conv1dGeom, b: usize, g: usize, dx: &mut [F]) {
    let (cin_g, k, t_out, t_in, pad) = (geo.cin_g(), geo.k, geo.t_out, geo.t_in, geo.pad as isize);
    for c in 0..cin_g {
        let dst = (b * geo.c_in + g * cin_g + c) * t_in;
        for kk in 0..k {
            let row = (c * k + kk) * t_out;
            for t in 0..t_out {
                let pos = t as isize + kk as isize - pad;
                if pos >= 0 && (pos as usize) < t_in {
                    dx[dst + pos as usize] += cols[row + t];
                }
            }
        }
    }
}

struct Conv1dOp {
    x: Var,
    w: Var,
    b: Var,
    geo: Conv1dGeom,
}

impl<F: Real> Backward<F> for Conv1dOp {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let geo = self.geo;
        let (x, w) = (v.get(self.x), v.get(self.w));
        if let Some(gb) = grads.slot(self.b) {
            for b in 0..geo.batch {
                for c in 0..geo.c_out {
                    let base = (b * geo.c_out + c) * geo.t_out;
                    gb[c] += g[base..base + geo.t_out].iter().copied().sum::<F>();
                }
            }
        }
        if geo.is_depthwise() {
            let pad = geo.pad as isize;
            if grads.wants(self.w) {
                let gw = grads.slot(self.w).unwrap();
                for b in 0..geo.batch {
                    for c in 0..geo.c_in {
                        let xb = (b * geo.c_in + c) * geo.t_in;
                        let ob = (b * geo.c_out + c) * geo.t_out;
                        for kk in 0..geo.k {
                            let mut acc = F::zero();
                            for t in 0..geo.t_out {
                                let pos = t as isize + kk as isize - pad;
                                if pos >= 0 && (pos as usize) < geo.t_in {
                                    acc += g[ob + t] * x[xb + pos as usize];
                                }
                            }
                            gw[c * geo.k + kk] += acc;
                        }
                    }
                }
            }
            if let Some(gx) = grads.slot(self.x) {
                for b in 0..geo.batch {
                    for c in 0..geo.c_in {
                        let xb = (b * geo.c_in + c) * geo.t_in;
                        let ob = (b * geo.c_out + c) * geo.t_out;
                        for kk in 0..geo.k {
                            let wv = w[c * geo.k + kk];
                            for t in 0..geo.t_out {
                                let pos = t as isize + kk as isize - pad;
                                if pos >= 0 && (pos as usize) < geo.t_in {
                                    gx[xb + pos as usize] += g[ob + t] * wv;
                                }
                            }
                        }
                    }
                }
            }
            return;
        }
        let (cin_g, cout_g) = (geo.cin_g(), geo.cout_g());
        let rows = cin_g * geo.k;
        let mut cols = vec![F::zero(); rows * geo.t_out];
        let want_w = grads.wants(self.w);
        let want_x = grads.wants(self.x);
        for b in 0..geo.batch {
            for grp in 0..geo.groups {
                let g_off = (b * geo.c_out + grp * cout_g) * geo.t_out;
                if want_w {
                    let gw = grads.slot(self.w).unwrap();
                    let cols_ref = if geo.is_pointwise() {
                        MatRef::new(x, (b * geo.c_in + grp * cin_g) * geo.t_in, rows, geo.t_out)
                    } else {
                        im2col_1d(x, &geo, b, grp, &mut cols);
                        MatRef::new(&cols, 0, rows, geo.t_out)
                    };
                    gemm(
                        F::one(),
                        MatRef::new(g, g_off, cout_g, geo.t_out),
                        cols_ref.t(),
                        F::one(),
                        MatMut::new(gw, grp * cout_g * rows, cout_g, rows),
                    );
                }
                if want_x {
                    let gx = grads.slot(self.x).unwrap();
                    if geo.is_pointwise() {
                        gemm(
                            F::one(),
                            MatRef::new(w, grp * cout_g * rows, cout_g, rows).t(),
                            MatRef::new(g, g_off, cout_g, geo.t_out),
                            F::one(),
                            MatMut::new(gx, (b * geo.c_in + grp * cin_g) * geo.t_in, rows, geo.t_out),
                        );
                    } else {
                        gemm(
                            F::one(),
                            MatRef::new(w, grp * cout_g * rows, cout_g, rows).t(),
                            MatRef::new(g, g_off, cout_g, geo.t_out),
                            F::zero(),
                            MatMut::new(&mut cols, 0, rows, geo.t_out),
                        );
                        col2im_1d(&cols, &geo, b, grp, gx);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy)]
struct Conv2dGeom {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

fn im2col_2d<F: Real>(x: &[F], geo: &Conv2dGeom, b: usize, cols: &mut [F]) {
    let (k, pad) = (geo.k, geo.pad as isize);
    let npix = geo.h_out * geo.w_out;
    for c in 0..geo.c_in {
        let src = (b * geo.c_in + c) * geo.h * geo.w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * npix;
                for oy in 0..geo.h_out {
                    let iy = oy as isize + ky as isize - pad;
                    let dst = row + oy * geo.w_out;
                    if iy < 0 || iy as usize >= geo.h {
                        cols[dst..dst + geo.w_out].iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let line = src + iy as usize * geo.w;
                    for ox in 0..geo.w_out {
                        let ix = ox as isize + kx as isize - pad;
                        cols[dst + ox] =
                            if ix >= 0 && (ix as usize) < geo.w { x[line + ix as usize] } else { F::zero() };
                    }
                }
            }
        }
    }
}

fn col2im_2d<F: Real>(cols: &[F], geo: &Conv2dGeom, b: usize, dx: &mut [F]) {
    let (k, pad) = (geo.k, geo.pad as isize);
    let npix = geo.h_out * geo.w_out;
    for c in 0..geo.c_in {
        let dst = (b * geo.c_in + c) * geo.h * geo.w;
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * npix;
                for oy in 0..geo.h_out {
                    let iy = oy as isize + ky as isize - pad;
                    if iy < 0 || iy as usize >= geo.h {
                        continue;
                    }
                    let line = dst + iy as usize * geo.w;
                    for ox in 0..geo.w_out {
                        let ix = ox as isize + kx as isize - pad;
                        if ix >= 0 && (ix as usize) < geo.w {
                            dx[line + ix as usize] += cols[row + oy * geo.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    x: Var,
    w: Var,
    b: Var,
    geo: Conv2dGeom,
}

impl<F: Real> Backward<F> for Conv2dOp {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let geo = self.geo;
        let (x, w) = (v.get(self.x), v.get(self.w));
        let npix = geo.h_out * geo.w_out;
        let rows = geo.c_in * geo.k * geo.k;
        if let Some(gb) = grads.slot(self.b) {
            for b in 0..geo.batch {
                for c in 0..geo.c_out {
                    let base = (b * geo.c_out + c) * npix;
                    gb[c] += g[base..base + npix].iter().copied().sum::<F>();
                }
            }
        }
        let want_w = grads.wants(self.w);
        let want_x = grads.wants(self.x);
        let mut cols = vec![F::zero(); rows * npix];
        for b in 0..geo.batch {
            let g_off = b * geo.c_out * npix;
            if want_w {
                im2col_2d(x, &geo, b, &mut cols);
                let gw = grads.slot(self.w).unwrap();
                gemm(
                    F::one(),
                    MatRef::new(g, g_off, geo.c_out, npix),
                    MatRef::new(&cols, 0, rows, npix).t(),
                    F::one(),
                    MatMut::new(gw, 0, geo.c_out, rows),
                );
            }
            if want_x {
                gemm(
                    F::one(),
                    MatRef::new(w, 0, geo.c_out, rows).t(),
                    MatRef::new(g, g_off, geo.c_out, npix),
                    F::zero(),
                    MatMut::new(&mut cols, 0, rows, npix),
                );
                let gx = grads.slot(self.x).unwrap();
                col2im_2d(&cols, &geo, b, gx);
            }
        }
    }
}

impl<F: Real> Tape<F> {
    /// Grouped 1-D cross-correlation, stride 1.
    ///
    /// `x: [B, C_in, T]`, `w: [C_out, C_in / groups, K]`, `b: [C_out]`,
    /// output `[B, C_out, T + 2 * padding - K + 1]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, groups: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || groups == 0 {
            return shape_err("conv1d", format!("x {xs:?}, w {ws:?}, groups {groups}"));
        }
        let (batch, c_in, t_in) = (xs[0], xs[1], xs[2]);
        let (c_out, k) = (ws[0], ws[2]);
        if c_in % groups != 0 || c_out % groups != 0 || ws[1] != c_in / groups {
            return shape_err("conv1d", format!("channels {c_in}->{c_out} not divisible into {groups} groups (w {ws:?})"));
        }
        if self.shape(b) != [c_out] {
            return shape_err("conv1d", format!("bias {:?}, expected [{c_out}]", self.shape(b)));
        }
        if k == 0 || t_in + 2 * padding < k {
            return shape_err("conv1d", format!("kernel {k} longer than padded input {t_in}+2*{padding}"));
        }
        let t_out = t_in + 2 * padding - k + 1;
        let geo = Conv1dGeom { batch, c_in, t_in, c_out, k, groups, pad: padding, t_out };
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![F::zero(); batch * c_out * t_out];
        for bi in 0..batch {
            for c in 0..c_out {
                let base = (bi * c_out + c) * t_out;
                out[base..base + t_out].iter_mut().for_each(|o| *o = bv[c]);
            }
        }
        if geo.is_depthwise() {
            let pad = padding as isize;
            for bi in 0..batch {
                for c in 0..c_in {
                    let xb = (bi * c_in + c) * t_in;
                    let ob = (bi * c_out + c) * t_out;
                    for kk in 0..k {
                        let wk = wv[c * k + kk];
                        for t in 0..t_out {
                            let pos = t as isize + kk as isize - pad;
                            if pos >= 0 && (pos as usize) < t_in {
                                out[ob + t] += wk * xv[xb + pos as usize];
                            }
                        }
                    }
                }
            }
        } else {
            let (cin_g, cout_g) = (geo.cin_g(), geo.cout_g());
            let rows = cin_g * k;
            let mut cols = vec![F::zero(); if geo.is_pointwise() { 0 } else { rows * t_out }];
            for bi in 0..batch {
                for grp in 0..groups {
                    let cols_ref = if geo.is_pointwise() {
                        MatRef::new(xv, (bi * c_in + grp * cin_g) * t_in, rows, t_out)
                    } else {
                        im2col_1d(xv, &geo, bi, grp, &mut cols);
                        MatRef::new(&cols, 0, rows, t_out)
                    };
                    gemm(
                        F::one(),
                        MatRef::new(wv, grp * cout_g * rows, cout_g, rows),
                        cols_ref,
                        F::one(),
                        MatMut::new(&mut out, (bi * c_out + grp * cout_g) * t_out, cout_g, t_out),
                    );
                }
            }
        }
        self.push("conv1d", vec![batch, c_out, t_out], out, &[x, w, b], Conv1dOp { x, w, b, geo })
    }

    /// 2-D cross-correlation with square kernels, stride 1, groups 1.
    ///
    /// `x: [B, C_in, H, W]`, `w: [C_out, C_in, K, K]`, `b: [C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return shape_err("conv2d", format!("x {xs:?}, w {ws:?}"));
        }
        let (batch, c_in, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, k) = (ws[0], ws[2]);
        if self.shape(b) != [c_out] {
            return shape_err("conv2d", format!("bias {:?}, expected [{c_out}]", self.shape(b)));
        }
        if k == 0 || h + 2 * padding < k || wd + 2 * padding < k {
            return shape_err("conv2d", format!("kernel {k} larger than padded input {h}x{wd}"));
        }
        let (h_out, w_out) = (h + 2 * padding - k + 1, wd + 2 * padding - k + 1);
        let geo = Conv2dGeom { batch, c_in, h, w: wd, c_out, k, pad: padding, h_out, w_out };
        let npix = h_out * w_out;
        let rows = c_in * k * k;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let mut out = vec![F::zero(); batch * c_out * npix];
        let mut cols = vec![F::zero(); rows * npix];
        for bi in 0..batch {
            for c in 0..c_out {
                let base = (bi * c_out + c) * npix;
                out[base..base + npix].iter_mut().for_each(|o| *o = bv[c]);
            }
            im2col_2d(xv, &geo, bi, &mut cols);
            gemm(
                F::one(),
                MatRef::new(wv, 0, c_out, rows),
                MatRef::new(&cols, 0, rows, npix),
                F::one(),
                MatMut::new(&mut out, bi * c_out * npix, c_out, npix),
            );
        }
        self.push("conv2d", vec![batch, c_out, h_out, w_out], out, &[x, w, b], Conv2dOp { x, w, b, geo })
    }
}

#[cfg(test)]
mod tests {
    use crate::tape::{Tape, Tensor};

    #[test]
    fn delta_kernel_is_identity_1d() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 5], vec![1.0, -2.0, 3.0, 0.5, 4.0])).unwrap();
        let w = tape.constant(Tensor::new(vec![1, 1, 3], vec![0.0, 1.0, 0.0])).unwrap();
        let b = tape.constant(Tensor::zeros(&[1])).unwrap();
        let y = tape.conv1d(x, w, b, 1, 1).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn depthwise_shift_kernels() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])).unwrap();
        let w = tape.constant(Tensor::new(vec![2, 1, 3], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2])).unwrap();
        let y = tape.conv1d(x, w, b, 2, 1).unwrap();
        // channel 0 shifted right, channel 1 shifted left
        assert_eq!(tape.value(y), &[0.0, 1.0, 2.0, 3.0, 6.0, 7.0, 8.0, 0.0]);
    }

    #[test]
    fn conv1d_rejects_bad_groups() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4])).unwrap();
        let w = tape.constant(Tensor::zeros(&[2, 1, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2])).unwrap();
        assert!(tape.conv1d(x, w, b, 2, 1).is_err());
    }

    #[test]
    fn conv2d_identity_and_sum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap();
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let w = tape.constant(Tensor::new(vec![1, 1, 3, 3], delta)).unwrap();
        let b = tape.constant(Tensor::zeros(&[1])).unwrap();
        let y = tape.conv2d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y), tape.value(x));

        let ones = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4])).unwrap();
        let k = tape.constant(Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4])).unwrap();
        let s = tape.conv2d(ones, k, b, 0).unwrap();
        assert_eq!(tape.shape(s), &[1, 1, 1, 1]);
        assert_eq!(tape.value(s), &[4.0]);
    }
}
