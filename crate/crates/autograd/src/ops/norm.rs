use crate::error::{shape_err, AutogradError, Result};
use crate::real::Real;
use crate::tape::{Backward, Grads, Tape, Values, Var};
use crate::Mode;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel running statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
    /// Number of training batches folded in; zero means uninitialised.
    pub batches: u64,
}

impl<F: Real> RunningStats<F> {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![F::zero(); channels], var: vec![F::one(); channels], batches: 0 }
    }
}

struct BatchNormTrainOp<F> {
    x: Var,
    gamma: Var,
    beta: Var,
    channels: usize,
    batch: usize,
    inner: usize,
    inv_std: Vec<F>,
    x_hat: Vec<F>,
}

impl<F: Real> Backward<F> for BatchNormTrainOp<F> {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let (c_n, inner) = (self.channels, self.inner);
        let n = F::from_usize(self.batch * inner).unwrap();
        let gamma = v.get(self.gamma);
        let mut sum_g = vec![F::zero(); c_n];
        let mut sum_gx = vec![F::zero(); c_n];
        for b in 0..self.batch {
            for c in 0..c_n {
                let base = (b * c_n + c) * inner;
                for i in base..base + inner {
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * self.x_hat[i];
                }
            }
        }
        grads.add(self.beta, &sum_g);
        grads.add(self.gamma, &sum_gx);
        if let Some(gx) = grads.slot(self.x) {
            for b in 0..self.batch {
                for c in 0..c_n {
                    let k = gamma[c] * self.inv_std[c] / n;
                    let base = (b * c_n + c) * inner;
                    for i in base..base + inner {
                        gx[i] += k * (n * g[i] - sum_g[c] - self.x_hat[i] * sum_gx[c]);
                    }
                }
            }
        }
    }
}

struct BatchNormEvalOp<F> {
    x: Var,
    gamma: Var,
    beta: Var,
    channels: usize,
    batch: usize,
    inner: usize,
    inv_std: Vec<F>,
    x_hat: Vec<F>,
}

impl<F: Real> Backward<F> for BatchNormEvalOp<F> {
    fn backward(&self, _out: Var, g: &[F], v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        let (c_n, inner) = (self.channels, self.inner);
        let gamma = v.get(self.gamma);
        let mut sum_g = vec![F::zero(); c_n];
        let mut sum_gx = vec![F::zero(); c_n];
        for b in 0..self.batch {
            for c in 0..c_n {
                let base = (b * c_n + c) * inner;
                for i in base..base + inner {
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * self.x_hat[i];
                }
            }
        }
        grads.add(self.beta, &sum_g);
        grads.add(self.gamma, &sum_gx);
        if let Some(gx) = grads.slot(self.x) {
            for b in 0..self.batch {
                for c in 0..c_n {
                    let k = gamma[c] * self.inv_std[c];
                    let base = (b * c_n + c) * inner;
                    for i in base..base + inner {
                        gx[i] += k * g[i];
                    }
                }
            }
        }
    }
}

impl<F: Real> Tape<F> {
    /// Batch normalisation over `x: [B, C, ...]`, statistics per channel over
    /// the batch and all trailing axes.
    ///
    /// Training mode normalises with the (biased) batch statistics and folds
    /// them into `stats` with momentum 0.1 (unbiased variance). Eval mode uses
    /// `stats` and fails if no training batch has been seen.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<F>,
        name: &str,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 {
            return shape_err("batch_norm", format!("expected [B, C, ...], got {xs:?}"));
        }
        let (batch, channels) = (xs[0], xs[1]);
        let inner: usize = xs[2..].iter().product();
        if self.shape(gamma) != [channels] || self.shape(beta) != [channels] || stats.mean.len() != channels {
            return shape_err("batch_norm", format!("{channels} channels vs gamma {:?}", self.shape(gamma)));
        }
        let n = batch * inner;
        if n == 0 {
            return shape_err("batch_norm", "empty batch");
        }
        let eps = F::from_f64_lossy(BN_EPS);
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let mut x_hat = vec![F::zero(); xv.len()];
        let mut out = vec![F::zero(); xv.len()];
        let mut inv_std = vec![F::zero(); channels];
        match mode {
            Mode::Train => {
                let nf = F::from_usize(n).unwrap();
                let momentum = F::from_f64_lossy(BN_MOMENTUM);
                for c in 0..channels {
                    let mut mean = F::zero();
                    for b in 0..batch {
                        let base = (b * channels + c) * inner;
                        mean += xv[base..base + inner].iter().copied().sum::<F>();
                    }
                    mean /= nf;
                    let mut var = F::zero();
                    for b in 0..batch {
                        let base = (b * channels + c) * inner;
                        var += xv[base..base + inner].iter().map(|&v| (v - mean) * (v - mean)).sum::<F>();
                    }
                    var /= nf;
                    inv_std[c] = F::one() / (var + eps).sqrt();
                    for b in 0..batch {
                        let base = (b * channels + c) * inner;
                        for i in base..base + inner {
                            x_hat[i] = (xv[i] - mean) * inv_std[c];
                            out[i] = gv[c] * x_hat[i] + bv[c];
                        }
                    }
                    let unbiased = if n > 1 { var * nf / F::from_usize(n - 1).unwrap() } else { var };
                    stats.mean[c] = (F::one() - momentum) * stats.mean[c] + momentum * mean;
                    stats.var[c] = (F::one() - momentum) * stats.var[c] + momentum * unbiased;
                }
                stats.batches += 1;
                let op = BatchNormTrainOp { x, gamma, beta, channels, batch, inner, inv_std, x_hat };
                self.push("batch_norm", xs, out, &[x, gamma, beta], op)
            }
            Mode::Eval => {
                if stats.batches == 0 {
                    return Err(AutogradError::UninitialisedStats(name.to_string()));
                }
                for c in 0..channels {
                    inv_std[c] = F::one() / (stats.var[c] + eps).sqrt();
                    for b in 0..batch {
                        let base = (b * channels + c) * inner;
                        for i in base..base + inner {
                            x_hat[i] = (xv[i] - stats.mean[c]) * inv_std[c];
                            out[i] = gv[c] * x_hat[i] + bv[c];
                        }
                    }
                }
                let op = BatchNormEvalOp { x, gamma, beta, channels, batch, inner, inv_std, x_hat };
                self.push("batch_norm", xs, out, &[x, gamma, beta], op)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tensor;

    fn setup(tape: &mut Tape<f64>, data: Vec<f64>, shape: Vec<usize>) -> (Var, Var, Var) {
        let c = shape[1];
        let x = tape.leaf(Tensor::new(shape, data), true).unwrap();
        let g = tape.leaf(Tensor::new(vec![c], vec![1.0; c]), true).unwrap();
        let b = tape.leaf(Tensor::zeros(&[c]), true).unwrap();
        (x, g, b)
    }

    #[test]
    fn train_mode_standardises_each_channel() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..24).map(|i| ((i * 7) % 11) as f64 * 1.3 - 4.0).collect();
        let (x, g, b) = setup(&mut tape, data, vec![2, 3, 4]);
        let mut stats = RunningStats::new(3);
        let y = tape.batch_norm(x, g, b, &mut stats, "bn", Mode::Train).unwrap();
        let yv = tape.value(y);
        for c in 0..3 {
            let vals: Vec<f64> = (0..2).flat_map(|bi| (0..4).map(move |t| (bi * 3 + c) * 4 + t)).map(|i| yv[i]).collect();
            let mean = vals.iter().sum::<f64>() / 8.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5, "{var}");
        }
        assert_eq!(stats.batches, 1);
    }

    #[test]
    fn constant_channel_maps_to_zero() {
        let mut tape = Tape::<f64>::new();
        let (x, g, b) = setup(&mut tape, vec![3.0; 8], vec![2, 1, 4]);
        let mut stats = RunningStats::new(1);
        let y = tape.batch_norm(x, g, b, &mut stats, "bn", Mode::Train).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_without_stats_fails() {
        let mut tape = Tape::<f64>::new();
        let (x, g, b) = setup(&mut tape, vec![1.0; 4], vec![1, 1, 4]);
        let mut stats = RunningStats::new(1);
        let err = tape.batch_norm(x, g, b, &mut stats, "path.bn", Mode::Eval).unwrap_err();
        assert_eq!(err, AutogradError::UninitialisedStats("path.bn".into()));
    }

    #[test]
    fn running_stats_use_momentum() {
        let mut tape = Tape::<f64>::new();
        let (x, g, b) = setup(&mut tape, vec![1.0, 3.0], vec![1, 1, 2]);
        let mut stats = RunningStats::new(1);
        tape.batch_norm(x, g, b, &mut stats, "bn", Mode::Train).unwrap();
        assert!((stats.mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch variance is 2.0
        assert!((stats.var[0] - (0.9 + 0.2)).abs() < 1e-12);
    }
}
