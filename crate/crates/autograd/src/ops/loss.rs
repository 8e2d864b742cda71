use crate::error::{arg_err, shape_err, Result};
use crate::ops::activation::softmax_strided;
use crate::real::Real;
use crate::tape::{Backward, Grads, Tape, Values, Var};

struct WeightedCeOp<F> {
    logits: Var,
    /// `(w_y / sum w) * (softmax - onehot)` per element.
    dlogits: Vec<F>,
}

impl<F: Real> Backward<F> for WeightedCeOp<F> {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        if let Some(gx) = grads.slot(self.logits) {
            for (a, &d) in gx.iter_mut().zip(&self.dlogits) {
                *a += g[0] * d;
            }
        }
    }
}

struct MaskedMseOp<F> {
    pred: Var,
    dpred: Vec<F>,
}

impl<F: Real> Backward<F> for MaskedMseOp<F> {
    fn backward(&self, _out: Var, g: &[F], _v: &Values<'_, F>, grads: &mut Grads<'_, F>) {
        if let Some(gx) = grads.slot(self.pred) {
            for (a, &d) in gx.iter_mut().zip(&self.dpred) {
                *a += g[0] * d;
            }
        }
    }
}

impl<F: Real> Tape<F> {
    /// Class-weighted cross-entropy over `logits: [B, C]`, normalised by the
    /// sum of the weights of the labels present in the batch.
    pub fn weighted_cross_entropy(&mut self, logits: Var, labels: &[usize], class_weights: &[F]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[1] != class_weights.len() || s[0] == 0 {
            return shape_err(
                "weighted_cross_entropy",
                format!("logits {s:?}, {} labels, {} weights", labels.len(), class_weights.len()),
            );
        }
        let (b_n, c_n) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&y| y >= c_n) {
            return arg_err("weighted_cross_entropy", format!("label {bad} outside [0, {c_n})"));
        }
        let z = self.value(logits);
        let mut probs = vec![F::zero(); z.len()];
        let mut total = F::zero();
        let mut weight_sum = F::zero();
        for b in 0..b_n {
            let row = &z[b * c_n..(b + 1) * c_n];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<F>().ln();
            let w = class_weights[labels[b]];
            total += w * (lse - row[labels[b]]);
            weight_sum += w;
            softmax_strided(z, &mut probs, b * c_n, c_n, 1);
        }
        let mut dlogits = probs;
        for b in 0..b_n {
            let k = class_weights[labels[b]] / weight_sum;
            for c in 0..c_n {
                let onehot = if c == labels[b] { F::one() } else { F::zero() };
                dlogits[b * c_n + c] = k * (dlogits[b * c_n + c] - onehot);
            }
        }
        self.push("weighted_cross_entropy", vec![], vec![total / weight_sum], &[logits], WeightedCeOp { logits, dlogits })
    }

    /// Mean squared error over the rows of `pred: [B, D]` selected by `mask`;
    /// exactly zero (with zero gradient) when the mask selects nothing.
    pub fn masked_mse(&mut self, pred: Var, target: &[F], mask: &[bool]) -> Result<Var> {
        let s = self.shape(pred).to_vec();
        if s.len() != 2 || s[0] != mask.len() || target.len() != s[0] * s[1] {
            return shape_err("masked_mse", format!("pred {s:?}, {} targets, {} mask", target.len(), mask.len()));
        }
        let d = s[1];
        let count = mask.iter().filter(|&&m| m).count() * d;
        let p = self.value(pred);
        let mut dpred = vec![F::zero(); p.len()];
        let mut total = F::zero();
        if count > 0 {
            let denom = F::from_usize(count).unwrap();
            let two = F::one() + F::one();
            for (b, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                for j in b * d..(b + 1) * d {
                    let e = p[j] - target[j];
                    total += e * e;
                    dpred[j] = two * e / denom;
                }
            }
            total /= denom;
        }
        self.push("masked_mse", vec![], vec![total], &[pred], MaskedMseOp { pred, dpred })
    }
}
