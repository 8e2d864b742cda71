//! Composite loss, optimiser stack, the training loop and fine-tuning groups.

mod fit;
mod gradcheck;
mod optim;

pub use fit::{
    config_hash, evaluate_loss, fit, load_samples, EpochLog, FitOptions, FitReport, Sample, CheckpointMeta,
};
pub use gradcheck::{composite_cases, model_grad_check, small_cafnet_config};
pub use optim::{
    clip_grad_norm, finetune_param_groups, grad_norm, AdamW, AdamWConfig, ParamGroup, ParamGroups, PlateauScheduler,
};

use cafnet_autograd::{Real, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::corpus::{ClassLabel, ClipLabel};
use crate::error::{config_err, invalid, Result};
use crate::features::AugmentConfig;
use crate::models::{ModelSpec, ModelVars};

/// Fine-tuning learning rates: backbone, heads.
pub const FINETUNE_LRS: (f64, f64) = (1e-5, 1e-4);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub aux_coeff: f64,
    pub temp_coeff: f64,
    /// Real, Fake, HalfTruth.
    pub class_weights: [f64; 3],
    /// Real, non-real.
    pub mfaan_class_weights: [f64; 2],
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { aux_coeff: 0.4, temp_coeff: 0.3, class_weights: [1.622, 0.811, 0.568], mfaan_class_weights: [2.0, 1.0] }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.aux_coeff, self.temp_coeff].into_iter().chain(self.class_weights).chain(self.mfaan_class_weights);
        if all.into_iter().any(|w| !(w.is_finite() && w > 0.0)) {
            return config_err("loss weights must be positive");
        }
        Ok(())
    }

    /// `cls + aux_coeff * aux + temp_coeff * temp` on plain numbers.
    pub fn combine(&self, cls: f64, aux: f64, temp: f64) -> f64 {
        cls + self.aux_coeff * aux + self.temp_coeff * temp
    }
}

/// Batched training targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets<F> {
    pub classes: Vec<usize>,
    /// `[B * 2]` normalised boundaries, zero where absent.
    pub boundaries: Vec<F>,
    pub half_truth: Vec<bool>,
}

/// Class index used for training: ternary for CAFNet, with half-truth folded
/// into fake for the binary model.
pub fn target_class(label: &ClipLabel, n_classes: usize) -> usize {
    match (label.class, n_classes) {
        (ClassLabel::HalfTruth, 2) => ClassLabel::Fake.index(),
        (c, _) => c.index(),
    }
}

impl<F: Real> Targets<F> {
    pub fn new<'a>(labels: impl IntoIterator<Item = &'a ClipLabel>, n_classes: usize) -> Self {
        let mut t = Targets { classes: vec![], boundaries: vec![], half_truth: vec![] };
        for label in labels {
            t.classes.push(target_class(label, n_classes));
            let (s, e) = label.boundaries.unwrap_or((0.0, 0.0));
            t.boundaries.push(F::from_f64_lossy(s));
            t.boundaries.push(F::from_f64_lossy(e));
            t.half_truth.push(label.class == ClassLabel::HalfTruth);
        }
        t
    }
}

/// Tape handles of the three loss terms and their weighted total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub cls: Var,
    pub aux: Option<Var>,
    pub temp: Option<Var>,
}

/// Weighted CE on the main logits, plus the auxiliary CE and the half-truth
/// boundary MSE when the model produces them.
pub fn composite_loss<F: Real>(tape: &mut Tape<F>, out: &ModelVars, targets: &Targets<F>, w: &LossWeights) -> Result<LossTerms> {
    let c = tape.shape(out.logits).get(1).copied().unwrap_or(0);
    let weights: Vec<F> = match c {
        3 => w.class_weights.iter().map(|&v| F::from_f64_lossy(v)).collect(),
        2 => w.mfaan_class_weights.iter().map(|&v| F::from_f64_lossy(v)).collect(),
        _ => return invalid(format!("no class weights for {c} classes")),
    };
    let cls = tape.weighted_cross_entropy(out.logits, &targets.classes, &weights)?;
    let mut total = cls;
    let aux = match out.aux_logits {
        Some(a) => {
            let l = tape.weighted_cross_entropy(a, &targets.classes, &weights)?;
            let s = tape.scale(l, F::from_f64_lossy(w.aux_coeff))?;
            total = tape.add(total, s)?;
            Some(l)
        }
        None => None,
    };
    let temp = match out.boundaries {
        Some(b) => {
            let l = tape.masked_mse(b, &targets.boundaries, &targets.half_truth)?;
            let s = tape.scale(l, F::from_f64_lossy(w.temp_coeff))?;
            total = tape.add(total, s)?;
            Some(l)
        }
        None => None,
    };
    Ok(LossTerms { total, cls, aux, temp })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Early-stopping patience in epochs on validation accuracy.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub plateau: Option<PlateauConfig>,
    pub augment: AugmentConfig,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr: 5e-4,
            weight_decay: 1e-4,
            clip_norm: Some(1.0),
            patience: 10,
            max_epochs: 15,
            seed: 42,
            plateau: None,
            augment: AugmentConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    /// Defaults for a model: CAFNet clips gradients at constant lr, MFAAN
    /// uses the plateau schedule without clipping.
    pub fn for_model(spec: &ModelSpec) -> Self {
        match spec {
            ModelSpec::Cafnet(_) => Self::default(),
            ModelSpec::Mfaan(_) => {
                Self { clip_norm: None, plateau: Some(PlateauConfig { factor: 0.5, patience: 3 }), ..Self::default() }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return config_err("batch_size, max_epochs and patience must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return config_err("lr must be positive and weight_decay non-negative");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return config_err("clip_norm must be positive");
        }
        if let Some(p) = self.plateau {
            if !(p.factor > 0.0 && p.factor < 1.0) || p.patience == 0 {
                return config_err("plateau factor must lie in (0, 1) with patience >= 1");
            }
        }
        self.augment.validate()?;
        self.loss.validate()
    }
}

#[cfg(test)]
mod tests {
    use cafnet_autograd::Tensor;

    use super::*;

    #[test]
    fn eq1_arithmetic() {
        assert_eq!(LossWeights::default().combine(1.0, 0.5, 0.2), 1.26);
    }

    fn vars(tape: &mut Tape<f64>, b: usize) -> ModelVars {
        let logits = tape.leaf(Tensor::new(vec![b, 3], (0..3 * b).map(|i| (i as f64 * 0.37).sin()).collect()), true).unwrap();
        let aux = tape.leaf(Tensor::new(vec![b, 3], (0..3 * b).map(|i| (i as f64 * 0.71).cos()).collect()), true).unwrap();
        let bnd = tape.leaf(Tensor::new(vec![b, 2], (0..2 * b).map(|i| 0.1 + 0.05 * i as f64).collect()), true).unwrap();
        ModelVars { logits, aux_logits: Some(aux), boundaries: Some(bnd) }
    }

    #[test]
    fn total_matches_terms_and_boundaries_are_ignored_without_half_truth() {
        let labels = [ClipLabel::real(), ClipLabel::fake(), ClipLabel::real()];
        let targets = Targets::<f64>::new(&labels, 3);
        let mut tape = Tape::new();
        let v = vars(&mut tape, 3);
        let terms = composite_loss(&mut tape, &v, &targets, &LossWeights::default()).unwrap();
        let get = |t: &Tape<f64>, x: Var| t.value(x)[0];
        let expected = LossWeights::default().combine(
            get(&tape, terms.cls),
            get(&tape, terms.aux.unwrap()),
            get(&tape, terms.temp.unwrap()),
        );
        assert_eq!(get(&tape, terms.temp.unwrap()), 0.0);
        assert!((get(&tape, terms.total) - expected).abs() < 1e-15);
        tape.backward(terms.total).unwrap();
        assert!(tape.grad(v.boundaries.unwrap()).is_none_or(|g| g.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn uniform_logits_give_ln3() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::new(vec![1, 3], vec![0.0; 3]), true).unwrap();
        let v = ModelVars { logits, aux_logits: None, boundaries: None };
        let terms = composite_loss(&mut tape, &v, &Targets::new(&[ClipLabel::real()], 3), &LossWeights::default()).unwrap();
        assert!((tape.value(terms.total)[0] - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn binary_targets_fold_half_truth() {
        let ht = ClipLabel::new(ClassLabel::HalfTruth, Some((0.2, 0.4))).unwrap();
        let t = Targets::<f32>::new(&[ht, ClipLabel::real()], 2);
        assert_eq!(t.classes, vec![1, 0]);
        assert_eq!(Targets::<f32>::new(&[ht], 3).classes, vec![2]);
        assert_eq!(t.half_truth, vec![true, false]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { clip_norm: Some(0.0), ..Default::default() }.validate().is_err());
    }
}
