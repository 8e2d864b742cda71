use cafnet_autograd::nn::Ctx;
use cafnet_autograd::{Mode, ParamId, ParamStore, Tape, Tensor};
use cafnet_core::corpus::{ClassLabel, ClipLabel};
use cafnet_core::features::{FeatureSet, Matrix};
use cafnet_core::models::{CafNetConfig, FeatureBatch, Model, ModelSpec, ModelVars};
use cafnet_core::training::{
    clip_grad_norm, composite_loss, fit, grad_norm, model_grad_check, small_cafnet_config, FitOptions, LossWeights,
    Sample, Targets, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_features(rng: &mut ChaCha8Rng, frames: usize) -> FeatureSet {
    let mut m = |rows: usize| Matrix::from_vec(rows, frames, (0..rows * frames).map(|_| rng.random_range(-1.0..1.0)).collect());
    FeatureSet { mfcc: m(40), lfcc: m(40), chroma: m(12) }
}

fn half_truth(s: f64, e: f64) -> ClipLabel {
    ClipLabel::new(ClassLabel::HalfTruth, Some((s, e))).unwrap()
}

/// Leaves standing in for the three model heads of a batch of `n`.
fn head_leaves(tape: &mut Tape<f64>, rng: &mut ChaCha8Rng, n: usize) -> ModelVars {
    let mut leaf = |tape: &mut Tape<f64>, cols: usize| {
        tape.leaf(Tensor::new(vec![n, cols], (0..n * cols).map(|_| rng.random_range(-2.0..2.0)).collect()), true).unwrap()
    };
    let logits = leaf(tape, 3);
    let aux = leaf(tape, 3);
    let raw = leaf(tape, 2);
    let boundaries = tape.sigmoid(raw).unwrap();
    ModelVars { logits, aux_logits: Some(aux), boundaries: Some(boundaries) }
}

#[test]
fn loss_combination_arithmetic() {
    let w = LossWeights::default();
    assert_eq!(w.combine(1.0, 0.5, 0.2), 1.26);
    assert_eq!((w.aux_coeff, w.temp_coeff), (0.4, 0.3));
}

#[test]
fn temporal_term_has_no_gradient_without_half_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let labels = [ClipLabel::real(), ClipLabel::fake(), ClipLabel::fake()];
    let mut tape = Tape::<f64>::new();
    let vars = head_leaves(&mut tape, &mut rng, 3);
    let terms = composite_loss(&mut tape, &vars, &Targets::new(&labels, 3), &LossWeights::default()).unwrap();
    assert_eq!(tape.value(terms.temp.unwrap())[0], 0.0);
    tape.backward(terms.total).unwrap();
    assert!(tape.grad(vars.boundaries.unwrap()).map_or(true, |g| g.iter().all(|&v| v == 0.0)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn total_is_linear_in_the_temporal_coefficient(seed in 0u64..1000, temp in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = [ClipLabel::real(), half_truth(0.1, 0.4), ClipLabel::fake(), half_truth(0.5, 0.8)];
        let w = LossWeights { temp_coeff: temp, ..LossWeights::default() };
        let mut tape = Tape::<f64>::new();
        let vars = head_leaves(&mut tape, &mut rng, 4);
        let t = composite_loss(&mut tape, &vars, &Targets::new(&labels, 3), &w).unwrap();
        let v = |x| tape.value(x)[0];
        let expected = v(t.cls) + 0.4 * v(t.aux.unwrap()) + temp * v(t.temp.unwrap());
        prop_assert!((v(t.total) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn aux_gradient_is_its_coefficient_times_the_aux_loss_gradient(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = [ClipLabel::real(), half_truth(0.2, 0.5), ClipLabel::fake()];
        let targets = Targets::new(&labels, 3);
        let mut tape = Tape::<f64>::new();
        let vars = head_leaves(&mut tape, &mut rng, 3);
        let t = composite_loss(&mut tape, &vars, &targets, &LossWeights::default()).unwrap();
        tape.backward(t.total).unwrap();
        let through_total = tape.grad(vars.aux_logits.unwrap()).unwrap().to_vec();

        let mut alone = Tape::<f64>::new();
        let aux = alone.leaf(tape.tensor(vars.aux_logits.unwrap()).clone(), true).unwrap();
        let loss = alone.weighted_cross_entropy(aux, &targets.classes, &[1.622, 0.811, 0.568]).unwrap();
        alone.backward(loss).unwrap();
        for (a, b) in through_total.iter().zip(alone.grad(aux).unwrap()) {
            prop_assert!((a - 0.4 * b).abs() < 1e-14);
        }
    }

    #[test]
    fn clipping_caps_the_global_norm(data in prop::collection::vec(-50.0f64..50.0, 1..40), max in 0.01f64..10.0) {
        let mut store = ParamStore::<f64>::new();
        let id: ParamId = store.add_param("p", Tensor::new(vec![data.len()], vec![0.0; data.len()]));
        let mut grads = vec![(id, data.clone())];
        let before = grad_norm(&grads);
        let scale = clip_grad_norm(&mut grads, max);
        let after = grad_norm(&grads);
        prop_assert!(after <= max * (1.0 + 1e-9) || before <= max);
        prop_assert!(scale <= 1.0);
        if before <= max {
            prop_assert_eq!(&grads[0].1, &data);
        }
    }
}

#[test]
fn single_precision_model_gradients_match_differences() {
    let spec = ModelSpec::Cafnet(small_cafnet_config());
    let (model, store) = Model::init::<f32>(&spec, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let feats: Vec<FeatureSet> = (0..3).map(|_| random_features(&mut rng, 12)).collect();
    let labels = [ClipLabel::real(), ClipLabel::fake(), half_truth(0.25, 0.5)];
    let err = model_grad_check(&model, &store, &feats, &labels, 10, 9).unwrap();
    assert!(err < 1e-3, "max relative error {err:e}");
}

#[test]
fn one_epoch_of_one_batch_is_one_step() {
    let spec = ModelSpec::Cafnet(CafNetConfig { channels: (4, 8), path_qk_dim: 4, fusion_heads: 2, main_hidden: 8, lstm_hidden: 4, ..CafNetConfig::default() });
    let (model, mut store) = Model::init::<f32>(&spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sample = |i: usize, rng: &mut ChaCha8Rng| Sample {
        name: format!("{i}"),
        features: random_features(rng, 251),
        label: match i % 3 {
            0 => ClipLabel::real(),
            1 => ClipLabel::fake(),
            _ => half_truth(0.2, 0.45),
        },
    };
    let train: Vec<Sample> = (0..64).map(|i| sample(i, &mut rng)).collect();
    let val: Vec<Sample> = (0..6).map(|i| sample(i, &mut rng)).collect();
    let before = store.clone();
    let cfg = TrainConfig { max_epochs: 1, ..TrainConfig::default() };
    let report = fit(&model, &spec, &mut store, &train, &val, &cfg, &FitOptions::default()).unwrap();
    assert_eq!(report.steps, 1);
    assert_eq!(report.epochs.len(), 1);
    assert!(store.param_ids().any(|id| store.value(id) != before.value(id)));
}

#[test]
fn eval_mode_forward_ignores_the_rng() {
    let spec = ModelSpec::Cafnet(small_cafnet_config());
    let (model, mut store) = Model::init::<f64>(&spec, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let feats = [random_features(&mut rng, 251)];
    let batch = FeatureBatch::<f64>::new(&[&feats[0]]).unwrap();
    {
        // A training pass populates the batch-norm running statistics.
        let mut tape = Tape::<f64>::new();
        let mut cx = Ctx { tape: &mut tape, store: &mut store, mode: Mode::Train, rng: &mut rng };
        model.forward(&mut cx, &batch).unwrap();
    }
    let run = |store: &mut ParamStore<f64>, seed| {
        let mut tape = Tape::<f64>::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cx = Ctx { tape: &mut tape, store, mode: Mode::Eval, rng: &mut rng };
        let out = model.forward(&mut cx, &batch).unwrap();
        tape.value(out.logits).to_vec()
    };
    assert_eq!(run(&mut store, 1), run(&mut store, 2));
}
