use cafnet_autograd::gradcheck::suite::{rand_tensor, GradCase};
use cafnet_autograd::nn::Ctx;
use cafnet_autograd::{grad_check, rel_err, AutogradError, Mode, ParamId, ParamStore, Real, Tape, Tensor};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{composite_loss, LossWeights, Targets};
use crate::corpus::{ClassLabel, ClipLabel};
use crate::error::{CoreError, Result};
use crate::features::{FeatureSet, Matrix};
use crate::models::{CafNet, CafNetConfig, FeatureBatch, Model, ModelVars};

fn to_autograd(e: CoreError) -> AutogradError {
    match e {
        CoreError::Autograd(a) => a,
        other => AutogradError::InvalidArgument { op: "composite", detail: other.to_string() },
    }
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<ClipLabel> {
    (0..n)
        .map(|i| match i % 3 {
            0 => ClipLabel::real(),
            1 => ClipLabel::fake(),
            _ => {
                let s = rng.random_range(0.0..0.6);
                ClipLabel::new(ClassLabel::HalfTruth, Some((s, s + rng.random_range(0.1..0.4)))).expect("valid boundaries")
            }
        })
        .collect()
}

/// Random features of `frames` columns; the model itself accepts any length.
fn random_features(rng: &mut ChaCha8Rng, frames: usize) -> FeatureSet {
    let mut m = |rows: usize| Matrix::from_vec(rows, frames, (0..rows * frames).map(|_| rng.random_range(-1.0..1.0)).collect());
    FeatureSet { mfcc: m(40), lfcc: m(40), chroma: m(12) }
}

fn batch_of<F: Real>(items: &[FeatureSet]) -> FeatureBatch<F> {
    let stack = |sel: fn(&FeatureSet) -> &Matrix<f32>| {
        let m0 = sel(&items[0]);
        let data = items.iter().flat_map(|f| sel(f).data.iter().map(|&v| F::from_f64_lossy(v as f64))).collect();
        Tensor::new(vec![items.len(), m0.rows, m0.cols], data)
    };
    FeatureBatch { mfcc: stack(|f| &f.mfcc), lfcc: stack(|f| &f.lfcc), chroma: stack(|f| &f.chroma) }
}

/// A reduced CAFNet: same topology, narrow widths.
pub fn small_cafnet_config() -> CafNetConfig {
    CafNetConfig {
        channels: (6, 8),
        path_qk_dim: 4,
        fusion_heads: 2,
        main_hidden: 8,
        lstm_hidden: 3,
        ..CafNetConfig::default()
    }
}

/// Max relative error between analytic gradients of the composite loss at
/// precision `F` and central differences of the 64-bit loss, over `n_coords`
/// randomly chosen parameter elements.
pub fn model_grad_check<F: Real>(
    model: &Model,
    store: &ParamStore<F>,
    feats: &[FeatureSet],
    labels: &[ClipLabel],
    n_coords: usize,
    seed: u64,
) -> Result<f64> {
    let weights = LossWeights::default();
    let n_classes = model.n_classes();
    let loss_at = |store: &mut ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cx = Ctx { tape: &mut tape, store, mode: Mode::Train, rng: &mut rng };
        let vars = model.forward(&mut cx, &batch_of(feats))?;
        let terms = composite_loss(&mut tape, &vars, &Targets::new(labels, n_classes), &weights)?;
        Ok(tape.value(terms.total)[0])
    };

    let mut work = store.clone();
    let mut tape = Tape::<F>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cx = Ctx { tape: &mut tape, store: &mut work, mode: Mode::Train, rng: &mut rng };
    let vars = model.forward(&mut cx, &batch_of(feats))?;
    let terms = composite_loss(&mut tape, &vars, &Targets::new(labels, n_classes), &weights)?;
    tape.backward(terms.total)?;
    let grads: Vec<(ParamId, Vec<f64>)> =
        tape.param_grads().into_iter().map(|(id, g)| (id, g.iter().map(|v| v.as_f64()).collect())).collect();
    if let Some((id, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(CoreError::Numeric(format!("non-finite gradient for {}", store.name(*id))));
    }

    let mut pick = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FF_EE);
    let coords: Vec<(usize, usize)> = grads.iter().enumerate().flat_map(|(k, (_, g))| (0..g.len()).map(move |j| (k, j))).collect();
    let chosen: Vec<_> = coords.choose_multiple(&mut pick, n_coords).copied().collect();
    let mut base = store.cast::<f64>();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, j) in chosen {
        let id = grads[k].0;
        let x0 = base.value(id).data[j];
        base.value_mut(id).data[j] = x0 + eps;
        let plus = loss_at(&mut base)?;
        base.value_mut(id).data[j] = x0 - eps;
        let minus = loss_at(&mut base)?;
        base.value_mut(id).data[j] = x0;
        worst = worst.max(rel_err(grads[k].1[j], (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}

/// Composite-loss checks for the gradcheck suite: the loss itself over
/// random logits and boundaries, and the reduced CAFNet end to end.
pub fn composite_cases() -> Vec<GradCase> {
    vec![
        GradCase::new("composite_loss", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = 6;
            let labels = random_labels(&mut rng, b);
            let targets = Targets::<f64>::new(&labels, 3);
            let inputs = [rand_tensor(&mut rng, &[b, 3]), rand_tensor(&mut rng, &[b, 3]), rand_tensor(&mut rng, &[b, 2])];
            let report = grad_check(
                |tape, v| {
                    let boundaries = tape.sigmoid(v[2])?;
                    let vars = ModelVars { logits: v[0], aux_logits: Some(v[1]), boundaries: Some(boundaries) };
                    composite_loss(tape, &vars, &targets, &LossWeights::default()).map(|t| t.total).map_err(to_autograd)
                },
                &inputs,
                1e-5,
            )?;
            Ok(report.max_rel_err)
        }),
        GradCase::new("cafnet_end_to_end", 1e-4, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::<f64>::new();
            let model = Model::CafNet(CafNet::new(&mut store, &small_cafnet_config(), &mut rng).map_err(to_autograd)?);
            let feats: Vec<FeatureSet> = (0..3).map(|_| random_features(&mut rng, 12)).collect();
            let labels = random_labels(&mut rng, 3);
            model_grad_check(&model, &store, &feats, &labels, 24, seed).map_err(to_autograd)
        }),
    ]
}
