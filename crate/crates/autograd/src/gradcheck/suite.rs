//! Finite-difference cases for every primitive, shared by the test suite and
//! the `gradcheck` command.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, grad_check_coords};
use crate::error::Result;
use crate::nn::{uniform, BiLstm, MultiHeadAttention};
use crate::ops::norm::RunningStats;
use crate::params::ParamStore;
use crate::tape::{Tape, Tensor, Var};
use crate::Mode;

pub const EPS: f64 = 1e-5;
pub const DEFAULT_SEEDS: u64 = 10;

type CheckFn = dyn Fn(u64) -> Result<f64> + Send + Sync;

/// One named gradient check, evaluated per seed.
pub struct GradCase {
    pub name: &'static str,
    pub threshold: f64,
    check: Box<CheckFn>,
}

impl GradCase {
    pub fn new(name: &'static str, threshold: f64, check: impl Fn(u64) -> Result<f64> + Send + Sync + 'static) -> Self {
        Self { name, threshold, check: Box::new(check) }
    }

    /// Max relative error for one seed.
    pub fn run(&self, seed: u64) -> Result<f64> {
        (self.check)(seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub name: &'static str,
    pub threshold: f64,
    pub max_rel_err: f64,
    pub seeds: u64,
    /// Set when a seed failed to evaluate at all.
    pub error: Option<String>,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_err < self.threshold
    }
}

pub fn run_case(case: &GradCase, seeds: u64) -> GradRow {
    let mut row = GradRow { name: case.name, threshold: case.threshold, max_rel_err: 0.0, seeds, error: None };
    for seed in 0..seeds {
        match case.run(seed) {
            Ok(e) => row.max_rel_err = row.max_rel_err.max(e),
            Err(e) => {
                row.error = Some(e.to_string());
                break;
            }
        }
    }
    row
}

/// Random tensor in `[-1, 1]`.
pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    uniform(shape, 1.0, rng)
}

/// Random tensor whose entries stay at least `gap` away from zero.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// `sum(y * r)` for a fixed random `r`, turning any output into a scalar
/// with non-uniform upstream gradient.
pub fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5eed);
    let r = rand_tensor(&mut rng, tape.shape(y));
    let r = tape.constant(r)?;
    let p = tape.mul(y, r)?;
    tape.sum(p)
}

fn check_all(seed: u64, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    Ok(grad_check(|t: &mut Tape<f64>, v: &[Var]| { let y = f(t, v)?; project(t, y, seed) }, &inputs, EPS)?.max_rel_err)
}

fn pool_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    // distinct, well separated values so the argmax cannot flip under +-eps
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    vals.shuffle(rng);
    Tensor::new(shape.to_vec(), vals)
}

/// Cases for every differentiable primitive, with their thresholds.
pub fn primitive_cases() -> Vec<GradCase> {
    vec![
        GradCase::new("affine", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4, 2]), rand_tensor(&mut rng, &[2])];
            check_all(seed, ins, |t, v| t.affine(v[0], v[1], v[2]))
        }),
        GradCase::new("conv1d", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![rand_tensor(&mut rng, &[1, 3, 8]), rand_tensor(&mut rng, &[2, 3, 5]), rand_tensor(&mut rng, &[2])];
            check_all(seed, ins, |t, v| t.conv1d(v[0], v[1], v[2], 1, 2))
        }),
        GradCase::new("conv1d_depthwise", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![rand_tensor(&mut rng, &[2, 4, 9]), rand_tensor(&mut rng, &[4, 1, 5]), rand_tensor(&mut rng, &[4])];
            check_all(seed, ins, |t, v| t.conv1d(v[0], v[1], v[2], 4, 2))
        }),
        GradCase::new("conv1d_grouped_pointwise", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![rand_tensor(&mut rng, &[2, 4, 6]), rand_tensor(&mut rng, &[6, 2, 1]), rand_tensor(&mut rng, &[6])];
            check_all(seed, ins, |t, v| t.conv1d(v[0], v[1], v[2], 2, 0))
        }),
        GradCase::new("conv2d", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![
                rand_tensor(&mut rng, &[2, 2, 5, 4]),
                rand_tensor(&mut rng, &[3, 2, 3, 3]),
                rand_tensor(&mut rng, &[3]),
            ];
            check_all(seed, ins, |t, v| t.conv2d(v[0], v[1], v[2], 1))
        }),
        GradCase::new("batch_norm_train", 1e-5, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![rand_tensor(&mut rng, &[3, 2, 5]), rand_tensor(&mut rng, &[2]), rand_tensor(&mut rng, &[2])];
            check_all(seed, ins, |t, v| {
                let mut stats = RunningStats::new(2);
                t.batch_norm(v[0], v[1], v[2], &mut stats, "bn", Mode::Train)
            })
        }),
        GradCase::new("batch_norm_eval", 1e-5, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![rand_tensor(&mut rng, &[3, 2, 5]), rand_tensor(&mut rng, &[2]), rand_tensor(&mut rng, &[2])];
            check_all(seed, ins, |t, v| {
                let mut stats = RunningStats { mean: vec![0.1, -0.2], var: vec![0.5, 2.0], batches: 1 };
                t.batch_norm(v[0], v[1], v[2], &mut stats, "bn", Mode::Eval)
            })
        }),
        GradCase::new("relu", 1e-7, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![rand_away_from_zero(&mut rng, &[4, 5], 0.1)];
            check_all(seed, ins, |t, v| t.relu(v[0]))
        }),
        GradCase::new("sigmoid", 1e-7, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_all(seed, vec![rand_tensor(&mut rng, &[4, 5])], |t, v| t.sigmoid(v[0]))
        }),
        GradCase::new("tanh", 1e-7, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_all(seed, vec![rand_tensor(&mut rng, &[4, 5])], |t, v| t.tanh(v[0]))
        }),
        GradCase::new("dropout", 1e-7, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_all(seed, vec![rand_tensor(&mut rng, &[4, 5])], move |t, v| {
                let mut mask_rng = ChaCha8Rng::seed_from_u64(seed + 1000);
                t.dropout(v[0], 0.3, &mut mask_rng, Mode::Train)
            })
        }),
        GradCase::new("max_pool1d", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_all(seed, vec![pool_input(&mut rng, &[2, 3, 7])], |t, v| t.max_pool1d(v[0], 2))
        }),
        GradCase::new("max_pool2d", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_all(seed, vec![pool_input(&mut rng, &[2, 2, 5, 4])], |t, v| t.max_pool2d(v[0], 2))
        }),
        GradCase::new("adaptive_avg_pool", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            check_all(seed, vec![rand_tensor(&mut rng, &[2, 3, 4, 3])], |t, v| t.adaptive_avg_pool(v[0]))
        }),
        GradCase::new("softmax", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let axis = (seed % 3) as usize;
            check_all(seed, vec![rand_tensor(&mut rng, &[2, 3, 4])], move |t, v| t.softmax(v[0], axis))
        }),
        GradCase::new("scaled_dot_attention", 1e-5, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![
                rand_tensor(&mut rng, &[1, 4, 16]),
                rand_tensor(&mut rng, &[1, 5, 16]),
                rand_tensor(&mut rng, &[1, 5, 8]),
            ];
            check_all(seed, ins, |t, v| t.scaled_dot_attention(v[0], v[1], v[2], 1))
        }),
        GradCase::new("scaled_dot_attention_heads", 1e-5, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![
                rand_tensor(&mut rng, &[2, 3, 8]),
                rand_tensor(&mut rng, &[2, 4, 8]),
                rand_tensor(&mut rng, &[2, 4, 6]),
            ];
            check_all(seed, ins, |t, v| t.scaled_dot_attention(v[0], v[1], v[2], 2))
        }),
        GradCase::new("multi_head_attention", 1e-4, multi_head_attention_case),
        GradCase::new("lstm_bidirectional", 1e-6, lstm_case),
        GradCase::new("shape_ops", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ins = vec![
                rand_tensor(&mut rng, &[2, 3, 4]),
                rand_tensor(&mut rng, &[2, 2, 4]),
                rand_tensor(&mut rng, &[2, 4, 3]),
                rand_tensor(&mut rng, &[1]),
            ];
            check_all(seed, ins, |t, v| {
                let c = t.concat(&[v[0], v[1]], 1)?; // [2, 5, 4]
                let p = t.bmm(c, v[2])?; // [2, 5, 3]
                let tr = t.transpose12(p)?; // [2, 3, 5]
                let s = t.mul_scalar(tr, v[3])?;
                let m = t.mean_axis(s, 2)?; // [2, 3]
                let r = t.reshape(m, &[3, 2])?;
                let sq = t.mul(r, r)?;
                let a = t.add(sq, r)?;
                t.scale(a, 0.7)
            })
        }),
        GradCase::new("weighted_cross_entropy", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
            let ins = vec![rand_tensor(&mut rng, &[5, 3])];
            Ok(grad_check(
                move |t: &mut Tape<f64>, v: &[Var]| t.weighted_cross_entropy(v[0], &labels, &[1.622, 0.811, 0.568]),
                &ins,
                EPS,
            )?
            .max_rel_err)
        }),
        GradCase::new("masked_mse", 1e-6, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let target = rand_tensor(&mut rng, &[4, 2]).data;
            let mask = vec![true, false, true, seed % 2 == 0];
            let ins = vec![rand_tensor(&mut rng, &[4, 2])];
            Ok(grad_check(move |t: &mut Tape<f64>, v: &[Var]| t.masked_mse(v[0], &target, &mask), &ins, EPS)?.max_rel_err)
        }),
    ]
}

/// Full 8-head, 128-wide attention layer; a random subset of coordinates
/// across inputs and all projection weights is checked.
fn multi_head_attention_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let mha = MultiHeadAttention::new(&mut store, "mha", 128, 8, &mut rng)?;
    let mut inputs = vec![rand_tensor(&mut rng, &[1, 3, 128]), rand_tensor(&mut rng, &[1, 4, 128])];
    inputs.extend(mha.params().into_iter().map(|id| store.value(id).clone()));
    let mut coords = Vec::new();
    for (i, t) in inputs.iter().enumerate() {
        for _ in 0..12 {
            coords.push((i, rng.random_range(0..t.len())));
        }
    }
    let heads = mha.heads;
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let y = mha_from_leaves(t, v, heads)?;
        project(t, y, seed)
    };
    Ok(grad_check_coords(f, &inputs, &coords, EPS)?.max_rel_err)
}

/// Self-contained attention layer: leaves are query, key/value source, then
/// q/k/v/out weight and bias pairs in `MultiHeadAttention::params` order.
fn mha_from_leaves(t: &mut Tape<f64>, v: &[Var], heads: usize) -> Result<Var> {
    let q = t.affine(v[0], v[2], v[3])?;
    let k = t.affine(v[1], v[4], v[5])?;
    let val = t.affine(v[1], v[6], v[7])?;
    let a = t.scaled_dot_attention(q, k, val, heads)?;
    t.affine(a, v[8], v[9])
}

/// Two-layer bidirectional LSTM with every weight checked.
fn lstm_case(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let lstm = BiLstm::new(&mut store, "lstm", 3, 4, 2, &mut rng);
    let ids = lstm.params();
    let mut inputs = vec![rand_tensor(&mut rng, &[2, 5, 3])];
    inputs.extend(ids.iter().map(|&id| store.value(id).clone()));
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let mut h = v[0];
        for layer in 0..2 {
            let base = 1 + layer * 8;
            let a = t.lstm_direction(h, v[base], v[base + 1], v[base + 2], v[base + 3], false)?;
            let b = t.lstm_direction(h, v[base + 4], v[base + 5], v[base + 6], v[base + 7], true)?;
            h = t.concat(&[a, b], 2)?;
        }
        project(t, h, seed)
    };
    Ok(grad_check(f, &inputs, EPS)?.max_rel_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Ctx;

    #[test]
    fn bilstm_layer_matches_leaf_wiring() {
        // The LSTM case wires leaves by hand; make sure that matches BiLstm::forward.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::<f64>::new();
        let lstm = BiLstm::new(&mut store, "lstm", 3, 4, 2, &mut rng);
        let x = rand_tensor(&mut rng, &[2, 5, 3]);

        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone()).unwrap();
        let mut cx = Ctx { tape: &mut tape, store: &mut store, mode: Mode::Eval, rng: &mut rng };
        let y = lstm.forward(&mut cx, xv).unwrap();
        let via_layer = tape.value(y).to_vec();

        let mut tape2 = Tape::<f64>::new();
        let mut vars = vec![tape2.constant(x).unwrap()];
        for id in lstm.params() {
            vars.push(tape2.constant(store.value(id).clone()).unwrap());
        }
        let mut h = vars[0];
        for layer in 0..2 {
            let base = 1 + layer * 8;
            let a = tape2.lstm_direction(h, vars[base], vars[base + 1], vars[base + 2], vars[base + 3], false).unwrap();
            let b = tape2.lstm_direction(h, vars[base + 4], vars[base + 5], vars[base + 6], vars[base + 7], true).unwrap();
            h = tape2.concat(&[a, b], 2).unwrap();
        }
        assert_eq!(tape2.value(h), &via_layer[..]);
    }

    #[test]
    fn mha_layer_matches_leaf_wiring() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::<f64>::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 16, 4, &mut rng).unwrap();
        let q = rand_tensor(&mut rng, &[1, 3, 16]);
        let kv = rand_tensor(&mut rng, &[1, 5, 16]);

        let mut tape = Tape::<f64>::new();
        let (qv, kvv) = (tape.constant(q.clone()).unwrap(), tape.constant(kv.clone()).unwrap());
        let mut cx = Ctx { tape: &mut tape, store: &mut store, mode: Mode::Eval, rng: &mut rng };
        let y = mha.forward(&mut cx, qv, kvv, kvv).unwrap();
        let via_layer = tape.value(y).to_vec();

        let mut tape2 = Tape::<f64>::new();
        let mut vars = vec![tape2.constant(q).unwrap(), tape2.constant(kv).unwrap()];
        for id in mha.params() {
            vars.push(tape2.constant(store.value(id).clone()).unwrap());
        }
        let y2 = mha_from_leaves(&mut tape2, &vars, 4).unwrap();
        assert_eq!(tape2.value(y2), &via_layer[..]);
    }

    #[test]
    fn every_case_passes_on_two_seeds() {
        for case in primitive_cases() {
            let row = run_case(&case, 2);
            assert!(row.passed(), "{row:?}");
        }
    }
}
