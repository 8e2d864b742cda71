use std::collections::HashMap;

use cafnet_autograd::{ParamId, ParamStore, Real};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

/// Named set of parameters sharing a learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub lr: f64,
    #[serde(skip)]
    pub ids: Vec<ParamId>,
}

/// Disjoint partition of the trainable parameters into learning-rate groups.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroups {
    pub groups: Vec<ParamGroup>,
    lr_of: HashMap<ParamId, usize>,
}

impl ParamGroups {
    /// Every trainable parameter in one group at `lr`.
    pub fn single<F: Real>(store: &ParamStore<F>, lr: f64) -> Self {
        let ids = store.param_ids().filter(|&id| store.is_trainable(id)).collect();
        Self::new(vec![ParamGroup { name: "all".into(), lr, ids }]).expect("single group is a partition")
    }

    pub fn new(groups: Vec<ParamGroup>) -> Result<Self> {
        let mut lr_of = HashMap::new();
        for (g, group) in groups.iter().enumerate() {
            for &id in &group.ids {
                if lr_of.insert(id, g).is_some() {
                    return invalid(format!("parameter {} assigned to two groups", id.index()));
                }
            }
        }
        Ok(Self { groups, lr_of })
    }

    /// Group learning rate for a parameter; `None` if unassigned.
    pub fn lr(&self, id: ParamId) -> Option<f64> {
        self.lr_of.get(&id).map(|&g| self.groups[g].lr)
    }

    /// Multiply every group's learning rate.
    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.groups {
            g.lr *= factor;
        }
    }

    pub fn len(&self) -> usize {
        self.lr_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lr_of.is_empty()
    }
}

/// Head group (`head_ids`) and backbone group (every other trainable
/// parameter).
pub fn finetune_param_groups<F: Real>(
    store: &ParamStore<F>,
    head_ids: &[ParamId],
    backbone_lr: f64,
    head_lr: f64,
) -> Result<ParamGroups> {
    let trainable: Vec<ParamId> = store.param_ids().filter(|&id| store.is_trainable(id)).collect();
    if let Some(&bad) = head_ids.iter().find(|id| !trainable.contains(id)) {
        return invalid(format!("head parameter {} is not a trainable parameter", store.name(bad)));
    }
    let backbone = trainable.iter().copied().filter(|id| !head_ids.contains(id)).collect();
    let groups = ParamGroups::new(vec![
        ParamGroup { name: "backbone".into(), lr: backbone_lr, ids: backbone },
        ParamGroup { name: "heads".into(), lr: head_lr, ids: head_ids.to_vec() },
    ])?;
    if groups.len() != trainable.len() {
        return invalid("parameter groups do not cover every trainable parameter");
    }
    Ok(groups)
}

/// Global L2 norm of a gradient set.
pub fn grad_norm<F: Real>(grads: &[(ParamId, Vec<F>)]) -> f64 {
    grads.iter().flat_map(|(_, g)| g.iter()).map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
}

/// Rescale gradients so their global norm is at most `max_norm`; returns the
/// applied scale.
pub fn clip_grad_norm<F: Real>(grads: &mut [(ParamId, Vec<F>)], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    let scale = (max_norm / (norm + 1e-12)).min(1.0);
    if scale < 1.0 {
        let s = F::from_f64_lossy(scale);
        for (_, g) in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// AdamW with decoupled weight decay. Moments are kept in 64-bit.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub step: u64,
    moments: HashMap<ParamId, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        Self { cfg, step: 0, moments: HashMap::new() }
    }

    /// One update of every parameter in `grads` at its group learning rate.
    pub fn step<F: Real>(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Vec<F>)], groups: &ParamGroups) -> Result<()> {
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads {
            let lr = groups
                .lr(*id)
                .ok_or_else(|| CoreError::Invalid(format!("parameter {} has no learning-rate group", store.name(*id))))?;
            let theta = store.value_mut(*id);
            if theta.data.len() != g.len() {
                return invalid(format!("gradient length {} does not match parameter length {}", g.len(), theta.data.len()));
            }
            let (m, v) = self.moments.entry(*id).or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            if m.len() != g.len() {
                return invalid("optimiser state shape does not match parameter");
            }
            for i in 0..g.len() {
                let gi = g[i].as_f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let t = theta.data[i].as_f64();
                let next = t - lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * t);
                theta.data[i] = F::from_f64_lossy(next);
            }
        }
        Ok(())
    }
}

/// Halve-on-plateau schedule driven by a validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub best: f64,
    pub stale: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self { factor, patience, best: f64::INFINITY, stale: 0 }
    }

    /// Feed one epoch's metric; returns the multiplier to apply to the lr.
    pub fn observe(&mut self, metric: f64) -> f64 {
        if metric < self.best {
            self.best = metric;
            self.stale = 0;
            return 1.0;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            self.stale = 0;
            self.factor
        } else {
            1.0
        }
    }
}
