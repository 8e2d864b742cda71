//! The recording tape and its reverse sweep.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order of the graph. `backward` walks the indices downwards
//! and hands each recorded op its output gradient exactly once.

use std::collections::HashMap;

use crate::error::{AutogradError, Result};
use crate::params::{ParamId, ParamStore};
use crate::real::Real;

/// Dense row-major array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor data does not match shape {shape:?}");
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![F::zero(); shape.iter().product()] }
    }

    pub fn scalar(x: F) -> Self {
        Self { shape: vec![], data: vec![x] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| G::from_f64_lossy(x.as_f64())).collect() }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reverse-mode rule of one recorded op.
pub(crate) trait Backward<F: Real> {
    /// Accumulate input gradients given the gradient of the output `out`.
    fn backward(&self, out: Var, grad: &[F], values: &Values<'_, F>, grads: &mut Grads<'_, F>);
}

/// Read access to forward values during the reverse sweep.
pub(crate) struct Values<'a, F> {
    values: &'a [Vec<F>],
}

impl<'a, F> Values<'a, F> {
    pub fn get(&self, v: Var) -> &'a [F] {
        &self.values[v.0]
    }
}

/// Gradient accumulators; slots are allocated lazily.
pub(crate) struct Grads<'a, F> {
    grads: &'a mut [Option<Vec<F>>],
    requires: &'a [bool],
    lens: &'a [usize],
}

impl<F: Real> Grads<'_, F> {
    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Mutable gradient slot of `v`, or `None` when `v` needs no gradient.
    pub fn slot(&mut self, v: Var) -> Option<&mut [F]> {
        if !self.requires[v.0] {
            return None;
        }
        let len = self.lens[v.0];
        Some(self.grads[v.0].get_or_insert_with(|| vec![F::zero(); len]).as_mut_slice())
    }

    pub fn add(&mut self, v: Var, delta: &[F]) {
        if let Some(g) = self.slot(v) {
            for (a, &d) in g.iter_mut().zip(delta) {
                *a += d;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Recording,
    Done,
}

/// Records a forward computation for one reverse sweep.
pub struct Tape<F: Real> {
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<F>>,
    grads: Vec<Option<Vec<F>>>,
    requires: Vec<bool>,
    ops: Vec<Option<Box<dyn Backward<F>>>>,
    names: Vec<&'static str>,
    visits: Vec<u32>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
    phase: Phase,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            requires: Vec::new(),
            ops: Vec::new(),
            names: Vec::new(),
            visits: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
            phase: Phase::Recording,
        }
    }

    /// A tape on which parameters never require grad; nothing is recorded.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Leaf node holding `t`.
    pub fn leaf(&mut self, t: Tensor<F>, requires_grad: bool) -> Result<Var> {
        let requires = requires_grad && self.grad_enabled;
        self.push_raw("leaf", t.shape, t.data, requires, None)
    }

    /// Leaf that never requires grad.
    pub fn constant(&mut self, t: Tensor<F>) -> Result<Var> {
        self.leaf(t, false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let t = store.value(id).clone();
        let requires = store.is_trainable(id);
        let v = self.leaf(t, requires)?;
        self.params.insert(id, v);
        Ok(v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.shapes[v.0]
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.values[v.0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        Tensor { shape: self.shapes[v.0].clone(), data: self.values[v.0].clone() }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Gradient of a leaf after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients for every parameter bound on this tape, keyed by id.
    pub fn param_grads(&self) -> Vec<(ParamId, &[F])> {
        let mut out: Vec<(ParamId, &[F])> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grads[v.0].as_deref().map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    /// Number of reverse-sweep visits per node (diagnostic).
    pub fn visit_counts(&self) -> &[u32] {
        &self.visits
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.names[v.0]
    }

    pub(crate) fn any_requires(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.requires[v.0])
    }

    /// Append an op result. The backward rule is dropped when no input needs grad.
    pub(crate) fn push<B: Backward<F> + 'static>(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<F>,
        inputs: &[Var],
        op: B,
    ) -> Result<Var> {
        let requires = self.any_requires(inputs);
        let op: Option<Box<dyn Backward<F>>> = if requires { Some(Box::new(op)) } else { None };
        self.push_raw(name, shape, value, requires, op)
    }

    fn push_raw(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<F>,
        requires: bool,
        op: Option<Box<dyn Backward<F>>>,
    ) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len(), "{name}: value/shape mismatch");
        if self.phase == Phase::Done {
            return Err(AutogradError::BackwardTwice);
        }
        if value.iter().any(|x| !x.is_finite()) {
            return Err(AutogradError::NonFinite { op: name });
        }
        self.shapes.push(shape);
        self.values.push(value);
        self.grads.push(None);
        self.requires.push(requires);
        self.ops.push(op);
        self.names.push(name);
        self.visits.push(0);
        Ok(Var(self.values.len() - 1))
    }

    /// Reverse sweep from a scalar loss. Populates leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.phase == Phase::Done {
            return Err(AutogradError::BackwardTwice);
        }
        if self.values[loss.0].len() != 1 {
            return Err(AutogradError::NonScalarLoss(self.shapes[loss.0].clone()));
        }
        if !self.requires[loss.0] {
            return Err(AutogradError::DetachedGraph);
        }
        self.phase = Phase::Done;
        self.grads[loss.0] = Some(vec![F::one()]);
        let lens: Vec<usize> = self.values.iter().map(Vec::len).collect();
        for i in (0..=loss.0).rev() {
            let Some(op) = self.ops[i].take() else { continue };
            let Some(g) = self.grads[i].take() else { continue };
            self.visits[i] += 1;
            let values = Values { values: &self.values };
            let mut grads = Grads { grads: &mut self.grads, requires: &self.requires, lens: &lens };
            op.backward(Var(i), &g, &values, &mut grads);
        }
        for (i, g) in self.grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(AutogradError::NonFinite { op: self.names[i] });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]), true).unwrap();
        assert!(matches!(tape.backward(x), Err(AutogradError::NonScalarLoss(_))));
    }

    #[test]
    fn backward_rejects_detached_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![2], vec![1.0, 2.0])).unwrap();
        let s = tape.sum(x).unwrap();
        assert_eq!(tape.backward(s), Err(AutogradError::DetachedGraph));
    }

    #[test]
    fn second_backward_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]), true).unwrap();
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s), Err(AutogradError::BackwardTwice));
    }

    #[test]
    fn non_finite_leaf_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let r = tape.leaf(Tensor::new(vec![1], vec![f32::NAN]), true);
        assert!(matches!(r, Err(AutogradError::NonFinite { .. })));
    }

    #[test]
    fn each_node_is_visited_once() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]), true).unwrap();
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let t = tape.tanh(z).unwrap();
        let s = tape.sum(t).unwrap();
        tape.backward(s).unwrap();
        for (i, &n) in tape.visit_counts().iter().enumerate() {
            let expected = if i == x.index() { 0 } else { 1 };
            assert_eq!(n, expected, "node {i}");
        }
    }
}
