use crate::error::{Error, Result};

use super::Matrix;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named learnable array together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    value: Matrix,
    grad: Matrix,
    /// Frozen slots (e.g. feature scaling statistics) are checkpointed but
    /// never touched by optimisers or gradient checks.
    pub trainable: bool,
}

impl ParamSlot {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub(crate) fn slot_mut(&mut self, id: ParamId, shape: (usize, usize)) -> &mut Matrix {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
    }

    /// Adds `other * scale` into `self`, parameter by parameter.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                let slot = self.slot_mut(ParamId(i), g.shape());
                for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }
}

/// Ordered collection of parameters. Insertion order is the canonical order
/// for checkpoints and gradient accumulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: Vec<ParamSlot>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_frozen(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Matrix, trainable: bool) -> ParamId {
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.slots.push(ParamSlot {
            name,
            value,
            grad,
            trainable,
        });
        ParamId(self.slots.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn slot(&self, id: ParamId) -> &ParamSlot {
        &self.slots[id.0]
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.slots[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.slots[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Matrix {
        &self.slots[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.slots[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    /// Replaces a value, keeping the recorded shape.
    pub fn set_value(&mut self, id: ParamId, value: Matrix) -> Result<()> {
        let slot = &mut self.slots[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::Dimension {
                op: "set_value",
                left: slot.value.shape(),
                right: value.shape(),
            });
        }
        slot.value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for s in &mut self.slots {
            s.grad.fill(0.0);
        }
    }

    /// Adds a backward pass's gradients into the slots, in slot order.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            if let Some(slot) = self.slots.get_mut(id.0) {
                slot.grad.add_assign(g);
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.slots
            .iter()
            .filter(|s| s.trainable)
            .map(|s| s.grad.frobenius_sq())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so the global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for slot in self.slots.iter_mut().filter(|s| s.trainable) {
                slot.grad.data_mut().iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|s| s.value.is_finite())
    }

    pub fn trainable_count(&self) -> usize {
        self.slots.iter().filter(|s| s.trainable).map(|s| s.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_clears_everything() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::filled(2, 2, 1.0));
        store.grad_mut(a).fill(3.0);
        store.zero_grads();
        assert!(store.grad(a).data().iter().all(|&g| g == 0.0));
        assert_eq!(store.grad(a).shape(), store.value(a).shape());
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        let a = store.add("a", Matrix::zeros(1, 2));
        let b = store.add("b", Matrix::zeros(1, 1));
        store.grad_mut(a).data_mut().copy_from_slice(&[3.0, 0.0]);
        store.grad_mut(b).data_mut()[0] = 4.0;
        assert_eq!(store.clip_grad_norm(1.0), 5.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-15);
    }
}
