use std::collections::HashMap;

use super::rng::RngState;
use super::tensor::SequenceTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named array with its gradient and AdamW moments.
#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    /// Coarse grouping used in diagnostics (e.g. `bimamba`, `moca`).
    pub module: String,
    /// Buffers (batch-norm running statistics) are stored and checkpointed
    /// but never receive gradients or optimizer updates.
    pub trainable: bool,
    pub value: SequenceTensor,
    pub grad: SequenceTensor,
    pub m: SequenceTensor,
    pub v: SequenceTensor,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, ParamId>,
    /// AdamW step count.
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(
        &mut self,
        name: &str,
        module: &str,
        trainable: bool,
        value: SequenceTensor,
    ) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        let (r, c) = value.shape();
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            module: module.to_string(),
            trainable,
            value,
            grad: SequenceTensor::zeros(r, c),
            m: SequenceTensor::zeros(r, c),
            v: SequenceTensor::zeros(r, c),
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn add(&mut self, name: &str, module: &str, value: SequenceTensor) -> ParamId {
        self.insert(name, module, true, value)
    }

    pub fn add_buffer(&mut self, name: &str, module: &str, value: SequenceTensor) -> ParamId {
        self.insert(name, module, false, value)
    }

    /// `rows × cols` weight drawn from Normal(0, 1/cols).
    pub fn add_weight(
        &mut self,
        name: &str,
        module: &str,
        rows: usize,
        cols: usize,
        rng: &mut RngState,
    ) -> ParamId {
        let std = (1.0 / cols.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.normal() * std).collect();
        let value = SequenceTensor::from_vec(rows, cols, data).expect("sized above");
        self.add(name, module, value)
    }

    /// Bias of length `n` drawn from Uniform(−1/√fan_in, 1/√fan_in).
    pub fn add_bias(
        &mut self,
        name: &str,
        module: &str,
        n: usize,
        fan_in: usize,
        rng: &mut RngState,
    ) -> ParamId {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let data = (0..n).map(|_| rng.uniform_range(-bound, bound)).collect();
        self.add(name, module, SequenceTensor::from_vec(n, 1, data).expect("sized above"))
    }

    pub fn add_const(&mut self, name: &str, module: &str, n: usize, value: f64) -> ParamId {
        self.add(name, module, SequenceTensor::filled(n, 1, value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entry_mut(&mut self, id: ParamId) -> &mut ParamEntry {
        &mut self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &SequenceTensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut SequenceTensor {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &SequenceTensor {
        &self.entries[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set_value(&mut self, id: ParamId, value: SequenceTensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if !e.value.same_shape(&value) {
            return Err(Error::shape(
                "set_value",
                format!("{} {}", e.name, e.value.shape_str()),
                value.shape_str(),
            ));
        }
        e.value = value;
        Ok(())
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &SequenceTensor) {
        let e = &mut self.entries[id.0];
        if e.trainable {
            e.grad.add_assign(g);
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(0.0);
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.grad.sum_squares())
            .sum::<f64>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_buffers_match_values() {
        let mut rng = RngState::new(1);
        let mut s = ParamStore::new();
        let w = s.add_weight("w", "lin", 3, 4, &mut rng);
        let b = s.add_const("b", "lin", 3, 0.0);
        for e in s.entries() {
            assert!(e.grad.same_shape(&e.value));
            assert!(e.m.same_shape(&e.value));
        }
        s.accumulate_grad(w, &SequenceTensor::filled(3, 4, 2.0));
        s.accumulate_grad(b, &SequenceTensor::filled(3, 1, 1.0));
        assert!(s.grad_norm() > 0.0);
        s.zero_grads();
        assert!(s.entries().iter().all(|e| e.grad.data().iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn buffers_ignore_gradients() {
        let mut s = ParamStore::new();
        let rm = s.add_buffer("bn.mean", "bn", SequenceTensor::zeros(2, 1));
        s.accumulate_grad(rm, &SequenceTensor::filled(2, 1, 5.0));
        assert_eq!(s.grad(rm).max_abs(), 0.0);
        assert_eq!(s.num_trainable(), 0);
    }

    #[test]
    fn init_scale_follows_fan_in() {
        let mut rng = RngState::new(3);
        let mut s = ParamStore::new();
        let w = s.add_weight("w", "lin", 200, 50, &mut rng);
        let var = s.value(w).sum_squares() / s.value(w).len() as f64;
        assert!((var - 1.0 / 50.0).abs() < 0.002, "var {var}");
    }
}
