use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BufferId(pub usize);

/// Named trainable tensors with gradient accumulators and Adam moments,
/// plus non-trainable buffers (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub names: Vec<String>,
    pub values: Vec<Tensor<T>>,
    pub grads: Vec<Tensor<T>>,
    pub adam_m: Vec<Tensor<T>>,
    pub adam_v: Vec<Tensor<T>>,
    pub adam_step: u64,
    pub buffer_names: Vec<String>,
    pub buffers: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for NetworkParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new() -> Self {
        NetworkParams {
            names: vec![],
            values: vec![],
            grads: vec![],
            adam_m: vec![],
            adam_v: vec![],
            adam_step: 0,
            buffer_names: vec![],
            buffers: vec![],
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> ParamId {
        assert!(!self.names.iter().any(|n| n == name), "duplicate parameter {name}");
        let z = Tensor::zeros(&value.shape);
        self.names.push(name.to_string());
        self.grads.push(z.clone());
        self.adam_m.push(z.clone());
        self.adam_v.push(z);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> BufferId {
        assert!(!self.buffer_names.iter().any(|n| n == name), "duplicate buffer {name}");
        self.buffer_names.push(name.to_string());
        self.buffers.push(value);
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<T> {
        &self.buffers[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Reset gradient accumulators; values and optimizer state are untouched.
    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data.fill(T::zero());
        }
    }

    pub fn accumulate(&mut self, grads: &Grads<T>) {
        for (i, g) in grads.0.iter().enumerate() {
            if let Some(g) = g {
                self.grads[i].add_assign(g);
            }
        }
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(BufferId, Tensor<T>)>) {
        for (id, t) in updates {
            assert_eq!(self.buffers[id.0].shape, t.shape);
            self.buffers[id.0] = t;
        }
    }

    pub fn grad_norm(&self) -> T {
        self.grads.iter().map(|g| g.norm_sq()).sum::<T>().sqrt()
    }

    /// Copy parameter values and buffers from a structurally identical store.
    pub fn copy_values_from(&mut self, other: &NetworkParams<T>) -> Result<(), NnError> {
        self.check_same_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.data.copy_from_slice(&b.data);
        }
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            a.data.copy_from_slice(&b.data);
        }
        Ok(())
    }

    /// `self ← tau·source + (1 − tau)·self` for values and buffers.
    pub fn soft_update_from(&mut self, source: &NetworkParams<T>, tau: T) -> Result<(), NnError> {
        self.check_same_layout(source)?;
        let keep = T::one() - tau;
        let pairs = self.values.iter_mut().zip(&source.values).chain(self.buffers.iter_mut().zip(&source.buffers));
        for (a, b) in pairs {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = tau * y + keep * *x;
            }
        }
        Ok(())
    }

    fn check_same_layout(&self, other: &NetworkParams<T>) -> Result<(), NnError> {
        let same = self.names == other.names
            && self.buffer_names == other.buffer_names
            && self.values.iter().zip(&other.values).all(|(a, b)| a.shape == b.shape)
            && self.buffers.iter().zip(&other.buffers).all(|(a, b)| a.shape == b.shape);
        if same {
            Ok(())
        } else {
            Err(NnError::Layout("parameter stores differ in names or shapes".into()))
        }
    }

    /// Same layout with another scalar type; optimizer moments are carried over.
    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        let c = |v: &Vec<Tensor<T>>| v.iter().map(|t| t.cast::<U>()).collect();
        NetworkParams {
            names: self.names.clone(),
            values: c(&self.values),
            grads: c(&self.grads),
            adam_m: c(&self.adam_m),
            adam_v: c(&self.adam_v),
            adam_step: self.adam_step,
            buffer_names: self.buffer_names.clone(),
            buffers: c(&self.buffers),
        }
    }
}

/// Parameter gradients from one backward pass, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T>(pub Vec<Option<Tensor<T>>>);

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.0.get(id.0).and_then(|g| g.as_ref())
    }
}
