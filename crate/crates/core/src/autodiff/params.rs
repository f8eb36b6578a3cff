use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    /// RMSProp running mean of squared gradients.
    pub sq_avg: Vec<T>,
}

impl<T: Scalar> Parameter<T> {
    fn new(value: Tensor<T>) -> Self {
        let n = value.numel();
        Self {
            value,
            grad: vec![T::zero(); n],
            sq_avg: vec![T::zero(); n],
        }
    }
}

/// Named parameters with their gradient and optimizer buffers.
///
/// Names are unique path strings such as `utility/gru/w_ih`. Iteration order is
/// sorted by name, which keeps checkpoints and optimizer sweeps deterministic.
#[derive(Debug)]
pub struct ParameterStore<T> {
    id: u64,
    params: BTreeMap<String, Parameter<T>>,
}

impl<T: Clone> Clone for ParameterStore<T> {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            params: self.params.clone(),
        }
    }
}

impl<T: Scalar> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            params: BTreeMap::new(),
        }
    }

    /// Process-unique identity; graph parameter bindings are keyed on it.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::invalid("parameter store", format!("duplicate name `{name}`")));
        }
        self.params.insert(name, Parameter::new(value));
        Ok(())
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn insert_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
            .collect();
        self.insert(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        Ok(&self.get(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        Ok(&mut self.get_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&[T]> {
        Ok(&self.get(name)?.grad)
    }

    pub fn add_grad(&mut self, name: &str, g: &[T]) -> Result<()> {
        let p = self.get_mut(name)?;
        if p.grad.len() != g.len() {
            return Err(Error::shape("add_grad", &[p.grad.len()], &[g.len()]));
        }
        for (d, &s) in p.grad.iter_mut().zip(g) {
            *d += s;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    /// Overwrite every value with the same-named value of `other` (hard target sync).
    pub fn copy_values_from(&mut self, other: &ParameterStore<T>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::invalid(
                "copy_values_from",
                "parameter name sets differ".to_string(),
            ));
        }
        for (name, p) in self.params.iter_mut() {
            let src = other.value(name)?;
            if src.shape() != p.value.shape() {
                return Err(Error::shape("copy_values_from", p.value.shape(), src.shape()));
            }
            p.value = src.clone();
        }
        Ok(())
    }

    /// Zero all parameters whose name starts with `prefix`. Returns how many matched.
    pub fn zero_prefix(&mut self, prefix: &str) -> usize {
        let mut count = 0;
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
                count += 1;
            }
        }
        count
    }

    /// Exact equality of names, shapes and values.
    pub fn same_values(&self, other: &ParameterStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .all(|(k, p)| other.params.get(k).is_some_and(|q| q.value == p.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("a", Tensor::zeros(vec![2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn clone_gets_new_identity_and_same_names() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("a", Tensor::zeros(vec![2])).unwrap();
        let t = s.clone();
        assert_ne!(s.id(), t.id());
        assert!(s.same_values(&t));
    }
}
