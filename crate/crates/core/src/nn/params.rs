use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A named tensor owned by a model.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

/// Ordered collection of uniquely named parameters and buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T: Scalar> {
    params: Vec<LayerParams<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(LayerParams {
            name: name.to_string(),
            tensor,
            trainable,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get_index(&self, idx: usize) -> &LayerParams<T> {
        &self.params[idx]
    }

    pub fn get_index_mut(&mut self, idx: usize) -> &mut LayerParams<T> {
        &mut self.params[idx]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.params[i].tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.get_mut(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    /// Replaces an existing entry (shape may change).
    pub fn replace(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let t = self.require_mut(name)?;
        *t = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &LayerParams<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut LayerParams<T>> {
        self.params.iter_mut()
    }

    /// Number of trainable scalar values.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| LayerParams {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.random_range(-limit..limit)))
        .collect();
    Tensor::new(shape, data).expect("shape product")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f32>::new();
        s.insert("a", Tensor::zeros(&[2]), true).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[2]), true).is_err());
        s.insert("b", Tensor::zeros(&[3]), false).unwrap();
        assert_eq!(s.trainable_count(), 2);
    }
}
