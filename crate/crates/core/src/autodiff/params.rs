use std::collections::BTreeMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Index of a parameter inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the optimizer treats a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated as a whole whenever it receives a gradient.
    Dense,
    /// Embedding table; only rows touched by a lookup are updated.
    Lookup,
}

#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub kind: ParamKind,
    /// Frozen parameters (pretrained tables) never receive gradients.
    pub trainable: bool,
}

/// Initialization scheme for a new parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `[-x, x]` with `x = sqrt(6 / (rows + cols))`.
    Glorot,
    Uniform(f64),
    /// Uniform in `[lo, hi]`.
    Range(f64, f64),
}

/// Named, shaped model tensors.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: BTreeMap<String, ParamId>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: &str,
        value: Tensor<T>,
        kind: ParamKind,
        trainable: bool,
    ) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            kind,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Creates and initializes a trainable parameter.
    pub fn declare<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        kind: ParamKind,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let mut value = Tensor::zeros(shape);
        match init {
            Init::Zeros => {}
            Init::Constant(c) => value.fill(T::from_f64(c).unwrap()),
            Init::Glorot => {
                // vectors count as a single column
                let fan_in = value.cols() as f64;
                let fan_out = value.rows() as f64;
                let bound = (6.0 / (fan_in + fan_out)).sqrt();
                for v in value.data_mut() {
                    *v = T::from_f64(rng.gen_range(-bound..=bound)).unwrap();
                }
            }
            Init::Uniform(bound) => {
                for v in value.data_mut() {
                    *v = T::from_f64(rng.gen_range(-bound..=bound)).unwrap();
                }
            }
            Init::Range(lo, hi) => {
                for v in value.data_mut() {
                    *v = T::from_f64(rng.gen_range(lo..=hi)).unwrap();
                }
            }
        }
        self.insert(name, value, kind, true)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Overwrites every tensor with the same-named tensor of `other`.
    ///
    /// Both stores must hold exactly the same names and shapes.
    pub fn copy_values_from(&mut self, other: &ParameterStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for p in &mut self.params {
            let src = other
                .id(&p.name)
                .map(|id| other.value(id))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if src.shape() != p.value.shape() {
                return Err(Error::Shape {
                    op: "load parameter",
                    left: p.value.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            p.value = src.clone();
        }
        Ok(())
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}
