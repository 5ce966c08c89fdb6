use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::spec::ModelSpec;
use crate::tensor::{sample_gaussian, DenseMatrix, Scalar, SeededRng};

/// Named tensors of a model. Names come from [`ModelSpec::param_shapes`];
/// the same type also carries gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T = f32> {
    tensors: BTreeMap<String, DenseMatrix<T>>,
}

pub type Gradients<T = f32> = Parameters<T>;

impl<T: Scalar> Default for Parameters<T> {
    fn default() -> Self {
        Parameters {
            tensors: BTreeMap::new(),
        }
    }
}

impl<T: Scalar> Parameters<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// All-zero tensors with the model's shapes.
    pub fn zeros_like(spec: &ModelSpec) -> Self {
        Parameters {
            tensors: spec
                .param_shapes()
                .into_iter()
                .map(|(n, (r, c))| (n, DenseMatrix::zeros(r, c)))
                .collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: DenseMatrix<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&DenseMatrix<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidModel(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseMatrix<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &DenseMatrix<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut DenseMatrix<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Sum of tensor sizes.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(DenseMatrix::len).sum()
    }

    /// Errors unless names and shapes match the model exactly.
    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let shapes = spec.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::InvalidModel(format!(
                "spec '{}' has {} parameter tensors, got {}",
                spec.name,
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in shapes {
            let t = self.get(&name)?;
            if t.shape() != shape {
                return Err(Error::InvalidModel(format!(
                    "parameter '{name}' has shape {:?}, spec requires {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Adds `other` tensor by tensor; both must hold the same names.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        for (name, t) in &mut self.tensors {
            t.add_assign(other.get(name)?)?;
        }
        Ok(())
    }

    /// Zeroes every skip projection.
    pub fn zero_skips(&mut self) {
        for (name, t) in &mut self.tensors {
            if name.ends_with(".skip") {
                t.data_mut().fill(T::ZERO);
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters {
            tensors: self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }
}

/// He initialization: weights `N(0, sqrt(2 / in_dim))`, biases zero. Draws
/// happen in the model's canonical parameter order.
pub fn init_params<T: Scalar>(spec: &ModelSpec, rng: &mut SeededRng) -> Result<Parameters<T>> {
    spec.validate()?;
    let mut params = Parameters::new();
    for (name, (rows, cols)) in spec.param_shapes() {
        let t = if name.ends_with(".bias") {
            DenseMatrix::zeros(rows, cols)
        } else {
            sample_gaussian(rng, rows, cols, 0.0, (2.0 / cols as f64).sqrt())?
        };
        params.insert(name, t);
    }
    Ok(params)
}
