use ndarray::{ArrayView2, ArrayViewMut2};
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, ParamLayout};
use super::Real;
use crate::rng::named_stream;
use crate::{Error, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rank-2 view; rank-1 tensors view as a single row.
    pub fn matrix(&self) -> ArrayView2<'_, T> {
        let (r, c) = self.dims2();
        ArrayView2::from_shape((r, c), &self.data).expect("shape matches data")
    }

    pub fn matrix_mut(&mut self) -> ArrayViewMut2<'_, T> {
        let (r, c) = self.dims2();
        ArrayViewMut2::from_shape((r, c), &mut self.data).expect("shape matches data")
    }

    fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => panic!("tensor {} has unsupported rank {}", self.name, other.len()),
        }
    }
}

/// Named tensors in layout order. Also used for gradients and optimizer
/// moments, which share the shape table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParameterSet<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::zeros_for(&ParamLayout::new(cfg))
    }

    pub fn zeros_for(layout: &ParamLayout) -> Self {
        Self {
            tensors: layout
                .entries
                .iter()
                .map(|(n, s)| Tensor::zeros(n.clone(), s.clone()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    /// Check names and shapes against `other`.
    pub fn check_same_layout<U>(&self, other: &ParameterSet<U>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch {
                name: "parameter set".into(),
                detail: format!("{} vs {} tensors", self.tensors.len(), other.tensors.len()),
            });
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::ShapeMismatch {
                    name: a.name.clone(),
                    detail: format!("{} {:?} vs {} {:?}", a.name, a.shape, b.name, b.shape),
                });
            }
        }
        Ok(())
    }

    /// `self += other`, element by element in layout order.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x = *x + y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x = *x * factor;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t
                        .data
                        .iter()
                        .map(|&x| U::from_f64(x.to_f64().unwrap()).unwrap())
                        .collect(),
                })
                .collect(),
        }
    }
}

fn is_gain(name: &str) -> bool {
    name.ends_with(".gain")
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".bias")
}

/// Weights ~ Normal(0, 0.02) truncated at ±2σ (rejection sampling), norm
/// gains 1, biases 0. Each tensor draws from its own named stream.
pub fn init_parameters<T: Real>(cfg: &ModelConfig) -> Result<ParameterSet<T>> {
    cfg.validate()?;
    let mut params = ParameterSet::zeros(cfg);
    for t in &mut params.tensors {
        if is_gain(&t.name) {
            t.data.fill(T::one());
        } else if !is_bias(&t.name) {
            let mut rng = named_stream(cfg.seed, &format!("init/{}", t.name));
            for x in &mut t.data {
                let z = loop {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if z.abs() <= 2.0 {
                        break z;
                    }
                };
                *x = T::from_f64(z * INIT_STD).unwrap();
            }
        }
    }
    Ok(params)
}
