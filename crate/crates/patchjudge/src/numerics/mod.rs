//! Minimal dense-tensor arithmetic with reverse-mode gradients.
//!
//! Everything learnable in the model is a [`Parameter`] held by a
//! [`ParamSet`]; forward computations are recorded on a [`tape::Tape`]
//! and differentiated by replaying the record in reverse.

pub mod container;
pub mod gradcheck;
pub mod tape;

use std::collections::HashMap;
use std::fmt;

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Element type of all tensors. The production pipeline runs on `f32`;
/// gradient-checking harnesses may instantiate the same code with `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }

    fn of_f32(x: f32) -> Self;

    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
    fn of_f32(x: f32) -> Self {
        x
    }

    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn of_f32(x: f32) -> Self {
        x as f64
    }

    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor after checking that the extents multiply out to the
    /// data length.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor_new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: S) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Row vector `[1 x n]`.
    pub fn row_vector(values: Vec<S>) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    /// Rank-1 vector `[n]`.
    pub fn vector(values: Vec<S>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// `[rows x cols]` matrix from a flat row-major slice.
    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Samples every element from a normal distribution.
    pub fn random_normal<R: Rng>(shape: Vec<usize>, std_dev: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0f64, std_dev).expect("valid std dev");
        let len = shape.iter().product();
        let data = (0..len).map(|_| S::of(normal.sample(rng))).collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.shape[1]
    }

    /// Element of a rank-2 tensor.
    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    pub fn fill(&mut self, value: S) {
        for v in &mut self.data {
            *v = value;
        }
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type, preserving shape.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named learnable tensor paired with its gradient accumulator.
#[derive(Clone, Debug)]
pub struct Parameter<S: Scalar = f32> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Flat store of all parameters in a model. Names are unique.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<S: Scalar = f32> {
    items: Vec<Parameter<S>>,
    index: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            items: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a new parameter; the gradient starts at zero.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name: {name}")));
        }
        let id = ParamId(self.items.len());
        let grad = Tensor::zeros(value.shape().to_vec());
        self.items.push(Parameter {
            name: name.clone(),
            value,
            grad,
        });
        self.index.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.items[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.items[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<S>)> {
        self.items.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.items.len()).map(ParamId)
    }

    /// Resets every gradient to zero.
    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.grad.fill(S::zero());
        }
    }

    /// Replaces the value of a named parameter, checking the shape.
    pub fn set_value(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let id = self
            .index
            .get(name)
            .copied()
            .ok_or_else(|| Error::ModelLoad(format!("unknown parameter: {name}")))?;
        let current = &self.items[id.0];
        if current.value.shape() != value.shape() {
            return Err(Error::ModelLoad(format!(
                "shape mismatch for {name}: expected {:?}, found {:?}",
                current.value.shape(),
                value.shape()
            )));
        }
        self.items[id.0].value = value;
        Ok(())
    }
}

/// Whether stochastic operations (dropout) are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_new_checks_extents() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn param_set_rejects_duplicate_names() {
        let mut params = ParamSet::<f32>::new();
        params.add("w", Tensor::zeros(vec![2])).unwrap();
        assert!(params.add("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn zero_grads_resets_all() {
        let mut params = ParamSet::<f32>::new();
        let id = params.add("w", Tensor::zeros(vec![3])).unwrap();
        params.get_mut(id).grad.data_mut()[1] = 4.0;
        params.zero_grads();
        assert!(params.get(id).grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_shape_tracks_value_shape() {
        let mut params = ParamSet::<f32>::new();
        let id = params.add("w", Tensor::zeros(vec![2, 5])).unwrap();
        assert_eq!(params.get(id).grad.shape(), &[2, 5]);
    }
}
