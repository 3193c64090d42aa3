use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use super::AutodiffError;

/// Floating-point element type of the engine. Training runs in `f32`,
/// gradient checking in `f64`.
pub trait Real: Float + Sum + Debug + Display + Default + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor value.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self, AutodiffError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![F::zero(); n] }
    }

    pub fn full(shape: Vec<usize>, value: F) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: F) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self, AutodiffError> {
        Self::new(shape, data.iter().map(|&x| F::of(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Element-type conversion.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::of(x.as_f64())).collect(),
        }
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)` block sizes.
pub(crate) fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize), AutodiffError> {
    if axis >= shape.len() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
