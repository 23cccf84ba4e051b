//! Stateful layers: parameters with gradient buffers plus the activations
//! each layer needs to keep for its backward pass.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::batchnorm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache};
use super::conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, ConvGeometry};
use super::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(T::zero());
    }

    fn accumulate(&mut self, g: &[T]) {
        for (a, &b) in self.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }
}

fn vector_param<T: Real>(values: Vec<T>) -> Param<T> {
    let n = values.len();
    Param::new(Tensor::from_vec([1, 1, 1, n], values).expect("length matches shape"))
}

fn missing_cache(layer: &str) -> Error {
    Error::Shape(format!("{layer} backward called without a training-mode forward"))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of `relu` given its output `y`.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub geometry: ConvGeometry,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Vec<T>>, geometry: ConvGeometry) -> Self {
        Self {
            weight: Param::new(weight),
            bias: bias.map(vector_param),
            geometry,
            input: None,
        }
    }

    /// Training-mode forward; keeps the input for `backward`.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight.value, self.bias.as_ref().map(|b| b.value.data()), self.geometry)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv2d"))?;
        let (dx, dk, db) = conv2d_backward(&x, &self.weight.value, dy, self.geometry)?;
        self.weight.accumulate(dk.data());
        if let Some(b) = &mut self.bias {
            b.accumulate(&db);
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }
}

/// Stride-2 transposed convolution doubling the spatial size.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub geometry: ConvGeometry,
    input: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(weight: Tensor<T>, bias: Option<Vec<T>>) -> Self {
        Self {
            weight: Param::new(weight),
            bias: bias.map(vector_param),
            geometry: ConvGeometry::new(3, 2, 1),
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = (2 * x.height(), 2 * x.width());
        conv_transpose2d(x, &self.weight.value, self.bias.as_ref().map(|b| b.value.data()), self.geometry, out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv_transpose2d"))?;
        let (dx, dk, db) = conv_transpose2d_backward(&x, &self.weight.value, dy, self.geometry)?;
        self.weight.accumulate(dk.data());
        if let Some(b) = &mut self.bias {
            b.accumulate(&db);
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vector_param(vec![T::one(); channels]),
            beta: vector_param(vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    /// Training-mode forward: batch statistics, running statistics updated.
    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, cache) = batchnorm_train(
            x,
            self.gamma.value.data(),
            self.beta.value.data(),
            &mut self.running_mean,
            &mut self.running_var,
        )?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Inference-mode forward with the running statistics.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        batchnorm_infer(
            x,
            self.gamma.value.data(),
            self.beta.value.data(),
            &self.running_mean,
            &self.running_var,
        )
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batchnorm"))?;
        let (dx, dg, db) = batchnorm_backward(dy, self.gamma.value.data(), &cache)?;
        self.gamma.accumulate(&dg);
        self.beta.accumulate(&db);
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }
}
