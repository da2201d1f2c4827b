//! Complex tensors as (re, im) pairs of equal-shape real tensors.
//!
//! Keeping the parts separate lets complex arithmetic ride on the real-valued
//! graph: each complex op expands into real ops and backward needs no special
//! casing.

use num_complex::Complex64;

use super::{DiffTensor, Result, TensorError};

/// Equal-shape (re, im) pair of differentiable tensors.
#[derive(Clone, Debug)]
pub struct ComplexPair {
    pub re: DiffTensor,
    pub im: DiffTensor,
}

impl ComplexPair {
    pub fn new(re: DiffTensor, im: DiffTensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(TensorError::ShapeMismatch {
                axis: 0,
                left: re.shape().to_vec(),
                right: im.shape().to_vec(),
            });
        }
        Ok(ComplexPair { re, im })
    }

    /// Constant pair from interleaved complex values.
    pub fn constant(shape: &[usize], values: &[Complex64]) -> Result<Self> {
        let re: Vec<f64> = values.iter().map(|c| c.re).collect();
        let im: Vec<f64> = values.iter().map(|c| c.im).collect();
        Ok(ComplexPair {
            re: DiffTensor::constant(shape, re)?,
            im: DiffTensor::constant(shape, im)?,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        ComplexPair {
            re: DiffTensor::filled(shape, 0.0),
            im: DiffTensor::filled(shape, 0.0),
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn numel(&self) -> usize {
        self.re.numel()
    }

    /// Materialize values as complex numbers.
    pub fn to_complex(&self) -> Vec<Complex64> {
        self.re
            .values()
            .iter()
            .zip(self.im.values())
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect()
    }

    pub fn add(&self, rhs: &ComplexPair) -> Result<ComplexPair> {
        Ok(ComplexPair {
            re: self.re.add(&rhs.re)?,
            im: self.im.add(&rhs.im)?,
        })
    }

    pub fn sub(&self, rhs: &ComplexPair) -> Result<ComplexPair> {
        Ok(ComplexPair {
            re: self.re.sub(&rhs.re)?,
            im: self.im.sub(&rhs.im)?,
        })
    }

    /// Elementwise complex product (a+ib)(c+id) = (ac-bd) + i(ad+bc).
    pub fn complex_mul(&self, rhs: &ComplexPair) -> Result<ComplexPair> {
        let ac = self.re.mul(&rhs.re)?;
        let bd = self.im.mul(&rhs.im)?;
        let ad = self.re.mul(&rhs.im)?;
        let bc = self.im.mul(&rhs.re)?;
        Ok(ComplexPair {
            re: ac.sub(&bd)?,
            im: ad.add(&bc)?,
        })
    }

    /// Scale both parts by a real tensor (broadcast as in real ops).
    pub fn mul_real(&self, k: &DiffTensor) -> Result<ComplexPair> {
        Ok(ComplexPair {
            re: self.re.mul(k)?,
            im: self.im.mul(k)?,
        })
    }

    /// Elementwise squared magnitude re^2 + im^2, same shape as the pair.
    pub fn abs_sq(&self) -> Result<DiffTensor> {
        let rr = self.re.mul(&self.re)?;
        let ii = self.im.mul(&self.im)?;
        rr.add(&ii)
    }

    /// Squared Frobenius norm as a single-element tensor.
    pub fn norm_sq(&self) -> Result<DiffTensor> {
        Ok(self.abs_sq()?.sum_all())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<ComplexPair> {
        Ok(ComplexPair {
            re: self.re.reshape(shape)?,
            im: self.im.reshape(shape)?,
        })
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<ComplexPair> {
        Ok(ComplexPair {
            re: self.re.narrow(axis, start, len)?,
            im: self.im.narrow(axis, start, len)?,
        })
    }
}
