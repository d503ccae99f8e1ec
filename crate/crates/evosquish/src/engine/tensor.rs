//! Flat row-major tensors generic over the scalar type. Training runs in
//! f32; the same kernels instantiate at f64 for shadow-precision gradient
//! checks.

use num_traits::Float;

use crate::error::{Error, Result};

pub trait Real:
    Float + Send + Sync + Copy + std::fmt::Debug + std::iter::Sum + 'static
{
    fn from_f64(x: f64) -> Self;
    fn from_f32(x: f32) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_f32(x: f32) -> Self {
        f64::from(x)
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBuffer<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> TensorBuffer<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if expect != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} imply {} values, got {}",
                dims,
                expect,
                data.len()
            )));
        }
        Ok(TensorBuffer { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        TensorBuffer { dims, data: vec![T::zero(); len] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Interprets dims as (n, c, h, w).
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims.as_slice() {
            [n, c, h, w] => Ok((*n, *c, *h, *w)),
            other => Err(Error::ShapeMismatch(format!("expected 4-d batch, got {other:?}"))),
        }
    }

    pub fn sample(&self, index: usize) -> &[T] {
        let per = self.len() / self.dims[0];
        &self.data[index * per..(index + 1) * per]
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(format!("{what} contains NaN or Inf")));
        }
        Ok(())
    }

    pub fn convert<U: Real>(&self) -> TensorBuffer<U> {
        TensorBuffer {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_must_match_data() {
        assert!(TensorBuffer::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = TensorBuffer::<f32>::new(vec![2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn finiteness_is_an_error_state() {
        let mut t = TensorBuffer::<f32>::zeros(vec![4]);
        t.check_finite("t").unwrap();
        t.data[2] = f32::NAN;
        assert!(matches!(t.check_finite("t"), Err(Error::NumericOverflow(_))));
    }
}
