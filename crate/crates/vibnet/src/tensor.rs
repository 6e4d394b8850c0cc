//! Dense row-major f64 tensor, the single numeric carrier for activations,
//! weights, and gradients.

use crate::error::{Result, VibError};
use crate::rng::RandomSource;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(VibError::Dim {
                context: "Tensor::from_vec",
                expected: format!("{expect} elements for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    /// I.i.d. standard normal entries scaled by `std`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut RandomSource) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| std * rng.standard_normal()).collect();
        Tensor { shape: shape.to_vec(), data }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(VibError::Dim {
                context: "Tensor::reshaped",
                expected: format!("{} elements", self.data.len()),
                got: format!("shape {shape:?} ({expect})"),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Leading dimension (batch size for activations).
    #[inline]
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of all dimensions after the first.
    #[inline]
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.row_len();
        &mut self.data[i * w..(i + 1) * w]
    }

    /// 2-D indexed access, for tests and small code paths.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    /// Copy the given rows into a new tensor (used for minibatch gather).
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor { shape, data }
    }

    /// Copy the given columns of a 2-D tensor into a new tensor.
    pub fn gather_cols(&self, idx: &[usize]) -> Tensor {
        debug_assert_eq!(self.shape.len(), 2);
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut data = Vec::with_capacity(r * idx.len());
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            for &j in idx {
                data.push(row[j]);
            }
        }
        Tensor { shape: vec![r, idx.len()], data }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn gather_rows_and_cols() {
        let t = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let r = t.gather_rows(&[2, 0]);
        assert_eq!(r.data(), &[5.0, 6.0, 1.0, 2.0]);
        let c = t.gather_cols(&[1]);
        assert_eq!(c.shape(), &[3, 1]);
        assert_eq!(c.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn randn_is_finite_and_seeded() {
        let mut r1 = RandomSource::new(11);
        let mut r2 = RandomSource::new(11);
        let a = Tensor::randn(&[4, 5], 0.3, &mut r1);
        let b = Tensor::randn(&[4, 5], 0.3, &mut r2);
        assert!(a.all_finite());
        assert_eq!(a, b);
    }
}
