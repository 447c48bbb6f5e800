//! Dense row-major n-dimensional arrays of f64.

use crate::error::{DivergenceCause, Error, Result};

/// Dense tensor. Data is row-major (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(
                "tensor dimensions must be positive".into(),
            ));
        }
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: shape.to_vec(),
                actual: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// 1-D tensor from a plain vector.
    pub fn from_flat(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Elementwise sum into `self`; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: other.shape.clone(),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        Ok(())
    }

    /// Elementwise multiply by a scalar, in place.
    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn scaled(&self, s: f64) -> Tensor {
        let mut t = self.clone();
        t.scale(s);
        t
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First non-finite value classified, NaN taking priority over Inf.
    pub fn nonfinite_cause(&self) -> Option<DivergenceCause> {
        nonfinite_cause(&self.data)
    }
}

/// Classify non-finite contents of a slice; NaN wins over Inf.
pub fn nonfinite_cause(values: &[f64]) -> Option<DivergenceCause> {
    let mut saw_inf = false;
    for &v in values {
        if v.is_nan() {
            return Some(DivergenceCause::NaN);
        }
        if v.is_infinite() {
            saw_inf = true;
        }
    }
    if saw_inf {
        Some(DivergenceCause::Inf)
    } else {
        None
    }
}

/// FNV-1a over the little-endian bit patterns of a float slice.
///
/// Used to compare replica weights for bitwise equality.
pub fn hash_f64s(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn nonfinite_prefers_nan() {
        assert_eq!(nonfinite_cause(&[1.0, 2.0]), None);
        assert_eq!(
            nonfinite_cause(&[1.0, f64::INFINITY]),
            Some(DivergenceCause::Inf)
        );
        assert_eq!(
            nonfinite_cause(&[f64::INFINITY, f64::NAN]),
            Some(DivergenceCause::NaN)
        );
    }

    #[test]
    fn hash_is_bit_sensitive() {
        let a = hash_f64s(&[1.0, 2.0]);
        let b = hash_f64s(&[1.0 + f64::EPSILON, 2.0]);
        assert_ne!(a, b);
        assert_eq!(a, hash_f64s(&[1.0, 2.0]));
        // 0.0 and -0.0 differ in bits, so they must hash differently
        assert_ne!(hash_f64s(&[0.0]), hash_f64s(&[-0.0]));
    }
}
