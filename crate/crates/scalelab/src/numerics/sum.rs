//! Pairwise balanced-tree summation with a fixed association order.
//!
//! The reduction order depends only on element order, never on thread
//! scheduling, so repeated evaluation is bitwise identical. A range is
//! split at the largest power of two strictly below its length; shards
//! whose boundaries coincide with internal nodes therefore reduce to
//! bitwise the same value whether summed whole or in parts.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Split point of the canonical tree: largest power of two < len.
fn split_point(len: usize) -> usize {
    debug_assert!(len >= 2);
    1usize << (usize::BITS - 1 - (len - 1).leading_zeros())
}

fn sum_range<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
    let len = hi - lo;
    if len == 1 {
        return f(lo);
    }
    let mid = lo + split_point(len);
    sum_range(lo, mid, f) + sum_range(mid, hi, f)
}

/// Tree sum over `len` values produced by `f(index)`.
///
/// `f` is invoked exactly once per index, in ascending order of leaves.
pub fn tree_sum_by<F: Fn(usize) -> f64>(len: usize, f: F) -> Result<f64> {
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    Ok(sum_range(0, len, &f))
}

/// Tree sum of a float slice.
pub fn tree_sum(values: &[f64]) -> Result<f64> {
    tree_sum_by(values.len(), |i| values[i])
}

fn sum_tensor_range<F>(lo: usize, hi: usize, f: &F) -> Result<Tensor>
where
    F: Fn(usize) -> Result<Tensor>,
{
    let len = hi - lo;
    if len == 1 {
        return f(lo);
    }
    let mid = lo + split_point(len);
    let mut left = sum_tensor_range(lo, mid, f)?;
    let right = sum_tensor_range(mid, hi, f)?;
    left.add_assign(&right)?;
    Ok(left)
}

/// Tree sum over `len` equal-shape tensors produced on demand by `f`.
///
/// Leaves are materialized depth-first, so at most O(log len) tensors
/// are alive at once.
pub fn tree_sum_tensors_by<F>(len: usize, f: F) -> Result<Tensor>
where
    F: Fn(usize) -> Result<Tensor>,
{
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    sum_tensor_range(0, len, &f)
}

/// Tree sum of a tensor slice.
pub fn tree_sum_tensors(tensors: &[Tensor]) -> Result<Tensor> {
    tree_sum_tensors_by(tensors.len(), |i| Ok(tensors[i].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_at_largest_power_of_two_below_len() {
        assert_eq!(split_point(2), 1);
        assert_eq!(split_point(3), 2);
        assert_eq!(split_point(4), 2);
        assert_eq!(split_point(5), 4);
        assert_eq!(split_point(8), 4);
        assert_eq!(split_point(9), 8);
        assert_eq!(split_point(1025), 1024);
    }

    #[test]
    fn sums_integers_exactly() {
        assert_eq!(tree_sum(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 10.0);
    }

    #[test]
    fn singleton_is_identity() {
        let x = 0.12345678901234567;
        assert_eq!(tree_sum(&[x]).unwrap().to_bits(), x.to_bits());
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(tree_sum(&[]), Err(Error::EmptySequence)));
    }

    #[test]
    fn len4_splits_into_halves_bitwise() {
        // Forced by the split rule; checked by direct evaluation.
        let v = [0.1, 0.7, -1.3, 2.9];
        let whole = tree_sum(&v).unwrap();
        let halves = tree_sum(&v[0..2]).unwrap() + tree_sum(&v[2..4]).unwrap();
        assert_eq!(whole.to_bits(), halves.to_bits());
    }

    #[test]
    fn repeated_evaluation_is_bitwise_identical() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin() * 1e-3).collect();
        let a = tree_sum(&v).unwrap();
        let b = tree_sum(&v).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn tensor_sum_matches_scalar_sum_per_slot() {
        let ts: Vec<Tensor> = (0..7)
            .map(|i| Tensor::from_flat(vec![i as f64 * 0.3, 1.0 / (i + 1) as f64]))
            .collect();
        let summed = tree_sum_tensors(&ts).unwrap();
        let s0 = tree_sum_by(7, |i| ts[i].data()[0]).unwrap();
        let s1 = tree_sum_by(7, |i| ts[i].data()[1]).unwrap();
        assert_eq!(summed.data()[0].to_bits(), s0.to_bits());
        assert_eq!(summed.data()[1].to_bits(), s1.to_bits());
    }
}
