//! Foundational math: tensors, deterministic summation, a splittable
//! counter-based PRNG, small symmetric linear algebra, and activations.
//!
//! Everything here is pure and re-entrant. The canonical numeric type is
//! f64 throughout; reductions use a fixed pairwise tree so results never
//! depend on thread scheduling.

pub mod activation;
pub mod linalg;
pub mod rng;
pub mod sum;
pub mod tensor;

pub use linalg::{cholesky, det_small, inverse_small, Cholesky, SquareMatrix};
pub use rng::{streams, CounterRng};
pub use sum::{tree_sum, tree_sum_by, tree_sum_tensors, tree_sum_tensors_by};
pub use tensor::{hash_f64s, nonfinite_cause, Tensor};
