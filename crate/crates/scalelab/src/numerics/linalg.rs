//! Small dense symmetric linear algebra: Cholesky factorization,
//! triangular solves, and closed-form inverses for n <= 3.

use crate::error::{Error, Result};

/// Square matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        SquareMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n);
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Bitwise symmetry check.
    pub fn is_symmetric_exact(&self) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j).to_bits() != self.get(j, i).to_bits() {
                    return false;
                }
            }
        }
        true
    }

    /// Symmetry within an absolute tolerance.
    pub fn is_symmetric_within(&self, tol: f64) -> bool {
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if (self.get(i, j) - self.get(j, i)).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn add_diagonal(&self, eps: f64) -> SquareMatrix {
        let mut m = self.clone();
        for i in 0..self.n {
            m.set(i, i, m.get(i, i) + eps);
        }
        m
    }

    /// self * other.
    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        assert_eq!(self.n, other.n);
        let mut out = SquareMatrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                let mut acc = 0.0;
                for k in 0..self.n {
                    acc += self.get(i, k) * other.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    pub fn transpose(&self) -> SquareMatrix {
        let mut out = SquareMatrix::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }
}

/// Lower-triangular Cholesky factor L with L * L^T = S.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: SquareMatrix,
}

impl Cholesky {
    pub fn factor(&self) -> &SquareMatrix {
        &self.l
    }

    /// Sum of log of diagonal entries; log|S| = 2 * this.
    pub fn half_log_det(&self) -> f64 {
        let n = self.l.dim();
        (0..n).map(|i| self.l.get(i, i).ln()).sum()
    }

    /// Solve L z = b.
    pub fn forward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= self.l.get(i, j) * z[j];
            }
            z[i] = acc / self.l.get(i, i);
        }
        z
    }

    /// Solve L^T x = b.
    pub fn backward_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.dim();
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in (i + 1)..n {
                acc -= self.l.get(j, i) * x[j];
            }
            x[i] = acc / self.l.get(i, i);
        }
        x
    }

    /// S^{-1} b via the two triangular solves.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.backward_solve(&self.forward_solve(b))
    }
}

/// Cholesky factorization of a symmetric matrix.
///
/// The non-positive pivot index is reported so covariance repair can
/// point at the offending axis.
pub fn cholesky(s: &SquareMatrix) -> Result<Cholesky> {
    if !s.is_symmetric_within(1e-12) {
        return Err(Error::NotSymmetric);
    }
    let n = s.dim();
    let mut l = SquareMatrix::zeros(n);
    for j in 0..n {
        let mut diag = s.get(j, j);
        for k in 0..j {
            diag -= l.get(j, k) * l.get(j, k);
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let root = diag.sqrt();
        l.set(j, j, root);
        for i in (j + 1)..n {
            let mut acc = s.get(i, j);
            for k in 0..j {
                acc -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, acc / root);
        }
    }
    Ok(Cholesky { l })
}

/// Determinant in closed form, n <= 3.
pub fn det_small(s: &SquareMatrix) -> f64 {
    match s.dim() {
        1 => s.get(0, 0),
        2 => s.get(0, 0) * s.get(1, 1) - s.get(0, 1) * s.get(1, 0),
        3 => {
            let a = s.get(0, 0);
            let b = s.get(0, 1);
            let c = s.get(0, 2);
            let d = s.get(1, 0);
            let e = s.get(1, 1);
            let f = s.get(1, 2);
            let g = s.get(2, 0);
            let h = s.get(2, 1);
            let i = s.get(2, 2);
            a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
        }
        n => panic!("det_small supports n <= 3, got {n}"),
    }
}

/// Closed-form inverse (adjugate over determinant), n <= 3.
pub fn inverse_small(s: &SquareMatrix) -> Result<SquareMatrix> {
    let det = det_small(s);
    if det == 0.0 || !det.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "matrix is singular (det = {det})"
        )));
    }
    let inv_det = 1.0 / det;
    let n = s.dim();
    let mut out = SquareMatrix::zeros(n);
    match n {
        1 => out.set(0, 0, inv_det),
        2 => {
            out.set(0, 0, s.get(1, 1) * inv_det);
            out.set(0, 1, -s.get(0, 1) * inv_det);
            out.set(1, 0, -s.get(1, 0) * inv_det);
            out.set(1, 1, s.get(0, 0) * inv_det);
        }
        3 => {
            for i in 0..3 {
                for j in 0..3 {
                    let r0 = (i + 1) % 3;
                    let r1 = (i + 2) % 3;
                    let c0 = (j + 1) % 3;
                    let c1 = (j + 2) % 3;
                    // cofactor expansion transposed (adjugate)
                    let cof = s.get(r0, c0) * s.get(r1, c1) - s.get(r0, c1) * s.get(r1, c0);
                    out.set(j, i, cof * inv_det);
                }
            }
        }
        n => panic!("inverse_small supports n <= 3, got {n}"),
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::CounterRng;

    #[test]
    fn identity_factors_to_identity() {
        let l = cholesky(&SquareMatrix::identity(3)).unwrap();
        assert_eq!(l.factor(), &SquareMatrix::identity(3));
    }

    #[test]
    fn known_2x2_factor() {
        let s = SquareMatrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let ch = cholesky(&s).unwrap();
        let l = ch.factor();
        assert_eq!(l.get(0, 0), 2.0);
        assert_eq!(l.get(0, 1), 0.0);
        assert_eq!(l.get(1, 0), 1.0);
        assert!((l.get(1, 1) - 2.0_f64.sqrt()).abs() < 1e-15);
        // round trip
        let prod = l.matmul(&l.transpose());
        for i in 0..2 {
            for j in 0..2 {
                assert!((prod.get(i, j) - s.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn indefinite_matrix_reports_pivot() {
        // eigenvalues {3, -1}
        let s = SquareMatrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        match cholesky(&s) {
            Err(Error::NotPositiveDefinite { pivot }) => assert_eq!(pivot, 1),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let s = SquareMatrix::from_rows(&[&[1.0, 0.5], &[0.0, 1.0]]);
        assert!(matches!(cholesky(&s), Err(Error::NotSymmetric)));
    }

    #[test]
    fn random_pd_round_trip_tight() {
        let mut rng = CounterRng::new(11, 0);
        for trial in 0..200 {
            let n = 1 + trial % 3;
            let mut a = SquareMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    a.set(i, j, rng.uniform_in(-1.0, 1.0));
                }
            }
            // A A^T + I is symmetric positive definite
            let s = {
                let mut m = a.matmul(&a.transpose());
                for i in 0..n {
                    m.set(i, i, m.get(i, i) + 1.0);
                }
                m
            };
            let l = cholesky(&s).unwrap();
            let back = l.factor().matmul(&l.factor().transpose());
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                for j in 0..n {
                    num += (back.get(i, j) - s.get(i, j)).powi(2);
                    den += s.get(i, j).powi(2);
                }
            }
            assert!(
                num.sqrt() / den.sqrt() < 1e-12,
                "relative error {} on trial {trial}",
                num.sqrt() / den.sqrt()
            );
        }
    }

    #[test]
    fn solve_matches_inverse_small() {
        let s = SquareMatrix::from_rows(&[&[2.0, 0.3, 0.1], &[0.3, 1.5, 0.2], &[0.1, 0.2, 1.1]]);
        let ch = cholesky(&s).unwrap();
        let inv = inverse_small(&s).unwrap();
        let b = [0.7, -0.4, 1.9];
        let x1 = ch.solve(&b);
        let x2 = inv.matvec(&b);
        for (a, b) in x1.iter().zip(x2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_small_left_inverse() {
        for n in 1..=3 {
            let mut rng = CounterRng::new(n as u64, 1);
            let mut a = SquareMatrix::zeros(n);
            for i in 0..n {
                for j in 0..n {
                    a.set(i, j, rng.uniform_in(-1.0, 1.0));
                }
            }
            let mut s = a.matmul(&a.transpose());
            for i in 0..n {
                s.set(i, i, s.get(i, i) + 1.0);
            }
            let inv = inverse_small(&s).unwrap();
            let prod = inv.matmul(&s);
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((prod.get(i, j) - want).abs() < 1e-12);
                }
            }
        }
    }
}
