//! Multivariate Gaussian mixtures evaluated on voxel grids.

use crate::error::{Error, Result};
use crate::numerics::{cholesky, Cholesky, SquareMatrix, Tensor};

/// Jitter ladder tried by [`ensure_pd`], in order.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Mixture of K Gaussians in n dimensions, parameterized by per-component
/// weights, means, per-axis standard deviations, and pairwise correlations.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureParams {
    pub n: usize,
    pub k: usize,
    /// K weights summing to 1.
    pub alpha: Vec<f64>,
    /// K x n means, row-major per component.
    pub mu: Vec<f64>,
    /// K x n standard deviations.
    pub sigma: Vec<f64>,
    /// K x n(n-1)/2 correlations, pairs in lexicographic order
    /// (0,1), (0,2), ..., (n-2,n-1).
    pub rho: Vec<f64>,
}

/// Number of correlation entries per component.
pub fn rho_len(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Index of pair (i, j), i < j, within a component's rho block.
pub fn rho_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl MixtureParams {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(Error::InvalidParameter(format!(
                "dimensionality must be 1..=3, got {}",
                self.n
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidParameter("component count is zero".into()));
        }
        let p = rho_len(self.n);
        if self.alpha.len() != self.k
            || self.mu.len() != self.k * self.n
            || self.sigma.len() != self.k * self.n
            || self.rho.len() != self.k * p
        {
            return Err(Error::InvalidParameter(
                "parameter block lengths inconsistent with (K, n)".into(),
            ));
        }
        let total: f64 = self.alpha.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        if self.mu.iter().any(|m| !(-1.0..=1.0).contains(m)) {
            return Err(Error::InvalidParameter("means must lie in [-1, 1]".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return Err(Error::InvalidParameter(
                "standard deviations must lie in (0, 1)".into(),
            ));
        }
        if self.rho.iter().any(|r| !(0.0..1.0).contains(r)) {
            return Err(Error::InvalidParameter(
                "correlations must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn component_mu(&self, c: usize) -> &[f64] {
        &self.mu[c * self.n..(c + 1) * self.n]
    }

    pub fn component_sigma(&self, c: usize) -> &[f64] {
        &self.sigma[c * self.n..(c + 1) * self.n]
    }

    pub fn component_rho(&self, c: usize) -> &[f64] {
        let p = rho_len(self.n);
        &self.rho[c * p..(c + 1) * p]
    }
}

/// Uniform voxel grid over a product of closed intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub side: usize,
    /// Per-axis (lo, hi). Defaults to [-1, 1] on every axis.
    pub domain: Vec<(f64, f64)>,
}

impl GridSpec {
    pub fn unit(n: usize, side: usize) -> Self {
        GridSpec {
            n,
            side,
            domain: vec![(-1.0, 1.0); n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(Error::InvalidParameter(format!(
                "grid dimensionality must be 1..=3, got {}",
                self.n
            )));
        }
        if self.side < 2 {
            return Err(Error::InvalidParameter("grid side must be >= 2".into()));
        }
        if self.domain.len() != self.n {
            return Err(Error::InvalidParameter(
                "domain must provide one interval per axis".into(),
            ));
        }
        for &(lo, hi) in &self.domain {
            if !(hi > lo) {
                return Err(Error::InvalidParameter("empty domain interval".into()));
            }
        }
        Ok(())
    }

    pub fn voxel_count(&self) -> usize {
        self.side.pow(self.n as u32)
    }

    /// Voxel width along one axis.
    pub fn delta(&self, axis: usize) -> f64 {
        let (lo, hi) = self.domain[axis];
        (hi - lo) / self.side as f64
    }

    /// Voxel volume.
    pub fn voxel_volume(&self) -> f64 {
        (0..self.n).map(|a| self.delta(a)).product()
    }

    /// Center coordinate of voxel index i along one axis:
    /// lo + (i + 1/2) * delta.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        let (lo, _) = self.domain[axis];
        lo + (i as f64 + 0.5) * self.delta(axis)
    }

    /// Center of the voxel with row-major flat index (last axis fastest).
    pub fn center_of_flat(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for axis in (0..self.n).rev() {
            out[axis] = self.center(axis, rem % self.side);
            rem /= self.side;
        }
    }

    pub fn tensor_shape(&self) -> Vec<usize> {
        vec![self.side; self.n]
    }
}

/// Covariance from per-axis deviations and pairwise correlations:
/// sigma_i^2 on the diagonal, rho_ij * sigma_i * sigma_j off it.
pub fn build_covariance(sigma: &[f64], rho: &[f64]) -> Result<SquareMatrix> {
    let n = sigma.len();
    if rho.len() != rho_len(n) {
        return Err(Error::InvalidParameter(format!(
            "expected {} correlations for n = {n}, got {}",
            rho_len(n),
            rho.len()
        )));
    }
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter(
            "standard deviations must be strictly positive".into(),
        ));
    }
    if rho.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidParameter("correlations must be finite".into()));
    }
    let mut s = SquareMatrix::zeros(n);
    for i in 0..n {
        s.set(i, i, sigma[i] * sigma[i]);
        for j in (i + 1)..n {
            let v = rho[rho_index(n, i, j)] * sigma[i] * sigma[j];
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    Ok(s)
}

/// Repair a symmetric matrix to positive definiteness by adding the
/// smallest jitter from [`JITTER_LADDER`] that lets Cholesky succeed.
///
/// Exhaustion signals pathological head outputs; the trainer treats it
/// as divergence.
pub fn ensure_pd(s: &SquareMatrix) -> Result<(SquareMatrix, f64)> {
    if !s.is_symmetric_within(1e-12) {
        return Err(Error::NotSymmetric);
    }
    for &eps in &JITTER_LADDER {
        let candidate = if eps == 0.0 {
            s.clone()
        } else {
            s.add_diagonal(eps)
        };
        if cholesky(&candidate).is_ok() {
            return Ok((candidate, eps));
        }
    }
    Err(Error::JitterExhausted)
}

/// One mixture component with its factorization precomputed, ready for
/// repeated density evaluation.
#[derive(Clone, Debug)]
pub struct PreparedComponent {
    pub weight: f64,
    pub mu: Vec<f64>,
    pub cov: SquareMatrix,
    pub chol: Cholesky,
    pub jitter: f64,
    log_norm: f64,
}

impl PreparedComponent {
    pub fn new(weight: f64, mu: &[f64], cov: SquareMatrix) -> Result<Self> {
        let n = mu.len();
        let (cov, jitter) = ensure_pd(&cov)?;
        let chol = cholesky(&cov)?;
        let log_norm = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - chol.half_log_det();
        Ok(PreparedComponent {
            weight,
            mu: mu.to_vec(),
            cov,
            chol,
            jitter,
            log_norm,
        })
    }

    /// Density of this component (without the mixture weight).
    pub fn pdf(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(self.mu.iter()).map(|(a, b)| a - b).collect();
        let z = self.chol.forward_solve(&d);
        let quad: f64 = z.iter().map(|v| v * v).sum();
        (self.log_norm - 0.5 * quad).exp()
    }
}

/// Prepare all components of a mixture, repairing covariances as needed.
pub fn prepare_components(params: &MixtureParams) -> Result<Vec<PreparedComponent>> {
    params.validate()?;
    (0..params.k)
        .map(|c| {
            let cov = build_covariance(params.component_sigma(c), params.component_rho(c))?;
            PreparedComponent::new(params.alpha[c], params.component_mu(c), cov)
        })
        .collect()
}

/// Multivariate normal density evaluated through the Cholesky factor.
pub fn gaussian_pdf(x: &[f64], mu: &[f64], cov: &SquareMatrix) -> Result<f64> {
    if x.len() != mu.len() || cov.dim() != x.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![mu.len()],
            actual: vec![x.len(), cov.dim()],
        });
    }
    let n = x.len();
    let chol = cholesky(cov)?;
    let d: Vec<f64> = x.iter().zip(mu.iter()).map(|(a, b)| a - b).collect();
    let z = chol.forward_solve(&d);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    let log_norm = -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - chol.half_log_det();
    Ok((log_norm - 0.5 * quad).exp())
}

/// Mixture density at a point.
pub fn mixture_density(x: &[f64], params: &MixtureParams) -> Result<f64> {
    let comps = prepare_components(params)?;
    Ok(density_at(&comps, x))
}

/// Density under already-prepared components.
pub fn density_at(comps: &[PreparedComponent], x: &[f64]) -> f64 {
    comps.iter().map(|c| c.weight * c.pdf(x)).sum()
}

/// Evaluate the mixture at every voxel center of the grid.
pub fn render_grid(params: &MixtureParams, grid: &GridSpec) -> Result<Tensor> {
    grid.validate()?;
    if params.n != grid.n {
        return Err(Error::ShapeMismatch {
            expected: vec![grid.n],
            actual: vec![params.n],
        });
    }
    let comps = prepare_components(params)?;
    Ok(render_prepared(&comps, grid))
}

/// Render already-prepared components onto a grid.
pub fn render_prepared(comps: &[PreparedComponent], grid: &GridSpec) -> Tensor {
    let mut out = Tensor::zeros(&grid.tensor_shape());
    let mut x = vec![0.0; grid.n];
    let data = out.data_mut();
    for flat in 0..grid.voxel_count() {
        grid.center_of_flat(flat, &mut x);
        data[flat] = density_at(comps, &x);
    }
    out
}
