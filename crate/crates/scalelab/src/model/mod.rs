//! The mixture-density autoencoder: a convolutional encoder feeding four
//! dense heads (component weights, means, deviations, correlations), a
//! density-rendering output layer, MSLE loss, and hand-derived gradients
//! for every weight.

pub mod checkpoint;
pub mod encoder;

use serde::{Deserialize, Serialize};

use crate::error::{DivergenceCause, Error, Result};
use crate::mixture::{
    self, rho_len, GridSpec, MixtureParams, PreparedComponent,
};
use crate::numerics::activation::{
    relu_deriv_from_pre, sigmoid, sigmoid_deriv_from_output, softmax, softmax_vjp, tanh_act,
    tanh_deriv_from_output,
};
use crate::numerics::{hash_f64s, inverse_small, tree_sum_by, CounterRng, Tensor};

pub use encoder::{encode_cached, EncodeCache};

/// One convolutional layer's architecture: cubic kernel and filter count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub filters: usize,
}

/// Architecture descriptor; fully determines weight shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input dimensionality (1..=3).
    pub n: usize,
    /// Mixture component count.
    pub k: usize,
    /// Voxels per axis.
    pub side: usize,
    /// Latent width.
    pub latent: usize,
    /// Convolution stack, applied in order before the dense projection.
    pub conv: Vec<ConvSpec>,
}

impl ModelConfig {
    /// Small profile that trains in seconds on a CPU.
    pub fn desk() -> Self {
        ModelConfig {
            n: 3,
            k: 8,
            side: 8,
            latent: 32,
            conv: vec![ConvSpec { kernel: 3, filters: 8 }],
        }
    }

    /// Full-size profile: cubes of 16, 50 components, three conv layers
    /// of 32 filters (7, 5, 3). Slow without accelerators.
    pub fn paper() -> Self {
        ModelConfig {
            n: 3,
            k: 50,
            side: 16,
            latent: 128,
            conv: vec![
                ConvSpec { kernel: 7, filters: 32 },
                ConvSpec { kernel: 5, filters: 32 },
                ConvSpec { kernel: 3, filters: 32 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n) {
            return Err(Error::InvalidParameter(format!(
                "model dimensionality must be 1..=3, got {}",
                self.n
            )));
        }
        if self.k == 0 || self.latent == 0 || self.side < 2 {
            return Err(Error::InvalidParameter(
                "component count, latent width, and side must be positive".into(),
            ));
        }
        let mut extent = self.side;
        for c in &self.conv {
            if c.kernel == 0 || c.filters == 0 {
                return Err(Error::InvalidParameter("degenerate conv spec".into()));
            }
            if extent < c.kernel {
                return Err(Error::InvalidParameter(format!(
                    "conv stack shrinks extent below kernel size {}",
                    c.kernel
                )));
            }
            extent = extent - c.kernel + 1;
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::unit(self.n, self.side)
    }

    /// Spatial extent after the conv stack.
    fn final_extent(&self) -> usize {
        self.conv.iter().fold(self.side, |e, c| e - c.kernel + 1)
    }

    /// Flattened width entering the dense projection.
    pub fn flat_len(&self) -> usize {
        let ch = self.conv.last().map(|c| c.filters).unwrap_or(1);
        self.final_extent().pow(self.n as u32) * ch
    }

    /// Output widths of the four heads: weights, means, deviations,
    /// correlations.
    pub fn head_dims(&self) -> [usize; 4] {
        [
            self.k,
            self.k * self.n,
            self.k * self.n,
            self.k * rho_len(self.n),
        ]
    }
}

/// Mixture parameters estimated per input: (n^2 + 3n + 2) / 2 per
/// component.
pub fn param_count(n: usize, k: usize) -> usize {
    (n * n + 3 * n + 2) * k / 2
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    /// Shape [kernel; n] ++ [in_ch, out_ch].
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// Shape [out, in].
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            w: Tensor::zeros(&[out, inp]),
            b: Tensor::zeros(&[out]),
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.b.len(), x.len());
        let w = self.w.data();
        let b = self.b.data();
        (0..out)
            .map(|r| {
                let mut acc = b[r];
                for (wv, xv) in w[r * inp..(r + 1) * inp].iter().zip(x) {
                    acc += wv * xv;
                }
                acc
            })
            .collect()
    }
}

/// All weights and biases, in the canonical (checkpoint) order:
/// conv layers, projection, then the alpha/mu/sigma/rho heads.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub conv: Vec<ConvLayer>,
    pub proj: Dense,
    pub head_alpha: Dense,
    pub head_mu: Dense,
    pub head_sigma: Dense,
    pub head_rho: Dense,
}

impl ModelWeights {
    /// Zero-valued weights with the shapes implied by the config.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut conv = Vec::with_capacity(config.conv.len());
        let mut in_ch = 1;
        for spec in &config.conv {
            let mut shape = vec![spec.kernel; config.n];
            shape.push(in_ch);
            shape.push(spec.filters);
            conv.push(ConvLayer {
                kernel: spec.kernel,
                in_ch,
                out_ch: spec.filters,
                w: Tensor::zeros(&shape),
                b: Tensor::zeros(&[spec.filters]),
            });
            in_ch = spec.filters;
        }
        let [da, dm, ds, dr] = config.head_dims();
        Ok(ModelWeights {
            config: config.clone(),
            conv,
            proj: Dense::zeros(config.latent, config.flat_len()),
            head_alpha: Dense::zeros(da, config.latent),
            head_mu: Dense::zeros(dm, config.latent),
            head_sigma: Dense::zeros(ds, config.latent),
            head_rho: Dense::zeros(dr, config.latent),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config already validated")
    }

    /// Tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.conv {
            out.push(&l.w);
            out.push(&l.b);
        }
        for d in [
            &self.proj,
            &self.head_alpha,
            &self.head_mu,
            &self.head_sigma,
            &self.head_rho,
        ] {
            out.push(&d.w);
            out.push(&d.b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.conv {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for d in [
            &mut self.proj,
            &mut self.head_alpha,
            &mut self.head_mu,
            &mut self.head_sigma,
            &mut self.head_rho,
        ] {
            out.push(&mut d.w);
            out.push(&mut d.b);
        }
        out
    }

    /// Human-readable names of the canonical weight groups.
    pub fn group_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, _) in self.conv.iter().enumerate() {
            out.push(format!("conv{i}.w"));
            out.push(format!("conv{i}.b"));
        }
        for name in ["proj", "head_alpha", "head_mu", "head_sigma", "head_rho"] {
            out.push(format!("{name}.w"));
            out.push(format!("{name}.b"));
        }
        out
    }

    /// Total scalar weight count.
    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenate all tensors into one flat vector (canonical order).
    pub fn to_flat(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len());
        for t in self.tensors() {
            data.extend_from_slice(t.data());
        }
        Tensor::from_flat(data)
    }

    /// Overwrite all tensors from a flat vector (canonical order).
    pub fn assign_from_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.len()],
                actual: vec![flat.len()],
            });
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let l = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + l]);
            off += l;
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of every weight, canonical order.
    pub fn weight_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in self.tensors() {
            h ^= hash_f64s(t.data());
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// First non-finite weight, if any.
    pub fn nonfinite_cause(&self) -> Option<DivergenceCause> {
        let mut saw_inf = false;
        for t in self.tensors() {
            match t.nonfinite_cause() {
                Some(DivergenceCause::NaN) => return Some(DivergenceCause::NaN),
                Some(_) => saw_inf = true,
                None => {}
            }
        }
        saw_inf.then_some(DivergenceCause::Inf)
    }
}

/// Deterministic fan-scaled uniform initialization; biases are zero.
/// Each tensor draws from its own PRNG stream, so the layout of one
/// layer never shifts another's values.
pub fn init_weights(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    let mut w = ModelWeights::zeros(config)?;
    let kernel_volume = |kernel: usize| kernel.pow(config.n as u32);

    let mut fans: Vec<Option<(usize, usize)>> = Vec::new();
    for l in &w.conv {
        let kv = kernel_volume(l.kernel);
        fans.push(Some((kv * l.in_ch, kv * l.out_ch)));
        fans.push(None); // bias
    }
    fans.push(Some((config.flat_len(), config.latent)));
    fans.push(None);
    for head_dim in config.head_dims() {
        fans.push(Some((config.latent, head_dim)));
        fans.push(None);
    }

    for (idx, (t, fan)) in w.tensors_mut().into_iter().zip(fans).enumerate() {
        if let Some((fan_in, fan_out)) = fan {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng =
                CounterRng::new(seed, crate::numerics::streams::WEIGHT_INIT | idx as u64);
            for v in t.data_mut() {
                *v = rng.uniform_in(-a, a);
            }
        }
    }
    Ok(w)
}

/// Latent vector for an input volume.
pub fn encode(x: &Tensor, w: &ModelWeights) -> Result<Vec<f64>> {
    Ok(encode_cached(x, w)?.latent)
}

/// Map a latent vector through the four parameter heads.
///
/// Softmax keeps the weights on the simplex, tanh keeps means inside the
/// domain, sigmoid keeps deviations and correlations in (0, 1).
pub fn heads(y: &[f64], w: &ModelWeights) -> MixtureParams {
    let alpha = softmax(&w.head_alpha.apply(y));
    let mu: Vec<f64> = w.head_mu.apply(y).iter().map(|&v| tanh_act(v)).collect();
    let sigma: Vec<f64> = w.head_sigma.apply(y).iter().map(|&v| sigmoid(v)).collect();
    let rho: Vec<f64> = w.head_rho.apply(y).iter().map(|&v| sigmoid(v)).collect();
    MixtureParams {
        n: w.config.n,
        k: w.config.k,
        alpha,
        mu,
        sigma,
        rho,
    }
}

/// Mean squared logarithmic error: mean of (ln(1+p) - ln(1+t))^2.
pub fn msle(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            expected: target.shape().to_vec(),
            actual: pred.shape().to_vec(),
        });
    }
    let p = pred.data();
    let t = target.data();
    if p.iter().chain(t.iter()).any(|&v| v <= -1.0) {
        return Err(Error::InvalidParameter(
            "msle requires all entries > -1".into(),
        ));
    }
    let v = p.len();
    let sum = tree_sum_by(v, |i| {
        let d = p[i].ln_1p() - t[i].ln_1p();
        d * d
    })?;
    Ok(sum / v as f64)
}

/// Result of a full forward pass.
pub struct ForwardPass {
    pub reconstruction: Tensor,
    pub params: MixtureParams,
    pub loss: f64,
}

fn prepare_or_diverge(params: &MixtureParams) -> Result<Vec<PreparedComponent>> {
    mixture::prepare_components(params).map_err(|e| match e {
        Error::JitterExhausted | Error::NotPositiveDefinite { .. } => {
            Error::Divergence(DivergenceCause::PdFailure)
        }
        other => other,
    })
}

/// Encode, estimate parameters, render the density map, and compare it
/// with the input.
pub fn forward(x: &Tensor, w: &ModelWeights, grid: &GridSpec) -> Result<ForwardPass> {
    let cache = encode_cached(x, w)?;
    let params = heads(&cache.latent, w);
    let comps = prepare_or_diverge(&params)?;
    let reconstruction = mixture::render_prepared(&comps, grid);
    let loss = msle(&reconstruction, x)?;
    Ok(ForwardPass {
        reconstruction,
        params,
        loss,
    })
}

/// Gradient of the MSLE loss with respect to every weight and bias.
///
/// Density partials flow through the explicit covariance inverse
/// (closed form for n <= 3); voxel reductions use the pairwise tree, so
/// the result is bitwise reproducible. Returns the gradients and the
/// forward loss.
pub fn backward(x: &Tensor, w: &ModelWeights, grid: &GridSpec) -> Result<(ModelWeights, f64)> {
    let cfg = &w.config;
    let n = cfg.n;
    let k = cfg.k;
    let p_len = rho_len(n);

    let cache = encode_cached(x, w)?;
    let params = heads(&cache.latent, w);
    let comps = prepare_or_diverge(&params)?;
    let recon = mixture::render_prepared(&comps, grid);
    let loss = msle(&recon, x)?;

    let v = grid.voxel_count();
    let rv = recon.data();
    let tv = x.data();
    // d loss / d r_v
    let dr: Vec<f64> = (0..v)
        .map(|i| 2.0 / v as f64 * (rv[i].ln_1p() - tv[i].ln_1p()) / (1.0 + rv[i]))
        .collect();

    let mut grads = w.zeros_like();

    // density partials per component, reduced over voxels
    let mut d_alpha = vec![0.0; k];
    let mut d_mu = vec![0.0; k * n];
    let mut d_sigma = vec![0.0; k * n];
    let mut d_rho = vec![0.0; k * p_len];

    let mut centers = vec![0.0; n];
    let mut nvals = vec![0.0; v];
    let mut pd = vec![0.0; v * n];
    for c in 0..k {
        let comp = &comps[c];
        let prec = inverse_small(&comp.cov)?;
        for vx in 0..v {
            grid.center_of_flat(vx, &mut centers);
            let d: Vec<f64> = centers.iter().zip(comp.mu.iter()).map(|(a, b)| a - b).collect();
            nvals[vx] = comp.pdf(&centers);
            for a in 0..n {
                let mut acc = 0.0;
                for b in 0..n {
                    acc += prec.get(a, b) * d[b];
                }
                pd[vx * n + a] = acc;
            }
        }

        d_alpha[c] = tree_sum_by(v, |vx| dr[vx] * nvals[vx])?;

        let alpha_c = params.alpha[c];
        for a in 0..n {
            d_mu[c * n + a] =
                alpha_c * tree_sum_by(v, |vx| dr[vx] * nvals[vx] * pd[vx * n + a])?;
        }

        // dL/dSigma_ab treating the n^2 entries as independent
        let mut g = vec![0.0; n * n];
        for a in 0..n {
            for b in a..n {
                let p_ab = prec.get(a, b);
                let val = alpha_c
                    * 0.5
                    * tree_sum_by(v, |vx| {
                        dr[vx] * nvals[vx] * (pd[vx * n + a] * pd[vx * n + b] - p_ab)
                    })?;
                g[a * n + b] = val;
                g[b * n + a] = val;
            }
        }

        let sig = params.component_sigma(c);
        let rho = params.component_rho(c);
        for i in 0..n {
            let mut acc = 2.0 * sig[i] * g[i * n + i];
            for j in 0..n {
                if j != i {
                    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                    acc += 2.0 * g[i * n + j] * rho[mixture::rho_index(n, lo, hi)] * sig[j];
                }
            }
            d_sigma[c * n + i] = acc;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                d_rho[c * p_len + mixture::rho_index(n, i, j)] =
                    2.0 * g[i * n + j] * sig[i] * sig[j];
            }
        }
    }

    // head activation jacobians
    let du_alpha = softmax_vjp(&params.alpha, &d_alpha);
    let du_mu: Vec<f64> = d_mu
        .iter()
        .zip(params.mu.iter())
        .map(|(g, &m)| g * tanh_deriv_from_output(m))
        .collect();
    let du_sigma: Vec<f64> = d_sigma
        .iter()
        .zip(params.sigma.iter())
        .map(|(g, &s)| g * sigmoid_deriv_from_output(s))
        .collect();
    let du_rho: Vec<f64> = d_rho
        .iter()
        .zip(params.rho.iter())
        .map(|(g, &r)| g * sigmoid_deriv_from_output(r))
        .collect();

    // dense heads: dW = du (x) y, db = du, dy += W^T du
    let y = &cache.latent;
    let latent = y.len();
    let mut dy = vec![0.0; latent];
    for (head, grad_head, du) in [
        (&w.head_alpha, &mut grads.head_alpha, &du_alpha),
        (&w.head_mu, &mut grads.head_mu, &du_mu),
        (&w.head_sigma, &mut grads.head_sigma, &du_sigma),
        (&w.head_rho, &mut grads.head_rho, &du_rho),
    ] {
        let wv = head.w.data();
        let gw = grad_head.w.data_mut();
        for (r, &g) in du.iter().enumerate() {
            let row = r * latent;
            for c in 0..latent {
                gw[row + c] += g * y[c];
                dy[c] += wv[row + c] * g;
            }
        }
        grad_head.b.data_mut().copy_from_slice(du);
    }

    // projection and conv stack
    encoder::encode_backward(&cache, w, &dy, &mut grads);

    if let Some(cause) = grads.nonfinite_cause() {
        return Err(Error::Divergence(cause));
    }
    Ok((grads, loss))
}

/// Per-example flat gradient plus loss, for batch reduction.
pub fn backward_flat(x: &Tensor, w: &ModelWeights, grid: &GridSpec) -> Result<(Tensor, f64)> {
    let (grads, loss) = backward(x, w, grid)?;
    Ok((grads.to_flat(), loss))
}

/// Tree-reduced mean gradient over a batch: tree_sum of per-example
/// gradients divided by batch size, bitwise forced by the reduction rule.
pub fn batch_mean_gradient(
    examples: &[&Tensor],
    w: &ModelWeights,
    grid: &GridSpec,
) -> Result<(Tensor, f64)> {
    use crate::numerics::tree_sum_tensors_by;
    let b = examples.len();
    if b == 0 {
        return Err(Error::EmptySequence);
    }
    // per-example flat gradient with the loss appended, reduced together
    let summed = tree_sum_tensors_by(b, |i| {
        let (g, loss) = backward_flat(examples[i], w, grid)?;
        let mut data = g.into_data();
        data.push(loss);
        Ok(Tensor::from_flat(data))
    })?;
    let mut data = summed.into_data();
    let loss_sum = data.pop().expect("loss slot");
    let inv = 1.0 / b as f64;
    for v in &mut data {
        *v *= inv;
    }
    Ok((Tensor::from_flat(data), loss_sum * inv))
}
