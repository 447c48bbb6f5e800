//! Weight updates (SGD, Adam) and learning-rate policies: constant,
//! linear scaling with worker count, and linear scaling with a per-step
//! warmup ramp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::numerics::{nonfinite_cause, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    LinearRule,
    LinearRuleWithWarmup,
}

/// Learning-rate policy. With k = 1 every mode degenerates to the base
/// rate at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub mode: ScheduleMode,
    /// Base learning rate (eta).
    pub base_lr: f64,
    /// Worker-scaling factor.
    pub k: usize,
    /// Length of the warmup ramp, in epochs (may be fractional).
    pub warmup_epochs: f64,
    pub steps_per_epoch: usize,
}

impl Schedule {
    pub fn constant(base_lr: f64) -> Self {
        Schedule {
            mode: ScheduleMode::Constant,
            base_lr,
            k: 1,
            warmup_epochs: 5.0,
            steps_per_epoch: 1,
        }
    }
}

/// Learning rate at a global step.
///
/// The warmup ramp interpolates per step from eta to k*eta across
/// `warmup_epochs` epochs and stays at k*eta afterwards.
pub fn lr_at(schedule: &Schedule, global_step: usize) -> f64 {
    let eta = schedule.base_lr;
    let k = schedule.k as f64;
    match schedule.mode {
        ScheduleMode::Constant => eta,
        ScheduleMode::LinearRule => eta * k,
        ScheduleMode::LinearRuleWithWarmup => {
            let ramp_steps = schedule.warmup_epochs * schedule.steps_per_epoch as f64;
            let frac = if ramp_steps <= 0.0 {
                1.0
            } else {
                (global_step as f64 / ramp_steps).min(1.0)
            };
            eta * (1.0 + (k - 1.0) * frac)
        }
    }
}

/// Bias-corrected Adam state; one accumulator pair per weight tensor,
/// mirroring the canonical weight order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(weights: &ModelWeights) -> Self {
        let shapes: Vec<Tensor> = weights
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        AdamState {
            m: shapes.clone(),
            v: shapes,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Elementwise SGD kernel: w <- w - lr * g.
pub fn sgd_update(w: &mut [f64], g: &[f64], lr: f64) {
    for (wv, gv) in w.iter_mut().zip(g) {
        *wv -= lr * gv;
    }
}

/// Elementwise bias-corrected Adam kernel (no decay).
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    w: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    t: u64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..w.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
}

fn check_weights(w: &ModelWeights) -> Result<()> {
    if let Some(cause) = w.nonfinite_cause() {
        return Err(Error::Divergence(cause));
    }
    Ok(())
}

/// SGD step over structured weights with a flat mean gradient.
pub fn sgd_step(w: &mut ModelWeights, grad_mean: &Tensor, lr: f64) -> Result<()> {
    if grad_mean.len() != w.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![w.len()],
            actual: vec![grad_mean.len()],
        });
    }
    let g = grad_mean.data();
    let mut off = 0;
    for t in w.tensors_mut() {
        let l = t.len();
        sgd_update(t.data_mut(), &g[off..off + l], lr);
        off += l;
    }
    check_weights(w)
}

/// Adam step over structured weights with a flat mean gradient.
pub fn adam_step(
    w: &mut ModelWeights,
    grad_mean: &Tensor,
    lr: f64,
    state: &mut AdamState,
) -> Result<()> {
    if grad_mean.len() != w.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![w.len()],
            actual: vec![grad_mean.len()],
        });
    }
    state.t += 1;
    let g = grad_mean.data();
    let (beta1, beta2, eps, t) = (state.beta1, state.beta2, state.epsilon, state.t);
    let mut off = 0;
    for (idx, wt) in w.tensors_mut().into_iter().enumerate() {
        let l = wt.len();
        adam_update(
            wt.data_mut(),
            state.m[idx].data_mut(),
            state.v[idx].data_mut(),
            &g[off..off + l],
            lr,
            beta1,
            beta2,
            eps,
            t,
        );
        off += l;
    }
    check_weights(w)
}

/// Run k small SGD steps at eta against one step at k*eta, both from the
/// same start, under a caller-supplied gradient function.
///
/// With a w-independent gradient the two paths agree (bitwise whenever
/// the arithmetic incurs no rounding, e.g. dyadic eta and g); with a
/// w-dependent gradient they generally differ. Both endpoints are
/// returned so callers can assert either way.
pub fn verify_linear_rule_equivalence<G: Fn(f64) -> f64>(
    k: usize,
    eta: f64,
    w0: f64,
    grad: G,
) -> (f64, f64) {
    let mut w_small = w0;
    for _ in 0..k {
        w_small -= eta * grad(w_small);
    }
    let w_big = w0 - (k as f64 * eta) * grad(w0);
    (w_small, w_big)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_weights, ConvSpec, ModelConfig};

    fn schedule(mode: ScheduleMode, k: usize) -> Schedule {
        Schedule {
            mode,
            base_lr: 0.00105,
            k,
            warmup_epochs: 5.0,
            steps_per_epoch: 10,
        }
    }

    #[test]
    fn k1_all_modes_equal_eta() {
        // with one worker every scaling strategy behaves the same
        for mode in [
            ScheduleMode::Constant,
            ScheduleMode::LinearRule,
            ScheduleMode::LinearRuleWithWarmup,
        ] {
            let s = schedule(mode, 1);
            for step in [0, 1, 17, 50, 1000] {
                assert_eq!(lr_at(&s, step).to_bits(), 0.00105f64.to_bits());
            }
        }
    }

    #[test]
    fn warmup_endpoints_and_midpoint() {
        let s = schedule(ScheduleMode::LinearRuleWithWarmup, 8);
        assert_eq!(lr_at(&s, 0), 0.00105);
        // ramp is 5 epochs * 10 steps
        let end = lr_at(&s, 50);
        assert!((end - 0.0084).abs() < 1e-15);
        assert_eq!(lr_at(&s, 51), end);
        assert_eq!(lr_at(&s, 5000), end);
        // halfway: exactly (1 + (k-1)/2) * eta
        let mid = lr_at(&s, 25);
        let want = (1.0 + (8.0 - 1.0) / 2.0) * 0.00105;
        assert_eq!(mid.to_bits(), want.to_bits());
    }

    #[test]
    fn warmup_is_monotone_and_continuous() {
        let s = schedule(ScheduleMode::LinearRuleWithWarmup, 4);
        let mut prev = 0.0;
        for step in 0..120 {
            let lr = lr_at(&s, step);
            assert!(lr >= prev);
            // per-step increments are bounded by the ramp slope
            if step > 0 {
                let slope = (s.k as f64 - 1.0) * s.base_lr / 50.0;
                assert!(lr - prev <= slope + 1e-15);
            }
            prev = lr;
        }
        assert_eq!(prev, lr_at(&s, 10_000));
    }

    #[test]
    fn linear_rule_is_k_eta_everywhere() {
        let s = schedule(ScheduleMode::LinearRule, 4);
        for step in [0, 1, 100] {
            assert_eq!(lr_at(&s, step), 0.00105 * 4.0);
        }
    }

    #[test]
    fn sgd_kernel_arithmetic() {
        let mut w = [1.0];
        sgd_update(&mut w, &[2.0], 0.5);
        assert_eq!(w[0], 0.0);
        let mut w = [0.7];
        sgd_update(&mut w, &[0.0], 0.1);
        assert_eq!(w[0], 0.7);
    }

    #[test]
    fn quadratic_stability_boundary() {
        // f(w) = 0.5 w^2, gradient w, curvature 1: the iterate is
        // (1 - lr)^t, so lr = 1.5 contracts and lr = 2.5 explodes.
        let run = |lr: f64, steps: usize| -> f64 {
            let mut w = 1.0;
            for _ in 0..steps {
                let g = w;
                sgd_update(std::slice::from_mut(&mut w), &[g], lr);
            }
            w
        };
        assert!(run(1.5, 100).abs() < 1e-6);
        let mut diverged_at = None;
        let mut w = 1.0;
        for t in 1..=100 {
            let g = w;
            sgd_update(std::slice::from_mut(&mut w), &[g], 2.5);
            if w.abs() > 1e6 {
                diverged_at = Some(t);
                break;
            }
        }
        assert!(diverged_at.is_some(), "lr 2.5 must exceed 1e6 within 100 steps");
    }

    #[test]
    fn quadratic_matches_closed_form() {
        let lr = 0.3;
        let mut w = 1.0;
        for t in 1..=100 {
            let g = w;
            sgd_update(std::slice::from_mut(&mut w), &[g], lr);
            let closed = (1.0 - lr).powi(t);
            assert!(
                (w - closed).abs() / closed.abs().max(1e-300) < 1e-12,
                "step {t}: {w} vs {closed}"
            );
        }
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let cfg = ModelConfig {
            n: 2,
            k: 2,
            side: 4,
            latent: 3,
            conv: vec![ConvSpec { kernel: 2, filters: 2 }],
        };
        let mut w = init_weights(&cfg, 5).unwrap();
        let before = w.weight_hash();
        let mut state = AdamState::new(&w);
        let zeros = Tensor::zeros(&[w.len()]);
        for _ in 0..3 {
            adam_step(&mut w, &zeros, 0.01, &mut state).unwrap();
        }
        assert_eq!(w.weight_hash(), before);
        assert_eq!(state.t, 3);
    }

    #[test]
    fn adam_first_step_hand_evaluated() {
        // w=1, g=1, lr=0.001: m_hat = v_hat = 1, update = lr/(1+eps)
        let mut w = [1.0];
        let mut m = [0.0];
        let mut v = [0.0];
        adam_update(&mut w, &mut m, &mut v, &[1.0], 0.001, 0.9, 0.999, 1e-8, 1);
        let want = 1.0 - 0.001 * (1.0 / (1.0 + 1e-8));
        assert_eq!(w[0].to_bits(), want.to_bits());
        assert!((w[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // on step one m_hat/sqrt(v_hat) = sign(g) for any |g| >> eps
        for g in [1e-6, 0.3, 42.0, 1e4] {
            let mut w = [0.0];
            let mut m = [0.0];
            let mut v = [0.0];
            adam_update(&mut w, &mut m, &mut v, &[g], 0.01, 0.9, 0.999, 1e-8, 1);
            assert!((w[0].abs() - 0.01).abs() < 1e-6, "g={g}: step {}", w[0]);
        }
    }

    #[test]
    fn divergent_update_is_flagged() {
        let cfg = ModelConfig {
            n: 1,
            k: 1,
            side: 4,
            latent: 2,
            conv: vec![],
        };
        let mut w = init_weights(&cfg, 1).unwrap();
        let mut g = Tensor::zeros(&[w.len()]);
        g.data_mut()[0] = f64::INFINITY;
        assert!(matches!(
            sgd_step(&mut w, &g, 0.1),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn constant_gradient_paths_agree_bitwise_for_dyadic_values() {
        // eta and g powers of two: no rounding anywhere, so the algebraic
        // identity holds exactly
        for k in [2usize, 4, 8] {
            let (small, big) = verify_linear_rule_equivalence(k, 0.25, 1.0, |_| 0.5);
            assert_eq!(small.to_bits(), big.to_bits(), "k = {k}");
        }
        // k = 1: identical by construction
        let (small, big) = verify_linear_rule_equivalence(1, 0.1, 0.7, |_| 0.3);
        assert_eq!(small.to_bits(), big.to_bits());
    }

    #[test]
    fn quadratic_gradient_separates_the_paths() {
        // g = w, eta = 0.1, k = 2: two small steps land on 0.81, one big
        // step lands on 0.80, exactly
        let (small, big) = verify_linear_rule_equivalence(2, 0.1, 1.0, |w| w);
        assert_eq!(small, 0.81);
        assert_eq!(big, 0.80);
    }
}
