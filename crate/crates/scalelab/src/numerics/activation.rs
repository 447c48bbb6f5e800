//! Activation functions and their derivative evaluations.

/// Softmax with max-subtraction for stability. Output sums to 1.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / total).collect()
}

/// Vector-Jacobian product of softmax: given output `y` and upstream
/// gradient `dy`, returns the gradient with respect to the logits.
pub fn softmax_vjp(y: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
    y.iter().zip(dy.iter()).map(|(&yi, &di)| yi * (di - dot)).collect()
}

pub fn tanh_act(x: f64) -> f64 {
    x.tanh()
}

/// d tanh / dx expressed through the output value.
pub fn tanh_deriv_from_output(y: f64) -> f64 {
    1.0 - y * y
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d sigmoid / dx expressed through the output value.
pub fn sigmoid_deriv_from_output(y: f64) -> f64 {
    y * (1.0 - y)
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Subgradient 0 at the kink.
pub fn relu_deriv_from_pre(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::CounterRng;

    fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn softmax_uniform_over_50() {
        let y = softmax(&vec![0.0; 50]);
        for v in &y {
            assert!((v - 0.02).abs() < 1e-15);
        }
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_closed_form() {
        let y = softmax(&[1.0f64.ln(), 3.0f64.ln()]);
        assert!((y[0] - 0.25).abs() < 1e-15);
        assert!((y[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_handles_large_inputs() {
        let y = softmax(&[1000.0, 1000.0, 999.0]);
        assert!(y.iter().all(|v| v.is_finite()));
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn values_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh_act(0.0), 0.0);
        assert_eq!(relu(0.0), 0.0);
    }

    #[test]
    fn ranges() {
        let mut rng = CounterRng::new(2, 0);
        for _ in 0..1000 {
            let x = rng.uniform_in(-40.0, 40.0);
            let t = tanh_act(x);
            let s = sigmoid(x);
            assert!((-1.0..=1.0).contains(&t));
            assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn scalar_derivatives_match_central_differences() {
        let mut rng = CounterRng::new(7, 0);
        let h = 1e-6;
        for _ in 0..1000 {
            let x = rng.uniform_in(-3.0, 3.0);
            let dt = tanh_deriv_from_output(tanh_act(x));
            let ds = sigmoid_deriv_from_output(sigmoid(x));
            let nt = central_diff(tanh_act, x, h);
            let ns = central_diff(sigmoid, x, h);
            assert!((dt - nt).abs() / nt.abs().max(1e-3) < 1e-7, "tanh at {x}");
            assert!((ds - ns).abs() / ns.abs().max(1e-3) < 1e-7, "sigmoid at {x}");
        }
    }

    #[test]
    fn softmax_vjp_matches_directional_difference() {
        let mut rng = CounterRng::new(13, 0);
        let h = 1e-6;
        for _ in 0..200 {
            let x: Vec<f64> = (0..5).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            let dir: Vec<f64> = (0..5).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let up: Vec<f64> = (0..5).map(|_| rng.uniform_in(-1.0, 1.0)).collect();

            let y = softmax(&x);
            let grad = softmax_vjp(&y, &up);
            let analytic: f64 = grad.iter().zip(dir.iter()).map(|(g, d)| g * d).sum();

            let probe = |t: f64| -> f64 {
                let shifted: Vec<f64> =
                    x.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
                softmax(&shifted)
                    .iter()
                    .zip(up.iter())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let numeric = (probe(h) - probe(-h)) / (2.0 * h);
            assert!(
                (analytic - numeric).abs() / numeric.abs().max(1e-3) < 1e-6,
                "{analytic} vs {numeric}"
            );
        }
    }
}
