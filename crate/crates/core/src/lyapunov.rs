//! Lyapunov functions for constant targets and for general targets, with
//! the pairing identities against the generalized gradient as certificates.
//!
//! For a constant target `α`:
//!
//! * `V(φ)  = ‖φ‖² + (c - 2α)²`
//! * `V₁(φ) = c² - 2αc + Σ v_j²`
//! * `V₂(φ) = c² - 2αc + Σ (w_j² + b_j²)`
//!
//! with `⟨∇V₁, G⟩ = ⟨∇V₂, G⟩ = 4L` and `⟨∇V, G⟩ = 8L`. For a general target
//! the function `‖φ‖² + c²` is used instead.

use crate::exact_calculus::{evaluate, GradientVector};
use crate::numeric;
use crate::shallow_net::{ParamVector, Target};

/// Fixed-order `Σ_i x_i²` over a sub-slice.
fn sq_sum(xs: &[f64]) -> f64 {
    numeric::norm_sq(xs)
}

pub fn v_const(phi: &ParamVector, alpha: f64) -> f64 {
    let shift = phi.c() - 2.0 * alpha;
    phi.norm_sq() + shift * shift
}

/// `(V₁(φ), V₂(φ))`; either may be negative.
pub fn v_split(phi: &ParamVector, alpha: f64) -> (f64, f64) {
    let c = phi.c();
    let head = c * c - 2.0 * alpha * c;
    let v1 = head + sq_sum(phi.outer());
    let v2 = head + (sq_sum(phi.weights()) + sq_sum(phi.biases()));
    (v1, v2)
}

/// `∇V(φ) = 2φ + (0, …, 0, 2(c - 2α))`.
pub fn grad_v(phi: &ParamVector, alpha: f64) -> Vec<f64> {
    let mut g: Vec<f64> = phi.as_slice().iter().map(|x| 2.0 * x).collect();
    let last = g.len() - 1;
    g[last] += 2.0 * (phi.c() - 2.0 * alpha);
    g
}

/// `∇V₁(φ) = 2(0, …, 0, v_1, …, v_H, c - α)`.
pub fn grad_v1(phi: &ParamVector, alpha: f64) -> Vec<f64> {
    let h = phi.hidden();
    let mut g = vec![0.0; 3 * h + 1];
    for j in 0..h {
        g[2 * h + j] = 2.0 * phi.v(j);
    }
    g[3 * h] = 2.0 * (phi.c() - alpha);
    g
}

/// `∇V₂(φ) = 2(w_1, …, w_H, b_1, …, b_H, 0, …, 0, c - α)`.
pub fn grad_v2(phi: &ParamVector, alpha: f64) -> Vec<f64> {
    let h = phi.hidden();
    let mut g = vec![0.0; 3 * h + 1];
    for j in 0..h {
        g[j] = 2.0 * phi.w(j);
        g[h + j] = 2.0 * phi.b(j);
    }
    g[3 * h] = 2.0 * (phi.c() - alpha);
    g
}

/// `V(φ) = ‖φ‖² + c²`, the Lyapunov-type function for general targets.
pub fn v_general(phi: &ParamVector) -> f64 {
    phi.norm_sq() + phi.c() * phi.c()
}

/// `∇(‖φ‖² + c²) = 2(w, b, v, 2c)`.
pub fn grad_v_general(phi: &ParamVector) -> Vec<f64> {
    let mut g: Vec<f64> = phi.as_slice().iter().map(|x| 2.0 * x).collect();
    let last = g.len() - 1;
    g[last] = 4.0 * phi.c();
    g
}

/// Upper end of the norm sandwich `‖φ‖² ≤ V(φ) ≤ 3‖φ‖² + 8α²`.
pub fn sandwich_upper(phi: &ParamVector, alpha: f64) -> f64 {
    3.0 * phi.norm_sq() + 8.0 * alpha * alpha
}

/// `(8‖φ‖² + 4) L(φ)`, the bound on `‖G(φ)‖²`.
pub fn grad_norm_bound(phi: &ParamVector, risk: f64) -> f64 {
    (8.0 * phi.norm_sq() + 4.0) * risk
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    pub v: f64,
    pub pairing_v: f64,
    pub pairing_v1: f64,
    pub pairing_v2: f64,
    pub risk: f64,
    /// `⟨∇V, G⟩ - 8L`
    pub residual_v: f64,
    /// `⟨∇V₁, G⟩ - 4L`
    pub residual_v1: f64,
    /// `⟨∇V₂, G⟩ - 4L`
    pub residual_v2: f64,
    /// `(8‖φ‖² + 4)L - ‖G‖²`
    pub grad_bound_slack: f64,
    pub sandwich_ok: bool,
}

impl LyapunovReport {
    /// Largest pairing residual relative to `1 + L`.
    pub fn max_relative_residual(&self) -> f64 {
        self.residual_v
            .abs()
            .max(self.residual_v1.abs())
            .max(self.residual_v2.abs())
            / (1.0 + self.risk)
    }
}

pub fn certify(phi: &ParamVector, alpha: f64) -> LyapunovReport {
    let eval = evaluate(phi, &Target::Constant(alpha));
    certify_with(phi, alpha, eval.risk, &eval.grad)
}

/// Certificate for a precomputed risk and gradient, which lets callers
/// certify alternative gradient implementations.
pub fn certify_with(phi: &ParamVector, alpha: f64, risk: f64, grad: &GradientVector) -> LyapunovReport {
    let g = grad.as_slice();
    let pairing_v = numeric::dot(&grad_v(phi, alpha), g);
    let pairing_v1 = numeric::dot(&grad_v1(phi, alpha), g);
    let pairing_v2 = numeric::dot(&grad_v2(phi, alpha), g);
    let v = v_const(phi, alpha);
    let norm_sq = phi.norm_sq();
    LyapunovReport {
        v,
        pairing_v,
        pairing_v1,
        pairing_v2,
        risk,
        residual_v: pairing_v - 8.0 * risk,
        residual_v1: pairing_v1 - 4.0 * risk,
        residual_v2: pairing_v2 - 4.0 * risk,
        grad_bound_slack: grad_norm_bound(phi, risk) - grad.norm_sq(),
        sandwich_ok: norm_sq <= v && v <= sandwich_upper(phi, alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(h: usize, data: &[f64]) -> ParamVector {
        ParamVector::new(h, data.to_vec()).unwrap()
    }

    #[test]
    fn v_const_examples() {
        assert_eq!(v_const(&pv(1, &[1.0, 0.0, 1.0, 0.0]), 0.0), 2.0);
        assert_eq!(v_const(&ParamVector::zeros(1), 1.0), 4.0);
    }

    #[test]
    fn v_split_examples() {
        let phi = pv(1, &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(v_split(&phi, 0.0), (1.0, 1.0));
        assert_eq!(v_split(&ParamVector::zeros(1), 1.0), (0.0, 0.0));
        assert_eq!(v_split(&pv(1, &[0.0, 0.0, 0.0, 1.0]), 1.0), (-1.0, -1.0));
        let (v1, v2) = v_split(&phi, 0.0);
        assert_eq!(v1 + v2, v_const(&phi, 0.0));
    }

    #[test]
    fn grad_v_examples() {
        assert_eq!(grad_v(&pv(1, &[1.0, 0.0, 1.0, 0.0]), 0.0), vec![2.0, 0.0, 2.0, 0.0]);
        assert_eq!(
            grad_v(&ParamVector::zeros(2), 1.0),
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -4.0]
        );
        let phi = pv(1, &[0.3, -0.2, 1.1, 0.5]);
        let sum: Vec<f64> = grad_v1(&phi, 0.7)
            .iter()
            .zip(grad_v2(&phi, 0.7))
            .map(|(a, b)| a + b)
            .collect();
        assert_eq!(sum, grad_v(&phi, 0.7));
    }

    #[test]
    fn certify_examples() {
        let rep = certify(&pv(1, &[1.0, 0.0, 1.0, 0.0]), 0.0);
        assert!((rep.pairing_v - 8.0 / 3.0).abs() < 1e-14);
        assert!((rep.risk - 1.0 / 3.0).abs() < 1e-15);
        assert!(rep.residual_v.abs() < 1e-12);
        assert!(rep.sandwich_ok);

        let rep = certify(&ParamVector::zeros(1), 1.0);
        assert_eq!(rep.pairing_v, 8.0);
        assert_eq!(rep.risk, 1.0);
        assert_eq!(rep.residual_v, 0.0);

        // N ≡ 0.5 with an active neuron carrying v = 0
        let rep = certify(&pv(1, &[1.0, 1.0, 0.0, 0.5]), 0.5);
        assert_eq!(rep.risk, 0.0);
        assert_eq!((rep.pairing_v, rep.pairing_v1, rep.pairing_v2), (0.0, 0.0, 0.0));
        assert_eq!(rep.grad_bound_slack, 0.0);
    }

    #[test]
    fn v_general_examples() {
        assert_eq!(v_general(&pv(1, &[1.0, 0.0, 1.0, 0.0])), 2.0);
        assert_eq!(v_general(&pv(1, &[0.0, 0.0, 0.0, 1.0])), 2.0);
        assert_eq!(v_general(&ParamVector::zeros(4)), 0.0);
        assert_eq!(grad_v_general(&pv(1, &[1.0, 2.0, 3.0, 4.0])), vec![2.0, 4.0, 6.0, 16.0]);
    }
}
