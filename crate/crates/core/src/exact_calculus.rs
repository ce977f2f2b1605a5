//! Closed-form risk and generalized gradient.
//!
//! `[0, 1]` is split at every network kink and every target breakpoint. On
//! each resulting segment the realization is affine, the target is a single
//! polynomial and the active set of hidden units is fixed, so every integral
//! reduces to antiderivatives of polynomials.

use std::ops::Index;

use crate::numeric;
use crate::poly::Polynomial;
use crate::shallow_net::{
    active_interval, affine_on, partition_points, piecewise_form, raw_kinks, ParamVector, Target,
};

/// Gradient with the same `(w, b, v, c)` index map as [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    hidden: usize,
    data: Vec<f64>,
}

impl GradientVector {
    pub fn from_parts(hidden: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), 3 * hidden + 1, "gradient layout mismatch");
        Self { hidden, data }
    }

    pub fn zeros(hidden: usize) -> Self {
        Self::from_parts(hidden, vec![0.0; 3 * hidden + 1])
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn w(&self, j: usize) -> f64 {
        self.data[j]
    }

    pub fn b(&self, j: usize) -> f64 {
        self.data[self.hidden + j]
    }

    pub fn v(&self, j: usize) -> f64 {
        self.data[2 * self.hidden + j]
    }

    pub fn c(&self) -> f64 {
        self.data[3 * self.hidden]
    }

    pub fn norm_sq(&self) -> f64 {
        numeric::norm_sq(&self.data)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn negated(&self) -> Self {
        Self::from_parts(self.hidden, self.data.iter().map(|x| -x).collect())
    }
}

impl Index<usize> for GradientVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

/// Risk and gradient from one pass over the segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub risk: f64,
    pub grad: GradientVector,
}

/// `∫_left^right x^k · residual(x) dx`, exactly.
pub fn segment_moment(left: f64, right: f64, residual: &Polynomial, k: usize) -> f64 {
    debug_assert!(left <= right);
    residual.integrate_shifted(left, right, k)
}

struct Segment {
    left: f64,
    right: f64,
    residual: Polynomial,
    mid: f64,
}

fn segments(phi: &ParamVector, target: &Target) -> Vec<Segment> {
    let mut cuts = raw_kinks(phi);
    cuts.extend_from_slice(target.interior_breakpoints());
    let points = partition_points(cuts);
    points
        .windows(2)
        .map(|pair| {
            let (left, right) = (pair[0], pair[1]);
            let mid = 0.5 * (left + right);
            let (slope, intercept) = affine_on(phi, mid);
            let residual = Polynomial::affine(slope, intercept).sub(&target.polynomial_at(mid));
            Segment {
                left,
                right,
                residual,
                mid,
            }
        })
        .collect()
}

/// `L(φ) = ∫_0^1 (N(x) - f(x))^2 dx`.
pub fn risk_exact(phi: &ParamVector, target: &Target) -> f64 {
    segments(phi, target)
        .iter()
        .map(|s| s.residual.mul(&s.residual).integrate(s.left, s.right))
        .sum::<f64>()
        .max(0.0)
}

/// Generalized gradient `G(φ)`.
///
/// Constant targets are the degree-0 case of the general formula:
/// `G_{w_j} = 2 v_j ∫ x r 1{w_j x + b_j > 0}`, `G_{b_j} = 2 v_j ∫ r 1{…}`,
/// `G_{v_j} = 2 ∫ max(w_j x + b_j, 0) r`, `G_c = 2 ∫ r` with `r = N - f`.
pub fn grad_exact(phi: &ParamVector, target: &Target) -> GradientVector {
    evaluate(phi, target).grad
}

pub fn evaluate(phi: &ParamVector, target: &Target) -> Evaluation {
    let h = phi.hidden();
    let mut risk = 0.0;
    let mut m0_active = vec![0.0; h];
    let mut m1_active = vec![0.0; h];
    let mut touched = vec![false; h];
    let mut m0_total = 0.0;

    for s in segments(phi, target) {
        let m0 = segment_moment(s.left, s.right, &s.residual, 0);
        let m1 = segment_moment(s.left, s.right, &s.residual, 1);
        risk += s.residual.mul(&s.residual).integrate(s.left, s.right);
        m0_total += m0;
        for j in 0..h {
            if phi.w(j) * s.mid + phi.b(j) > 0.0 {
                touched[j] = true;
                m0_active[j] += m0;
                m1_active[j] += m1;
            }
        }
    }

    let mut data = vec![0.0; 3 * h + 1];
    for j in 0..h {
        if !touched[j] {
            // empty active interval: all three integrals vanish
            continue;
        }
        let v = phi.v(j);
        data[j] = 2.0 * v * m1_active[j];
        data[h + j] = 2.0 * v * m0_active[j];
        data[2 * h + j] = 2.0 * (phi.w(j) * m1_active[j] + phi.b(j) * m0_active[j]);
    }
    data[3 * h] = 2.0 * m0_total;

    Evaluation {
        risk: risk.max(0.0),
        grad: GradientVector::from_parts(h, data),
    }
}

/// Constant-target gradient computed neuron by neuron over the active
/// interval `I_j`, intersected with the affine pieces of the realization.
///
/// This is a second route to [`grad_exact`] kept for cross-checking.
pub fn grad_exact_constant(phi: &ParamVector, alpha: f64) -> GradientVector {
    let h = phi.hidden();
    let form = piecewise_form(phi);
    let residuals: Vec<(f64, f64, Polynomial)> = form
        .segments
        .iter()
        .map(|s| (s.left, s.right, Polynomial::affine(s.slope, s.intercept - alpha)))
        .collect();
    let over = |lo: f64, hi: f64, k: usize| -> f64 {
        residuals
            .iter()
            .map(|(a, b, r)| {
                let (a, b) = (a.max(lo), b.min(hi));
                if a < b {
                    segment_moment(a, b, r, k)
                } else {
                    0.0
                }
            })
            .sum()
    };

    let mut data = vec![0.0; 3 * h + 1];
    for j in 0..h {
        let Some((lo, hi)) = active_interval(phi.w(j), phi.b(j)).bounds() else {
            continue;
        };
        let (m0, m1) = (over(lo, hi, 0), over(lo, hi, 1));
        data[j] = 2.0 * phi.v(j) * m1;
        data[h + j] = 2.0 * phi.v(j) * m0;
        data[2 * h + j] = 2.0 * (phi.w(j) * m1 + phi.b(j) * m0);
    }
    data[3 * h] = 2.0 * over(0.0, 1.0, 0);
    GradientVector::from_parts(h, data)
}

/// `∫_0^1 f(x)^2 dx`.
pub fn target_l2_sq(target: &Target) -> f64 {
    match target {
        Target::Constant(alpha) => alpha * alpha,
        Target::Piecewise(p) => p
            .breakpoints()
            .windows(2)
            .zip(p.pieces())
            .map(|(w, poly)| poly.mul(poly).integrate(w[0], w[1]))
            .sum(),
    }
}

/// `∫_0^1 N(x) (N(x) - f(x)) dx`, the dissipation density of `‖φ‖² + c²`
/// along the flow (up to the factor 8).
pub fn output_pairing(phi: &ParamVector, target: &Target) -> f64 {
    segments(phi, target)
        .iter()
        .map(|s| {
            let (slope, intercept) = affine_on(phi, s.mid);
            Polynomial::affine(slope, intercept)
                .mul(&s.residual)
                .integrate(s.left, s.right)
        })
        .sum()
}
