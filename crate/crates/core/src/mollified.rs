//! Smooth rectifier family `σ_r(x) = r⁻¹ ln(1 + r⁻¹ e^{r x})`, the
//! corresponding risk `L_r` and its gradient by composite Gauss–Legendre
//! quadrature.
//!
//! The transition layer of `σ_r` sits at `x = ln(r) / r` and has width
//! `O(1/r)`. Panels are graded geometrically around the image of that layer
//! for every hidden unit, inwards for `refinement_levels` halvings and
//! outwards until the panel reaches the edge of `[0, 1]`.

use crate::error::{Error, Result};
use crate::exact_calculus::{grad_exact, GradientVector};
use crate::numeric;
use crate::quadrature::GaussLegendre;
use crate::shallow_net::{ParamVector, Target};

/// `|r x|` above which the algebraically rearranged branches are used.
pub const BRANCH_THRESHOLD: f64 = 30.0;

/// Smallest positive subnormal. Values of `σ_r` and `σ_r'` whose true value
/// lies below it are rounded up to it instead of to zero.
const TINY: f64 = f64::from_bits(1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Gauss–Legendre order per panel.
    pub nodes_per_panel: usize,
    /// Uniform panels covering `[0, 1]` before refinement.
    pub base_panels: usize,
    /// Half-width of the refined layer in pre-activation units, as a multiple
    /// of `1/r`.
    pub kink_width_factor: f64,
    /// Dyadic halvings inside the layer.
    pub refinement_levels: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_per_panel: 16,
            base_panels: 8,
            kink_width_factor: 10.0,
            refinement_levels: 4,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_panel < 2 {
            return Err(Error::Domain("nodes_per_panel must be at least 2".into()));
        }
        if self.base_panels < 1 {
            return Err(Error::Domain("base_panels must be at least 1".into()));
        }
        if !(self.kink_width_factor.is_finite() && self.kink_width_factor > 0.0) {
            return Err(Error::Domain("kink_width_factor must be positive".into()));
        }
        Ok(())
    }
}

fn check_r(r: f64) -> Result<()> {
    if r.is_finite() && r >= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("mollifier index r = {r} must lie in [1, ∞)")))
    }
}

pub fn sigma_r(r: f64, x: f64) -> Result<f64> {
    check_r(r)?;
    Ok(sigma(r, x))
}

/// `σ_r'(x) = 1 / (1 + r e^{-r x})`.
pub fn sigma_r_prime(r: f64, x: f64) -> Result<f64> {
    check_r(r)?;
    Ok(sigma_prime(r, x))
}

/// `1 - σ_r'(x) = r e^{-r x} / (1 + r e^{-r x})`, accurate where `σ_r'`
/// rounds to 1.
pub fn sigma_r_prime_complement(r: f64, x: f64) -> Result<f64> {
    check_r(r)?;
    let z = r * x;
    let value = if z > BRANCH_THRESHOLD {
        let t = r * (-z).exp();
        t / (1.0 + t)
    } else {
        1.0 / (1.0 + z.exp() / r)
    };
    Ok(value.max(TINY))
}

fn sigma(r: f64, x: f64) -> f64 {
    let z = r * x;
    let value = if z > BRANCH_THRESHOLD {
        x + (1.0 / r + (-z).exp()).ln() / r
    } else {
        (z.exp() / r).ln_1p() / r
    };
    value.max(TINY)
}

fn sigma_prime(r: f64, x: f64) -> f64 {
    let z = r * x;
    let value = if z < -BRANCH_THRESHOLD {
        let e = z.exp();
        e / (e + r)
    } else {
        1.0 / (1.0 + r * (-z).exp())
    };
    value.max(TINY)
}

/// Panel boundaries on `[0, 1]` for the mollified integrands of `φ`.
pub fn panel_points(phi: &ParamVector, r: f64, q: &QuadratureConfig) -> Vec<f64> {
    let mut points: Vec<f64> = (0..=q.base_panels).map(|k| k as f64 / q.base_panels as f64).collect();
    let shift = r.ln() / r;
    for j in 0..phi.hidden() {
        let w = phi.w(j);
        if w == 0.0 {
            continue;
        }
        let center = (shift - phi.b(j)) / w;
        let delta = q.kink_width_factor / (r * w.abs());
        if !center.is_finite() || !delta.is_finite() {
            continue;
        }
        points.push(center);
        let mut offset = delta;
        for _ in 0..=q.refinement_levels {
            points.push(center - offset);
            points.push(center + offset);
            offset *= 0.5;
        }
        let reach = (center - 0.0).abs().max((center - 1.0).abs());
        let mut offset = 2.0 * delta;
        while offset < reach {
            points.push(center - offset);
            points.push(center + offset);
            offset *= 2.0;
        }
    }
    points.retain(|&t| (0.0..=1.0).contains(&t));
    points.sort_by(f64::total_cmp);
    points.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    if let Some(last) = points.last_mut() {
        *last = 1.0;
    }
    points[0] = 0.0;
    points
}

/// Integrates `f(x, pre-activations)` over `[0, 1]` on the graded mesh.
fn integrate_mesh<F>(phi: &ParamVector, r: f64, q: &QuadratureConfig, mut f: F)
where
    F: FnMut(f64, f64),
{
    let rule = GaussLegendre::new(q.nodes_per_panel);
    for pair in panel_points(phi, r, q).windows(2) {
        for (x, w) in rule.mapped(pair[0], pair[1]) {
            f(x, w);
        }
    }
}

/// `L_r(φ) = ∫_0^1 (N_r(x) - α)^2 dx`.
pub fn risk_mollified(phi: &ParamVector, r: f64, alpha: f64, q: &QuadratureConfig) -> Result<f64> {
    check_r(r)?;
    q.validate()?;
    let mut acc = 0.0;
    integrate_mesh(phi, r, q, |x, weight| {
        let mut n = phi.c();
        for j in 0..phi.hidden() {
            n += phi.v(j) * sigma(r, phi.w(j) * x + phi.b(j));
        }
        acc += weight * (n - alpha) * (n - alpha);
    });
    Ok(acc.max(0.0))
}

/// `∇L_r(φ)` from the differentiated integrands.
pub fn grad_mollified(phi: &ParamVector, r: f64, alpha: f64, q: &QuadratureConfig) -> Result<GradientVector> {
    check_r(r)?;
    q.validate()?;
    let h = phi.hidden();
    let mut data = vec![0.0; 3 * h + 1];
    let mut act = vec![0.0; h];
    let mut slope = vec![0.0; h];
    integrate_mesh(phi, r, q, |x, weight| {
        let mut n = phi.c();
        for j in 0..h {
            let z = phi.w(j) * x + phi.b(j);
            act[j] = sigma(r, z);
            slope[j] = sigma_prime(r, z);
            n += phi.v(j) * act[j];
        }
        let res = weight * (n - alpha);
        for j in 0..h {
            let common = phi.v(j) * slope[j] * res;
            data[j] += x * common;
            data[h + j] += common;
            data[2 * h + j] += act[j] * res;
        }
        data[3 * h] += res;
    });
    for g in &mut data {
        *g *= 2.0;
    }
    Ok(GradientVector::from_parts(h, data))
}

/// `‖∇L_r(φ) - G(φ)‖` for each `r` in an increasing list.
pub fn limit_gap_sweep(phi: &ParamVector, alpha: f64, rs: &[f64], q: &QuadratureConfig) -> Result<Vec<(f64, f64)>> {
    if rs.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(Error::Domain("r values must be strictly increasing".into()));
    }
    let limit = grad_exact(phi, &Target::Constant(alpha));
    rs.iter()
        .map(|&r| {
            let g = grad_mollified(phi, r, alpha, q)?;
            Ok((r, numeric::distance(g.as_slice(), limit.as_slice())))
        })
        .collect()
}
