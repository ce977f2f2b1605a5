//! Brute-force references for tests and the verification suite.
//!
//! Nothing here calls into `exact_calculus` or `mollified`. Integrals use
//! composite Simpson on `[0, 1]`, split at the network kinks and target
//! breakpoints that this module locates itself; on each piece the activation
//! pattern is read at the piece midpoint so that indicator functions are
//! one-sided at the piece ends.

use crate::error::{Error, Result};
use crate::shallow_net::{realize, ParamVector, Target};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub simpson_panels: usize,
    pub fd_step: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            simpson_panels: 1 << 14,
            fd_step: 1e-6,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.simpson_panels < 2 || !self.simpson_panels.is_multiple_of(2) {
            return Err(Error::Oracle(format!(
                "simpson_panels = {} must be even and at least 2",
                self.simpson_panels
            )));
        }
        if !(self.fd_step > 0.0 && self.fd_step < 1e-2) {
            return Err(Error::Oracle(format!(
                "fd_step = {} must lie in (0, 1e-2)",
                self.fd_step
            )));
        }
        Ok(())
    }
}

/// Composite Simpson of a vector-valued integrand on `[a, b]`.
fn simpson_vec<F>(a: f64, b: f64, panels: usize, dim: usize, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    let panels = panels.max(2) + panels % 2;
    let h = (b - a) / panels as f64;
    let mut acc = vec![0.0; dim];
    let mut buf = vec![0.0; dim];
    for k in 0..=panels {
        let x = if k == panels { b } else { a + k as f64 * h };
        let weight = if k == 0 || k == panels {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        buf.iter_mut().for_each(|v| *v = 0.0);
        f(x, &mut buf);
        for (s, v) in acc.iter_mut().zip(&buf) {
            if !v.is_finite() {
                return Err(Error::Oracle(format!("non-finite integrand at x = {x}")));
            }
            *s += weight * v;
        }
    }
    Ok(acc.into_iter().map(|s| s * h / 3.0).collect())
}

pub fn simpson_on<F: FnMut(f64) -> f64>(a: f64, b: f64, panels: usize, mut f: F) -> Result<f64> {
    Ok(simpson_vec(a, b, panels, 1, |x, out| out[0] = f(x))?[0])
}

/// Composite Simpson on `[0, 1]`.
pub fn simpson<F: FnMut(f64) -> f64>(f: F, panels: usize) -> Result<f64> {
    if panels < 2 || !panels.is_multiple_of(2) {
        return Err(Error::Oracle(format!("panels = {panels} must be even and at least 2")));
    }
    simpson_on(0.0, 1.0, panels, f)
}

/// Pieces of `[0, 1]` between consecutive cut points, with a panel budget
/// proportional to length.
fn pieces(mut cuts: Vec<f64>, panels: usize) -> Vec<(f64, f64, usize)> {
    cuts.retain(|t| *t > 0.0 && *t < 1.0);
    cuts.push(0.0);
    cuts.push(1.0);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let n = ((w[1] - w[0]) * panels as f64).ceil() as usize;
            (w[0], w[1], (n + n % 2).max(2))
        })
        .collect()
}

fn cut_points(phi: &ParamVector, target: &Target) -> Vec<f64> {
    let mut cuts = Vec::new();
    for j in 0..phi.hidden() {
        if phi.w(j) != 0.0 {
            cuts.push(-phi.b(j) / phi.w(j));
        }
    }
    cuts.extend_from_slice(target.interior_breakpoints());
    cuts
}

/// Simpson value of `∫_0^1 (N(x) - f(x))² dx`.
pub fn risk_oracle(phi: &ParamVector, target: &Target, cfg: &OracleConfig) -> Result<f64> {
    cfg.validate()?;
    let mut total = 0.0;
    for (a, b, n) in pieces(cut_points(phi, target), cfg.simpson_panels) {
        total += simpson_on(a, b, n, |x| {
            let r = realize(phi, x) - target.eval(x);
            r * r
        })?;
    }
    Ok(total)
}

/// Simpson value of every component of the generalized gradient.
pub fn grad_oracle(phi: &ParamVector, target: &Target, cfg: &OracleConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let h = phi.hidden();
    let dim = 3 * h + 1;
    let mut total = vec![0.0; dim];
    for (a, b, n) in pieces(cut_points(phi, target), cfg.simpson_panels) {
        let mid = 0.5 * (a + b);
        let active: Vec<bool> = (0..h).map(|j| phi.w(j) * mid + phi.b(j) > 0.0).collect();
        let part = simpson_vec(a, b, n, dim, |x, out| {
            let r = realize(phi, x) - target.eval(x);
            for j in 0..h {
                if active[j] {
                    out[j] = 2.0 * phi.v(j) * x * r;
                    out[h + j] = 2.0 * phi.v(j) * r;
                    out[2 * h + j] = 2.0 * (phi.w(j) * x + phi.b(j)) * r;
                }
            }
            out[3 * h] = 2.0 * r;
        })?;
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total)
}

/// Central differences `(f(x + s e_i) - f(x - s e_i)) / 2s`.
pub fn fd_gradient<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Oracle(format!("step {step} must be positive")));
    }
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            if up.is_finite() && down.is_finite() {
                Ok((up - down) / (2.0 * step))
            } else {
                Err(Error::Oracle(format!("non-finite evaluation along coordinate {i}")))
            }
        })
        .collect()
}
