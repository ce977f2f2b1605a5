//! Fixed-step integration of the gradient flow `Θ' = -G(Θ)` and the
//! certificates along it.
//!
//! Along an exact flow with constant target `α`:
//!
//! * `V(Θ_t) = V(Θ_0) - 8 ∫_0^t L(Θ_s) ds`
//! * `L(Θ_t) = L(Θ_0) - ∫_0^t ‖G(Θ_s)‖² ds`
//! * `‖Θ_t‖ ≤ V(Θ_0)^{1/2}`, `L(Θ_t) ≤ V(Θ_0) / (8t)`, `t ↦ L(Θ_t)` non-increasing
//!
//! For a general target `f`, with `V(φ) = ‖φ‖² + c²`:
//! `V(Θ_t) ≤ V(Θ_0) + 2t ∫f²` and `‖Θ_t‖ ≤ V(Θ_0)^{1/2} + (2∫f²)^{1/2} t^{1/2}`.
//!
//! The time integrals in the identity checks are taken step by step along the
//! cubic Hermite interpolant of the computed trajectory, with two-point
//! Gauss–Legendre. `G` loses smoothness in time when a kink enters or leaves
//! `[0, 1]` or passes another kink or a target breakpoint; steps containing
//! such an event are integrated with fine substeps.

use std::fmt;

use thiserror::Error;

use crate::error::Error;
use crate::exact_calculus::{evaluate, output_pairing, target_l2_sq, Evaluation};
use crate::lyapunov::v_general;
use crate::quadrature::GaussLegendre;
use crate::shallow_net::{ParamVector, Target};
use crate::trainer::lyapunov_value;

/// A step is crossing-adjacent if some neuron has `|w_j| + |b_j|` below this
/// at any stage of the step.
pub const DEGENERACY_EPS: f64 = 1e-8;

/// Lower bound on the number of substeps for an event step. The
/// actual count is `max(MIN_EVENT_SUBSTEPS, ⌈1/h⌉)` so the substep is `O(h²)`.
pub const MIN_EVENT_SUBSTEPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rk4 => "rk4",
            Method::Euler => "euler",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub target: Target,
    pub times: Vec<f64>,
    pub states: Vec<ParamVector>,
    pub risks: Vec<f64>,
    /// `V(Θ_t)`: `‖φ‖² + (c - 2α)²` for constant targets, `‖φ‖² + c²` otherwise.
    pub v_values: Vec<f64>,
    pub grad_sq_norms: Vec<f64>,
    /// `-dV/dt`: `8 L` for constant targets, `8 ∫ N (N - f)` otherwise.
    pub dissipation: Vec<f64>,
    pub step_size: f64,
    pub method: Method,
    /// Indices `k` whose step `t_k → t_{k+1}` passed near a degenerate neuron.
    pub crossing_steps: Vec<usize>,
    /// Steps during which the kink structure on `[0, 1]` changed.
    pub event_steps: Vec<usize>,
    /// `∫ -dV/dt` over each step `t_k → t_{k+1}`.
    pub step_dissipation: Vec<f64>,
    /// `∫ ‖G‖²` over each step.
    pub step_grad_sq: Vec<f64>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of leading grid points not preceded by a crossing-adjacent step.
    pub fn clean_prefix_len(&self) -> usize {
        self.crossing_steps.first().map_or(self.len(), |&k| k + 1)
    }

    fn push(&mut self, t: f64, phi: ParamVector, eval: &Evaluation) {
        self.times.push(t);
        self.risks.push(eval.risk);
        self.v_values.push(lyapunov_value(&phi, &self.target));
        self.grad_sq_norms.push(eval.grad.norm_sq());
        self.dissipation.push(dissipation(&phi, &self.target, eval.risk));
        self.states.push(phi);
    }
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid flow input: {0}")]
    Invalid(#[from] Error),
    #[error("flow diverged at t = {time}")]
    Diverged { time: f64, trace: Box<FlowTrace> },
}

fn dissipation(phi: &ParamVector, target: &Target, risk: f64) -> f64 {
    match target.as_constant() {
        Some(_) => 8.0 * risk,
        None => 8.0 * output_pairing(phi, target),
    }
}

fn near_degenerate(phi: &ParamVector) -> bool {
    (0..phi.hidden()).any(|j| phi.w(j).abs() + phi.b(j).abs() < DEGENERACY_EPS)
}

/// Combinatorial structure of the network on `[0, 1]`: activation of every
/// neuron at both ends, and the order of interior kinks among themselves and
/// the target breakpoints. `G` is smooth while this stays fixed.
#[derive(Debug, PartialEq, Eq)]
struct Structure {
    ends: Vec<(bool, bool)>,
    order: Vec<usize>,
}

fn structure(phi: &ParamVector, target: &Target) -> Structure {
    let h = phi.hidden();
    let ends = (0..h).map(|j| (phi.b(j) > 0.0, phi.w(j) + phi.b(j) > 0.0)).collect();
    let mut marks: Vec<(f64, usize)> = (0..h)
        .filter(|&j| phi.w(j) != 0.0)
        .map(|j| (-phi.b(j) / phi.w(j), j))
        .filter(|&(t, _)| t > 0.0 && t < 1.0)
        .chain(
            target
                .interior_breakpoints()
                .iter()
                .enumerate()
                .map(|(i, &t)| (t, h + i)),
        )
        .collect();
    marks.sort_by(|a, b| a.0.total_cmp(&b.0));
    Structure {
        ends,
        order: marks.into_iter().map(|(_, id)| id).collect(),
    }
}

fn neg_grad(phi: &ParamVector, target: &Target) -> Vec<f64> {
    evaluate(phi, target).grad.negated().into_vec()
}

/// Result of one step: the new state, whether any stage came near a
/// degenerate neuron, and whether any stage changed the structure.
struct Advanced {
    next: ParamVector,
    crossing: bool,
    event: bool,
}

/// One step from `phi`, given `-G(phi)`.
fn advance(phi: &ParamVector, k1: &[f64], dt: f64, method: Method, target: &Target) -> Advanced {
    let start = structure(phi, target);
    let stages = match method {
        Method::Euler => vec![phi.axpy(dt, k1)],
        Method::Rk4 => {
            let s2 = phi.axpy(0.5 * dt, k1);
            let k2 = neg_grad(&s2, target);
            let s3 = phi.axpy(0.5 * dt, &k2);
            let k3 = neg_grad(&s3, target);
            let s4 = phi.axpy(dt, &k3);
            let k4 = neg_grad(&s4, target);
            let incr: Vec<f64> = (0..k1.len())
                .map(|i| (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0)
                .collect();
            vec![phi.axpy(dt, &incr), s2, s3, s4]
        }
    };
    Advanced {
        crossing: stages.iter().any(near_degenerate),
        event: stages.iter().any(|s| structure(s, target) != start),
        next: stages.into_iter().next().expect("at least one stage"),
    }
}

/// `(∫ -dV/dt, ∫ ‖G‖²)` over one step, along the cubic Hermite interpolant
/// through both end states and their velocities `-G`.
fn step_integrals(
    a: (&ParamVector, &Evaluation),
    b: (&ParamVector, &Evaluation),
    dt: f64,
    rule: &GaussLegendre,
    target: &Target,
) -> (f64, f64) {
    let (pa, ea) = a;
    let (pb, eb) = b;
    let (ga, gb) = (ea.grad.as_slice(), eb.grad.as_slice());
    let mut acc = (0.0, 0.0);
    for (s, weight) in rule.mapped(0.0, 1.0) {
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let data = (0..pa.len())
            .map(|i| h00 * pa.as_slice()[i] - h10 * dt * ga[i] + h01 * pb.as_slice()[i] - h11 * dt * gb[i])
            .collect();
        let phi = ParamVector::new(pa.hidden(), data).expect("interpolant has the same layout");
        let eval = evaluate(&phi, target);
        acc.0 += weight * dissipation(&phi, target, eval.risk);
        acc.1 += weight * eval.grad.norm_sq();
    }
    (acc.0 * dt, acc.1 * dt)
}

struct Substepped {
    next: ParamVector,
    crossing: bool,
    dissipation: f64,
    grad_sq: f64,
}

/// Integrates one step with `m` equal substeps, summing the substep integrals.
fn substep(
    phi: &ParamVector,
    start: &Evaluation,
    dt: f64,
    m: usize,
    method: Method,
    rule: &GaussLegendre,
    target: &Target,
) -> Option<Substepped> {
    let delta = dt / m as f64;
    let mut cur = phi.clone();
    let mut cur_eval = start.clone();
    let mut out = Substepped {
        next: phi.clone(),
        crossing: false,
        dissipation: 0.0,
        grad_sq: 0.0,
    };
    for _ in 0..m {
        let k1 = cur_eval.grad.negated().into_vec();
        let Advanced { next, crossing, .. } = advance(&cur, &k1, delta, method, target);
        if !next.is_finite() {
            return None;
        }
        out.crossing |= crossing;
        let eval = evaluate(&next, target);
        let (d, g) = step_integrals((&cur, &cur_eval), (&next, &eval), delta, rule, target);
        out.dissipation += d;
        out.grad_sq += g;
        (cur, cur_eval) = (next, eval);
    }
    out.next = cur;
    Some(out)
}

pub fn integrate_flow(
    phi0: &ParamVector,
    target: &Target,
    horizon: f64,
    h: f64,
    method: Method,
) -> Result<FlowTrace, FlowError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Domain(format!("horizon T = {horizon} must be positive")).into());
    }
    if !(h.is_finite() && h > 0.0 && h <= horizon) {
        return Err(Error::Domain(format!("step h = {h} must lie in (0, T]")).into());
    }
    let n_steps = ((horizon / h) - 1e-9).ceil().max(1.0) as usize;
    let event_substeps = MIN_EVENT_SUBSTEPS.max((1.0 / h).ceil() as usize);
    let mut trace = FlowTrace {
        target: target.clone(),
        times: Vec::with_capacity(n_steps + 1),
        states: Vec::with_capacity(n_steps + 1),
        risks: Vec::with_capacity(n_steps + 1),
        v_values: Vec::with_capacity(n_steps + 1),
        grad_sq_norms: Vec::with_capacity(n_steps + 1),
        dissipation: Vec::with_capacity(n_steps + 1),
        step_size: h,
        method,
        crossing_steps: Vec::new(),
        event_steps: Vec::new(),
        step_dissipation: Vec::with_capacity(n_steps),
        step_grad_sq: Vec::with_capacity(n_steps),
    };
    let rule = GaussLegendre::new(2);
    let mut phi = phi0.clone();
    let mut eval = evaluate(&phi, target);
    trace.push(0.0, phi.clone(), &eval);

    for k in 0..n_steps {
        let t = k as f64 * h;
        let t_next = if k + 1 == n_steps { horizon } else { (k + 1) as f64 * h };
        let dt = t_next - t;
        let diverged = |trace| FlowError::Diverged {
            time: t,
            trace: Box::new(trace),
        };
        let k1 = eval.grad.negated().into_vec();
        let step = advance(&phi, &k1, dt, method, target);
        let (mut next, mut crossing) = (step.next, step.crossing);
        if !next.is_finite() {
            return Err(diverged(trace));
        }
        crossing |= near_degenerate(&phi);
        let next_eval;
        let integrals;
        if step.event {
            let Some(fine) = substep(&phi, &eval, dt, event_substeps, method, &rule, target) else {
                return Err(diverged(trace));
            };
            crossing |= fine.crossing;
            next = fine.next;
            next_eval = evaluate(&next, target);
            integrals = (fine.dissipation, fine.grad_sq);
            trace.event_steps.push(k);
        } else {
            next_eval = evaluate(&next, target);
            integrals = step_integrals((&phi, &eval), (&next, &next_eval), dt, &rule, target);
        }
        if crossing {
            trace.crossing_steps.push(k);
        }
        trace.step_dissipation.push(integrals.0);
        trace.step_grad_sq.push(integrals.1);
        phi = next;
        eval = next_eval;
        trace.push(t_next, phi.clone(), &eval);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItoResiduals {
    /// `max_t |V(Θ_t) - V(Θ_0) + ∫_0^t (-dV/ds) ds|`
    pub v_identity_max: f64,
    /// `max_t |L(Θ_t) - L(Θ_0) + ∫_0^t ‖G‖² ds|`
    pub l_identity_max: f64,
}

pub fn ito_residuals(trace: &FlowTrace) -> ItoResiduals {
    ito_residuals_until(trace, trace.len())
}

/// Residuals over the first `len` grid points only.
pub fn ito_residuals_until(trace: &FlowTrace, len: usize) -> ItoResiduals {
    let len = len.min(trace.len());
    if len == 0 {
        return ItoResiduals {
            v_identity_max: 0.0,
            l_identity_max: 0.0,
        };
    }
    let running = |steps: &[f64]| {
        let mut acc = 0.0;
        std::iter::once(0.0)
            .chain(steps[..len - 1].iter().map(move |x| {
                acc += x;
                acc
            }))
            .collect::<Vec<f64>>()
    };
    let dissipated = running(&trace.step_dissipation);
    let grad_int = running(&trace.step_grad_sq);
    let (v0, l0) = (trace.v_values[0], trace.risks[0]);
    let mut res = ItoResiduals {
        v_identity_max: 0.0,
        l_identity_max: 0.0,
    };
    for k in 0..len {
        let rv = (trace.v_values[k] - v0 + dissipated[k]).abs();
        let rl = (trace.risks[k] - l0 + grad_int[k]).abs();
        res.v_identity_max = res.v_identity_max.max(rv);
        res.l_identity_max = res.l_identity_max.max(rl);
    }
    res
}

/// Residuals over a ladder of step sizes `h_0, h_0/2, …`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalvingStudy {
    pub steps: Vec<f64>,
    /// Residuals up to `clean_until` for each step size.
    pub residuals: Vec<ItoResiduals>,
    /// Earliest first crossing-adjacent grid time over the ladder, or the horizon.
    pub clean_until: f64,
    /// `(h, r(h) / r(h/2))` for the finest pair with `r(h/2) ≥ floor`.
    pub v_ratio: Option<(f64, f64)>,
    pub l_ratio: Option<(f64, f64)>,
}

impl HalvingStudy {
    pub fn min_ratio(&self) -> Option<f64> {
        Some(self.v_ratio?.1.min(self.l_ratio?.1))
    }
}

/// Integrates with `levels` successively halved steps from `h0`. Residuals
/// below `floor` are taken to be at roundoff and are not used for ratios.
pub fn halving_study(
    phi0: &ParamVector,
    target: &Target,
    horizon: f64,
    h0: f64,
    levels: usize,
    floor: f64,
) -> Result<HalvingStudy, FlowError> {
    if levels < 2 {
        return Err(Error::Domain("a halving study needs at least two levels".into()).into());
    }
    let steps: Vec<f64> = (0..levels).map(|k| h0 / f64::powi(2.0, k as i32)).collect();
    let traces = steps
        .iter()
        .map(|&h| integrate_flow(phi0, target, horizon, h, Method::Rk4))
        .collect::<Result<Vec<_>, _>>()?;
    let clean_until = traces
        .iter()
        .map(|t| t.times[t.clean_prefix_len() - 1])
        .fold(horizon, f64::min);
    let residuals: Vec<ItoResiduals> = traces
        .iter()
        .map(|t| {
            let len = t.times.partition_point(|&x| x <= clean_until + 1e-12);
            ito_residuals_until(t, len)
        })
        .collect();
    let ratio = |get: fn(&ItoResiduals) -> f64| {
        (0..levels - 1)
            .rev()
            .find(|&k| get(&residuals[k + 1]) >= floor)
            .map(|k| (steps[k], get(&residuals[k]) / get(&residuals[k + 1])))
    };
    Ok(HalvingStudy {
        v_ratio: ratio(|r| r.v_identity_max),
        l_ratio: ratio(|r| r.l_identity_max),
        steps,
        residuals,
        clean_until,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowBounds {
    pub sup_norm_ok: bool,
    pub decay_ok: bool,
    pub monotone_ok: bool,
}

impl FlowBounds {
    pub fn all(&self) -> bool {
        self.sup_norm_ok && self.decay_ok && self.monotone_ok
    }
}

/// Sup-norm, `1/(8t)` decay and risk monotonicity at every grid time, each
/// with tolerance `1e-6 (1 + V(Θ_0))`.
pub fn flow_bound_check(trace: &FlowTrace) -> FlowBounds {
    let mut out = FlowBounds {
        sup_norm_ok: true,
        decay_ok: true,
        monotone_ok: true,
    };
    let Some(&v0) = trace.v_values.first() else {
        return out;
    };
    let tol = 1e-6 * (1.0 + v0);
    let radius = v0.sqrt();
    for k in 0..trace.len() {
        let t = trace.times[k];
        if trace.states[k].norm() > radius + tol {
            out.sup_norm_ok = false;
        }
        if t > 0.0 && trace.risks[k] > v0 / (8.0 * t) + tol {
            out.decay_ok = false;
        }
        if k > 0 && trace.risks[k] > trace.risks[k - 1] + tol {
            out.monotone_ok = false;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AprioriCheck {
    pub v_growth_ok: bool,
    pub norm_growth_ok: bool,
}

/// A priori growth bounds for a trace integrated against target `f`.
pub fn apriori_general_check(trace: &FlowTrace, f: &Target) -> AprioriCheck {
    let mut out = AprioriCheck {
        v_growth_ok: true,
        norm_growth_ok: true,
    };
    let Some(first) = trace.states.first() else {
        return out;
    };
    let f_sq = target_l2_sq(f);
    let v0 = v_general(first);
    let tol = 1e-6 * (1.0 + v0);
    for (t, phi) in trace.times.iter().zip(&trace.states) {
        if v_general(phi) > v0 + 2.0 * t * f_sq + tol {
            out.v_growth_ok = false;
        }
        if phi.norm() > v0.sqrt() + (2.0 * f_sq * t).sqrt() + tol {
            out.norm_growth_ok = false;
        }
    }
    out
}
