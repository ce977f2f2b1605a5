//! Gradient descent `Θ_{n+1} = Θ_n - γ G(Θ_n)` with learning-rate gates and
//! per-step Lyapunov descent certificates.
//!
//! For a constant target `α` and `γ ≤ (4V(Θ_0) + 2)⁻¹` every step satisfies
//! `V(Θ_{n+1}) - V(Θ_n) ≤ -4γ L(Θ_n)`. The trainer records the slack of that
//! inequality at every step. Runs with a general target, or with a learning
//! rate above the gate, are produced but marked uncertified.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::error::Error;
use crate::exact_calculus::{evaluate, Evaluation};
use crate::lyapunov::{v_const, v_general};
use crate::shallow_net::{param_len, ParamVector, Target};

/// Absolute/relative slack allowed on the descent inequality.
pub const DESCENT_TOL: f64 = 1e-9;

pub fn gate_exact(phi0: &ParamVector, alpha: f64) -> f64 {
    1.0 / (4.0 * v_const(phi0, alpha) + 2.0)
}

pub fn gate_conservative(phi0: &ParamVector, alpha: f64) -> f64 {
    1.0 / (12.0 * phi0.norm_sq() + 32.0 * alpha * alpha + 2.0)
}

/// Gate valid for every start in `[-c, c]^{3H+1}`.
pub fn gate_random(c: f64, hidden: usize, alpha: f64) -> Result<f64, Error> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Domain(format!("initialization scale c = {c} must be positive")));
    }
    Ok(1.0 / (12.0 * c * c * param_len(hidden) as f64 + 32.0 * alpha * alpha + 2.0))
}

/// `[3c²(3H+1) + 8α²]^{1/2}`, the sup-norm bound for random starts.
pub fn random_norm_bound(c: f64, hidden: usize, alpha: f64) -> f64 {
    (3.0 * c * c * param_len(hidden) as f64 + 8.0 * alpha * alpha).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    Exact,
    Conservative,
    Random { scale: f64 },
}

impl Gate {
    pub fn learning_rate(&self, phi0: &ParamVector, alpha: f64) -> Result<f64, Error> {
        match *self {
            Gate::Exact => Ok(gate_exact(phi0, alpha)),
            Gate::Conservative => Ok(gate_conservative(phi0, alpha)),
            Gate::Random { scale } => gate_random(scale, phi0.hidden(), alpha),
        }
    }
}

impl fmt::Display for Gate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gate::Exact => write!(f, "exact"),
            Gate::Conservative => write!(f, "conservative"),
            Gate::Random { scale } => write!(f, "random(c={scale})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    Auto(Gate),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    MaxSteps,
    RiskBelow(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub phi: ParamVector,
    pub risk: f64,
    pub grad_norm: f64,
    pub v: f64,
    /// `V(Θ_n) - V(Θ_{n+1}) - 4γ L(Θ_n)`; `None` on the final record.
    pub descent_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub records: Vec<StepRecord>,
    pub gamma: f64,
    pub gate_used: Option<Gate>,
    pub certified: bool,
    pub terminated_by: Termination,
}

impl TrainTrace {
    pub fn final_record(&self) -> &StepRecord {
        self.records.last().expect("trace has at least one record")
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training input: {0}")]
    Invalid(#[from] Error),
    #[error("iteration diverged at step {step}")]
    Diverged { step: usize, trace: Box<TrainTrace> },
}

/// One descent step with the exact gradient.
pub fn gd_step(phi: &ParamVector, gamma: f64, target: &Target) -> Result<ParamVector, Error> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::Domain(format!("learning rate {gamma} must be positive")));
    }
    let g = evaluate(phi, target).grad;
    Ok(phi.axpy(-gamma, g.as_slice()))
}

/// The Lyapunov function that certifies runs against `target`.
pub fn lyapunov_value(phi: &ParamVector, target: &Target) -> f64 {
    match target.as_constant() {
        Some(alpha) => v_const(phi, alpha),
        None => v_general(phi),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub gamma: f64,
    pub gate_used: Option<Gate>,
    pub certified: bool,
    pub max_steps: usize,
    pub risk_tol: f64,
}

impl RunSettings {
    pub fn resolve(
        phi0: &ParamVector,
        rate: LearningRate,
        target: &Target,
        max_steps: usize,
        risk_tol: f64,
    ) -> Result<Self, Error> {
        let alpha = target.as_constant();
        let (gamma, gate_used) = match rate {
            LearningRate::Fixed(g) => (g, None),
            LearningRate::Auto(gate) => {
                let alpha =
                    alpha.ok_or_else(|| Error::Domain("learning-rate gates require a constant target".into()))?;
                (gate.learning_rate(phi0, alpha)?, Some(gate))
            }
        };
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Domain(format!("learning rate {gamma} must be positive")));
        }
        if !(risk_tol.is_finite() && risk_tol >= 0.0) {
            return Err(Error::Domain(format!("risk tolerance {risk_tol} must be non-negative")));
        }
        let certified = alpha.is_some_and(|a| gamma <= gate_exact(phi0, a));
        Ok(Self {
            gamma,
            gate_used,
            certified,
            max_steps,
            risk_tol,
        })
    }
}

/// Outcome of a streamed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunEnd {
    Finished(Termination),
    Diverged { step: usize },
}

/// Runs gradient descent and hands every [`StepRecord`] to `observer` as soon
/// as its descent slack is known. Nothing is retained.
pub fn run_observed<F>(phi0: &ParamVector, target: &Target, settings: &RunSettings, mut observer: F) -> RunEnd
where
    F: FnMut(StepRecord),
{
    let gamma = settings.gamma;
    let mut phi = phi0.clone();
    let Evaluation { mut risk, mut grad } = evaluate(&phi, target);
    let mut v = lyapunov_value(&phi, target);
    let mut n = 0;
    loop {
        let record = |phi: ParamVector, slack| StepRecord {
            n,
            phi,
            risk,
            grad_norm: grad.norm(),
            v,
            descent_slack: slack,
        };
        if risk <= settings.risk_tol {
            observer(record(phi, None));
            return RunEnd::Finished(Termination::RiskBelow(settings.risk_tol));
        }
        if n == settings.max_steps {
            observer(record(phi, None));
            return RunEnd::Finished(Termination::MaxSteps);
        }
        let next = phi.axpy(-gamma, grad.as_slice());
        if !next.is_finite() {
            observer(record(phi, None));
            return RunEnd::Diverged { step: n };
        }
        let next_eval = evaluate(&next, target);
        let next_v = lyapunov_value(&next, target);
        if !(next_eval.risk.is_finite() && next_v.is_finite()) {
            observer(record(phi, None));
            return RunEnd::Diverged { step: n };
        }
        observer(record(phi, Some(v - next_v - 4.0 * gamma * risk)));
        phi = next;
        risk = next_eval.risk;
        grad = next_eval.grad;
        v = next_v;
        n += 1;
    }
}

pub fn train(
    phi0: &ParamVector,
    rate: LearningRate,
    target: &Target,
    max_steps: usize,
    risk_tol: f64,
) -> Result<TrainTrace, TrainError> {
    let settings = RunSettings::resolve(phi0, rate, target, max_steps, risk_tol)?;
    let mut records = Vec::new();
    let end = run_observed(phi0, target, &settings, |r| records.push(r));
    let trace = |terminated_by| TrainTrace {
        records,
        gamma: settings.gamma,
        gate_used: settings.gate_used,
        certified: settings.certified,
        terminated_by,
    };
    match end {
        RunEnd::Finished(t) => Ok(trace(t)),
        RunEnd::Diverged { step } => Err(TrainError::Diverged {
            step,
            trace: Box::new(trace(Termination::MaxSteps)),
        }),
    }
}

/// Checks of the descent certificate along a finished trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceAudit {
    /// Largest `-slack / (1 + V(Θ_n))`, 0 when every step descends.
    pub worst_descent_violation: f64,
    pub descent_ok: bool,
    /// `‖Θ_n‖ ≤ V(Θ_0)^{1/2} + 1e-9` at every record.
    pub bounded_ok: bool,
    /// `Σ_{n<N} L(Θ_n) ≤ V(Θ_0)/(4γ) + 1e-6` for every `N`.
    pub summable_ok: bool,
    /// `V(Θ_{n+1}) ≤ V(Θ_n) + 1e-9 (1 + V(Θ_n))` at every step.
    pub v_monotone_ok: bool,
}

/// Streaming form of [`audit_trace`].
#[derive(Debug, Clone)]
pub struct Auditor {
    gamma: f64,
    v0: Option<f64>,
    prev_v: Option<f64>,
    partial_sum: f64,
    audit: TraceAudit,
}

impl Auditor {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            v0: None,
            prev_v: None,
            partial_sum: 0.0,
            audit: TraceAudit {
                worst_descent_violation: 0.0,
                descent_ok: true,
                bounded_ok: true,
                summable_ok: true,
                v_monotone_ok: true,
            },
        }
    }

    pub fn observe(&mut self, r: &StepRecord) {
        let v0 = *self.v0.get_or_insert(r.v);
        if let Some(prev) = self.prev_v {
            if r.v > prev + DESCENT_TOL * (1.0 + prev) {
                self.audit.v_monotone_ok = false;
            }
        }
        self.prev_v = Some(r.v);
        if let Some(slack) = r.descent_slack {
            let violation = -slack / (1.0 + r.v);
            self.audit.worst_descent_violation = self.audit.worst_descent_violation.max(violation);
            if violation > DESCENT_TOL {
                self.audit.descent_ok = false;
            }
        }
        if r.phi.norm() > v0.sqrt() + 1e-9 {
            self.audit.bounded_ok = false;
        }
        self.partial_sum += r.risk;
        if self.partial_sum > v0 / (4.0 * self.gamma) + 1e-6 {
            self.audit.summable_ok = false;
        }
    }

    pub fn finish(self) -> TraceAudit {
        self.audit
    }
}

pub fn audit_trace(trace: &TrainTrace) -> TraceAudit {
    let mut auditor = Auditor::new(trace.gamma);
    for r in &trace.records {
        auditor.observe(r);
    }
    auditor.finish()
}

/// Uniform initialization on `[-c, c]^{3H+1}` from the substream of `trial`.
pub fn random_init(c: f64, hidden: usize, seed: u64, trial: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let data = (0..param_len(hidden)).map(|_| rng.gen_range(-c..=c)).collect();
    ParamVector::new(hidden, data).expect("finite uniform draws")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub scale: f64,
    pub hidden: usize,
    pub alpha: f64,
    pub n_trials: usize,
    pub max_steps: usize,
    pub risk_tol: f64,
    pub seed: u64,
    /// Number of evenly spaced checkpoints for the mean risk trajectory.
    pub checkpoints: usize,
}

impl ExperimentConfig {
    pub fn new(scale: f64, hidden: usize, alpha: f64, n_trials: usize, max_steps: usize, seed: u64) -> Self {
        Self {
            scale,
            hidden,
            alpha,
            n_trials,
            max_steps,
            risk_tol: 1e-10,
            seed,
            checkpoints: 100,
        }
    }

    fn checkpoint_stride(&self) -> usize {
        (self.max_steps / self.checkpoints.max(1)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub index: usize,
    pub initial: ParamVector,
    pub final_risk: f64,
    pub steps: usize,
    pub diverged: bool,
    pub audit: TraceAudit,
    /// `‖Θ_n‖ ≤ [3c²(3H+1) + 8α²]^{1/2}` at every step.
    pub sup_norm_ok: bool,
    /// Risk at checkpoints `0, s, 2s, …`; the final risk is carried forward
    /// after early termination.
    pub risk_checkpoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub gamma: f64,
    pub trials: Vec<TrialSummary>,
    pub checkpoint_steps: Vec<usize>,
    pub mean_risk_trajectory: Vec<f64>,
    pub mean_final_risk: f64,
    pub sup_norm_passes: usize,
}

pub fn random_init_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary, Error> {
    if cfg.n_trials == 0 {
        return Err(Error::Domain("n_trials must be at least 1".into()));
    }
    if cfg.hidden == 0 {
        return Err(Error::ZeroWidth);
    }
    let gamma = gate_random(cfg.scale, cfg.hidden, cfg.alpha)?;
    let stride = cfg.checkpoint_stride();
    let checkpoint_steps: Vec<usize> = (0..=cfg.max_steps).step_by(stride).collect();
    let bound = random_norm_bound(cfg.scale, cfg.hidden, cfg.alpha);
    let target = Target::Constant(cfg.alpha);

    let trials: Vec<TrialSummary> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|index| {
            let phi0 = random_init(cfg.scale, cfg.hidden, cfg.seed, index as u64);
            let settings = RunSettings {
                gamma,
                gate_used: Some(Gate::Random { scale: cfg.scale }),
                certified: gamma <= gate_exact(&phi0, cfg.alpha),
                max_steps: cfg.max_steps,
                risk_tol: cfg.risk_tol,
            };
            let mut auditor = Auditor::new(gamma);
            let mut sup_norm_ok = true;
            let mut risk_checkpoints = Vec::with_capacity(checkpoint_steps.len());
            let mut last = (0, f64::NAN);
            let end = run_observed(&phi0, &target, &settings, |r| {
                auditor.observe(&r);
                sup_norm_ok &= r.phi.norm() <= bound + 1e-9;
                if r.n % stride == 0 {
                    risk_checkpoints.push(r.risk);
                }
                last = (r.n, r.risk);
            });
            risk_checkpoints.resize(checkpoint_steps.len(), last.1);
            TrialSummary {
                index,
                initial: phi0,
                final_risk: last.1,
                steps: last.0,
                diverged: matches!(end, RunEnd::Diverged { .. }),
                audit: auditor.finish(),
                sup_norm_ok,
                risk_checkpoints,
            }
        })
        .collect();

    let n = trials.len() as f64;
    let mean_risk_trajectory = (0..checkpoint_steps.len())
        .map(|k| trials.iter().map(|t| t.risk_checkpoints[k]).sum::<f64>() / n)
        .collect();
    let mean_final_risk = trials.iter().map(|t| t.final_risk).sum::<f64>() / n;
    let sup_norm_passes = trials.iter().filter(|t| t.sup_norm_ok).count();
    Ok(ExperimentSummary {
        gamma,
        trials,
        checkpoint_steps,
        mean_risk_trajectory,
        mean_final_risk,
        sup_norm_passes,
    })
}
