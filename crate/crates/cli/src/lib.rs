//! Command-line front end: JSON-configured experiments that write CSV, and
//! the randomized verification suite.
//!
//! Exit codes are stable: 0 success, 1 verification failure, 2 configuration
//! error, 3 uncertified learning rate, 4 divergence, 5 I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};

use shallow_cert::exact_calculus::{grad_exact, risk_exact};
use shallow_cert::flow::{
    apriori_general_check, flow_bound_check, integrate_flow, ito_residuals, FlowError, FlowTrace,
};
use shallow_cert::mollified::{limit_gap_sweep, risk_mollified, QuadratureConfig};
use shallow_cert::trainer::{
    random_init_experiment, run_observed, ExperimentConfig, Gate, LearningRate, RunEnd, RunSettings,
};
use shallow_cert::verify::{run_verify, VerifyOptions, VerifyReport};
use thiserror::Error;

pub mod config;

pub use config::Config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn status(&self) -> Status {
        match self {
            CliError::Config(_) => Status::Config,
            CliError::Io(_) => Status::Io,
        }
    }
}

impl From<shallow_cert::Error> for CliError {
    fn from(e: shallow_cert::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    VerifyFailed,
    Config,
    Uncertified,
    Diverged,
    Io,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::VerifyFailed => 1,
            Status::Config => 2,
            Status::Uncertified => 3,
            Status::Diverged => 4,
            Status::Io => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Risk,
    Grad,
    Train,
    Flow,
    Sweep,
    Verify,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invocation {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Seventeen significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

struct Sinks<'a> {
    dest: Option<PathBuf>,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Sinks<'_> {
    /// CSV goes to the output file, or to stdout when there is none.
    fn csv(&mut self, table: Table) -> Result<(), CliError> {
        let bytes = table.into_bytes();
        match &self.dest {
            Some(path) => write_atomic(path, &bytes),
            None => self
                .stdout
                .write_all(&bytes)
                .map_err(|e| CliError::Io(format!("stdout: {e}"))),
        }
    }

    /// Summary lines go to stdout unless the CSV is using it.
    fn summary(&mut self, line: &str) -> Result<(), CliError> {
        let sink: &mut dyn Write = if self.dest.is_some() {
            &mut *self.stdout
        } else {
            &mut *self.stderr
        };
        writeln!(sink, "{line}").map_err(|e| CliError::Io(e.to_string()))
    }
}

pub fn run(inv: &Invocation, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<Status, CliError> {
    let cfg = match &inv.config {
        Some(path) => Config::load(path)?,
        None if inv.command == Command::Verify => Config::default(),
        None => return Err(CliError::Config("--config is required".into())),
    };
    let mut sinks = Sinks {
        dest: inv.output.clone().or_else(|| cfg.output.clone()),
        stdout,
        stderr,
    };
    match inv.command {
        Command::Risk => cmd_risk(&cfg, inv.seed, &mut sinks),
        Command::Grad => cmd_grad(&cfg, inv.seed, &mut sinks),
        Command::Train => cmd_train(&cfg, inv.seed, &mut sinks),
        Command::Flow => cmd_flow(&cfg, inv.seed, &mut sinks),
        Command::Sweep => cmd_sweep(&cfg, inv.seed, &mut sinks),
        Command::Verify => cmd_verify(&cfg, inv.seed, &mut sinks),
    }
}

fn cmd_risk(cfg: &Config, seed: Option<u64>, out: &mut Sinks) -> Result<Status, CliError> {
    let phi = cfg.init(seed)?;
    let target = cfg.target()?;
    let rs = cfg.r_sweep()?;
    let mut table = Table::new(&["r", "value"]);
    let exact = risk_exact(&phi, &target);
    table.row(["inf".to_string(), num(exact)]);
    if !rs.is_empty() {
        let alpha = cfg.alpha()?;
        let q = QuadratureConfig::default();
        for r in rs {
            table.row([num(r), num(risk_mollified(&phi, r, alpha, &q)?)]);
        }
    }
    out.csv(table)?;
    out.summary(&format!("risk_exact={}", num(exact)))?;
    Ok(Status::Success)
}

fn component_names(hidden: usize) -> Vec<String> {
    ["w", "b", "v"]
        .iter()
        .flat_map(|p| (1..=hidden).map(move |j| format!("{p}_{j}")))
        .chain(std::iter::once("c".to_string()))
        .collect()
}

fn cmd_grad(cfg: &Config, seed: Option<u64>, out: &mut Sinks) -> Result<Status, CliError> {
    let phi = cfg.init(seed)?;
    let target = cfg.target()?;
    let g = grad_exact(&phi, &target);
    let mut table = Table::new(&["component", "value"]);
    for (name, value) in component_names(phi.hidden()).into_iter().zip(g.as_slice()) {
        table.row([name, num(*value)]);
    }
    out.csv(table)?;
    out.summary(&format!("grad_norm={}", num(g.norm())))?;
    Ok(Status::Success)
}

fn cmd_sweep(cfg: &Config, seed: Option<u64>, out: &mut Sinks) -> Result<Status, CliError> {
    let phi = cfg.init(seed)?;
    let alpha = cfg.alpha()?;
    let rs = cfg.r_sweep()?;
    if rs.is_empty() {
        return Err(CliError::Config("field `r_sweep`: missing or empty".into()));
    }
    let gaps = limit_gap_sweep(&phi, alpha, &rs, &QuadratureConfig::default())?;
    let mut table = Table::new(&["r", "gap"]);
    for (r, gap) in &gaps {
        table.row([num(*r), num(*gap)]);
    }
    out.csv(table)?;
    let g = grad_exact(&phi, &shallow_cert::Target::Constant(alpha));
    out.summary(&format!(
        "grad_norm={} final_gap={}",
        num(g.norm()),
        num(gaps[gaps.len() - 1].1)
    ))?;
    Ok(Status::Success)
}

fn cmd_train(cfg: &Config, seed: Option<u64>, out: &mut Sinks) -> Result<Status, CliError> {
    if let Some(trials) = cfg.trials()? {
        return cmd_experiment(cfg, seed, trials, out);
    }
    let phi0 = cfg.init(seed)?;
    let target = cfg.target()?;
    let settings = RunSettings::resolve(&phi0, cfg.learning_rate()?, &target, cfg.max_steps()?, cfg.risk_tol()?)?;
    let mut table = Table::new(&["n", "risk", "grad_norm", "v", "descent_slack"]);
    let mut last = None;
    let end = run_observed(&phi0, &target, &settings, |r| {
        table.row([
            r.n.to_string(),
            num(r.risk),
            num(r.grad_norm),
            num(r.v),
            r.descent_slack.map(num).unwrap_or_default(),
        ]);
        last = Some((r.n, r.risk));
    });
    out.csv(table)?;
    let (steps, risk) = last.expect("a run records at least its start");
    let terminated = match end {
        RunEnd::Finished(shallow_cert::trainer::Termination::RiskBelow(_)) => "risk_tol",
        RunEnd::Finished(shallow_cert::trainer::Termination::MaxSteps) => "max_steps",
        RunEnd::Diverged { .. } => "diverged",
    };
    out.summary(&format!(
        "final_risk={} steps={steps} gamma={} certified={} terminated_by={terminated}",
        num(risk),
        num(settings.gamma),
        settings.certified
    ))?;
    Ok(match end {
        RunEnd::Diverged { .. } => Status::Diverged,
        _ if !settings.certified => Status::Uncertified,
        _ => Status::Success,
    })
}

fn cmd_experiment(cfg: &Config, seed: Option<u64>, trials: usize, out: &mut Sinks) -> Result<Status, CliError> {
    let params = cfg
        .random_init_params()
        .ok_or_else(|| CliError::Config("field `trials`: needs a random initialization".into()))?;
    match cfg.learning_rate()? {
        LearningRate::Auto(Gate::Random { .. }) => {}
        _ => return Err(CliError::Config("field `trials`: needs `gate` = \"random\"".into())),
    }
    let exp = ExperimentConfig {
        risk_tol: cfg.risk_tol()?,
        ..ExperimentConfig::new(
            params.scale,
            cfg.hidden()?,
            cfg.alpha()?,
            trials,
            cfg.max_steps()?,
            seed.unwrap_or(params.seed),
        )
    };
    let summary = random_init_experiment(&exp)?;
    let mut table = Table::new(&["step", "mean_risk"]);
    for (step, risk) in summary.checkpoint_steps.iter().zip(&summary.mean_risk_trajectory) {
        table.row([step.to_string(), num(*risk)]);
    }
    out.csv(table)?;
    let diverged = summary.trials.iter().filter(|t| t.diverged).count();
    let audited = summary
        .trials
        .iter()
        .filter(|t| t.audit.descent_ok && t.audit.bounded_ok && t.audit.summable_ok)
        .count();
    out.summary(&format!(
        "trials={trials} gamma={} mean_final_risk={} sup_norm_ok={}/{trials} certificates_ok={audited}/{trials} diverged={diverged}",
        num(summary.gamma),
        num(summary.mean_final_risk),
        summary.sup_norm_passes
    ))?;
    Ok(if diverged > 0 {
        Status::Diverged
    } else {
        Status::Success
    })
}

fn flow_table(trace: &FlowTrace) -> Table {
    let mut table = Table::new(&["t", "risk", "v", "grad_sq_norm"]);
    for k in 0..trace.len() {
        table.row([
            num(trace.times[k]),
            num(trace.risks[k]),
            num(trace.v_values[k]),
            num(trace.grad_sq_norms[k]),
        ]);
    }
    table
}

fn cmd_flow(cfg: &Config, seed: Option<u64>, out: &mut Sinks) -> Result<Status, CliError> {
    let phi0 = cfg.init(seed)?;
    let target = cfg.target()?;
    let horizon = cfg.horizon()?;
    let step = cfg.step(horizon)?;
    let trace = match integrate_flow(&phi0, &target, horizon, step, cfg.method()) {
        Ok(trace) => trace,
        Err(FlowError::Invalid(e)) => return Err(e.into()),
        Err(FlowError::Diverged { time, trace }) => {
            out.csv(flow_table(&trace))?;
            out.summary(&format!("diverged_at={}", num(time)))?;
            return Ok(Status::Diverged);
        }
    };
    out.csv(flow_table(&trace))?;
    let res = ito_residuals(&trace);
    let mut line = format!(
        "v_identity_max={} l_identity_max={}",
        num(res.v_identity_max),
        num(res.l_identity_max)
    );
    if target.as_constant().is_some() {
        let b = flow_bound_check(&trace);
        line += &format!(
            " decay_ok={} sup_norm_ok={} monotone_ok={}",
            b.decay_ok, b.sup_norm_ok, b.monotone_ok
        );
    }
    if cfg.apriori.unwrap_or(false) {
        let a = apriori_general_check(&trace, &target);
        line += &format!(" v_growth_ok={} norm_growth_ok={}", a.v_growth_ok, a.norm_growth_ok);
    }
    out.summary(&line)?;
    Ok(Status::Success)
}

pub fn verify_table(report: &VerifyReport) -> Vec<u8> {
    let mut table = Table::new(&[
        "suite",
        "anchor",
        "instances",
        "failures",
        "worst",
        "tolerance",
        "status",
    ]);
    for r in &report.rows {
        table.row([
            r.suite.to_string(),
            r.anchor.to_string(),
            r.instances.to_string(),
            r.failures.to_string(),
            num(r.worst),
            num(r.tolerance),
            r.status().to_string(),
        ]);
    }
    table.into_bytes()
}

fn cmd_verify(cfg: &Config, seed: Option<u64>, out: &mut Sinks) -> Result<Status, CliError> {
    let report = run_verify(&VerifyOptions::new(seed.unwrap_or(0), cfg.scale()));
    let bytes = verify_table(&report);
    match &out.dest {
        Some(path) => {
            write_atomic(path, &bytes)?;
            for r in &report.rows {
                out.summary(&format!(
                    "{:<22} {:>6} instances {:>4} failures  worst {:>11.3e}  tol {:>8.1e}  {}  [{}]",
                    r.suite,
                    r.instances,
                    r.failures,
                    r.worst,
                    r.tolerance,
                    r.status(),
                    r.anchor
                ))?;
            }
        }
        None => out
            .stdout
            .write_all(&bytes)
            .map_err(|e| CliError::Io(format!("stdout: {e}")))?,
    }
    let passed = report.rows.iter().filter(|r| r.passed).count();
    out.summary(&format!(
        "verify seed={} scale={}: {passed}/{} suites passed",
        report.seed,
        report.scale,
        report.rows.len()
    ))?;
    Ok(if report.all_passed() {
        Status::Success
    } else {
        Status::VerifyFailed
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_17_digits() {
        assert_eq!(num(1.0 / 3.0), "3.3333333333333331e-1");
        assert_eq!(num(0.0), "0.0000000000000000e0");
        assert_eq!(num(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn component_names_follow_layout() {
        assert_eq!(component_names(2), vec!["w_1", "w_2", "b_1", "b_2", "v_1", "v_2", "c"]);
    }

    #[test]
    fn exit_codes_are_disjoint() {
        let all = [
            Status::Success,
            Status::VerifyFailed,
            Status::Config,
            Status::Uncertified,
            Status::Diverged,
            Status::Io,
        ];
        let codes: std::collections::BTreeSet<i32> = all.iter().map(|s| s.code()).collect();
        assert_eq!(codes.len(), all.len());
    }
}
