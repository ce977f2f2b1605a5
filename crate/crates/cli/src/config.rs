//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use shallow_cert::flow::Method;
use shallow_cert::trainer::{random_init, Gate, LearningRate};
use shallow_cert::verify::Scale;
use shallow_cert::{ParamVector, PiecewisePolynomial, Polynomial, Target};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetPieces {
    pub breakpoints: Vec<f64>,
    /// Ascending coefficients of each piece.
    pub pieces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomInit {
    pub scale: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum InitChoice {
    Explicit(Vec<f64>),
    Random(RandomInit),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateName {
    Exact,
    Conservative,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodName {
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleName {
    Small,
    Full,
}

/// The raw document. Which fields are required depends on the command.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub hidden: Option<usize>,
    pub alpha: Option<f64>,
    pub target: Option<TargetPieces>,
    pub init: Option<InitChoice>,
    pub learning_rate: Option<f64>,
    pub gate: Option<GateName>,
    pub max_steps: Option<usize>,
    pub risk_tol: Option<f64>,
    pub trials: Option<usize>,
    pub horizon: Option<f64>,
    pub step: Option<f64>,
    pub method: Option<MethodName>,
    pub r_sweep: Option<Vec<f64>>,
    pub apriori: Option<bool>,
    pub scale: Option<ScaleName>,
    pub output: Option<PathBuf>,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("field `{field}`: {msg}"))
}

fn finite(field: &str, x: f64) -> Result<f64, CliError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(field_err(field, format!("{x} is not finite")))
    }
}

fn positive(field: &str, x: f64) -> Result<f64, CliError> {
    if finite(field, x)? > 0.0 {
        Ok(x)
    } else {
        Err(field_err(field, format!("{x} must be positive")))
    }
}

fn required<T: Clone>(field: &str, v: &Option<T>) -> Result<T, CliError> {
    v.clone().ok_or_else(|| field_err(field, "missing"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn hidden(&self) -> Result<usize, CliError> {
        match required("hidden", &self.hidden)? {
            0 => Err(field_err("hidden", "must be at least 1")),
            h => Ok(h),
        }
    }

    pub fn target(&self) -> Result<Target, CliError> {
        match (&self.alpha, &self.target) {
            (Some(a), None) => Ok(Target::Constant(finite("alpha", *a)?)),
            (None, Some(params)) => {
                let pieces = params.pieces.iter().cloned().map(Polynomial::new).collect();
                PiecewisePolynomial::new(params.breakpoints.clone(), pieces)
                    .map(Target::Piecewise)
                    .map_err(|e| field_err("target", e))
            }
            (Some(_), Some(_)) => Err(field_err("alpha", "give exactly one of `alpha` and `target`")),
            (None, None) => Err(field_err("alpha", "missing; give `alpha` or `target`")),
        }
    }

    /// The constant target value, for commands that only support constants.
    pub fn alpha(&self) -> Result<f64, CliError> {
        self.target()?
            .as_constant()
            .ok_or_else(|| field_err("target", "this command needs a constant target `alpha`"))
    }

    /// Initial parameters; `seed` overrides the random params's seed.
    pub fn init(&self, seed: Option<u64>) -> Result<ParamVector, CliError> {
        let hidden = self.hidden()?;
        match required("init", &self.init)? {
            InitChoice::Explicit(data) => {
                if seed.is_some() {
                    return Err(field_err("init", "--seed needs a random initialization"));
                }
                for x in &data {
                    finite("init", *x)?;
                }
                ParamVector::new(hidden, data).map_err(|e| field_err("init", e))
            }
            InitChoice::Random(params) => {
                let scale = positive("init.random.scale", params.scale)?;
                Ok(random_init(scale, hidden, seed.unwrap_or(params.seed), 0))
            }
        }
    }

    pub fn random_init_params(&self) -> Option<RandomInit> {
        match self.init {
            Some(InitChoice::Random(params)) => Some(params),
            _ => None,
        }
    }

    pub fn learning_rate(&self) -> Result<LearningRate, CliError> {
        match (self.learning_rate, self.gate) {
            (Some(g), None) => Ok(LearningRate::Fixed(positive("learning_rate", g)?)),
            (None, Some(GateName::Exact)) => Ok(LearningRate::Auto(Gate::Exact)),
            (None, Some(GateName::Conservative)) => Ok(LearningRate::Auto(Gate::Conservative)),
            (None, Some(GateName::Random)) => {
                let params = self
                    .random_init_params()
                    .ok_or_else(|| field_err("gate", "the random gate needs a random initialization"))?;
                Ok(LearningRate::Auto(Gate::Random {
                    scale: positive("init.random.scale", params.scale)?,
                }))
            }
            (Some(_), Some(_)) => Err(field_err(
                "learning_rate",
                "give exactly one of `learning_rate` and `gate`",
            )),
            (None, None) => Err(field_err("learning_rate", "missing; give `learning_rate` or `gate`")),
        }
    }

    pub fn max_steps(&self) -> Result<usize, CliError> {
        required("max_steps", &self.max_steps)
    }

    pub fn risk_tol(&self) -> Result<f64, CliError> {
        let tol = finite("risk_tol", self.risk_tol.unwrap_or(1e-10))?;
        if tol < 0.0 {
            return Err(field_err("risk_tol", "must be non-negative"));
        }
        Ok(tol)
    }

    pub fn horizon(&self) -> Result<f64, CliError> {
        positive("horizon", required("horizon", &self.horizon)?)
    }

    pub fn step(&self, horizon: f64) -> Result<f64, CliError> {
        let h = positive("step", required("step", &self.step)?)?;
        if h > horizon {
            return Err(field_err("step", format!("{h} exceeds horizon {horizon}")));
        }
        Ok(h)
    }

    pub fn method(&self) -> Method {
        match self.method {
            Some(MethodName::Euler) => Method::Euler,
            _ => Method::Rk4,
        }
    }

    /// `r` values, each at least 1 and strictly increasing.
    pub fn r_sweep(&self) -> Result<Vec<f64>, CliError> {
        let rs = self.r_sweep.clone().unwrap_or_default();
        for &r in &rs {
            if !(r.is_finite() && r >= 1.0) {
                return Err(field_err("r_sweep", format!("{r} must be finite and at least 1")));
            }
        }
        if rs.windows(2).any(|p| p[1] <= p[0]) {
            return Err(field_err("r_sweep", "values must be strictly increasing"));
        }
        Ok(rs)
    }

    pub fn scale(&self) -> Scale {
        match self.scale {
            Some(ScaleName::Full) => Scale::Full,
            _ => Scale::Small,
        }
    }

    pub fn trials(&self) -> Result<Option<usize>, CliError> {
        match self.trials {
            Some(0) => Err(field_err("trials", "must be at least 1")),
            t => Ok(t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_document() {
        let c = Config::parse(
            r#"{"hidden": 1, "alpha": 0.0, "init": {"explicit": [1, 0, 1, 0]},
                "gate": "exact", "max_steps": 10, "r_sweep": [10, 1000]}"#,
        )
        .unwrap();
        assert_eq!(c.init(None).unwrap().as_slice(), &[1.0, 0.0, 1.0, 0.0]);
        assert_eq!(c.learning_rate().unwrap(), LearningRate::Auto(Gate::Exact));
        assert_eq!(c.r_sweep().unwrap(), vec![10.0, 1000.0]);
        assert_eq!(c.risk_tol().unwrap(), 1e-10);
    }

    #[test]
    fn errors_name_the_field() {
        let err = |text: &str| match Config::parse(text) {
            Err(e) => e.to_string(),
            Ok(c) => format!("{:?} {:?}", c.target().err(), c.learning_rate().err()),
        };
        assert!(err(r#"{"hiden": 1}"#).contains("hiden"));
        assert!(err(r#"{"alpha": 1, "target": {"breakpoints": [0, 1], "pieces": [[1]]}}"#).contains("alpha"));
        assert!(err(r#"{"alpha": 1, "learning_rate": 0.1, "gate": "exact"}"#).contains("learning_rate"));
        let c = Config::parse(r#"{"hidden": 2, "init": {"explicit": [1, 2]}}"#).unwrap();
        assert!(c.init(None).unwrap_err().to_string().contains("init"));
        let c = Config::parse(r#"{"r_sweep": [10, 5]}"#).unwrap();
        assert!(c.r_sweep().unwrap_err().to_string().contains("r_sweep"));
        let c = Config::parse(r#"{"hidden": 0}"#).unwrap();
        assert!(c.hidden().unwrap_err().to_string().contains("hidden"));
    }

    #[test]
    fn random_init_and_seed_override() {
        let c =
            Config::parse(r#"{"hidden": 2, "init": {"random": {"scale": 1, "seed": 5}}, "gate": "random"}"#).unwrap();
        let a = c.init(None).unwrap();
        assert_eq!(a, c.init(Some(5)).unwrap());
        assert_ne!(a, c.init(Some(6)).unwrap());
        assert_eq!(
            c.learning_rate().unwrap(),
            LearningRate::Auto(Gate::Random { scale: 1.0 })
        );
        let c = Config::parse(r#"{"hidden": 1, "init": {"explicit": [1, 0, 1, 0]}, "gate": "random"}"#).unwrap();
        assert!(c.learning_rate().is_err());
        assert!(c.init(Some(3)).is_err());
    }

    #[test]
    fn piecewise_target() {
        let c = Config::parse(r#"{"target": {"breakpoints": [0, 0.5, 1], "pieces": [[0, 1], [1, -1]]}}"#).unwrap();
        let t = c.target().unwrap();
        assert_eq!(t.eval(0.75), 0.25);
        assert!(c.alpha().is_err());
        let c = Config::parse(r#"{"target": {"breakpoints": [0, 0.5, 1], "pieces": [[0, 1], [2, -1]]}}"#).unwrap();
        assert!(c.target().unwrap_err().to_string().contains("target"));
    }
}
