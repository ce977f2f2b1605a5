//! Exact training and certification of shallow rectified networks on `[0, 1]`.
//!
//! The crate computes the squared-error risk of a one-hidden-layer ReLU
//! network against a constant or piecewise-polynomial target in closed form,
//! together with its generalized gradient, and checks Lyapunov-type
//! certificates along gradient descent and gradient flow trajectories.

// `!(a < b)` is how NaN lands on the failing side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact_calculus;
pub mod flow;
pub mod lyapunov;
pub mod mollified;
pub mod numeric;
pub mod oracle;
pub mod poly;
pub mod quadrature;
pub mod shallow_net;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use exact_calculus::{evaluate, grad_exact, risk_exact, Evaluation, GradientVector};
pub use poly::Polynomial;
pub use shallow_net::{ParamVector, PiecewisePolynomial, Target};
