//! Parameter layout and realization of a shallow rectified network on `[0, 1]`.
//!
//! A network with `H` hidden units is a flat vector of length `3H + 1` laid
//! out as `(w_1..w_H, b_1..b_H, v_1..v_H, c)`. Its realization is
//! `N(x) = c + Σ_j v_j max(w_j x + b_j, 0)`; on `[0, 1]` this is piecewise
//! affine with at most `H` interior kinks.

use crate::error::{Error, Result};
use crate::mollified::sigma_r;
use crate::numeric;
use crate::poly::Polynomial;

/// Segments narrower than this are merged into their left neighbour.
pub const MIN_SEGMENT_WIDTH: f64 = 1e-15;

/// Interior breakpoints of a target must agree from both sides to this
/// absolute tolerance.
pub const CONTINUITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    hidden: usize,
    data: Vec<f64>,
}

/// The four parameter groups of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct Unpacked {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
}

pub fn param_len(hidden: usize) -> usize {
    3 * hidden + 1
}

impl ParamVector {
    pub fn new(hidden: usize, data: Vec<f64>) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::ZeroWidth);
        }
        let expected = param_len(hidden);
        if data.len() != expected {
            return Err(Error::Layout {
                hidden,
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { hidden, data })
    }

    /// Infers `H` from the length, which must be `≡ 1 (mod 3)`.
    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        if len < 4 || !(len - 1).is_multiple_of(3) {
            return Err(Error::Layout {
                hidden: len.saturating_sub(1) / 3,
                expected: param_len((len.saturating_sub(1) / 3).max(1)),
                actual: len,
            });
        }
        Self::new((len - 1) / 3, data)
    }

    pub fn zeros(hidden: usize) -> Self {
        assert!(hidden > 0, "hidden width must be positive");
        Self {
            hidden,
            data: vec![0.0; param_len(hidden)],
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn weights(&self) -> &[f64] {
        &self.data[..self.hidden]
    }

    pub fn biases(&self) -> &[f64] {
        &self.data[self.hidden..2 * self.hidden]
    }

    pub fn outer(&self) -> &[f64] {
        &self.data[2 * self.hidden..3 * self.hidden]
    }

    pub fn unpack(&self) -> Unpacked {
        Unpacked {
            w: self.weights().to_vec(),
            b: self.biases().to_vec(),
            v: self.outer().to_vec(),
            c: self.c(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        numeric::norm_sq(&self.data)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self + factor * direction`, without the finiteness check.
    ///
    /// Used by integrators, which detect divergence themselves.
    pub fn axpy(&self, factor: f64, direction: &[f64]) -> Self {
        debug_assert_eq!(direction.len(), self.data.len());
        let data = self.data.iter().zip(direction).map(|(x, d)| x + factor * d).collect();
        Self {
            hidden: self.hidden,
            data,
        }
    }

    /// Neuron `j` has `w_j = b_j = 0`.
    pub fn is_degenerate(&self, j: usize) -> bool {
        self.w(j) == 0.0 && self.b(j) == 0.0
    }
}

/// Splits a flat slice using the parameter layout for width `hidden`.
pub fn unpack(hidden: usize, data: &[f64]) -> Result<Unpacked> {
    Ok(ParamVector::new(hidden, data.to_vec())?.unpack())
}

/// `N(x) = c + Σ_j v_j max(w_j x + b_j, 0)`.
pub fn realize(phi: &ParamVector, x: f64) -> f64 {
    let mut acc = phi.c();
    for j in 0..phi.hidden() {
        acc += phi.v(j) * (phi.w(j) * x + phi.b(j)).max(0.0);
    }
    acc
}

/// Realization with the rectifier replaced by the mollifier `σ_r`.
pub fn realize_mollified(phi: &ParamVector, r: f64, x: f64) -> Result<f64> {
    let mut acc = phi.c();
    for j in 0..phi.hidden() {
        acc += phi.v(j) * sigma_r(r, phi.w(j) * x + phi.b(j))?;
    }
    Ok(acc)
}

/// The set `{x ∈ [0, 1] : w x + b > 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActiveInterval {
    Empty,
    Full,
    /// `(t, 1]` with `t ∈ (0, 1)`.
    LeftOpenAt(f64),
    /// `[0, t)` with `t ∈ (0, 1)`.
    RightUpTo(f64),
}

impl ActiveInterval {
    /// Closure of the interval, `None` when empty. Endpoints are irrelevant
    /// for integration.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            ActiveInterval::Empty => None,
            ActiveInterval::Full => Some((0.0, 1.0)),
            ActiveInterval::LeftOpenAt(t) => Some((t, 1.0)),
            ActiveInterval::RightUpTo(t) => Some((0.0, t)),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        if !(0.0..=1.0).contains(&x) {
            return false;
        }
        match *self {
            ActiveInterval::Empty => false,
            ActiveInterval::Full => true,
            ActiveInterval::LeftOpenAt(t) => x > t,
            ActiveInterval::RightUpTo(t) => x < t,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, ActiveInterval::Empty)
    }
}

pub fn active_interval(w: f64, b: f64) -> ActiveInterval {
    if w == 0.0 {
        return if b > 0.0 {
            ActiveInterval::Full
        } else {
            ActiveInterval::Empty
        };
    }
    let t = -b / w;
    if w > 0.0 {
        if t >= 1.0 {
            ActiveInterval::Empty
        } else if t <= 0.0 {
            ActiveInterval::Full
        } else {
            ActiveInterval::LeftOpenAt(t)
        }
    } else if t <= 0.0 {
        ActiveInterval::Empty
    } else if t >= 1.0 {
        ActiveInterval::Full
    } else {
        ActiveInterval::RightUpTo(t)
    }
}

/// One affine piece of the realization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineSegment {
    pub left: f64,
    pub right: f64,
    pub slope: f64,
    pub intercept: f64,
}

impl AffineSegment {
    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }

    pub fn polynomial(&self) -> Polynomial {
        Polynomial::affine(self.slope, self.intercept)
    }
}

/// Exact closed form of the realization on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseAffineForm {
    pub segments: Vec<AffineSegment>,
    pub breakpoints: Vec<f64>,
}

impl PiecewiseAffineForm {
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self
            .segments
            .partition_point(|s| s.right < x)
            .min(self.segments.len() - 1);
        self.segments[idx].eval(x)
    }
}

/// Kink locations `-b_j / w_j` strictly inside `(0, 1)`, unsorted and with
/// duplicates.
pub fn raw_kinks(phi: &ParamVector) -> Vec<f64> {
    (0..phi.hidden())
        .filter(|&j| phi.w(j) != 0.0)
        .map(|j| -phi.b(j) / phi.w(j))
        .filter(|&t| t > 0.0 && t < 1.0)
        .collect()
}

/// Sorts candidate split points inside `(0, 1)`, removes exact duplicates
/// and drops any point closer than [`MIN_SEGMENT_WIDTH`] to its kept left
/// neighbour or to 1. Returns the full partition including 0 and 1.
pub fn partition_points(mut interior: Vec<f64>) -> Vec<f64> {
    interior.retain(|&t| t > 0.0 && t < 1.0);
    interior.sort_by(f64::total_cmp);
    interior.dedup();
    let mut points = Vec::with_capacity(interior.len() + 2);
    points.push(0.0);
    for t in interior {
        if t - points[points.len() - 1] >= MIN_SEGMENT_WIDTH {
            points.push(t);
        }
    }
    while points.len() > 1 && 1.0 - points[points.len() - 1] < MIN_SEGMENT_WIDTH {
        points.pop();
    }
    points.push(1.0);
    points
}

/// Affine coefficients of the realization on a segment where the active set
/// is constant, determined at `probe`.
pub fn affine_on(phi: &ParamVector, probe: f64) -> (f64, f64) {
    let mut slope = 0.0;
    let mut intercept = phi.c();
    for j in 0..phi.hidden() {
        if phi.w(j) * probe + phi.b(j) > 0.0 {
            slope += phi.v(j) * phi.w(j);
            intercept += phi.v(j) * phi.b(j);
        }
    }
    (slope, intercept)
}

pub fn piecewise_form(phi: &ParamVector) -> PiecewiseAffineForm {
    let points = partition_points(raw_kinks(phi));
    let segments = points
        .windows(2)
        .map(|pair| {
            let (left, right) = (pair[0], pair[1]);
            let (slope, intercept) = affine_on(phi, 0.5 * (left + right));
            AffineSegment {
                left,
                right,
                slope,
                intercept,
            }
        })
        .collect();
    let breakpoints = points[1..points.len() - 1].to_vec();
    PiecewiseAffineForm { segments, breakpoints }
}

/// Continuous piecewise polynomial on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePolynomial {
    breakpoints: Vec<f64>,
    pieces: Vec<Polynomial>,
}

impl PiecewisePolynomial {
    /// `breakpoints` must start at 0, end at 1 and increase strictly; there is
    /// one polynomial per gap.
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<Polynomial>) -> Result<Self> {
        if breakpoints.len() < 2 || pieces.len() + 1 != breakpoints.len() {
            return Err(Error::Target(format!(
                "{} breakpoints need {} pieces, got {}",
                breakpoints.len(),
                breakpoints.len().saturating_sub(1),
                pieces.len()
            )));
        }
        if breakpoints[0] != 0.0 || breakpoints[breakpoints.len() - 1] != 1.0 {
            return Err(Error::Target("breakpoints must start at 0 and end at 1".into()));
        }
        if breakpoints.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::Target("breakpoints must be strictly increasing".into()));
        }
        if pieces.iter().any(|p| p.coeffs().iter().any(|c| !c.is_finite())) {
            return Err(Error::Target("non-finite coefficient".into()));
        }
        for (k, t) in breakpoints[1..breakpoints.len() - 1].iter().enumerate() {
            let jump = (pieces[k].eval(*t) - pieces[k + 1].eval(*t)).abs();
            if jump > CONTINUITY_TOL {
                return Err(Error::Target(format!(
                    "discontinuity of size {jump:e} at breakpoint {t}"
                )));
            }
        }
        Ok(Self { breakpoints, pieces })
    }

    pub fn single(poly: Polynomial) -> Self {
        Self {
            breakpoints: vec![0.0, 1.0],
            pieces: vec![poly],
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Polynomial] {
        &self.pieces
    }

    pub fn max_degree(&self) -> usize {
        self.pieces.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// Index of the piece covering `x`; breakpoints belong to the right piece.
    pub fn piece_index(&self, x: f64) -> usize {
        let k = self.breakpoints.partition_point(|&t| t <= x);
        k.saturating_sub(1).min(self.pieces.len() - 1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.pieces[self.piece_index(x)].eval(x)
    }
}

/// Regression target on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Constant(f64),
    Piecewise(PiecewisePolynomial),
}

impl Target {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Target::Constant(alpha) => *alpha,
            Target::Piecewise(p) => p.eval(x),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Target::Constant(alpha) => Some(*alpha),
            Target::Piecewise(_) => None,
        }
    }

    /// Breakpoints strictly inside `(0, 1)`.
    pub fn interior_breakpoints(&self) -> &[f64] {
        match self {
            Target::Constant(_) => &[],
            Target::Piecewise(p) => &p.breakpoints[1..p.breakpoints.len() - 1],
        }
    }

    /// The polynomial describing the target on a segment that lies inside a
    /// single piece; `probe` is any interior point of that segment.
    pub fn polynomial_at(&self, probe: f64) -> Polynomial {
        match self {
            Target::Constant(alpha) => Polynomial::constant(*alpha),
            Target::Piecewise(p) => p.pieces[p.piece_index(probe)].clone(),
        }
    }
}
