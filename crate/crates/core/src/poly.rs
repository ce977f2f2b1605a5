/// Dense univariate polynomial in the monomial basis, coefficients in
/// ascending order of degree.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Self { coeffs };
        p.trim();
        p
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![value])
    }

    /// `slope * x + intercept`
    pub fn affine(slope: f64, intercept: f64) -> Self {
        Self::new(vec![intercept, slope])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Degree of the polynomial; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n).map(|k| self.coeff(k) + other.coeff(k)).collect();
        Self::new(coeffs)
    }

    pub fn sub(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..n).map(|k| self.coeff(k) - other.coeff(k)).collect();
        Self::new(coeffs)
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Self::new(coeffs)
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::new(self.coeffs.iter().map(|c| c * factor).collect())
    }

    /// Exact value of `∫_a^b x^shift · p(x) dx` from the antiderivative.
    pub fn integrate_shifted(&self, a: f64, b: f64, shift: usize) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate() {
            let m = (k + shift + 1) as i32;
            acc += c * (b.powi(m) - a.powi(m)) / f64::from(m);
        }
        acc
    }

    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        self.integrate_shifted(a, b, 0)
    }

    fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    fn trim(&mut self) {
        while matches!(self.coeffs.last(), Some(&c) if c == 0.0) {
            self.coeffs.pop();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_arithmetic() {
        let p = Polynomial::new(vec![1.0, -2.0, 3.0]);
        assert_eq!(p.eval(2.0), 9.0);
        assert_eq!(p.degree(), 2);
        let q = Polynomial::affine(1.0, 1.0);
        assert_eq!(p.mul(&q).eval(2.0), 27.0);
        assert_eq!(p.sub(&p), Polynomial::zero());
        assert_eq!(p.add(&q).eval(-1.0), 6.0);
    }

    #[test]
    fn integrals() {
        let x = Polynomial::affine(1.0, 0.0);
        assert!((x.integrate_shifted(0.0, 1.0, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(Polynomial::constant(1.0).integrate(0.0, 1.0), 1.0);
        assert_eq!(x.integrate(0.5, 1.0), 0.375);
    }
}
