//! Scalar abstraction shared by every density-matrix operation.
//!
//! Two realizations exist: plain complex floats ([`Complex64`]) and
//! univariate polynomials in the gate error probability β with complex
//! coefficients ([`Poly`]). The polynomial realization carries the
//! order-in-β bookkeeping needed by the analytic truncation strategies.

use std::fmt;

use num_complex::Complex64;

/// Coefficients with magnitude at or below this value are treated as zero
/// when determining the leading order of a polynomial. Float round-off from
/// products of `1/sqrt(2)` factors leaves residues around 1e-17.
pub const POLY_ZERO_EPS: f64 = 1e-13;

/// Ring operations plus the order/magnitude queries used by truncation.
pub trait Scalar: Clone + Send + Sync + fmt::Debug + PartialEq + 'static {
    /// True for the polynomial realization, where β stays a formal variable.
    const SYMBOLIC: bool;

    /// The gate error parameter as a scalar: the number itself for floats,
    /// the monomial β for polynomials.
    fn gate_error(beta: f64) -> Self;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_real(x: f64) -> Self;
    fn from_complex(z: Complex64) -> Self;

    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn mul(&self, other: &Self) -> Self;
    fn neg(&self) -> Self;
    fn conj(&self) -> Self;
    /// Multiply by a real constant.
    fn scale(&self, k: f64) -> Self;

    /// `self += a * b` without an intermediate allocation where possible.
    fn add_assign(&mut self, other: &Self);
    fn mul_add_assign(&mut self, a: &Self, b: &Self);

    /// Non-negative ordering key. For polynomials: the magnitude of the
    /// lowest-order nonzero coefficient.
    fn magnitude(&self) -> f64;
    /// Exponent of the lowest-order nonzero term, `None` for zero.
    fn leading_order(&self) -> Option<u32>;
    fn is_zero(&self) -> bool {
        self.leading_order().is_none()
    }
    /// Evaluate at a numeric β. Identity for complex scalars.
    fn eval(&self, beta: f64) -> Complex64;
}

impl Scalar for Complex64 {
    const SYMBOLIC: bool = false;
    fn gate_error(beta: f64) -> Self {
        Complex64::new(beta, 0.0)
    }
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn one() -> Self {
        Complex64::new(1.0, 0.0)
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn from_complex(z: Complex64) -> Self {
        z
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn mul(&self, other: &Self) -> Self {
        self * other
    }
    fn neg(&self) -> Self {
        -self
    }
    fn conj(&self) -> Self {
        Complex64::conj(self)
    }
    fn scale(&self, k: f64) -> Self {
        self * k
    }
    fn add_assign(&mut self, other: &Self) {
        *self += other;
    }
    fn mul_add_assign(&mut self, a: &Self, b: &Self) {
        *self += a * b;
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn leading_order(&self) -> Option<u32> {
        if self.re == 0.0 && self.im == 0.0 {
            None
        } else {
            Some(0)
        }
    }
    fn eval(&self, _beta: f64) -> Complex64 {
        *self
    }
}

/// Dense univariate polynomial in β, coefficients stored lowest order first.
///
/// The coefficient vector is kept trimmed of trailing exact zeros; an empty
/// vector is the zero polynomial.
#[derive(Clone, PartialEq, Default)]
pub struct Poly {
    coeffs: Vec<Complex64>,
}

impl Poly {
    pub fn new(coeffs: Vec<Complex64>) -> Self {
        let mut p = Poly { coeffs };
        p.trim();
        p
    }

    pub fn from_real_coeffs(coeffs: &[f64]) -> Self {
        Poly::new(coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect())
    }

    /// The monomial β.
    pub fn beta() -> Self {
        Poly::from_real_coeffs(&[0.0, 1.0])
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    /// Degree of the stored representation; `None` for zero.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    fn trim(&mut self) {
        while matches!(self.coeffs.last(), Some(c) if c.re == 0.0 && c.im == 0.0) {
            self.coeffs.pop();
        }
    }
}

impl fmt::Debug for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.norm() == 0.0 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            match i {
                0 => write!(f, "({c})")?,
                1 => write!(f, "({c})b")?,
                _ => write!(f, "({c})b^{i}")?,
            }
        }
        Ok(())
    }
}

impl Scalar for Poly {
    const SYMBOLIC: bool = true;
    fn gate_error(_beta: f64) -> Self {
        Poly::beta()
    }
    fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }
    fn one() -> Self {
        Poly::from_real_coeffs(&[1.0])
    }
    fn from_real(x: f64) -> Self {
        Poly::from_real_coeffs(&[x])
    }
    fn from_complex(z: Complex64) -> Self {
        Poly::new(vec![z])
    }
    fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }
    fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }
    fn mul(&self, other: &Self) -> Self {
        if self.coeffs.is_empty() || other.coeffs.is_empty() {
            return Poly::zero();
        }
        let mut out = vec![Complex64::new(0.0, 0.0); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }
    fn neg(&self) -> Self {
        Poly { coeffs: self.coeffs.iter().map(|c| -c).collect() }
    }
    fn conj(&self) -> Self {
        Poly { coeffs: self.coeffs.iter().map(|c| c.conj()).collect() }
    }
    fn scale(&self, k: f64) -> Self {
        Poly::new(self.coeffs.iter().map(|c| c * k).collect())
    }
    fn add_assign(&mut self, other: &Self) {
        if other.coeffs.len() > self.coeffs.len() {
            self.coeffs.resize(other.coeffs.len(), Complex64::new(0.0, 0.0));
        }
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b;
        }
        self.trim();
    }
    fn mul_add_assign(&mut self, a: &Self, b: &Self) {
        if a.coeffs.is_empty() || b.coeffs.is_empty() {
            return;
        }
        let len = a.coeffs.len() + b.coeffs.len() - 1;
        if len > self.coeffs.len() {
            self.coeffs.resize(len, Complex64::new(0.0, 0.0));
        }
        for (i, x) in a.coeffs.iter().enumerate() {
            for (j, y) in b.coeffs.iter().enumerate() {
                self.coeffs[i + j] += x * y;
            }
        }
        self.trim();
    }
    fn magnitude(&self) -> f64 {
        self.leading_order().map_or(0.0, |k| self.coeffs[k as usize].norm())
    }
    fn leading_order(&self) -> Option<u32> {
        self.coeffs.iter().position(|c| c.norm() > POLY_ZERO_EPS).map(|k| k as u32)
    }
    fn eval(&self, beta: f64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, c| acc * beta + c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poly_strategy() -> impl Strategy<Value = Poly> {
        prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..7)
            .prop_map(|cs| Poly::new(cs.into_iter().map(|(r, i)| Complex64::new(r, i)).collect()))
    }

    fn close(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() <= 1e-12 * (1.0 + a.norm().max(b.norm()))
    }

    proptest! {
        #[test]
        fn eval_is_ring_homomorphism(p in poly_strategy(), q in poly_strategy(), beta in 0.0f64..1.0) {
            prop_assert!(close(p.mul(&q).eval(beta), p.eval(beta) * q.eval(beta)));
            prop_assert!(close(p.add(&q).eval(beta), p.eval(beta) + q.eval(beta)));
            prop_assert!(close(p.conj().eval(beta), p.eval(beta).conj()));
        }

        #[test]
        fn leading_orders_add_under_product(p in poly_strategy(), q in poly_strategy()) {
            if let (Some(a), Some(b)) = (p.leading_order(), q.leading_order()) {
                prop_assert_eq!(p.mul(&q).leading_order(), Some(a + b));
            }
        }
    }

    #[test]
    fn leading_order_and_magnitude() {
        let p = Poly::from_real_coeffs(&[0.0, 0.0, -3.0, 1.0]);
        assert_eq!(p.leading_order(), Some(2));
        assert_eq!(p.magnitude(), 3.0);
        assert_eq!(Poly::zero().leading_order(), None);
        assert_eq!(Poly::from_real_coeffs(&[1e-17, 2.0]).leading_order(), Some(1));
        assert_eq!(Complex64::new(0.5, 0.0).leading_order(), Some(0));
        assert_eq!(Complex64::new(0.0, 0.0).leading_order(), None);
    }

    #[test]
    fn mul_add_assign_matches_mul_then_add() {
        let a = Poly::from_real_coeffs(&[1.0, -1.0]);
        let b = Poly::from_real_coeffs(&[0.5, 0.0, 2.0]);
        let mut acc = Poly::from_real_coeffs(&[3.0]);
        acc.mul_add_assign(&a, &b);
        assert_eq!(acc, Poly::from_real(3.0).add(&a.mul(&b)));
        assert_eq!(acc.coeffs().len(), 4);
    }
}
