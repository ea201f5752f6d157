//! Second-order forward-mode differentiation for expression evaluation.
//!
//! A [`Jet`] carries a value, its gradient and its Hessian with respect to up
//! to three coordinates. Evaluating an [`Expr`](crate::Expr) on jets yields
//! exact (machine precision) first and second derivatives of the coefficient
//! or test function.

use core::ops::{Add, Div, Mul, Neg, Sub};

#[allow(unused_imports)]
use num_traits::Float;

pub(crate) const MAX_DIM: usize = 3;

/// Arithmetic needed by the expression evaluator.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn tanh(self) -> Self;
    fn pow(self, exponent: Self) -> Self;

    fn min(self, other: Self) -> Self {
        if other.value() < self.value() {
            other
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if other.value() > self.value() {
            other
        } else {
            self
        }
    }
}

impl Scalar for f64 {
    fn constant(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        Float::exp(self)
    }
    fn ln(self) -> Self {
        Float::ln(self)
    }
    fn sin(self) -> Self {
        Float::sin(self)
    }
    fn cos(self) -> Self {
        Float::cos(self)
    }
    fn sqrt(self) -> Self {
        Float::sqrt(self)
    }
    fn abs(self) -> Self {
        Float::abs(self)
    }
    fn tanh(self) -> Self {
        Float::tanh(self)
    }
    fn pow(self, exponent: Self) -> Self {
        pow_f64(self, exponent)
    }
}

/// `base^exponent` with integer exponents handled exactly for negative bases.
pub(crate) fn pow_f64(base: f64, exponent: f64) -> f64 {
    if Float::fract(exponent) == 0.0 && Float::abs(exponent) <= i32::MAX as f64 {
        Float::powi(base, exponent as i32)
    } else {
        Float::powf(base, exponent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: [f64; MAX_DIM],
    pub h: [[f64; MAX_DIM]; MAX_DIM],
}

impl Jet {
    pub fn variable(v: f64, axis: usize) -> Self {
        let mut j = Self::constant(v);
        j.g[axis] = 1.0;
        j
    }

    /// Applies a scalar function given its value and first two derivatives at `self.v`.
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        let mut out = Jet {
            v: f,
            g: [0.0; MAX_DIM],
            h: [[0.0; MAX_DIM]; MAX_DIM],
        };
        for i in 0..MAX_DIM {
            out.g[i] = df * self.g[i];
            for j in 0..MAX_DIM {
                out.h[i][j] = d2f * self.g[i] * self.g[j] + df * self.h[i][j];
            }
        }
        out
    }

    fn is_constant(&self) -> bool {
        self.g.iter().all(|&g| g == 0.0) && self.h.iter().flatten().all(|&h| h == 0.0)
    }

    fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(r, -r * r, 2.0 * r * r * r)
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        self.v += rhs.v;
        for i in 0..MAX_DIM {
            self.g[i] += rhs.g[i];
            for j in 0..MAX_DIM {
                self.h[i][j] += rhs.h[i][j];
            }
        }
        self
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        self.v = -self.v;
        for i in 0..MAX_DIM {
            self.g[i] = -self.g[i];
            for j in 0..MAX_DIM {
                self.h[i][j] = -self.h[i][j];
            }
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self + (-rhs)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        let mut out = Jet::constant(self.v * rhs.v);
        for i in 0..MAX_DIM {
            out.g[i] = self.v * rhs.g[i] + rhs.v * self.g[i];
            for j in 0..MAX_DIM {
                out.h[i][j] = self.v * rhs.h[i][j]
                    + rhs.v * self.h[i][j]
                    + self.g[i] * rhs.g[j]
                    + rhs.g[i] * self.g[j];
            }
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        self * rhs.recip()
    }
}

impl Scalar for Jet {
    fn constant(v: f64) -> Self {
        Jet {
            v,
            g: [0.0; MAX_DIM],
            h: [[0.0; MAX_DIM]; MAX_DIM],
        }
    }
    fn value(&self) -> f64 {
        self.v
    }
    fn exp(self) -> Self {
        let e = Float::exp(self.v);
        self.chain(e, e, e)
    }
    fn ln(self) -> Self {
        let r = 1.0 / self.v;
        self.chain(Float::ln(self.v), r, -r * r)
    }
    fn sin(self) -> Self {
        let (s, c) = (Float::sin(self.v), Float::cos(self.v));
        self.chain(s, c, -s)
    }
    fn cos(self) -> Self {
        let (s, c) = (Float::sin(self.v), Float::cos(self.v));
        self.chain(c, -s, -c)
    }
    fn sqrt(self) -> Self {
        let s = Float::sqrt(self.v);
        self.chain(s, 0.5 / s, -0.25 / (s * self.v))
    }
    fn abs(self) -> Self {
        if self.v < 0.0 {
            -self
        } else {
            self
        }
    }
    fn tanh(self) -> Self {
        let t = Float::tanh(self.v);
        let d = 1.0 - t * t;
        self.chain(t, d, -2.0 * t * d)
    }
    fn pow(self, exponent: Self) -> Self {
        if exponent.is_constant() {
            let p = exponent.v;
            let f = pow_f64(self.v, p);
            let df = p * pow_f64(self.v, p - 1.0);
            let d2f = p * (p - 1.0) * pow_f64(self.v, p - 2.0);
            self.chain(f, df, d2f)
        } else {
            (exponent * self.ln()).exp()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn product_rule_second_order() {
        // f(x, y) = x^2 y at (3, 2): grad (12, 9), hessian [[4, 6], [6, 0]]
        let x = Jet::variable(3.0, 0);
        let y = Jet::variable(2.0, 1);
        let f = x * x * y;
        assert_eq!(f.v, 18.0);
        assert_eq!(&f.g[..2], &[12.0, 9.0]);
        assert_eq!(f.h[0][0], 4.0);
        assert_eq!(f.h[0][1], 6.0);
        assert_eq!(f.h[1][0], 6.0);
        assert_eq!(f.h[1][1], 0.0);
    }

    #[test]
    fn transcendental_chain_rule_matches_finite_differences() {
        let f = |x: f64| Float::exp(Float::sin(x)) / (1.0 + x * x);
        let x0 = 0.7;
        let xj = Jet::variable(x0, 0);
        let fj = xj.sin().exp() / (Jet::constant(1.0) + xj * xj);
        let h = 1e-4;
        let d1 = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
        let d2 = (f(x0 + h) - 2.0 * f(x0) + f(x0 - h)) / (h * h);
        assert_relative_eq!(fj.g[0], d1, max_relative = 1e-7);
        assert_relative_eq!(fj.h[0][0], d2, max_relative = 1e-5);
    }

    #[test]
    fn constant_power_of_negative_base() {
        let x = Jet::variable(-2.0, 0);
        let f = x.pow(Jet::constant(3.0));
        assert_eq!(f.v, -8.0);
        assert_eq!(f.g[0], 12.0);
        assert_eq!(f.h[0][0], -12.0);
    }
}
