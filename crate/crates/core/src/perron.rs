//! Perron eigenpairs of irreducible Metzler matrices.
//!
//! `σI − M` is an M-matrix for every `σ` above the Perron eigenvalue, so its
//! inverse is entrywise positive. Inverse iteration with such shifts keeps a
//! positive iterate positive. The shift is refreshed every sweep with the
//! upper Collatz-Wielandt quotient `max_i (Mψ)_i / ψ_i` of the current
//! iterate, which is always an upper bound for the eigenvalue and converges
//! to it from above (Noda's scheme); each sweep factors the shifted matrix
//! with a banded LU.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::sparse::{BandedLu, CsrMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: f64,
    /// Strictly positive, equal to one at the anchor node.
    pub psi: GridFunction,
    /// `‖Mψ − λψ‖∞ / ‖ψ‖∞`.
    pub residual: f64,
    /// Collatz-Wielandt bracket of the returned `ψ`.
    pub lower: f64,
    pub upper: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct PerronOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub anchor: usize,
    /// Initial shift; raised to `max row sum + 1` if lower.
    pub shift: Option<f64>,
    /// Positive start vector; all ones when absent.
    pub start: Option<Vec<f64>>,
}

impl Default for PerronOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
            anchor: 0,
            shift: None,
            start: None,
        }
    }
}

/// Smallest eigenvalue tolerance that rounding in `Mψ` allows.
pub fn attainable_tolerance(m: &CsrMatrix) -> f64 {
    64.0 * f64::EPSILON * m.row_sum_bounds().1.max(1.0)
}

/// `(min_i (Mv)_i / v_i, max_i (Mv)_i / v_i)`.
pub fn matrix_cw_bounds(m: &CsrMatrix, v: &[f64]) -> Result<(f64, f64)> {
    if let Some((node, &value)) = v.iter().enumerate().find(|(_, &x)| !(x > 0.0)) {
        return Err(Error::NonPositiveTestFunction { node, value });
    }
    Ok(quotient_bounds(m, v))
}

fn quotient_bounds(m: &CsrMatrix, v: &[f64]) -> (f64, f64) {
    (0..m.n()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
        let q = m.row_dot(i, v) / v[i];
        (lo.min(q), hi.max(q))
    })
}

fn residual(m: &CsrMatrix, psi: &[f64], lambda: f64) -> f64 {
    let norm = psi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let r = (0..m.n())
        .map(|i| (m.row_dot(i, psi) - lambda * psi[i]).abs())
        .fold(0.0, f64::max);
    r / norm
}

/// Perron eigenpair of an irreducible Metzler matrix.
pub fn principal_eigenpair(m: &CsrMatrix, opts: &PerronOptions) -> Result<EigenPair> {
    let n = m.n();
    if n == 0 {
        return Err(Error::InvalidArgument("empty matrix".into()));
    }
    if opts.anchor >= n {
        return Err(Error::InvalidArgument("anchor out of range".into()));
    }
    let (max_row_sum, _) = m.row_sum_bounds();
    let floor = attainable_tolerance(m);
    let tol = opts.tol.max(floor);
    let anchor = opts.anchor;

    let mut psi = match &opts.start {
        Some(s) if s.len() == n && s.iter().all(|&v| v > 0.0 && v.is_finite()) => s.clone(),
        _ => vec![1.0; n],
    };
    normalize(&mut psi, anchor);

    let (mut lower, mut upper) = quotient_bounds(m, &psi);
    let mut sigma = opts.shift.unwrap_or(f64::NEG_INFINITY).max(max_row_sum + 1.0);
    // Perron root is at most the largest row sum, so sigma starts above it.
    sigma = sigma.min(upper.max(max_row_sum) + 1.0).max(upper + floor);
    let mut lambda_prev = f64::NAN;
    let mut best_spread = f64::INFINITY;
    let mut stalled = 0usize;

    for it in 1..=opts.max_iter {
        let mut retries = 0;
        let next = loop {
            let shifted = m.shifted_negation(sigma);
            // A shift at the eigenvalue to working precision only leaves a
            // vanishing pivot; the regularized solve then points along psi.
            let lu = BandedLu::factor(&shifted)
                .unwrap_or_else(|_| BandedLu::factor_regularized(&shifted));
            let attempt = 'solve: {
                let mut y = psi.clone();
                lu.solve_in_place(&mut y);
                let a = y[anchor];
                if !(a != 0.0 && a.is_finite()) {
                    break 'solve None;
                }
                y.iter_mut().for_each(|v| *v /= a);
                y.iter().all(|&v| v > 0.0 && v.is_finite()).then_some(y)
            };
            match attempt {
                Some(y) => break y,
                None if retries < 3 => {
                    retries += 1;
                    let step = (upper - lower).max(floor).max(f64::EPSILON * sigma.abs());
                    sigma += step * (1u64 << (2 * retries)) as f64;
                }
                None => return Err(Error::SingularShift { shift: sigma }),
            }
        };
        psi = next;
        (lower, upper) = quotient_bounds(m, &psi);
        let lambda = 0.5 * (lower + upper);
        let spread = upper - lower;
        let step_ok = (lambda - lambda_prev).abs() <= tol;
        if spread <= tol && step_ok {
            return Ok(finish(m, psi, lower, upper, it));
        }
        if spread < 0.5 * best_spread {
            best_spread = spread;
            stalled = 0;
        } else {
            stalled += 1;
            // rounding floor reached: the bracket no longer shrinks
            if stalled >= 5 && spread <= 1e3 * floor {
                return Ok(finish(m, psi, lower, upper, it));
            }
        }
        lambda_prev = lambda;
        sigma = upper + floor;
    }
    let last = finish(m, psi, lower, upper, opts.max_iter);
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last: Some(Box::new(last)),
    })
}

fn normalize(psi: &mut [f64], anchor: usize) {
    let a = psi[anchor];
    psi.iter_mut().for_each(|v| *v /= a);
}

fn finish(m: &CsrMatrix, psi: Vec<f64>, lower: f64, upper: f64, iterations: usize) -> EigenPair {
    let lambda = 0.5 * (lower + upper);
    EigenPair {
        lambda,
        residual: residual(m, &psi, lambda),
        psi: psi.into(),
        lower,
        upper,
        iterations,
    }
}
