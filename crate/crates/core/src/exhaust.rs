//! Dirichlet eigenvalues on growing domains and Lyapunov drift checks.
//!
//! `λ_R` is nondecreasing in `R` at a fixed spacing (nested grids give
//! principal submatrices). The limit is estimated by fitting
//! `λ_R = λ* − β/R²` to the last three radii; that rate is a convention,
//! exact only for constant-coefficient problems, and the raw sequence is
//! always reported next to it.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::discretize::assemble;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{Grid, Shape};
use crate::hjb::{policy_iteration, PolicyOptions, SemilinearEigenResult};
use crate::model::{DriftCondition, LyapunovSpec, OperatorSpec, Sense};

/// Grid spacing for each radius.
#[derive(Debug, Clone, PartialEq)]
pub enum HRule {
    Fixed(f64),
    /// `h = R · fraction`.
    Relative(f64),
    /// One spacing per radius, in order.
    PerRadius(Vec<f64>),
}

impl HRule {
    pub fn spacing(&self, index: usize, r: f64) -> Result<f64> {
        match self {
            HRule::Fixed(h) => Ok(*h),
            HRule::Relative(f) => Ok(r * f),
            HRule::PerRadius(v) => v
                .get(index)
                .copied()
                .ok_or_else(|| Error::InvalidArgument("fewer spacings than radii".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusRow {
    pub r: f64,
    pub h: f64,
    pub n_nodes: usize,
    pub lambda: f64,
    pub residual: f64,
    pub sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusOutcome {
    pub r: f64,
    pub h: f64,
    pub result: core::result::Result<RadiusRow, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extrapolation {
    /// `λ_R = λ* − β/R²` fitted on the last three radii.
    InverseSquare { beta: f64, fit_rms: f64 },
    /// Fit rejected or too few points: the last value is reported.
    LastValue,
}

impl Extrapolation {
    pub fn tag(&self) -> &'static str {
        match self {
            Extrapolation::InverseSquare { .. } => "inverse-square",
            Extrapolation::LastValue => "last-value",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustionResult {
    pub rows: Vec<RadiusOutcome>,
    pub lambda_star: f64,
    pub model: Extrapolation,
    /// `λ_R` nondecreasing within tolerance over the successful radii.
    pub monotone: bool,
}

impl ExhaustionResult {
    pub fn successes(&self) -> impl Iterator<Item = &RadiusRow> {
        self.rows.iter().filter_map(|r| r.result.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (f64, &str)> {
        self.rows
            .iter()
            .filter_map(|r| r.result.as_ref().err().map(|e| (r.r, e.as_str())))
    }
}

/// Dirichlet eigenvalue on one domain.
pub fn solve_radius(
    spec: &OperatorSpec,
    r: f64,
    h: f64,
    shape: Shape,
    opts: &PolicyOptions,
) -> Result<(RadiusRow, SemilinearEigenResult)> {
    let grid = Grid::new(spec.dim(), r, h, shape)?;
    let opr = assemble(spec, &grid)?;
    let res = policy_iteration(&opr, opts)?;
    let row = RadiusRow {
        r,
        h,
        n_nodes: opr.n(),
        lambda: res.lambda(),
        residual: res.fixed_point_residual,
        sweeps: res.sweeps(),
    };
    Ok((row, res))
}

/// At least two radii, strictly increasing.
pub fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "radii must be strictly increasing with at least two entries".into(),
        ));
    }
    Ok(())
}

/// Solves every radius in order and summarizes.
pub fn lambda_sequence(
    spec: &OperatorSpec,
    radii: &[f64],
    h_rule: &HRule,
    shape: Shape,
    opts: &PolicyOptions,
) -> Result<ExhaustionResult> {
    check_radii(radii)?;
    let mut rows = Vec::with_capacity(radii.len());
    for (i, &r) in radii.iter().enumerate() {
        let h = h_rule.spacing(i, r)?;
        let result = solve_radius(spec, r, h, shape, opts)
            .map(|(row, _)| row)
            .map_err(|e| e.to_string());
        rows.push(RadiusOutcome { r, h, result });
    }
    summarize(rows, opts.tol)
}

/// Extrapolation and monotonicity over already solved radii (sorted by `R`).
pub fn summarize(mut rows: Vec<RadiusOutcome>, tol: f64) -> Result<ExhaustionResult> {
    rows.sort_by(|a, b| a.r.total_cmp(&b.r));
    let ok: Vec<&RadiusRow> = rows.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let Some(last) = ok.last() else {
        return Err(Error::InvalidArgument("no radius was solved".into()));
    };
    let monotone = ok.windows(2).all(|w| {
        let slack = tol.max(1e-12 * w[1].lambda.abs()) + w[0].residual + w[1].residual;
        w[1].lambda >= w[0].lambda - slack
    });
    let (lambda_star, model) = match fit_inverse_square(&ok[ok.len().saturating_sub(3)..]) {
        Some((l, beta, rms)) => (l, Extrapolation::InverseSquare { beta, fit_rms: rms }),
        None => (last.lambda, Extrapolation::LastValue),
    };
    Ok(ExhaustionResult {
        rows,
        lambda_star,
        model,
        monotone,
    })
}

/// Least squares for `λ = a − β x`, `x = 1/R²`. Rejected when fewer than
/// three points are given, when `β` has the wrong sign for a nondecreasing
/// sequence, or when the residual is a sizeable part of the variation.
fn fit_inverse_square(rows: &[&RadiusRow]) -> Option<(f64, f64, f64)> {
    if rows.len() < 3 {
        return None;
    }
    let n = rows.len() as f64;
    let xs: Vec<f64> = rows.iter().map(|r| 1.0 / (r.r * r.r)).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let a = my - slope * mx;
    let beta = -slope;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (a - beta * x)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let spread = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - ys.iter().copied().fold(f64::INFINITY, f64::min);
    if beta < 0.0 || !a.is_finite() || rms > 0.1 * spread + 1e-12 {
        return None;
    }
    Some((a, beta, rms))
}

/// Result of a discrete drift check.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub variant: DriftVariant,
    pub n_nodes: usize,
    /// `max_i [max_u L_u V − (κ₁ 1_K − rate V)]_i`; the condition holds on
    /// the grid when this is `≤ 0`.
    pub worst_violation: f64,
    pub worst_point: Vec<f64>,
    pub holds: bool,
    /// `min_{|x| ≥ r_K} (−max_u L_u V / V)`: the largest rate the grid
    /// supports outside `K`.
    pub gamma_extracted: f64,
    /// Smallest radius outside which the rate inequality holds with `κ₁ = 0`.
    pub compact_radius: f64,
    /// Smallest `κ₁` making the inequality hold inside `K`.
    pub kappa_needed: f64,
    pub tail: Option<TailCondition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftVariant {
    InfCompact,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCondition {
    /// Geometric: `‖c⁻‖∞ + max_{outer shell} max_u c`.
    /// Inf-compact: growth of `βℓ − max_u c` from `K` to the outer shell.
    pub value: f64,
    pub threshold: f64,
    pub holds: bool,
}

/// Checks the drift inequality `max_u L_u V ≤ κ₁ 1_K − γV` (or `− ℓV`) with
/// the solver's discretization, `V` supplied analytically at ghost nodes.
/// This verifies the discrete analogue, not the continuum inequality.
pub fn lyapunov_check(spec: &OperatorSpec, lyap: &LyapunovSpec, grid: &Grid) -> Result<DriftReport> {
    let d = grid.dim();
    let drift_only = spec.with_potential(Expr::num(0.0)).with_sense(Sense::Max);
    let opr = assemble(&drift_only, grid)?;
    let v = grid.sample(|x| lyap.v.eval(x, &[]));
    if let Some((node, value)) = v.first_nonpositive() {
        return Err(Error::NonPositiveTestFunction { node, value });
    }
    let lv = opr.apply_with_boundary(&v, |x| lyap.v.eval(x, &[]));
    let rate: Vec<f64> = match &lyap.condition {
        DriftCondition::Geometric { gamma } => vec![*gamma; grid.len()],
        DriftCondition::InfCompact { ell } => (0..grid.len())
            .map(|i| ell.eval(&grid.coords(i)[..d], &[]))
            .collect(),
    };
    let in_k = |i: usize| grid.norm(i) <= lyap.r_k;

    let mut worst = f64::NEG_INFINITY;
    let mut worst_node = grid.anchor();
    let mut gamma_extracted = f64::INFINITY;
    let mut compact_radius = 0.0f64;
    let mut kappa_needed = 0.0f64;
    for i in 0..grid.len() {
        let k = if in_k(i) { lyap.kappa1 } else { 0.0 };
        let viol = lv[i] - (k - rate[i] * v[i]);
        if viol > worst {
            worst = viol;
            worst_node = i;
        }
        let excess = lv[i] + rate[i] * v[i];
        if in_k(i) {
            kappa_needed = kappa_needed.max(excess);
        } else {
            gamma_extracted = gamma_extracted.min(-lv[i] / v[i]);
        }
        if excess > 0.0 {
            compact_radius = compact_radius.max(grid.norm(i) + grid.h());
        }
    }
    let variant = match lyap.condition {
        DriftCondition::Geometric { .. } => DriftVariant::Geometric,
        DriftCondition::InfCompact { .. } => DriftVariant::InfCompact,
    };
    let tail = Some(match &lyap.condition {
        DriftCondition::Geometric { gamma } => {
            let max_c = |i: usize| max_potential(spec, &grid.coords(i)[..d]);
            let c_minus = (0..grid.len())
                .flat_map(|i| {
                    let x = grid.coords(i);
                    spec.controls()
                        .points()
                        .iter()
                        .map(move |u| (-spec.potential_at(&x[..d], u)).max(0.0))
                        .collect::<Vec<_>>()
                })
                .fold(0.0, f64::max);
            let shell = grid
                .outer_shell()
                .into_iter()
                .map(max_c)
                .fold(f64::NEG_INFINITY, f64::max);
            let value = c_minus + shell;
            TailCondition {
                value,
                threshold: *gamma,
                holds: value < *gamma,
            }
        }
        DriftCondition::InfCompact { ell } => {
            // inf-compactness of βℓ − max_u c, β = 1/2: the outer shell must
            // sit strictly above everything inside K
            let g = |i: usize| {
                let x = grid.coords(i);
                0.5 * ell.eval(&x[..d], &[]) - max_potential(spec, &x[..d])
            };
            let inner = (0..grid.len())
                .filter(|&i| in_k(i))
                .map(g)
                .fold(f64::NEG_INFINITY, f64::max);
            let shell = grid
                .outer_shell()
                .into_iter()
                .map(g)
                .fold(f64::INFINITY, f64::min);
            TailCondition {
                value: shell,
                threshold: inner,
                holds: shell > inner,
            }
        }
    });
    Ok(DriftReport {
        variant,
        n_nodes: grid.len(),
        worst_violation: worst,
        worst_point: grid.coords(worst_node)[..d].to_vec(),
        holds: worst <= 0.0,
        gamma_extracted,
        compact_radius,
        kappa_needed,
        tail,
    })
}

fn max_potential(spec: &OperatorSpec, x: &[f64]) -> f64 {
    spec.controls()
        .points()
        .iter()
        .map(|u| spec.potential_at(x, u))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use core::f64::consts::PI;

    fn spec_1d(a: &str, b: &str, c: &str) -> OperatorSpec {
        OperatorSpec::uncontrolled_1d(
            parse_expr(a).unwrap(),
            parse_expr(b).unwrap(),
            parse_expr(c).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn transient_drift_extrapolates_to_quarter() {
        let spec = spec_1d("1", "-1", "0");
        let res = lambda_sequence(&spec, &[5.0, 10.0, 20.0], &HRule::Fixed(0.01), Shape::Box, &Default::default())
            .unwrap();
        assert!(res.monotone);
        assert!(matches!(res.model, Extrapolation::InverseSquare { .. }));
        assert!((res.lambda_star + 0.25).abs() < 0.005, "{}", res.lambda_star);
        if let Extrapolation::InverseSquare { beta, .. } = res.model {
            assert!((beta - PI * PI / 4.0).abs() < 0.05);
        }
    }

    #[test]
    fn laplacian_extrapolates_to_zero_and_shift_carries_through() {
        let radii = [2.0, 4.0, 8.0];
        let base = lambda_sequence(&spec_1d("1", "0", "0"), &radii, &HRule::Fixed(0.02), Shape::Box, &Default::default())
            .unwrap();
        assert!(base.lambda_star.abs() < 1e-3);
        let shifted = lambda_sequence(&spec_1d("1", "0", "0.7"), &radii, &HRule::Fixed(0.02), Shape::Box, &Default::default())
            .unwrap();
        assert!((shifted.lambda_star - base.lambda_star - 0.7).abs() < 1e-9);
        for (a, b) in base.successes().zip(shifted.successes()) {
            assert!((b.lambda - a.lambda - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn failures_are_kept_and_fit_falls_back() {
        let spec = spec_1d("1", "-1", "0");
        let res = lambda_sequence(
            &spec,
            &[1.0, 2.0, 4.0],
            &HRule::PerRadius(vec![0.05, 1.5, 0.05]),
            Shape::Box,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(res.failures().count(), 1);
        assert_eq!(res.model, Extrapolation::LastValue);
        assert_eq!(res.lambda_star, res.successes().last().unwrap().lambda);
    }

    #[test]
    fn radii_must_increase() {
        let spec = spec_1d("1", "0", "0");
        assert!(lambda_sequence(&spec, &[2.0, 1.0], &HRule::Fixed(0.1), Shape::Box, &Default::default()).is_err());
        assert!(lambda_sequence(&spec, &[2.0], &HRule::Fixed(0.1), Shape::Box, &Default::default()).is_err());
    }

    fn gaussian_v(b: &str, gamma: f64) -> DriftReport {
        let spec = spec_1d("1", b, "0");
        let lyap = LyapunovSpec {
            v: parse_expr("exp(x0^2/4)").unwrap(),
            condition: DriftCondition::Geometric { gamma },
            kappa1: 10.0,
            r_k: 2.0,
        };
        lyapunov_check(&spec, &lyap, &Grid::new(1, 6.0, 0.01, Shape::Box).unwrap()).unwrap()
    }

    #[test]
    fn ou_drift_satisfies_geometric_condition() {
        // L V = (1/2 − x²/4) V
        let rep = gaussian_v("-x0", 0.4);
        assert!(rep.holds, "{rep:?}");
        assert!((rep.gamma_extracted - 0.5).abs() < 0.05);
        assert!(rep.compact_radius <= 2.0 + 0.05);
        let tail = rep.tail.unwrap();
        assert!(tail.holds && tail.value == 0.0);
    }

    #[test]
    fn explosive_drift_fails_outside_origin() {
        let rep = gaussian_v("x0", 0.5);
        assert!(!rep.holds);
        assert!(rep.gamma_extracted < 0.0);
        assert!(rep.compact_radius > 5.9);
    }

    #[test]
    fn inf_compact_variant() {
        let spec = spec_1d("1", "-x0", "-0.1");
        let lyap = LyapunovSpec {
            v: parse_expr("exp(x0^2/4)").unwrap(),
            condition: DriftCondition::InfCompact {
                ell: parse_expr("x0^2/16").unwrap(),
            },
            kappa1: 10.0,
            r_k: 2.0,
        };
        let rep = lyapunov_check(&spec, &lyap, &Grid::new(1, 5.0, 0.01, Shape::Box).unwrap()).unwrap();
        assert_eq!(rep.variant, DriftVariant::InfCompact);
        assert!(rep.holds);
        assert!(rep.tail.unwrap().holds);
    }
}
