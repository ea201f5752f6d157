//! Semilinear eigenproblems `opt_k M_k ψ = λψ` by Howard iteration, the
//! supercritical source problem and the potential cutoff.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;

use crate::discretize::{assemble, DiscreteOperator, Policy};
use crate::error::{Error, Result};
use crate::expr::{Expr, Func};
use crate::grid::{Grid, GridFunction, Shape};
use crate::model::{OperatorSpec, Sense};
use crate::perron::{principal_eigenpair, EigenPair, PerronOptions};
use crate::sparse::BandedLu;

#[derive(Debug, Clone, Copy)]
pub struct PolicyOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    pub max_iter: usize,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_sweeps: 200,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemilinearEigenResult {
    pub pair: EigenPair,
    pub policy: Policy,
    /// Eigenvalue after each sweep.
    pub history: Vec<f64>,
    /// `max_i |opt_k (M_k ψ)_i − λψ_i| / ψ_i`.
    pub fixed_point_residual: f64,
    /// The policy sequence revisited a policy; the best iterate is returned.
    pub cycled: bool,
}

impl SemilinearEigenResult {
    pub fn lambda(&self) -> f64 {
        self.pair.lambda
    }

    pub fn psi(&self) -> &GridFunction {
        &self.pair.psi
    }

    pub fn sweeps(&self) -> usize {
        self.history.len()
    }
}

/// Policy improvement: node `i` switches control only when another one is
/// better by more than the rounding scale of row `i`.
fn improve(opr: &DiscreteOperator, current: &Policy, psi: &[f64]) -> Policy {
    let sense = opr.sense();
    let scale = opr.row_scale(psi);
    let mut next = current.clone();
    for i in 0..opr.n() {
        let thr = 16.0 * f64::EPSILON * scale[i];
        let mut best = opr.matrix(current.0[i]).row_dot(i, psi);
        for k in 0..opr.n_controls() {
            let v = opr.matrix(k).row_dot(i, psi);
            let better = match sense {
                Sense::Min => v < best - thr,
                Sense::Max => v > best + thr,
            };
            if better {
                best = v;
                next.0[i] = k;
            }
        }
    }
    next
}

/// `max_i |opt_k (M_k ψ)_i − λψ_i| / ψ_i`.
pub fn fixed_point_residual(opr: &DiscreteOperator, psi: &[f64], lambda: f64) -> f64 {
    let g = opr.apply_nonlinear(psi);
    g.iter()
        .zip(psi)
        .map(|(gi, pi)| (gi - lambda * pi).abs() / pi)
        .fold(0.0, f64::max)
}

/// Howard iteration: freeze the policy, solve the Perron problem of the
/// frozen matrix, reselect, repeat until the policy is stable.
pub fn policy_iteration(opr: &DiscreteOperator, opts: &PolicyOptions) -> Result<SemilinearEigenResult> {
    let n = opr.n();
    let anchor = opr.grid().anchor();
    let sense = opr.sense();
    let mut policy = opr.select_policy(&vec![1.0; n]);
    let mut start: Option<Vec<f64>> = None;
    let mut history = Vec::new();
    let mut seen = BTreeSet::new();
    let mut best: Option<(EigenPair, Policy)> = None;

    for _ in 0..opts.max_sweeps {
        let m = opr.frozen(&policy);
        let pair = principal_eigenpair(
            &m,
            &PerronOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                anchor,
                shift: Some(opr.shift()),
                start: start.take(),
            },
        )?;
        history.push(pair.lambda);
        seen.insert(policy.0.clone());
        let next = if opr.n_controls() == 1 {
            policy.clone()
        } else {
            improve(opr, &policy, &pair.psi)
        };
        let keep = match &best {
            None => true,
            Some((b, _)) => sense.improves(pair.lambda, b.lambda),
        };
        if keep {
            best = Some((pair.clone(), policy.clone()));
        }
        if next == policy {
            return Ok(finish(opr, pair, policy, history, false));
        }
        if seen.contains(&next.0) {
            let (pair, policy) = best.expect("at least one sweep ran");
            return Ok(finish(opr, pair, policy, history, true));
        }
        start = Some(pair.psi.into_vec());
        policy = next;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_sweeps,
        last: best.map(|(p, _)| alloc::boxed::Box::new(p)),
    })
}

fn finish(
    opr: &DiscreteOperator,
    pair: EigenPair,
    policy: Policy,
    history: Vec<f64>,
    cycled: bool,
) -> SemilinearEigenResult {
    let fixed_point_residual = fixed_point_residual(opr, &pair.psi, pair.lambda);
    SemilinearEigenResult {
        pair,
        policy,
        history,
        fixed_point_residual,
        cycled,
    }
}

/// Solution of `opt_k (M_k φ) − λφ = −f` with `φ(anchor) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSolution {
    pub phi: GridFunction,
    pub policy: Policy,
    pub sweeps: usize,
    /// Factor applied to the raw solution to put one at the anchor.
    pub scale: f64,
}

/// Policy iteration for the source problem `opt_k (M_k φ) − λφ = −f`,
/// `f ≥ 0`, started from `policy`. Each frozen policy needs
/// `λ > λ_PF(M_v)`, which holds for the eigen-policy when `λ` is above the
/// Dirichlet eigenvalue and is preserved by improvement.
pub fn solve_source(
    opr: &DiscreteOperator,
    lambda: f64,
    f: &[f64],
    policy: Policy,
    max_sweeps: usize,
) -> Result<SourceSolution> {
    let anchor = opr.grid().anchor();
    let mut policy = policy;
    for sweep in 1..=max_sweeps {
        let m = opr.frozen(&policy);
        let lu = BandedLu::factor(&m.shifted_negation(lambda))?;
        let phi = lu.solve(f);
        if let Some((node, &v)) = phi.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::LinearSolveFailure(alloc::format!(
                "source solution not positive at node {node} (value {v})"
            )));
        }
        let next = improve(opr, &policy, &phi);
        if next == policy {
            let scale = 1.0 / phi[anchor];
            let phi: GridFunction = phi.iter().map(|v| v * scale).collect();
            return Ok(SourceSolution {
                phi,
                policy,
                sweeps: sweep,
                scale,
            });
        }
        policy = next;
    }
    Err(Error::NoConvergence {
        iterations: max_sweeps,
        last: None,
    })
}

/// Nonnegative radial bump `cos²(π(|x| − mid)/(outer − inner))` on the
/// annulus `inner ≤ |x| ≤ outer`, zero elsewhere.
pub fn annulus_bump(grid: &Grid, inner: f64, outer: f64) -> GridFunction {
    let mid = 0.5 * (inner + outer);
    let w = outer - inner;
    (0..grid.len())
        .map(|i| {
            let r = grid.norm(i);
            if r >= inner && r <= outer {
                let c = (PI * (r - mid) / w).cos();
                c * c
            } else {
                0.0
            }
        })
        .collect()
}

/// One domain pair `(B_n, B_{n+1})` of the eigenfunction construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenfunctionStage {
    pub inner: f64,
    pub outer: f64,
    pub n_nodes: usize,
    pub lambda_dirichlet: f64,
    pub sweeps: usize,
    /// `‖opt_k M_k φ − λφ‖∞ / ‖φ‖∞` over nodes with `|x| < inner − h`.
    pub interior_residual: f64,
    pub min_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenfunctionResult {
    pub lambda: f64,
    /// φ on the largest grid.
    pub grid: Grid,
    pub phi: GridFunction,
    pub stages: Vec<EigenfunctionStage>,
}

/// Positive solutions of `𝒢φ − λφ = −f_n` on `B_{n+1}` with `f_n` a bump on
/// `B_{n+1} ∖ B_n`, for consecutive pairs of `radii`.
pub fn eigenfunction_at_lambda(
    spec: &OperatorSpec,
    lambda: f64,
    radii: &[f64],
    h: f64,
    shape: Shape,
    opts: &PolicyOptions,
) -> Result<EigenfunctionResult> {
    if radii.len() < 2 || radii.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(
            "need at least two strictly increasing radii".into(),
        ));
    }
    let mut stages = Vec::new();
    let mut last = None;
    // check against the largest domain first: it has the largest eigenvalue
    let largest = assemble(spec, &Grid::new(spec.dim(), radii[radii.len() - 1], h, shape)?)?;
    let top = policy_iteration(&largest, opts)?;
    if !(lambda > top.lambda()) {
        return Err(Error::NotSupercritical {
            lambda,
            lambda_dirichlet: top.lambda(),
        });
    }
    for w in radii.windows(2) {
        let (inner, outer) = (w[0], w[1]);
        let (opr, eig) = if outer == radii[radii.len() - 1] {
            (largest.clone(), top.clone())
        } else {
            let opr = assemble(spec, &Grid::new(spec.dim(), outer, h, shape)?)?;
            let eig = policy_iteration(&opr, opts)?;
            (opr, eig)
        };
        let f = annulus_bump(opr.grid(), inner, outer);
        if f.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "annulus [{inner}, {outer}] contains no grid node"
            )));
        }
        let sol = solve_source(&opr, lambda, &f, eig.policy.clone(), opts.max_sweeps)?;
        let g = opr.apply_nonlinear(&sol.phi);
        let norm = sol.phi.norm_inf();
        let interior_residual = (0..opr.n())
            .filter(|&i| opr.grid().norm(i) < inner - h)
            .map(|i| (g[i] - lambda * sol.phi[i]).abs())
            .fold(0.0, f64::max)
            / norm;
        stages.push(EigenfunctionStage {
            inner,
            outer,
            n_nodes: opr.n(),
            lambda_dirichlet: eig.lambda(),
            sweeps: sol.sweeps,
            interior_residual,
            min_value: sol.phi.iter().copied().fold(f64::INFINITY, f64::min),
        });
        last = Some((opr.grid().clone(), sol.phi));
    }
    let (grid, phi) = last.expect("at least one pair");
    Ok(EigenfunctionResult {
        lambda,
        grid,
        phi,
        stages,
    })
}

/// Value used for the potential outside the cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tail {
    Given(f64),
    /// Maximum of `max_u c` over the outer shell of the grid.
    Estimate,
}

/// `max_{i ∈ outer shell} max_u c(x_i, u)`.
pub fn estimate_tail(spec: &OperatorSpec, grid: &Grid) -> f64 {
    let d = grid.dim();
    grid.outer_shell()
        .into_iter()
        .flat_map(|i| {
            let x = grid.coords(i);
            spec.controls()
                .points()
                .iter()
                .map(move |u| spec.potential_at(&x[..d], u))
                .collect::<Vec<_>>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// The smooth cutoff `ζ_m`: one on `|x| ≤ m`, `cos²(π(|x| − m)/2)` on
/// `m ≤ |x| ≤ m + 1`, zero beyond.
pub fn cutoff(dim: usize, m: f64) -> Expr {
    let s = Expr::call(
        Func::Min,
        vec![
            Expr::call(Func::Max, vec![Expr::radius(dim) - Expr::num(m), Expr::num(0.0)]),
            Expr::num(1.0),
        ],
    );
    let c = Expr::call(Func::Cos, vec![Expr::num(PI / 2.0) * s]);
    c.clone() * c
}

/// Replaces `c` by `ζ_m c + (1 − ζ_m)(δ + tail)`.
pub fn perturb_potential(spec: &OperatorSpec, m: f64, delta: f64, tail: f64) -> Result<OperatorSpec> {
    if !(delta > 0.0) || !(m >= 1.0) || !tail.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!(
            "need δ > 0, m ≥ 1 and a finite tail, got δ = {delta}, m = {m}, tail = {tail}"
        )));
    }
    let zeta = cutoff(spec.dim(), m);
    let c = zeta.clone() * spec.potential().clone()
        + (Expr::num(1.0) - zeta) * Expr::num(delta + tail);
    Ok(spec.with_potential(c))
}

/// [`perturb_potential`] with the tail resolved against `grid`.
pub fn perturb_potential_with(
    spec: &OperatorSpec,
    m: f64,
    delta: f64,
    tail: Tail,
    grid: &Grid,
) -> Result<OperatorSpec> {
    let t = match tail {
        Tail::Given(t) => t,
        Tail::Estimate => estimate_tail(spec, grid),
    };
    perturb_potential(spec, m, delta, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::grid::build_grid;
    use crate::model::ControlSet;
    use crate::perron::principal_eigenpair;

    fn bang_bang(sense: Sense, c: &str, r: f64, h: f64) -> DiscreteOperator {
        let spec = OperatorSpec::new(
            1,
            vec![parse_expr("1").unwrap()],
            vec![parse_expr("u0").unwrap()],
            parse_expr(c).unwrap(),
            sense,
            ControlSet::scalar(&[-1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assemble(&spec, &build_grid(1, r, h, Shape::Box).unwrap()).unwrap()
    }

    fn enumerate(opr: &DiscreteOperator) -> Vec<f64> {
        let (n, k) = (opr.n(), opr.n_controls());
        (0..k.pow(n as u32))
            .map(|mut code| {
                let p = Policy(
                    (0..n)
                        .map(|_| {
                            let v = code % k;
                            code /= k;
                            v
                        })
                        .collect(),
                );
                principal_eigenpair(&opr.frozen(&p), &Default::default()).unwrap().lambda
            })
            .collect()
    }

    #[test]
    fn single_control_is_one_sweep() {
        let spec = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("-1").unwrap(),
            parse_expr("0").unwrap(),
        )
        .unwrap();
        let opr = assemble(&spec, &build_grid(1, 1.0, 0.05, Shape::Box).unwrap()).unwrap();
        let r = policy_iteration(&opr, &Default::default()).unwrap();
        let p = principal_eigenpair(
            opr.matrix(0),
            &PerronOptions {
                anchor: opr.grid().anchor(),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(r.sweeps(), 1);
        assert!((r.lambda() - p.lambda).abs() < 1e-12);
    }

    #[test]
    fn matches_policy_enumeration_both_senses() {
        for sense in [Sense::Min, Sense::Max] {
            let opr = bang_bang(sense, "sin(3*x0)", 1.0, 0.25);
            assert_eq!(opr.n(), 7);
            let all = enumerate(&opr);
            let want = match sense {
                Sense::Min => all.iter().copied().fold(f64::INFINITY, f64::min),
                Sense::Max => all.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            let r = policy_iteration(&opr, &Default::default()).unwrap();
            assert!((r.lambda() - want).abs() < 1e-9, "{sense:?}: {} vs {want}", r.lambda());
            assert!(r.fixed_point_residual < 1e-8);
            assert!(!r.cycled);
        }
    }

    #[test]
    fn history_is_monotone_and_final_matches_frozen_matrix() {
        let opr = bang_bang(Sense::Min, "x0^2", 2.0, 0.1);
        let r = policy_iteration(&opr, &Default::default()).unwrap();
        assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let frozen = principal_eigenpair(
            &opr.frozen(&r.policy),
            &PerronOptions {
                anchor: opr.grid().anchor(),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((frozen.lambda - r.lambda()).abs() < 1e-9);
        let dev = frozen
            .psi
            .iter()
            .zip(r.psi().iter())
            .map(|(a, b)| (a / b - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(dev < 1e-8);
    }

    #[test]
    fn source_problem_at_zero_for_transient_drift() {
        let spec = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("-1").unwrap(),
            parse_expr("0").unwrap(),
        )
        .unwrap();
        let h = 0.05;
        let res = eigenfunction_at_lambda(&spec, 0.0, &[2.0, 4.0, 6.0], h, Shape::Box, &Default::default())
            .unwrap();
        assert_eq!(res.stages.len(), 2);
        assert!(res.phi.is_positive());
        assert!((res.phi[res.grid.anchor()] - 1.0).abs() < 1e-15);
        for s in &res.stages {
            assert!(s.interior_residual <= 10.0 * h);
            assert!(s.min_value > 0.0);
        }
    }

    #[test]
    fn below_dirichlet_value_is_rejected() {
        let spec = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("-1").unwrap(),
            parse_expr("0").unwrap(),
        )
        .unwrap();
        let err = eigenfunction_at_lambda(&spec, -1.0, &[1.0, 2.0], 0.05, Shape::Box, &Default::default())
            .unwrap_err();
        assert!(matches!(err, Error::NotSupercritical { .. }));
    }

    #[test]
    fn one_above_dirichlet_is_positive() {
        let opr = bang_bang(Sense::Min, "cos(x0)", 3.0, 0.1);
        let eig = policy_iteration(&opr, &Default::default()).unwrap();
        let f = annulus_bump(opr.grid(), 2.0, 3.0);
        let sol = solve_source(&opr, eig.lambda() + 1.0, &f, eig.policy.clone(), 100).unwrap();
        assert!(sol.phi.is_positive());
        let g = opr.apply_nonlinear(&sol.phi);
        for i in 0..opr.n() {
            let want = (eig.lambda() + 1.0) * sol.phi[i] - f[i] * sol.scale;
            assert!((g[i] - want).abs() < 1e-8 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn cutoff_potential_values() {
        let spec = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("0").unwrap(),
            parse_expr("0").unwrap(),
        )
        .unwrap();
        let p = perturb_potential(&spec, 2.0, 0.1, 0.0).unwrap();
        let c = |x: f64| p.potential_at(&[x], &[]);
        assert_eq!(c(0.0), 0.0);
        assert_eq!(c(2.0), 0.0);
        assert!((c(3.0) - 0.1).abs() < 1e-15);
        assert!((c(-7.5) - 0.1).abs() < 1e-15);
        assert!((c(2.5) - 0.05).abs() < 1e-15);

        let g = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("0").unwrap(),
            parse_expr("-exp(-x0^2)").unwrap(),
        )
        .unwrap();
        let p = perturb_potential(&g, 1.0, 0.1, 0.0).unwrap();
        assert_eq!(p.potential_at(&[0.0], &[]), -1.0);
        assert!(perturb_potential(&g, 0.5, 0.1, 0.0).is_err());
        assert!(perturb_potential(&g, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn tail_estimate_reads_outer_shell() {
        let spec = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("0").unwrap(),
            parse_expr("x0").unwrap(),
        )
        .unwrap();
        let g = build_grid(1, 1.0, 0.25, Shape::Box).unwrap();
        assert_eq!(estimate_tail(&spec, &g), 0.75);
    }
}
