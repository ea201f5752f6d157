//! Collatz-Wielandt certificates, the measure-side minimax value and
//! numerical maximum-principle checkers.
//!
//! Grid-level certificates are exact statements about the discretized
//! operator: for positive `ψ`,
//! `min_i (𝒢ψ)_i/ψ_i ≤ λ_D ≤ max_i (𝒢ψ)_i/ψ_i` holds for the matrix problem.
//! They say something about the continuum only through a convergence study.
//! Continuum-level quotients of an analytic `ψ` are evaluated exactly from
//! its derivatives and bound the continuum eigenvalue instead.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discretize::DiscreteOperator;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::GridFunction;
use crate::hjb::{policy_iteration, PolicyOptions};
use crate::model::{OperatorSpec, Sense};
use crate::sparse::BandedLu;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Lower,
    Upper,
}

/// Class of test functions the bound is valid for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidityTag {
    /// `ψ > 0` inside, zero on the boundary.
    VanishingBoundary,
    /// `ψ > 0` only; boundary values are whatever `ψ` takes there.
    InteriorPositive,
}

/// What the bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// The finite-difference matrix problem on the grid.
    Discrete,
    /// The differential operator, quotient evaluated analytically at the
    /// grid nodes.
    Continuum,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PsiSource {
    Grid,
    Expr(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub kind: Kind,
    pub bound: f64,
    pub tag: ValidityTag,
    pub level: Level,
    pub psi_source: PsiSource,
    /// `(𝒢ψ)_i / ψ_i` node-wise.
    pub quotient: GridFunction,
    pub quotient_min: f64,
    pub quotient_max: f64,
    pub argmin_node: usize,
    pub argmax_node: usize,
}

fn check_positive(psi: &[f64]) -> Result<()> {
    match psi.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        Some((node, &value)) => Err(Error::NonPositiveTestFunction { node, value }),
        None => Ok(()),
    }
}

fn build(
    kind: Kind,
    tag: ValidityTag,
    level: Level,
    psi_source: PsiSource,
    quotient: GridFunction,
) -> Certificate {
    let (mut argmin_node, mut argmax_node) = (0, 0);
    for (i, &q) in quotient.iter().enumerate() {
        if q < quotient[argmin_node] {
            argmin_node = i;
        }
        if q > quotient[argmax_node] {
            argmax_node = i;
        }
    }
    let quotient_min = quotient[argmin_node];
    let quotient_max = quotient[argmax_node];
    Certificate {
        kind,
        bound: match kind {
            Kind::Lower => quotient_min,
            Kind::Upper => quotient_max,
        },
        tag,
        level,
        psi_source,
        quotient,
        quotient_min,
        quotient_max,
        argmin_node,
        argmax_node,
    }
}

fn grid_quotient(opr: &DiscreteOperator, psi: &[f64]) -> GridFunction {
    let g = opr.apply_nonlinear(psi);
    g.iter().zip(psi).map(|(a, b)| a / b).collect()
}

/// `min_i (𝒢ψ)_i / ψ_i`, a lower bound for the discrete eigenvalue.
pub fn cw_lower(opr: &DiscreteOperator, psi: &[f64]) -> Result<Certificate> {
    check_positive(psi)?;
    Ok(build(
        Kind::Lower,
        ValidityTag::VanishingBoundary,
        Level::Discrete,
        PsiSource::Grid,
        grid_quotient(opr, psi),
    ))
}

/// `max_i (𝒢ψ)_i / ψ_i`, an upper bound for the discrete eigenvalue.
pub fn cw_upper(opr: &DiscreteOperator, psi: &[f64]) -> Result<Certificate> {
    check_positive(psi)?;
    Ok(build(
        Kind::Upper,
        ValidityTag::VanishingBoundary,
        Level::Discrete,
        PsiSource::Grid,
        grid_quotient(opr, psi),
    ))
}

/// Certificate for an analytic test function.
///
/// At the discrete level a lower bound sees `ψ` only at interior nodes
/// (zero boundary data), while an upper bound uses the analytic `ψ` at ghost
/// nodes, which only raises the quotient. At the continuum level the
/// quotient is `(a:∇²ψ + opt_u[b·∇ψ + cψ]) / ψ` evaluated exactly at the
/// nodes.
pub fn cw_expr(
    spec: &OperatorSpec,
    opr: &DiscreteOperator,
    psi: &Expr,
    kind: Kind,
    level: Level,
) -> Result<Certificate> {
    let grid = opr.grid();
    let d = grid.dim();
    let values = grid.sample(|x| psi.eval(x, &[]));
    check_positive(&values)?;
    let quotient: GridFunction = match level {
        Level::Discrete => {
            let g = match kind {
                Kind::Lower => opr.apply_nonlinear(&values),
                Kind::Upper => opr.apply_with_boundary(&values, |x| psi.eval(x, &[])),
            };
            g.iter().zip(values.iter()).map(|(a, b)| a / b).collect()
        }
        Level::Continuum => {
            let sense = opr.sense();
            let mut a = [0.0; 9];
            let mut b = [0.0; 3];
            (0..grid.len())
                .map(|i| {
                    let x = grid.coords(i);
                    let x = &x[..d];
                    let (v, g, h) = psi.eval_jet(x, &[]);
                    spec.diffusion_at(x, &mut a[..d * d]);
                    let mut second = 0.0;
                    for r in 0..d {
                        for c in 0..d {
                            second += a[r * d + c] * h[r][c];
                        }
                    }
                    let first = spec
                        .controls()
                        .points()
                        .iter()
                        .map(|u| {
                            spec.drift_at(x, u, &mut b[..d]);
                            (0..d).map(|k| b[k] * g[k]).sum::<f64>() + spec.potential_at(x, u) * v
                        })
                        .reduce(|p, q| sense.pick(p, q))
                        .unwrap_or(0.0);
                    (second + first) / v
                })
                .collect()
        }
    };
    let tag = match kind {
        Kind::Lower => ValidityTag::VanishingBoundary,
        Kind::Upper => ValidityTag::InteriorPositive,
    };
    Ok(build(kind, tag, level, PsiSource::Expr(psi.to_source()), quotient))
}

#[derive(Debug, Clone, Copy)]
pub struct MinimaxOptions {
    /// Outer (measure) steps.
    pub mu_steps: usize,
    /// Target width of the bracket `[lower, upper]`.
    pub tol: f64,
    pub inner_iters: usize,
    /// Mirror step relative to the operator scale.
    pub step: f64,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        Self {
            mu_steps: 5000,
            tol: 1e-4,
            inner_iters: 400,
            step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxResult {
    /// `Σ μ_i q_i(w)` at the final iterate.
    pub value: f64,
    /// Best `min_i q_i` and `max_i q_i` seen; they bracket the eigenvalue.
    pub lower: f64,
    pub upper: f64,
    pub mu: Vec<f64>,
    /// Final `w = log ψ`.
    pub w: Vec<f64>,
    pub steps: usize,
}

impl MinimaxResult {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Dense copy of the per-control matrices for the small problems the
/// minimax targets.
struct Dense {
    n: usize,
    k: usize,
    /// `m[k][i*n + j]`.
    m: Vec<Vec<f64>>,
}

impl Dense {
    fn new(opr: &DiscreteOperator) -> Self {
        Self {
            n: opr.n(),
            k: opr.n_controls(),
            m: opr.matrices().iter().map(|m| m.to_dense()).collect(),
        }
    }

    /// `a_ik(w) = M_k,ii + Σ_{j≠i} M_k,ij e^{w_j − w_i}`.
    fn terms(&self, w: &[f64], i: usize, k: usize) -> f64 {
        let row = &self.m[k][i * self.n..(i + 1) * self.n];
        let mut s = row[i];
        for j in 0..self.n {
            if j != i && row[j] != 0.0 {
                s += row[j] * (w[j] - w[i]).exp();
            }
        }
        s
    }

    /// Exact quotients `max_k a_ik(w)`.
    fn quotients(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (0..self.k)
                    .map(|k| self.terms(w, i, k))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// `F(w) = Σ_i μ_i smax_k a_ik(w)` with the soft maximum at
    /// temperature `tau`, and its gradient.
    fn objective(&self, mu: &[f64], w: &[f64], tau: f64, grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut f = 0.0;
        let mut a = vec![0.0; self.k];
        for i in 0..self.n {
            for (k, ak) in a.iter_mut().enumerate() {
                *ak = self.terms(w, i, k);
            }
            let amax = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (s, weights): (f64, Vec<f64>) = if self.k == 1 {
                (amax, vec![1.0])
            } else {
                let e: Vec<f64> = a.iter().map(|v| ((v - amax) / tau).exp()).collect();
                let z: f64 = e.iter().sum();
                (amax + tau * z.ln(), e.iter().map(|v| v / z).collect())
            };
            f += mu[i] * s;
            for (k, &p) in weights.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let row = &self.m[k][i * self.n..(i + 1) * self.n];
                for j in 0..self.n {
                    if j != i && row[j] != 0.0 {
                        let t = mu[i] * p * row[j] * (w[j] - w[i]).exp();
                        grad[j] += t;
                        grad[i] -= t;
                    }
                }
            }
        }
        f
    }
}

/// Gradient descent with Barzilai-Borwein steps and Armijo backtracking
/// (factor 0.5, slope 1e-4).
fn inner_minimize(dense: &Dense, mu: &[f64], w: &mut [f64], tau: f64, iters: usize, gtol: f64) {
    let n = dense.n;
    let mut g = vec![0.0; n];
    let mut f = dense.objective(mu, w, tau, &mut g);
    let mut step = 1.0 / (1.0 + g.iter().map(|v| v.abs()).fold(0.0, f64::max));
    let mut trial = vec![0.0; n];
    let mut gt = vec![0.0; n];
    for _ in 0..iters {
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2.sqrt() <= gtol {
            break;
        }
        let mut alpha = step;
        let mut accepted = false;
        for _ in 0..60 {
            for j in 0..n {
                trial[j] = w[j] - alpha * g[j];
            }
            let ft = dense.objective(mu, &trial, tau, &mut gt);
            if ft.is_finite() && ft <= f - 1e-4 * alpha * gnorm2 {
                // BB1 step for the next iteration
                let (mut sy, mut ss) = (0.0, 0.0);
                for j in 0..n {
                    let s = trial[j] - w[j];
                    sy += s * (gt[j] - g[j]);
                    ss += s * s;
                }
                step = if sy > 0.0 { (ss / sy).min(1e6) } else { 2.0 * alpha };
                w.copy_from_slice(&trial);
                g.copy_from_slice(&gt);
                f = ft;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    // fix the additive gauge
    let mean = w.iter().sum::<f64>() / n as f64;
    w.iter_mut().for_each(|v| *v -= mean);
}

/// `sup_μ inf_w Σ_i μ_i (ℋe^w)_i / e^{w_i}` for a max-sense operator.
///
/// The inner problem is convex in `w = log ψ` and is solved by gradient
/// descent; the measure is updated by multiplicative (mirror) ascent with
/// the quotients as gradient. Every `w` gives the bracket
/// `min_i q_i ≤ λ_D(ℋ) ≤ max_i q_i`, which is the stopping rule.
pub fn minimax_measure(opr: &DiscreteOperator, opts: &MinimaxOptions) -> Result<MinimaxResult> {
    if opr.sense() != Sense::Max {
        return Err(Error::InvalidArgument("minimax_measure needs a max-sense operator".into()));
    }
    let dense = Dense::new(opr);
    let n = dense.n;
    let mut mu = vec![1.0 / n as f64; n];
    let mut w = vec![0.0; n];
    let scale = opr.shift();
    let mut lower = f64::NEG_INFINITY;
    let mut upper = f64::INFINITY;
    let mut tau = 1e-2 * scale;
    let tau_min = 1e-3 * opts.tol / (dense.k as f64).ln().max(1.0);

    let mut eta = opts.step / scale;
    let mut prev_value = f64::NEG_INFINITY;
    for step in 1..=opts.mu_steps {
        inner_minimize(&dense, &mu, &mut w, tau, opts.inner_iters, 1e-12 * scale);
        let q = dense.quotients(&w);
        let qmin = q.iter().copied().fold(f64::INFINITY, f64::min);
        let qmax = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        lower = lower.max(qmin);
        upper = upper.min(qmax);
        let value: f64 = mu.iter().zip(&q).map(|(m, v)| m * v).sum();
        if upper - lower <= opts.tol {
            return Ok(MinimaxResult {
                value: 0.5 * (lower + upper),
                lower,
                upper,
                mu,
                w,
                steps: step,
            });
        }
        // g(μ) = inf_w F_μ is concave: grow the step while it increases,
        // halve it when the ascent overshoots
        if value >= prev_value {
            eta *= 1.2;
        } else {
            eta *= 0.5;
        }
        prev_value = value;
        let mut z = 0.0;
        for i in 0..n {
            mu[i] *= (eta * (q[i] - value)).exp();
            mu[i] = mu[i].max(1e-300);
            z += mu[i];
        }
        mu.iter_mut().for_each(|m| *m /= z);
        tau = (0.5 * tau).max(tau_min);
    }
    Err(Error::MinimaxNoConvergence {
        gap: upper - lower,
        lower,
        upper,
    })
}

/// Outcome of a maximum-principle check.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// The hypotheses of the check do not hold for the input.
    NotApplicable(String),
    /// `φ = κ Φ*` with the given maximum relative deviation.
    Proportional { kappa: f64, max_deviation: f64 },
    /// `φ < 0` everywhere.
    Negative { max: f64 },
    /// `φ = 0` up to tolerance.
    Zero { norm: f64 },
    /// The conclusion fails at `node`; at the discrete level this indicates a
    /// solver bug.
    Counterexample { node: usize, value: f64 },
}

/// If `𝒢φ ≥ λ*φ − tol` and `φ` is positive somewhere, then `φ` must be a
/// multiple of the ground state `Φ*`.
pub fn ground_state_check(
    opr: &DiscreteOperator,
    phi: &[f64],
    lambda: f64,
    ground: &[f64],
    tol: f64,
) -> Verdict {
    if let Err(e) = check_positive(ground) {
        return Verdict::NotApplicable(alloc::format!("ground state not positive: {e}"));
    }
    if !phi.iter().any(|&v| v > 0.0) {
        return Verdict::NotApplicable("φ is nowhere positive".into());
    }
    let g = opr.apply_nonlinear(phi);
    let scale = phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if let Some(i) = (0..phi.len()).find(|&i| g[i] < lambda * phi[i] - tol * scale) {
        return Verdict::NotApplicable(alloc::format!(
            "supersolution inequality fails at node {i}"
        ));
    }
    let ratio: Vec<f64> = phi.iter().zip(ground).map(|(a, b)| a / b).collect();
    let kappa = ratio.iter().sum::<f64>() / ratio.len() as f64;
    let (node, dev) = ratio
        .iter()
        .map(|r| (r - kappa).abs() / kappa.abs())
        .enumerate()
        .fold((0, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    if dev < tol {
        Verdict::Proportional {
            kappa,
            max_deviation: dev,
        }
    } else {
        Verdict::Counterexample {
            node,
            value: ratio[node],
        }
    }
}

/// For `λ* < 0`: `𝒢φ ≥ 0` forces `φ < 0` or `φ = 0`.
pub fn negativity_check(opr: &DiscreteOperator, phi: &[f64], lambda: f64, tol: f64) -> Verdict {
    if !(lambda < -tol) {
        return Verdict::NotApplicable(alloc::format!("λ* = {lambda} is not negative"));
    }
    let g = opr.apply_nonlinear(phi);
    let scale = opr.row_scale(phi);
    if let Some(i) = (0..phi.len()).find(|&i| g[i] < -tol * scale[i].max(1.0)) {
        return Verdict::NotApplicable(alloc::format!("𝒢φ < 0 at node {i}"));
    }
    let (node, max) = phi
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if max > tol {
        return Verdict::Counterexample { node, value: max };
    }
    if max > -tol {
        let norm = phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        return if norm <= tol {
            Verdict::Zero { norm }
        } else {
            let node = phi
                .iter()
                .enumerate()
                .fold(0, |b, (i, v)| if v.abs() > phi[b].abs() { i } else { b });
            Verdict::Counterexample {
                node,
                value: phi[node],
            }
        };
    }
    Verdict::Negative { max }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapEvidence {
    pub lambda: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub starts: usize,
    /// Runs that ended at a nonzero root.
    pub nonzero_roots: usize,
    /// Largest `‖φ_final‖∞ / ‖φ_0‖∞`.
    pub max_final_norm: f64,
}

/// Searches for nonzero solutions of `𝒢φ = λφ` with `λ` strictly between the
/// min-sense and max-sense eigenvalues of the same matrices, by semismooth
/// Newton from random starts. This is evidence, not proof.
pub fn gap_check(
    opr: &DiscreteOperator,
    lambda: f64,
    starts: usize,
    seed: u64,
    opts: &PolicyOptions,
) -> Result<GapEvidence> {
    let lo = policy_iteration(&opr.with_sense(Sense::Min), opts)?.lambda();
    let hi = policy_iteration(&opr.with_sense(Sense::Max), opts)?.lambda();
    if !(lo < lambda && lambda < hi) {
        return Err(Error::InvalidArgument(alloc::format!(
            "λ = {lambda} is not strictly inside ({lo}, {hi})"
        )));
    }
    let min_op = opr.with_sense(Sense::Min);
    let n = opr.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nonzero_roots = 0;
    let mut max_final_norm = 0.0f64;
    for _ in 0..starts {
        let mut phi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm0 = phi.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for _ in 0..50 {
            let policy = min_op.select_policy(&phi);
            let jac = min_op.frozen(&policy).shifted_negation(lambda);
            let Ok(lu) = BandedLu::factor(&jac) else {
                break;
            };
            // F(φ) = (M_v − λ)φ near φ, and the step solves (λ − M_v)δ = F
            let r: Vec<f64> = min_op
                .apply_nonlinear(&phi)
                .iter()
                .zip(&phi)
                .map(|(g, p)| g - lambda * p)
                .collect();
            let delta = lu.solve(&r);
            for (p, d) in phi.iter_mut().zip(&delta) {
                *p += d;
            }
            let res = min_op
                .apply_nonlinear(&phi)
                .iter()
                .zip(&phi)
                .map(|(g, p)| (g - lambda * p).abs())
                .fold(0.0, f64::max);
            if res <= 1e-14 * opr.shift() * norm0 {
                break;
            }
        }
        let fin = phi.iter().fold(0.0f64, |a, v| a.max(v.abs())) / norm0;
        max_final_norm = max_final_norm.max(fin);
        if fin > 1e-8 {
            nonzero_roots += 1;
        }
    }
    Ok(GapEvidence {
        lambda,
        lambda_min: lo,
        lambda_max: hi,
        starts,
        nonzero_roots,
        max_final_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::assemble;
    use crate::expr::parse_expr;
    use crate::grid::{build_grid, Grid, Shape};
    use crate::model::ControlSet;
    use crate::sparse::CsrMatrix;
    use core::f64::consts::PI;

    fn ex21(r: f64, h: f64) -> (OperatorSpec, DiscreteOperator) {
        let spec = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("-1").unwrap(),
            parse_expr("0").unwrap(),
        )
        .unwrap();
        let opr = assemble(&spec, &build_grid(1, r, h, Shape::Box).unwrap()).unwrap();
        (spec, opr)
    }

    fn bang_bang(sense: Sense) -> DiscreteOperator {
        let spec = OperatorSpec::new(
            1,
            vec![parse_expr("1").unwrap()],
            vec![parse_expr("u0").unwrap()],
            parse_expr("cos(2*x0)").unwrap(),
            sense,
            ControlSet::scalar(&[-1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assemble(&spec, &build_grid(1, 1.0, 1.0 / 3.0, Shape::Box).unwrap()).unwrap()
    }

    #[test]
    fn eigenfunction_certificates_are_tight() {
        let (_, opr) = ex21(1.0, 0.01);
        let res = policy_iteration(&opr, &Default::default()).unwrap();
        let lo = cw_lower(&opr, res.psi()).unwrap();
        let up = cw_upper(&opr, res.psi()).unwrap();
        assert!(lo.bound <= res.lambda() && res.lambda() <= up.bound);
        assert!(up.bound - lo.bound <= 2.0 * res.fixed_point_residual + 1e-12);
    }

    #[test]
    fn cosine_test_function_is_crude() {
        let (spec, opr) = ex21(1.0, 0.01);
        let psi = parse_expr("cos(pi_half*x0)".replace("pi_half", &alloc::format!("{:?}", PI / 2.0)).as_str())
            .unwrap();
        let c = cw_expr(&spec, &opr, &psi, Kind::Lower, Level::Discrete).unwrap();
        assert!(c.bound < -2.7174);
        assert!(c.bound < -20.0);
        assert_eq!(c.argmin_node, 0);
    }

    #[test]
    fn exact_upper_certificate_for_transient_drift() {
        for &(r, h) in &[(1.0, 0.1), (5.0, 0.01), (20.0, 0.05)] {
            let (spec, opr) = ex21(r, h);
            let psi = parse_expr("exp(x0/2)").unwrap();
            let c = cw_expr(&spec, &opr, &psi, Kind::Upper, Level::Continuum).unwrap();
            assert!((c.bound + 0.25).abs() <= 1e-12, "{}", c.bound);
            assert_eq!(c.tag, ValidityTag::InteriorPositive);
            // the discrete quotient carries the O(h) upwind error
            let d = cw_expr(&spec, &opr, &psi, Kind::Upper, Level::Discrete).unwrap();
            assert!((d.bound + 0.25 - h / 8.0).abs() < h * h);
        }
    }

    #[test]
    fn constant_test_function_gives_potential() {
        let spec = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("-x0").unwrap(),
            parse_expr("0.3").unwrap(),
        )
        .unwrap();
        let opr = assemble(&spec, &build_grid(1, 3.0, 0.1, Shape::Box).unwrap()).unwrap();
        let one = parse_expr("1").unwrap();
        for level in [Level::Discrete, Level::Continuum] {
            let c = cw_expr(&spec, &opr, &one, Kind::Upper, level).unwrap();
            assert!((c.bound - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn nonpositive_test_function_is_rejected() {
        let (spec, opr) = ex21(1.0, 0.1);
        assert!(matches!(
            cw_lower(&opr, &vec![1.0; opr.n() - 1].into_iter().chain([0.0]).collect::<Vec<_>>()),
            Err(Error::NonPositiveTestFunction { .. })
        ));
        let psi = parse_expr("x0").unwrap();
        assert!(cw_expr(&spec, &opr, &psi, Kind::Upper, Level::Continuum).is_err());
    }

    #[test]
    fn minimax_on_symmetric_two_by_two() {
        let grid = Grid::new(1, 1.0, 0.5, Shape::Box).unwrap().restrict(|x| x[0] >= 0.0).unwrap();
        let m = CsrMatrix::from_dense(2, &[2.0, 1.0, 1.0, 2.0]);
        let opr = DiscreteOperator::from_matrices(grid, Sense::Max, vec![m]).unwrap();
        let r = minimax_measure(&opr, &Default::default()).unwrap();
        assert!((r.value - 3.0).abs() < 1e-4);
        assert!(r.lower <= 3.0 + 1e-12 && 3.0 <= r.upper + 1e-12);
    }

    #[test]
    fn minimax_matches_policy_iteration() {
        let opr = bang_bang(Sense::Max);
        assert_eq!(opr.n(), 5);
        let pi = policy_iteration(&opr, &Default::default()).unwrap();
        for step in [0.3, 1.0, 3.0] {
            let r = minimax_measure(&opr, &MinimaxOptions { step, ..Default::default() }).unwrap();
            assert!((r.value - pi.lambda()).abs() < 1e-3);
        }
        let r = minimax_measure(&opr, &Default::default()).unwrap();
        assert!((r.value - pi.lambda()).abs() < 1e-3, "{} vs {}", r.value, pi.lambda());
        assert!(minimax_measure(&opr.with_sense(Sense::Min), &Default::default()).is_err());
    }

    #[test]
    fn ground_state_verdicts() {
        let opr = bang_bang(Sense::Min);
        let res = policy_iteration(&opr, &Default::default()).unwrap();
        let ground = res.psi().to_vec();
        let scaled: Vec<f64> = ground.iter().map(|v| 2.5 * v).collect();
        match ground_state_check(&opr, &scaled, res.lambda(), &ground, 1e-8) {
            Verdict::Proportional { kappa, .. } => assert!((kappa - 2.5).abs() < 1e-12),
            v => panic!("{v:?}"),
        }
        let mut bumped = ground.clone();
        bumped[2] *= 1.5;
        assert!(matches!(
            ground_state_check(&opr, &bumped, res.lambda(), &ground, 1e-8),
            Verdict::NotApplicable(_)
        ));
    }

    #[test]
    fn negativity_verdicts() {
        let spec = OperatorSpec::uncontrolled_1d(
            parse_expr("1").unwrap(),
            parse_expr("0").unwrap(),
            parse_expr("-1").unwrap(),
        )
        .unwrap();
        let opr = assemble(&spec, &build_grid(1, 1.0, 0.1, Shape::Box).unwrap()).unwrap();
        let res = policy_iteration(&opr, &Default::default()).unwrap();
        assert!(res.lambda() < 0.0);
        let zero = vec![0.0; opr.n()];
        assert!(matches!(negativity_check(&opr, &zero, res.lambda(), 1e-9), Verdict::Zero { .. }));
        let neg: Vec<f64> = res.psi().iter().map(|v| -v).collect();
        assert!(matches!(negativity_check(&opr, &neg, res.lambda(), 1e-9), Verdict::Negative { .. }));
        assert!(matches!(
            negativity_check(&opr, res.psi(), res.lambda(), 1e-9),
            Verdict::NotApplicable(_)
        ));
    }

    #[test]
    fn no_nonzero_solution_in_the_gap() {
        let opr = bang_bang(Sense::Min);
        let lo = policy_iteration(&opr, &Default::default()).unwrap().lambda();
        let hi = policy_iteration(&opr.with_sense(Sense::Max), &Default::default()).unwrap().lambda();
        assert!(lo < hi);
        let ev = gap_check(&opr, 0.5 * (lo + hi), 20, 7, &Default::default()).unwrap();
        assert_eq!(ev.nonzero_roots, 0);
        assert!(gap_check(&opr, hi + 1.0, 20, 7, &Default::default()).is_err());
    }
}
