//! Operator descriptions and their validation.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::expr::Expr;

/// Whether the control enters through a pointwise minimum (the HJB operator
/// of a minimization problem) or a pointwise maximum (the extremal operator).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

impl Sense {
    /// `true` if `candidate` is strictly better than `incumbent`.
    #[inline]
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Sense::Min => candidate < incumbent,
            Sense::Max => candidate > incumbent,
        }
    }

    #[inline]
    pub fn pick(self, a: f64, b: f64) -> f64 {
        if self.improves(b, a) {
            b
        } else {
            a
        }
    }

    pub fn flip(self) -> Sense {
        match self {
            Sense::Min => Sense::Max,
            Sense::Max => Sense::Min,
        }
    }
}

/// Finite sample of the compact control set.
///
/// Dimension zero with a single empty point is the uncontrolled operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSpec("control set must be nonempty".into()));
        }
        for (k, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::InvalidSpec(format!(
                    "control point {k} has {} coordinates, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec(format!("control point {k} is not finite")));
            }
            if points[..k].iter().any(|q| q == p) {
                return Err(Error::InvalidSpec(format!("control point {k} is a duplicate")));
            }
        }
        Ok(Self { dim, points })
    }

    pub fn uncontrolled() -> Self {
        Self {
            dim: 0,
            points: vec![Vec::new()],
        }
    }

    /// Scalar controls `u0 ∈ values`.
    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(1, values.iter().map(|&v| vec![v]).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// `a^{ij}(x) ∂_ij + opt_u [ b^i(x,u) ∂_i + c(x,u) ]` with `opt` the [`Sense`].
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    dim: usize,
    diffusion: Vec<Expr>,
    drift: Vec<Expr>,
    potential: Expr,
    sense: Sense,
    controls: ControlSet,
}

impl OperatorSpec {
    /// `diffusion` is row-major `dim × dim`.
    pub fn new(
        dim: usize,
        diffusion: Vec<Expr>,
        drift: Vec<Expr>,
        potential: Expr,
        sense: Sense,
        controls: ControlSet,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidSpec(format!("dimension {dim} not in 1..=3")));
        }
        if diffusion.len() != dim * dim {
            return Err(Error::InvalidSpec(format!(
                "diffusion has {} entries, expected {}",
                diffusion.len(),
                dim * dim
            )));
        }
        if drift.len() != dim {
            return Err(Error::InvalidSpec(format!(
                "drift has {} entries, expected {dim}",
                drift.len()
            )));
        }
        for (k, a) in diffusion.iter().enumerate() {
            if a.depends_on_u() {
                return Err(Error::InvalidSpec(format!(
                    "diffusion entry ({}, {}) depends on the control",
                    k / dim,
                    k % dim
                )));
            }
        }
        let all = diffusion.iter().chain(drift.iter()).chain(core::iter::once(&potential));
        for e in all {
            if e.x_arity() > dim {
                return Err(Error::InvalidSpec(format!(
                    "`{e}` uses x{} but the dimension is {dim}",
                    e.x_arity() - 1
                )));
            }
            if e.u_arity() > controls.dim() {
                return Err(Error::InvalidSpec(format!(
                    "`{e}` uses u{} but controls have dimension {}",
                    e.u_arity() - 1,
                    controls.dim()
                )));
            }
        }
        Ok(Self {
            dim,
            diffusion,
            drift,
            potential,
            sense,
            controls,
        })
    }

    /// `a ∂² + b ∂ + c` in one dimension without controls.
    pub fn uncontrolled_1d(a: Expr, b: Expr, c: Expr) -> Result<Self> {
        Self::new(1, vec![a], vec![b], c, Sense::Min, ControlSet::uncontrolled())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diffusion(&self, i: usize, j: usize) -> &Expr {
        &self.diffusion[i * self.dim + j]
    }

    pub fn drift(&self, i: usize) -> &Expr {
        &self.drift[i]
    }

    pub fn potential(&self) -> &Expr {
        &self.potential
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn with_potential(&self, potential: Expr) -> Self {
        Self {
            potential,
            ..self.clone()
        }
    }

    pub fn with_sense(&self, sense: Sense) -> Self {
        Self {
            sense,
            ..self.clone()
        }
    }

    /// Adds a constant to the potential.
    pub fn shifted(&self, c0: f64) -> Self {
        self.with_potential(self.potential.clone() + Expr::Num(c0))
    }

    /// `a(x)` as a dense row-major matrix.
    pub fn diffusion_at(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.diffusion) {
            *o = e.eval(x, &[]);
        }
    }

    pub fn drift_at(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(x, u);
        }
    }

    pub fn potential_at(&self, x: &[f64], u: &[f64]) -> f64 {
        self.potential.eval(x, u)
    }

    pub fn diffusion_is_constant(&self) -> bool {
        self.diffusion.iter().all(Expr::is_constant)
    }
}

/// Which Lyapunov drift condition is being checked.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftCondition {
    /// `sup_u L_u V ≤ κ₁ 1_K − ℓ V` with `ℓ` inf-compact.
    InfCompact { ell: Expr },
    /// `sup_u L_u V ≤ κ₁ 1_K − γ V`.
    Geometric { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSpec {
    pub v: Expr,
    pub condition: DriftCondition,
    pub kappa1: f64,
    /// Radius of the ball playing the compact set `K`.
    pub r_k: f64,
}

/// Axis-aligned box `[-R, R]^d` used for sampling coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub dim: usize,
    pub half_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Sampled potential values below this are rejected.
    pub potential_floor: f64,
    /// Relative tolerance for the symmetry of `a(x)`.
    pub symmetry_tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            potential_floor: -1e8,
            symmetry_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub n_points: usize,
    pub min_diffusion_eigenvalue: f64,
    pub min_potential: f64,
    pub max_drift_norm: f64,
    pub potential_floor: f64,
    /// Hypotheses that are recorded, not verified.
    pub assertions: Vec<String>,
}

/// Deterministic sample points: the origin first, then a Halton sequence
/// mapped into the box. The first `n` points for any `n` are a prefix of the
/// first `n + 1`.
pub fn sample_points(domain: &BoxDomain, n: usize) -> Vec<Vec<f64>> {
    const PRIMES: [u64; 3] = [2, 3, 5];
    let mut pts = Vec::with_capacity(n);
    if n == 0 {
        return pts;
    }
    pts.push(vec![0.0; domain.dim]);
    for k in 1..n as u64 {
        let p = (0..domain.dim)
            .map(|ax| (2.0 * radical_inverse(k, PRIMES[ax]) - 1.0) * domain.half_width)
            .collect();
        pts.push(p);
    }
    pts
}

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut r = 0.0;
    let mut f = inv;
    while k > 0 {
        r += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    r
}

/// Eigenvalues of a symmetric matrix of order ≤ 3 (cyclic Jacobi).
pub(crate) fn symmetric_eigenvalues(dim: usize, a: &[f64]) -> Vec<f64> {
    let mut m = [[0.0f64; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            m[i][j] = 0.5 * (a[i * dim + j] + a[j * dim + i]);
        }
    }
    for _ in 0..50 {
        let mut off = 0.0;
        for p in 0..dim {
            for q in p + 1..dim {
                off += m[p][q] * m[p][q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..dim {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..dim).map(|i| m[i][i]).collect()
}

/// Samples the coefficients on `domain` and checks nondegeneracy of `a`,
/// finiteness of everything and the potential floor.
pub fn validate_spec(
    spec: &OperatorSpec,
    domain: &BoxDomain,
    n_samples: usize,
    opts: &ValidationOptions,
) -> Result<ValidationReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    if domain.dim != spec.dim() {
        return Err(Error::InvalidArgument("domain dimension mismatch".into()));
    }
    let d = spec.dim();
    let mut report = ValidationReport {
        n_points: 0,
        min_diffusion_eigenvalue: f64::INFINITY,
        min_potential: f64::INFINITY,
        max_drift_norm: 0.0,
        potential_floor: opts.potential_floor,
        assertions: vec![
            "local Lipschitz continuity of a, b, c (asserted)".into(),
            "affine growth of b (asserted)".into(),
            format!(
                "potential bounded below: checked on samples only, floor {:e}",
                opts.potential_floor
            ),
        ],
    };
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for x in sample_points(domain, n_samples) {
        spec.diffusion_at(&x, &mut a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoefficient { point: x });
        }
        for i in 0..d {
            for j in i + 1..d {
                let (p, q) = (a[i * d + j], a[j * d + i]);
                if (p - q).abs() > opts.symmetry_tol * (1.0 + p.abs().max(q.abs())) {
                    return Err(Error::InvalidSpec(format!(
                        "diffusion not symmetric at {x:?}: a[{i}][{j}]={p}, a[{j}][{i}]={q}"
                    )));
                }
            }
        }
        let ev = symmetric_eigenvalues(d, &a)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if ev <= 0.0 {
            return Err(Error::DegenerateDiffusion {
                point: x,
                eigenvalue: ev,
            });
        }
        report.min_diffusion_eigenvalue = report.min_diffusion_eigenvalue.min(ev);
        for u in spec.controls().points() {
            spec.drift_at(&x, u, &mut b);
            let c = spec.potential_at(&x, u);
            if !c.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteCoefficient { point: x });
            }
            if c < opts.potential_floor {
                return Err(Error::UnboundedBelowPotential {
                    point: x,
                    value: c,
                    floor: opts.potential_floor,
                });
            }
            report.min_potential = report.min_potential.min(c);
            let norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            report.max_drift_norm = report.max_drift_norm.max(norm);
        }
        report.n_points += 1;
    }
    Ok(report)
}
