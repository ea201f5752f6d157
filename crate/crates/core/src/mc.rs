//! Euler-Maruyama simulation of `dX = b(X, U) dt + σ(X) dW`, `σσᵀ = 2a`,
//! and Monte Carlo estimators built on it.
//!
//! Every path owns a ChaCha8 stream selected by its index, so estimates do
//! not depend on how paths are distributed over workers. Estimators come as
//! a per-path function plus a reducer over the ordered per-path results;
//! the sequential drivers here are `map` + reduce.
//!
//! Exit is detected at the first step past the boundary, which biases exit
//! times by `O(√Δt)`. [`Simulator::coupled_path`] runs the same Brownian
//! path at `Δt` and `Δt/4`, which both measures that bias and removes its
//! leading term.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::discretize::Policy;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::{Grid, Shape};
use crate::model::OperatorSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub dt: f64,
    pub t_max: f64,
    pub seed: u64,
    pub n_paths: usize,
}

impl PathConfig {
    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || !(self.t_max > 0.0) || self.n_paths == 0 {
            return Err(Error::InvalidArgument(alloc::format!(
                "need dt > 0, t_max > 0 and n_paths ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Where paths stop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitRegion {
    /// Stop on entering the closed ball `|x| ≤ r`.
    pub inner: Option<f64>,
    /// Stop on leaving the open box or ball of this half-width.
    pub outer: Option<(Shape, f64)>,
}

impl ExitRegion {
    pub fn none() -> Self {
        Self {
            inner: None,
            outer: None,
        }
    }

    #[inline]
    fn classify(&self, x: &[f64]) -> Option<Exit> {
        if let Some(r) = self.inner {
            if norm(x) <= r {
                return Some(Exit::Inner);
            }
        }
        if let Some((shape, big_r)) = self.outer {
            let outside = match shape {
                Shape::Box => x.iter().any(|v| v.abs() >= big_r),
                Shape::Ball => norm(x) >= big_r,
            };
            if outside {
                return Some(Exit::Outer);
            }
        }
        None
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Inner,
    Outer,
    /// Reached `t_max` (or the horizon) without exiting.
    Horizon,
}

/// Markov control used along paths.
#[derive(Debug, Clone, PartialEq)]
pub enum Feedback {
    /// Control point `k` everywhere.
    Constant(usize),
    /// Control of the nearest interior node of a grid policy.
    Grid { grid: Grid, policy: Policy },
    /// Control coordinates as expressions of `x`.
    Expr(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub steps: u64,
    /// Exit (or stopping) time.
    pub tau: f64,
    pub exit: Exit,
    pub exit_point: [f64; 3],
    /// `∫₀^τ c(X_s, U_s) ds`, left-endpoint rule.
    pub integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Paths that reached `t_max` and are excluded from the mean.
    pub truncated: usize,
}

/// Mean and standard error of the finite entries; `None` marks a truncated
/// path.
pub fn estimate_from(values: &[Option<f64>]) -> MCEstimate {
    let kept: Vec<f64> = values.iter().flatten().copied().collect();
    let n = kept.len();
    let mean = if n == 0 { f64::NAN } else { kept.iter().sum::<f64>() / n as f64 };
    let var = if n > 1 {
        kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    MCEstimate {
        mean,
        stderr: (var / n.max(1) as f64).sqrt(),
        n_paths: values.len(),
        truncated: values.len() - n,
    }
}

/// Compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Lower Cholesky factor of the `d × d` row-major `m`.
fn cholesky(d: usize, m: &[f64], out: &mut [f64; 9]) -> Option<()> {
    *out = [0.0; 9];
    for i in 0..d {
        for j in 0..=i {
            let mut s = m[i * d + j];
            for k in 0..j {
                s -= out[i * 3 + k] * out[j * 3 + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                out[i * 3 + i] = s.sqrt();
            } else {
                out[i * 3 + j] = s / out[j * 3 + j];
            }
        }
    }
    Some(())
}

pub struct Simulator<'a> {
    spec: &'a OperatorSpec,
    feedback: &'a Feedback,
    region: ExitRegion,
    cfg: PathConfig,
    dim: usize,
    sigma: Option<[f64; 9]>,
    /// Drift per control when it does not depend on `x`.
    drift: Option<Vec<[f64; 3]>>,
    potential: Option<Vec<f64>>,
    /// Control index when it does not depend on `x`.
    fixed: Option<usize>,
    /// `(b, σ, c)` when nothing depends on `x`.
    frozen: Option<([f64; 3], [f64; 9], f64)>,
}

struct State {
    x: [f64; 3],
    steps: u64,
    integral: Kahan,
    exit: Option<Exit>,
}

impl<'a> Simulator<'a> {
    pub fn new(
        spec: &'a OperatorSpec,
        feedback: &'a Feedback,
        region: ExitRegion,
        cfg: PathConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let dim = spec.dim();
        let n_controls = spec.controls().len();
        match feedback {
            Feedback::Constant(k) if *k >= n_controls => {
                return Err(Error::InvalidArgument("control index out of range".into()))
            }
            Feedback::Grid { grid, policy } if policy.len() != grid.len() || grid.dim() != dim => {
                return Err(Error::InvalidArgument("policy does not match its grid".into()))
            }
            Feedback::Expr(e) if e.len() != spec.controls().dim() => {
                return Err(Error::InvalidArgument("control expression arity mismatch".into()))
            }
            _ => {}
        }
        let sigma = if spec.diffusion_is_constant() {
            let mut a = [0.0; 9];
            spec.diffusion_at(&[0.0; 3][..dim], &mut a[..dim * dim]);
            Some(Self::factor(dim, &a, &[0.0; 3][..dim])?)
        } else {
            None
        };
        let fixed_control = matches!(feedback, Feedback::Constant(_));
        let drift_const = (0..dim).all(|i| !spec.drift(i).depends_on_x());
        let drift: Option<Vec<[f64; 3]>> = drift_const.then(|| {
            spec.controls()
                .points()
                .iter()
                .map(|u| {
                    let mut b = [0.0; 3];
                    spec.drift_at(&[0.0; 3][..dim], u, &mut b[..dim]);
                    b
                })
                .collect()
        });
        let potential: Option<Vec<f64>> = (!spec.potential().depends_on_x() && (fixed_control || !spec.potential().depends_on_u()))
            .then(|| {
                spec.controls()
                    .points()
                    .iter()
                    .map(|u| spec.potential_at(&[0.0; 3][..dim], u))
                    .collect()
            });
        let fixed = match feedback {
            Feedback::Constant(k) => Some(*k),
            _ if n_controls == 1 && spec.controls().dim() == 0 => Some(0),
            Feedback::Grid { .. } if n_controls == 1 => Some(0),
            _ => None,
        };
        let frozen = match (&sigma, &drift, &potential, fixed) {
            (Some(s), Some(b), Some(c), Some(k)) => Some((b[k], *s, c[k])),
            _ => None,
        };
        Ok(Self {
            spec,
            feedback,
            region,
            cfg,
            dim,
            sigma,
            drift,
            potential,
            fixed,
            frozen,
        })
    }

    fn factor(dim: usize, a: &[f64; 9], x: &[f64]) -> Result<[f64; 9]> {
        let mut two_a = [0.0; 9];
        for (t, v) in two_a.iter_mut().zip(a.iter()).take(dim * dim) {
            *t = 2.0 * v;
        }
        let mut l = [0.0; 9];
        cholesky(dim, &two_a[..dim * dim], &mut l).ok_or_else(|| Error::DegenerateDiffusion {
            point: x.to_vec(),
            eigenvalue: 0.0,
        })?;
        Ok(l)
    }

    pub fn config(&self) -> &PathConfig {
        &self.cfg
    }

    pub fn region(&self) -> &ExitRegion {
        &self.region
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index);
        rng
    }

    fn control_index(&self, x: &[f64]) -> Option<usize> {
        if self.fixed.is_some() {
            return self.fixed;
        }
        match self.feedback {
            Feedback::Constant(k) => Some(*k),
            Feedback::Grid { grid, policy } => Some(policy.0[grid.nearest_interior(x)]),
            Feedback::Expr(_) => None,
        }
    }

    /// Drift, potential and noise factor at `x`.
    fn coefficients(&self, x: &[f64], b: &mut [f64; 3], sigma: &mut [f64; 9]) -> Result<f64> {
        let d = self.dim;
        let k = self.control_index(x);
        let u_buf;
        let u: &[f64] = match (k, self.feedback) {
            (Some(k), _) => self.spec.controls().point(k),
            (None, Feedback::Expr(e)) => {
                u_buf = e.iter().map(|ex| ex.eval(x, &[])).collect::<Vec<_>>();
                &u_buf
            }
            _ => unreachable!(),
        };
        match (&self.drift, k) {
            (Some(table), Some(k)) => *b = table[k],
            _ => self.spec.drift_at(x, u, &mut b[..d]),
        }
        match &self.sigma {
            Some(s) => *sigma = *s,
            None => {
                let mut a = [0.0; 9];
                self.spec.diffusion_at(x, &mut a[..d * d]);
                *sigma = Self::factor(d, &a, x)?;
            }
        }
        Ok(match (&self.potential, k) {
            (Some(table), Some(k)) => table[k],
            _ => self.spec.potential_at(x, u),
        })
    }

    /// One Euler step with Brownian increment `dw`.
    #[inline(always)]
    fn step(&self, s: &mut State, dt: f64, dw: &[f64; 3]) -> Result<()> {
        match &self.frozen {
            Some((b, sigma, c)) => {
                Self::advance(self.dim, s, dt, dw, b, sigma, *c);
                Ok(())
            }
            None => self.step_general(s, dt, dw),
        }
    }

    #[inline(never)]
    fn step_general(&self, s: &mut State, dt: f64, dw: &[f64; 3]) -> Result<()> {
        let mut b = [0.0; 3];
        let mut sigma = [0.0; 9];
        let c = self.coefficients(&s.x[..self.dim], &mut b, &mut sigma)?;
        Self::advance(self.dim, s, dt, dw, &b, &sigma, c);
        Ok(())
    }

    #[inline(always)]
    fn advance(d: usize, s: &mut State, dt: f64, dw: &[f64; 3], b: &[f64; 3], sigma: &[f64; 9], c: f64) {
        s.integral.add(c * dt);
        if d == 1 {
            s.x[0] += b[0] * dt + sigma[0] * dw[0];
        } else {
            let mut next = s.x;
            for i in 0..d {
                let mut noise = 0.0;
                for j in 0..=i {
                    noise += sigma[i * 3 + j] * dw[j];
                }
                next[i] += b[i] * dt + noise;
            }
            s.x = next;
        }
        s.steps += 1;
    }

    fn start(&self, x0: &[f64]) -> Result<State> {
        if x0.len() != self.dim || x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("start point has the wrong dimension".into()));
        }
        if self.region.classify(x0).is_some() {
            return Err(Error::InvalidArgument(alloc::format!(
                "start point {x0:?} is already outside the simulation region"
            )));
        }
        let mut x = [0.0; 3];
        x[..self.dim].copy_from_slice(x0);
        Ok(State {
            x,
            steps: 0,
            integral: Kahan::default(),
            exit: None,
        })
    }

    fn summary(s: &State, dt: f64) -> PathSummary {
        PathSummary {
            steps: s.steps,
            tau: s.steps as f64 * dt,
            exit: s.exit.unwrap_or(Exit::Horizon),
            exit_point: s.x,
            integral: s.integral.sum,
        }
    }

    fn max_steps(&self, dt: f64) -> u64 {
        (self.cfg.t_max / dt).ceil() as u64
    }

    /// Path `index` from `x0` until exit or `t_max`.
    pub fn path(&self, x0: &[f64], index: u64) -> Result<PathSummary> {
        let mut rng = self.rng(index);
        let mut s = self.start(x0)?;
        let dt = self.cfg.dt;
        let sq = dt.sqrt();
        let n = self.max_steps(dt);
        let mut dw = [0.0; 3];
        while s.steps < n {
            for w in dw.iter_mut().take(self.dim) {
                *w = sq * rng.sample::<f64, _>(StandardNormal);
            }
            self.step(&mut s, dt, &dw)?;
            if let Some(e) = self.region.classify(&s.x[..self.dim]) {
                s.exit = Some(e);
                break;
            }
        }
        Ok(Self::summary(&s, dt))
    }

    /// Path `index` at step `Δt` and at `Δt/refine`, driven by the same
    /// Brownian motion: `(coarse, fine)`.
    pub fn coupled_path(&self, x0: &[f64], index: u64, refine: u32) -> Result<(PathSummary, PathSummary)> {
        let refine = refine.max(1);
        let mut rng = self.rng(index);
        let mut coarse = self.start(x0)?;
        let mut fine = self.start(x0)?;
        let dt = self.cfg.dt;
        let dtf = dt / refine as f64;
        let sqf = dtf.sqrt();
        let n = self.max_steps(dt);
        let d = self.dim;
        let nf = n * refine as u64;
        let mut dw = [0.0; 3];
        loop {
            let coarse_live = coarse.exit.is_none() && coarse.steps < n;
            let fine_live = fine.exit.is_none() && fine.steps < nf;
            if !coarse_live && !fine_live {
                break;
            }
            let mut acc = [0.0; 3];
            for _ in 0..refine {
                for j in 0..d {
                    dw[j] = sqf * rng.sample::<f64, _>(StandardNormal);
                    acc[j] += dw[j];
                }
                if fine.exit.is_none() && fine.steps < nf {
                    self.step(&mut fine, dtf, &dw)?;
                    fine.exit = self.region.classify(&fine.x[..d]);
                }
            }
            if coarse_live {
                self.step(&mut coarse, dt, &acc)?;
                coarse.exit = self.region.classify(&coarse.x[..d]);
            }
        }
        Ok((Self::summary(&coarse, dt), Self::summary(&fine, dtf)))
    }

    /// `∫₀^T c ds` along path `index`, ignoring the exit region.
    pub fn integral_to_horizon(&self, x0: &[f64], horizon: f64, index: u64) -> Result<f64> {
        let mut rng = self.rng(index);
        let mut s = self.start(x0)?;
        let full = (horizon / self.cfg.dt).floor() as u64;
        let last = horizon - full as f64 * self.cfg.dt;
        let mut dw = [0.0; 3];
        for i in 0..=full {
            let dt = if i < full { self.cfg.dt } else { last };
            if dt <= 0.0 {
                break;
            }
            let sq = dt.sqrt();
            for w in dw.iter_mut().take(self.dim) {
                *w = sq * rng.sample::<f64, _>(StandardNormal);
            }
            self.step(&mut s, dt, &dw)?;
        }
        Ok(s.integral.sum)
    }
}

/// Exit time of one path; `None` if truncated.
pub fn exit_time_sample(sim: &Simulator<'_>, x0: &[f64], index: u64) -> Result<Option<f64>> {
    let p = sim.path(x0, index)?;
    Ok((p.exit != Exit::Horizon).then_some(p.tau))
}

/// `E_{x0}[τ]` with plain Euler exit detection.
pub fn exit_time_estimate(sim: &Simulator<'_>, x0: &[f64]) -> Result<MCEstimate> {
    let values = (0..sim.cfg.n_paths as u64)
        .map(|i| exit_time_sample(sim, x0, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(estimate_from(&values))
}

/// Per-path values at `Δt`, at `Δt/4`, and their extrapolation
/// `2 v_fine − v_coarse`, which cancels the `√Δt` term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledSample {
    pub coarse: Option<f64>,
    pub fine: Option<f64>,
}

impl CoupledSample {
    fn extrapolated(&self) -> Option<f64> {
        Some(2.0 * self.fine? - self.coarse?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RichardsonEstimate {
    pub coarse: MCEstimate,
    pub fine: MCEstimate,
    pub extrapolated: MCEstimate,
    pub dt: f64,
}

pub fn richardson_from(samples: &[CoupledSample], dt: f64) -> RichardsonEstimate {
    let pick = |f: fn(&CoupledSample) -> Option<f64>| samples.iter().map(f).collect::<Vec<_>>();
    RichardsonEstimate {
        coarse: estimate_from(&pick(|s| s.coarse)),
        fine: estimate_from(&pick(|s| s.fine)),
        extrapolated: estimate_from(&pick(|s| s.extrapolated())),
        dt,
    }
}

pub fn exit_time_coupled_sample(sim: &Simulator<'_>, x0: &[f64], index: u64) -> Result<CoupledSample> {
    let (c, f) = sim.coupled_path(x0, index, 4)?;
    Ok(CoupledSample {
        coarse: (c.exit != Exit::Horizon).then_some(c.tau),
        fine: (f.exit != Exit::Horizon).then_some(f.tau),
    })
}

/// `E_{x0}[τ]` at `Δt`, `Δt/4` and extrapolated.
pub fn exit_time_richardson(sim: &Simulator<'_>, x0: &[f64]) -> Result<RichardsonEstimate> {
    let samples = (0..sim.cfg.n_paths as u64)
        .map(|i| exit_time_coupled_sample(sim, x0, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(richardson_from(&samples, sim.cfg.dt))
}

/// Grid eigenfunction `Φ` and eigenvalue for the Feynman-Kac check.
#[derive(Debug, Clone, Copy)]
pub struct GroundState<'g> {
    pub grid: &'g Grid,
    pub phi: &'g [f64],
    pub lambda: f64,
}

fn fk_value(p: &PathSummary, gs: &GroundState<'_>, dim: usize) -> Option<f64> {
    match p.exit {
        Exit::Horizon => None,
        Exit::Outer => Some(0.0),
        Exit::Inner => {
            let w = (p.integral - gs.lambda * p.tau).exp();
            Some(w * gs.grid.interpolate(gs.phi, &p.exit_point[..dim]))
        }
    }
}

/// `e^{∫(c − λ)ds} Φ(X_τ)` for path `index` at `Δt` and `Δt/4`; paths
/// leaving the grid domain contribute zero.
pub fn feynman_kac_sample(
    sim: &Simulator<'_>,
    gs: &GroundState<'_>,
    x: &[f64],
    index: u64,
) -> Result<CoupledSample> {
    let (c, f) = sim.coupled_path(x, index, 4)?;
    Ok(CoupledSample {
        coarse: fk_value(&c, gs, sim.dim),
        fine: fk_value(&f, gs, sim.dim),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FkVerdict {
    pub point: Vec<f64>,
    /// Grid value `Φ(x)`.
    pub target: f64,
    /// Estimate at `Δt/4`.
    pub estimate: MCEstimate,
    pub coarse: MCEstimate,
    /// `2 |E_Δt − E_Δt/4|`.
    pub allowance: f64,
    pub passed: bool,
}

pub fn feynman_kac_from(
    samples: &[CoupledSample],
    gs: &GroundState<'_>,
    x: &[f64],
    dt: f64,
) -> Result<FkVerdict> {
    let r = richardson_from(samples, dt);
    let n = samples.len();
    let truncated = r.coarse.truncated.max(r.fine.truncated);
    if truncated * 100 > n {
        return Err(Error::ExcessTruncation { truncated, n_paths: n });
    }
    let target = gs.grid.interpolate(gs.phi, x);
    let allowance = 2.0 * (r.coarse.mean - r.fine.mean).abs();
    let passed = (r.fine.mean - target).abs() <= 3.0 * (r.fine.stderr + allowance);
    Ok(FkVerdict {
        point: x.to_vec(),
        target,
        estimate: r.fine,
        coarse: r.coarse,
        allowance,
        passed,
    })
}

/// Compares `E_x[e^{∫(c−λ)ds} Φ(X_τ̆)]` with `Φ(x)`; `τ̆` is the hitting
/// time of the simulator's inner ball.
pub fn feynman_kac_verify(sim: &Simulator<'_>, gs: &GroundState<'_>, x: &[f64]) -> Result<FkVerdict> {
    if sim.region.inner.is_none() {
        return Err(Error::InvalidArgument("Feynman-Kac check needs an inner radius".into()));
    }
    let samples = (0..sim.cfg.n_paths as u64)
        .map(|i| feynman_kac_sample(sim, gs, x, i))
        .collect::<Result<Vec<_>>>()?;
    feynman_kac_from(&samples, gs, x, sim.cfg.dt)
}

/// `(1/T) log mean exp(I_n)` and its jackknife standard error, computed in
/// log space.
pub fn risk_sensitive_from(integrals: &[f64], horizon: f64) -> MCEstimate {
    let n = integrals.len();
    let m = integrals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = integrals.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let mean = (m + (total / n as f64).ln()) / horizon;
    let stderr = if n > 1 {
        let loo: Vec<f64> = (0..n)
            .map(|i| {
                let mut rest = total - e[i];
                if rest < 1e-8 * total {
                    let mi = (0..n).filter(|&j| j != i).map(|j| integrals[j]).fold(f64::NEG_INFINITY, f64::max);
                    let r: f64 = (0..n).filter(|&j| j != i).map(|j| (integrals[j] - mi).exp()).sum();
                    return (mi + (r / (n - 1) as f64).ln()) / horizon;
                }
                rest = rest.max(0.0);
                (m + (rest / (n - 1) as f64).ln()) / horizon
            })
            .collect();
        let lm = loo.iter().sum::<f64>() / n as f64;
        let ss: f64 = loo.iter().map(|v| (v - lm) * (v - lm)).sum();
        ((n - 1) as f64 / n as f64 * ss).sqrt()
    } else {
        0.0
    };
    MCEstimate {
        mean,
        stderr,
        n_paths: n,
        truncated: 0,
    }
}

/// Finite-horizon risk-sensitive value `(1/T) log E[e^{∫₀ᵀ c ds}]`.
pub fn risk_sensitive_estimate(sim: &Simulator<'_>, x0: &[f64], horizon: f64) -> Result<MCEstimate> {
    if !(horizon > 0.0 && horizon <= sim.cfg.t_max) {
        return Err(Error::InvalidArgument(alloc::format!(
            "horizon {horizon} must lie in (0, t_max = {}]",
            sim.cfg.t_max
        )));
    }
    let integrals = (0..sim.cfg.n_paths as u64)
        .map(|i| sim.integral_to_horizon(x0, horizon, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(risk_sensitive_from(&integrals, horizon))
}
