//! Rayon drivers. Work is split over independent items (radii, λ values,
//! path indices); results are collected in input order and reduced with the
//! sequential reducers of `eigenflow-core`, so the output does not depend on
//! the number of threads.

use eigenflow_core::certify::{gap_check, GapEvidence};
use eigenflow_core::exhaust::{check_radii, solve_radius, summarize, ExhaustionResult, HRule, RadiusOutcome};
use eigenflow_core::hjb::{eigenfunction_at_lambda, EigenfunctionResult, PolicyOptions};
use eigenflow_core::mc::{
    exit_time_coupled_sample, feynman_kac_from, feynman_kac_sample, richardson_from, risk_sensitive_from,
    FkVerdict, GroundState, MCEstimate, RichardsonEstimate, Simulator,
};
use eigenflow_core::discretize::DiscreteOperator;
use eigenflow_core::{Error, OperatorSpec, Result, Shape};
use rayon::prelude::*;

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

pub fn exhaust(
    spec: &OperatorSpec,
    radii: &[f64],
    h_rule: &HRule,
    shape: Shape,
    opts: &PolicyOptions,
) -> Result<ExhaustionResult> {
    check_radii(radii)?;
    let rows = radii
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let h = h_rule.spacing(i, r)?;
            let result = solve_radius(spec, r, h, shape, opts)
                .map(|(row, _)| row)
                .map_err(|e| e.to_string());
            Ok(RadiusOutcome { r, h, result })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(rows, opts.tol)
}

pub fn eigencurve(
    spec: &OperatorSpec,
    lambdas: &[f64],
    radii: &[f64],
    h: f64,
    shape: Shape,
    opts: &PolicyOptions,
) -> Vec<Result<EigenfunctionResult>> {
    lambdas
        .par_iter()
        .map(|&l| eigenfunction_at_lambda(spec, l, radii, h, shape, opts))
        .collect()
}

pub fn exit_time_richardson(sim: &Simulator<'_>, x0: &[f64]) -> Result<RichardsonEstimate> {
    let n = sim.config().n_paths as u64;
    let samples = (0..n)
        .into_par_iter()
        .map(|i| exit_time_coupled_sample(sim, x0, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(richardson_from(&samples, sim.config().dt))
}

pub fn feynman_kac_verify(sim: &Simulator<'_>, gs: &GroundState<'_>, x: &[f64]) -> Result<FkVerdict> {
    if sim.region().inner.is_none() {
        return Err(Error::InvalidArgument("Feynman-Kac check needs an inner radius".into()));
    }
    let n = sim.config().n_paths as u64;
    let samples = (0..n)
        .into_par_iter()
        .map(|i| feynman_kac_sample(sim, gs, x, i))
        .collect::<Result<Vec<_>>>()?;
    feynman_kac_from(&samples, gs, x, sim.config().dt)
}

pub fn risk_sensitive(sim: &Simulator<'_>, x0: &[f64], horizon: f64) -> Result<MCEstimate> {
    if !(horizon > 0.0 && horizon <= sim.config().t_max) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must lie in (0, t_max = {}]",
            sim.config().t_max
        )));
    }
    let n = sim.config().n_paths as u64;
    let integrals = (0..n)
        .into_par_iter()
        .map(|i| sim.integral_to_horizon(x0, horizon, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(risk_sensitive_from(&integrals, horizon))
}

/// Gap checks at several λ values.
pub fn gap_checks(
    opr: &DiscreteOperator,
    lambdas: &[f64],
    starts: usize,
    seed: u64,
    opts: &PolicyOptions,
) -> Vec<Result<GapEvidence>> {
    lambdas
        .par_iter()
        .map(|&l| gap_check(opr, l, starts, seed, opts))
        .collect()
}
