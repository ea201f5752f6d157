//! The `eigenflow` command line.
//!
//! Every subcommand reads one spec file, writes `<command>.json` and
//! `<command>.csv` into `--out-dir` and prints the JSON report on stdout.
//! Failures produce a JSON object on stderr and a nonzero exit code; when
//! only some sub-tasks fail the reports are still written and list them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eigenflow_core::certify::{cw_expr, cw_lower, cw_upper, minimax_measure, Certificate, Kind, Level, MinimaxOptions};
use eigenflow_core::discretize::{assemble, DiscreteOperator};
use eigenflow_core::exhaust::{lyapunov_check, DriftReport, ExhaustionResult, Extrapolation, HRule};
use eigenflow_core::hjb::{perturb_potential_with, policy_iteration, PolicyOptions, SemilinearEigenResult, Tail};
use eigenflow_core::mc::{ExitRegion, Feedback, GroundState, MCEstimate, PathConfig, Simulator};
use eigenflow_core::model::{validate_spec, BoxDomain, ValidationOptions, ValidationReport};
use eigenflow_core::{parse_expr, Grid, OperatorSpec, Sense, Shape};
use serde_json::{json, Value};

use crate::manifest::RunManifest;
use crate::parallel;
use crate::report::{fmt_f64, to_json_string, write_file, Table};
use crate::spec_file::{self, LoadedSpec};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "eigenflow", version, about = "Principal eigenvalues of linear and HJB-type elliptic operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory for the JSON and CSV reports.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dirichlet eigenpair on one domain; dumps ψ.
    EigDirichlet {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        domain: Domain,
        #[command(flatten)]
        solver: Solver,
    },
    /// Dirichlet eigenvalues over growing radii and the extrapolated λ*.
    Exhaust {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        radii: Radii,
        #[command(flatten)]
        solver: Solver,
    },
    /// Collatz-Wielandt bound from a test function (expression or CSV file).
    Certify {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        domain: Domain,
        /// Expression in x0, x1, ... or a CSV file with a `psi` column.
        #[arg(long, allow_hyphen_values = true)]
        psi: String,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Quotient of the difference scheme or of the differential operator.
        /// Grid functions only support `discrete`; expressions default to
        /// `continuum`.
        #[arg(long, value_enum)]
        level: Option<LevelArg>,
    },
    /// Measure-side minimax value of a max-sense operator.
    Minimax {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        domain: Domain,
        #[command(flatten)]
        solver: Solver,
        /// Outer measure steps.
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        /// Required width of the bracket around the value.
        #[arg(long, default_value_t = 1e-4)]
        gap_tol: f64,
    },
    /// Positive solutions of 𝒢φ = λφ for λ above the generalized eigenvalue.
    Eigencurve {
        #[command(flatten)]
        spec: SpecArg,
        /// λ values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        lambda: Vec<f64>,
        /// Annulus radii R_1 < R_2 < ...
        #[arg(long, value_delimiter = ',', required = true)]
        radii: Vec<f64>,
        #[arg(long)]
        h: f64,
        #[command(flatten)]
        solver: Solver,
    },
    /// Generalized eigenvalue of the cut-off potential for several m.
    Perturb {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long, value_delimiter = ',', required = true)]
        m: Vec<f64>,
        #[command(flatten)]
        radii: Radii,
        /// Added to the tail value outside the cutoff.
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Tail value; estimated on the outer shell of the largest grid when
        /// omitted.
        #[arg(long, allow_hyphen_values = true)]
        tail: Option<f64>,
        #[command(flatten)]
        solver: Solver,
    },
    /// Feynman-Kac check of the ground state at sample points.
    McVerify {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        domain: Domain,
        /// Points, `;`-separated, coordinates `,`-separated. In one dimension
        /// commas separate points as well.
        #[arg(long, allow_hyphen_values = true)]
        points: String,
        /// Radius of the ball where paths are stopped and Φ is read off.
        #[arg(long, default_value_t = 1.0)]
        inner: f64,
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        solver: Solver,
    },
    /// Finite-horizon risk-sensitive value (1/T) log E exp ∫c.
    Risk {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long = "T")]
        horizon: f64,
        /// Start point (default: origin).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        /// `optimal` (the eigenproblem policy on --R/--h) or a control index.
        #[arg(long, default_value = "optimal")]
        policy: String,
        #[arg(long = "R")]
        r: Option<f64>,
        #[arg(long)]
        h: Option<f64>,
        #[command(flatten)]
        paths: Paths,
        #[command(flatten)]
        solver: Solver,
    },
}

#[derive(Debug, Args)]
pub struct SpecArg {
    /// Problem spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
}

#[derive(Debug, Args)]
pub struct Domain {
    /// Half-width of the domain.
    #[arg(long = "R")]
    pub r: f64,
    /// Grid spacing (default R/500).
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long, value_enum, default_value_t = ShapeArg::Box)]
    pub shape: ShapeArg,
}

impl Domain {
    fn grid(&self, dim: usize) -> Result<Grid, Error> {
        Ok(Grid::new(dim, self.r, self.h.unwrap_or(self.r / 500.0), self.shape.into())?)
    }
}

#[derive(Debug, Args)]
pub struct Radii {
    #[arg(long, value_delimiter = ',', required = true)]
    pub radii: Vec<f64>,
    /// Fixed grid spacing for every radius.
    #[arg(long, conflicts_with = "h_rel")]
    pub h: Option<f64>,
    /// Spacing as a fraction of each radius (default 1/200).
    #[arg(long)]
    pub h_rel: Option<f64>,
    #[arg(long, value_enum, default_value_t = ShapeArg::Box)]
    pub shape: ShapeArg,
}

impl Radii {
    fn rule(&self) -> HRule {
        match (self.h, self.h_rel) {
            (Some(h), _) => HRule::Fixed(h),
            (None, Some(f)) => HRule::Relative(f),
            (None, None) => HRule::Relative(1.0 / 200.0),
        }
    }
}

#[derive(Debug, Args)]
pub struct Solver {
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Maximum policy-iteration sweeps.
    #[arg(long, default_value_t = 200)]
    pub sweeps: usize,
}

impl Solver {
    fn options(&self) -> PolicyOptions {
        PolicyOptions {
            tol: self.tol,
            max_sweeps: self.sweeps,
            ..PolicyOptions::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct Paths {
    #[arg(long, env = "EIGENFLOW_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Paths still running at this time are truncated.
    #[arg(long, default_value_t = 100.0)]
    pub t_max: f64,
}

impl Paths {
    fn config(&self) -> PathConfig {
        PathConfig {
            dt: self.dt,
            t_max: self.t_max,
            seed: self.seed,
            n_paths: self.paths,
        }
    }

    fn json(&self) -> Value {
        json!({
            "seed": self.seed,
            "rng": "ChaCha8 (rand_chacha), stream = path index",
            "paths": self.paths,
            "dt": self.dt,
            "t_max": self.t_max,
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ShapeArg {
    Box,
    Ball,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Shape {
        match s {
            ShapeArg::Box => Shape::Box,
            ShapeArg::Ball => Shape::Ball,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Discrete,
    Continuum,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EigDirichlet { .. } => "eig-dirichlet",
            Command::Exhaust { .. } => "exhaust",
            Command::Certify { .. } => "certify",
            Command::Minimax { .. } => "minimax",
            Command::Eigencurve { .. } => "eigencurve",
            Command::Perturb { .. } => "perturb",
            Command::McVerify { .. } => "mc-verify",
            Command::Risk { .. } => "risk",
        }
    }

    fn spec_path(&self) -> &Path {
        match self {
            Command::EigDirichlet { spec, .. }
            | Command::Exhaust { spec, .. }
            | Command::Certify { spec, .. }
            | Command::Minimax { spec, .. }
            | Command::Eigencurve { spec, .. }
            | Command::Perturb { spec, .. }
            | Command::McVerify { spec, .. }
            | Command::Risk { spec, .. } => &spec.spec,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Command::McVerify { paths, .. } | Command::Risk { paths, .. } => Some(paths.seed),
            _ => None,
        }
    }
}

/// Result of one command before it is written out.
struct Output {
    result: Value,
    table: Table,
    /// Sub-tasks that failed; the run exits nonzero when nonempty.
    failures: Vec<Value>,
    total: usize,
}

impl Output {
    fn complete(result: Value, table: Table) -> Self {
        Self {
            result,
            table,
            failures: Vec::new(),
            total: 1,
        }
    }
}

/// Runs the parsed command line. On success returns the JSON report.
pub fn run(cli: Cli, args: Vec<String>) -> Result<String, Error> {
    let started = Instant::now();
    let name = cli.command.name();
    let loaded = spec_file::load(cli.command.spec_path())?;
    let mut manifest = RunManifest::new(name, args);
    manifest.spec_path = Some(cli.command.spec_path().to_path_buf());
    manifest.spec_sha256 = Some(loaded.sha256.clone());
    manifest.seed = cli.command.seed();
    manifest.threads = cli.threads;
    let json_path = cli.out_dir.join(format!("{name}.json"));
    let csv_path = cli.out_dir.join(format!("{name}.csv"));
    manifest.outputs = vec![json_path, csv_path];

    let out = parallel::with_threads(cli.threads, || execute(&cli.command, &loaded))?;

    manifest.finish(started);
    let report = json!({
        "manifest": manifest,
        "result": out.result,
        "failures": out.failures,
    });
    let text = to_json_string(&report)?;
    write_file(&cli.out_dir, &format!("{name}.json"), &text)?;
    write_file(&cli.out_dir, &format!("{name}.csv"), &out.table.to_csv()?)?;
    if !out.failures.is_empty() {
        return Err(Error::Partial {
            failed: out.failures.len(),
            total: out.total,
        });
    }
    Ok(text)
}

/// Structured error for stderr.
pub fn error_json(command: Option<&str>, err: &Error) -> String {
    let mut chain = Vec::new();
    let mut source = std::error::Error::source(err);
    while let Some(s) = source {
        chain.push(s.to_string());
        source = s.source();
    }
    let v = json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
            "causes": chain,
            "command": command,
        }
    });
    serde_json::to_string(&v).expect("plain JSON")
}

fn execute(cmd: &Command, loaded: &LoadedSpec) -> Result<Output, Error> {
    let spec = &loaded.spec;
    match cmd {
        Command::EigDirichlet { domain, solver, .. } => eig_dirichlet(spec, domain, solver),
        Command::Exhaust { radii, solver, .. } => exhaust(loaded, radii, solver),
        Command::Certify {
            domain,
            psi,
            kind,
            level,
            ..
        } => certify(spec, domain, psi, *kind, *level),
        Command::Minimax {
            domain,
            solver,
            steps,
            gap_tol,
            ..
        } => minimax(spec, domain, solver, *steps, *gap_tol),
        Command::Eigencurve {
            lambda,
            radii,
            h,
            solver,
            ..
        } => eigencurve(spec, lambda, radii, *h, solver),
        Command::Perturb {
            m,
            radii,
            delta,
            tail,
            solver,
            ..
        } => perturb(spec, m, radii, *delta, *tail, solver),
        Command::McVerify {
            domain,
            points,
            inner,
            paths,
            solver,
            ..
        } => mc_verify(spec, domain, points, *inner, paths, solver),
        Command::Risk {
            horizon,
            x0,
            policy,
            r,
            h,
            paths,
            solver,
            ..
        } => risk(spec, *horizon, x0, policy, *r, *h, paths, solver),
    }
}

fn num(v: f64) -> String {
    fmt_f64(v)
}

fn coord_header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

fn coords(grid: &Grid, node: usize) -> Vec<f64> {
    grid.coords(node)[..grid.dim()].to_vec()
}

fn validation_json(r: &ValidationReport) -> Value {
    json!({
        "n_points": r.n_points,
        "min_diffusion_eigenvalue": r.min_diffusion_eigenvalue,
        "min_potential": r.min_potential,
        "max_drift_norm": r.max_drift_norm,
        "potential_floor": r.potential_floor,
        "assertions": r.assertions,
    })
}

fn validate(spec: &OperatorSpec, half_width: f64) -> Result<Value, Error> {
    let domain = BoxDomain {
        dim: spec.dim(),
        half_width,
    };
    let r = validate_spec(spec, &domain, 1024, &ValidationOptions::default())?;
    Ok(validation_json(&r))
}

fn eigen_json(res: &SemilinearEigenResult) -> Value {
    json!({
        "lambda": res.lambda(),
        "cw_lower": res.pair.lower,
        "cw_upper": res.pair.upper,
        "residual": res.pair.residual,
        "fixed_point_residual": res.fixed_point_residual,
        "sweeps": res.sweeps(),
        "history": res.history,
        "cycled": res.cycled,
    })
}

fn eig_dirichlet(spec: &OperatorSpec, domain: &Domain, solver: &Solver) -> Result<Output, Error> {
    let validation = validate(spec, domain.r)?;
    let grid = domain.grid(spec.dim())?;
    let opr = assemble(spec, &grid)?;
    let res = policy_iteration(&opr, &solver.options())?;
    let mut header = coord_header(grid.dim());
    header.extend(["psi".into(), "control".into()]);
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for i in 0..grid.len() {
        let mut row: Vec<String> = coords(&grid, i).into_iter().map(num).collect();
        row.push(num(res.psi()[i]));
        row.push(res.policy.0[i].to_string());
        table.push(row);
    }
    let result = json!({
        "R": grid.half_width(),
        "h": grid.h(),
        "n_nodes": grid.len(),
        "eigen": eigen_json(&res),
        "validation": validation,
    });
    Ok(Output::complete(result, table))
}

fn exhaustion_json(e: &ExhaustionResult) -> Value {
    let model = match e.model {
        Extrapolation::InverseSquare { beta, fit_rms } => json!({
            "kind": e.model.tag(), "beta": beta, "fit_rms": fit_rms
        }),
        Extrapolation::LastValue => json!({ "kind": e.model.tag() }),
    };
    json!({
        "lambda_star_est": e.lambda_star,
        "extrapolation": model,
        "monotone": e.monotone,
        "rows": e.rows.iter().map(|r| match &r.result {
            Ok(row) => json!({
                "R": row.r, "h": row.h, "n_nodes": row.n_nodes, "lambda": row.lambda,
                "residual": row.residual, "sweeps": row.sweeps,
            }),
            Err(msg) => json!({ "R": r.r, "h": r.h, "error": msg }),
        }).collect::<Vec<_>>(),
    })
}

fn exhaustion_failures(e: &ExhaustionResult) -> Vec<Value> {
    e.failures().map(|(r, msg)| json!({ "R": r, "error": msg })).collect()
}

fn drift_json(d: &DriftReport) -> Value {
    json!({
        "variant": format!("{:?}", d.variant),
        "n_nodes": d.n_nodes,
        "worst_violation": d.worst_violation,
        "worst_point": d.worst_point,
        "holds": d.holds,
        "gamma_extracted": d.gamma_extracted,
        "compact_radius": d.compact_radius,
        "kappa_needed": d.kappa_needed,
        "tail": d.tail.map(|t| json!({ "value": t.value, "threshold": t.threshold, "holds": t.holds })),
    })
}

fn exhaust(loaded: &LoadedSpec, radii: &Radii, solver: &Solver) -> Result<Output, Error> {
    let spec = &loaded.spec;
    let opts = solver.options();
    let rule = radii.rule();
    let shape: Shape = radii.shape.into();
    let last = *radii
        .radii
        .last()
        .ok_or_else(|| Error::Argument("empty radius list".into()))?;
    let validation = validate(spec, last)?;
    let e = parallel::exhaust(spec, &radii.radii, &rule, shape, &opts)?;
    let lyapunov = match &loaded.lyapunov {
        Some(l) => {
            let h = rule.spacing(radii.radii.len() - 1, last)?;
            Some(drift_json(&lyapunov_check(spec, l, &Grid::new(spec.dim(), last, h, shape)?)?))
        }
        None => None,
    };
    let mut table = Table::new(&["R", "h", "n_nodes", "lambda", "residual", "sweeps", "status"]);
    for r in &e.rows {
        match &r.result {
            Ok(row) => table.push(vec![
                num(row.r),
                num(row.h),
                row.n_nodes.to_string(),
                num(row.lambda),
                num(row.residual),
                row.sweeps.to_string(),
                "ok".into(),
            ]),
            Err(msg) => table.push(vec![
                num(r.r),
                num(r.h),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                msg.clone(),
            ]),
        }
    }
    let mut result = exhaustion_json(&e);
    result["validation"] = validation;
    result["lyapunov"] = lyapunov.unwrap_or(Value::Null);
    Ok(Output {
        failures: exhaustion_failures(&e),
        total: e.rows.len(),
        result,
        table,
    })
}

fn read_psi_csv(path: &Path, n: usize) -> Result<Vec<f64>, Error> {
    let mut rdr = csv::Reader::from_path(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "psi")
        .ok_or_else(|| Error::Argument(format!("{} has no `psi` column", path.display())))?;
    let mut psi = Vec::with_capacity(n);
    for rec in rdr.records() {
        let rec = rec?;
        let v: f64 = rec[col]
            .trim()
            .parse()
            .map_err(|_| Error::Argument(format!("bad psi value `{}`", &rec[col])))?;
        psi.push(v);
    }
    if psi.len() != n {
        return Err(Error::Argument(format!(
            "{} has {} values but the grid has {n} nodes",
            path.display(),
            psi.len()
        )));
    }
    Ok(psi)
}

fn certificate_json(c: &Certificate, grid: &Grid) -> Value {
    json!({
        "kind": format!("{:?}", c.kind).to_lowercase(),
        "bound": c.bound,
        "validity": format!("{:?}", c.tag),
        "level": format!("{:?}", c.level).to_lowercase(),
        "psi": match &c.psi_source {
            eigenflow_core::certify::PsiSource::Grid => Value::from("grid"),
            eigenflow_core::certify::PsiSource::Expr(s) => Value::from(s.as_str()),
        },
        "quotient_min": c.quotient_min,
        "quotient_max": c.quotient_max,
        "argmin": coords(grid, c.argmin_node),
        "argmax": coords(grid, c.argmax_node),
    })
}

fn certify(
    spec: &OperatorSpec,
    domain: &Domain,
    psi: &str,
    kind: KindArg,
    level: Option<LevelArg>,
) -> Result<Output, Error> {
    let grid = domain.grid(spec.dim())?;
    let opr = assemble(spec, &grid)?;
    let kind = match kind {
        KindArg::Lower => Kind::Lower,
        KindArg::Upper => Kind::Upper,
    };
    let file = Path::new(psi);
    let (cert, values) = if file.is_file() {
        if matches!(level, Some(LevelArg::Continuum)) {
            return Err(Error::Argument("grid test functions only have a discrete quotient".into()));
        }
        let values = read_psi_csv(file, grid.len())?;
        let cert = match kind {
            Kind::Lower => cw_lower(&opr, &values)?,
            Kind::Upper => cw_upper(&opr, &values)?,
        };
        (cert, values)
    } else {
        let e = parse_expr(psi).map_err(|err| Error::Field("psi".into(), err))?;
        let level = match level {
            Some(LevelArg::Discrete) => Level::Discrete,
            _ => Level::Continuum,
        };
        let values = grid.sample(|x| e.eval(x, &[])).into_vec();
        (cw_expr(spec, &opr, &e, kind, level)?, values)
    };
    let mut header = coord_header(grid.dim());
    header.extend(["psi".into(), "quotient".into()]);
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    for i in 0..grid.len() {
        let mut row: Vec<String> = coords(&grid, i).into_iter().map(num).collect();
        row.push(num(values[i]));
        row.push(num(cert.quotient[i]));
        table.push(row);
    }
    let result = json!({
        "R": grid.half_width(),
        "h": grid.h(),
        "n_nodes": grid.len(),
        "certificate": certificate_json(&cert, &grid),
    });
    Ok(Output::complete(result, table))
}

fn minimax(spec: &OperatorSpec, domain: &Domain, solver: &Solver, steps: usize, gap_tol: f64) -> Result<Output, Error> {
    if spec.sense() != Sense::Max {
        return Err(Error::Argument("minimax needs a spec with sense `max`".into()));
    }
    let grid = domain.grid(spec.dim())?;
    let opr: DiscreteOperator = assemble(spec, &grid)?;
    let eig = policy_iteration(&opr, &solver.options())?;
    let opts = MinimaxOptions {
        mu_steps: steps,
        tol: gap_tol,
        ..MinimaxOptions::default()
    };
    let mm = minimax_measure(&opr, &opts)?;
    let mut header = coord_header(grid.dim());
    header.extend(["mu".into(), "psi".into()]);
    let mut table = Table {
        header,
        rows: Vec::new(),
    };
    let anchor = mm.w[grid.anchor()];
    for i in 0..grid.len() {
        let mut row: Vec<String> = coords(&grid, i).into_iter().map(num).collect();
        row.push(num(mm.mu[i]));
        row.push(num((mm.w[i] - anchor).exp()));
        table.push(row);
    }
    let result = json!({
        "R": grid.half_width(),
        "h": grid.h(),
        "n_nodes": grid.len(),
        "value": mm.value,
        "lower": mm.lower,
        "upper": mm.upper,
        "gap": mm.gap(),
        "steps": mm.steps,
        "policy_iteration_lambda": eig.lambda(),
        "difference": mm.value - eig.lambda(),
    });
    Ok(Output::complete(result, table))
}

fn eigencurve(spec: &OperatorSpec, lambdas: &[f64], radii: &[f64], h: f64, solver: &Solver) -> Result<Output, Error> {
    let runs = parallel::eigencurve(spec, lambdas, radii, h, Shape::Box, &solver.options());
    let mut table = Table::new(&[
        "lambda",
        "inner",
        "outer",
        "n_nodes",
        "lambda_dirichlet",
        "sweeps",
        "interior_residual",
        "min_value",
    ]);
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (&l, run) in lambdas.iter().zip(&runs) {
        match run {
            Ok(r) => {
                for s in &r.stages {
                    table.push(vec![
                        num(l),
                        num(s.inner),
                        num(s.outer),
                        s.n_nodes.to_string(),
                        num(s.lambda_dirichlet),
                        s.sweeps.to_string(),
                        num(s.interior_residual),
                        num(s.min_value),
                    ]);
                }
                let last = r.stages.last().expect("at least one stage");
                entries.push(json!({
                    "lambda": l,
                    "positive": r.phi.is_positive(),
                    "interior_residual": last.interior_residual,
                    "residual_bound": 10.0 * h,
                    "stages": r.stages.iter().map(|s| json!({
                        "inner": s.inner, "outer": s.outer, "n_nodes": s.n_nodes,
                        "lambda_dirichlet": s.lambda_dirichlet, "sweeps": s.sweeps,
                        "interior_residual": s.interior_residual, "min_value": s.min_value,
                    })).collect::<Vec<_>>(),
                }));
            }
            Err(e) => {
                let v = json!({ "lambda": l, "error": e.to_string(), "kind": e.kind() });
                entries.push(v.clone());
                failures.push(v);
            }
        }
    }
    Ok(Output {
        result: json!({ "h": h, "radii": radii, "curve": entries }),
        table,
        failures,
        total: lambdas.len(),
    })
}

fn perturb(
    spec: &OperatorSpec,
    ms: &[f64],
    radii: &Radii,
    delta: f64,
    tail: Option<f64>,
    solver: &Solver,
) -> Result<Output, Error> {
    let opts = solver.options();
    let rule = radii.rule();
    let shape: Shape = radii.shape.into();
    let last = *radii
        .radii
        .last()
        .ok_or_else(|| Error::Argument("empty radius list".into()))?;
    let big = Grid::new(spec.dim(), last, rule.spacing(radii.radii.len() - 1, last)?, shape)?;
    let tail = tail.map_or(Tail::Estimate, Tail::Given);
    let base = parallel::exhaust(spec, &radii.radii, &rule, shape, &opts)?;
    let mut table = Table::new(&["m", "lambda_star_est", "extrapolation", "monotone", "difference"]);
    table.push(vec![
        "inf".into(),
        num(base.lambda_star),
        base.model.tag().into(),
        base.monotone.to_string(),
        num(0.0),
    ]);
    let mut rows = Vec::new();
    let mut failures = exhaustion_failures(&base);
    for &m in ms {
        let perturbed = perturb_potential_with(spec, m, delta, tail, &big)?;
        let e = parallel::exhaust(&perturbed, &radii.radii, &rule, shape, &opts)?;
        table.push(vec![
            num(m),
            num(e.lambda_star),
            e.model.tag().into(),
            e.monotone.to_string(),
            num(e.lambda_star - base.lambda_star),
        ]);
        failures.extend(exhaustion_failures(&e).into_iter().map(|mut v| {
            v["m"] = json!(m);
            v
        }));
        let mut v = exhaustion_json(&e);
        v["m"] = json!(m);
        v["potential"] = json!(perturbed.potential().to_source());
        rows.push(v);
    }
    Ok(Output {
        result: json!({
            "delta": delta,
            "unperturbed": exhaustion_json(&base),
            "perturbed": rows,
        }),
        table,
        failures,
        total: radii.radii.len() * (ms.len() + 1),
    })
}

/// `"1,2;3,4"`: points separated by `;`. In one dimension `"1,2,3"` is three
/// points.
pub fn parse_points(src: &str, dim: usize) -> Result<Vec<Vec<f64>>, Error> {
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Argument(format!("bad coordinate `{s}`")))
    };
    let mut pts = Vec::new();
    for group in src.split(';').filter(|g| !g.trim().is_empty()) {
        let vals = group.split(',').map(parse).collect::<Result<Vec<_>, _>>()?;
        if dim == 1 {
            pts.extend(vals.into_iter().map(|v| vec![v]));
        } else if vals.len() == dim {
            pts.push(vals);
        } else {
            return Err(Error::Argument(format!(
                "point `{group}` has {} coordinates, expected {dim}",
                vals.len()
            )));
        }
    }
    if pts.is_empty() {
        return Err(Error::Argument("no points given".into()));
    }
    Ok(pts)
}

fn estimate_json(e: &MCEstimate) -> Value {
    json!({ "mean": e.mean, "stderr": e.stderr, "n_paths": e.n_paths, "truncated": e.truncated })
}

fn mc_verify(
    spec: &OperatorSpec,
    domain: &Domain,
    points: &str,
    inner: f64,
    paths: &Paths,
    solver: &Solver,
) -> Result<Output, Error> {
    let pts = parse_points(points, spec.dim())?;
    let grid = domain.grid(spec.dim())?;
    let opr = assemble(spec, &grid)?;
    let eig = policy_iteration(&opr, &solver.options())?;
    let gs = GroundState {
        grid: &grid,
        phi: eig.psi(),
        lambda: eig.lambda(),
    };
    let fb = Feedback::Grid {
        grid: grid.clone(),
        policy: eig.policy.clone(),
    };
    let region = ExitRegion {
        inner: Some(inner),
        outer: Some((grid.shape(), grid.half_width())),
    };
    let sim = Simulator::new(spec, &fb, region, paths.config())?;
    let mut table = Table::new(&["point", "target", "estimate", "stderr", "coarse", "allowance", "truncated", "passed"]);
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for x in &pts {
        let label = x.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" ");
        match parallel::feynman_kac_verify(&sim, &gs, x) {
            Ok(v) => {
                table.push(vec![
                    label,
                    num(v.target),
                    num(v.estimate.mean),
                    num(v.estimate.stderr),
                    num(v.coarse.mean),
                    num(v.allowance),
                    v.estimate.truncated.to_string(),
                    v.passed.to_string(),
                ]);
                let entry = json!({
                    "point": v.point,
                    "target": v.target,
                    "estimate": estimate_json(&v.estimate),
                    "coarse": estimate_json(&v.coarse),
                    "allowance": v.allowance,
                    "passed": v.passed,
                });
                if !v.passed {
                    failures.push(entry.clone());
                }
                verdicts.push(entry);
            }
            Err(e) => {
                let entry = json!({ "point": x, "error": e.to_string(), "kind": e.kind() });
                failures.push(entry.clone());
                verdicts.push(entry);
            }
        }
    }
    Ok(Output {
        result: json!({
            "lambda": eig.lambda(),
            "R": grid.half_width(),
            "h": grid.h(),
            "inner": inner,
            "sampling": paths.json(),
            "verdicts": verdicts,
        }),
        table,
        failures,
        total: pts.len(),
    })
}

#[allow(clippy::too_many_arguments)]
fn risk(
    spec: &OperatorSpec,
    horizon: f64,
    x0: &[f64],
    policy: &str,
    r: Option<f64>,
    h: Option<f64>,
    paths: &Paths,
    solver: &Solver,
) -> Result<Output, Error> {
    let d = spec.dim();
    let x0 = if x0.is_empty() { vec![0.0; d] } else { x0.to_vec() };
    if x0.len() != d {
        return Err(Error::Argument(format!("x0 has {} coordinates, expected {d}", x0.len())));
    }
    let (fb, lambda) = if policy == "optimal" {
        let r = r.ok_or_else(|| Error::Argument("the optimal policy needs --R".into()))?;
        let grid = Grid::new(d, r, h.unwrap_or(r / 500.0), Shape::Box)?;
        let eig = policy_iteration(&assemble(spec, &grid)?, &solver.options())?;
        let lambda = eig.lambda();
        (
            Feedback::Grid {
                grid,
                policy: eig.policy,
            },
            Some(lambda),
        )
    } else {
        let k: usize = policy
            .parse()
            .map_err(|_| Error::Argument(format!("policy must be `optimal` or a control index, got `{policy}`")))?;
        (Feedback::Constant(k), None)
    };
    let cfg = PathConfig {
        t_max: horizon,
        ..paths.config()
    };
    let sim = Simulator::new(spec, &fb, ExitRegion::none(), cfg)?;
    let est = parallel::risk_sensitive(&sim, &x0, horizon)?;
    let mut table = Table::new(&["T", "estimate", "stderr", "n_paths", "dirichlet_lambda"]);
    table.push(vec![
        num(horizon),
        num(est.mean),
        num(est.stderr),
        est.n_paths.to_string(),
        lambda.map(num).unwrap_or_default(),
    ]);
    Ok(Output::complete(
        json!({
            "T": horizon,
            "x0": x0,
            "policy": policy,
            "estimate": estimate_json(&est),
            "dirichlet_lambda": lambda,
            "sampling": paths.json(),
        }),
        table,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn points_parsing() {
        assert_eq!(parse_points("2,3,-2.5", 1).unwrap(), vec![vec![2.0], vec![3.0], vec![-2.5]]);
        assert_eq!(parse_points("1,2; 3,4", 2).unwrap(), vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(parse_points("1,2,3", 2).is_err());
        assert!(parse_points("", 1).is_err());
        assert!(parse_points("a", 1).is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "eigenflow", "exhaust", "--spec", "s.json", "--radii", "2,4,8", "--h", "0.01", "--threads", "2",
        ])
        .unwrap();
        assert_eq!(cli.threads, Some(2));
        match cli.command {
            Command::Exhaust { radii, solver, .. } => {
                assert_eq!(radii.radii, vec![2.0, 4.0, 8.0]);
                assert_eq!(radii.rule(), HRule::Fixed(0.01));
                assert_eq!(solver.tol, 1e-10);
            }
            _ => panic!("wrong subcommand"),
        }
        assert!(Cli::try_parse_from(["eigenflow", "eig-dirichlet", "--spec", "s.json"]).is_err());
    }
}
