use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::perron::EigenPair;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("invalid operator spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("diffusion matrix degenerate at {point:?} (min eigenvalue {eigenvalue})")]
    DegenerateDiffusion { point: Vec<f64>, eigenvalue: f64 },

    #[error("potential {value} below floor {floor} at {point:?}")]
    UnboundedBelowPotential {
        point: Vec<f64>,
        value: f64,
        floor: f64,
    },

    #[error("coefficient is not finite at {point:?}")]
    NonFiniteCoefficient { point: Vec<f64> },

    #[error("grid too coarse: R/h = {ratio} (need at least 3 interior nodes per axis)")]
    TooCoarse { ratio: f64 },

    #[error("cross-diffusion breaks monotonicity at node {node} ({point:?})")]
    NonMonotoneStencil { node: usize, point: Vec<f64> },

    #[error("interior stencil graph is not connected")]
    NotIrreducible,

    #[error("no convergence after {iterations} iterations")]
    NoConvergence {
        iterations: usize,
        last: Option<Box<EigenPair>>,
    },

    #[error("shifted matrix singular at shift {shift}")]
    SingularShift { shift: f64 },

    #[error("test function not positive at node {node} (value {value})")]
    NonPositiveTestFunction { node: usize, value: f64 },

    #[error("lambda {lambda} is not above the Dirichlet eigenvalue {lambda_dirichlet}")]
    NotSupercritical { lambda: f64, lambda_dirichlet: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("{truncated} of {n_paths} paths reached the time limit")]
    ExcessTruncation { truncated: usize, n_paths: usize },

    #[error("minimax did not converge, gap {gap}")]
    MinimaxNoConvergence { gap: f64, lower: f64, upper: f64 },
}

impl Error {
    /// Stable variant name for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Syntax { .. } => "Syntax",
            Error::UnknownIdentifier { .. } => "UnknownIdentifier",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::DegenerateDiffusion { .. } => "DegenerateDiffusion",
            Error::UnboundedBelowPotential { .. } => "UnboundedBelowPotential",
            Error::NonFiniteCoefficient { .. } => "NonFiniteCoefficient",
            Error::TooCoarse { .. } => "TooCoarse",
            Error::NonMonotoneStencil { .. } => "NonMonotoneStencil",
            Error::NotIrreducible => "NotIrreducible",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::SingularShift { .. } => "SingularShift",
            Error::NonPositiveTestFunction { .. } => "NonPositiveTestFunction",
            Error::NotSupercritical { .. } => "NotSupercritical",
            Error::LinearSolveFailure(_) => "LinearSolveFailure",
            Error::ExcessTruncation { .. } => "ExcessTruncation",
            Error::MinimaxNoConvergence { .. } => "MinimaxNoConvergence",
        }
    }
}
