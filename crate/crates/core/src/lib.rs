//! Principal eigenvalues of linear and semilinear (HJB-type) elliptic operators.
//!
//! The crate is `no_std` and only needs `alloc`. It covers the full numeric
//! pipeline:
//!
//! * [`expr`] and [`model`]: a small expression language for coefficient
//!   fields and the validated operator description built from it,
//! * [`grid`] and [`discretize`]: tensor grids with Dirichlet elimination and
//!   a monotone (upwind) finite-difference assembly, one Metzler matrix per
//!   control,
//! * [`perron`]: the Perron eigenpair of a Metzler matrix and matrix-level
//!   Collatz-Wielandt bounds,
//! * [`hjb`]: Howard policy iteration for `min`/`max` operators, the
//!   supercritical source construction and the potential cutoff,
//! * [`exhaust`]: Dirichlet eigenvalues on growing domains and Lyapunov drift
//!   checks,
//! * [`certify`]: Collatz-Wielandt certificates, the measure-side minimax and
//!   maximum-principle checkers,
//! * [`mc`]: Euler-Maruyama path simulation and Feynman-Kac estimators.
//!
//! IO, file formats and parallel drivers live in the `eigenflow` crate.
#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod certify;
pub mod discretize;
pub mod error;
pub mod exhaust;
pub mod expr;
pub mod grid;
pub mod hjb;
mod jet;
pub mod mc;
pub mod model;
pub mod perron;
pub mod sparse;

pub use error::{Error, Result};
pub use expr::{parse_expr, Expr};
pub use grid::{Grid, GridFunction, Shape};
pub use model::{ControlSet, LyapunovSpec, OperatorSpec, Sense};
