//! Monotone finite-difference assembly.
//!
//! For every control `u_k` the frozen linear operator
//! `a^{ij} ∂_ij + b^i(·,u_k) ∂_i + c(·,u_k)` becomes a sparse matrix `M_k`
//! over the interior nodes:
//!
//! * `a^{ii} ∂_ii`: central second differences,
//! * `a^{ij} ∂_ij` (i ≠ j): the seven-point splitting that keeps off-diagonal
//!   weights nonnegative, which needs `a^{ii} ≥ Σ_{j≠i} |a^{ij}|`,
//! * `b^i ∂_i`: first-order upwinding (forward where `b^i > 0`, backward
//!   where `b^i < 0`),
//! * `c`: added to the diagonal.
//!
//! Couplings to ghost nodes are dropped from `M_k` (zero Dirichlet data) but
//! kept on the side so that test functions with nonzero boundary values can
//! still be applied.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, Neighbor};
use crate::model::{ControlSet, OperatorSpec, Sense};
use crate::sparse::CsrMatrix;

/// One control index per interior node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn constant(n: usize, k: usize) -> Self {
        Self(vec![k; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Weight of a ghost node in an interior row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GhostCoupling {
    pub row: usize,
    pub point: [f64; 3],
    pub coeff: f64,
}

#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid,
    sense: Sense,
    controls: ControlSet,
    matrices: Vec<CsrMatrix>,
    ghosts: Vec<Vec<GhostCoupling>>,
    shift: f64,
}

/// Assembles one Metzler matrix per control on `grid`.
pub fn assemble(spec: &OperatorSpec, grid: &Grid) -> Result<DiscreteOperator> {
    if spec.dim() != grid.dim() {
        return Err(Error::InvalidArgument(alloc::format!(
            "spec dimension {} does not match grid dimension {}",
            spec.dim(),
            grid.dim()
        )));
    }
    let d = spec.dim();
    let n = grid.len();
    let h = grid.h();
    let h2 = h * h;
    let controls = spec.controls();
    let kk = controls.len();

    // a(x) is control independent
    let mut diff = vec![0.0; n * d * d];
    for node in 0..n {
        let x = grid.coords(node);
        let a = &mut diff[node * d * d..(node + 1) * d * d];
        spec.diffusion_at(&x[..d], a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoefficient { point: x[..d].to_vec() });
        }
        for i in 0..d {
            let off: f64 = (0..d).filter(|&j| j != i).map(|j| a[i * d + j].abs()).sum();
            if a[i * d + i] < off || a[i * d + i] <= 0.0 {
                return Err(Error::NonMonotoneStencil {
                    node,
                    point: x[..d].to_vec(),
                });
            }
        }
    }

    let mut matrices = Vec::with_capacity(kk);
    let mut ghosts = Vec::with_capacity(kk);
    let mut b = vec![0.0; d];
    for k in 0..kk {
        let u = controls.point(k);
        let mut rows = Vec::with_capacity(n);
        let mut gh: Vec<GhostCoupling> = Vec::new();
        for node in 0..n {
            let x = grid.coords(node);
            let a = &diff[node * d * d..(node + 1) * d * d];
            spec.drift_at(&x[..d], u, &mut b);
            let c = spec.potential_at(&x[..d], u);
            if !c.is_finite() || b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteCoefficient { point: x[..d].to_vec() });
            }
            let mut center = c;
            let mut entries: Vec<([i64; 3], f64)> = Vec::with_capacity(2 * d + 4 * d * d);
            let mut push = |off: [i64; 3], w: f64| {
                if w != 0.0 {
                    entries.push((off, w));
                }
            };
            for i in 0..d {
                let mut plus = [0i64; 3];
                plus[i] = 1;
                let mut minus = [0i64; 3];
                minus[i] = -1;
                let aii = a[i * d + i] / h2;
                center -= 2.0 * aii;
                push(plus, aii);
                push(minus, aii);
                let bi = b[i];
                if bi > 0.0 {
                    push(plus, bi / h);
                    center -= bi / h;
                } else if bi < 0.0 {
                    push(minus, -bi / h);
                    center += bi / h;
                }
                for j in i + 1..d {
                    let aij = 0.5 * (a[i * d + j] + a[j * d + i]);
                    if aij == 0.0 {
                        continue;
                    }
                    let t = aij.abs() / h2;
                    let s = if aij > 0.0 { 1 } else { -1 };
                    let mut dpp = [0i64; 3];
                    dpp[i] = 1;
                    dpp[j] = s;
                    let mut dmm = [0i64; 3];
                    dmm[i] = -1;
                    dmm[j] = -s;
                    push(dpp, t);
                    push(dmm, t);
                    let mut pj = [0i64; 3];
                    pj[j] = 1;
                    let mut mj = [0i64; 3];
                    mj[j] = -1;
                    push(plus, -t);
                    push(minus, -t);
                    push(pj, -t);
                    push(mj, -t);
                    center += 2.0 * t;
                }
            }
            let mut row = Vec::with_capacity(entries.len() + 1);
            row.push((node, center));
            for (off, w) in entries {
                match grid.neighbor(node, off) {
                    Neighbor::Interior(m) => row.push((m, w)),
                    Neighbor::Ghost(kidx) => {
                        let point = grid.point_of(&kidx);
                        match gh.iter_mut().rev().take_while(|g| g.row == node).find(|g| g.point == point) {
                            Some(g) => g.coeff += w,
                            None => gh.push(GhostCoupling {
                                row: node,
                                point,
                                coeff: w,
                            }),
                        }
                    }
                }
            }
            rows.push(row);
        }
        let m = CsrMatrix::from_rows(rows);
        if let Some((i, _, _)) = m.metzler_violation() {
            let x = grid.coords(i);
            return Err(Error::NonMonotoneStencil {
                node: i,
                point: x[..d].to_vec(),
            });
        }
        if !m.is_irreducible() {
            return Err(Error::NotIrreducible);
        }
        gh.retain(|g| g.coeff != 0.0);
        matrices.push(m);
        ghosts.push(gh);
    }

    let shift = 1.0
        + matrices
            .iter()
            .flat_map(|m| m.diagonal())
            .fold(0.0, |acc: f64, v| acc.max(v.abs()));

    Ok(DiscreteOperator {
        grid: grid.clone(),
        sense: spec.sense(),
        controls: controls.clone(),
        matrices,
        ghosts,
        shift,
    })
}

impl DiscreteOperator {
    /// Wraps explicit Metzler matrices (one per control) on `grid`.
    pub fn from_matrices(grid: Grid, sense: Sense, matrices: Vec<CsrMatrix>) -> Result<Self> {
        if matrices.is_empty() || matrices.iter().any(|m| m.n() != grid.len()) {
            return Err(Error::InvalidArgument("matrix sizes must match the grid".into()));
        }
        if matrices.iter().any(|m| !m.is_metzler()) {
            return Err(Error::InvalidArgument("matrices must be Metzler".into()));
        }
        let controls = ControlSet::new(
            1,
            (0..matrices.len()).map(|k| vec![k as f64]).collect(),
        )?;
        let shift = 1.0
            + matrices
                .iter()
                .flat_map(|m| m.diagonal())
                .fold(0.0, |acc: f64, v| acc.max(v.abs()));
        let ghosts = vec![Vec::new(); matrices.len()];
        Ok(Self {
            grid,
            sense,
            controls,
            matrices,
            ghosts,
            shift,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    /// Same matrices, other sense.
    pub fn with_sense(&self, sense: Sense) -> Self {
        Self {
            sense,
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn n_controls(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, k: usize) -> &CsrMatrix {
        &self.matrices[k]
    }

    pub fn matrices(&self) -> &[CsrMatrix] {
        &self.matrices
    }

    pub fn ghost_couplings(&self, k: usize) -> &[GhostCoupling] {
        &self.ghosts[k]
    }

    /// `1 + max |diagonal|` over all controls.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    fn optimize(&self, psi: &[f64], extra: Option<&[Vec<f64>]>) -> (GridFunction, Policy) {
        let n = self.n();
        let mut best = vec![0.0; n];
        let mut arg = vec![0usize; n];
        for (k, m) in self.matrices.iter().enumerate() {
            for i in 0..n {
                let mut v = m.row_dot(i, psi);
                if let Some(e) = extra {
                    v += e[k][i];
                }
                if k == 0 || self.sense.improves(v, best[i]) {
                    best[i] = v;
                    arg[i] = k;
                }
            }
        }
        (best.into(), Policy(arg))
    }

    /// `(opt_k M_k ψ)_i` node-wise, `opt` = min or max by sense.
    pub fn apply_nonlinear(&self, psi: &[f64]) -> GridFunction {
        self.optimize(psi, None).0
    }

    /// As [`apply_nonlinear`](Self::apply_nonlinear) with nonzero ghost
    /// values `g(point)` instead of the Dirichlet zero.
    pub fn apply_with_boundary(&self, psi: &[f64], g: impl Fn(&[f64]) -> f64) -> GridFunction {
        let extra = self.boundary_terms(g);
        self.optimize(psi, Some(&extra)).0
    }

    /// Per control and row, `Σ coeff · g(ghost)`.
    pub fn boundary_terms(&self, g: impl Fn(&[f64]) -> f64) -> Vec<Vec<f64>> {
        let d = self.grid.dim();
        self.ghosts
            .iter()
            .map(|gh| {
                let mut e = vec![0.0; self.n()];
                for c in gh {
                    e[c.row] += c.coeff * g(&c.point[..d]);
                }
                e
            })
            .collect()
    }

    /// Node-wise optimal control index for `ψ`; ties go to the lowest index.
    pub fn select_policy(&self, psi: &[f64]) -> Policy {
        self.optimize(psi, None).1
    }

    /// Applies the linear operator of a frozen policy.
    pub fn apply_policy(&self, policy: &Policy, psi: &[f64]) -> GridFunction {
        (0..self.n())
            .map(|i| self.matrices[policy.0[i]].row_dot(i, psi))
            .collect()
    }

    /// Matrix whose row `i` is row `i` of `M_{policy(i)}`.
    pub fn frozen(&self, policy: &Policy) -> CsrMatrix {
        let rows = (0..self.n())
            .map(|i| self.matrices[policy.0[i]].row(i).collect())
            .collect();
        CsrMatrix::from_rows(rows)
    }

    /// Rounding scale of `(M_k ψ)_i`: `max_k Σ_j |M_k,ij ψ_j|`.
    pub fn row_scale(&self, psi: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                self.matrices
                    .iter()
                    .map(|m| m.row_abs_dot(i, psi))
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Node-wise optimal control for `ψ` (free-function form).
pub fn select_policy(opr: &DiscreteOperator, psi: &[f64]) -> Policy {
    opr.select_policy(psi)
}

/// Node-wise `opt_k (M_k ψ)` (free-function form).
pub fn apply_nonlinear(opr: &DiscreteOperator, psi: &[f64]) -> GridFunction {
    opr.apply_nonlinear(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::grid::{build_grid, Shape};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn e(s: &str) -> crate::Expr {
        parse_expr(s).unwrap()
    }

    fn spec1d(a: &str, b: &str, c: &str) -> OperatorSpec {
        OperatorSpec::uncontrolled_1d(e(a), e(b), e(c)).unwrap()
    }

    fn controlled_drift(sense: Sense) -> OperatorSpec {
        OperatorSpec::new(
            1,
            vec![e("1")],
            vec![e("u0")],
            e("0"),
            sense,
            ControlSet::scalar(&[1.0, -1.0]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn laplacian_stencil() {
        let h = 0.25;
        let g = build_grid(1, 1.0, h, Shape::Box).unwrap();
        let op = assemble(&spec1d("1", "0", "0"), &g).unwrap();
        let m = op.matrix(0);
        let i = g.anchor();
        assert_eq!(m.get(i, i), -2.0 / (h * h));
        assert_eq!(m.get(i, i - 1), 1.0 / (h * h));
        assert_eq!(m.get(i, i + 1), 1.0 / (h * h));
        assert_eq!(op.shift(), 1.0 + 2.0 / (h * h));
    }

    #[test]
    fn upwind_stencil_for_negative_drift() {
        let h = 0.25;
        let g = build_grid(1, 1.0, h, Shape::Box).unwrap();
        let op = assemble(&spec1d("1", "-1", "0"), &g).unwrap();
        let m = op.matrix(0);
        let i = g.anchor();
        assert_eq!(m.get(i, i - 1), 1.0 / (h * h) + 1.0 / h);
        assert_eq!(m.get(i, i + 1), 1.0 / (h * h));
        assert_eq!(m.get(i, i), -2.0 / (h * h) - 1.0 / h);
    }

    #[test]
    fn constant_potential_moves_diagonal_only() {
        let g = build_grid(1, 1.0, 0.25, Shape::Box).unwrap();
        let base = assemble(&spec1d("1", "x0", "0"), &g).unwrap();
        let shifted = assemble(&spec1d("1", "x0", "5"), &g).unwrap();
        let (a, b) = (base.matrix(0).to_dense(), shifted.matrix(0).to_dense());
        let n = g.len();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j { a[i * n + j] + 5.0 } else { a[i * n + j] };
                assert_eq!(b[i * n + j], expect);
            }
        }
    }

    #[test]
    fn single_control_is_matvec() {
        let g = build_grid(1, 1.0, 0.25, Shape::Box).unwrap();
        let op = assemble(&spec1d("1", "x0", "cos(x0)"), &g).unwrap();
        let psi: Vec<f64> = (0..g.len()).map(|i| 1.0 + i as f64 * 0.3).collect();
        assert_eq!(op.apply_nonlinear(&psi).to_vec(), op.matrix(0).mul_vec(&psi));
        assert_eq!(op.select_policy(&psi), Policy::constant(g.len(), 0));
    }

    #[test]
    fn constant_function_sees_potential_and_boundary_loss() {
        // three nodes -0.5, 0, 0.5 with h = 0.5; c(x,u) = x0 + u0, u ∈ {0, 1}
        let spec = OperatorSpec::new(
            1,
            vec![e("1")],
            vec![e("u0")],
            e("x0 + u0"),
            Sense::Min,
            ControlSet::scalar(&[0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let g = build_grid(1, 1.0, 0.5, Shape::Box).unwrap();
        let op = assemble(&spec, &g).unwrap();
        let out = op.apply_nonlinear(&[1.0, 1.0, 1.0]);
        // interior node: min_u c = 0; end nodes lose the ghost weight 1/h^2 = 4
        // (u = 1 also loses its upwind weight 1/h = 2 at the right end)
        assert_eq!(out[1], 0.0);
        assert_eq!(out[0], -0.5 - 4.0);
        assert_eq!(out[2], (0.5 - 4.0f64).min(1.5 - 4.0 - 2.0));
    }

    #[test]
    fn min_sense_subtracts_absolute_upwind_gradient() {
        let h = 0.2;
        let g = build_grid(1, 0.6, h, Shape::Box).unwrap();
        assert_eq!(g.len(), 5);
        let op = assemble(&controlled_drift(Sense::Min), &g).unwrap();
        let psi = [0.3, 1.0, 0.2, 0.9, 0.5];
        let out = op.apply_nonlinear(&psi);
        let at = |j: isize| -> f64 {
            if j < 0 || j >= 5 {
                0.0
            } else {
                psi[j as usize]
            }
        };
        for i in 0..5isize {
            let lap = (at(i - 1) - 2.0 * at(i) + at(i + 1)) / (h * h);
            let fwd = (at(i + 1) - at(i)) / h;
            let bwd = (at(i) - at(i - 1)) / h;
            // u = +1 uses the forward difference, u = -1 the backward one
            let expect = lap + fwd.min(-bwd);
            assert_relative_eq!(out[i as usize], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn increasing_function_selects_negative_control() {
        let g = build_grid(1, 1.0, 0.25, Shape::Box).unwrap();
        let op = assemble(&controlled_drift(Sense::Min), &g).unwrap();
        let psi: Vec<f64> = (0..g.len()).map(|i| 1.0 + i as f64).collect();
        let p = op.select_policy(&psi);
        // interior nodes: u = -1 (index 1); at the right end the ghost zero
        // makes the forward difference negative
        let n = g.len();
        assert!(p.0[..n - 1].iter().all(|&k| k == 1));
        assert_eq!(p.0[n - 1], 0);
    }

    #[test]
    fn exact_tie_selects_lowest_index() {
        let spec = OperatorSpec::new(
            1,
            vec![e("1")],
            vec![e("0")],
            e("u0 * 0"),
            Sense::Min,
            ControlSet::scalar(&[3.0, -3.0]).unwrap(),
        )
        .unwrap();
        let g = build_grid(1, 1.0, 0.25, Shape::Box).unwrap();
        let op = assemble(&spec, &g).unwrap();
        let p = op.select_policy(&vec![1.0; g.len()]);
        assert!(p.0.iter().all(|&k| k == 0));
    }

    #[test]
    fn cross_diffusion_within_dominance_is_metzler() {
        let spec = OperatorSpec::new(
            2,
            vec![e("1"), e("0.5"), e("0.5"), e("1")],
            vec![e("0"), e("0")],
            e("0"),
            Sense::Min,
            ControlSet::uncontrolled(),
        )
        .unwrap();
        let g = build_grid(2, 1.0, 0.25, Shape::Box).unwrap();
        let op = assemble(&spec, &g).unwrap();
        assert!(op.matrix(0).is_metzler());
        // exact on x0*x1 at interior nodes away from the boundary
        let psi = g.sample(|x| x[0] * x[1]);
        let out = op.apply_nonlinear(&psi);
        assert_relative_eq!(out[g.anchor()], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn excessive_cross_diffusion_is_rejected() {
        let spec = OperatorSpec::new(
            2,
            vec![e("1"), e("1.5"), e("1.5"), e("3")],
            vec![e("0"), e("0")],
            e("0"),
            Sense::Min,
            ControlSet::uncontrolled(),
        )
        .unwrap();
        let g = build_grid(2, 1.0, 0.25, Shape::Box).unwrap();
        assert!(matches!(
            assemble(&spec, &g),
            Err(Error::NonMonotoneStencil { .. })
        ));
    }

    #[test]
    fn first_order_consistency_on_cosine() {
        // L psi = psi'' + x psi' + sin(x) psi for psi = cos(x)
        let spec = spec1d("1", "x0", "sin(x0)");
        let exact = |x: f64| -x.cos() - x * x.sin() + x.sin() * x.cos();
        let mut errs = Vec::new();
        for &h in &[0.02, 0.01, 0.005] {
            let g = build_grid(1, 2.0, h, Shape::Box).unwrap();
            let op = assemble(&spec, &g).unwrap();
            let psi = g.sample(|x| x[0].cos());
            let out = op.apply_nonlinear(&psi);
            let err = (0..g.len())
                .filter(|&i| g.coords(i)[0].abs() < 1.5)
                .map(|i| (out[i] - exact(g.coords(i)[0])).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 1.8 && errs[0] / errs[1] < 2.2, "{errs:?}");
        assert!(errs[1] / errs[2] > 1.8 && errs[1] / errs[2] < 2.2, "{errs:?}");
    }

    proptest! {
        #[test]
        fn min_application_is_concave_and_homogeneous(
            f in proptest::collection::vec(0.01f64..10.0, 9),
            g in proptest::collection::vec(0.01f64..10.0, 9),
            t in 0.01f64..100.0,
        ) {
            let grid = build_grid(1, 1.0, 0.2, Shape::Box).unwrap();
            let op = assemble(&controlled_drift(Sense::Min), &grid).unwrap();
            let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
            let (af, ag, asum) = (op.apply_nonlinear(&f), op.apply_nonlinear(&g), op.apply_nonlinear(&sum));
            let scale = op.row_scale(&sum);
            for i in 0..9 {
                prop_assert!(asum[i] >= af[i] + ag[i] - 8.0 * f64::EPSILON * scale[i]);
            }
            let scaled: Vec<f64> = f.iter().map(|v| v * t).collect();
            let at = op.apply_nonlinear(&scaled);
            let sf = op.row_scale(&scaled);
            for i in 0..9 {
                prop_assert!((at[i] - t * af[i]).abs() <= 8.0 * f64::EPSILON * sf[i]);
            }
            let opmax = op.with_sense(Sense::Max);
            let (mf, mg, msum) = (opmax.apply_nonlinear(&f), opmax.apply_nonlinear(&g), opmax.apply_nonlinear(&sum));
            for i in 0..9 {
                prop_assert!(msum[i] <= mf[i] + mg[i] + 8.0 * f64::EPSILON * scale[i]);
            }
        }
    }
}
