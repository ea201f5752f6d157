//! Compressed sparse rows and a banded LU factorization.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!(c < n);
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn from_dense(n: usize, dense: &[f64]) -> Self {
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| dense[i * n + j] != 0.0 || i == j)
                    .map(|j| (j, dense[i * n + j]))
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[i * self.n + j] += v;
            }
        }
        d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|&(c, _)| c == j).map(|(_, v)| v).sum()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            s += self.vals[k] * x[self.cols[k]];
        }
        s
    }

    /// `Σ_j |a_ij| |x_j|`, the rounding scale of `row_dot`.
    pub fn row_abs_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            s += (self.vals[k] * x[self.cols[k]]).abs();
        }
        s
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            *yi = self.row_dot(i, x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// First off-diagonal negative entry, if any.
    pub fn metzler_violation(&self) -> Option<(usize, usize, f64)> {
        (0..self.n).find_map(|i| {
            self.row(i)
                .find(|&(j, v)| j != i && v < 0.0)
                .map(|(j, v)| (i, j, v))
        })
    }

    pub fn is_metzler(&self) -> bool {
        self.metzler_violation().is_none()
    }

    /// Strong connectivity of the graph of positive off-diagonal entries.
    pub fn is_irreducible(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let reach = |transpose: bool| -> bool {
            let mut adj = vec![Vec::new(); self.n];
            for i in 0..self.n {
                for (j, v) in self.row(i) {
                    if i != j && v != 0.0 {
                        if transpose {
                            adj[j].push(i);
                        } else {
                            adj[i].push(j);
                        }
                    }
                }
            }
            let mut seen = vec![false; self.n];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            let mut count = 1;
            while let Some(i) = queue.pop_front() {
                for &j in &adj[i] {
                    if !seen[j] {
                        seen[j] = true;
                        count += 1;
                        queue.push_back(j);
                    }
                }
            }
            count == self.n
        };
        reach(false) && reach(true)
    }

    /// Largest row sum and largest absolute row sum.
    pub fn row_sum_bounds(&self) -> (f64, f64) {
        (0..self.n).fold((f64::NEG_INFINITY, 0.0), |(s, a), i| {
            let (rs, ra) = self
                .row(i)
                .fold((0.0, 0.0), |(rs, ra), (_, v)| (rs + v, ra + v.abs()));
            (s.max(rs), a.max(ra))
        })
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if v == 0.0 {
                    continue;
                }
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    /// `sigma·I - self`.
    pub fn shifted_negation(&self, sigma: f64) -> CsrMatrix {
        let rows = (0..self.n)
            .map(|i| {
                let mut r: Vec<(usize, f64)> = self.row(i).map(|(j, v)| (j, -v)).collect();
                r.push((i, sigma));
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }
}

/// LU factorization with partial pivoting of a banded matrix.
///
/// Storage follows the LAPACK `gbtrf` layout: each row keeps columns
/// `i - kl ..= i + ku + kl` so pivoting fill-in fits.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        Self::build(a, false)
    }

    /// Like [`factor`](Self::factor), but a vanishing pivot is replaced by a
    /// tiny one of the same sign. Meant for inverse iteration, where a shift
    /// that hits an eigenvalue to working precision is harmless.
    pub fn factor_regularized(a: &CsrMatrix) -> Self {
        Self::build(a, true).expect("regularized factorization cannot fail")
    }

    fn build(a: &CsrMatrix, regularize: bool) -> Result<Self> {
        let (kl, ku) = a.bandwidths();
        let n = a.n();
        let width = 2 * kl + ku + 1;
        let mut band = vec![0.0; n * width];
        let mut scale = 0.0f64;
        for i in 0..n {
            for (j, v) in a.row(i) {
                band[i * width + j + kl - i] += v;
                scale = scale.max(v.abs());
            }
        }
        let mut lu = Self {
            n,
            kl,
            ku,
            width,
            band,
            pivots: vec![0; n],
        };
        lu.eliminate(scale, regularize)?;
        Ok(lu)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width + j + self.kl - i
    }

    fn eliminate(&mut self, scale: f64, regularize: bool) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let tiny = scale * f64::EPSILON * 1e-3;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.band[self.at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.band[self.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                if regularize && best.is_finite() {
                    let at = self.at(p, k);
                    let v = self.band[at];
                    self.band[at] = if v < 0.0 { -tiny } else { tiny };
                } else {
                    return Err(Error::LinearSolveFailure(alloc::format!(
                        "zero pivot in column {k}"
                    )));
                }
            }
            self.pivots[k] = p;
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.at(k, j), self.at(p, j));
                    self.band.swap(a, b);
                }
            }
            let pivot = self.band[self.at(k, k)];
            for i in k + 1..=last_row {
                let lik = self.band[self.at(i, k)] / pivot;
                if lik == 0.0 {
                    continue;
                }
                let at_ik = self.at(i, k);
                self.band[at_ik] = lik;
                for j in k + 1..=last_col {
                    let ukj = self.band[self.at(k, j)];
                    let at_ij = self.at(i, j);
                    self.band[at_ij] -= lik * ukj;
                }
            }
        }
        Ok(())
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.band[self.at(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.band[self.at(k, j)] * b[j];
            }
            b[k] = s / self.band[self.at(k, k)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
