//! Uniform tensor grids with Dirichlet elimination.
//!
//! Nodes sit at `k·h` for integer multi-indices `k`, symmetric about the
//! origin. Interior nodes are those strictly inside the domain; the lattice
//! carries one extra layer of ghost nodes around them where the Dirichlet
//! data (zero) lives.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// `(-R, R)^d`.
    Box,
    /// `{|x| < R}`, rasterized on the lattice.
    Ball,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Neighbor {
    Interior(usize),
    /// Ghost node at the given lattice multi-index.
    Ghost([i64; 3]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    h: f64,
    shape: Shape,
    /// Largest interior index along an axis.
    k_max: i64,
    /// Lattice points per axis, ghost layer included.
    side: i64,
    lattice: Vec<u32>,
    nodes: Vec<[i64; 3]>,
    anchor: usize,
}

/// Builds the grid of `shape` with half-width `half_width` and spacing `h`.
pub fn build_grid(dim: usize, half_width: f64, h: f64, shape: Shape) -> Result<Grid> {
    Grid::new(dim, half_width, h, shape)
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, h: f64, shape: Shape) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidArgument(alloc::format!("dimension {dim} not in 1..=3")));
        }
        if !(h > 0.0 && half_width > h) || !half_width.is_finite() {
            return Err(Error::InvalidArgument(alloc::format!(
                "need R > h > 0, got R = {half_width}, h = {h}"
            )));
        }
        let ratio = half_width / h;
        if ratio < 2.0 - 1e-12 {
            return Err(Error::TooCoarse { ratio });
        }
        let k_max = ((ratio - 1e-9).ceil() as i64 - 1).max(1);
        let side = 2 * k_max + 3;
        let total = side.pow(dim as u32) as usize;
        let mut lattice = vec![NONE; total];
        let mut nodes = Vec::new();
        let r2 = half_width * half_width * (1.0 - 1e-12);
        let mut k = [0i64; 3];
        for lin in 0..total {
            let mut rem = lin as i64;
            for ax in 0..dim {
                k[ax] = rem % side - (k_max + 1);
                rem /= side;
            }
            let inside_box = k[..dim].iter().all(|&ki| ki.abs() <= k_max);
            let inside = inside_box
                && match shape {
                    Shape::Box => true,
                    Shape::Ball => {
                        let s: f64 = k[..dim].iter().map(|&ki| (ki * ki) as f64).sum();
                        s * h * h < r2
                    }
                };
            if inside {
                lattice[lin] = nodes.len() as u32;
                nodes.push(k);
            }
        }
        let origin = [0i64; 3];
        let anchor = nodes
            .iter()
            .position(|n| *n == origin)
            .ok_or(Error::TooCoarse { ratio })?;
        Ok(Self {
            dim,
            half_width,
            h,
            shape,
            k_max,
            side,
            lattice,
            nodes,
            anchor,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Interior node count `N`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node nearest the origin (the origin itself).
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn multi_index(&self, node: usize) -> [i64; 3] {
        self.nodes[node]
    }

    pub fn point_of(&self, k: &[i64; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for ax in 0..self.dim {
            x[ax] = k[ax] as f64 * self.h;
        }
        x
    }

    /// Coordinates of interior node `node` (unused axes are zero).
    pub fn coords(&self, node: usize) -> [f64; 3] {
        self.point_of(&self.nodes[node])
    }

    pub fn norm(&self, node: usize) -> f64 {
        let x = self.coords(node);
        x[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn lattice_lookup(&self, k: &[i64; 3]) -> Option<u32> {
        let mut lin = 0i64;
        let mut stride = 1i64;
        for ax in 0..self.dim {
            let s = k[ax] + self.k_max + 1;
            if s < 0 || s >= self.side {
                return None;
            }
            lin += s * stride;
            stride *= self.side;
        }
        Some(self.lattice[lin as usize])
    }

    /// Interior id of a lattice multi-index, if it is an interior node.
    pub fn id_of(&self, k: &[i64; 3]) -> Option<usize> {
        match self.lattice_lookup(k) {
            Some(id) if id != NONE => Some(id as usize),
            _ => None,
        }
    }

    /// Neighbor of `node` at lattice offset `offset`.
    pub fn neighbor(&self, node: usize, offset: [i64; 3]) -> Neighbor {
        let mut k = self.nodes[node];
        for ax in 0..self.dim {
            k[ax] += offset[ax];
        }
        match self.id_of(&k) {
            Some(id) => Neighbor::Interior(id),
            None => Neighbor::Ghost(k),
        }
    }

    /// Interior nodes with at least one axis neighbor outside the interior.
    pub fn outer_shell(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&n| {
                (0..self.dim).any(|ax| {
                    [-1i64, 1].iter().any(|&s| {
                        let mut off = [0i64; 3];
                        off[ax] = s;
                        matches!(self.neighbor(n, off), Neighbor::Ghost(_))
                    })
                })
            })
            .collect()
    }

    /// Multilinear interpolation of interior values `f`; non-interior corners
    /// carry the Dirichlet value zero.
    pub fn interpolate(&self, f: &[f64], x: &[f64]) -> f64 {
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for ax in 0..self.dim {
            let t = x[ax] / self.h;
            let fl = t.floor();
            base[ax] = fl as i64;
            frac[ax] = t - fl;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut k = base;
            let mut w = 1.0;
            for ax in 0..self.dim {
                if corner >> ax & 1 == 1 {
                    k[ax] += 1;
                    w *= frac[ax];
                } else {
                    w *= 1.0 - frac[ax];
                }
            }
            if w != 0.0 {
                if let Some(id) = self.id_of(&k) {
                    acc += w * f[id];
                }
            }
        }
        acc
    }

    /// Interior node closest to `x` (ties resolved toward the origin).
    pub fn nearest_interior(&self, x: &[f64]) -> usize {
        let mut k = [0i64; 3];
        for ax in 0..self.dim {
            k[ax] = (x[ax] / self.h).round() as i64;
            k[ax] = k[ax].clamp(-self.k_max, self.k_max);
        }
        loop {
            if let Some(id) = self.id_of(&k) {
                return id;
            }
            // pull the farthest coordinate one step toward the origin
            let ax = (0..self.dim).max_by_key(|&ax| k[ax].abs()).unwrap_or(0);
            k[ax] -= k[ax].signum();
        }
    }

    /// Evaluates `f` at every interior node.
    pub fn sample(&self, mut f: impl FnMut(&[f64]) -> f64) -> GridFunction {
        (0..self.len())
            .map(|n| f(&self.coords(n)[..self.dim]))
            .collect::<Vec<_>>()
            .into()
    }

    /// Bandwidth of the natural ordering: largest `|id(neighbor) - id|` over
    /// the 3^d stencil.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for n in 0..self.len() {
            for off in stencil_offsets(self.dim) {
                if let Neighbor::Interior(m) = self.neighbor(n, off) {
                    bw = bw.max(m.abs_diff(n));
                }
            }
        }
        bw
    }

    /// Keeps only interior nodes satisfying `keep`, preserving spacing,
    /// shape tag and anchor. Used to build nested subdomains.
    pub fn restrict(&self, mut keep: impl FnMut(&[f64]) -> bool) -> Result<Grid> {
        let mut g = self.clone();
        g.lattice.iter_mut().for_each(|v| *v = NONE);
        g.nodes.clear();
        for n in 0..self.len() {
            let k = self.nodes[n];
            if keep(&self.point_of(&k)[..self.dim]) || n == self.anchor {
                let lin = self.linear(&k);
                g.lattice[lin] = g.nodes.len() as u32;
                g.nodes.push(k);
            }
        }
        g.anchor = g.id_of(&[0; 3]).ok_or(Error::InvalidArgument("origin removed".into()))?;
        Ok(g)
    }

    fn linear(&self, k: &[i64; 3]) -> usize {
        let mut lin = 0i64;
        let mut stride = 1i64;
        for ax in 0..self.dim {
            lin += (k[ax] + self.k_max + 1) * stride;
            stride *= self.side;
        }
        lin as usize
    }
}

/// All offsets in `{-1,0,1}^d` except zero.
pub fn stencil_offsets(dim: usize) -> impl Iterator<Item = [i64; 3]> {
    let count = 3usize.pow(dim as u32);
    (0..count).filter_map(move |mut c| {
        let mut off = [0i64; 3];
        for o in off.iter_mut().take(dim) {
            *o = (c % 3) as i64 - 1;
            c /= 3;
        }
        (off != [0; 3]).then_some(off)
    })
}

/// One real value per interior node.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridFunction {
    values: Vec<f64>,
}

impl GridFunction {
    pub fn constant(n: usize, v: f64) -> Self {
        Self { values: vec![v; n] }
    }

    pub fn is_positive(&self) -> bool {
        self.values.iter().all(|&v| v > 0.0)
    }

    /// First node that is not strictly positive.
    pub fn first_nonpositive(&self) -> Option<(usize, f64)> {
        self.values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0))
            .map(|(i, &v)| (i, v))
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, t: f64) {
        self.values.iter_mut().for_each(|v| *v *= t);
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl From<Vec<f64>> for GridFunction {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

impl FromIterator<f64> for GridFunction {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

impl Deref for GridFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for GridFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_box() {
        let g = build_grid(1, 1.0, 0.5, Shape::Box).unwrap();
        assert_eq!(g.len(), 3);
        let xs: Vec<f64> = (0..3).map(|n| g.coords(n)[0]).collect();
        assert_eq!(xs, vec![-0.5, 0.0, 0.5]);
        assert_eq!(g.coords(g.anchor())[0], 0.0);
    }

    #[test]
    fn two_dimensional_ball_counts_nine() {
        let g = build_grid(2, 1.0, 0.5, Shape::Ball).unwrap();
        assert_eq!(g.len(), 9);
        let g = build_grid(2, 1.0, 0.25, Shape::Ball).unwrap();
        // nodes (i, j)/4 with i^2 + j^2 < 16
        let expected = (-3i64..=3)
            .flat_map(|i| (-3i64..=3).map(move |j| (i, j)))
            .filter(|(i, j)| i * i + j * j < 16)
            .count();
        assert_eq!(g.len(), expected);
    }

    #[test]
    fn too_coarse_is_rejected() {
        assert!(matches!(
            build_grid(1, 1.0, 0.6, Shape::Box),
            Err(Error::TooCoarse { .. })
        ));
        assert!(build_grid(1, 1.0, 1.5, Shape::Box).is_err());
        assert!(build_grid(1, 1.0, 0.0, Shape::Box).is_err());
    }

    #[test]
    fn neighbors_and_ghosts() {
        let g = build_grid(1, 1.0, 0.5, Shape::Box).unwrap();
        assert_eq!(g.neighbor(1, [1, 0, 0]), Neighbor::Interior(2));
        assert_eq!(g.neighbor(2, [1, 0, 0]), Neighbor::Ghost([2, 0, 0]));
        assert_eq!(g.outer_shell(), vec![0, 2]);
    }

    #[test]
    fn interpolation_is_exact_for_linear_data_inside() {
        let g = build_grid(2, 2.0, 0.5, Shape::Box).unwrap();
        let f = g.sample(|x| 1.0 + 2.0 * x[0] - x[1]);
        let v = g.interpolate(&f, &[0.3, -0.7]);
        assert!((v - (1.0 + 0.6 + 0.7)).abs() < 1e-12);
        // outside the lattice the Dirichlet value is zero
        assert_eq!(g.interpolate(&f, &[5.0, 0.0]), 0.0);
    }

    #[test]
    fn nearest_interior_clamps_into_domain() {
        let g = build_grid(2, 1.0, 0.25, Shape::Ball).unwrap();
        let n = g.nearest_interior(&[3.0, 3.0]);
        assert!(g.norm(n) < 1.0);
        assert_eq!(g.nearest_interior(&[0.01, -0.02]), g.anchor());
    }

    #[test]
    fn restriction_keeps_anchor_and_spacing() {
        let g = build_grid(1, 2.0, 0.25, Shape::Box).unwrap();
        let r = g.restrict(|x| x[0].abs() < 1.0).unwrap();
        assert_eq!(r.len(), 7);
        assert_eq!(r.coords(r.anchor())[0], 0.0);
    }
}
