//! Unit-cube domain, uniform space-time grids and the dyadic meshes
//! `2^{-n} Z^{d+1}` restricted to a unit-height cylinder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("spatial dimension {0} unsupported (expected 1..={max})", max = Domain::MAX_DIM)]
    Dimension(usize),
    #[error("nx = {0}: at least 3 points per axis are required")]
    TooFewPoints(usize),
    #[error("time step {0} does not divide the unit window")]
    TimeStep(f64),
    #[error("window start {0} is not a finite nonnegative value")]
    WindowStart(f64),
    #[error("dyadic level {level} is finer than the grid resolution")]
    LevelTooFine { level: u32 },
    #[error("dyadic level {level} nodes do not coincide with grid nodes")]
    Misaligned { level: u32 },
}

/// The open cube `(0,1)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Domain {
    dim: usize,
}

impl Domain {
    pub const MAX_DIM: usize = 2;

    pub fn new(dim: usize) -> Result<Self, GridError> {
        if dim == 0 || dim > Self::MAX_DIM {
            return Err(GridError::Dimension(dim));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        1.0
    }
}

/// Node layout of a boundary-inclusive uniform grid on `[0,1]^d`.
///
/// Flat indices are row-major with the last axis fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SpatialGrid {
    dim: usize,
    nx: usize,
}

impl SpatialGrid {
    pub fn new(dim: usize, nx: usize) -> Self {
        Self { dim, nx }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn len(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn interior_len(&self) -> usize {
        (self.nx - 2).pow(self.dim as u32)
    }

    pub fn spacing<T: Real>(&self) -> T {
        T::one() / T::from_usize_exact(self.nx - 1)
    }

    pub fn index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.dim);
        multi.iter().fold(0, |acc, &i| acc * self.nx + i)
    }

    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        for slot in out.iter_mut().rev() {
            *slot = idx % self.nx;
            idx /= self.nx;
        }
        out
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.multi_index(idx)
            .iter()
            .any(|&i| i == 0 || i == self.nx - 1)
    }

    pub fn coords<T: Real>(&self, idx: usize) -> Vec<T> {
        let h = self.spacing::<T>();
        self.multi_index(idx)
            .into_iter()
            .map(|i| T::from_usize_exact(i) * h)
            .collect()
    }

    /// Flat indices of interior nodes, in increasing order.
    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Node closest to `x` (coordinates clamped into the cube).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let scale = (self.nx - 1) as f64;
        let multi: Vec<usize> = x
            .iter()
            .map(|&xi| (xi.clamp(0.0, 1.0) * scale).round() as usize)
            .collect();
        self.index(&multi)
    }

    /// Trapezoidal weight of a node: the volume of its dual cell, `h` per
    /// axis halved on boundary faces.
    pub fn quadrature_weight(&self, idx: usize) -> f64 {
        let h = 1.0 / (self.nx - 1) as f64;
        self.multi_index(idx)
            .into_iter()
            .map(|i| if i == 0 || i == self.nx - 1 { 0.5 * h } else { h })
            .product()
    }

    /// Discrete `L^p(Q)` norm with trapezoidal weights; `p = inf` gives the
    /// maximum norm.
    pub fn lp_norm<T: Real>(&self, v: ndarray::ArrayView1<T>, p: f64) -> f64 {
        if p.is_infinite() {
            return v.iter().fold(0.0, |m, x| m.max(x.to_f64_lossy().abs()));
        }
        let s: f64 = v
            .iter()
            .enumerate()
            .map(|(i, x)| self.quadrature_weight(i) * x.to_f64_lossy().abs().powf(p))
            .sum();
        s.powf(1.0 / p)
    }
}

/// Uniform grid over the cylinder `[0,1]^d x [t0, t0 + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid<T> {
    domain: Domain,
    nx: usize,
    dt: T,
    t0: T,
    steps_per_unit: usize,
}

impl<T: Real> SpaceTimeGrid<T> {
    pub fn new(domain: Domain, nx: usize, dt: T, t0: T) -> Result<Self, GridError> {
        if nx < 3 {
            return Err(GridError::TooFewPoints(nx));
        }
        let dtf = dt.to_f64_lossy();
        if !(dtf > 0.0 && dtf <= 1.0) {
            return Err(GridError::TimeStep(dtf));
        }
        let steps = (1.0 / dtf).round();
        // `dt` must divide 1 to within an ulp of the scalar type.
        let slack = T::epsilon() * T::lit(4.0);
        if ((T::lit(steps) * dt) - T::one()).abs() > slack {
            return Err(GridError::TimeStep(dtf));
        }
        let t0f = t0.to_f64_lossy();
        if !t0f.is_finite() || t0f < 0.0 {
            return Err(GridError::WindowStart(t0f));
        }
        Ok(Self {
            domain,
            nx,
            dt,
            t0,
            steps_per_unit: steps as usize,
        })
    }

    /// Same spatial and temporal resolution, window shifted to `[t0, t0 + 1]`.
    pub fn with_window(&self, t0: T) -> Result<Self, GridError> {
        Self::new(self.domain, self.nx, self.dt, t0)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn t1(&self) -> T {
        self.t0 + T::one()
    }

    pub fn h(&self) -> T {
        self.spatial().spacing()
    }

    pub fn steps_per_unit(&self) -> usize {
        self.steps_per_unit
    }

    pub fn time_levels(&self) -> usize {
        self.steps_per_unit + 1
    }

    pub fn time_at(&self, level: usize) -> T {
        self.t0 + T::from_usize_exact(level) * self.dt
    }

    pub fn spatial(&self) -> SpatialGrid {
        SpatialGrid::new(self.dim(), self.nx)
    }

    pub fn node_count(&self) -> usize {
        self.spatial().len() * self.time_levels()
    }

    /// Finest dyadic level whose nodes all fall on grid nodes.
    pub fn max_dyadic_level(&self) -> u32 {
        let g = gcd(self.nx - 1, self.steps_per_unit);
        g.trailing_zeros()
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Integer nodes `k` with `k 2^{-n}` in the closed cylinder
/// `[0,1]^d x [t0, t0 + 1]`. The last coordinate is time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DyadicMesh {
    level: u32,
    dim: usize,
    time_offset: i64,
    nodes: Vec<i64>,
}

impl DyadicMesh {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of mesh intervals per unit length, `2^n`.
    pub fn side(&self) -> i64 {
        1 << self.level
    }

    /// `t0 2^n`, the time coordinate of the lower cylinder face.
    pub fn time_offset(&self) -> i64 {
        self.time_offset
    }

    pub fn len(&self) -> usize {
        self.nodes.len() / (self.dim + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[i64]> + '_ {
        self.nodes.chunks_exact(self.dim + 1)
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        let side = self.side();
        k.len() == self.dim + 1
            && k[..self.dim].iter().all(|&c| (0..=side).contains(&c))
            && (self.time_offset..=self.time_offset + side).contains(&k[self.dim])
    }

    /// Grid indices `(flat spatial index, time level)` of mesh node `k`.
    pub fn grid_node<T: Real>(&self, k: &[i64], grid: &SpaceTimeGrid<T>) -> (usize, usize) {
        let sx = (grid.nx() - 1) as i64 / self.side();
        let st = grid.steps_per_unit() as i64 / self.side();
        let multi: Vec<usize> = k[..self.dim].iter().map(|&c| (c * sx) as usize).collect();
        let level = ((k[self.dim] - self.time_offset) * st) as usize;
        (grid.spatial().index(&multi), level)
    }
}

/// Enumerates the level-`n` dyadic nodes of the grid's window.
pub fn build_dyadic_mesh<T: Real>(grid: &SpaceTimeGrid<T>, n: u32) -> Result<DyadicMesh, GridError> {
    if n >= 62 {
        return Err(GridError::LevelTooFine { level: n });
    }
    let side = 1usize << n;
    if side > grid.nx() - 1 || side > grid.steps_per_unit() {
        return Err(GridError::LevelTooFine { level: n });
    }
    if (grid.nx() - 1) % side != 0 || grid.steps_per_unit() % side != 0 {
        return Err(GridError::Misaligned { level: n });
    }
    let scaled_t0 = grid.t0().to_f64_lossy() * side as f64;
    if (scaled_t0 - scaled_t0.round()).abs() > 1e-9 {
        return Err(GridError::Misaligned { level: n });
    }
    let time_offset = scaled_t0.round() as i64;
    let dim = grid.dim();
    let per_axis = side + 1;
    let count = per_axis.pow(dim as u32 + 1);
    let mut nodes = Vec::with_capacity(count * (dim + 1));
    for flat in 0..count {
        let mut rem = flat;
        let mut k = vec![0i64; dim + 1];
        for slot in k.iter_mut().rev() {
            *slot = (rem % per_axis) as i64;
            rem /= per_axis;
        }
        k[dim] += time_offset;
        nodes.extend_from_slice(&k);
    }
    Ok(DyadicMesh {
        level: n,
        dim,
        time_offset,
        nodes,
    })
}

/// All nonzero `e` in `{-1,0,1}^{d+1}`, i.e. every offset of max-norm one.
pub fn neighbor_offsets(d: usize) -> Vec<Vec<i64>> {
    let len = d + 1;
    let total = 3usize.pow(len as u32);
    (0..total)
        .map(|mut flat| {
            let mut e = vec![0i64; len];
            for slot in e.iter_mut().rev() {
                *slot = (flat % 3) as i64 - 1;
                flat /= 3;
            }
            e
        })
        .filter(|e| e.iter().any(|&c| c != 0))
        .collect()
}
