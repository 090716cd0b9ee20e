//! Sup and Hoelder norms of sampled fields, dyadic oscillation profiles and
//! the chaining machinery that turns neighbor increments on dyadic meshes
//! into Hoelder bounds.
//!
//! Space-time distance is `|t1 - t2| + |x1 - x2|_inf`. The increment
//! bound from oscillations uses the max-norm `|Delta|_inf` over all
//! `d + 1` coordinates.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::SpaceTimeField;
use crate::grid::{build_dyadic_mesh, neighbor_offsets, GridError, SpaceTimeGrid, SpatialGrid};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegularityError {
    #[error("window [{t0}, {t1}] is not inside the field window [{f0}, {f1}]")]
    Window { t0: f64, t1: f64, f0: f64, f1: f64 },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("displacement {0} outside (0, 1]")]
    Displacement(f64),
    #[error("level {level} not in profile (finest {finest})")]
    LevelOutOfRange { level: u32, finest: u32 },
    #[error("parameter out of range: {0}")]
    Parameter(String),
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
}

/// Maximum of `|u|` over levels whose time lies in `[t0, t1]`; the whole
/// field window when `window` is `None`.
pub fn sup_norm<T: Real>(field: &SpaceTimeField<T>, window: Option<(f64, f64)>) -> Result<f64, RegularityError> {
    let g = field.grid();
    let (f0, f1) = (g.t0().to_f64_lossy(), g.t1().to_f64_lossy());
    let (t0, t1) = window.unwrap_or((f0, f1));
    let slack = 1e-9 * g.dt().to_f64_lossy();
    if t0 < f0 - slack || t1 > f1 + slack || t1 < t0 {
        return Err(RegularityError::Window { t0, t1, f0, f1 });
    }
    let mut m = 0.0f64;
    for l in 0..g.time_levels() {
        let t = g.time_at(l).to_f64_lossy();
        if t < t0 - slack || t > t1 + slack {
            continue;
        }
        for v in field.level(l) {
            m = m.max(v.to_f64_lossy().abs());
        }
    }
    Ok(m)
}

/// Oscillation profile `n -> gamma_n` over closed dyadic cubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscProfile {
    pub gamma: Vec<f64>,
}

impl OscProfile {
    pub fn finest(&self) -> u32 {
        self.gamma.len() as u32 - 1
    }
}

/// Node strides of the level-`n` mesh: `(spatial, temporal)`.
fn level_strides<T: Real>(grid: &SpaceTimeGrid<T>, n: u32) -> Result<(usize, usize), GridError> {
    build_dyadic_mesh_check(grid, n)?;
    let side = 1usize << n;
    Ok(((grid.nx() - 1) / side, grid.steps_per_unit() / side))
}

fn build_dyadic_mesh_check<T: Real>(grid: &SpaceTimeGrid<T>, n: u32) -> Result<(), GridError> {
    let side = 1usize << n;
    if side > grid.nx() - 1 || side > grid.steps_per_unit() {
        return Err(GridError::LevelTooFine { level: n });
    }
    let t0 = grid.t0().to_f64_lossy() * side as f64;
    if (grid.nx() - 1) % side != 0 || grid.steps_per_unit() % side != 0 || t0.fract() != 0.0 {
        return Err(GridError::Misaligned { level: n });
    }
    Ok(())
}

/// Row-major `(level, i0, i1)` view of a field in `f64`, with `d = 1`
/// stored as `i0 in {0}`, so the innermost axis is always contiguous.
struct Lattice {
    levels: usize,
    m0: usize,
    m1: usize,
    vals: Vec<f64>,
}

impl Lattice {
    /// Sub-lattice taking every `st`-th level and every `sx`-th node per axis.
    fn from_field<T: Real>(field: &SpaceTimeField<T>, sx: usize, st: usize) -> Self {
        let g = field.grid();
        let nx = g.nx();
        let m = (nx - 1) / sx + 1;
        let levels = g.steps_per_unit() / st + 1;
        let (m0, m1) = if g.dim() == 1 { (1, m) } else { (m, m) };
        let mut vals = Vec::with_capacity(levels * m0 * m1);
        for l in 0..levels {
            let row = field.level(l * st);
            for i0 in 0..m0 {
                for i1 in 0..m1 {
                    let node = if g.dim() == 1 { i1 * sx } else { (i0 * sx) * nx + i1 * sx };
                    vals.push(row[node].to_f64_lossy());
                }
            }
        }
        Self { levels, m0, m1, vals }
    }

    fn from_spatial<T: Real>(grid: &SpatialGrid, v: ArrayView1<T>) -> Self {
        let nx = grid.nx();
        let (m0, m1) = if grid.dim() == 1 { (1, nx) } else { (nx, nx) };
        Self {
            levels: 1,
            m0,
            m1,
            vals: v.iter().map(|x| x.to_f64_lossy()).collect(),
        }
    }

    fn at(&self, l: usize, i0: usize, i1: usize) -> f64 {
        self.vals[(l * self.m0 + i0) * self.m1 + i1]
    }

    /// `out[dl][r]`: largest `|v(z + e) - v(z)|` over pairs whose level
    /// offset is `dl` and whose spatial max-norm offset is `r`.
    fn max_increments(&self) -> Vec<Vec<f64>> {
        let (lv, m0, m1) = (self.levels, self.m0 as i64, self.m1 as i64);
        let rmax = (m0.max(m1) - 1) as usize;
        let mut out = vec![vec![0.0f64; rmax + 1]; lv];
        for dl in 0..lv {
            for a in -(m0 - 1)..m0 {
                for b in -(m1 - 1)..m1 {
                    if dl == 0 && (a < 0 || (a == 0 && b <= 0)) {
                        continue;
                    }
                    let r = a.unsigned_abs().max(b.unsigned_abs()) as usize;
                    let i0_lo = (-a).max(0) as usize;
                    let i0_hi = (m0 - a.max(0)) as usize;
                    let i1_lo = (-b).max(0) as usize;
                    let i1_hi = (m1 - b.max(0)) as usize;
                    let len = i1_hi - i1_lo;
                    let mut best = out[dl][r];
                    for l in 0..lv - dl {
                        for i0 in i0_lo..i0_hi {
                            let s = (l * self.m0 + i0) * self.m1 + i1_lo;
                            let t = ((l + dl) * self.m0 + (i0 as i64 + a) as usize) * self.m1
                                + (i1_lo as i64 + b) as usize;
                            let src = &self.vals[s..s + len];
                            let dst = &self.vals[t..t + len];
                            for (x, y) in src.iter().zip(dst) {
                                best = best.max((x - y).abs());
                            }
                        }
                    }
                    out[dl][r] = best;
                }
            }
        }
        out
    }
}

/// Spatial Hoelder seminorms `sup |v(x) - v(y)| / |x - y|_inf^theta` over
/// all node pairs, one value per `theta` (`theta = 1` gives the discrete
/// Lipschitz constant).
pub fn spatial_seminorms<T: Real>(grid: &SpatialGrid, v: ArrayView1<T>, thetas: &[f64]) -> Vec<f64> {
    let lat = Lattice::from_spatial(grid, v);
    let inc = lat.max_increments();
    let h = grid.spacing::<f64>();
    let entries: Vec<(f64, f64)> = inc[0]
        .iter()
        .enumerate()
        .skip(1)
        .map(|(r, &m)| (r as f64 * h, m))
        .collect();
    seminorms_from_entries(&entries, thetas)
}

fn seminorms_from_entries(entries: &[(f64, f64)], thetas: &[f64]) -> Vec<f64> {
    thetas
        .iter()
        .map(|&theta| {
            entries
                .iter()
                .filter(|(d, _)| *d > 0.0)
                .map(|(d, m)| m / d.powf(theta))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// `gamma_n` for `n = 0..=n_max`: the largest oscillation over closed
/// cubes `2^{-n} j + [0, 2^{-n}]^{d+1}` of the field window.
pub fn osc_profile<T: Real>(field: &SpaceTimeField<T>, n_max: u32) -> Result<OscProfile, RegularityError> {
    let g = field.grid();
    let (sx, st) = level_strides(g, n_max)?;
    let lat = Lattice::from_field(field, 1, 1);
    let d = g.dim();
    let side = 1usize << n_max;
    let cells0 = if d == 1 { 1 } else { side };
    // finest level: (min, max) per cube, indexed (jt, j0, j1)
    let mut mins = Vec::with_capacity(side * cells0 * side);
    let mut maxs = Vec::with_capacity(side * cells0 * side);
    for jt in 0..side {
        for j0 in 0..cells0 {
            for j1 in 0..side {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                let r0 = if d == 1 { 0..=0 } else { j0 * sx..=(j0 + 1) * sx };
                for l in jt * st..=(jt + 1) * st {
                    for i0 in r0.clone() {
                        for i1 in j1 * sx..=(j1 + 1) * sx {
                            let v = lat.at(l, i0, i1);
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                }
                mins.push(lo);
                maxs.push(hi);
            }
        }
    }
    let mut gamma = vec![0.0; n_max as usize + 1];
    let mut cur = side;
    loop {
        let c0 = if d == 1 { 1 } else { cur };
        gamma[cur.trailing_zeros() as usize] = mins
            .iter()
            .zip(&maxs)
            .map(|(lo, hi)| hi - lo)
            .fold(0.0, f64::max);
        if cur == 1 {
            break;
        }
        let next = cur / 2;
        let n0 = if d == 1 { 1 } else { next };
        let mut nmins = vec![f64::INFINITY; next * n0 * next];
        let mut nmaxs = vec![f64::NEG_INFINITY; next * n0 * next];
        for jt in 0..cur {
            for j0 in 0..c0 {
                for j1 in 0..cur {
                    let src = (jt * c0 + j0) * cur + j1;
                    let p0 = if d == 1 { 0 } else { j0 / 2 };
                    let dst = ((jt / 2) * n0 + p0) * next + j1 / 2;
                    nmins[dst] = nmins[dst].min(mins[src]);
                    nmaxs[dst] = nmaxs[dst].max(maxs[src]);
                }
            }
        }
        mins = nmins;
        maxs = nmaxs;
        cur = next;
    }
    Ok(OscProfile { gamma })
}

/// `2 gamma_n` with `n = [log2(1 / |Delta|)]`.
pub fn lemma4_bound(profile: &OscProfile, delta: f64) -> Result<f64, RegularityError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(RegularityError::Displacement(delta));
    }
    let level = dyadic_level(delta);
    let finest = profile.finest();
    if level > finest {
        return Err(RegularityError::LevelOutOfRange { level, finest });
    }
    Ok(2.0 * profile.gamma[level as usize])
}

/// `floor(log2(1/delta))`, exact at powers of two.
fn dyadic_level(delta: f64) -> u32 {
    let mut n = (-delta.log2()).floor().max(0.0) as u32;
    while n > 0 && delta > 2f64.powi(-(n as i32)) {
        n -= 1;
    }
    while delta <= 2f64.powi(-(n as i32 + 1)) {
        n += 1;
    }
    n
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEvents {
    pub level: u32,
    /// Ordered `(k, e)` pairs examined.
    pub pairs: usize,
    pub exceedances: usize,
    pub max_increment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainingReport {
    pub k: f64,
    pub q: f64,
    pub levels: Vec<LevelEvents>,
    /// Whether any `xi >= K q^n` occurred.
    pub event: bool,
    /// Smallest threshold at which the scan stays silent: `max_n max xi / q^n`.
    pub k_star: f64,
    /// Largest `|u|` over nodes of the finest scanned mesh.
    pub mesh_sup: f64,
}

/// Telescoping bound on `|u|` over dyadic nodes from a zero anchor when
/// no event occurs: `K sum_{m >= 1} q^m = K q / (1 - q)`.
pub fn telescoping_sup_bound(k: f64, q: f64) -> f64 {
    k * q / (1.0 - q)
}

/// Scans levels `1..=n_max`: every mesh node `k` and neighbor offset `e`
/// with `k + e` in the mesh, comparing `xi = |u((k+e)2^{-n}) - u(k 2^{-n})|`
/// with `K q^n`.
pub fn chaining_event_scan<T: Real>(
    field: &SpaceTimeField<T>,
    k: f64,
    q: f64,
    n_max: u32,
) -> Result<ChainingReport, RegularityError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(RegularityError::Parameter(format!("q = {q} not in (0,1)")));
    }
    if !(k > 0.0) {
        return Err(RegularityError::Parameter(format!("K = {k} not positive")));
    }
    let g = field.grid();
    level_strides(g, n_max)?;
    let d = g.dim();
    let offsets = neighbor_offsets(d);
    let mut levels = Vec::with_capacity(n_max as usize);
    let mut k_star = 0.0f64;
    let mut mesh_sup = 0.0f64;
    let value = |mesh: &crate::grid::DyadicMesh, node: &[i64]| {
        let (s, l) = mesh.grid_node(node, g);
        field.at(l, s).to_f64_lossy()
    };
    for n in 1..=n_max {
        let mesh = build_dyadic_mesh(g, n)?;
        let thr = k * q.powi(n as i32);
        let mut ev = LevelEvents {
            level: n,
            pairs: 0,
            exceedances: 0,
            max_increment: 0.0,
        };
        let mut target = vec![0i64; d + 1];
        for node in mesh.nodes() {
            let u0 = value(&mesh, node);
            if n == n_max {
                mesh_sup = mesh_sup.max(u0.abs());
            }
            for e in &offsets {
                for (t, (a, b)) in target.iter_mut().zip(node.iter().zip(e)) {
                    *t = a + b;
                }
                if !mesh.contains(&target) {
                    continue;
                }
                let xi = (value(&mesh, &target) - u0).abs();
                ev.pairs += 1;
                ev.max_increment = ev.max_increment.max(xi);
                if xi >= thr {
                    ev.exceedances += 1;
                }
            }
        }
        k_star = k_star.max(ev.max_increment / q.powi(n as i32));
        levels.push(ev);
    }
    let event = levels.iter().any(|l| l.exceedances > 0);
    Ok(ChainingReport {
        k,
        q,
        levels,
        event,
        k_star,
        mesh_sup,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderMode {
    BruteForce,
    DyadicCertified,
}

/// Largest window (in nodes) scanned pair by pair.
pub const DEFAULT_NODE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub t0: f64,
    pub t1: f64,
    pub sup_norm: f64,
    pub thetas: Vec<f64>,
    /// Exact seminorms (brute force) or the sup over all examined pairs
    /// (dyadic mode), which is a lower bound for the full-grid value.
    pub seminorms: Vec<f64>,
    /// Certified upper bounds from the oscillation profile (dyadic mode).
    pub upper_bounds: Option<Vec<f64>>,
    pub mode: HolderMode,
    /// Dyadic level of the pair-scanned sub-lattice in dyadic mode.
    pub lattice_level: Option<u32>,
}

impl HolderReport {
    /// `||u||_{C^theta} = sup + seminorm` for each configured `theta`.
    pub fn norms(&self) -> Vec<f64> {
        self.seminorms.iter().map(|s| s + self.sup_norm).collect()
    }
}

/// Hoelder seminorms of a field over its whole window for every `theta`.
///
/// Windows with at most `node_limit` nodes are scanned pair by pair.
/// Larger ones are scanned on the finest dyadic sub-lattice that fits,
/// plus all native and finer-dyadic neighbor pairs, and get a certified
/// upper bound from the oscillation profile.
pub fn holder_seminorms<T: Real>(
    field: &SpaceTimeField<T>,
    thetas: &[f64],
    node_limit: usize,
) -> Result<HolderReport, RegularityError> {
    if let Some(bad) = thetas.iter().find(|t| !(**t >= 0.0 && **t <= 1.0)) {
        return Err(RegularityError::Parameter(format!("theta = {bad}")));
    }
    let g = field.grid();
    let sup = sup_norm(field, None)?;
    let (h, dt) = (g.h().to_f64_lossy(), g.dt().to_f64_lossy());
    let base = HolderReport {
        t0: g.t0().to_f64_lossy(),
        t1: g.t1().to_f64_lossy(),
        sup_norm: sup,
        thetas: thetas.to_vec(),
        seminorms: vec![],
        upper_bounds: None,
        mode: HolderMode::BruteForce,
        lattice_level: None,
    };
    if g.node_count() <= node_limit {
        let lat = Lattice::from_field(field, 1, 1);
        let entries = lattice_entries(&lat, dt, h);
        return Ok(HolderReport {
            seminorms: seminorms_from_entries(&entries, thetas),
            ..base
        });
    }
    let n_top = g.max_dyadic_level();
    let d = g.dim() as u32;
    let mut level = 0;
    for n in 0..=n_top {
        let nodes = ((1usize << n) + 1).pow(d + 1);
        if nodes <= node_limit && level_strides(g, n).is_ok() {
            level = n;
        }
    }
    let (sx, st) = level_strides(g, level)?;
    let lat = Lattice::from_field(field, sx, st);
    let mut entries = lattice_entries(&lat, st as f64 * dt, sx as f64 * h);
    // native neighbor pairs
    let full = Lattice::from_field(field, 1, 1);
    entries.extend(neighbor_entries(&full, 1, 1, dt, h));
    // neighbor pairs on finer dyadic meshes
    for n in level + 1..=n_top {
        let (sxn, stn) = level_strides(g, n)?;
        entries.extend(neighbor_entries(&full, sxn, stn, dt, h));
    }
    let seminorms = seminorms_from_entries(&entries, thetas);
    let profile = osc_profile(field, n_top)?;
    let d_min = h.min(dt);
    let upper = thetas
        .iter()
        .map(|&theta| {
            let mut b = 2.0 * profile.gamma[n_top as usize] / d_min.powf(theta);
            for (n, g) in profile.gamma.iter().enumerate().take(n_top as usize) {
                b = b.max(2.0 * g * 2f64.powf((n + 1) as f64 * theta));
            }
            b
        })
        .collect();
    Ok(HolderReport {
        seminorms,
        upper_bounds: Some(upper),
        mode: HolderMode::DyadicCertified,
        lattice_level: Some(level),
        ..base
    })
}

/// `(distance, max increment)` for every displacement class of a lattice
/// whose level and node spacings are `ddt` and `dh`.
fn lattice_entries(lat: &Lattice, ddt: f64, dh: f64) -> Vec<(f64, f64)> {
    let inc = lat.max_increments();
    let mut out = Vec::new();
    for (dl, row) in inc.iter().enumerate() {
        for (r, &m) in row.iter().enumerate() {
            if dl == 0 && r == 0 {
                continue;
            }
            out.push((dl as f64 * ddt + r as f64 * dh, m));
        }
    }
    out
}

/// Increments between neighbors (offsets in `{-1,0,1}^{d+1}`) on the mesh
/// with node strides `sx`, `st` over the full-resolution lattice.
fn neighbor_entries(full: &Lattice, sx: usize, st: usize, dt: f64, h: f64) -> Vec<(f64, f64)> {
    // classes: (time offset, spatial max-norm offset) in {0,1}^2 minus (0,0)
    let mut best = [0.0f64; 3];
    let spatial_2d = full.m0 > 1;
    let steps0: Vec<i64> = if spatial_2d { vec![-1, 0, 1] } else { vec![0] };
    let lv = full.levels;
    for l in (0..lv).step_by(st) {
        for i0 in (0..full.m0).step_by(if spatial_2d { sx } else { 1 }) {
            for i1 in (0..full.m1).step_by(sx) {
                let v = full.at(l, i0, i1);
                for dl in [0i64, 1] {
                    for &a in &steps0 {
                        for b in [-1i64, 0, 1] {
                            if dl == 0 && (a < 0 || (a == 0 && b <= 0)) {
                                continue;
                            }
                            let tl = l as i64 + dl * st as i64;
                            let t0 = i0 as i64 + a * sx as i64;
                            let t1 = i1 as i64 + b * sx as i64;
                            if tl >= lv as i64 || t0 < 0 || t0 >= full.m0 as i64 || t1 < 0 || t1 >= full.m1 as i64 {
                                continue;
                            }
                            let w = full.at(tl as usize, t0 as usize, t1 as usize);
                            let r = (a != 0 || b != 0) as usize;
                            let class = if dl == 0 { 0 } else if r == 0 { 1 } else { 2 };
                            best[class] = best[class].max((w - v).abs());
                        }
                    }
                }
            }
        }
    }
    let (ddt, dh) = (st as f64 * dt, sx as f64 * h);
    vec![(dh, best[0]), (ddt, best[1]), (ddt + dh, best[2])]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailMoments {
    pub s: f64,
    pub direct: f64,
    pub via_tail: f64,
    pub relative_gap: f64,
}

/// Minimum ensemble size for tail and moment estimates.
pub const MIN_TAIL_SAMPLES: usize = 1000;

/// `E U^s` two ways: the sample mean of `U^s`, and
/// `s int_0^inf x^{s-1} P{U >= x} dx` with the empirical survival
/// function, integrated by the midpoint rule on 4096 cells.
pub fn tail_to_moments(samples: &[f64], s: f64) -> Result<TailMoments, RegularityError> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(RegularityError::InsufficientSamples {
            need: MIN_TAIL_SAMPLES,
            got: samples.len(),
        });
    }
    if !(s >= 1.0) {
        return Err(RegularityError::Parameter(format!("moment order {s} below 1")));
    }
    let n = samples.len() as f64;
    let direct = samples.iter().map(|u| u.abs().powf(s)).sum::<f64>() / n;
    let mut sorted: Vec<f64> = samples.iter().map(|u| u.abs()).collect();
    sorted.sort_by(f64::total_cmp);
    let top = *sorted.last().expect("nonempty");
    let cells = 4096;
    let dx = top / cells as f64;
    let mut below = 0usize;
    let mut acc = 0.0;
    for c in 0..cells {
        let x = (c as f64 + 0.5) * dx;
        while below < sorted.len() && sorted[below] < x {
            below += 1;
        }
        let survival = (sorted.len() - below) as f64 / n;
        acc += s * x.powf(s - 1.0) * survival * dx;
    }
    let via_tail = if top == 0.0 { 0.0 } else { acc };
    let relative_gap = if direct == 0.0 {
        (via_tail - direct).abs()
    } else {
        (via_tail - direct).abs() / direct
    };
    Ok(TailMoments {
        s,
        direct,
        via_tail,
        relative_gap,
    })
}
