//! Brownian drivers and the forcing profiles `f^j(x, t)` that multiply them.
//!
//! Every Gaussian increment is a pure function of
//! `(seed, sample_index, j, step)`: each `(sample_index, j)` pair owns a
//! ChaCha8 stream under a key derived from the seed, and every step
//! consumes exactly two 64-bit words. Paths can therefore be generated in
//! any order, on any number of threads, with identical results.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SpatialGrid;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("time step {dt} and horizon {horizon} do not give a positive whole number of steps")]
    Steps { dt: f64, horizon: f64 },
    #[error("too many Brownian motions: {0} (limit 2^20)")]
    TooManyDrivers(usize),
    #[error("profile {j} violates its condition: norm {value} > 1")]
    Normalization { j: usize, value: f64 },
    #[error("invalid profile {j}: {reason}")]
    Profile { j: usize, reason: String },
    #[error("forcing has no profiles")]
    Empty,
}

const STREAM_BITS: u32 = 20;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(seed, sample_index, j)`; `refinement` selects the
/// independent family used for Brownian-bridge midpoints.
fn stream(seed: u64, sample_index: u64, j: usize, refinement: u32) -> ChaCha8Rng {
    let mut state = seed ^ (u64::from(refinement)).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream((sample_index << STREAM_BITS) | j as u64);
    rng
}

/// One standard normal from two 64-bit words (Box-Muller, cosine branch).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let to_unit = |w: u64| ((w >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u1 = to_unit(rng.next_u64());
    let u2 = to_unit(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Standard normal number `step` of a stream, by random access.
pub fn normal_at(seed: u64, sample_index: u64, j: usize, step: u64, refinement: u32) -> f64 {
    let mut rng = stream(seed, sample_index, j, refinement);
    // 32-bit word position: 4 words per step
    rng.set_word_pos(u128::from(step) * 4);
    standard_normal(&mut rng)
}

/// Increments `Delta w^j_m ~ N(0, dt)` of `j_count` independent Brownian motions.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub seed: u64,
    pub sample_index: u64,
    pub dt: f64,
    /// How many Brownian-bridge halvings separate this path from a sampled one.
    pub refinement: u32,
    /// `increments[[j, m]]`.
    pub increments: Array2<f64>,
}

impl NoisePath {
    pub fn j_count(&self) -> usize {
        self.increments.nrows()
    }

    pub fn steps(&self) -> usize {
        self.increments.ncols()
    }

    /// Same Brownian motions at step `dt / 2`: each increment is split by
    /// a Brownian-bridge midpoint, so pairs of new increments sum to the
    /// old ones exactly.
    pub fn refine(&self) -> NoisePath {
        let level = self.refinement + 1;
        let half = (self.dt / 4.0).sqrt();
        let (nj, steps) = self.increments.dim();
        let mut inc = Array2::zeros((nj, 2 * steps));
        for j in 0..nj {
            let mut rng = stream(self.seed, self.sample_index, j, level);
            for m in 0..steps {
                let w = self.increments[[j, m]];
                let first = 0.5 * w + half * standard_normal(&mut rng);
                inc[[j, 2 * m]] = first;
                inc[[j, 2 * m + 1]] = w - first;
            }
        }
        NoisePath {
            seed: self.seed,
            sample_index: self.sample_index,
            dt: self.dt / 2.0,
            refinement: level,
            increments: inc,
        }
    }

    /// A path with every increment zero.
    pub fn zero(j_count: usize, dt: f64, steps: usize) -> NoisePath {
        NoisePath {
            seed: 0,
            sample_index: 0,
            dt,
            refinement: 0,
            increments: Array2::zeros((j_count, steps)),
        }
    }
}

/// Whole steps in `horizon`, tolerating rounding in `horizon / dt`.
pub fn step_count(dt: f64, horizon: f64) -> Result<usize, NoiseError> {
    let ratio = horizon / dt;
    let steps = ratio.round();
    if !(dt > 0.0) || !(steps >= 1.0) || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(NoiseError::Steps { dt, horizon });
    }
    Ok(steps as usize)
}

pub fn sample_path(
    seed: u64,
    sample_index: u64,
    j_count: usize,
    dt: f64,
    horizon: f64,
) -> Result<NoisePath, NoiseError> {
    if j_count >= 1 << STREAM_BITS {
        return Err(NoiseError::TooManyDrivers(j_count));
    }
    let steps = step_count(dt, horizon)?;
    let sd = dt.sqrt();
    let mut inc = Array2::zeros((j_count, steps));
    for j in 0..j_count {
        let mut rng = stream(seed, sample_index, j, 0);
        for m in 0..steps {
            inc[[j, m]] = sd * standard_normal(&mut rng);
        }
    }
    Ok(NoisePath {
        seed,
        sample_index,
        dt,
        refinement: 0,
        increments: inc,
    })
}

/// Spatial shape of one noise coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Zero,
    Constant { value: f64 },
    /// `prod_i sin(pi x_i)`.
    SmoothBump,
    /// `+-1` on a `cells^d` checkerboard.
    Checkerboard { cells: usize },
    /// `eps^{-d/p}` on the cube of side `eps` centred at `center`, sampled
    /// by cell averages of `|f|^p` so the discrete `L^p` norm is exact.
    Spike { eps: f64, p: f64, center: Vec<f64> },
}

/// Scalar time factor multiplying a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Modulation {
    #[default]
    None,
    /// `cos(2 pi frequency t)`.
    Cosine { frequency: f64 },
    /// `exp(-rate t)`, `rate >= 0`.
    ExpDecay { rate: f64 },
}

impl Modulation {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Self::None => 1.0,
            Self::Cosine { frequency } => (std::f64::consts::TAU * frequency * t).cos(),
            Self::ExpDecay { rate } => (-rate * t).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub shape: Shape,
    #[serde(default)]
    pub modulation: Modulation,
    /// If set, `f(x,t) = shape(x) * clamp(u(x,t-) / scale, -1, 1)`.
    #[serde(default)]
    pub feedback_scale: Option<f64>,
}

impl ProfileSpec {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            modulation: Modulation::None,
            feedback_scale: None,
        }
    }

    pub fn modulated(mut self, m: Modulation) -> Self {
        self.modulation = m;
        self
    }

    pub fn with_feedback(mut self, scale: f64) -> Self {
        self.feedback_scale = Some(scale);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseCondition {
    /// `|f^j| <= 1` everywhere.
    BInfty,
    /// `||f^j(., t)||_{L^p(Q)} <= 1` for every `t`.
    Bp { p: f64 },
}

/// Times at which modulations are checked against the condition.
const CHECK_TIMES: usize = 65;
const SUP_SLACK: f64 = 1e-12;
const LP_SLACK: f64 = 1e-9;

/// Noise coefficients sampled on a grid, with a verified normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingSpec<T> {
    grid: SpatialGrid,
    profiles: Vec<ProfileSpec>,
    condition: NoiseCondition,
    /// Largest normalized norm found over profiles and checked times.
    certificate: f64,
    base: Vec<Array1<T>>,
}

pub fn make_forcing<T: Real>(
    profiles: Vec<ProfileSpec>,
    condition: NoiseCondition,
    grid: SpatialGrid,
) -> Result<ForcingSpec<T>, NoiseError> {
    if profiles.is_empty() {
        return Err(NoiseError::Empty);
    }
    let mut base = Vec::with_capacity(profiles.len());
    let mut certificate = 0.0f64;
    for (j, prof) in profiles.iter().enumerate() {
        let values = sample_shape(&prof.shape, &grid).map_err(|reason| NoiseError::Profile { j, reason })?;
        if let Some(s) = prof.feedback_scale {
            if !(s > 0.0) {
                return Err(NoiseError::Profile {
                    j,
                    reason: format!("feedback scale {s} must be positive"),
                });
            }
        }
        let amp = (0..CHECK_TIMES)
            .map(|i| prof.modulation.at(i as f64 / (CHECK_TIMES - 1) as f64).abs())
            .fold(0.0, f64::max);
        let (norm, slack) = match condition {
            NoiseCondition::BInfty => (grid.lp_norm(values.view(), f64::INFINITY), SUP_SLACK),
            NoiseCondition::Bp { p } => {
                if !(p >= 1.0) {
                    return Err(NoiseError::Profile {
                        j,
                        reason: format!("exponent p = {p} below 1"),
                    });
                }
                (grid.lp_norm(values.view(), p), LP_SLACK)
            }
        };
        let value = norm * amp;
        if value > 1.0 + slack {
            return Err(NoiseError::Normalization { j, value });
        }
        certificate = certificate.max(value);
        base.push(values.mapv(T::lit));
    }
    Ok(ForcingSpec {
        grid,
        profiles,
        condition,
        certificate,
        base,
    })
}

fn sample_shape(shape: &Shape, grid: &SpatialGrid) -> Result<Array1<f64>, String> {
    let d = grid.dim();
    let coords = |i: usize| grid.coords::<f64>(i);
    Ok(match shape {
        Shape::Zero => Array1::zeros(grid.len()),
        Shape::Constant { value } => Array1::from_elem(grid.len(), *value),
        Shape::SmoothBump => {
            Array1::from_shape_fn(grid.len(), |i| coords(i).iter().map(|x| (std::f64::consts::PI * x).sin()).product())
        }
        Shape::Checkerboard { cells } => {
            if *cells == 0 {
                return Err("checkerboard needs at least one cell".into());
            }
            Array1::from_shape_fn(grid.len(), |i| {
                let parity: usize = coords(i)
                    .iter()
                    .map(|x| ((x * *cells as f64).floor() as usize).min(cells - 1))
                    .sum();
                if parity % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
        }
        Shape::Spike { eps, p, center } => {
            let h = grid.spacing::<f64>();
            if center.len() != d {
                return Err(format!("spike centre has {} coordinates, expected {d}", center.len()));
            }
            if !(*p >= 1.0) {
                return Err(format!("spike exponent p = {p} below 1"));
            }
            if *eps < 2.0 * h * (1.0 - 1e-12) {
                return Err(format!("spike width {eps} below 2h = {}", 2.0 * h));
            }
            if center.iter().any(|c| c - eps / 2.0 < 0.0 || c + eps / 2.0 > 1.0) {
                return Err("spike support leaves the cube".into());
            }
            let height = eps.powf(-(d as f64) / p);
            Array1::from_shape_fn(grid.len(), |i| {
                let x = coords(i);
                let mut frac = 1.0;
                for (xa, ca) in x.iter().zip(center) {
                    let lo = (xa - h / 2.0).max(0.0);
                    let hi = (xa + h / 2.0).min(1.0);
                    let overlap = (hi.min(ca + eps / 2.0) - lo.max(ca - eps / 2.0)).max(0.0);
                    frac *= overlap / (hi - lo);
                }
                height * frac.powf(1.0 / p)
            })
        }
    })
}

impl<T: Real> ForcingSpec<T> {
    pub fn j_count(&self) -> usize {
        self.profiles.len()
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn condition(&self) -> NoiseCondition {
        self.condition
    }

    pub fn certificate(&self) -> f64 {
        self.certificate
    }

    pub fn profiles(&self) -> &[ProfileSpec] {
        &self.profiles
    }

    /// Spatial shape of profile `j` on all grid nodes.
    pub fn base(&self, j: usize) -> &Array1<T> {
        &self.base[j]
    }

    pub fn is_time_independent(&self) -> bool {
        self.profiles
            .iter()
            .all(|p| p.modulation == Modulation::None && p.feedback_scale.is_none())
    }

    pub fn has_feedback(&self) -> bool {
        self.profiles.iter().any(|p| p.feedback_scale.is_some())
    }

    pub fn is_zero(&self) -> bool {
        self.base.iter().all(|b| b.iter().all(|v| *v == T::zero()))
    }

    pub fn modulation(&self, j: usize, t: f64) -> T {
        T::lit(self.profiles[j].modulation.at(t))
    }

    /// `f^j(., t)` on all nodes; `u_prev` is required for feedback profiles.
    pub fn evaluate(&self, j: usize, t: f64, u_prev: Option<ArrayView1<T>>) -> Array1<T> {
        let m = self.modulation(j, t);
        let mut out = self.base[j].mapv(|v| v * m);
        if let Some(scale) = self.profiles[j].feedback_scale {
            let scale = T::lit(scale);
            let u = u_prev.expect("feedback forcing needs the current solution");
            out.zip_mut_with(&u, |f, &u| *f = *f * (u / scale).max(-T::one()).min(T::one()));
        }
        out
    }

    /// Short description used in provenance records.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self
            .profiles
            .iter()
            .map(|p| serde_json::to_string(p).unwrap_or_default())
            .collect();
        parts.join(";")
    }
}
