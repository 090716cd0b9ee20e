//! Realizations of `u(t) = sum_j int_0^t S_{t-s} f^j(., s) dw^j_s` by the
//! stochastic exponential Euler recursion
//! `u_{m+1} = S_dt (u_m + sum_j f^j(., t_m) dw^j_m)`,
//! plus the Gaussian covariance oracle and increment-moment estimators.

use ndarray::{Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Provenance, SpaceTimeField};
use crate::grid::{Domain, GridError, SpaceTimeGrid};
use crate::noise::{ForcingSpec, NoisePath};
use crate::scalar::Real;
use crate::semigroup::{BackendKind, Propagator, SemigroupBackend, SemigroupError};
use crate::stats::{self, Interval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("forcing normalization certificate {certificate} exceeds 1")]
    Condition { certificate: f64 },
    #[error("operator has c_bar = {0} > 0; enable growth runs to allow it")]
    GrowthDisabled(f64),
    #[error("solution reached {value:e} at t = {t}, above the guard {guard:e}")]
    Unstable { value: f64, t: f64, guard: f64 },
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("path covers {have} steps, window needs {need}")]
    PathTooShort { need: usize, have: usize },
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Largest admissible `|u|`; larger values abort the run.
    pub guard: f64,
    /// Permit operators with `c_bar > 0`.
    pub allow_growth: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            guard: 1e6,
            allow_growth: false,
        }
    }
}

const CERTIFICATE_SLACK: f64 = 1e-9;
/// Steps between stability checks when nothing is recorded.
const GUARD_EVERY: usize = 64;

/// Solver bound to one backend and one forcing.
#[derive(Debug, Clone)]
pub struct MildSolver<'a, T> {
    backend: &'a SemigroupBackend<T>,
    forcing: &'a ForcingSpec<T>,
    options: SolverOptions,
    /// Encoded interior profiles, reused whenever no feedback is involved.
    encoded: Vec<Array1<T>>,
    provenance: Provenance,
}

impl<'a, T: Real> MildSolver<'a, T> {
    pub fn new(
        backend: &'a SemigroupBackend<T>,
        forcing: &'a ForcingSpec<T>,
        options: SolverOptions,
    ) -> Result<Self, SolverError> {
        if forcing.grid() != backend.grid() {
            return Err(SolverError::Mismatch("forcing and backend grids differ".into()));
        }
        if forcing.certificate() > 1.0 + CERTIFICATE_SLACK {
            return Err(SolverError::Condition {
                certificate: forcing.certificate(),
            });
        }
        let c_bar = backend.spec().bounds().map(|b| b.c_bar.to_f64_lossy()).unwrap_or(0.0);
        if c_bar > 0.0 && !options.allow_growth {
            return Err(SolverError::GrowthDisabled(c_bar));
        }
        let encoded = (0..forcing.j_count())
            .map(|j| backend.encode(backend.restrict(forcing.base(j).view()).view()))
            .collect();
        let provenance = Provenance {
            operator: format!("{:?}", backend.kind()).to_lowercase(),
            forcing: forcing.label(),
            seed: 0,
            sample_index: 0,
        };
        Ok(Self {
            backend,
            forcing,
            options,
            encoded,
            provenance,
        })
    }

    /// Replaces the operator label written into field provenance.
    pub fn with_operator_label(mut self, label: impl Into<String>) -> Self {
        self.provenance.operator = label.into();
        self
    }

    pub fn backend(&self) -> &SemigroupBackend<T> {
        self.backend
    }

    fn check_path(&self, path: &NoisePath, need: usize) -> Result<(), SolverError> {
        if path.j_count() != self.forcing.j_count() {
            return Err(SolverError::Mismatch(format!(
                "path drives {} Brownian motions, forcing has {} profiles",
                path.j_count(),
                self.forcing.j_count()
            )));
        }
        if path.steps() < need {
            return Err(SolverError::PathTooShort {
                need,
                have: path.steps(),
            });
        }
        Ok(())
    }

    /// Adds `sum_j f^j(., t_m) dw^j_m` to the state.
    fn add_noise(&self, state: &mut Array1<T>, path: &NoisePath, m: usize, t: f64) {
        if self.forcing.has_feedback() {
            let u = self.backend.embed(self.backend.decode(state.view()).view());
            for j in 0..self.forcing.j_count() {
                let f = self.forcing.evaluate(j, t, Some(u.view()));
                let enc = self.backend.encode(self.backend.restrict(f.view()).view());
                state.scaled_add(T::lit(path.increments[[j, m]]), &enc);
            }
        } else {
            for (j, enc) in self.encoded.iter().enumerate() {
                let w = path.increments[[j, m]] * self.forcing.modulation(j, t).to_f64_lossy();
                if w != 0.0 {
                    state.scaled_add(T::lit(w), enc);
                }
            }
        }
    }

    fn guard_state(&self, state: &Array1<T>, t: f64) -> Result<(), SolverError> {
        let u = self.backend.decode(state.view());
        let value = u.iter().fold(0.0f64, |a, v| a.max(v.to_f64_lossy().abs()));
        if !value.is_finite() || value > self.options.guard {
            return Err(SolverError::Unstable {
                value,
                t,
                guard: self.options.guard,
            });
        }
        Ok(())
    }

    /// Runs the recursion for `steps` steps, calling `visit(m, state)` at
    /// every level `m = 0..=steps` (level `m` is time `m dt`).
    fn run(
        &self,
        path: &NoisePath,
        steps: usize,
        mut visit: impl FnMut(usize, &Array1<T>) -> Result<(), SolverError>,
    ) -> Result<(), SolverError> {
        self.check_path(path, steps)?;
        let prop: Propagator<T> = self.backend.propagator(T::lit(path.dt))?;
        let state_len = self.encoded.first().map_or(0, |e| e.len());
        let mut state = Array1::zeros(state_len);
        visit(0, &state)?;
        for m in 0..steps {
            let t = m as f64 * path.dt;
            self.add_noise(&mut state, path, m, t);
            prop.apply(&mut state)?;
            if (m + 1) % GUARD_EVERY == 0 || m + 1 == steps {
                self.guard_state(&state, (m + 1) as f64 * path.dt)?;
            }
            visit(m + 1, &state)?;
        }
        Ok(())
    }

    fn window_grid(&self, dt: f64, t0: u32) -> Result<SpaceTimeGrid<T>, SolverError> {
        let domain = Domain::new(self.backend.grid().dim())?;
        Ok(SpaceTimeGrid::new(domain, self.backend.grid().nx(), T::lit(dt), T::lit(f64::from(t0)))?)
    }

    /// Fields on every requested window `[T, T + 1]`, in the order given.
    pub fn solve_windows(&self, path: &NoisePath, windows: &[u32]) -> Result<Vec<SpaceTimeField<T>>, SolverError> {
        let per_unit = crate::noise::step_count(path.dt, 1.0)
            .map_err(|e| SolverError::Mismatch(e.to_string()))?;
        let last = windows.iter().copied().max().unwrap_or(0) as usize;
        let steps = (last + 1) * per_unit;
        let state_len = self.encoded.first().map_or(0, |e| e.len());
        let mut buffers: Vec<Array2<T>> = windows.iter().map(|_| Array2::zeros((per_unit + 1, state_len))).collect();
        self.run(path, steps, |m, state| {
            for (w, buf) in windows.iter().zip(buffers.iter_mut()) {
                let start = *w as usize * per_unit;
                if m >= start && m <= start + per_unit {
                    buf.row_mut(m - start).assign(state);
                }
            }
            Ok(())
        })?;
        let interior = self.backend.interior_indices();
        let mut out = Vec::with_capacity(windows.len());
        for (w, buf) in windows.iter().zip(buffers) {
            let grid = self.window_grid(path.dt, *w)?;
            let decoded = self.backend.decode_rows(&buf);
            let mut values = Array2::zeros((per_unit + 1, self.backend.grid().len()));
            for (k, &i) in interior.iter().enumerate() {
                values.column_mut(i).assign(&decoded.column(k));
            }
            let prov = Provenance {
                seed: path.seed,
                sample_index: path.sample_index,
                ..self.provenance.clone()
            };
            out.push(SpaceTimeField::new(grid, values, prov).expect("window shape"));
        }
        Ok(out)
    }

    pub fn solve(&self, path: &NoisePath, t0: u32) -> Result<SpaceTimeField<T>, SolverError> {
        Ok(self.solve_windows(path, &[t0])?.remove(0))
    }

    /// Values at full-grid nodes `probes` on every level up to `horizon`
    /// (a whole number of time units); result is `[probe, level]`.
    pub fn solve_probes(&self, path: &NoisePath, probes: &[usize], horizon: u32) -> Result<Array2<T>, SolverError> {
        let per_unit = crate::noise::step_count(path.dt, 1.0)
            .map_err(|e| SolverError::Mismatch(e.to_string()))?;
        let steps = horizon as usize * per_unit;
        let grid = self.backend.grid();
        let mut weights = Vec::with_capacity(probes.len());
        for &p in probes {
            if p >= grid.len() {
                return Err(SolverError::Mismatch(format!("probe {p} outside the grid")));
            }
            weights.push(
                self.backend
                    .interior_indices()
                    .iter()
                    .position(|&i| i == p)
                    .map(|k| self.backend.probe_weights(k)),
            );
        }
        let mut out = Array2::zeros((probes.len(), steps + 1));
        self.run(path, steps, |m, state| {
            for (q, w) in weights.iter().enumerate() {
                if let Some(w) = w {
                    out[[q, m]] = w.dot(state);
                }
            }
            Ok(())
        })?;
        Ok(out)
    }
}

/// One window, as a free function.
pub fn solve<T: Real>(
    backend: &SemigroupBackend<T>,
    forcing: &ForcingSpec<T>,
    path: &NoisePath,
    t0: u32,
    options: SolverOptions,
) -> Result<SpaceTimeField<T>, SolverError> {
    MildSolver::new(backend, forcing, options)?.solve(path, t0)
}

/// Values of the modal basis functions at interior node `k`: `phi_m(x_k)`.
fn modal_values<T: Real>(backend: &SemigroupBackend<T>, k: usize) -> Array1<f64> {
    let m = backend.modal_rates().map_or(0, |r| r.len());
    let eye = Array2::<T>::eye(m);
    backend.decode_rows(&eye).column(k).mapv(|v| v.to_f64_lossy())
}

/// `Cov(u(x1, t), u(x2, t))` for a single time-independent profile on the
/// modal backend, by adaptive Simpson quadrature of
/// `int_0^t v(x1, s) v(x2, s) ds`, `v = S_s f`.
pub fn exact_covariance<T: Real>(
    backend: &SemigroupBackend<T>,
    forcing: &ForcingSpec<T>,
    x1: usize,
    x2: usize,
    t: f64,
) -> Result<f64, SolverError> {
    if backend.kind() != BackendKind::Spectral {
        return Err(SolverError::Mismatch("covariance oracle needs the spectral backend".into()));
    }
    if forcing.j_count() != 1 || !forcing.is_time_independent() {
        return Err(SolverError::Mismatch(
            "covariance oracle needs one time-independent profile".into(),
        ));
    }
    let interior = backend.interior_indices();
    let pos = |x: usize| interior.iter().position(|&i| i == x);
    let (Some(k1), Some(k2)) = (pos(x1), pos(x2)) else {
        return Ok(0.0);
    };
    if t <= 0.0 {
        return Ok(0.0);
    }
    let coeffs = backend
        .encode(backend.restrict(forcing.base(0).view()).view())
        .mapv(|v| v.to_f64_lossy());
    let rates = backend.modal_rates().expect("spectral").mapv(|v| v.to_f64_lossy());
    let a = &coeffs * &modal_values(backend, k1);
    let b = &coeffs * &modal_values(backend, k2);
    let g = |s: f64| -> f64 {
        let mut va = 0.0;
        let mut vb = 0.0;
        for ((ai, bi), r) in a.iter().zip(b.iter()).zip(rates.iter()) {
            let e = (-r * s).exp();
            va += ai * e;
            vb += bi * e;
        }
        va * vb
    };
    Ok(integrate(&g, 0.0, t, 1e-6))
}

/// Adaptive Simpson on a geometric panel split (the integrand has an
/// initial layer from fast modes), to relative tolerance `rel`.
fn integrate(g: &impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let panels = 24;
    let mut edges = vec![a];
    for i in (0..panels).rev() {
        edges.push(a + (b - a) * 2f64.powi(-(i as i32)));
    }
    let simpson = |lo: f64, hi: f64| (hi - lo) / 6.0 * (g(lo) + 4.0 * g(0.5 * (lo + hi)) + g(hi));
    let rough: f64 = edges.windows(2).map(|w| simpson(w[0], w[1])).sum();
    let tol = rel * 0.1 * rough.abs().max(f64::MIN_POSITIVE);
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += adapt(g, w[0], w[1], simpson(w[0], w[1]), tol / panels as f64, 48);
    }
    total
}

fn adapt(g: &impl Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let left = (m - a) / 6.0 * (g(a) + 4.0 * g(0.5 * (a + m)) + g(m));
    let right = (b - m) / 6.0 * (g(m) + 4.0 * g(0.5 * (m + b)) + g(b));
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adapt(g, a, m, left, 0.5 * tol, depth - 1) + adapt(g, m, b, right, 0.5 * tol, depth - 1)
}

/// Point values of an ensemble: `values[[sample, probe, level]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEnsemble {
    pub grid: SpaceTimeGrid<f64>,
    /// Full-grid node index of each probe.
    pub probes: Vec<usize>,
    pub values: Array3<f64>,
}

/// Space-time point `(probe, level)` of a [`PointEnsemble`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsemblePoint {
    pub probe: usize,
    pub level: usize,
}

pub const MIN_MOMENT_SAMPLES: usize = 1000;

impl PointEnsemble {
    pub fn samples(&self) -> usize {
        self.values.len_of(Axis(0))
    }

    /// Joint-metric distance `|t1 - t2| + |x1 - x2|_inf`.
    pub fn distance(&self, z1: EnsemblePoint, z2: EnsemblePoint) -> f64 {
        let sp = self.grid.spatial();
        let x1 = sp.coords::<f64>(self.probes[z1.probe]);
        let x2 = sp.coords::<f64>(self.probes[z2.probe]);
        let dx = x1.iter().zip(&x2).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        (z1.level as f64 - z2.level as f64).abs() * self.grid.dt() + dx
    }

    /// Increments `u(z1) - u(z2)` across samples.
    pub fn increments(&self, z1: EnsemblePoint, z2: EnsemblePoint) -> Vec<f64> {
        (0..self.samples())
            .map(|s| self.values[[s, z1.probe, z1.level]] - self.values[[s, z2.probe, z2.level]])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementMoment {
    pub z1: EnsemblePoint,
    pub z2: EnsemblePoint,
    pub distance: f64,
    pub p: f64,
    /// `E|u(z1) - u(z2)|^p`.
    pub estimate: f64,
    pub ci: Interval,
    /// `E|du|^4 / (E|du|^2)^2`, 3 for a centred Gaussian.
    pub kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementReport {
    pub p: f64,
    pub samples: usize,
    pub moments: Vec<IncrementMoment>,
    /// Slope of `log E|du|^p` against `log distance` over pairs with
    /// positive distance.
    pub exponent: f64,
    pub exponent_ci: Interval,
}

/// Sample moments of increments, with bootstrap intervals, and the fitted
/// scaling exponent.
pub fn increment_moments(
    ensemble: &PointEnsemble,
    pairs: &[(EnsemblePoint, EnsemblePoint)],
    p: f64,
    seed: u64,
) -> Result<IncrementReport, SolverError> {
    let n = ensemble.samples();
    if n < MIN_MOMENT_SAMPLES {
        return Err(SolverError::InsufficientSamples {
            need: MIN_MOMENT_SAMPLES,
            got: n,
        });
    }
    let incs: Vec<Vec<f64>> = pairs.iter().map(|&(a, b)| ensemble.increments(a, b)).collect();
    let dists: Vec<f64> = pairs.iter().map(|&(a, b)| ensemble.distance(a, b)).collect();
    let powered: Vec<Vec<f64>> = incs.iter().map(|v| v.iter().map(|x| x.abs().powf(p)).collect()).collect();
    let fit_idx: Vec<usize> = (0..pairs.len()).filter(|&i| dists[i] > 0.0).collect();
    let slope_of = |means: &[f64]| -> f64 {
        if fit_idx.len() < 2 {
            return f64::NAN;
        }
        let xs: Vec<f64> = fit_idx.iter().map(|&i| dists[i]).collect();
        let ys: Vec<f64> = fit_idx.iter().map(|&i| means[i]).collect();
        stats::log_log_slope(&xs, &ys)
    };
    let means: Vec<f64> = powered.iter().map(|v| stats::mean(v)).collect();
    let exponent = slope_of(&means);
    let mut point = means.clone();
    point.push(exponent);
    let cis = stats::bootstrap(n, stats::BOOTSTRAP_RESAMPLES, seed, &point, |idx| {
        let m: Vec<f64> = powered
            .iter()
            .map(|v| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64)
            .collect();
        let mut out = m.clone();
        out.push(slope_of(&m));
        out
    });
    let moments = pairs
        .iter()
        .enumerate()
        .map(|(i, &(z1, z2))| {
            let m2 = stats::abs_moment(&incs[i], 2.0);
            let m4 = stats::abs_moment(&incs[i], 4.0);
            IncrementMoment {
                z1,
                z2,
                distance: dists[i],
                p,
                estimate: means[i],
                ci: cis[i],
                kurtosis: if m2 > 0.0 { m4 / (m2 * m2) } else { f64::NAN },
            }
        })
        .collect();
    Ok(IncrementReport {
        p,
        samples: n,
        moments,
        exponent,
        exponent_ci: cis[pairs.len()],
    })
}

/// Assembles a [`PointEnsemble`] from per-sample probe tables `[probe, level]`.
pub fn point_ensemble(
    grid: SpaceTimeGrid<f64>,
    probes: Vec<usize>,
    tables: &[Array2<f64>],
) -> Result<PointEnsemble, SolverError> {
    let (np, nl) = tables.first().map_or((probes.len(), 0), |t| t.dim());
    let mut values = Array3::zeros((tables.len(), np, nl));
    for (s, t) in tables.iter().enumerate() {
        if t.dim() != (np, nl) {
            return Err(SolverError::Mismatch("probe tables differ in shape".into()));
        }
        values.index_axis_mut(Axis(0), s).assign(t);
    }
    Ok(PointEnsemble { grid, probes, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpatialGrid;
    use crate::noise::{make_forcing, sample_path, NoiseCondition, ProfileSpec, Shape};
    use crate::operators::OperatorSpec;
    use crate::semigroup::FdScheme;

    fn laplace(nx: usize) -> SemigroupBackend<f64> {
        SemigroupBackend::spectral(&OperatorSpec::laplacian(1), SpatialGrid::new(1, nx), nx - 2).unwrap()
    }

    fn forcing(nx: usize, shape: Shape) -> ForcingSpec<f64> {
        make_forcing(vec![ProfileSpec::new(shape)], NoiseCondition::BInfty, SpatialGrid::new(1, nx)).unwrap()
    }

    #[test]
    fn zero_forcing_or_zero_path_gives_zero() {
        let b = laplace(33);
        let zero = forcing(33, Shape::Zero);
        let path = sample_path(1, 0, 1, 1.0 / 64.0, 1.0).unwrap();
        let u = solve(&b, &zero, &path, 0, SolverOptions::default()).unwrap();
        assert!(u.values().iter().all(|v| *v == 0.0));
        let one = forcing(33, Shape::Constant { value: 1.0 });
        let still = NoisePath::zero(1, 1.0 / 64.0, 64);
        let u = solve(&b, &one, &still, 0, SolverOptions::default()).unwrap();
        assert!(u.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn boundary_and_initial_values_vanish() {
        let b = laplace(33);
        let one = forcing(33, Shape::Constant { value: 1.0 });
        let path = sample_path(2, 0, 1, 1.0 / 64.0, 1.0).unwrap();
        let u = solve(&b, &one, &path, 0, SolverOptions::default()).unwrap();
        assert_eq!(u.boundary_max(), 0.0);
        assert!(u.level(0).iter().all(|v| *v == 0.0));
        assert!(u.values().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn linear_in_the_forcing() {
        let path = sample_path(3, 5, 1, 1.0 / 128.0, 2.0).unwrap();
        let half = forcing(33, Shape::Constant { value: 0.5 });
        let one = forcing(33, Shape::Constant { value: 1.0 });
        let b = laplace(33);
        let a = solve(&b, &half, &path, 1, SolverOptions::default()).unwrap();
        let c = solve(&b, &one, &path, 1, SolverOptions::default()).unwrap();
        // scaling by a power of two is exact on the modal backend
        assert_eq!(a.values().mapv(|v| 2.0 * v), *c.values());
        let fd = SemigroupBackend::implicit_fd(&OperatorSpec::laplacian(1), SpatialGrid::new(1, 33), FdScheme::BackwardEuler)
            .unwrap();
        let a = solve(&fd, &half, &path, 1, SolverOptions::default()).unwrap();
        let c = solve(&fd, &one, &path, 1, SolverOptions::default()).unwrap();
        let err = (&a.values().mapv(|v| 2.0 * v) - c.values()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn windows_agree_with_probes_and_each_other() {
        let b = laplace(17);
        let one = forcing(17, Shape::SmoothBump);
        let path = sample_path(4, 1, 1, 1.0 / 32.0, 3.0).unwrap();
        let solver = MildSolver::new(&b, &one, SolverOptions::default()).unwrap();
        let ws = solver.solve_windows(&path, &[0, 2, 1]).unwrap();
        assert_eq!(ws[1].grid().t0(), 2.0);
        // level 32 of window 0 is level 0 of window 1
        assert_eq!(ws[0].level(32), ws[2].level(0));
        let probes = solver.solve_probes(&path, &[8, 0, 3], 3).unwrap();
        for l in 0..=32 {
            assert!((probes[[0, 64 + l]] - ws[1].at(l, 8)).abs() < 1e-13);
            assert!((probes[[2, 32 + l]] - ws[2].at(l, 3)).abs() < 1e-13);
            assert_eq!(probes[[1, l]], 0.0);
        }
        assert!(matches!(
            solver.solve_windows(&path, &[3]),
            Err(SolverError::PathTooShort { .. })
        ));
    }

    #[test]
    fn growth_is_gated_and_guarded() {
        let spec = OperatorSpec::with_reaction(1, 2.0);
        let b = SemigroupBackend::spectral(&spec, SpatialGrid::new(1, 17), 15).unwrap();
        let one = forcing(17, Shape::Constant { value: 1.0 });
        assert!(matches!(
            MildSolver::new(&b, &one, SolverOptions::default()),
            Err(SolverError::GrowthDisabled(c)) if c == 2.0
        ));
        let opts = SolverOptions {
            guard: 1e-3,
            allow_growth: true,
        };
        let path = sample_path(1, 0, 1, 1.0 / 64.0, 1.0).unwrap();
        assert!(matches!(
            solve(&b, &one, &path, 0, opts),
            Err(SolverError::Unstable { .. })
        ));
    }

    #[test]
    fn single_mode_covariance_has_closed_form() {
        let b = laplace(65);
        let f = forcing(65, Shape::SmoothBump);
        let lambda = std::f64::consts::PI.powi(2);
        for (x, t) in [(32usize, 0.5), (16, 0.1), (40, 2.0)] {
            let xv = x as f64 / 64.0;
            let exact = (std::f64::consts::PI * xv).sin().powi(2) * (1.0 - (-2.0 * lambda * t).exp()) / (2.0 * lambda);
            let got = exact_covariance(&b, &f, x, x, t).unwrap();
            assert!((got / exact - 1.0).abs() < 1e-6, "{got} vs {exact}");
        }
        assert_eq!(exact_covariance(&b, &f, 32, 32, 0.0).unwrap(), 0.0);
        assert_eq!(exact_covariance(&b, &f, 0, 32, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn covariance_quadrature_matches_modal_double_sum() {
        let b = laplace(33);
        let f = forcing(33, Shape::Constant { value: 1.0 });
        let (x1, x2, t) = (16usize, 9usize, 0.5);
        // independent oracle: sum_{m,n} a_m b_n (1 - e^{-(r_m + r_n) t}) / (r_m + r_n)
        let h = 1.0 / 32.0;
        let phi = |k: usize, i: usize| std::f64::consts::SQRT_2 * (std::f64::consts::PI * (k * i) as f64 * h).sin();
        let coef: Vec<f64> = (1..=31).map(|k| (1..32).map(|i| h * phi(k, i)).sum()).collect();
        let rate = |k: usize| (k as f64 * std::f64::consts::PI).powi(2);
        let mut oracle = 0.0;
        for m in 1..=31 {
            for n in 1..=31 {
                let r = rate(m) + rate(n);
                oracle += coef[m - 1] * phi(m, x1) * coef[n - 1] * phi(n, x2) * (1.0 - (-r * t).exp()) / r;
            }
        }
        let got = exact_covariance(&b, &f, x1, x2, t).unwrap();
        assert!((got / oracle - 1.0).abs() < 1e-6, "{got} vs {oracle}");
        let fd = SemigroupBackend::implicit_fd(&OperatorSpec::laplacian(1), SpatialGrid::new(1, 33), FdScheme::default())
            .unwrap();
        assert!(exact_covariance(&fd, &f, 16, 16, 0.5).is_err());
    }

    fn probe_samples(nx: usize, dt: f64, m: usize, seed: u64) -> Vec<f64> {
        let b = laplace(nx);
        let one = forcing(nx, Shape::Constant { value: 1.0 });
        let solver = MildSolver::new(&b, &one, SolverOptions::default()).unwrap();
        let level = (0.5 / dt) as usize;
        (0..m as u64)
            .map(|s| {
                let path = sample_path(seed, s, 1, dt, 1.0).unwrap();
                solver.solve_probes(&path, &[nx / 2], 1).unwrap()[[0, level]]
            })
            .collect()
    }

    #[test]
    fn monte_carlo_variance_and_gaussianity() {
        let xs = probe_samples(33, 1.0 / 256.0, 4000, 21);
        let b = laplace(33);
        let one = forcing(33, Shape::Constant { value: 1.0 });
        let exact = exact_covariance(&b, &one, 16, 16, 0.5).unwrap();
        let v = stats::variance(&xs);
        // standard error of a Gaussian sample variance
        let se = exact * (2.0 / (xs.len() - 1) as f64).sqrt();
        assert!((v - exact).abs() < 4.0 * se, "{v} vs {exact} (se {se})");
        assert!(stats::skewness(&xs).abs() < 0.1);
        assert!(stats::mean(&xs).abs() < 4.0 * (exact / xs.len() as f64).sqrt());
    }

    #[test]
    fn refining_the_time_step_keeps_the_sup_norm() {
        let b = laplace(33);
        let one = forcing(33, Shape::Constant { value: 1.0 });
        let solver = MildSolver::new(&b, &one, SolverOptions::default()).unwrap();
        let (mut coarse, mut fine) = (0.0, 0.0);
        let m = 200;
        for s in 0..m {
            let p = sample_path(8, s, 1, 1.0 / 128.0, 1.0).unwrap();
            let sup = |u: &SpaceTimeField<f64>| u.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
            coarse += sup(&solver.solve(&p, 0).unwrap());
            fine += sup(&solver.solve(&p.refine(), 0).unwrap());
        }
        assert!((fine / coarse - 1.0).abs() <= 0.05, "{}", fine / coarse);
    }

    #[test]
    fn feedback_forcing_runs_and_stays_bounded() {
        let g = SpatialGrid::new(1, 17);
        let f = make_forcing::<f64>(
            vec![ProfileSpec::new(Shape::SmoothBump).with_feedback(0.1)],
            NoiseCondition::BInfty,
            g,
        )
        .unwrap();
        let b = laplace(17);
        let path = sample_path(6, 0, 1, 1.0 / 64.0, 1.0).unwrap();
        let u = solve(&b, &f, &path, 0, SolverOptions::default()).unwrap();
        // starting from u = 0 the feedback coefficient is zero forever
        assert!(u.values().iter().all(|v| *v == 0.0));
        let mixed = make_forcing::<f64>(
            vec![
                ProfileSpec::new(Shape::Constant { value: 1.0 }),
                ProfileSpec::new(Shape::SmoothBump).with_feedback(0.1),
            ],
            NoiseCondition::BInfty,
            g,
        )
        .unwrap();
        let path = sample_path(6, 0, 2, 1.0 / 64.0, 1.0).unwrap();
        let with_fb = solve(&b, &mixed, &path, 0, SolverOptions::default()).unwrap();
        let mut quiet = path.clone();
        quiet.increments.row_mut(1).fill(0.0);
        let without = solve(&b, &mixed, &quiet, 0, SolverOptions::default()).unwrap();
        assert!(with_fb.values() != without.values());
        assert!(with_fb.values().iter().all(|v| v.abs() < 10.0));
    }

    #[test]
    fn increment_moments_of_brownian_probes() {
        // probe values that are exactly Brownian motion in time
        let dt = 1.0 / 64.0;
        let grid = SpaceTimeGrid::new(Domain::new(1).unwrap(), 3, dt, 0.0).unwrap();
        let tables: Vec<Array2<f64>> = (0..2000u64)
            .map(|s| {
                let p = sample_path(31, s, 1, dt, 1.0).unwrap();
                let mut w = Array2::zeros((1, 65));
                for m in 0..64 {
                    w[[0, m + 1]] = w[[0, m]] + p.increments[[0, m]];
                }
                w
            })
            .collect();
        let ens = point_ensemble(grid, vec![1], &tables).unwrap();
        let z = |level| EnsemblePoint { probe: 0, level };
        let pairs: Vec<_> = [1usize, 2, 4, 8, 16].iter().map(|&d| (z(32 + d), z(32))).collect();
        let rep = increment_moments(&ens, &pairs, 2.0, 1).unwrap();
        assert!((rep.exponent - 1.0).abs() < 0.1, "{}", rep.exponent);
        assert!(rep.exponent_ci.contains(rep.exponent));
        for m in &rep.moments {
            assert!((m.kurtosis - 3.0).abs() < 0.4, "{}", m.kurtosis);
            assert!(m.ci.contains(m.estimate));
        }
        let same = increment_moments(&ens, &[(z(3), z(3))], 2.0, 1).unwrap();
        assert_eq!(same.moments[0].estimate, 0.0);
        let small = point_ensemble(grid, vec![1], &tables[..10]).unwrap();
        assert!(matches!(
            increment_moments(&small, &pairs, 2.0, 1),
            Err(SolverError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn raw_dump_round_trips_solver_output() {
        let b = laplace(17);
        let one = forcing(17, Shape::Constant { value: 1.0 });
        let path = sample_path(9, 2, 1, 1.0 / 16.0, 1.0).unwrap();
        let u = solve(&b, &one, &path, 0, SolverOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        u.write_raw(dir.path(), "s2").unwrap();
        let back = SpaceTimeField::read_raw(dir.path(), "s2").unwrap();
        assert_eq!(back.values(), u.values());
        assert_eq!(back.provenance().sample_index, 2);
    }
}
