//! The deterministic solution operator `S_t` of `dv/dt = A v` with zero
//! Dirichlet data, its Green kernel, and numerical checks of the
//! smoothing estimates it satisfies.
//!
//! Two backends: an exact modal one for `Delta + c` (constant `c`), and
//! implicit finite differences (Crank-Nicolson or backward Euler) for any
//! validated [`OperatorSpec`].

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SpatialGrid;
use crate::linalg::{bicgstab, CsrMatrix, LinalgError, SineBasis, TridiagonalLu};
use crate::operators::{OperatorError, OperatorSpec};
use crate::regularity::spatial_seminorms;
use crate::scalar::Real;
use crate::stats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemigroupError {
    #[error("evolution time {0} is negative")]
    NegativeTime(f64),
    #[error("backend mismatch: {0}")]
    Mismatch(String),
    #[error("field has {got} values, grid has {expected} nodes")]
    Shape { expected: usize, got: usize },
    #[error("kernel source node {0} lies on the boundary")]
    BoundarySource(usize),
    #[error("need at least {need} times for a fit, got {got}")]
    InsufficientPoints { need: usize, got: usize },
    #[error("integrability exponent p = {0} must exceed 1")]
    Exponent(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Spectral,
    ImplicitFd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FdScheme {
    #[default]
    CrankNicolson,
    BackwardEuler,
}

#[derive(Debug, Clone)]
enum Engine<T> {
    Spectral {
        basis: SineBasis<T>,
        /// Decay rate `lambda_k - c` per (flattened) mode.
        rates: Array1<T>,
    },
    Fd {
        matrix: CsrMatrix<T>,
        scheme: FdScheme,
        max_inner: T,
    },
}

#[derive(Debug, Clone)]
pub struct SemigroupBackend<T> {
    spec: OperatorSpec<T>,
    grid: SpatialGrid,
    interior: Vec<usize>,
    engine: Engine<T>,
}

impl<T: Real> SemigroupBackend<T> {
    /// Modal backend for `Delta + c`, `n_modes` sine modes per axis
    /// (capped at `nx - 2`, where the discrete transform is exact).
    pub fn spectral(spec: &OperatorSpec<T>, grid: SpatialGrid, n_modes: usize) -> Result<Self, SemigroupError> {
        let spec = spec.validate(&grid)?;
        let c = spec.laplacian_shift().ok_or_else(|| {
            SemigroupError::Mismatch("spectral backend needs a = I, b = 0 and constant c".into())
        })?;
        let basis = SineBasis::new(grid.nx(), n_modes);
        let m = basis.modes();
        let rates = match grid.dim() {
            1 => Array1::from_shape_fn(m, |k| SineBasis::<T>::eigenvalue(k + 1) - c),
            2 => Array1::from_shape_fn(m * m, |k| {
                SineBasis::<T>::eigenvalue(k / m + 1) + SineBasis::<T>::eigenvalue(k % m + 1) - c
            }),
            d => return Err(SemigroupError::Mismatch(format!("dimension {d}"))),
        };
        Ok(Self {
            spec,
            interior: grid.interior_indices(),
            grid,
            engine: Engine::Spectral { basis, rates },
        })
    }

    /// Finite-difference backend; inner steps default to `h / 4`.
    pub fn implicit_fd(spec: &OperatorSpec<T>, grid: SpatialGrid, scheme: FdScheme) -> Result<Self, SemigroupError> {
        let spec = spec.validate(&grid)?;
        let matrix = spec.assemble(&grid)?;
        Ok(Self {
            spec,
            interior: grid.interior_indices(),
            engine: Engine::Fd {
                matrix,
                scheme,
                max_inner: grid.spacing::<T>() * T::lit(0.25),
            },
            grid,
        })
    }

    /// Caps the inner finite-difference step (no effect on the modal backend).
    pub fn with_max_inner_step(mut self, tau: T) -> Self {
        if let Engine::Fd { max_inner, .. } = &mut self.engine {
            *max_inner = tau;
        }
        self
    }

    pub fn with_scheme(mut self, new: FdScheme) -> Self {
        if let Engine::Fd { scheme, .. } = &mut self.engine {
            *scheme = new;
        }
        self
    }

    pub fn kind(&self) -> BackendKind {
        match self.engine {
            Engine::Spectral { .. } => BackendKind::Spectral,
            Engine::Fd { .. } => BackendKind::ImplicitFd,
        }
    }

    pub fn spec(&self) -> &OperatorSpec<T> {
        &self.spec
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn interior_indices(&self) -> &[usize] {
        &self.interior
    }

    /// Number of modes per axis (spectral) or `None`.
    pub fn n_modes(&self) -> Option<usize> {
        match &self.engine {
            Engine::Spectral { basis, .. } => Some(basis.modes()),
            Engine::Fd { .. } => None,
        }
    }

    /// Modal decay rates `lambda_k - c`, flattened (spectral only).
    pub fn modal_rates(&self) -> Option<&Array1<T>> {
        match &self.engine {
            Engine::Spectral { rates, .. } => Some(rates),
            Engine::Fd { .. } => None,
        }
    }

    pub fn restrict(&self, full: ArrayView1<T>) -> Array1<T> {
        Array1::from_iter(self.interior.iter().map(|&i| full[i]))
    }

    pub fn embed(&self, interior: ArrayView1<T>) -> Array1<T> {
        let mut out = Array1::zeros(self.grid.len());
        for (k, &i) in self.interior.iter().enumerate() {
            out[i] = interior[k];
        }
        out
    }

    /// Interior nodal values to the backend's state representation
    /// (modal coefficients or the values themselves).
    pub fn encode(&self, interior: ArrayView1<T>) -> Array1<T> {
        match &self.engine {
            Engine::Spectral { basis, .. } => match self.grid.dim() {
                1 => basis.forward(interior),
                _ => {
                    let n = basis.interior_len();
                    let block = interior.to_owned().into_shape_with_order((n, n)).expect("square interior");
                    let c = basis.forward_2d(&block);
                    let m = c.len();
                    c.into_shape_with_order(m).expect("flatten")
                }
            },
            Engine::Fd { .. } => interior.to_owned(),
        }
    }

    pub fn decode(&self, state: ArrayView1<T>) -> Array1<T> {
        match &self.engine {
            Engine::Spectral { basis, .. } => match self.grid.dim() {
                1 => basis.inverse(state),
                _ => {
                    let m = basis.modes();
                    let c = state.to_owned().into_shape_with_order((m, m)).expect("square modes");
                    let b = basis.inverse_2d(&c);
                    let n = b.len();
                    b.into_shape_with_order(n).expect("flatten")
                }
            },
            Engine::Fd { .. } => state.to_owned(),
        }
    }

    /// Decodes many states at once; rows are states, result rows interior fields.
    pub fn decode_rows(&self, states: &Array2<T>) -> Array2<T> {
        match &self.engine {
            Engine::Spectral { basis, .. } if self.grid.dim() == 1 => states.dot(basis.table()),
            _ => {
                let mut out = Array2::zeros((states.nrows(), self.interior.len()));
                for (mut row, s) in out.rows_mut().into_iter().zip(states.rows()) {
                    row.assign(&self.decode(s));
                }
                out
            }
        }
    }

    /// Linear functional returning the value at interior node `k` from a state.
    pub fn probe_weights(&self, k: usize) -> Array1<T> {
        let mut e = Array1::zeros(self.interior.len());
        e[k] = T::one();
        match &self.engine {
            Engine::Spectral { .. } => {
                // the synthesis map is the transpose of analysis up to the weight h^d
                let h = self.grid.spacing::<T>();
                self.encode(e.view()).mapv(|v| v / h.powi(self.grid.dim() as i32))
            }
            Engine::Fd { .. } => e,
        }
    }

    /// Stepper advancing the state by a fixed `dt`.
    pub fn propagator(&self, dt: T) -> Result<Propagator<T>, SemigroupError> {
        self.propagator_with(dt, None, 1)
    }

    fn propagator_with(
        &self,
        dt: T,
        scheme_override: Option<FdScheme>,
        min_steps: usize,
    ) -> Result<Propagator<T>, SemigroupError> {
        if dt < T::zero() {
            return Err(SemigroupError::NegativeTime(dt.to_f64_lossy()));
        }
        Ok(match &self.engine {
            Engine::Spectral { rates, .. } => Propagator(Step::Modal {
                decay: rates.mapv(|r| (-r * dt).exp()),
            }),
            Engine::Fd {
                matrix,
                scheme,
                max_inner,
            } => {
                let scheme = scheme_override.unwrap_or(*scheme);
                let ratio = (dt / *max_inner).ceil().to_usize().unwrap_or(1);
                let substeps = ratio.max(min_steps).max(1);
                let tau = dt / T::from_usize_exact(substeps);
                let (implicit, explicit) = match scheme {
                    FdScheme::CrankNicolson => (T::lit(0.5) * tau, Some(T::lit(0.5) * tau)),
                    FdScheme::BackwardEuler => (tau, None),
                };
                let lhs = matrix.shifted(T::one(), -implicit);
                let rhs = explicit.map(|e| matrix.shifted(T::one(), e));
                let solver = match lhs.to_tridiagonal() {
                    Some(tri) => LinearSolve::Thomas(tri.factor()?),
                    None => LinearSolve::Krylov(lhs),
                };
                Propagator(Step::Fd {
                    solver,
                    rhs,
                    substeps,
                    skip: dt == T::zero(),
                })
            }
        })
    }

    /// `S_t F` for a full-grid field `F`; boundary values of `F` are read as zero.
    pub fn evolve(&self, f: ArrayView1<T>, t: T) -> Result<Array1<T>, SemigroupError> {
        self.evolve_scheme(f, t, None, 1)
    }

    fn evolve_scheme(
        &self,
        f: ArrayView1<T>,
        t: T,
        scheme: Option<FdScheme>,
        min_steps: usize,
    ) -> Result<Array1<T>, SemigroupError> {
        if f.len() != self.grid.len() {
            return Err(SemigroupError::Shape {
                expected: self.grid.len(),
                got: f.len(),
            });
        }
        if t < T::zero() {
            return Err(SemigroupError::NegativeTime(t.to_f64_lossy()));
        }
        let mut state = self.encode(self.restrict(f).view());
        self.propagator_with(t, scheme, min_steps)?.apply(&mut state)?;
        Ok(self.embed(self.decode(state.view()).view()))
    }

    /// `S_t` applied to the discrete delta of mass 1 at `source`.
    ///
    /// The finite-difference backend switches to backward Euler with at
    /// least 64 inner steps here, which keeps the kernel nonnegative.
    pub fn green_kernel(&self, source: usize, t: T) -> Result<GreenKernel<T>, SemigroupError> {
        if source >= self.grid.len() || self.grid.is_boundary(source) {
            return Err(SemigroupError::BoundarySource(source));
        }
        let h = self.grid.spacing::<T>();
        let mut delta = Array1::zeros(self.grid.len());
        delta[source] = T::one() / h.powi(self.grid.dim() as i32);
        let values = self.evolve_scheme(delta.view(), t, Some(FdScheme::BackwardEuler), 64)?;
        Ok(GreenKernel { source, t, values })
    }

    /// Fits the slope of `log ||G(x0, ., t)||_{L^p}` against `log t` with
    /// the source at the cube centre; `p = inf` is allowed.
    pub fn fit_kernel_decay(&self, p: f64, t_list: &[f64]) -> Result<KernelDecayFit, SemigroupError> {
        if !(p > 1.0) {
            return Err(SemigroupError::Exponent(p));
        }
        if t_list.len() < 4 {
            return Err(SemigroupError::InsufficientPoints {
                need: 4,
                got: t_list.len(),
            });
        }
        let d = self.grid.dim();
        let source = self.grid.nearest_node(&vec![0.5; d]);
        let mut norms = Vec::with_capacity(t_list.len());
        for &t in t_list {
            let g = self.green_kernel(source, T::lit(t))?;
            norms.push(self.grid.lp_norm(g.values.view(), p));
        }
        let q_inv = 1.0 - 1.0 / p;
        Ok(KernelDecayFit {
            p,
            slope: stats::log_log_slope(t_list, &norms),
            target: -(d as f64) * q_inv / 2.0,
            times: t_list.to_vec(),
            norms,
        })
    }

    /// Measures how `S_t F` gains regularity: the `C^theta` norm over
    /// `t_list` and the sup of time increments over `deltas` at `t_fixed`.
    pub fn fit_smoothing_exponents(
        &self,
        f: ArrayView1<T>,
        theta: f64,
        t_list: &[f64],
        t_fixed: f64,
        deltas: &[f64],
    ) -> Result<SmoothingReport, SemigroupError> {
        let mut holder = Vec::with_capacity(t_list.len());
        for &t in t_list {
            let v = self.evolve(f, T::lit(t))?;
            holder.push(holder_norm(&self.grid, v.view(), theta));
        }
        let ratios: Vec<f64> = holder
            .iter()
            .zip(t_list)
            .map(|(n, t)| n * t.powf(theta / 2.0))
            .collect();
        let base = self.evolve(f, T::lit(t_fixed))?;
        let mut increments = Vec::with_capacity(deltas.len());
        for &delta in deltas {
            let later = self.evolve(base.view(), T::lit(delta))?;
            let diff = later
                .iter()
                .zip(base.iter())
                .fold(0.0f64, |m, (a, b)| m.max((*a - *b).to_f64_lossy().abs()));
            increments.push(diff);
        }
        let fit_ok = |xs: &[f64], ys: &[f64]| {
            if xs.len() >= 2 && ys.iter().all(|y| *y > 0.0) {
                stats::log_log_slope(xs, ys)
            } else {
                f64::NAN
            }
        };
        Ok(SmoothingReport {
            theta,
            space_slope: fit_ok(t_list, &holder),
            ratio_spread: stats::max_min_ratio(&ratios),
            max_ratio: ratios.iter().cloned().fold(0.0, f64::max),
            time_slope: fit_ok(deltas, &increments),
            times: t_list.to_vec(),
            holder_norms: holder,
            ratios,
            t_fixed,
            deltas: deltas.to_vec(),
            increments,
        })
    }

    /// Empirical Hoelder exponent on the ladder `0.05, 0.10, ..., 0.50`:
    /// starting from `F = M sign(x_1 - 1/2)`, the largest `theta` whose
    /// ratio `||S_t F||_{C^theta} t^{theta/2} / ||S_t F||_inf` varies by at
    /// most a factor 3 over two decades of `t` starting at `16 h^2`.
    ///
    /// Dividing by the sup norm removes the overall exponential decay, so
    /// only loss of regularity as `t -> 0` can spread the ratio.
    pub fn fit_nash_exponent(&self, amplitude: f64) -> Result<NashReport, SemigroupError> {
        let h = self.grid.spacing::<f64>();
        let t_lo = 16.0 * h * h;
        let times = stats::logspace(t_lo, 100.0 * t_lo, 7);
        let rough = Array1::from_shape_fn(self.grid.len(), |i| {
            if self.grid.is_boundary(i) {
                return T::zero();
            }
            let x0 = self.grid.coords::<f64>(i)[0];
            T::lit(amplitude * if x0 > 0.5 { 1.0 } else if x0 < 0.5 { -1.0 } else { 0.0 })
        });
        let ladder: Vec<f64> = (1..=10).map(|k| 0.05 * k as f64).collect();
        let mut sups = Vec::with_capacity(times.len());
        let mut semis = Vec::with_capacity(times.len());
        for &t in &times {
            let v = self.evolve(rough.view(), T::lit(t))?;
            sups.push(self.grid.lp_norm(v.view(), f64::INFINITY));
            semis.push(spatial_seminorms(&self.grid, v.view(), &ladder));
        }
        let rungs: Vec<NashRung> = ladder
            .iter()
            .enumerate()
            .map(|(q, &theta)| {
                let ratios: Vec<f64> = times
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (sups[i] + semis[i][q]) * t.powf(theta / 2.0) / sups[i])
                    .collect();
                let spread = stats::max_min_ratio(&ratios);
                NashRung {
                    theta,
                    spread,
                    bounded: spread <= NASH_SPREAD,
                }
            })
            .collect();
        let alpha = rungs
            .iter()
            .filter(|r| r.bounded)
            .map(|r| r.theta)
            .fold(0.0, f64::max);
        Ok(NashReport { alpha, times, rungs })
    }
}

/// Factor by which a ratio may vary and still count as bounded on the Nash ladder.
pub const NASH_SPREAD: f64 = 3.0;

#[derive(Debug, Clone)]
enum LinearSolve<T> {
    Thomas(TridiagonalLu<T>),
    Krylov(CsrMatrix<T>),
}

/// Fixed-`dt` evolution of a backend state.
#[derive(Debug, Clone)]
pub struct Propagator<T>(Step<T>);

#[derive(Debug, Clone)]
enum Step<T> {
    Modal {
        decay: Array1<T>,
    },
    Fd {
        solver: LinearSolve<T>,
        rhs: Option<CsrMatrix<T>>,
        substeps: usize,
        skip: bool,
    },
}

impl<T: Real> Propagator<T> {
    pub fn apply(&self, state: &mut Array1<T>) -> Result<(), SemigroupError> {
        match &self.0 {
            Step::Modal { decay } => {
                *state *= decay;
                Ok(())
            }
            Step::Fd {
                solver,
                rhs,
                substeps,
                skip,
            } => {
                if *skip {
                    return Ok(());
                }
                for _ in 0..*substeps {
                    let mut b = match rhs {
                        Some(m) => m.matvec(state.view()),
                        None => state.clone(),
                    };
                    match solver {
                        LinearSolve::Thomas(lu) => {
                            lu.solve_in_place(&mut b);
                            *state = b;
                        }
                        LinearSolve::Krylov(m) => {
                            let tol = (T::epsilon() * T::lit(64.0)).max(T::lit(1e-12));
                            *state = bicgstab(m, b.view(), Some(state.view()), tol, 2000)?;
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Per-mode decay factors of the modal propagator.
    pub fn decay(&self) -> Option<&Array1<T>> {
        match &self.0 {
            Step::Modal { decay } => Some(decay),
            Step::Fd { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreenKernel<T> {
    pub source: usize,
    pub t: T,
    pub values: Array1<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDecayFit {
    pub p: f64,
    pub slope: f64,
    /// `-d/(2q)` with `1/p + 1/q = 1`.
    pub target: f64,
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub theta: f64,
    pub times: Vec<f64>,
    pub holder_norms: Vec<f64>,
    /// `||S_t F||_{C^theta} t^{theta/2}` per time.
    pub ratios: Vec<f64>,
    pub ratio_spread: f64,
    pub max_ratio: f64,
    pub space_slope: f64,
    pub t_fixed: f64,
    pub deltas: Vec<f64>,
    pub increments: Vec<f64>,
    pub time_slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashRung {
    pub theta: f64,
    pub spread: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    /// Largest bounded ladder value, 0 if none.
    pub alpha: f64,
    pub times: Vec<f64>,
    pub rungs: Vec<NashRung>,
}

/// Discrete `C^theta` norm of a spatial field: sup plus seminorm.
pub fn holder_norm<T: Real>(grid: &SpatialGrid, v: ArrayView1<T>, theta: f64) -> f64 {
    grid.lp_norm(v, f64::INFINITY) + spatial_seminorms(grid, v, &[theta])[0]
}

/// Both sides of `[v]_theta <= 2 ||v||_inf^{1-theta} [v]_1^theta` on the grid.
pub fn interpolation_check<T: Real>(grid: &SpatialGrid, v: ArrayView1<T>, theta: f64) -> (f64, f64) {
    let s = spatial_seminorms(grid, v, &[theta, 1.0]);
    let sup = grid.lp_norm(v, f64::INFINITY);
    (s[0], 2.0 * sup.powf(1.0 - theta) * s[1].powf(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn lap1(nx: usize) -> (SpatialGrid, SemigroupBackend<f64>, SemigroupBackend<f64>) {
        let g = SpatialGrid::new(1, nx);
        let spec = OperatorSpec::laplacian(1);
        (
            g,
            SemigroupBackend::spectral(&spec, g, nx).unwrap(),
            SemigroupBackend::implicit_fd(&spec, g, FdScheme::CrankNicolson).unwrap(),
        )
    }

    fn sample(g: &SpatialGrid, f: impl Fn(f64) -> f64) -> Array1<f64> {
        Array1::from_shape_fn(g.len(), |i| f(g.coords::<f64>(i)[0]))
    }

    fn sup_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn eigenmode_decays_exactly() {
        let (g, spec, _) = lap1(65);
        let f = sample(&g, |x| (PI * x).sin());
        let v = spec.evolve(f.view(), 0.1).unwrap();
        let want = f.mapv(|y| y * (-PI * PI * 0.1).exp());
        assert!(sup_diff(&v, &want) < 1e-12);
    }

    #[test]
    fn time_zero_is_identity() {
        let (g, spec, fd) = lap1(33);
        let f = sample(&g, |x| x * (1.0 - x) * (7.0 * x).cos());
        let mut f0 = f.clone();
        f0[0] = 0.0;
        f0[32] = 0.0;
        assert!(sup_diff(&spec.evolve(f0.view(), 0.0).unwrap(), &f0) < 1e-13);
        assert_eq!(fd.evolve(f0.view(), 0.0).unwrap(), f0);
        assert!(matches!(
            fd.evolve(f0.view(), -1.0),
            Err(SemigroupError::NegativeTime(_))
        ));
    }

    #[test]
    fn spectral_rejects_variable_coefficients() {
        let g = SpatialGrid::new(1, 17);
        let err = SemigroupBackend::spectral(&OperatorSpec::<f64>::smooth_variable(1, 0.3), g, 15).unwrap_err();
        assert!(matches!(err, SemigroupError::Mismatch(_)));
    }

    #[test]
    fn backends_agree_on_smooth_data() {
        let (g, spec, fd) = lap1(257);
        let f = sample(&g, |x| x * (1.0 - x));
        let a = spec.evolve(f.view(), 0.1).unwrap();
        let b = fd.evolve(f.view(), 0.1).unwrap();
        let rel = sup_diff(&a, &b) / a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rel <= 1e-3, "relative discrepancy {rel}");
    }

    #[test]
    fn semigroup_property() {
        let (g, spec, fd) = lap1(129);
        let f = sample(&g, |x| x * (1.0 - x));
        for (backend, tol) in [(&spec, 1e-6), (&fd, 1e-4)] {
            for (s, t) in [(0.01, 0.03), (0.05, 0.05), (0.002, 0.2)] {
                let two = backend.evolve(backend.evolve(f.view(), s).unwrap().view(), t).unwrap();
                let one = backend.evolve(f.view(), s + t).unwrap();
                assert!(sup_diff(&one, &two) <= tol, "{:?} s={s} t={t}", backend.kind());
            }
        }
    }

    #[test]
    fn maximum_principle_and_decay_rate() {
        let (g, spec, fd) = lap1(65);
        let be = fd.clone().with_scheme(FdScheme::BackwardEuler);
        let rough = sample(&g, |x| if (x * 16.0).floor() as i64 % 2 == 0 { 1.0 } else { -1.0 });
        let mut rough = rough;
        rough[0] = 0.0;
        rough[64] = 0.0;
        for t in [1e-4, 1e-3, 1e-2] {
            let v = be.evolve(rough.view(), t).unwrap();
            assert!(v.iter().all(|x| x.abs() <= 1.0 + 1e-12));
        }
        let smooth = sample(&g, |x| x * (1.0 - x));
        let times = [0.3, 0.4, 0.5, 0.6];
        let sups: Vec<f64> = times
            .iter()
            .map(|&t| g.lp_norm(spec.evolve(smooth.view(), t).unwrap().view(), f64::INFINITY))
            .collect();
        let lt: Vec<f64> = sups.iter().map(|s| s.ln()).collect();
        let slope = stats::linear_fit(&times, &lt).slope;
        assert!((slope + PI * PI).abs() <= 0.1 * PI * PI, "{slope}");
    }

    #[test]
    fn kernel_mass_and_gaussian_limit() {
        let (g, spec, _) = lap1(257);
        let src = g.nearest_node(&[0.5]);
        let h = g.spacing::<f64>();
        let mut last = f64::INFINITY;
        for t in [1e-4, 1e-3, 1e-2, 1e-1] {
            let k = spec.green_kernel(src, t).unwrap();
            let mass: f64 = k.values.iter().map(|v| v * h).sum();
            assert!(mass <= 1.0 + 1e-6 && mass <= last + 1e-12, "mass {mass} at {t}");
            last = mass;
        }
        for t in [2e-4, 1e-3] {
            let k = spec.green_kernel(src, t).unwrap();
            let peak = 1.0 / (4.0 * PI * t).sqrt();
            let err = (0..g.len())
                .map(|i| {
                    let x = g.coords::<f64>(i)[0];
                    (k.values[i] - peak * (-(x - 0.5).powi(2) / (4.0 * t)).exp()).abs()
                })
                .fold(0.0, f64::max);
            assert!(err <= 0.05 * peak, "t={t}: {err} vs {peak}");
        }
    }

    #[test]
    fn kernel_is_symmetric() {
        let g = SpatialGrid::new(1, 65);
        let spec = OperatorSpec::<f64>::divergence_step(1, 1.0, 10.0, 0.5);
        let fd = SemigroupBackend::implicit_fd(&spec, g, FdScheme::CrankNicolson).unwrap();
        let (a, b) = (g.nearest_node(&[0.3]), g.nearest_node(&[0.7]));
        let ka = fd.green_kernel(a, 0.01).unwrap();
        let kb = fd.green_kernel(b, 0.01).unwrap();
        assert_abs_diff_eq!(ka.values[b], kb.values[a], epsilon = 1e-9 * ka.values[b].abs().max(1.0));
        assert!(ka.values.iter().all(|v| *v >= -1e-12));
        assert!(matches!(fd.green_kernel(0, 0.01), Err(SemigroupError::BoundarySource(0))));
    }

    #[test]
    fn kernel_decay_slopes() {
        let (_, spec, _) = lap1(257);
        let times = stats::logspace(4e-4, 1e-2, 6);
        let fit = spec.fit_kernel_decay(2.0, &times).unwrap();
        assert_abs_diff_eq!(fit.target, -0.25);
        assert!((fit.slope - fit.target).abs() <= 0.15, "{fit:?}");
        let sup = spec.fit_kernel_decay(64.0, &times).unwrap();
        assert!((sup.slope + 0.5).abs() <= 0.15, "{sup:?}");
        assert!(matches!(
            spec.fit_kernel_decay(2.0, &times[..3]),
            Err(SemigroupError::InsufficientPoints { .. })
        ));
        assert!(matches!(spec.fit_kernel_decay(1.0, &times), Err(SemigroupError::Exponent(_))));
    }

    #[test]
    fn two_dimensional_backends_agree() {
        let g = SpatialGrid::new(2, 65);
        let spec = OperatorSpec::laplacian(2);
        let a = SemigroupBackend::spectral(&spec, g, 63).unwrap();
        let b = SemigroupBackend::implicit_fd(&spec, g, FdScheme::CrankNicolson).unwrap();
        let f = Array1::from_shape_fn(g.len(), |i| {
            let x = g.coords::<f64>(i);
            x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
        });
        let va = a.evolve(f.view(), 0.02).unwrap();
        let vb = b.evolve(f.view(), 0.02).unwrap();
        let scale = va.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(sup_diff(&va, &vb) / scale < 1e-3);
    }

    #[test]
    fn probe_weights_read_nodal_values() {
        let g = SpatialGrid::new(2, 9);
        let spec = SemigroupBackend::<f64>::spectral(&OperatorSpec::laplacian(2), g, 7).unwrap();
        let interior = Array1::from_shape_fn(49, |i| (i as f64 * 0.31).sin());
        let state = spec.encode(interior.view());
        for k in [0, 17, 48] {
            assert_abs_diff_eq!(state.dot(&spec.probe_weights(k)), interior[k], epsilon = 1e-12);
        }
        let rows = Array2::from_shape_fn((2, 49), |(r, k)| state[k] * (r + 1) as f64);
        let dec = spec.decode_rows(&rows);
        assert_abs_diff_eq!(dec[[1, 5]], 2.0 * interior[5], epsilon = 1e-12);
    }

    #[test]
    fn smoothing_of_rough_data() {
        use rand::{Rng, SeedableRng};
        let (g, spec, _) = lap1(257);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let checker = Array1::from_shape_fn(g.len(), |i| {
            if g.is_boundary(i) {
                0.0
            } else if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        });
        let times = stats::logspace(1e-3, 1e-1, 5);
        let rep = spec
            .fit_smoothing_exponents(checker.view(), 0.5, &times, 0.01, &stats::logspace(1e-4, 1e-2, 5))
            .unwrap();
        // bounded by a modest multiple of M = 1; the ratio only falls as t grows
        assert!(rep.max_ratio < 1.0, "{rep:?}");
        assert!(rep.ratios.windows(2).all(|w| w[1] <= w[0]), "{rep:?}");
        let smooth = sample(&g, |x| (PI * x).sin());
        let rep = spec.fit_smoothing_exponents(smooth.view(), 0.5, &times, 0.01, &[1e-3, 1e-2]).unwrap();
        assert!(rep.holder_norms.iter().all(|n| *n < 3.0));
        assert!(rep.time_slope >= 0.5 - 0.15);
    }

    #[test]
    fn interpolation_inequality_holds_on_samples() {
        let g = SpatialGrid::new(1, 65);
        let v = sample(&g, |x| (9.0 * x).sin() * x * (1.0 - x) + if x > 0.4 { 0.2 } else { 0.0 });
        for theta in [0.05, 0.25, 0.5, 0.9] {
            let (lhs, rhs) = interpolation_check(&g, v.view(), theta);
            assert!(lhs <= rhs, "theta={theta}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn nash_ladder() {
        let g = SpatialGrid::new(1, 129);
        let lap = OperatorSpec::<f64>::divergence_step(1, 1.0, 1.0, 0.5);
        let fd = SemigroupBackend::implicit_fd(&lap, g, FdScheme::BackwardEuler).unwrap();
        assert_eq!(fd.fit_nash_exponent(1.0).unwrap().alpha, 0.5);
        let step = OperatorSpec::<f64>::divergence_step(1, 1.0, 10.0, 0.5);
        let fd = SemigroupBackend::implicit_fd(&step, g, FdScheme::BackwardEuler).unwrap();
        assert!(fd.fit_nash_exponent(1.0).unwrap().alpha > 0.0);
    }
}
