//! Monte Carlo orchestration: ensembles of mild solutions, per-sample
//! analysis, and the aggregate reports (moments across windows, growth
//! with a positive zero-order term, threshold scans over spike widths,
//! and tail decay).
//!
//! Samples run in parallel on the current rayon pool. Sample `i` always
//! uses noise stream `(seed, i)` and results are collected in sample
//! order, so reports do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::SpaceTimeField;
use crate::grid::SpatialGrid;
use crate::mild_solver::{MildSolver, SolverError, SolverOptions};
use crate::noise::{make_forcing, sample_path, ForcingSpec, NoiseCondition, NoiseError, ProfileSpec, Shape};
use crate::operators::{OperatorError, OperatorSpec};
use crate::regularity::{chaining_event_scan, holder_seminorms, tail_to_moments, HolderMode, RegularityError, TailMoments};
use crate::scalar::Real;
use crate::semigroup::{FdScheme, SemigroupBackend, SemigroupError};
use crate::stats::{self, Interval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("need at least {need} samples, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Regularity(#[from] RegularityError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Named operator families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorPreset {
    Laplacian,
    /// `Delta + c`, constant `c`.
    Reaction { c: f64 },
    /// Smooth variable non-divergence coefficients.
    SmoothVariable { amplitude: f64 },
    /// Divergence form, `a` jumping from `below` to `above` at `x_1 = at`.
    DivergenceStep { below: f64, above: f64, at: f64 },
}

impl OperatorPreset {
    pub fn build<T: Real>(&self, dim: usize) -> OperatorSpec<T> {
        match *self {
            Self::Laplacian => OperatorSpec::laplacian(dim),
            Self::Reaction { c } => OperatorSpec::with_reaction(dim, T::lit(c)),
            Self::SmoothVariable { amplitude } => OperatorSpec::smooth_variable(dim, T::lit(amplitude)),
            Self::DivergenceStep { below, above, at } => {
                OperatorSpec::divergence_step(dim, T::lit(below), T::lit(above), T::lit(at))
            }
        }
    }

    pub fn label(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendChoice {
    /// Modal backend; `modes` per axis, all of them when absent.
    Spectral {
        #[serde(default)]
        modes: Option<usize>,
    },
    /// Implicit finite differences. Ensembles default to backward Euler,
    /// which damps the stiff modes fed by every noise increment.
    ImplicitFd {
        #[serde(default = "default_fd_scheme")]
        scheme: FdScheme,
    },
}

fn default_fd_scheme() -> FdScheme {
    FdScheme::BackwardEuler
}

impl BackendChoice {
    pub fn build<T: Real>(&self, spec: &OperatorSpec<T>, grid: SpatialGrid) -> Result<SemigroupBackend<T>, SemigroupError> {
        match *self {
            Self::Spectral { modes } => SemigroupBackend::spectral(spec, grid, modes.unwrap_or(grid.nx() - 2)),
            Self::ImplicitFd { scheme } => SemigroupBackend::implicit_fd(spec, grid, scheme),
        }
    }
}

/// Pair-scan budget used by the experiments: level-6 sub-lattice in `d = 1`.
pub const EXPERIMENT_NODE_LIMIT: usize = 65 * 65;

fn default_node_limit() -> usize {
    EXPERIMENT_NODE_LIMIT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub operator: OperatorPreset,
    pub forcing: Vec<ProfileSpec>,
    pub condition: NoiseCondition,
    pub dim: usize,
    pub nx: usize,
    pub dt: f64,
    /// Window starts `T`; each window is `[T, T + 1]`.
    pub windows: Vec<u32>,
    pub samples: usize,
    pub k_list: Vec<f64>,
    pub thetas: Vec<f64>,
    pub seed: u64,
    pub backend: BackendChoice,
    #[serde(default = "default_node_limit")]
    pub node_limit: usize,
    #[serde(default)]
    pub allow_growth: bool,
    /// Exponent `theta_1` of the chaining check (`q = 2^{-theta_1}`).
    #[serde(default)]
    pub chaining_theta: Option<f64>,
}

pub const MIN_PLAN_SAMPLES: usize = 100;

impl ExperimentPlan {
    /// Laplacian, `f = 1`, `d = 1`, `nx = 129`, `dt = 2^-10`, modal backend.
    pub fn desk_default() -> Self {
        Self {
            operator: OperatorPreset::Laplacian,
            forcing: vec![ProfileSpec::new(Shape::Constant { value: 1.0 })],
            condition: NoiseCondition::BInfty,
            dim: 1,
            nx: 129,
            dt: 1.0 / 1024.0,
            windows: vec![0, 1, 2, 4, 8],
            samples: 500,
            k_list: vec![2.0],
            thetas: vec![0.1, 0.25, 0.4],
            seed: 20240601,
            backend: BackendChoice::Spectral { modes: None },
            node_limit: EXPERIMENT_NODE_LIMIT,
            allow_growth: false,
            chaining_theta: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Plan(m));
        if self.samples < MIN_PLAN_SAMPLES {
            return bad(format!("samples = {} below {MIN_PLAN_SAMPLES}", self.samples));
        }
        if let Some(t) = self.thetas.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return bad(format!("theta = {t} not in (0,1)"));
        }
        if let Some(t) = self.chaining_theta {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("chaining theta = {t} not in (0,1)"));
            }
        }
        if self.windows.is_empty() {
            return bad("no windows".into());
        }
        if let Some(k) = self.k_list.iter().find(|k| !(**k >= 0.0)) {
            return bad(format!("moment order {k} is negative"));
        }
        if !(1..=2).contains(&self.dim) {
            return bad(format!("dimension {} not supported", self.dim));
        }
        if self.forcing.is_empty() {
            return bad("no forcing profiles".into());
        }
        Ok(())
    }

    pub fn spatial_grid(&self) -> SpatialGrid {
        SpatialGrid::new(self.dim, self.nx)
    }

    pub fn operator_spec<T: Real>(&self) -> Result<OperatorSpec<T>, ExperimentError> {
        Ok(self.operator.build::<T>(self.dim).validate(&self.spatial_grid())?)
    }

    pub fn build_backend<T: Real>(&self) -> Result<SemigroupBackend<T>, ExperimentError> {
        Ok(self.backend.build(&self.operator_spec::<T>()?, self.spatial_grid())?)
    }

    pub fn build_forcing<T: Real>(&self) -> Result<ForcingSpec<T>, ExperimentError> {
        Ok(make_forcing(self.forcing.clone(), self.condition, self.spatial_grid())?)
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            allow_growth: self.allow_growth,
            ..SolverOptions::default()
        }
    }

    fn horizon(&self) -> f64 {
        f64::from(self.windows.iter().copied().max().unwrap_or(0) + 1)
    }

    fn bootstrap_seed(&self) -> u64 {
        self.seed ^ 0xB007_57A9
    }
}

/// The chaining check on one sample: at `K = k_star (1 + 1e-12)` no
/// event fires, and the seminorm is compared with `4K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainingCheck {
    pub theta1: f64,
    pub q: f64,
    pub k: f64,
    pub event: bool,
    pub seminorm: f64,
    pub holds: bool,
}

/// Analysis of one window of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_index: u64,
    pub window: u32,
    pub sup_norm: f64,
    /// One per plan theta; lower bounds in dyadic mode.
    pub seminorms: Vec<f64>,
    pub upper_bounds: Option<Vec<f64>>,
    pub mode: HolderMode,
    pub chaining: Option<ChainingCheck>,
}

/// Sup norm, Hoelder seminorms and (optionally) the chaining check of one window.
pub fn analyze_field<T: Real>(plan: &ExperimentPlan, field: &SpaceTimeField<T>) -> Result<SampleRecord, ExperimentError> {
    let mut thetas = plan.thetas.clone();
    if let Some(t) = plan.chaining_theta {
        thetas.push(t);
    }
    let rep = holder_seminorms(field, &thetas, plan.node_limit)?;
    let chaining = match plan.chaining_theta {
        Some(theta1) => {
            let q = 2f64.powf(-theta1);
            let n_max = field.grid().max_dyadic_level();
            let k_star = chaining_event_scan(field, 1.0, q, n_max)?.k_star;
            let k = k_star * (1.0 + 1e-12);
            let scan = chaining_event_scan(field, k, q, n_max)?;
            let seminorm = rep.seminorms[thetas.len() - 1];
            Some(ChainingCheck {
                theta1,
                q,
                k,
                event: scan.event,
                seminorm,
                holds: scan.event || seminorm <= 4.0 * k,
            })
        }
        None => None,
    };
    let n = plan.thetas.len();
    Ok(SampleRecord {
        sample_index: field.provenance().sample_index,
        window: field.grid().t0().to_f64_lossy() as u32,
        sup_norm: rep.sup_norm,
        seminorms: rep.seminorms[..n].to_vec(),
        upper_bounds: rep.upper_bounds.map(|u| u[..n].to_vec()),
        mode: rep.mode,
        chaining,
    })
}

/// Fields of sample `index`, one per plan window.
pub fn sample_fields<T: Real>(
    plan: &ExperimentPlan,
    backend: &SemigroupBackend<T>,
    forcing: &ForcingSpec<T>,
    index: u64,
) -> Result<Vec<SpaceTimeField<T>>, ExperimentError> {
    let solver = MildSolver::new(backend, forcing, plan.solver_options())?.with_operator_label(plan.operator.label());
    let path = sample_path(plan.seed, index, forcing.j_count(), plan.dt, plan.horizon())?;
    Ok(solver.solve_windows(&path, &plan.windows)?)
}

/// All sample records, ordered by sample then by plan window.
pub fn simulate_records<T: Real>(plan: &ExperimentPlan) -> Result<Vec<SampleRecord>, ExperimentError> {
    plan.validate()?;
    let backend = plan.build_backend::<T>()?;
    let forcing = plan.build_forcing::<T>()?;
    let per_sample: Vec<Vec<SampleRecord>> = (0..plan.samples as u64)
        .into_par_iter()
        .map(|i| {
            sample_fields(plan, &backend, &forcing, i)?
                .iter()
                .map(|f| analyze_field(plan, f))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub window: u32,
    pub k: f64,
    /// Hoelder exponent, absent for sup-norm moments.
    pub theta: Option<f64>,
    pub estimate: f64,
    pub ci: Interval,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flatness {
    pub k: f64,
    pub theta: Option<f64>,
    /// Max over min of the estimates across windows.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub windows: Vec<u32>,
    pub samples: usize,
    /// `E ||u||^k_{L_inf(Q_T)}`.
    pub sup: Vec<MomentEntry>,
    /// `E ||u||^k_{C^theta(Q_T)}` with `||u||_{C^theta} = sup + seminorm`.
    pub holder: Vec<MomentEntry>,
    /// Same, with the certified seminorm upper bounds where available.
    pub holder_upper: Vec<MomentEntry>,
    pub sup_flatness: Vec<Flatness>,
    pub holder_flatness: Vec<Flatness>,
    /// Fraction of samples whose chaining check held, if run.
    pub chaining_pass_rate: Option<f64>,
}

/// Ratio tolerance for flatness across a window ladder.
pub const T_FLATNESS: f64 = 1.5;
/// Ratio tolerance for flatness across a spike-width ladder.
pub const EPS_FLATNESS: f64 = 3.0;

impl MomentReport {
    pub fn entry(&self, window: u32, k: f64, theta: Option<f64>) -> Option<&MomentEntry> {
        let list = if theta.is_some() { &self.holder } else { &self.sup };
        list.iter().find(|e| e.window == window && e.k == k && e.theta == theta)
    }

    /// Pairs `(window, theta)` where `(E X^2)^{1/2} > (E X^4)^{1/4}`; empty
    /// unless both orders are in the plan.
    pub fn lyapunov_violations(&self) -> Vec<(u32, Option<f64>)> {
        let mut out = Vec::new();
        for e2 in self.sup.iter().chain(&self.holder).filter(|e| e.k == 2.0) {
            if let Some(e4) = self.entry(e2.window, 4.0, e2.theta) {
                if e2.estimate.sqrt() > e4.estimate.powf(0.25) * (1.0 + 1e-12) {
                    out.push((e2.window, e2.theta));
                }
            }
        }
        out
    }
}

fn moment_entry(window: u32, k: f64, theta: Option<f64>, xs: &[f64], seed: u64) -> MomentEntry {
    let powered: Vec<f64> = xs.iter().map(|x| x.powf(k)).collect();
    MomentEntry {
        window,
        k,
        theta,
        estimate: stats::mean(&powered),
        ci: stats::bootstrap_mean(&powered, seed),
        samples: xs.len(),
    }
}

/// Aggregates sample records into moments with bootstrap intervals.
pub fn aggregate(plan: &ExperimentPlan, records: &[SampleRecord]) -> MomentReport {
    let seed = plan.bootstrap_seed();
    let mut sup = Vec::new();
    let mut holder = Vec::new();
    let mut holder_upper = Vec::new();
    for &w in &plan.windows {
        let rs: Vec<&SampleRecord> = records.iter().filter(|r| r.window == w).collect();
        let sups: Vec<f64> = rs.iter().map(|r| r.sup_norm).collect();
        for &k in &plan.k_list {
            sup.push(moment_entry(w, k, None, &sups, seed));
            for (q, &theta) in plan.thetas.iter().enumerate() {
                let norms: Vec<f64> = rs.iter().map(|r| r.sup_norm + r.seminorms[q]).collect();
                holder.push(moment_entry(w, k, Some(theta), &norms, seed));
                let uppers: Option<Vec<f64>> = rs
                    .iter()
                    .map(|r| r.upper_bounds.as_ref().map(|u| r.sup_norm + u[q]))
                    .collect();
                if let Some(u) = uppers.filter(|u| !u.is_empty()) {
                    holder_upper.push(moment_entry(w, k, Some(theta), &u, seed));
                }
            }
        }
    }
    let flat = |list: &[MomentEntry], k: f64, theta: Option<f64>| Flatness {
        k,
        theta,
        ratio: stats::max_min_ratio(
            &list
                .iter()
                .filter(|e| e.k == k && e.theta == theta)
                .map(|e| e.estimate)
                .collect::<Vec<_>>(),
        ),
    };
    let sup_flatness = plan.k_list.iter().map(|&k| flat(&sup, k, None)).collect();
    let holder_flatness = plan
        .k_list
        .iter()
        .flat_map(|&k| plan.thetas.iter().map(move |&t| (k, t)))
        .map(|(k, t)| flat(&holder, k, Some(t)))
        .collect();
    let checks: Vec<bool> = records
        .iter()
        .filter_map(|r| r.chaining.as_ref().map(|c| c.holds))
        .collect();
    let chaining_pass_rate =
        (!checks.is_empty()).then(|| checks.iter().filter(|h| **h).count() as f64 / checks.len() as f64);
    MomentReport {
        windows: plan.windows.clone(),
        samples: plan.samples,
        sup,
        holder,
        holder_upper,
        sup_flatness,
        holder_flatness,
        chaining_pass_rate,
    }
}

pub fn run_moments<T: Real>(plan: &ExperimentPlan) -> Result<(MomentReport, Vec<SampleRecord>), ExperimentError> {
    let records = simulate_records::<T>(plan)?;
    Ok((aggregate(plan, &records), records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub c_bar: f64,
    pub windows: Vec<u32>,
    /// `E ||u||_{L_inf(Q_T)}` per window.
    pub mean_sup: Vec<f64>,
    pub ci: Vec<Interval>,
    /// Slope of `log E||u||` against `T`.
    pub slope: f64,
    pub bound: f64,
    pub within_bound: bool,
    /// Same ensemble under the shifted operator `A - c_bar`.
    pub shifted_mean_sup: Vec<f64>,
    pub shifted_ratio: f64,
}

/// Growth run for an operator with `c_bar >= 0`, and its shifted twin.
pub fn run_growth<T: Real>(plan: &ExperimentPlan) -> Result<GrowthReport, ExperimentError> {
    let spec = plan.operator_spec::<T>()?;
    let c_bar = spec.bounds().map_or(0.0, |b| b.c_bar.to_f64_lossy());
    let growth_plan = ExperimentPlan {
        allow_growth: true,
        k_list: vec![1.0],
        chaining_theta: None,
        ..plan.clone()
    };
    let main = aggregate(&growth_plan, &simulate_records::<T>(&growth_plan)?);
    let shifted_backend = plan.backend.build(&spec.shift_zero_order(T::lit(c_bar))?, plan.spatial_grid())?;
    let forcing = plan.build_forcing::<T>()?;
    let shifted: Vec<Vec<SampleRecord>> = (0..plan.samples as u64)
        .into_par_iter()
        .map(|i| {
            sample_fields(&growth_plan, &shifted_backend, &forcing, i)?
                .iter()
                .map(|f| analyze_field(&growth_plan, f))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let shifted = aggregate(&growth_plan, &shifted.into_iter().flatten().collect::<Vec<_>>());
    let ts: Vec<f64> = plan.windows.iter().map(|&w| f64::from(w)).collect();
    let mean_sup: Vec<f64> = main.sup.iter().map(|e| e.estimate).collect();
    let logs: Vec<f64> = mean_sup.iter().map(|m| m.ln()).collect();
    let slope = stats::linear_fit(&ts, &logs).slope;
    let bound = c_bar + 0.1;
    let shifted_mean_sup: Vec<f64> = shifted.sup.iter().map(|e| e.estimate).collect();
    Ok(GrowthReport {
        c_bar,
        windows: plan.windows.clone(),
        ci: main.sup.iter().map(|e| e.ci).collect(),
        mean_sup,
        slope,
        bound,
        within_bound: slope <= bound,
        shifted_ratio: stats::max_min_ratio(&shifted_mean_sup),
        shifted_mean_sup,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub theta: f64,
    /// `E ||u||^2_{C^theta(Q^0)}` per spike width.
    pub moments: Vec<f64>,
    pub ci: Vec<Interval>,
    pub ratio: f64,
    /// Slope of `log moment` against `log eps` (reported only).
    pub trend: f64,
    /// `theta <= threshold - 0.05`: boundedness is asserted only here.
    pub below_threshold: bool,
    pub bounded: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub p: f64,
    pub threshold: f64,
    pub eps: Vec<f64>,
    pub rows: Vec<ThresholdRow>,
}

/// `1/2 - d/(2p)`.
pub fn holder_threshold(dim: usize, p: f64) -> f64 {
    0.5 - dim as f64 / (2.0 * p)
}

/// Second moments of `C^theta(Q^0)` norms under spike forcings of width
/// `eps` centred at `center`, one ensemble per width.
pub fn run_threshold_scan<T: Real>(
    plan: &ExperimentPlan,
    p: f64,
    eps: &[f64],
    center: Vec<f64>,
) -> Result<ThresholdReport, ExperimentError> {
    let threshold = holder_threshold(plan.dim, p);
    let mut per_eps = Vec::with_capacity(eps.len());
    for &e in eps {
        let sub = ExperimentPlan {
            forcing: vec![ProfileSpec::new(Shape::Spike {
                eps: e,
                p,
                center: center.clone(),
            })],
            condition: NoiseCondition::Bp { p },
            windows: vec![0],
            k_list: vec![2.0],
            chaining_theta: None,
            ..plan.clone()
        };
        per_eps.push(aggregate(&sub, &simulate_records::<T>(&sub)?));
    }
    let log_eps: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let rows = plan
        .thetas
        .iter()
        .map(|&theta| {
            let entries: Vec<&MomentEntry> = per_eps
                .iter()
                .map(|r| r.entry(0, 2.0, Some(theta)).expect("theta in plan"))
                .collect();
            let moments: Vec<f64> = entries.iter().map(|e| e.estimate).collect();
            let ratio = stats::max_min_ratio(&moments);
            let below_threshold = theta <= threshold - 0.05;
            let logs: Vec<f64> = moments.iter().map(|m| m.ln()).collect();
            ThresholdRow {
                theta,
                ci: entries.iter().map(|e| e.ci).collect(),
                trend: stats::linear_fit(&log_eps, &logs).slope,
                ratio,
                below_threshold,
                bounded: below_threshold.then_some(ratio <= EPS_FLATNESS),
                moments,
            }
        })
        .collect();
    Ok(ThresholdReport {
        p,
        threshold,
        eps: eps.to_vec(),
        rows,
    })
}

pub const MIN_TAIL_SAMPLES: usize = 5000;
/// Survival levels bounding the fitted decade.
pub const TAIL_DECADE: (f64, f64) = (0.4, 0.04);
/// Required decay: the fitted slope must not exceed this.
pub const TAIL_SLOPE_CEILING: f64 = -2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub samples: usize,
    /// Thresholds `K` (log-spaced over the decade) and `P{U >= K}`.
    pub k_grid: Vec<f64>,
    pub survival: Vec<f64>,
    pub slope: f64,
    pub passes: bool,
}

/// Log-log slope of the empirical survival function over the range of
/// `K` where it falls from 0.4 to 0.04.
pub fn tail_slope(samples: &[f64]) -> Result<TailFit, ExperimentError> {
    if samples.len() < MIN_TAIL_SAMPLES {
        return Err(ExperimentError::InsufficientSamples {
            need: MIN_TAIL_SAMPLES,
            got: samples.len(),
        });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k_lo = stats::quantile_sorted(&sorted, 1.0 - TAIL_DECADE.0);
    let k_hi = stats::quantile_sorted(&sorted, 1.0 - TAIL_DECADE.1);
    if !(k_lo > 0.0 && k_hi > k_lo) {
        return Err(ExperimentError::Plan("degenerate sample distribution".into()));
    }
    let k_grid = stats::logspace(k_lo, k_hi, 20);
    let n = sorted.len() as f64;
    let survival: Vec<f64> = k_grid
        .iter()
        .map(|&k| {
            let below = sorted.partition_point(|x| *x < k);
            (sorted.len() - below) as f64 / n
        })
        .collect();
    let slope = stats::log_log_slope(&k_grid, &survival);
    Ok(TailFit {
        samples: samples.len(),
        k_grid,
        survival,
        slope,
        passes: slope <= TAIL_SLOPE_CEILING,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub fit: TailFit,
    /// `E U^s` directly and through the tail integral, for `s = 1, 2, 4`.
    pub moments: Vec<TailMoments>,
    pub sups: Vec<f64>,
}

/// Tail of `U = ||u||_{L_inf(Q^0)}` over the plan's samples.
pub fn run_tail<T: Real>(plan: &ExperimentPlan) -> Result<TailReport, ExperimentError> {
    if plan.samples < MIN_TAIL_SAMPLES {
        return Err(ExperimentError::InsufficientSamples {
            need: MIN_TAIL_SAMPLES,
            got: plan.samples,
        });
    }
    plan.validate()?;
    let backend = plan.build_backend::<T>()?;
    let forcing = plan.build_forcing::<T>()?;
    let solver = MildSolver::new(&backend, &forcing, plan.solver_options())?;
    let sups: Vec<f64> = (0..plan.samples as u64)
        .into_par_iter()
        .map(|i| -> Result<f64, ExperimentError> {
            let path = sample_path(plan.seed, i, forcing.j_count(), plan.dt, 1.0)?;
            let u = solver.solve(&path, 0)?;
            Ok(u.values().iter().fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs())))
        })
        .collect::<Result<_, _>>()?;
    let fit = tail_slope(&sups)?;
    let moments = [1.0, 2.0, 4.0]
        .iter()
        .map(|&s| tail_to_moments(&sups, s))
        .collect::<Result<_, _>>()?;
    Ok(TailReport { fit, moments, sups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Exp1, StandardNormal};

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            nx: 17,
            dt: 1.0 / 64.0,
            windows: vec![0, 1, 3],
            samples: 100,
            k_list: vec![0.0, 2.0, 4.0],
            thetas: vec![0.1, 0.25],
            ..ExperimentPlan::desk_default()
        }
    }

    #[test]
    fn plan_validation() {
        assert!(small_plan().validate().is_ok());
        let few = ExperimentPlan { samples: 99, ..small_plan() };
        assert!(few.validate().is_err());
        let theta = ExperimentPlan { thetas: vec![1.0], ..small_plan() };
        assert!(theta.validate().is_err());
        let json = serde_json::to_string(&small_plan()).unwrap();
        let back: ExperimentPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, small_plan());
    }

    #[test]
    fn zero_forcing_gives_zero_moments() {
        let plan = ExperimentPlan {
            forcing: vec![ProfileSpec::new(Shape::Zero)],
            ..small_plan()
        };
        let (rep, _) = run_moments::<f64>(&plan).unwrap();
        for e in rep.sup.iter().chain(&rep.holder) {
            if e.k == 0.0 {
                assert_eq!(e.estimate, 1.0);
            } else {
                assert_eq!(e.estimate, 0.0);
            }
        }
    }

    #[test]
    fn moments_are_consistent_and_reproducible() {
        let plan = ExperimentPlan {
            chaining_theta: Some(1.0 / 6.0),
            ..small_plan()
        };
        let (rep, records) = run_moments::<f64>(&plan).unwrap();
        assert_eq!(records.len(), 300);
        assert_eq!(records[4].sample_index, 1);
        assert_eq!(records[4].window, 1);
        for e in rep.sup.iter().chain(&rep.holder) {
            assert!(e.estimate >= 0.0 && e.ci.contains(e.estimate));
            if e.k == 0.0 {
                assert_eq!(e.estimate, 1.0);
            }
        }
        assert!(rep.lyapunov_violations().is_empty());
        assert_eq!(rep.chaining_pass_rate, Some(1.0));
        // the same plan on a different pool size gives identical output
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let (again, _) = pool.install(|| run_moments::<f64>(&plan)).unwrap();
        assert_eq!(
            serde_json::to_string(&rep).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn tail_test_is_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let expo: Vec<f64> = (0..20_000).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let gauss: Vec<f64> = (0..20_000).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
        let e = tail_slope(&expo).unwrap();
        let g = tail_slope(&gauss).unwrap();
        assert!(!e.passes, "exponential slope {}", e.slope);
        assert!(g.passes, "gaussian slope {}", g.slope);
        // the same regression on the exact survival function e^{-K}
        let exact: Vec<f64> = e.k_grid.iter().map(|k| (-k).exp()).collect();
        let oracle = stats::log_log_slope(&e.k_grid, &exact);
        assert!((e.slope - oracle).abs() < 0.1, "{} vs {oracle}", e.slope);
        assert!(tail_slope(&expo[..100]).is_err());
    }

    #[test]
    fn threshold_formula() {
        assert_eq!(holder_threshold(1, 4.0), 0.375);
        assert!((holder_threshold(1, 64.0) - 0.4921875).abs() < 1e-15);
    }
}
