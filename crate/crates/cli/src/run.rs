//! Subcommand dispatch.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use spde_holder_core::experiments::{
    aggregate, analyze_field, run_growth, run_tail, run_threshold_scan, sample_fields, ExperimentError, ExperimentPlan,
    MomentReport, OperatorPreset, SampleRecord,
};
use spde_holder_core::grid::{Domain, SpaceTimeGrid};
use spde_holder_core::mild_solver::{increment_moments, point_ensemble, EnsemblePoint, MildSolver, SolverOptions};
use spde_holder_core::noise::sample_path;

use crate::checks::{self, Check};
use crate::config::{parse_config, ConfigError, RunConfig};
use crate::output::{ensure_dir, num, read_json, sha256_hex, write_csv, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Analyze,
    VerifySemigroup,
    Report,
    Selftest,
}

/// Everything a subcommand needs besides the environment.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("missing ensemble: no {0} (run `simulate` first)")]
    MissingEnsemble(PathBuf),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o failure: {0}")]
    Io(String),
    #[error("checks failed: {0}")]
    Acceptance(String),
}

impl From<ExperimentError> for RunError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Plan(m) => RunError::Validation(m),
            e @ ExperimentError::InsufficientSamples { .. } => RunError::Validation(e.to_string()),
            other => RunError::Numerical(other.to_string()),
        }
    }
}

impl RunError {
    /// 1 usage, 2 validation, 3 numerical or runtime failure, 4 failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Config(_) | RunError::Validation(_) | RunError::MissingEnsemble(_) => 2,
            RunError::Numerical(_) | RunError::Io(_) => 3,
            RunError::Acceptance(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Usage(_) => "usage",
            RunError::Config(ConfigError::Parse { .. }) => "parse",
            RunError::Config(_) | RunError::Validation(_) => "validation",
            RunError::MissingEnsemble(_) => "missing_ensemble",
            RunError::Numerical(_) => "numerical",
            RunError::Io(_) => "io",
            RunError::Acceptance(_) => "acceptance",
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "code": self.exit_code(),
                "message": self.to_string(),
            }
        })
    }
}

/// Files written by a successful run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
}

pub const OUT_ENV: &str = "SPDE_HOLDER_OUT";
pub const THREADS_ENV: &str = "SPDE_HOLDER_THREADS";

fn load_config(inv: &Invocation) -> Result<Option<RunConfig>, RunError> {
    let Some(path) = &inv.config else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = inv.seed {
        cfg.seed = seed;
    }
    Ok(Some(cfg))
}

fn out_dir(inv: &Invocation, cfg: Option<&RunConfig>) -> Result<PathBuf, RunError> {
    inv.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .ok_or_else(|| RunError::Usage("no output directory (use --out or SPDE_HOLDER_OUT)".into()))
}

fn require_config(cfg: Option<RunConfig>) -> Result<RunConfig, RunError> {
    cfg.ok_or_else(|| RunError::Usage("this subcommand needs --config".into()))
}

/// Runs a subcommand on a dedicated thread pool.
pub fn dispatch(command: Command, inv: &Invocation) -> Result<Outcome, RunError> {
    let cfg = load_config(inv)?;
    let threads = inv.threads.or(cfg.as_ref().and_then(|c| c.threads));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(RunError::Usage("thread count must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| RunError::Usage(e.to_string()))?;
    pool.install(|| match command {
        Command::Simulate => simulate(require_config(cfg.clone())?, &out_dir(inv, cfg.as_ref())?),
        Command::Analyze => analyze(cfg.clone(), &out_dir(inv, cfg.as_ref())?),
        Command::Report => report(cfg.clone(), &out_dir(inv, cfg.as_ref())?),
        Command::VerifySemigroup => verify_semigroup(cfg.as_ref(), out_dir(inv, cfg.as_ref()).ok()),
        Command::Selftest => selftest(cfg.as_ref(), out_dir(inv, cfg.as_ref()).ok()),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    samples: usize,
    windows: Vec<u32>,
    /// SHA-256 of `summary.csv` without its config line.
    summary_digest: String,
    raw_files: Vec<String>,
}

#[derive(Debug, Clone)]
struct SampleSummary {
    sample_index: u64,
    window: u32,
    sup_norm: f64,
    digest: String,
}

fn field_digest(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

fn summarize(plan: &ExperimentPlan, raw_dir: Option<(&Path, usize)>) -> Result<Vec<SampleSummary>, RunError> {
    let backend = plan.build_backend::<f64>()?;
    let forcing = plan.build_forcing::<f64>()?;
    let rows: Vec<Vec<SampleSummary>> = (0..plan.samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<SampleSummary>, RunError> {
            let fields = sample_fields(plan, &backend, &forcing, i)?;
            let mut out = Vec::with_capacity(fields.len());
            for f in &fields {
                let window = f.grid().t0() as u32;
                if let Some((dir, n)) = raw_dir {
                    if (i as usize) < n {
                        f.write_raw(dir, &format!("sample_{i:05}_w{window}"))
                            .map_err(|e| RunError::Io(e.to_string()))?;
                    }
                }
                let flat: Vec<f64> = f.values().iter().copied().collect();
                out.push(SampleSummary {
                    sample_index: i,
                    window,
                    sup_norm: flat.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                    digest: field_digest(&flat),
                });
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    Ok(rows.into_iter().flatten().collect())
}

fn summary_rows(rows: &[SampleSummary]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| vec![r.sample_index.to_string(), r.window.to_string(), num(r.sup_norm), r.digest.clone()])
        .collect()
}

const SUMMARY_HEADER: [&str; 4] = ["sample_index", "window", "sup_norm", "field_sha256"];

fn summary_body(rows: &[Vec<String>]) -> String {
    let mut s = SUMMARY_HEADER.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn simulate(cfg: RunConfig, out: &Path) -> Result<Outcome, RunError> {
    let plan = cfg.to_plan();
    plan.validate()?;
    let dir = out.join("ensemble");
    ensure_dir(&dir)?;
    let raw = dir.join("raw");
    if cfg.raw_dump > 0 {
        ensure_dir(&raw)?;
    }
    let summaries = summarize(&plan, (cfg.raw_dump > 0).then_some((raw.as_path(), cfg.raw_dump)))?;
    let rows = summary_rows(&summaries);
    let config = cfg.resolved_json();
    let mut files = vec![write_csv(&dir.join("summary.csv"), &config, &SUMMARY_HEADER, &rows)?];
    let mut raw_files: Vec<String> = summaries
        .iter()
        .filter(|s| (s.sample_index as usize) < cfg.raw_dump)
        .map(|s| format!("raw/sample_{:05}_w{}", s.sample_index, s.window))
        .collect();
    raw_files.sort();
    let manifest = Manifest {
        seed: cfg.seed,
        samples: plan.samples,
        windows: plan.windows.clone(),
        summary_digest: sha256_hex(summary_body(&rows).as_bytes()),
        raw_files,
    };
    files.push(write_json(&dir.join("manifest.json"), &config, &manifest)?);
    Ok(Outcome { files })
}

/// Config and manifest of an existing ensemble; `--config`, if given, must match.
fn load_ensemble(cfg: Option<RunConfig>, out: &Path) -> Result<(RunConfig, Manifest), RunError> {
    let path = out.join("ensemble").join("manifest.json");
    if !path.exists() {
        return Err(RunError::MissingEnsemble(path));
    }
    let doc = read_json(&path)?;
    let stored: RunConfig = serde_json::from_value(doc["config"].clone())
        .map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_value(doc.clone()).map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
    match cfg {
        None => Ok((stored, manifest)),
        Some(given) => {
            // report settings may change; the simulated ensemble may not
            let recipe = |c: &RunConfig| serde_json::to_value(c.to_plan()).expect("plan serializes");
            if recipe(&given) != recipe(&stored) {
                return Err(RunError::Validation(
                    "config differs from the one used to simulate the ensemble".into(),
                ));
            }
            Ok((given, manifest))
        }
    }
}

fn compute_records(plan: &ExperimentPlan) -> Result<Vec<SampleRecord>, RunError> {
    let backend = plan.build_backend::<f64>()?;
    let forcing = plan.build_forcing::<f64>()?;
    let per: Vec<Vec<SampleRecord>> = (0..plan.samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<SampleRecord>, ExperimentError> {
            sample_fields(plan, &backend, &forcing, i)?
                .iter()
                .map(|f| analyze_field(plan, f))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Serialize, Deserialize)]
struct RecordsDoc {
    records: Vec<SampleRecord>,
}

fn moment_rows(rep: &MomentReport) -> Vec<Vec<String>> {
    rep.sup
        .iter()
        .chain(&rep.holder)
        .map(|e| {
            vec![
                e.window.to_string(),
                num(e.k),
                e.theta.map(num).unwrap_or_default(),
                num(e.estimate),
                num(e.ci.lo),
                num(e.ci.hi),
                e.samples.to_string(),
            ]
        })
        .collect()
}

const MOMENT_HEADER: [&str; 7] = ["window", "k", "theta", "estimate", "ci_lo", "ci_hi", "samples"];

fn analyze(cfg: Option<RunConfig>, out: &Path) -> Result<Outcome, RunError> {
    let (cfg, manifest) = load_ensemble(cfg, out)?;
    let plan = cfg.to_plan();
    // the ensemble is regenerated from its recipe; its digest must match
    let rows = summary_rows(&summarize(&plan, None)?);
    if sha256_hex(summary_body(&rows).as_bytes()) != manifest.summary_digest {
        return Err(RunError::Numerical("regenerated ensemble does not match its manifest".into()));
    }
    let records = compute_records(&plan)?;
    let rep = aggregate(&plan, &records);
    let dir = out.join("analysis");
    ensure_dir(&dir)?;
    let config = cfg.resolved_json();
    let files = vec![
        write_json(&dir.join("records.json"), &config, &RecordsDoc { records })?,
        write_csv(&dir.join("ensemble.csv"), &config, &MOMENT_HEADER, &moment_rows(&rep))?,
    ];
    Ok(Outcome { files })
}

fn report(cfg: Option<RunConfig>, out: &Path) -> Result<Outcome, RunError> {
    let (cfg, _) = load_ensemble(cfg, out)?;
    let plan = cfg.to_plan();
    let records_path = out.join("analysis").join("records.json");
    let records = if records_path.exists() {
        let doc = read_json(&records_path)?;
        serde_json::from_value::<RecordsDoc>(doc)
            .map_err(|e| RunError::Validation(format!("{}: {e}", records_path.display())))?
            .records
    } else {
        compute_records(&plan)?
    };
    let moments = aggregate(&plan, &records);
    let dir = out.join("report");
    ensure_dir(&dir)?;
    let config = cfg.resolved_json();
    let mut files = vec![write_csv(&dir.join("moments_vs_T.csv"), &config, &MOMENT_HEADER, &moment_rows(&moments))?];
    let mut doc = serde_json::Map::new();
    doc.insert("moments".into(), serde_json::to_value(&moments).expect("serializable"));

    if let Some(c) = cfg.report.growth_c {
        let gplan = ExperimentPlan {
            operator: OperatorPreset::Reaction { c },
            ..plan.clone()
        };
        let g = run_growth::<f64>(&gplan)?;
        doc.insert("growth".into(), serde_json::to_value(&g).expect("serializable"));
    }
    if let Some(th) = &cfg.report.threshold {
        let r = run_threshold_scan::<f64>(&plan, th.p, &th.eps, th.center.clone())?;
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .flat_map(|row| {
                r.eps.iter().enumerate().map(move |(i, e)| {
                    vec![num(row.theta), num(*e), num(row.moments[i]), num(row.ci[i].lo), num(row.ci[i].hi)]
                })
            })
            .collect();
        files.push(write_csv(
            &dir.join("moments_vs_eps.csv"),
            &config,
            &["theta", "eps", "estimate", "ci_lo", "ci_hi"],
            &rows,
        )?);
        doc.insert("threshold".into(), serde_json::to_value(&r).expect("serializable"));
    }
    if let Some(n) = cfg.report.tail_samples {
        let tplan = ExperimentPlan {
            samples: n,
            windows: vec![0],
            ..plan.clone()
        };
        let t = run_tail::<f64>(&tplan)?;
        let rows: Vec<Vec<String>> = t
            .fit
            .k_grid
            .iter()
            .zip(&t.fit.survival)
            .map(|(k, s)| vec![num(*k), num(*s)])
            .collect();
        files.push(write_csv(&dir.join("tail_survival.csv"), &config, &["k", "survival"], &rows)?);
        doc.insert("tail".into(), serde_json::json!({ "fit": t.fit, "moments": t.moments }));
    }
    if let Some(inc) = &cfg.report.increments {
        let r = increment_study(&plan, inc)?;
        let rows: Vec<Vec<String>> = r
            .moments
            .iter()
            .map(|m| {
                vec![
                    num(m.distance),
                    num(m.estimate),
                    num(m.ci.lo),
                    num(m.ci.hi),
                    num(m.kurtosis),
                ]
            })
            .collect();
        files.push(write_csv(
            &dir.join("increment_fits.csv"),
            &config,
            &["distance", "estimate", "ci_lo", "ci_hi", "kurtosis"],
            &rows,
        )?);
        doc.insert("increments".into(), serde_json::to_value(&r).expect("serializable"));
    }
    files.push(write_json(&dir.join("report.json"), &config, &serde_json::Value::Object(doc))?);
    Ok(Outcome { files })
}

/// Time-increment moments at a fixed point, from probe-mode solves.
pub fn increment_study(
    plan: &ExperimentPlan,
    inc: &crate::config::IncrementConfig,
) -> Result<spde_holder_core::mild_solver::IncrementReport, RunError> {
    let backend = plan.build_backend::<f64>()?;
    let forcing = plan.build_forcing::<f64>()?;
    let solver = MildSolver::new(&backend, &forcing, SolverOptions::default()).map_err(ExperimentError::from)?;
    let grid = plan.spatial_grid();
    let probe = grid.nearest_node(&inc.x);
    let base = (inc.t / plan.dt).round() as usize;
    let last = base + inc.lags.iter().copied().max().unwrap_or(0);
    let horizon = (last as f64 * plan.dt).ceil().max(1.0) as u32;
    let tables: Vec<_> = (0..inc.samples as u64)
        .into_par_iter()
        .map(|i| -> Result<_, ExperimentError> {
            let path = sample_path(plan.seed, i, forcing.j_count(), plan.dt, f64::from(horizon))?;
            Ok(solver.solve_probes(&path, &[probe], horizon)?)
        })
        .collect::<Result<_, _>>()?;
    let st = SpaceTimeGrid::new(Domain::new(plan.dim).map_err(|e| RunError::Validation(e.to_string()))?, plan.nx, plan.dt, 0.0)
        .map_err(|e| RunError::Validation(e.to_string()))?;
    let ens = point_ensemble(st, vec![probe], &tables).map_err(ExperimentError::from)?;
    let z = |level| EnsemblePoint { probe: 0, level };
    let pairs: Vec<_> = inc.lags.iter().map(|&l| (z(base + l), z(base))).collect();
    Ok(increment_moments(&ens, &pairs, inc.p, plan.seed).map_err(ExperimentError::from)?)
}

#[derive(Serialize)]
struct CheckDoc<'a> {
    passed: bool,
    checks: &'a [Check],
}

fn finish_checks(name: &str, checks: Vec<Check>, out: Option<PathBuf>, cfg: Option<&RunConfig>) -> Result<Outcome, RunError> {
    let passed = checks.iter().all(|c| c.passed);
    let mut files = Vec::new();
    if let Some(out) = out {
        let dir = out.join(name);
        ensure_dir(&dir)?;
        let config = cfg.map(|c| c.resolved_json()).unwrap_or(serde_json::Value::Null);
        files.push(write_json(
            &dir.join(format!("{name}.json")),
            &config,
            &CheckDoc {
                passed,
                checks: &checks,
            },
        )?);
    }
    if passed {
        Ok(Outcome { files })
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(RunError::Acceptance(failed.join(", ")))
    }
}

fn verify_semigroup(cfg: Option<&RunConfig>, out: Option<PathBuf>) -> Result<Outcome, RunError> {
    finish_checks("semigroup", checks::semigroup_checks(), out, cfg)
}

fn selftest(cfg: Option<&RunConfig>, out: Option<PathBuf>) -> Result<Outcome, RunError> {
    finish_checks("selftest", checks::selftest_checks(), out, cfg)
}
