//! Convergence-study harness: experiment configuration, sweep execution,
//! CSV/JSON artifact emission, and filter cost accounting.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::discretization::{write_snapshot, Mesh1D};
use crate::filter::FilterConfig;
use crate::solvers::{
    advection_cfl_dt, l2_error_cg, l2_error_dg, run_cg_diffusion_reaction, run_dg_advection,
    AdvectionProblem, DiffusionReactionProblem, FilterSpec, StepReport,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemId {
    AdvectionSine,
    AdvectionHat,
    CgDiffusionReaction,
}

impl ProblemId {
    pub fn is_dg(self) -> bool {
        matches!(self, Self::AdvectionSine | Self::AdvectionHat)
    }
}

impl FromStr for ProblemId {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "advection-sine" => Ok(Self::AdvectionSine),
            "advection-hat" => Ok(Self::AdvectionHat),
            "cg-diffusion-reaction" => Ok(Self::CgDiffusionReaction),
            other => Err(HarnessError::Config(format!("unknown problem {other:?}"))),
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AdvectionSine => "advection-sine",
            Self::AdvectionHat => "advection-hat",
            Self::CgDiffusionReaction => "cg-diffusion-reaction",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    /// Refine the mesh at fixed polynomial degree.
    H,
    /// Raise the degree at fixed element count.
    P,
}

impl FromStr for SweepKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s {
            "h" => Ok(Self::H),
            "p" => Ok(Self::P),
            other => Err(HarnessError::Config(format!("unknown sweep {other:?}"))),
        }
    }
}

/// The four solution variants: unfiltered, positivity, positivity with
/// boundary (flux) preservation, and positivity with boundary and
/// element-mass preservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVariant {
    Off,
    P,
    Pf,
    Pfi,
}

impl FromStr for FilterVariant {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, HarnessError> {
        match s.to_ascii_uppercase().as_str() {
            "OFF" => Ok(Self::Off),
            "P" => Ok(Self::P),
            "PF" => Ok(Self::Pf),
            "PFI" => Ok(Self::Pfi),
            other => Err(HarnessError::Config(format!(
                "unknown filter variant {other:?}"
            ))),
        }
    }
}

impl fmt::Display for FilterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Off => "off",
            Self::P => "P",
            Self::Pf => "PF",
            Self::Pfi => "PFI",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemId,
    pub sweep: SweepKind,
    /// Element counts (h-sweep) or polynomial degrees (p-sweep), strictly
    /// increasing.
    pub values: Vec<usize>,
    /// Fixed degree for h-sweeps.
    pub degree: usize,
    /// Fixed element count for p-sweeps.
    pub elements: usize,
    /// Step size; `None` picks the advective CFL heuristic (or 1e-4 for the
    /// CG problem).
    pub dt: Option<f64>,
    pub t_final: f64,
    pub variant: FilterVariant,
    pub tolerance: f64,
    pub out_dir: Option<PathBuf>,
    /// Zero every timing column so artifacts are byte-reproducible.
    pub deterministic: bool,
    /// Recorded for property suites that key off the experiment artifact.
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(name: impl Into<String>, problem: ProblemId) -> Self {
        Self {
            name: name.into(),
            problem,
            sweep: SweepKind::H,
            values: vec![4, 8, 16, 32],
            degree: 3,
            elements: 16,
            dt: None,
            t_final: 1.0,
            variant: FilterVariant::Off,
            tolerance: 1e-10,
            out_dir: None,
            deterministic: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.values.is_empty() {
            return Err(HarnessError::Config("sweep values are empty".into()));
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HarnessError::Config(
                "sweep values must be strictly increasing".into(),
            ));
        }
        if self.values.iter().any(|&v| v == 0) {
            return Err(HarnessError::Config("sweep values must be positive".into()));
        }
        if self.sweep == SweepKind::H && self.degree == 0 {
            return Err(HarnessError::Config("degree must be at least 1".into()));
        }
        if !self.problem.is_dg()
            && matches!(self.variant, FilterVariant::Pf | FilterVariant::Pfi)
        {
            return Err(HarnessError::Config(format!(
                "variant {} preserves element functionals and only applies to DG problems",
                self.variant
            )));
        }
        if self.t_final <= 0.0 {
            return Err(HarnessError::Config("t_final must be positive".into()));
        }
        if let Some(dt) = self.dt {
            if dt <= 0.0 || dt > self.t_final {
                return Err(HarnessError::Config("dt must lie in (0, t_final]".into()));
            }
        }
        if self.tolerance <= 0.0 {
            return Err(HarnessError::Config("tolerance must be positive".into()));
        }
        Ok(())
    }

    fn filter_spec(&self) -> Option<FilterSpec> {
        let base = || {
            let mut s = FilterSpec::positivity();
            s.config = FilterConfig::with_tolerance(self.tolerance);
            s
        };
        match self.variant {
            FilterVariant::Off => None,
            FilterVariant::P => Some(base()),
            FilterVariant::Pf => Some(base().with_boundaries()),
            FilterVariant::Pfi => Some(base().with_boundaries().with_element_mass()),
        }
    }
}

/// One sweep point of a convergence experiment.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub sweep_value: usize,
    pub dof: usize,
    pub l2_error: f64,
    /// Observed order against the previous row: error ratio per mesh ratio
    /// for h-sweeps, per local-dimension ratio for p-sweeps. Absent on the
    /// first row.
    pub observed_order: Option<f64>,
    pub avg_flagged: f64,
    pub filter_time_fraction: f64,
    pub iterations_total: usize,
}

/// A sweep point that ran, or the error that stopped it; failures do not
/// abort the remaining sweep.
#[derive(Debug, Clone)]
pub enum RowOutcome {
    Row(ConvergenceRow),
    Failed { sweep_value: usize, message: String },
}

/// Aggregated cost accounting over the steps of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    pub steps: usize,
    pub solver_seconds: f64,
    pub filter_seconds: f64,
    /// filter_seconds / (solver_seconds + filter_seconds), in [0, 1].
    pub filter_fraction: f64,
    pub avg_flagged_per_step: f64,
    pub iterations_total: usize,
}

pub fn report_timing(reports: &[StepReport]) -> TimingSummary {
    let steps = reports.len();
    let solver_seconds: f64 = reports.iter().map(|r| r.solver_seconds).sum();
    let filter_seconds: f64 = reports.iter().map(|r| r.filter_seconds).sum();
    let total = solver_seconds + filter_seconds;
    let filter_fraction = if total > 0.0 {
        filter_seconds / total
    } else {
        0.0
    };
    let flagged: usize = reports.iter().map(|r| r.filtered_elements).sum();
    let iterations_total = reports.iter().map(|r| r.filter_iterations).sum();
    TimingSummary {
        steps,
        solver_seconds,
        filter_seconds,
        filter_fraction,
        avg_flagged_per_step: if steps > 0 {
            flagged as f64 / steps as f64
        } else {
            0.0
        },
        iterations_total,
    }
}

/// Run every sweep point of the experiment, compute L2 errors against the
/// exact solution, and emit `<name>.csv` (plus per-point field snapshots and
/// a timing summary) into the output directory when one is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RowOutcome>, HarnessError> {
    cfg.validate()?;
    let mut outcomes: Vec<RowOutcome> = Vec::with_capacity(cfg.values.len());
    let mut prev: Option<(usize, f64)> = None;
    let mut timing_rows: Vec<(usize, TimingSummary)> = Vec::new();
    for &value in &cfg.values {
        let (degree, elements) = match cfg.sweep {
            SweepKind::H => (cfg.degree, value),
            SweepKind::P => (value, cfg.elements),
        };
        match run_point(cfg, degree, elements) {
            Ok((l2_error, reports, snapshot_rows, mesh)) => {
                let dof = if cfg.problem.is_dg() {
                    elements * (degree + 1)
                } else {
                    elements * degree + 1
                };
                let timing = report_timing(&reports);
                let observed_order = prev.map(|(pv, pe)| {
                    let ratio = match cfg.sweep {
                        SweepKind::H => value as f64 / pv as f64,
                        SweepKind::P => (value as f64 + 1.0) / (pv as f64 + 1.0),
                    };
                    (pe / l2_error).ln() / ratio.ln()
                });
                prev = Some((value, l2_error));
                let row = ConvergenceRow {
                    sweep_value: value,
                    dof,
                    l2_error,
                    observed_order,
                    avg_flagged: timing.avg_flagged_per_step,
                    filter_time_fraction: if cfg.deterministic {
                        0.0
                    } else {
                        timing.filter_fraction
                    },
                    iterations_total: timing.iterations_total,
                };
                timing_rows.push((value, timing));
                if let Some(dir) = &cfg.out_dir {
                    std::fs::create_dir_all(dir)?;
                    let path = dir.join(format!("{}_{}_field.csv", cfg.name, value));
                    let refs: Vec<&[f64]> =
                        snapshot_rows.iter().map(|r| r.as_slice()).collect();
                    write_snapshot(&path, &mesh, &refs)
                        .map_err(|e| HarnessError::Config(e.to_string()))?;
                }
                outcomes.push(RowOutcome::Row(row));
            }
            Err(message) => {
                prev = None;
                outcomes.push(RowOutcome::Failed {
                    sweep_value: value,
                    message,
                });
            }
        }
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join(format!("{}.csv", cfg.name)), &outcomes)?;
        write_timing_json(
            &dir.join(format!("{}_timing.json", cfg.name)),
            cfg,
            &timing_rows,
        )?;
    }
    Ok(outcomes)
}

/// Run one sweep point; the error string keeps failed rows reportable.
#[allow(clippy::type_complexity)]
fn run_point(
    cfg: &ExperimentConfig,
    degree: usize,
    elements: usize,
) -> Result<(f64, Vec<StepReport>, Vec<Vec<f64>>, Mesh1D), String> {
    let mesh = Mesh1D::uniform(-1.0, 1.0, elements);
    let spec = cfg.filter_spec();
    match cfg.problem {
        ProblemId::AdvectionSine | ProblemId::AdvectionHat => {
            let problem = match cfg.problem {
                ProblemId::AdvectionSine => AdvectionProblem::sine(),
                _ => AdvectionProblem::hat(),
            };
            let dt = cfg
                .dt
                .unwrap_or_else(|| advection_cfl_dt(&mesh, degree, problem.speed));
            let (field, reports) = run_dg_advection(
                &problem,
                &mesh,
                degree,
                dt,
                cfg.t_final,
                spec.as_ref(),
            )
            .map_err(|e| e.to_string())?;
            let t = cfg.t_final;
            let err = l2_error_dg(&field, |x| (problem.exact)(x, t));
            let rows: Vec<Vec<f64>> = (0..elements)
                .map(|e| field.block(e).to_vec())
                .collect();
            Ok((err, reports, rows, mesh))
        }
        ProblemId::CgDiffusionReaction => {
            let problem = DiffusionReactionProblem::sharp_front();
            let dt = cfg.dt.unwrap_or(1e-4);
            let (field, reports) = run_cg_diffusion_reaction(
                &problem,
                &mesh,
                degree,
                dt,
                cfg.t_final,
                spec.as_ref(),
            )
            .map_err(|e| e.to_string())?;
            let t = cfg.t_final;
            let err = l2_error_cg(&field, |x| problem.exact(x, t));
            let rows = vec![field.coeffs().to_vec()];
            Ok((err, reports, rows, mesh))
        }
    }
}

pub const CSV_HEADER: &str =
    "sweep_value,dof,l2_error,observed_order,avg_flagged,filter_time_fraction,iterations_total";

/// Render the outcome rows in the fixed CSV schema.
pub fn render_csv(outcomes: &[RowOutcome]) -> String {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for outcome in outcomes {
        match outcome {
            RowOutcome::Row(r) => {
                let order = r
                    .observed_order
                    .map(|o| format!("{o:.12e}"))
                    .unwrap_or_default();
                text.push_str(&format!(
                    "{},{},{:.12e},{},{:.12e},{:.12e},{}\n",
                    r.sweep_value,
                    r.dof,
                    r.l2_error,
                    order,
                    r.avg_flagged,
                    r.filter_time_fraction,
                    r.iterations_total
                ));
            }
            RowOutcome::Failed {
                sweep_value,
                message,
            } => {
                let clean = message.replace([',', '\n'], ";");
                text.push_str(&format!("{sweep_value},,ERR:{clean},,,,0\n"));
            }
        }
    }
    text
}

fn write_csv(path: &Path, outcomes: &[RowOutcome]) -> Result<(), HarnessError> {
    std::fs::write(path, render_csv(outcomes))?;
    Ok(())
}

fn write_timing_json(
    path: &Path,
    cfg: &ExperimentConfig,
    rows: &[(usize, TimingSummary)],
) -> Result<(), HarnessError> {
    let entries: Vec<serde_json::Value> = rows
        .iter()
        .map(|(value, t)| {
            serde_json::json!({
                "sweep_value": value,
                "steps": t.steps,
                "solver_seconds": if cfg.deterministic { 0.0 } else { t.solver_seconds },
                "filter_seconds": if cfg.deterministic { 0.0 } else { t.filter_seconds },
                "filter_fraction": if cfg.deterministic { 0.0 } else { t.filter_fraction },
                "avg_flagged_per_step": t.avg_flagged_per_step,
                "iterations_total": t.iterations_total,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "experiment": cfg.name,
        "problem": cfg.problem.to_string(),
        "variant": cfg.variant.to_string(),
        "rows": entries,
    });
    std::fs::write(path, serde_json::to_string_pretty(&doc).unwrap())?;
    Ok(())
}

/// CLI-provided values that override every experiment in a config file.
#[derive(Debug, Clone, Default)]
pub struct ConfigOverrides {
    pub problem: Option<ProblemId>,
    pub sweep: Option<SweepKind>,
    pub values: Option<Vec<usize>>,
    pub degree: Option<usize>,
    pub elements: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub variant: Option<FilterVariant>,
    pub tolerance: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub deterministic: bool,
    pub seed: Option<u64>,
}

impl ConfigOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.problem {
            cfg.problem = v;
        }
        if let Some(v) = self.sweep {
            cfg.sweep = v;
        }
        if let Some(v) = &self.values {
            cfg.values = v.clone();
        }
        if let Some(v) = self.degree {
            cfg.degree = v;
        }
        if let Some(v) = self.elements {
            cfg.elements = v;
        }
        if let Some(v) = self.dt {
            cfg.dt = Some(v);
        }
        if let Some(v) = self.t_final {
            cfg.t_final = v;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.tolerance {
            cfg.tolerance = v;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = Some(v.clone());
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
    }
}

/// Parse the flat key=value config format with one [section] per experiment.
pub fn parse_config(text: &str) -> Result<Vec<ExperimentConfig>, HarnessError> {
    let mut configs: Vec<ExperimentConfig> = Vec::new();
    let mut current: Option<ExperimentConfig> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if let Some(done) = current.take() {
                configs.push(done);
            }
            current = Some(ExperimentConfig::new(
                name.trim(),
                ProblemId::AdvectionSine,
            ));
            continue;
        }
        let cfg = current.as_mut().ok_or_else(|| {
            HarnessError::Config(format!(
                "line {}: key outside an [experiment] section",
                lineno + 1
            ))
        })?;
        let (key, value) = line.split_once('=').ok_or_else(|| {
            HarnessError::Config(format!("line {}: expected key = value", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad = |e: String| HarnessError::Config(format!("line {}: {e}", lineno + 1));
        match key {
            "problem" => cfg.problem = value.parse().map_err(|e: HarnessError| bad(e.to_string()))?,
            "sweep" => cfg.sweep = value.parse().map_err(|e: HarnessError| bad(e.to_string()))?,
            "values" => cfg.values = parse_values(value).map_err(|e| bad(e.to_string()))?,
            "degree" => cfg.degree = value.parse().map_err(|e| bad(format!("degree: {e}")))?,
            "elements" => {
                cfg.elements = value.parse().map_err(|e| bad(format!("elements: {e}")))?
            }
            "dt" => cfg.dt = Some(value.parse().map_err(|e| bad(format!("dt: {e}")))?),
            "tfinal" => {
                cfg.t_final = value.parse().map_err(|e| bad(format!("tfinal: {e}")))?
            }
            "filter" => cfg.variant = value.parse().map_err(|e: HarnessError| bad(e.to_string()))?,
            "tol" => cfg.tolerance = value.parse().map_err(|e| bad(format!("tol: {e}")))?,
            "out" => cfg.out_dir = Some(PathBuf::from(value)),
            "deterministic" => {
                cfg.deterministic = value
                    .parse()
                    .map_err(|e| bad(format!("deterministic: {e}")))?
            }
            "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("seed: {e}")))?,
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    if let Some(done) = current.take() {
        configs.push(done);
    }
    if configs.is_empty() {
        return Err(HarnessError::Config("no [experiment] sections found".into()));
    }
    Ok(configs)
}

/// Comma-separated positive integers.
pub fn parse_values(text: &str) -> Result<Vec<usize>, HarnessError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| HarnessError::Config(format!("bad sweep value {t:?}: {e}")))
        })
        .collect()
}
