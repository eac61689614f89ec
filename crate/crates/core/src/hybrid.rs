//! Per-timestep choice between the surrogate and the Newton-Raphson solver.
//!
//! The model is evaluated at every step. It is accepted only when every
//! enabled check stays strictly below its threshold:
//!
//! 1. distance: the input's distance percentile within its cluster;
//! 2. step change: `eps_inf` between the model estimate and the last
//!    accepted solution;
//! 3. staleness: steps since the last solver verification, counting this one,
//!    against `max_check_interval`;
//! 4. stored error: `eps_inf` between model and solver at the last solver step.
//!
//! Otherwise the solver runs (warm-started from the last accepted solution),
//! the model's error against it is stored, and the staleness counter resets.
//! The first step always uses the solver. Because every check is "below
//! threshold", a threshold of zero forces the solver at every step.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{format_timestamp, parse_timestamp, Dataset};
use crate::loadgen::LoadSeries;
use crate::metrics::eps_inf;
use crate::netmodel::Network;
use crate::solver::{solve_newton_raphson, SolverError, SolverSettings, VoltageSolution};
use crate::surrogate::ClusteredSurrogate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridConfig {
    /// Stored-error bound; `None` disables the error check and its staleness cap.
    pub error_check_threshold: Option<f64>,
    /// Steps between forced solver verifications.
    pub max_check_interval: usize,
    /// Percentile bound in `[0, 100]`; `None` disables the distance check.
    pub distance_percentile_threshold: Option<f64>,
    /// Relative bound; `None` disables the step-change check.
    pub step_change_threshold: Option<f64>,
}

impl Default for HybridConfig {
    /// One-percent error check every 60 minutes at 5-minute steps, 20% step
    /// change, no distance check.
    fn default() -> Self {
        Self {
            error_check_threshold: Some(0.01),
            max_check_interval: 12,
            distance_percentile_threshold: None,
            step_change_threshold: Some(0.20),
        }
    }
}

impl HybridConfig {
    /// A configuration with every check disabled.
    pub fn unchecked() -> Self {
        Self {
            error_check_threshold: None,
            max_check_interval: 1,
            distance_percentile_threshold: None,
            step_change_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<(), HybridError> {
        let bad = |m: String| Err(HybridError::InvalidConfig(m));
        for (name, t) in [("error_check_threshold", self.error_check_threshold), ("step_change_threshold", self.step_change_threshold)] {
            if let Some(t) = t {
                if !(t >= 0.0) || t.is_infinite() {
                    return bad(format!("{name} must be finite and >= 0, got {t}"));
                }
            }
        }
        if let Some(t) = self.distance_percentile_threshold {
            if !(0.0..=100.0).contains(&t) {
                return bad(format!("distance_percentile_threshold must lie in [0, 100], got {t}"));
            }
        }
        if self.max_check_interval == 0 {
            return bad("max_check_interval must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    ForcedFirst,
    Distance,
    StepChange,
    ErrorStale,
    ErrorHigh,
}

impl Gate {
    pub const CHECK_ORDER: [Gate; 4] = [Gate::Distance, Gate::StepChange, Gate::ErrorStale, Gate::ErrorHigh];

    pub fn name(self) -> &'static str {
        match self {
            Gate::ForcedFirst => "forced_first",
            Gate::Distance => "distance",
            Gate::StepChange => "step_change",
            Gate::ErrorStale => "error_stale",
            Gate::ErrorHigh => "error_high",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [Gate::ForcedFirst, Gate::Distance, Gate::StepChange, Gate::ErrorStale, Gate::ErrorHigh]
            .into_iter()
            .find(|g| g.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Model,
    Solver,
}

impl Decision {
    pub fn name(self) -> &'static str {
        match self {
            Decision::Model => "model",
            Decision::Solver => "solver",
        }
    }
}

/// The quantities each check compared against its threshold at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateValues {
    pub distance_percentile: f64,
    pub step_change: f64,
    /// Steps since the last solver verification, including the current one.
    pub staleness: usize,
    pub stored_error: f64,
}

impl GateValues {
    /// Whether `gate` fires under `config`. Disabled checks never fire.
    pub fn fires(&self, gate: Gate, config: &HybridConfig) -> bool {
        match gate {
            Gate::ForcedFirst => false,
            Gate::Distance => config.distance_percentile_threshold.is_some_and(|t| !(self.distance_percentile < t)),
            Gate::StepChange => config.step_change_threshold.is_some_and(|t| !(self.step_change < t)),
            Gate::ErrorStale => config.error_check_threshold.is_some() && self.staleness >= config.max_check_interval,
            Gate::ErrorHigh => config.error_check_threshold.is_some_and(|t| !(self.stored_error < t)),
        }
    }

    /// First firing gate in `order`, if any.
    pub fn first_firing(&self, config: &HybridConfig, order: &[Gate]) -> Option<Gate> {
        order.iter().copied().find(|&g| self.fires(g, config))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub timestamp: DateTime<Utc>,
    pub decision: Decision,
    pub triggering_check: Option<Gate>,
    /// Error of the accepted output against ground truth, when truth was
    /// supplied and the model output was accepted.
    pub eps_inf: Option<f64>,
    pub solver_iterations: Option<usize>,
    /// Everything below is kept in memory only.
    pub cluster: usize,
    pub gates: Option<GateValues>,
    /// Model error against the solver, when the solver ran.
    pub model_vs_solver: Option<f64>,
    pub wall_nanos: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub last_accepted: Option<VoltageSolution>,
    pub last_observed_model_error: f64,
    pub steps_since_check: usize,
}

impl HybridState {
    pub fn new() -> Self {
        Self { last_accepted: None, last_observed_model_error: f64::INFINITY, steps_since_check: 0 }
    }
}

impl Default for HybridState {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Error)]
pub enum HybridError {
    #[error("invalid hybrid configuration: {0}")]
    InvalidConfig(String),
    #[error("solver did not converge at {timestamp} after {iterations} iterations")]
    NonConvergence { timestamp: String, iterations: usize },
    #[error("solver failed at {timestamp}: {source}")]
    Solver { timestamp: String, source: SolverError },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ground truth misaligned: {0}")]
    Truth(String),
    #[error("records line {line}: {msg}")]
    Records { line: u64, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn err_eps(pv: &[f64], pa: &[f64], tv: &[f64], ta: &[f64]) -> f64 {
    eps_inf(pv, pa, tv, ta).unwrap_or(f64::INFINITY)
}

fn solve_at(
    network: &Network,
    p: &[f64],
    q: &[f64],
    guess: Option<&VoltageSolution>,
    settings: &SolverSettings,
    timestamp: &DateTime<Utc>,
) -> Result<VoltageSolution, HybridError> {
    let g = guess.map(|s| (s.v.as_slice(), s.a.as_slice()));
    let sol = solve_newton_raphson(network, p, q, g, settings)
        .map_err(|source| HybridError::Solver { timestamp: format_timestamp(timestamp), source })?;
    if !sol.converged {
        return Err(HybridError::NonConvergence { timestamp: format_timestamp(timestamp), iterations: sol.iterations });
    }
    Ok(sol)
}

/// One timestep. `truth`, when given, is the ground-truth `(v, a)` used to
/// score an accepted model output.
#[allow(clippy::too_many_arguments)]
pub fn step(
    state: &mut HybridState,
    surrogate: &ClusteredSurrogate,
    network: &Network,
    timestamp: &DateTime<Utc>,
    p: &[f64],
    q: &[f64],
    config: &HybridConfig,
    settings: &SolverSettings,
    truth: Option<(&[f64], &[f64])>,
) -> Result<(VoltageSolution, StepRecord), HybridError> {
    let started = Instant::now();
    let input = [p, q].concat();
    if input.len() != surrogate.n_inputs {
        return Err(HybridError::Dimension(format!(
            "surrogate expects {} inputs, got {}",
            surrogate.n_inputs,
            input.len()
        )));
    }
    let ((mv, ma), asg) = surrogate.predict_with_assignment(Some(timestamp), &input);

    let (trigger, gates) = match &state.last_accepted {
        None => (Some(Gate::ForcedFirst), None),
        Some(last) => {
            let values = GateValues {
                distance_percentile: asg.distance_percentile,
                step_change: if config.step_change_threshold.is_some() {
                    err_eps(&mv, &ma, &last.v, &last.a)
                } else {
                    0.0
                },
                staleness: state.steps_since_check + 1,
                stored_error: state.last_observed_model_error,
            };
            (values.first_firing(config, &Gate::CHECK_ORDER), Some(values))
        }
    };

    let mut record = StepRecord {
        timestamp: *timestamp,
        decision: Decision::Model,
        triggering_check: trigger,
        eps_inf: None,
        solver_iterations: None,
        cluster: asg.cluster_index,
        gates,
        model_vs_solver: None,
        wall_nanos: 0,
    };

    let accepted = if trigger.is_some() {
        let sol = solve_at(network, p, q, state.last_accepted.as_ref(), settings, timestamp)?;
        let model_err = err_eps(&mv, &ma, &sol.v, &sol.a);
        state.last_observed_model_error = model_err;
        state.steps_since_check = 0;
        record.decision = Decision::Solver;
        record.solver_iterations = Some(sol.iterations);
        record.model_vs_solver = Some(model_err);
        sol
    } else {
        state.steps_since_check += 1;
        if let Some((tv, ta)) = truth {
            record.eps_inf = Some(err_eps(&mv, &ma, tv, ta));
        }
        VoltageSolution::from_model(mv, ma)
    };
    state.last_accepted = Some(accepted.clone());
    record.wall_nanos = started.elapsed().as_nanos() as u64;
    Ok((accepted, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridRun {
    pub solutions: Vec<VoltageSolution>,
    pub records: Vec<StepRecord>,
}

impl HybridRun {
    /// Hybrid outputs as a dataset, reusing the series loads.
    pub fn to_dataset(&self, series: &LoadSeries) -> Dataset {
        let n_v = self.solutions.first().map_or(0, |s| s.v.len());
        let mut ds = Dataset::empty(series.n_loads, n_v);
        for (t, s) in self.solutions.iter().enumerate() {
            ds.push(series.timestamps[t], series.p(t), series.q(t), &s.v, &s.a);
        }
        ds
    }
}

fn check_truth(series: &LoadSeries, truth: Option<&Dataset>) -> Result<(), HybridError> {
    if let Some(tr) = truth {
        if tr.timestamps() != series.timestamps.as_slice() {
            return Err(HybridError::Truth("timestamps differ from the load series".into()));
        }
    }
    Ok(())
}

/// Runs [`step`] over the whole series from a fresh state.
pub fn run_series(
    surrogate: &ClusteredSurrogate,
    network: &Network,
    series: &LoadSeries,
    config: &HybridConfig,
    settings: &SolverSettings,
    truth: Option<&Dataset>,
) -> Result<HybridRun, HybridError> {
    config.validate()?;
    if surrogate.n_v != network.n_bus() || surrogate.n_inputs != 2 * network.n_loads() {
        return Err(HybridError::Dimension("surrogate does not match the network".into()));
    }
    check_truth(series, truth)?;
    let mut state = HybridState::new();
    let mut run = HybridRun { solutions: Vec::with_capacity(series.len()), records: Vec::with_capacity(series.len()) };
    for t in 0..series.len() {
        let tr = truth.map(|d| (d.v(t), d.a(t)));
        let (sol, rec) =
            step(&mut state, surrogate, network, &series.timestamps[t], series.p(t), series.q(t), config, settings, tr)?;
        run.solutions.push(sol);
        run.records.push(rec);
    }
    Ok(run)
}

/// The solver alone over the series, each solve warm-started from the
/// previous one and the first from a flat profile.
pub fn run_pure_solver(network: &Network, series: &LoadSeries, settings: &SolverSettings) -> Result<HybridRun, HybridError> {
    let mut run = HybridRun { solutions: Vec::with_capacity(series.len()), records: Vec::with_capacity(series.len()) };
    let mut last: Option<VoltageSolution> = None;
    for t in 0..series.len() {
        let started = Instant::now();
        let ts = &series.timestamps[t];
        let sol = solve_at(network, series.p(t), series.q(t), last.as_ref(), settings, ts)?;
        run.records.push(StepRecord {
            timestamp: *ts,
            decision: Decision::Solver,
            triggering_check: Some(if t == 0 { Gate::ForcedFirst } else { Gate::ErrorStale }),
            eps_inf: None,
            solver_iterations: Some(sol.iterations),
            cluster: 0,
            gates: None,
            model_vs_solver: None,
            wall_nanos: started.elapsed().as_nanos() as u64,
        });
        last = Some(sol.clone());
        run.solutions.push(sol);
    }
    Ok(run)
}

pub const RECORDS_HEADER: [&str; 5] = ["timestamp", "decision", "triggering_check", "eps_inf", "solver_iterations"];

pub fn write_records<W: Write>(records: &[StepRecord], w: W) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(RECORDS_HEADER)?;
    for r in records {
        wr.write_record([
            format_timestamp(&r.timestamp),
            r.decision.name().to_string(),
            r.triggering_check.map_or(String::new(), |g| g.name().to_string()),
            r.eps_inf.map_or(String::new(), |e| format!("{e:.16e}")),
            r.solver_iterations.map_or(String::new(), |i| i.to_string()),
        ])?;
    }
    wr.flush()
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<StepRecord>, HybridError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rd.headers().map_err(|e| HybridError::Records { line: 1, msg: e.to_string() })?;
    if header.iter().ne(RECORDS_HEADER) {
        return Err(HybridError::Records { line: 1, msg: format!("expected header {}", RECORDS_HEADER.join(",")) });
    }
    let mut out: Vec<StepRecord> = Vec::new();
    for row in rd.records() {
        let row = row.map_err(|e| HybridError::Records { line: e.position().map_or(0, |p| p.line()), msg: e.to_string() })?;
        let line = row.position().map_or(0, |p| p.line());
        let fail = |msg: String| HybridError::Records { line, msg };
        let timestamp = parse_timestamp(&row[0]).map_err(fail)?;
        if out.last().is_some_and(|prev| prev.timestamp >= timestamp) {
            return Err(fail("timestamps must increase".into()));
        }
        let decision = match &row[1] {
            "model" => Decision::Model,
            "solver" => Decision::Solver,
            other => return Err(fail(format!("unknown decision {other:?}"))),
        };
        let triggering_check = match &row[2] {
            "" => None,
            s => Some(Gate::from_name(s).ok_or_else(|| fail(format!("unknown check {s:?}")))?),
        };
        if (decision == Decision::Solver) != triggering_check.is_some() {
            return Err(fail("a solver step needs a triggering check and a model step must not have one".into()));
        }
        let eps_inf = match &row[3] {
            "" => None,
            s => {
                let e: f64 = s.parse().map_err(|_| fail(format!("bad eps_inf {s:?}")))?;
                if !(e >= 0.0) || e.is_infinite() {
                    return Err(fail(format!("eps_inf must be finite and >= 0, got {s}")));
                }
                Some(e)
            }
        };
        let solver_iterations = match &row[4] {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|_| fail(format!("bad solver_iterations {s:?}")))?),
        };
        out.push(StepRecord {
            timestamp,
            decision,
            triggering_check,
            eps_inf,
            solver_iterations,
            cluster: 0,
            gates: None,
            model_vs_solver: None,
            wall_nanos: 0,
        });
    }
    Ok(out)
}

pub fn write_records_csv(records: &[StepRecord], path: impl AsRef<Path>) -> Result<(), HybridError> {
    let path = path.as_ref();
    let io = |source| HybridError::Io { path: path.display().to_string(), source };
    let f = std::fs::File::create(path).map_err(io)?;
    write_records(records, std::io::BufWriter::new(f)).map_err(io)
}

pub fn read_records_csv(path: impl AsRef<Path>) -> Result<Vec<StepRecord>, HybridError> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|source| HybridError::Io { path: path.display().to_string(), source })?;
    read_records(std::io::BufReader::new(f))
}
