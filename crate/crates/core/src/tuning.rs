//! Threshold sweeps over a calibration slice of the test set.
//!
//! Each grid point is one hybrid run with a single parameter changed from the
//! base configuration, scored against the dataset's own ground truth. Grid
//! points are independent and run on the current rayon pool; results keep
//! grid order.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::hybrid::{run_series, HybridConfig, HybridError};
use crate::loadgen::LoadSeries;
use crate::netmodel::Network;
use crate::report::{quantile, record_errors};
use crate::solver::SolverSettings;
use crate::surrogate::ClusteredSurrogate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    DistancePercentile,
    StepChange,
    ErrorThreshold,
    MaxInterval,
    /// Error threshold (`values`) crossed with max interval in steps (`values2`).
    #[serde(rename = "error_threshold_x_interval")]
    ErrorThresholdInterval,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::DistancePercentile => "distance_percentile",
            SweepParameter::StepChange => "step_change",
            SweepParameter::ErrorThreshold => "error_threshold",
            SweepParameter::MaxInterval => "max_interval",
            SweepParameter::ErrorThresholdInterval => "error_threshold_x_interval",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    #[serde(default)]
    pub values2: Vec<f64>,
    /// First calibration day, counted from the start of the test set.
    #[serde(default)]
    pub calibration_start_day: usize,
    #[serde(default = "one")]
    pub calibration_days: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParameter,
    pub value: f64,
    pub value2: Option<f64>,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub max: f64,
    pub model_fraction: f64,
    pub extreme_flag: bool,
}

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("invalid sweep: {0}")]
    Invalid(String),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error("no setting keeps max eps_inf within {budget} (smallest max is {best_max})")]
    NoFeasible { budget: f64, best_max: f64 },
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Multiple of the error threshold above which a step counts as extreme.
pub const EXTREME_FACTOR: f64 = 10.0;

impl SweepSpec {
    pub fn grid(&self) -> Result<Vec<(f64, Option<f64>)>, TuningError> {
        if self.values.is_empty() {
            return Err(TuningError::EmptyGrid);
        }
        if self.values.iter().chain(&self.values2).any(|v| !v.is_finite()) {
            return Err(TuningError::Invalid("grid values must be finite".into()));
        }
        match self.parameter {
            SweepParameter::ErrorThresholdInterval => {
                if self.values2.is_empty() {
                    return Err(TuningError::EmptyGrid);
                }
                Ok(self.values.iter().flat_map(|&a| self.values2.iter().map(move |&b| (a, Some(b)))).collect())
            }
            _ if !self.values2.is_empty() => {
                Err(TuningError::Invalid("values2 is only used by the error_threshold_x_interval sweep".into()))
            }
            _ => Ok(self.values.iter().map(|&a| (a, None)).collect()),
        }
    }

    /// `base` with this sweep's parameter set to the grid point.
    pub fn apply(&self, base: &HybridConfig, value: f64, value2: Option<f64>) -> Result<HybridConfig, TuningError> {
        let steps = |x: f64| -> Result<usize, TuningError> {
            if x >= 1.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(TuningError::Invalid(format!("interval {x} is not a whole number of steps >= 1")))
            }
        };
        let mut c = *base;
        match self.parameter {
            SweepParameter::DistancePercentile => c.distance_percentile_threshold = Some(value),
            SweepParameter::StepChange => c.step_change_threshold = Some(value),
            SweepParameter::ErrorThreshold => c.error_check_threshold = Some(value),
            SweepParameter::MaxInterval => c.max_check_interval = steps(value)?,
            SweepParameter::ErrorThresholdInterval => {
                c.error_check_threshold = Some(value);
                c.max_check_interval = steps(value2.unwrap_or(base.max_check_interval as f64))?;
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Row range of the calibration slice within a test set.
    pub fn calibration_rows(&self, test: &Dataset) -> Result<std::ops::Range<usize>, TuningError> {
        let spd = test
            .steps_per_day()
            .ok_or_else(|| TuningError::Invalid("cannot infer steps per day from the test set".into()))?;
        if self.calibration_days == 0 {
            return Err(TuningError::Invalid("calibration_days must be >= 1".into()));
        }
        let start = self.calibration_start_day * spd;
        let end = start + self.calibration_days * spd;
        if end > test.len() {
            return Err(TuningError::Invalid(format!(
                "calibration days {}..{} exceed the {}-row test set",
                self.calibration_start_day,
                self.calibration_start_day + self.calibration_days,
                test.len()
            )));
        }
        Ok(start..end)
    }
}

/// Scores one configuration on `calibration` (loads plus ground truth).
pub fn evaluate(
    surrogate: &ClusteredSurrogate,
    network: &Network,
    calibration: &Dataset,
    config: &HybridConfig,
    settings: &SolverSettings,
) -> Result<(Vec<f64>, f64), TuningError> {
    let series = LoadSeries::from_dataset(calibration);
    let run = run_series(surrogate, network, &series, config, settings, Some(calibration))?;
    let errors = record_errors(&run.records);
    let model = run.records.iter().filter(|r| r.decision == crate::hybrid::Decision::Model).count();
    Ok((errors, model as f64 / run.records.len().max(1) as f64))
}

pub fn sweep(
    spec: &SweepSpec,
    base: &HybridConfig,
    surrogate: &ClusteredSurrogate,
    network: &Network,
    test: &Dataset,
    settings: &SolverSettings,
) -> Result<Vec<SweepRow>, TuningError> {
    let grid = spec.grid()?;
    let calibration = test.slice(spec.calibration_rows(test)?);
    let configs = grid
        .iter()
        .map(|&(v, v2)| spec.apply(base, v, v2))
        .collect::<Result<Vec<_>, _>>()?;
    grid.par_iter()
        .zip(configs.par_iter())
        .map(|(&(value, value2), cfg)| {
            let (mut errors, model_fraction) = evaluate(surrogate, network, &calibration, cfg, settings)?;
            errors.sort_by(f64::total_cmp);
            let max = errors.last().copied().unwrap_or(0.0);
            let reference = cfg.error_check_threshold.or(base.error_check_threshold).unwrap_or(0.01);
            Ok(SweepRow {
                parameter: spec.parameter,
                value,
                value2,
                q25: quantile(&errors, 0.25),
                q50: quantile(&errors, 0.5),
                q75: quantile(&errors, 0.75),
                max,
                model_fraction,
                extreme_flag: max > EXTREME_FACTOR * reference,
            })
        })
        .collect()
}

/// Highest model-use fraction among rows with `max <= budget`; ties go to the
/// smaller value, then the smaller second value.
pub fn recommend_row(rows: &[SweepRow], budget: f64) -> Result<&SweepRow, TuningError> {
    if rows.is_empty() {
        return Err(TuningError::EmptyGrid);
    }
    let key = |r: &SweepRow| (r.value, r.value2.unwrap_or(0.0));
    rows.iter()
        .filter(|r| r.max <= budget)
        .fold(None, |best: Option<&SweepRow>, r| match best {
            Some(b) if b.model_fraction > r.model_fraction => Some(b),
            Some(b) if b.model_fraction == r.model_fraction && key(b) <= key(r) => Some(b),
            _ => Some(r),
        })
        .ok_or_else(|| TuningError::NoFeasible {
            budget,
            best_max: rows.iter().map(|r| r.max).fold(f64::INFINITY, f64::min),
        })
}

/// [`recommend_row`] applied to `base`.
pub fn recommend(spec: &SweepSpec, base: &HybridConfig, rows: &[SweepRow], budget: f64) -> Result<HybridConfig, TuningError> {
    let row = recommend_row(rows, budget)?;
    spec.apply(base, row.value, row.value2)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let two_d = rows.iter().any(|r| r.value2.is_some());
    let mut out = String::from(if two_d {
        "parameter,value,value2,q25,q50,q75,max,model_fraction,extreme_flag\n"
    } else {
        "parameter,value,q25,q50,q75,max,model_fraction,extreme_flag\n"
    });
    for r in rows {
        let _ = write!(out, "{},{}", r.parameter.name(), r.value);
        if two_d {
            let _ = write!(out, ",{}", r.value2.map_or(String::new(), |v| v.to_string()));
        }
        let _ = writeln!(
            out,
            ",{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.q25, r.q50, r.q75, r.max, r.model_fraction, r.extreme_flag
        );
    }
    out
}

pub fn write_rows_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<(), TuningError> {
    let path = path.as_ref();
    std::fs::write(path, rows_to_csv(rows)).map_err(|source| TuningError::Io { path: path.display().to_string(), source })
}
