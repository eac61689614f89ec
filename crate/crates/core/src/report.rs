//! Run summaries and plot-ready CSVs.
//!
//! Error statistics cover every step: solver steps count as zero error.
//! Timing is kept apart from the rest of the summary so that summary files
//! are byte-identical across repeated runs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{format_timestamp, Dataset};
use crate::hybrid::{Decision, StepRecord};
use crate::metrics::eps_inf;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("misaligned inputs: {0}")]
    Misaligned(String),
    #[error("{0}")]
    Invalid(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub wall_time_solver_s: f64,
    pub wall_time_model_s: f64,
    pub mean_solver_step_s: f64,
    pub mean_model_step_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_steps: usize,
    pub model_steps: usize,
    pub solver_steps: usize,
    pub avoided_solves_fraction: f64,
    pub median_eps_inf: f64,
    pub max_eps_inf: f64,
    pub error_threshold: f64,
    /// Share of all steps with `eps_inf > error_threshold`.
    pub fraction_above_threshold: f64,
    pub mean_solver_iterations: f64,
    /// Solver steps per triggering check.
    pub triggers: BTreeMap<String, usize>,
    #[serde(skip)]
    pub timing: RunTiming,
}

/// Linear-interpolation quantile of ascending `sorted`, `q` in `[0, 1]`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Per-step errors taken from the records; steps without one count as zero.
pub fn record_errors(records: &[StepRecord]) -> Vec<f64> {
    records.iter().map(|r| r.eps_inf.unwrap_or(0.0)).collect()
}

/// Per-step errors recomputed from hybrid outputs against ground truth.
/// Solver steps count as zero.
pub fn step_errors(records: &[StepRecord], solutions: &Dataset, truth: &Dataset) -> Result<Vec<f64>, ReportError> {
    if records.len() != solutions.len() || records.len() != truth.len() {
        return Err(ReportError::Misaligned(format!(
            "{} records, {} solutions, {} truth rows",
            records.len(),
            solutions.len(),
            truth.len()
        )));
    }
    if solutions.n_v() != truth.n_v() {
        return Err(ReportError::Misaligned("solution and truth bus counts differ".into()));
    }
    let mut out = Vec::with_capacity(records.len());
    for (t, r) in records.iter().enumerate() {
        if r.timestamp != solutions.timestamps()[t] || r.timestamp != truth.timestamps()[t] {
            return Err(ReportError::Misaligned(format!("timestamps differ at row {t}")));
        }
        out.push(match r.decision {
            Decision::Solver => 0.0,
            Decision::Model => eps_inf(solutions.v(t), solutions.a(t), truth.v(t), truth.a(t))
                .map_err(|e| ReportError::Invalid(format!("row {t}: {e}")))?,
        });
    }
    Ok(out)
}

/// Summary from records and a per-step error vector aligned with them.
pub fn summarize_errors(records: &[StepRecord], errors: &[f64], error_threshold: f64) -> Result<RunSummary, ReportError> {
    if records.len() != errors.len() {
        return Err(ReportError::Misaligned(format!("{} records but {} errors", records.len(), errors.len())));
    }
    if records.is_empty() {
        return Err(ReportError::Invalid("no steps to summarize".into()));
    }
    let n = records.len();
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let solver: Vec<&StepRecord> = records.iter().filter(|r| r.decision == Decision::Solver).collect();
    let model_steps = n - solver.len();
    let mut triggers = BTreeMap::new();
    for r in &solver {
        if let Some(g) = r.triggering_check {
            *triggers.entry(g.name().to_string()).or_insert(0) += 1;
        }
    }
    let iters: usize = solver.iter().filter_map(|r| r.solver_iterations).sum();
    let secs = |d: Decision| -> f64 {
        records.iter().filter(|r| r.decision == d).map(|r| r.wall_nanos as f64 * 1e-9).sum::<f64>() + 0.0
    };
    let mean = |total: f64, count: usize| if count == 0 { 0.0 } else { total / count as f64 };
    let (ts, tm) = (secs(Decision::Solver), secs(Decision::Model));
    Ok(RunSummary {
        n_steps: n,
        model_steps,
        solver_steps: solver.len(),
        avoided_solves_fraction: model_steps as f64 / n as f64,
        median_eps_inf: quantile(&sorted, 0.5),
        max_eps_inf: sorted[n - 1],
        error_threshold,
        fraction_above_threshold: errors.iter().filter(|&&e| e > error_threshold).count() as f64 / n as f64,
        mean_solver_iterations: mean(iters as f64, solver.len()),
        triggers,
        timing: RunTiming {
            wall_time_solver_s: ts,
            wall_time_model_s: tm,
            mean_solver_step_s: mean(ts, solver.len()),
            mean_model_step_s: mean(tm, model_steps),
        },
    })
}

/// Summary of a hybrid run scored against ground truth.
pub fn summarize(
    records: &[StepRecord],
    solutions: &Dataset,
    truth: &Dataset,
    error_threshold: f64,
) -> Result<RunSummary, ReportError> {
    let errors = step_errors(records, solutions, truth)?;
    summarize_errors(records, &errors, error_threshold)
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "steps                     {}", self.n_steps)?;
        writeln!(f, "model / solver steps      {} / {}", self.model_steps, self.solver_steps)?;
        writeln!(f, "avoided solves            {:.2}%", 100.0 * self.avoided_solves_fraction)?;
        writeln!(f, "median eps_inf            {:.3e}", self.median_eps_inf)?;
        writeln!(f, "max eps_inf               {:.3e}", self.max_eps_inf)?;
        writeln!(
            f,
            "above {:<19} {:.3}%",
            format!("{}", self.error_threshold),
            100.0 * self.fraction_above_threshold
        )?;
        writeln!(f, "mean solver iterations    {:.3}", self.mean_solver_iterations)?;
        for (k, v) in &self.triggers {
            writeln!(f, "  solver via {k:<14} {v}")?;
        }
        let t = &self.timing;
        writeln!(f, "solver wall time          {:.3} s ({:.1} us/step)", t.wall_time_solver_s, 1e6 * t.mean_solver_step_s)?;
        write!(f, "model wall time           {:.3} s ({:.1} us/step)", t.wall_time_model_s, 1e6 * t.mean_model_step_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub clip: f64,
    pub counts: Vec<usize>,
    pub clipped: usize,
    pub clipped_fraction: f64,
    pub max: f64,
    pub total: usize,
}

/// Fixed-width bins over `[0, clip)`; values at or above `clip` are counted
/// as clipped.
pub fn histogram(errors: &[f64], bin_width: f64, clip: f64) -> Result<Histogram, ReportError> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(ReportError::Invalid(format!("bin width must be positive, got {bin_width}")));
    }
    if !(clip > 0.0) || !clip.is_finite() {
        return Err(ReportError::Invalid(format!("clip must be positive, got {clip}")));
    }
    let n_bins = ((clip / bin_width).ceil() as usize).max(1);
    let mut counts = vec![0; n_bins];
    let mut clipped = 0;
    let mut max = 0.0f64;
    for (i, &e) in errors.iter().enumerate() {
        if !(e >= 0.0) || e.is_infinite() {
            return Err(ReportError::Invalid(format!("error {i} is {e}; expected finite and >= 0")));
        }
        max = max.max(e);
        if e >= clip {
            clipped += 1;
        } else {
            counts[((e / bin_width) as usize).min(n_bins - 1)] += 1;
        }
    }
    let total = errors.len();
    let clipped_fraction = if total == 0 { 0.0 } else { clipped as f64 / total as f64 };
    Ok(Histogram { bin_width, clip, counts, clipped, clipped_fraction, max, total })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io { path: path.display().to_string(), source }
}

impl Histogram {
    /// `bin_start,bin_end,count`, then one `clip,inf,clipped` row.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), ReportError> {
        let path = path.as_ref();
        let mut out = String::from("bin_start,bin_end,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let lo = i as f64 * self.bin_width;
            let hi = (lo + self.bin_width).min(self.clip);
            out.push_str(&format!("{lo:e},{hi:e},{c}\n"));
        }
        out.push_str(&format!("{:e},inf,{}\n", self.clip, self.clipped));
        std::fs::write(path, out).map_err(io_err(path))
    }
}

/// Per-step `timestamp,decision,cluster,eps_inf,model_vs_solver`, for error
/// time-series plots colored by cluster.
pub fn write_timeseries_csv(records: &[StepRecord], errors: &[f64], path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "timestamp,decision,cluster,eps_inf,model_vs_solver")?;
        for (r, e) in records.iter().zip(errors) {
            let mvs = r.model_vs_solver.map_or(String::new(), |x| format!("{x:.16e}"));
            writeln!(w, "{},{},{},{e:.16e},{mvs}", format_timestamp(&r.timestamp), r.decision.name(), r.cluster)?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::Gate;
    use chrono::{Duration, TimeZone, Utc};

    fn rec(t: usize, model: bool, eps: Option<f64>) -> StepRecord {
        StepRecord {
            timestamp: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + Duration::minutes(5 * t as i64),
            decision: if model { Decision::Model } else { Decision::Solver },
            triggering_check: (!model).then_some(if t == 0 { Gate::ForcedFirst } else { Gate::ErrorStale }),
            eps_inf: eps,
            solver_iterations: (!model).then_some(2),
            cluster: 0,
            gates: None,
            model_vs_solver: None,
            wall_nanos: 10,
        }
    }

    #[test]
    fn all_solver_run() {
        let recs: Vec<_> = (0..5).map(|t| rec(t, false, None)).collect();
        let s = summarize_errors(&recs, &record_errors(&recs), 0.01).unwrap();
        assert_eq!(s.avoided_solves_fraction, 0.0);
        assert_eq!((s.median_eps_inf, s.max_eps_inf), (0.0, 0.0));
        assert_eq!(s.mean_solver_iterations, 2.0);
        assert_eq!(s.triggers["error_stale"], 4);
    }

    #[test]
    fn all_model_perfect_run() {
        let recs: Vec<_> = (0..8).map(|t| rec(t, t > 0, (t > 0).then_some(0.0))).collect();
        let s = summarize_errors(&recs, &record_errors(&recs), 0.01).unwrap();
        assert_eq!(s.avoided_solves_fraction, 7.0 / 8.0);
        assert_eq!(s.median_eps_inf, 0.0);
    }

    #[test]
    fn threshold_fraction_and_median() {
        let recs: Vec<_> = (0..4).map(|t| rec(t, t > 0, (t > 0).then_some(0.005 * t as f64))).collect();
        let s = summarize_errors(&recs, &record_errors(&recs), 0.01).unwrap();
        // errors 0, 0.005, 0.010, 0.015
        assert_eq!(s.fraction_above_threshold, 0.25);
        assert!((s.median_eps_inf - 0.0075).abs() < 1e-15);
        assert!(s.median_eps_inf <= s.max_eps_inf);
    }

    #[test]
    fn misaligned_rejected() {
        let recs: Vec<_> = (0..3).map(|t| rec(t, false, None)).collect();
        assert!(matches!(summarize_errors(&recs, &[0.0], 0.01), Err(ReportError::Misaligned(_))));
    }

    #[test]
    fn histogram_examples() {
        let h = histogram(&[0.0; 10], 0.1, 1.0).unwrap();
        assert_eq!(h.counts[0], 10);
        assert_eq!(h.counts.iter().sum::<usize>(), 10);
        assert_eq!(h.clipped, 0);

        let h = histogram(&[0.5, 1.5], 0.1, 1.0).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 1);
        assert_eq!(h.clipped_fraction, 0.5);
        assert_eq!(h.max, 1.5);

        assert!(histogram(&[0.1], 0.0, 1.0).is_err());
        assert!(histogram(&[-0.1], 0.1, 1.0).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&s, 0.25), 2.0);
        assert_eq!(quantile(&s, 0.5), 3.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    proptest::proptest! {
        #[test]
        fn histogram_conserves_count(vals in proptest::collection::vec(0.0f64..3.0, 0..200), w in 0.01f64..1.0, clip in 0.1f64..2.5) {
            let h = histogram(&vals, w, clip).unwrap();
            proptest::prop_assert_eq!(h.counts.iter().sum::<usize>() + h.clipped, vals.len());
            proptest::prop_assert_eq!(h.clipped, vals.iter().filter(|&&v| v >= clip).count());
        }
    }
}
