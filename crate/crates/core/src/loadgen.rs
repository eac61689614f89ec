//! Seeded synthetic load time series with weekly operating modes.
//!
//! Each minute of the week belongs to exactly one mode. A mode fixes a base
//! real-power level and a reactive ratio per load; within a mode the level
//! follows a smooth time-of-day shape (two Fourier harmonics) scaled by the
//! mode's variability, and every sample gets multiplicative Gaussian noise.
//! Mode boundaries are sharp, so the series has genuine step events.
//!
//! Noise for row `t` comes from a ChaCha stream selected by `t`, so rows can
//! be generated in any order with identical results.

use std::f64::consts::PI;

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{format_timestamp, Dataset};
use crate::netmodel::Network;
use crate::solver::{solve_newton_raphson, SolverError, SolverSettings};

pub const MINUTES_PER_DAY: u32 = 1440;
pub const MINUTES_PER_WEEK: u32 = 7 * MINUTES_PER_DAY;

/// Minutes `[start_minute, end_minute)` of each listed weekday (Monday = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub days: Vec<u8>,
    pub start_minute: u32,
    pub end_minute: u32,
}

impl TimeWindow {
    pub fn new(days: &[u8], start_minute: u32, end_minute: u32) -> Self {
        Self { days: days.to_vec(), start_minute, end_minute }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub name: String,
    pub windows: Vec<TimeWindow>,
    /// Mean real power per load, pu.
    pub base_level: Vec<f64>,
    /// q / p per load.
    pub reactive_ratio: Vec<f64>,
    /// Relative amplitude of the intra-mode time-of-day shape, in [0, 1).
    #[serde(default)]
    pub variability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfileSpec {
    pub n_loads: usize,
    pub resolution_minutes: u32,
    pub duration_days: u32,
    pub modes: Vec<ModeSpec>,
    /// Relative standard deviation of the multiplicative noise.
    pub noise_scale: f64,
    pub seed: u64,
    /// First timestamp; must fall on a Monday midnight so day-of-week lines up.
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
    /// Lower bound on power factor; reactive power is clipped to respect it.
    #[serde(default = "default_min_pf")]
    pub min_power_factor: f64,
}

pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

fn default_min_pf() -> f64 {
    0.8
}

#[derive(Debug, Error)]
pub enum LoadGenError {
    #[error("invalid load spec: {0}")]
    InvalidSpec(String),
    #[error("spec has {spec} loads but the network has {network}")]
    LoadCount { spec: usize, network: usize },
    #[error("load flow does not converge at {timestamp} (row {row})")]
    Infeasible { row: usize, timestamp: String },
    #[error("solver failed at {timestamp} (row {row}): {source}")]
    Solver { row: usize, timestamp: String, source: SolverError },
}

/// Knobs for the built-in seven-mode weekly preset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeeklyPreset {
    /// Largest per-load base level, pu.
    pub peak: f64,
    pub variability: f64,
    pub noise_scale: f64,
    pub resolution_minutes: u32,
    pub duration_days: u32,
}

impl Default for WeeklyPreset {
    fn default() -> Self {
        Self { peak: 0.05, variability: 0.1, noise_scale: 0.02, resolution_minutes: 5, duration_days: 28 }
    }
}

const WEEKDAYS: [u8; 5] = [0, 1, 2, 3, 4];
const WEEKEND: [u8; 2] = [5, 6];

impl LoadProfileSpec {
    /// Seven modes: weekday night/morning/day/evening and weekend night/day/evening.
    /// Per-load levels and reactive ratios are drawn from `seed`.
    pub fn weekly(n_loads: usize, seed: u64, preset: &WeeklyPreset) -> Self {
        let layout: [(&str, Vec<TimeWindow>); 7] = [
            ("weekday-night", vec![TimeWindow::new(&WEEKDAYS, 0, 360), TimeWindow::new(&WEEKDAYS, 1380, 1440)]),
            ("weekday-morning", vec![TimeWindow::new(&WEEKDAYS, 360, 540)]),
            ("weekday-day", vec![TimeWindow::new(&WEEKDAYS, 540, 1020)]),
            ("weekday-evening", vec![TimeWindow::new(&WEEKDAYS, 1020, 1380)]),
            ("weekend-night", vec![TimeWindow::new(&WEEKEND, 0, 480), TimeWindow::new(&WEEKEND, 1380, 1440)]),
            ("weekend-day", vec![TimeWindow::new(&WEEKEND, 480, 1080)]),
            ("weekend-evening", vec![TimeWindow::new(&WEEKEND, 1080, 1380)]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = layout
            .into_iter()
            .map(|(name, windows)| ModeSpec {
                name: name.to_string(),
                windows,
                base_level: (0..n_loads).map(|_| preset.peak * rng.random_range(0.15..1.0)).collect(),
                reactive_ratio: (0..n_loads).map(|_| rng.random_range(0.15..0.45)).collect(),
                variability: preset.variability,
            })
            .collect();
        Self {
            n_loads,
            resolution_minutes: preset.resolution_minutes,
            duration_days: preset.duration_days,
            modes,
            noise_scale: preset.noise_scale,
            seed,
            start: default_start(),
            min_power_factor: default_min_pf(),
        }
    }

    /// One mode covering the whole week at constant per-load levels.
    pub fn constant(base_level: Vec<f64>, reactive_ratio: Vec<f64>, resolution_minutes: u32, duration_days: u32) -> Self {
        Self {
            n_loads: base_level.len(),
            resolution_minutes,
            duration_days,
            modes: vec![ModeSpec {
                name: "constant".into(),
                windows: vec![TimeWindow::new(&[0, 1, 2, 3, 4, 5, 6], 0, MINUTES_PER_DAY)],
                base_level,
                reactive_ratio,
                variability: 0.0,
            }],
            noise_scale: 0.0,
            seed: 0,
            start: default_start(),
            min_power_factor: default_min_pf(),
        }
    }

    pub fn steps_per_day(&self) -> usize {
        (MINUTES_PER_DAY / self.resolution_minutes) as usize
    }

    pub fn n_steps(&self) -> usize {
        self.steps_per_day() * self.duration_days as usize
    }

    pub fn validate(&self) -> Result<(), LoadGenError> {
        let bad = |m: String| Err(LoadGenError::InvalidSpec(m));
        if self.duration_days < 1 {
            return bad("duration_days must be >= 1".into());
        }
        if self.resolution_minutes == 0 || !MINUTES_PER_DAY.is_multiple_of(self.resolution_minutes) {
            return bad(format!("resolution {} must divide 1440", self.resolution_minutes));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale < 1.0) {
            return bad("noise_scale must be in [0, 1)".into());
        }
        if !(self.min_power_factor > 0.0 && self.min_power_factor <= 1.0) {
            return bad("min_power_factor must be in (0, 1]".into());
        }
        let monday_midnight = self.start.weekday().num_days_from_monday() == 0
            && self.start.num_seconds_from_midnight() == 0
            && self.start.nanosecond() == 0;
        if !monday_midnight {
            return bad("start must be a Monday at 00:00 UTC".into());
        }
        for m in &self.modes {
            if m.base_level.len() != self.n_loads || m.reactive_ratio.len() != self.n_loads {
                return bad(format!("mode {} must list {} loads", m.name, self.n_loads));
            }
            if m.base_level.iter().chain(&m.reactive_ratio).any(|x| !x.is_finite() || *x < 0.0) {
                return bad(format!("mode {} has negative or non-finite levels", m.name));
            }
            if !(0.0..1.0).contains(&m.variability) {
                return bad(format!("mode {} variability must be in [0, 1)", m.name));
            }
            for w in &m.windows {
                if w.start_minute >= w.end_minute || w.end_minute > MINUTES_PER_DAY || w.days.iter().any(|&d| d > 6) {
                    return bad(format!("mode {} has an invalid window", m.name));
                }
            }
        }
        self.mode_table().map(|_| ())
    }

    /// Mode index for each minute of the week.
    fn mode_table(&self) -> Result<Vec<usize>, LoadGenError> {
        let mut table = vec![usize::MAX; MINUTES_PER_WEEK as usize];
        for (k, m) in self.modes.iter().enumerate() {
            for w in &m.windows {
                for &d in &w.days {
                    for minute in w.start_minute..w.end_minute {
                        let slot = &mut table[(d as u32 * MINUTES_PER_DAY + minute) as usize];
                        if *slot != usize::MAX {
                            return Err(LoadGenError::InvalidSpec(format!(
                                "day {d} minute {minute} covered by modes {} and {}",
                                self.modes[*slot].name, m.name
                            )));
                        }
                        *slot = k;
                    }
                }
            }
        }
        if let Some(gap) = table.iter().position(|&s| s == usize::MAX) {
            return Err(LoadGenError::InvalidSpec(format!(
                "day {} minute {} not covered by any mode",
                gap / MINUTES_PER_DAY as usize,
                gap % MINUTES_PER_DAY as usize
            )));
        }
        Ok(table)
    }
}

/// Generated loads, row-major `[T x n_loads]`, with the generating mode per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadSeries {
    pub timestamps: Vec<DateTime<Utc>>,
    pub n_loads: usize,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub mode_labels: Vec<usize>,
}

impl LoadSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn p(&self, t: usize) -> &[f64] {
        &self.p[t * self.n_loads..(t + 1) * self.n_loads]
    }

    pub fn q(&self, t: usize) -> &[f64] {
        &self.q[t * self.n_loads..(t + 1) * self.n_loads]
    }

    /// Concatenated `(p, q)` for row `t`.
    pub fn input(&self, t: usize) -> Vec<f64> {
        [self.p(t), self.q(t)].concat()
    }

    /// Loads of an existing dataset, without mode labels.
    pub fn from_dataset(ds: &Dataset) -> Self {
        let n = ds.n_p();
        let mut p = Vec::with_capacity(ds.len() * n);
        let mut q = Vec::with_capacity(ds.len() * n);
        for t in 0..ds.len() {
            p.extend_from_slice(ds.p(t));
            q.extend_from_slice(ds.q(t));
        }
        Self { timestamps: ds.timestamps().to_vec(), n_loads: n, p, q, mode_labels: Vec::new() }
    }
}

/// Smooth daily shape with values in [-1, 1]. Phase depends on mode and load.
fn daily_shape(minute_of_day: u32, mode: usize, load: usize) -> f64 {
    let x = 2.0 * PI * minute_of_day as f64 / MINUTES_PER_DAY as f64;
    let phase = 0.7 * mode as f64 + 0.3 * load as f64;
    0.6 * (x + phase).sin() + 0.4 * (2.0 * x + 1.3 * phase).sin()
}

/// Generates the series without checking solver feasibility.
pub fn generate_series(spec: &LoadProfileSpec) -> Result<LoadSeries, LoadGenError> {
    spec.validate()?;
    let table = spec.mode_table()?;
    let n = spec.n_loads;
    let steps = spec.n_steps();
    let q_limit = (1.0 / (spec.min_power_factor * spec.min_power_factor) - 1.0).sqrt();
    let mut series = LoadSeries {
        timestamps: Vec::with_capacity(steps),
        n_loads: n,
        p: Vec::with_capacity(steps * n),
        q: Vec::with_capacity(steps * n),
        mode_labels: Vec::with_capacity(steps),
    };
    for t in 0..steps {
        let minute = t as u32 * spec.resolution_minutes;
        let ts = spec.start + Duration::minutes(minute as i64);
        let mode_idx = table[(minute % MINUTES_PER_WEEK) as usize];
        let mode = &spec.modes[mode_idx];
        let minute_of_day = minute % MINUTES_PER_DAY;

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(t as u64 + 1);
        for i in 0..n {
            let expected = mode.base_level[i] * (1.0 + mode.variability * daily_shape(minute_of_day, mode_idx, i));
            let np: f64 = rng.sample(StandardNormal);
            let nq: f64 = rng.sample(StandardNormal);
            let p = (expected * (1.0 + spec.noise_scale * np)).max(0.0);
            let q = (p * mode.reactive_ratio[i] * (1.0 + spec.noise_scale * nq)).clamp(-q_limit * p, q_limit * p);
            series.p.push(p);
            series.q.push(q);
        }
        series.timestamps.push(ts);
        series.mode_labels.push(mode_idx);
    }
    Ok(series)
}

/// Generates the series and confirms every row solves on `network`.
pub fn generate(spec: &LoadProfileSpec, network: &Network, settings: &SolverSettings) -> Result<LoadSeries, LoadGenError> {
    let series = generate_series(spec)?;
    solve_series(&series, network, settings, |_| {})?;
    Ok(series)
}

/// Sequential, warm-started NR over the whole series, yielding the ground-truth
/// dataset. `progress` is called with each completed day number.
pub fn solve_series(
    series: &LoadSeries,
    network: &Network,
    settings: &SolverSettings,
    mut progress: impl FnMut(usize),
) -> Result<Dataset, LoadGenError> {
    if series.n_loads != network.n_loads() {
        return Err(LoadGenError::LoadCount { spec: series.n_loads, network: network.n_loads() });
    }
    let mut ds = Dataset::empty(series.n_loads, network.n_bus());
    let mut previous: Option<(Vec<f64>, Vec<f64>)> = None;
    let day_of = |t: usize| (series.timestamps[t] - series.timestamps[0]).num_days() as usize;
    for t in 0..series.len() {
        let guess = previous.as_ref().map(|(v, a)| (v.as_slice(), a.as_slice()));
        let ts = || format_timestamp(&series.timestamps[t]);
        let sol = solve_newton_raphson(network, series.p(t), series.q(t), guess, settings)
            .map_err(|source| LoadGenError::Solver { row: t, timestamp: ts(), source })?;
        if !sol.converged {
            return Err(LoadGenError::Infeasible { row: t, timestamp: ts() });
        }
        ds.push(series.timestamps[t], series.p(t), series.q(t), &sol.v, &sol.a);
        if t + 1 == series.len() || day_of(t + 1) != day_of(t) {
            progress(day_of(t) + 1);
        }
        previous = Some((sol.v, sol.a));
    }
    Ok(ds)
}

pub fn generate_dataset(
    spec: &LoadProfileSpec,
    network: &Network,
    settings: &SolverSettings,
    progress: impl FnMut(usize),
) -> Result<(Dataset, Vec<usize>), LoadGenError> {
    if spec.n_loads != network.n_loads() {
        return Err(LoadGenError::LoadCount { spec: spec.n_loads, network: network.n_loads() });
    }
    let series = generate_series(spec)?;
    let ds = solve_series(&series, network, settings, progress)?;
    Ok((ds, series.mode_labels))
}
