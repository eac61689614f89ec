//! Clustered linear-regression surrogate for the power-flow map.
//!
//! Training inputs are standardized once over the whole training set; the
//! cluster centers, the member distances, and every per-cluster regression
//! live in that scaled space. A prediction routes the input to a cluster
//! (nearest center, or its weekday for day-of-week clustering) and evaluates
//! that cluster's affine model.
//!
//! Saved models are pretty-printed JSON tagged with [`FORMAT_NAME`] and
//! [`FORMAT_VERSION`].

pub mod kmeans;
pub mod regression;

use std::path::Path;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
pub use kmeans::{kmeans, KMeansOptions, KMeansResult};
pub use regression::{fit_regression, RegressionModel, RegressionOptions, Scaler};

pub const FORMAT_NAME: &str = "hybridflow-surrogate";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("{0}")]
    Invalid(String),
    #[error("{clusters} clusters requested but only {distinct} distinct points")]
    TooFewDistinctPoints { clusters: usize, distinct: usize },
    #[error("cluster {cluster} has {size} training samples (minimum {min}); try fewer clusters")]
    ClusterTooSmall { cluster: usize, size: usize, min: usize },
    #[error("malformed surrogate file: {0}")]
    Format(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Kmeans,
    DayOfWeek,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    pub method: ClusterMethod,
    pub n_clusters: usize,
    pub seed: u64,
    pub intercept: bool,
    pub standardize: bool,
    pub min_cluster_size: usize,
    pub n_restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Kmeans,
            n_clusters: 7,
            seed: 0,
            intercept: true,
            standardize: true,
            min_cluster_size: 10,
            n_restarts: 10,
            max_iter: 300,
            tol: 1e-8,
        }
    }
}

impl TrainOptions {
    /// The number of clusters the method actually produces.
    pub fn effective_clusters(&self) -> usize {
        match self.method {
            ClusterMethod::Kmeans => self.n_clusters,
            ClusterMethod::DayOfWeek => 7,
            ClusterMethod::None => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterAssignment {
    pub cluster_index: usize,
    pub distance: f64,
    /// Share of the cluster's training members strictly closer to the center
    /// than this input, in percent.
    pub distance_percentile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteredSurrogate {
    pub format: String,
    pub version: u32,
    pub method: ClusterMethod,
    pub n_inputs: usize,
    pub n_v: usize,
    /// Input standardization shared by clustering and every model.
    pub scaler: Scaler,
    /// Centers in scaled input space.
    pub centers: Vec<Vec<f64>>,
    pub models: Vec<RegressionModel>,
    /// Sorted member-to-center distances, per cluster.
    pub train_distances: Vec<Vec<f64>>,
}

/// Weekday index of each timestamp, Monday = 0.
pub fn cluster_day_of_week(timestamps: &[DateTime<Utc>]) -> Vec<usize> {
    timestamps.iter().map(|t| t.weekday().num_days_from_monday() as usize).collect()
}

/// Percentage of `sorted` strictly below `d`.
pub fn distance_percentile(sorted: &[f64], d: f64) -> f64 {
    if sorted.is_empty() {
        return 100.0;
    }
    let below = sorted.partition_point(|&x| x < d);
    100.0 * below as f64 / sorted.len() as f64
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    kmeans::squared_distance(a, b).sqrt()
}

pub fn train(dataset: &Dataset, options: &TrainOptions) -> Result<ClusteredSurrogate, SurrogateError> {
    if dataset.is_empty() {
        return Err(SurrogateError::Invalid("training set is empty".into()));
    }
    let n = dataset.len();
    let raw: Vec<&[f64]> = (0..n).map(|t| dataset.input(t)).collect();
    let scaler = if options.standardize {
        Scaler::fit(&raw, options.intercept)
    } else {
        Scaler::identity(2 * dataset.n_p())
    };
    let z: Vec<Vec<f64>> = raw.iter().map(|r| scaler.apply(r)).collect();
    let k = options.effective_clusters();

    let (centers, labels) = match options.method {
        ClusterMethod::Kmeans => {
            let opts = KMeansOptions {
                n_clusters: options.n_clusters,
                seed: options.seed,
                n_restarts: options.n_restarts,
                max_iter: options.max_iter,
                tol: options.tol,
            };
            let res = kmeans(&z, &opts)?;
            (res.centers, res.assignments)
        }
        ClusterMethod::DayOfWeek => {
            let labels = cluster_day_of_week(dataset.timestamps());
            let dim = z[0].len();
            let centers = (0..7)
                .map(|c| {
                    let members: Vec<&[f64]> =
                        z.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(r, _)| r.as_slice()).collect();
                    regression::column_means(&members, dim)
                })
                .collect();
            (centers, labels)
        }
        ClusterMethod::None => {
            let refs: Vec<&[f64]> = z.iter().map(|r| r.as_slice()).collect();
            (vec![regression::column_means(&refs, z[0].len())], vec![0; n])
        }
    };

    let mut models = Vec::with_capacity(k);
    let mut train_distances = Vec::with_capacity(k);
    for (c, center) in centers.iter().enumerate().take(k) {
        let idx: Vec<usize> = (0..n).filter(|&t| labels[t] == c).collect();
        if idx.len() < options.min_cluster_size.max(1) {
            return Err(SurrogateError::ClusterTooSmall { cluster: c, size: idx.len(), min: options.min_cluster_size });
        }
        let inputs: Vec<&[f64]> = idx.iter().map(|&t| raw[t]).collect();
        let v: Vec<&[f64]> = idx.iter().map(|&t| dataset.v(t)).collect();
        let a: Vec<&[f64]> = idx.iter().map(|&t| dataset.a(t)).collect();
        let model =
            fit_regression(&inputs, &v, &a, Some(scaler.clone()), RegressionOptions { intercept: options.intercept })?;
        models.push(model);
        let mut d: Vec<f64> = idx.iter().map(|&t| euclid(&z[t], center)).collect();
        d.sort_by(f64::total_cmp);
        train_distances.push(d);
    }

    Ok(ClusteredSurrogate {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        method: options.method,
        n_inputs: 2 * dataset.n_p(),
        n_v: dataset.n_v(),
        scaler,
        centers,
        models,
        train_distances,
    })
}

impl ClusteredSurrogate {
    pub fn n_clusters(&self) -> usize {
        self.centers.len()
    }

    fn assign_scaled(&self, z: &[f64], timestamp: Option<&DateTime<Utc>>) -> ClusterAssignment {
        let cluster_index = match (self.method, timestamp) {
            (ClusterMethod::DayOfWeek, Some(ts)) => ts.weekday().num_days_from_monday() as usize,
            _ => kmeans::nearest(z, &self.centers).0,
        };
        let distance = euclid(z, &self.centers[cluster_index]);
        let distance_percentile = distance_percentile(&self.train_distances[cluster_index], distance);
        ClusterAssignment { cluster_index, distance, distance_percentile }
    }

    /// Nearest-center assignment of a raw input.
    pub fn assign(&self, input: &[f64]) -> ClusterAssignment {
        self.assign_scaled(&self.scaler.apply(input), None)
    }

    /// Like [`assign`](Self::assign), but day-of-week surrogates route by the
    /// timestamp's weekday.
    pub fn assign_at(&self, timestamp: &DateTime<Utc>, input: &[f64]) -> ClusterAssignment {
        self.assign_scaled(&self.scaler.apply(input), Some(timestamp))
    }

    pub fn predict(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.predict_with_assignment(None, input).0
    }

    /// Assignment and prediction together, sharing one scaling pass.
    pub fn predict_with_assignment(
        &self,
        timestamp: Option<&DateTime<Utc>>,
        input: &[f64],
    ) -> ((Vec<f64>, Vec<f64>), ClusterAssignment) {
        let z = self.scaler.apply(input);
        let asg = self.assign_scaled(&z, timestamp);
        (self.models[asg.cluster_index].predict_scaled(&z), asg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surrogate serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, SurrogateError> {
        let s: Self = serde_json::from_str(text).map_err(|e| SurrogateError::Format(e.to_string()))?;
        s.check()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SurrogateError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|source| SurrogateError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SurrogateError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| SurrogateError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// Structural consistency of a loaded model.
    fn check(&self) -> Result<(), SurrogateError> {
        let bad = |m: &str| Err(SurrogateError::Format(m.to_string()));
        if self.format != FORMAT_NAME {
            return bad("unknown format name");
        }
        if self.version != FORMAT_VERSION {
            return Err(SurrogateError::Format(format!("unsupported version {}", self.version)));
        }
        let k = self.centers.len();
        if k == 0 || self.models.len() != k || self.train_distances.len() != k {
            return bad("cluster counts disagree");
        }
        if self.method == ClusterMethod::DayOfWeek && k != 7 {
            return bad("day-of-week surrogate must have 7 clusters");
        }
        let d = self.n_inputs;
        if self.scaler.mean.len() != d || self.scaler.scale.len() != d {
            return bad("scaler dimension");
        }
        if self.scaler.scale.iter().any(|&s| !(s.is_finite() && s != 0.0)) || self.scaler.mean.iter().any(|m| !m.is_finite()) {
            return bad("scaler values must be finite with nonzero scale");
        }
        if self.centers.iter().any(|c| c.len() != d || c.iter().any(|x| !x.is_finite())) {
            return bad("center dimension or value");
        }
        for m in &self.models {
            let rows_ok = |rows: &Vec<Vec<f64>>| rows.len() == self.n_v && rows.iter().all(|r| r.len() == d);
            let b_ok = |b: &Option<Vec<f64>>| b.as_ref().is_none_or(|b| b.len() == self.n_v);
            let s_ok = m.scaler.as_ref().is_none_or(|s| s.mean.len() == d && s.scale.len() == d);
            if !(rows_ok(&m.coef_v) && rows_ok(&m.coef_a) && b_ok(&m.intercept_v) && b_ok(&m.intercept_a) && s_ok) {
                return bad("regression model dimensions");
            }
            if !m.is_finite() {
                return bad("non-finite regression coefficient");
            }
        }
        if self.train_distances.iter().any(|d| d.is_empty() || d.windows(2).any(|w| !(w[0] <= w[1]))) {
            return bad("train distances must be non-empty and sorted");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ts(t: usize, res_min: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() + Duration::minutes(res_min * t as i64)
    }

    /// Three regimes in a 2-D input, each with its own exact linear map.
    fn piecewise(n_each: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.2, 0.1], [1.0, 0.6], [0.5, 1.4]];
        let maps = [[0.3, -0.2, 0.9], [-0.5, 0.1, 1.2], [0.05, 0.4, 0.7]];
        let mut ds = Dataset::empty(1, 1);
        for t in 0..3 * n_each {
            let r = t % 3;
            let p = centers[r][0] + rng.random_range(-0.05..0.05);
            let q = centers[r][1] + rng.random_range(-0.05..0.05);
            let [c1, c2, b] = maps[r];
            let v = c1 * p + c2 * q + b;
            let a = c2 * p - c1 * q - 0.1 * b;
            ds.push(ts(t, 5), &[p], &[q], &[v], &[a]);
        }
        ds
    }

    fn max_err(s: &ClusteredSurrogate, ds: &Dataset) -> f64 {
        (0..ds.len())
            .map(|t| {
                let (v, a) = s.predict(ds.input(t));
                (v[0] - ds.v(t)[0]).abs().max((a[0] - ds.a(t)[0]).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn piecewise_regimes_need_clusters() {
        let train_ds = piecewise(40, 1);
        let test_ds = piecewise(20, 2);
        let opts = TrainOptions { n_clusters: 3, seed: 5, ..TrainOptions::default() };
        let three = train(&train_ds, &opts).unwrap();
        assert!(max_err(&three, &test_ds) <= 1e-6);
        let one = train(&train_ds, &TrainOptions { method: ClusterMethod::None, ..opts }).unwrap();
        assert!(max_err(&one, &test_ds) > 1e-2);
    }

    #[test]
    fn none_equals_single_kmeans_cluster() {
        let ds = piecewise(20, 3);
        let none = train(&ds, &TrainOptions { method: ClusterMethod::None, ..TrainOptions::default() }).unwrap();
        let k1 = train(&ds, &TrainOptions { n_clusters: 1, ..TrainOptions::default() }).unwrap();
        assert_eq!(none.models, k1.models);
        assert_eq!(none.centers, k1.centers);
        for t in 0..ds.len() {
            assert_eq!(none.predict(ds.input(t)), k1.predict(ds.input(t)));
        }
    }

    #[test]
    fn assign_matches_linear_scan() {
        let ds = piecewise(30, 4);
        let s = train(&ds, &TrainOptions { n_clusters: 3, seed: 1, ..TrainOptions::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = [rng.random_range(-0.5..2.0), rng.random_range(-0.5..2.0)];
            let z = s.scaler.apply(&x);
            let mut best = (0, f64::INFINITY);
            for (k, c) in s.centers.iter().enumerate() {
                let d = ((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2)).sqrt();
                if d < best.1 {
                    best = (k, d);
                }
            }
            let asg = s.assign(&x);
            assert_eq!(asg.cluster_index, best.0);
            assert!((asg.distance - best.1).abs() <= 1e-12);
        }
    }

    #[test]
    fn percentile_extremes() {
        let ds = piecewise(30, 6);
        let s = train(&ds, &TrainOptions { n_clusters: 3, seed: 1, ..TrainOptions::default() }).unwrap();
        for (k, c) in s.centers.iter().enumerate() {
            let raw: Vec<f64> = c.iter().zip(&s.scaler.mean).zip(&s.scaler.scale).map(|((z, m), sc)| z * sc + m).collect();
            let asg = s.assign(&raw);
            assert_eq!(asg.cluster_index, k);
            assert!(asg.distance < 1e-12);
            assert_eq!(asg.distance_percentile, 0.0);
        }
        let far = s.assign(&[50.0, 50.0]);
        assert_eq!(far.distance_percentile, 100.0);
        assert_eq!(distance_percentile(&[1.0, 2.0, 3.0, 4.0], 2.5), 50.0);
    }

    #[test]
    fn day_of_week_clusters() {
        // 2024-01-01 is a Monday.
        assert_eq!(cluster_day_of_week(&[ts(0, 5)]), vec![0]);
        let mut ds = Dataset::empty(1, 1);
        for t in 0..28 * 24 {
            let x = (t as f64 * 0.1).sin() * 0.01 + 0.02;
            ds.push(ts(t, 60), &[x], &[x / 2.0], &[1.0 - x], &[-x]);
        }
        let labels = cluster_day_of_week(ds.timestamps());
        for c in 0..7 {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), ds.len() / 7);
        }
        let s = train(&ds, &TrainOptions { method: ClusterMethod::DayOfWeek, ..TrainOptions::default() }).unwrap();
        assert_eq!(s.n_clusters(), 7);
        let tuesday = ts(24 + 3, 60);
        assert_eq!(s.assign_at(&tuesday, ds.input(27)).cluster_index, 1);
    }

    #[test]
    fn small_cluster_rejected() {
        let ds = piecewise(5, 7);
        let err = train(&ds, &TrainOptions { n_clusters: 3, ..TrainOptions::default() }).unwrap_err();
        assert!(matches!(err, SurrogateError::ClusterTooSmall { min: 10, .. }), "{err}");
    }

    #[test]
    fn json_round_trip_and_determinism() {
        let ds = piecewise(20, 8);
        let opts = TrainOptions { n_clusters: 3, seed: 42, ..TrainOptions::default() };
        let a = train(&ds, &opts).unwrap();
        let b = train(&ds, &opts).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let back = ClusteredSurrogate::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        assert!(ClusteredSurrogate::from_json("{}").is_err());
        let mut broken = a.clone();
        broken.version = 99;
        assert!(ClusteredSurrogate::from_json(&broken.to_json()).is_err());
    }

    #[test]
    fn predict_is_manual_affine_evaluation() {
        let ds = piecewise(20, 10);
        let s = train(&ds, &TrainOptions { n_clusters: 3, seed: 3, ..TrainOptions::default() }).unwrap();
        let x = [0.55, 1.3];
        let k = s.assign(&x).cluster_index;
        let m = &s.models[k];
        let z: Vec<f64> = (0..2).map(|j| (x[j] - s.scaler.mean[j]) / s.scaler.scale[j]).collect();
        let v = m.coef_v[0][0] * z[0] + m.coef_v[0][1] * z[1] + m.intercept_v.as_ref().unwrap()[0];
        let (pv, _) = s.predict(&x);
        assert!((pv[0] - v).abs() <= 1e-14);
    }
}
