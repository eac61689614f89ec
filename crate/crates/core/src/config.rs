//! The TOML run configuration read by every CLI command.
//!
//! Relative paths are resolved against the directory holding the config file.
//! A network path of the form `bundled:NAME` selects a built-in network. If
//! `dataset` is omitted, commands use `<output_dir>/dataset.csv`, which is
//! where `generate` writes.
//!
//! Canonical form: [`RunConfigFile::to_toml_string`] writes every field, and
//! parsing that text gives back an equal value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SplitSpec;
use crate::hybrid::HybridConfig;
use crate::loadgen::{LoadProfileSpec, WeeklyPreset};
use crate::solver::SolverSettings;
use crate::surrogate::{ClusterMethod, TrainOptions};
use crate::tuning::SweepSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoadSection {
    pub seed: u64,
    /// Parameters of the seven-mode weekly preset.
    pub preset: WeeklyPreset,
    /// A fully specified profile, used instead of the preset when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<LoadProfileSpec>,
}

impl Default for LoadSection {
    fn default() -> Self {
        Self { seed: 7, preset: WeeklyPreset::default(), custom: None }
    }
}

impl LoadSection {
    pub fn profile(&self, n_loads: usize) -> LoadProfileSpec {
        match &self.custom {
            Some(c) => LoadProfileSpec { seed: self.seed, ..c.clone() },
            None => LoadProfileSpec::weekly(n_loads, self.seed, &self.preset),
        }
    }

    pub fn resolution_minutes(&self) -> u32 {
        self.custom.as_ref().map_or(self.preset.resolution_minutes, |c| c.resolution_minutes)
    }
}

/// Check settings as written in the file; the interval is in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridSection {
    pub error_check: bool,
    pub error_check_threshold: f64,
    pub max_check_interval_minutes: u32,
    pub step_change_check: bool,
    pub step_change_threshold: f64,
    pub distance_check: bool,
    pub distance_percentile_threshold: f64,
}

impl Default for HybridSection {
    fn default() -> Self {
        Self {
            error_check: true,
            error_check_threshold: 0.01,
            max_check_interval_minutes: 60,
            step_change_check: true,
            step_change_threshold: 0.20,
            distance_check: false,
            distance_percentile_threshold: 95.0,
        }
    }
}

impl HybridSection {
    pub fn to_config(&self, resolution_minutes: u32) -> Result<HybridConfig, ConfigError> {
        if resolution_minutes == 0 || !self.max_check_interval_minutes.is_multiple_of(resolution_minutes) {
            return Err(ConfigError::Invalid(format!(
                "max_check_interval_minutes ({}) must be a multiple of the {resolution_minutes}-minute resolution",
                self.max_check_interval_minutes
            )));
        }
        let cfg = HybridConfig {
            error_check_threshold: self.error_check.then_some(self.error_check_threshold),
            max_check_interval: (self.max_check_interval_minutes / resolution_minutes) as usize,
            distance_percentile_threshold: self.distance_check.then_some(self.distance_percentile_threshold),
            step_change_threshold: self.step_change_check.then_some(self.step_change_threshold),
        };
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningSection {
    /// Largest acceptable max `eps_inf` when recommending a setting.
    pub budget: f64,
    /// Histogram settings for `report`.
    pub histogram_bin_width: f64,
    pub histogram_clip: f64,
    #[serde(rename = "sweep")]
    pub sweeps: Vec<SweepSpec>,
}

impl Default for TuningSection {
    fn default() -> Self {
        Self { budget: 0.01, histogram_bin_width: 0.0005, histogram_clip: 0.01, sweeps: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub network: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[serde(default)]
    pub load: LoadSection,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub surrogate: TrainOptions,
    #[serde(default)]
    pub hybrid: HybridSection,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub tuning: TuningSection,
}

fn default_output_dir() -> String {
    "out".into()
}

/// A parsed config plus the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub file: RunConfigFile,
    pub base_dir: PathBuf,
}

impl RunConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parameter checks that need no filesystem access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |m: String| Err(ConfigError::Invalid(m));
        self.solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.hybrid.to_config(self.load.resolution_minutes())?;
        if self.split.train_days == 0 {
            return inv("split.train_days must be >= 1".into());
        }
        let s = &self.surrogate;
        if s.method == ClusterMethod::Kmeans && s.n_clusters == 0 {
            return inv("surrogate.n_clusters must be >= 1".into());
        }
        if s.n_restarts == 0 || s.max_iter == 0 || !(s.tol >= 0.0) {
            return inv("surrogate n_restarts and max_iter must be >= 1 and tol >= 0".into());
        }
        let t = &self.tuning;
        if !(t.budget >= 0.0) || !(t.histogram_bin_width > 0.0) || !(t.histogram_clip > 0.0) {
            return inv("tuning budget must be >= 0 and histogram settings > 0".into());
        }
        for sw in &t.sweeps {
            sw.grid().map_err(|e| ConfigError::Invalid(format!("sweep {}: {e}", sw.parameter.name())))?;
        }
        let p = &self.load.preset;
        if p.resolution_minutes == 0 || 1440 % p.resolution_minutes != 0 || p.duration_days == 0 {
            return inv("load preset resolution must divide 1440 and duration_days must be >= 1".into());
        }
        if !(p.peak > 0.0 && p.peak.is_finite()) || !(0.0..1.0).contains(&p.variability) || !(p.noise_scale >= 0.0) {
            return inv("load preset needs peak > 0, variability in [0, 1) and noise_scale >= 0".into());
        }
        Ok(())
    }

    /// Replaces every seed (load generation and clustering) with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.load.seed = seed;
        self.surrogate.seed = seed;
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let file = RunConfigFile::from_toml_str(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self { file, base_dir };
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        if p.starts_with("bundled:") {
            return PathBuf::from(p);
        }
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Referenced inputs must exist when the config is loaded.
    fn check_paths(&self) -> Result<(), ConfigError> {
        let net = &self.file.network;
        if !net.starts_with("bundled:") && !self.resolve(net).is_file() {
            return Err(ConfigError::Invalid(format!("network file {} not found", self.resolve(net).display())));
        }
        if let Some(ds) = &self.file.dataset {
            if !self.resolve(ds).is_file() {
                return Err(ConfigError::Invalid(format!("dataset {} not found", self.resolve(ds).display())));
            }
        }
        Ok(())
    }

    pub fn network_path(&self) -> PathBuf {
        self.resolve(&self.file.network)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.file.output_dir)
    }

    pub fn dataset_path(&self) -> PathBuf {
        match &self.file.dataset {
            Some(d) => self.resolve(d),
            None => self.output_dir().join("dataset.csv"),
        }
    }
}

/// The annotated example configuration shipped with the crate.
pub const EXAMPLE_CONFIG: &str = include_str!("../data/configs/reference.toml");

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tuning::SweepParameter;

    #[test]
    fn example_parses_and_matches_defaults() {
        let cfg = RunConfigFile::from_toml_str(EXAMPLE_CONFIG).unwrap();
        assert_eq!(cfg.network, "bundled:feeder30");
        assert_eq!(cfg.split, SplitSpec::default());
        assert_eq!(cfg.surrogate.method, ClusterMethod::Kmeans);
        assert_eq!(cfg.surrogate.n_clusters, 7);
        assert_eq!(cfg.hybrid.to_config(5).unwrap(), HybridConfig::default());
        assert!(!cfg.tuning.sweeps.is_empty());
    }

    #[test]
    fn canonical_round_trip() {
        let mut cfg = RunConfigFile::from_toml_str(EXAMPLE_CONFIG).unwrap();
        cfg.dataset = Some("data.csv".into());
        cfg.load.custom = Some(LoadProfileSpec::constant(vec![0.01, 0.02], vec![0.3, 0.3], 15, 2));
        let text = cfg.to_toml_string();
        let back = RunConfigFile::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml_string(), text);
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfigFile::from_toml_str("network = \"bundled:ring4\"\n").unwrap();
        assert_eq!(cfg.output_dir, "out");
        assert_eq!(cfg.solver, SolverSettings::default());
        assert_eq!(cfg.hybrid, HybridSection::default());
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [
            "network = \"x\"\nunknown = 1\n",
            "network = \"x\"\n[hybrid]\nmax_check_interval_minutes = 7\n",
            "network = \"x\"\n[solver]\nmismatch_tolerance = 0.0\n",
            "network = \"x\"\n[split]\ntrain_days = 0\n",
            "network = \"x\"\n[[tuning.sweep]]\nparameter = \"step_change\"\nvalues = []\n",
            "network = \"x\"\n[hybrid]\ndistance_check = true\ndistance_percentile_threshold = 150.0\n",
        ] {
            assert!(RunConfigFile::from_toml_str(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn seed_override_and_paths() {
        let mut cfg = RunConfigFile::from_toml_str("network = \"net.toml\"\n").unwrap();
        cfg.override_seed(99);
        assert_eq!((cfg.load.seed, cfg.surrogate.seed), (99, 99));
        let rc = RunConfig { file: cfg, base_dir: PathBuf::from("/tmp/x") };
        assert_eq!(rc.network_path(), PathBuf::from("/tmp/x/net.toml"));
        assert_eq!(rc.dataset_path(), PathBuf::from("/tmp/x/out/dataset.csv"));
        assert!(rc.check_paths().is_err());
    }

    #[test]
    fn sweep_tables_parse() {
        let text = "network = \"x\"\n[[tuning.sweep]]\nparameter = \"error_threshold_x_interval\"\nvalues = [0.01]\nvalues2 = [6.0, 12.0]\n";
        let cfg = RunConfigFile::from_toml_str(text).unwrap();
        assert_eq!(cfg.tuning.sweeps[0].parameter, SweepParameter::ErrorThresholdInterval);
        assert_eq!(cfg.tuning.sweeps[0].calibration_days, 1);
    }
}
