//! Experiment configuration: JSON file, presets and flag overrides.
//!
//! Precedence, lowest first: built-in defaults, `--config` file, `--preset`,
//! explicit flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use jadce::rng::derive_seed;
use jadce::signal_model::{DatasetConfig, PreambleKind};
use jadce::unrolled_nets::{AdamConfig, Arch, TrainSchedule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// A new batch of `batch_size` samples at every optimizer step.
    Fresh,
    /// The stored training split at every step.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub l: usize,
    pub n: usize,
    pub m: usize,
    pub preamble_kind: PreambleKind,
    pub condition_number: Option<f64>,
    /// `null` for noiseless data.
    pub snr_db: Option<f64>,
    pub snr_sweep: Vec<f64>,
    pub activity_prob: f64,
    pub activity_sweep: Vec<f64>,
    pub lambda: f64,
    pub k_layers: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub lr0: f64,
    pub fine_tune_ratio: f64,
    pub steps_per_phase: usize,
    pub sampling: Sampling,
    pub batch_size: usize,
    pub archs: Vec<Arch>,
    /// Detection threshold relative to the largest device score.
    pub detection_threshold: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let schedule = TrainSchedule::default();
        Self {
            l: 20,
            n: 40,
            m: 8,
            preamble_kind: PreambleKind::Gaussian,
            condition_number: None,
            snr_db: Some(15.0),
            snr_sweep: Vec::new(),
            activity_prob: 0.1,
            activity_sweep: Vec::new(),
            lambda: jadce::DEFAULT_LAMBDA,
            k_layers: 12,
            train_samples: 64,
            val_samples: 128,
            test_samples: 128,
            lr0: schedule.lr0,
            fine_tune_ratio: schedule.fine_tune_ratio,
            steps_per_phase: schedule.steps_per_phase,
            sampling: Sampling::Fresh,
            batch_size: 64,
            archs: Arch::ALL.to_vec(),
            detection_threshold: 0.1,
            seed: 0,
            out: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// (L, N, M) = (20, 40, 8), K = 8.
    Desk,
    /// (L, N, M) = (100, 200, 30).
    Medium,
    /// (L, N, M) = (90, 300, 100).
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.name() == s)
            .with_context(|| format!("unknown split '{s}' (train, val, test)"))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        let (l, n, m, k) = match preset {
            Preset::Desk => (20, 40, 8, 8),
            Preset::Medium => (100, 200, 30, 12),
            Preset::Large => (90, 300, 100, 12),
        };
        self.l = l;
        self.n = n;
        self.m = m;
        self.k_layers = k;
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.n == 0 || self.m == 0 {
            bail!("dimensions must be positive, got (L, N, M) = ({}, {}, {})", self.l, self.n, self.m);
        }
        if self.l >= 2 * self.n {
            bail!(
                "invalid dims: L = {} must be below 2N = {} for a compressive preamble",
                self.l,
                2 * self.n
            );
        }
        if self.k_layers == 0 {
            bail!("k_layers must be at least 1");
        }
        if self.train_samples == 0 || self.val_samples == 0 || self.test_samples == 0 || self.batch_size == 0 {
            bail!("sample counts and batch size must be positive");
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            bail!("lambda must be positive");
        }
        if !(self.detection_threshold > 0.0 && self.detection_threshold < 1.0) {
            bail!("detection_threshold must lie in (0, 1)");
        }
        self.schedule().validate()?;
        self.split_config(Split::Train).validate()?;
        Ok(())
    }

    pub fn schedule(&self) -> TrainSchedule {
        TrainSchedule {
            lr0: self.lr0,
            fine_tune_ratio: self.fine_tune_ratio,
            steps_per_phase: self.steps_per_phase,
            adam: AdamConfig::default(),
        }
    }

    /// Dataset config of one split. All splits share the preamble drawn
    /// from the train config.
    pub fn split_config(&self, split: Split) -> DatasetConfig {
        let (samples, seed) = match split {
            Split::Train => (self.train_samples, self.seed),
            Split::Val => (self.val_samples, derive_seed(self.seed, 0x76616c, 0)),
            Split::Test => (self.test_samples, derive_seed(self.seed, 0x74657374, 0)),
        };
        DatasetConfig {
            l: self.l,
            n: self.n,
            m: self.m,
            samples,
            snr_db: self.snr_db,
            activity_prob: self.activity_prob,
            preamble_kind: self.preamble_kind,
            condition_number: self.condition_number,
            seed,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_desk_scale_experiments() {
        let c = ExperimentConfig::default();
        assert_eq!((c.activity_prob, c.lambda, c.k_layers), (0.1, 0.1, 12));
        assert_eq!((c.train_samples, c.test_samples), (64, 128));
        assert_eq!(c.lr0, 5e-4);
        assert!((c.fine_tune_ratio * c.lr0 - 1e-4).abs() < 1e-18);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"k_layers": 3, "snr_db": null}"#).unwrap();
        assert_eq!(c.k_layers, 3);
        assert_eq!(c.snr_db, None);
        assert_eq!(c.n, 40);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn presets_and_validation() {
        let mut c = ExperimentConfig::default();
        c.apply_preset(Preset::Large);
        assert_eq!((c.l, c.n, c.m), (90, 300, 100));
        c.validate().unwrap();
        c.l = 600;
        assert!(c.validate().is_err());
    }

    #[test]
    fn splits_share_dims_not_seeds() {
        let c = ExperimentConfig::default();
        let t = c.split_config(Split::Train);
        let v = c.split_config(Split::Val);
        assert_eq!((t.l, t.n, t.m), (v.l, v.n, v.m));
        assert_ne!(t.seed, v.seed);
        assert_eq!(v.samples, c.val_samples);
    }
}
