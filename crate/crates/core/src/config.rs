//! Run configuration: one JSON document holding every knob of a training
//! run. Unknown fields are rejected; see the README for the field reference.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugmentParams;
use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::net::NetConfig;
use crate::optim::OptimConfig;
use crate::prw::PrwParams;
use crate::transfer::TransferMethod;

/// Style-transfer method selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    #[serde(default = "default_transfer_method")]
    pub method: TransferMethodKind,
    /// Directory of stem-matched PNGs; required by `precomputed`.
    #[serde(default)]
    pub precomputed_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMethodKind {
    Identity,
    HistogramMatch,
    StatsTransfer,
    Precomputed,
}

fn default_transfer_method() -> TransferMethodKind {
    TransferMethodKind::HistogramMatch
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { method: default_transfer_method(), precomputed_dir: None }
    }
}

impl TransferConfig {
    pub fn to_method(&self) -> Result<TransferMethod> {
        Ok(match self.method {
            TransferMethodKind::Identity => TransferMethod::Identity,
            TransferMethodKind::HistogramMatch => TransferMethod::HistogramMatch,
            TransferMethodKind::StatsTransfer => TransferMethod::StatsTransfer,
            TransferMethodKind::Precomputed => TransferMethod::Precomputed(
                self.precomputed_dir
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("transfer.precomputed_dir is required for method \"precomputed\"".into()))?,
            ),
        })
    }
}

/// Which fusion variant the training step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    None,
    Cnn,
    Efficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    #[serde(default = "default_variant")]
    pub variant: FusionVariant,
    /// Patch side length for efficient fusion.
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    #[serde(default)]
    pub params: FusionParams,
}

fn default_variant() -> FusionVariant {
    FusionVariant::None
}
fn default_patch_size() -> usize {
    8
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            variant: default_variant(),
            patch_size: default_patch_size(),
            params: FusionParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrwConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default)]
    pub params: PrwParams,
}

impl Default for PrwConfig {
    fn default() -> Self {
        PrwConfig { enabled: false, params: PrwParams::default() }
    }
}

/// Where the two domains come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Generate the synthetic pair in memory. `seed` fixes the pair
    /// independently of the run seed; absent, it derives from the run seed.
    Synthetic {
        classes: usize,
        n_images: usize,
        size: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Load the standard on-disk layout rooted here.
    Disk { root: PathBuf, classes: usize },
}

impl DatasetConfig {
    pub fn classes(&self) -> usize {
        match self {
            DatasetConfig::Synthetic { classes, .. } => *classes,
            DatasetConfig::Disk { classes, .. } => *classes,
        }
    }
}

/// Full training-run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub net: NetConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    /// EMA coefficient of the teacher (not a published value; see README).
    #[serde(default = "default_alpha")]
    pub ema_alpha: f64,
    /// Pseudo-label confidence threshold for the quality scalar.
    #[serde(default = "default_delta")]
    pub quality_delta: f64,
    #[serde(default)]
    pub transfer: TransferConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub prw: PrwConfig,
    #[serde(default)]
    pub augment: AugmentParams,
    /// Disable to train source-only (the adaptation baseline).
    #[serde(default = "default_true")]
    pub target_loss_enabled: bool,
    /// Images consumed per step: half source, half target.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    /// Run artifacts (loss log, checkpoints, reports) land here.
    pub out_dir: PathBuf,
    /// Evaluate the teacher on the target eval split every this many steps;
    /// zero means final evaluation only.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Write an intermediate checkpoint every this many steps; zero means
    /// final checkpoint only.
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Optional checkpoint to resume from.
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

fn default_alpha() -> f64 {
    0.99
}
fn default_delta() -> f64 {
    0.968
}
fn default_true() -> bool {
    true
}
fn default_batch() -> usize {
    2
}
fn default_total_steps() -> usize {
    2000
}
fn default_eval_every() -> usize {
    500
}

impl RunConfig {
    /// Parses a JSON document, rejecting unknown fields, then validates.
    pub fn from_json(json: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(json)
            .map_err(|e| Error::InvalidConfig(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.optim.validate()?;
        self.augment.validate()?;
        self.fusion.params.validate()?;
        if self.fusion.patch_size < 1 {
            return Err(Error::InvalidConfig("fusion.patch_size must be >= 1".into()));
        }
        if self.prw.enabled {
            self.prw.params.validate()?;
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::InvalidConfig(format!("ema_alpha {} outside [0, 1]", self.ema_alpha)));
        }
        if !(0.0..=1.0).contains(&self.quality_delta) {
            return Err(Error::InvalidConfig(format!(
                "quality_delta {} outside [0, 1]",
                self.quality_delta
            )));
        }
        if self.batch_size < 2 || self.batch_size % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} must be an even count >= 2 (half source, half target)",
                self.batch_size
            )));
        }
        if self.dataset.classes() != self.net.classes {
            return Err(Error::InvalidConfig(format!(
                "dataset classes {} != net.classes {}",
                self.dataset.classes(),
                self.net.classes
            )));
        }
        if self.optim.warmup_steps > self.total_steps && self.total_steps > 0 {
            return Err(Error::InvalidConfig(format!(
                "optim.warmup_steps {} exceeds total_steps {}",
                self.optim.warmup_steps, self.total_steps
            )));
        }
        self.transfer.to_method().map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "net": {"input_channels": 3, "classes": 4},
            "dataset": {"kind": "synthetic", "classes": 4, "n_images": 8, "size": 32},
            "out_dir": "/tmp/run"
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.batch_size, 2);
        assert_eq!(cfg.ema_alpha, 0.99);
        assert_eq!(cfg.fusion.variant, FusionVariant::None);
        assert!(cfg.target_loss_enabled);
        assert!(!cfg.prw.enabled);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let json = minimal_json().replace("\"out_dir\"", "\"typo_field\": 1, \"out_dir\"");
        let err = RunConfig::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("typo_field"), "{err}");
    }

    #[test]
    fn class_mismatch_is_rejected() {
        let json = minimal_json().replace("\"classes\": 4, \"n_images\"", "\"classes\": 5, \"n_images\"");
        assert!(RunConfig::from_json(&json).is_err());
    }

    #[test]
    fn precomputed_requires_directory() {
        let json = minimal_json().replace(
            "\"out_dir\"",
            "\"transfer\": {\"method\": \"precomputed\"}, \"out_dir\"",
        );
        let err = RunConfig::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("precomputed_dir"), "{err}");
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::from_json(&minimal_json()).unwrap();
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }
}
