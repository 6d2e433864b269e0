//! Hyperparameters shared by both training phases and the CLI.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorMode;
use crate::error::{Error, Result};
use crate::numcore::Precision;
use crate::optim::AdamConfig;

/// Epochs and mini-batch size of one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
}

impl PhaseConfig {
    pub const MEMBERSHIP: PhaseConfig = PhaseConfig {
        epochs: 7,
        batch_size: 32,
    };
    pub const DETECTOR: PhaseConfig = PhaseConfig {
        epochs: 10,
        batch_size: 64,
    };
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialPhase {
    epochs: Option<usize>,
    batch_size: Option<usize>,
}

fn phase_with(default: PhaseConfig) -> impl Fn(PartialPhase) -> PhaseConfig {
    move |p| PhaseConfig {
        epochs: p.epochs.unwrap_or(default.epochs),
        batch_size: p.batch_size.unwrap_or(default.batch_size),
    }
}

fn membership_phase<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<PhaseConfig, D::Error> {
    PartialPhase::deserialize(d).map(phase_with(PhaseConfig::MEMBERSHIP))
}

fn detector_phase<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<PhaseConfig, D::Error> {
    PartialPhase::deserialize(d).map(phase_with(PhaseConfig::DETECTOR))
}

/// Layer sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    /// Token embedding width `d`.
    pub dim: usize,
    /// GRU hidden size `H` of the membership function.
    pub gru_hidden: usize,
    /// Hidden width of the membership head.
    pub membership_hidden: usize,
    /// Number of experts `T`.
    pub experts: usize,
    pub expert_dim: usize,
    pub widths: Vec<usize>,
    /// Filters per window width.
    pub channels: usize,
    pub gate_hidden: usize,
    pub classifier_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            dim: 32,
            gru_hidden: 64,
            membership_hidden: 64,
            experts: 5,
            expert_dim: 64,
            widths: vec![1, 2, 3, 5],
            channels: 20,
            gate_hidden: 32,
            classifier_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_len: usize,
    /// Share of each corpus used for training; the rest validates.
    pub train_fraction: f64,
    pub seeds: Vec<u64>,
    pub mode: DetectorMode,
    pub precision: Precision,
    pub model: ModelDims,
    #[serde(deserialize_with = "membership_phase")]
    pub membership: PhaseConfig,
    #[serde(deserialize_with = "detector_phase")]
    pub detector: PhaseConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_len: 170,
            train_fraction: 0.7,
            seeds: vec![0, 1, 2, 3, 4],
            mode: DetectorMode::Fuzzy,
            precision: Precision::Standard,
            model: ModelDims::default(),
            membership: PhaseConfig::MEMBERSHIP,
            detector: PhaseConfig::DETECTOR,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::usage(format!("config: {m}")));
        let m = &self.model;
        for (name, v) in [
            ("model.dim", m.dim),
            ("model.gru_hidden", m.gru_hidden),
            ("model.membership_hidden", m.membership_hidden),
            ("model.experts", m.experts),
            ("model.expert_dim", m.expert_dim),
            ("model.channels", m.channels),
            ("model.gate_hidden", m.gate_hidden),
            ("model.classifier_hidden", m.classifier_hidden),
            ("membership.epochs", self.membership.epochs),
            ("membership.batch_size", self.membership.batch_size),
            ("detector.epochs", self.detector.epochs),
            ("detector.batch_size", self.detector.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if m.widths.is_empty() || m.widths[0] == 0 || m.widths.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("model.widths must be positive and strictly increasing, got {:?}", m.widths));
        }
        if self.max_len < 3 {
            return bad(format!("max_len must be at least 3, got {}", self.max_len));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
