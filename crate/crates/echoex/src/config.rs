//! Experiment configuration file: four sections `[model]`, `[train]`,
//! `[data]`, `[paths]` in TOML form.
//!
//! Every key has a default (the full-scale values), unknown keys are
//! rejected by name, and the canonical emission is byte-stable so
//! parse -> emit -> parse is a fixed point.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Arch, DprnnConfig, EncoderConfig, FusionMode, ModelConfig, TcnConfig};
use crate::scene::SceneSpec;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub arch: Arch,
    pub fusion: FusionMode,
    pub causal: bool,
    pub window: usize,
    pub stride: usize,
    pub channels: usize,
    pub tcn_bottleneck: usize,
    pub tcn_hidden: usize,
    pub tcn_kernel: usize,
    pub tcn_blocks: usize,
    pub tcn_repeats: usize,
    pub dprnn_bottleneck: usize,
    pub dprnn_chunk: usize,
    pub dprnn_hidden: usize,
    pub dprnn_blocks: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            arch: Arch::Dprnn,
            fusion: FusionMode::Tv,
            causal: false,
            window: 32,
            stride: 16,
            channels: 256,
            tcn_bottleneck: 64,
            tcn_hidden: 96,
            tcn_kernel: 3,
            tcn_blocks: 6,
            tcn_repeats: 2,
            dprnn_bottleneck: 64,
            dprnn_chunk: 30,
            dprnn_hidden: 128,
            dprnn_blocks: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub train_per_epoch: usize,
    pub val_per_epoch: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            clip_norm: 5.0,
            batch: 24,
            max_epochs: 300,
            train_per_epoch: 10_000,
            val_per_epoch: 4_000,
            plateau_patience: 10,
            plateau_factor: 0.5,
            early_stop_patience: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub sample_rate: u32,
    /// Scene duration in seconds.
    pub duration: f64,
    pub sir_low: f64,
    pub sir_high: f64,
    /// `"synthetic"` or a directory of WAV source material.
    pub bank: String,
    /// Synthetic bank: entries per class.
    pub bank_per_class: usize,
    /// Synthetic bank: source material length in seconds.
    pub bank_duration: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            sample_rate: 16000,
            duration: 4.0,
            sir_low: -5.0,
            sir_high: 5.0,
            bank: "synthetic".into(),
            bank_per_class: 4,
            bank_duration: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub out_dir: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection { out_dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub paths: PathsSection,
}

impl ExperimentConfig {
    /// Full-scale defaults.
    pub fn full() -> ExperimentConfig {
        ExperimentConfig::default()
    }

    /// Desk-scale profile: 8 kHz, 1 s scenes, slim model, 200
    /// examples/epoch at batch 8.
    pub fn desk() -> ExperimentConfig {
        let m = ModelConfig::desk(Arch::Dprnn, FusionMode::Tv);
        ExperimentConfig {
            model: ModelSection {
                arch: m.arch,
                fusion: m.fusion,
                causal: m.causal,
                window: m.encoder.window,
                stride: m.encoder.stride,
                channels: m.encoder.channels,
                tcn_bottleneck: m.tcn.bottleneck,
                tcn_hidden: m.tcn.hidden,
                tcn_kernel: m.tcn.kernel,
                tcn_blocks: m.tcn.blocks,
                tcn_repeats: m.tcn.repeats,
                dprnn_bottleneck: m.dprnn.bottleneck,
                dprnn_chunk: m.dprnn.chunk,
                dprnn_hidden: m.dprnn.hidden,
                dprnn_blocks: m.dprnn.blocks,
            },
            train: TrainSection {
                batch: 8,
                max_epochs: 40,
                train_per_epoch: 200,
                val_per_epoch: 40,
                ..TrainSection::default()
            },
            data: DataSection {
                sample_rate: 8000,
                duration: 1.0,
                bank_duration: 3.0,
                ..DataSection::default()
            },
            paths: PathsSection::default(),
        }
    }

    /// Smallest profile; what the acceptance experiments run.
    pub fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::desk();
        let m = ModelConfig::tiny_dprnn(FusionMode::Tv);
        cfg.model.channels = m.encoder.channels;
        cfg.model.tcn_bottleneck = m.tcn.bottleneck;
        cfg.model.tcn_hidden = m.tcn.hidden;
        cfg.model.tcn_blocks = m.tcn.blocks;
        cfg.model.tcn_repeats = m.tcn.repeats;
        cfg.model.dprnn_bottleneck = m.dprnn.bottleneck;
        cfg.model.dprnn_chunk = m.dprnn.chunk;
        cfg.model.dprnn_hidden = m.dprnn.hidden;
        cfg.model.dprnn_blocks = m.dprnn.blocks;
        cfg.train.max_epochs = 30;
        cfg.data.duration = 0.5;
        cfg
    }

    pub fn preset(name: &str) -> Result<ExperimentConfig> {
        match name {
            "full" => Ok(ExperimentConfig::full()),
            "desk" => Ok(ExperimentConfig::desk()),
            "tiny" => Ok(ExperimentConfig::tiny()),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            arch: m.arch,
            fusion: m.fusion,
            causal: m.causal,
            encoder: EncoderConfig { window: m.window, stride: m.stride, channels: m.channels },
            tcn: TcnConfig {
                bottleneck: m.tcn_bottleneck,
                hidden: m.tcn_hidden,
                kernel: m.tcn_kernel,
                blocks: m.tcn_blocks,
                repeats: m.tcn_repeats,
            },
            dprnn: DprnnConfig {
                bottleneck: m.dprnn_bottleneck,
                chunk: m.dprnn_chunk,
                hidden: m.dprnn_hidden,
                blocks: m.dprnn_blocks,
            },
            sample_rate: self.data.sample_rate,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.learning_rate,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm,
            batch: t.batch,
            max_epochs: t.max_epochs,
            train_per_epoch: t.train_per_epoch,
            val_per_epoch: t.val_per_epoch,
            plateau_patience: t.plateau_patience,
            plateau_factor: t.plateau_factor,
            early_stop_patience: t.early_stop_patience,
            seed: t.seed,
        }
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec { duration: self.data.duration, sir_range: (self.data.sir_low, self.data.sir_high) }
    }

    /// Byte-stable canonical TOML form.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical form; stamped on produced artifacts.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_toml().as_bytes());
        hex_prefix(&digest, 16)
    }
}

pub(crate) fn hex_prefix(bytes: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

/// Strict parse: unknown keys are errors, missing keys take defaults.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}
