//! Binary checkpoint container.
//!
//! Layout: magic `ISEC` | u32 version (LE) | u64 header length (LE) |
//! JSON header | raw little-endian tensor data. The header's registry
//! gives name, shape, dtype and byte offset of every tensor (parameters,
//! then optimizer moments) within the data section.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

use super::adam::OptimState;
use super::schedule::PlateauScheduler;
use super::EpochStats;

const MAGIC: &[u8; 4] = b"ISEC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

/// One epoch of checkpointed history. Wall-clock timing stays out so that
/// identically seeded runs write byte-identical files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

impl From<&EpochStats> for HistoryEntry {
    fn from(e: &EpochStats) -> HistoryEntry {
        HistoryEntry { epoch: e.epoch, train_loss: e.train_loss, val_loss: e.val_loss, lr: e.lr }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    version: u32,
    model: ModelConfig,
    registry: Vec<TensorEntry>,
    optim_step: u64,
    lr: f64,
    schedule: PlateauScheduler,
    history: Vec<HistoryEntry>,
    config_hash: String,
}

/// Everything needed to resume or evaluate a training run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
    pub optim: OptimState,
    pub schedule: PlateauScheduler,
    pub history: Vec<HistoryEntry>,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut registry = Vec::new();
        let mut data: Vec<u8> = Vec::new();
        let mut push = |name: String, t: &Tensor, data: &mut Vec<u8>| {
            registry.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                dtype: "f64".to_string(),
                offset: data.len() as u64,
            });
            for v in t.data() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, t) in self.params.iter() {
            push(name.to_string(), t, &mut data);
        }
        for (i, (name, _)) in self.params.iter().enumerate() {
            push(format!("optim.m.{name}"), &self.optim.m[i], &mut data);
        }
        for (i, (name, _)) in self.params.iter().enumerate() {
            push(format!("optim.v.{name}"), &self.optim.v[i], &mut data);
        }

        let header = Header {
            version: self.version,
            model: self.config,
            registry,
            optim_step: self.optim.step,
            lr: self.optim.lr,
            schedule: self.schedule.clone(),
            history: self.history.clone(),
            config_hash: self.config_hash.clone(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

        let mut file = std::fs::File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&self.version.to_le_bytes())?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        file.write_all(&data)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let mut file = std::fs::File::open(path.as_ref())?;
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        file.read_exact(&mut word).map_err(trunc)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {version} unsupported (expect {CHECKPOINT_VERSION})"
            )));
        }
        let mut len = [0u8; 8];
        file.read_exact(&mut len).map_err(trunc)?;
        let header_len = u64::from_le_bytes(len) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes).map_err(trunc)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;

        let read_tensor = |entry: &TensorEntry| -> Result<Tensor> {
            if entry.dtype != "f64" {
                return Err(Error::Checkpoint(format!(
                    "{}: unsupported dtype {}",
                    entry.name, entry.dtype
                )));
            }
            let numel: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let stop = start + 8 * numel;
            if stop > data.len() {
                return Err(Error::Checkpoint(format!("{}: data truncated", entry.name)));
            }
            let values = data[start..stop]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Ok(Tensor::new(entry.shape.clone(), values))
        };

        // parameters carry the registry layout; moments mirror them
        let mut params = ModelParams::init(&header.model, 0);
        let mut param_total = 0usize;
        for (name, t) in params.iter_mut() {
            let entry = header
                .registry
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let loaded = read_tensor(entry)?;
            if loaded.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?} != expected {:?}",
                    loaded.shape(),
                    t.shape()
                )));
            }
            param_total += loaded.numel();
            *t = loaded;
        }
        if param_total != header.model.param_count() {
            return Err(Error::Checkpoint(format!(
                "registry holds {param_total} parameters, config expects {}",
                header.model.param_count()
            )));
        }

        let mut optim = OptimState::new(&params, header.lr);
        optim.step = header.optim_step;
        for (i, (name, _)) in params.iter().enumerate() {
            let m_entry = header
                .registry
                .iter()
                .find(|e| e.name == format!("optim.m.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optim.m.{name}")))?;
            optim.m[i] = read_tensor(m_entry)?;
            let v_entry = header
                .registry
                .iter()
                .find(|e| e.name == format!("optim.v.{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing optim.v.{name}")))?;
            optim.v[i] = read_tensor(v_entry)?;
        }

        Ok(Checkpoint {
            version,
            config: header.model,
            params,
            optim,
            schedule: header.schedule,
            history: header.history,
            config_hash: header.config_hash,
        })
    }
}

fn trunc(e: std::io::Error) -> Error {
    Error::Checkpoint(format!("truncated file: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{FusionMode, Model, ModelConfig};
    use crate::scene::{synth_source, SynthKind};

    fn sample_checkpoint() -> Checkpoint {
        let cfg = ModelConfig::tiny_dprnn(FusionMode::Tv);
        let params = ModelParams::init(&cfg, 5);
        let optim = OptimState::new(&params, 1e-3);
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: cfg,
            params,
            optim,
            schedule: PlateauScheduler::new(10, 0.5),
            history: vec![HistoryEntry { epoch: 0, train_loss: -1.0, val_loss: -0.5, lr: 1e-3 }],
            config_hash: "abc123".into(),
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ck = sample_checkpoint();
        ck.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        loaded.save(&p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.ckpt");
        sample_checkpoint().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        for cut in [2, 9, 40, bytes.len() - 17] {
            std::fs::write(&p, &bytes[..cut]).unwrap();
            assert!(Checkpoint::load(&p).is_err(), "cut at {cut} must fail");
        }
    }

    #[test]
    fn loaded_model_forward_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = sample_checkpoint();
        ck.save(&p).unwrap();
        let loaded = Checkpoint::load(&p).unwrap();

        let mix = synth_source(SynthKind::AmNoise, 1, 0.4, 8000);
        let refr = synth_source(SynthKind::AmNoise, 2, 0.4, 8000);
        let a = Model { config: ck.config, params: ck.params }.infer(&mix, &refr).unwrap();
        let b = Model { config: loaded.config, params: loaded.params }
            .infer(&mix, &refr)
            .unwrap();
        assert_eq!(a.estimate.samples, b.estimate.samples);
    }
}
