//! Training loop: Adam with weight decay, global gradient clipping,
//! per-epoch dynamic data, plateau learning-rate halving, early stopping
//! and best-checkpoint tracking.
//!
//! The loop is a pure function of its configs and seed: scenes are keyed
//! by `(seed, epoch, index)`, batch workers reduce gradients in example
//! order, and everything runs in f64, so parallel runs reproduce
//! single-threaded runs bit for bit.

mod adam;
mod checkpoint;
mod schedule;

pub use adam::{adam_step, clip_grad_l2, OptimState, ADAM_EPS, BETA1, BETA2};
pub use checkpoint::{Checkpoint, HistoryEntry, CHECKPOINT_VERSION};
pub use schedule::{early_stop, PlateauScheduler};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::sdr_loss;
use crate::nn::{Model, ModelConfig, ModelParams};
use crate::rir::GeometryPool;
use crate::scene::{dataset_scene, AerScene, SceneSpec, SourceBank};
use crate::seeding::stream_seed;
use crate::tensor::{Tape, Tensor};

/// Training hyperparameters; defaults are the full-scale values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
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

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
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

impl TrainConfig {
    /// Desk-scale profile: small batches and epochs that finish in
    /// seconds-to-minutes on a CPU.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            batch: 8,
            max_epochs: 40,
            train_per_epoch: 200,
            val_per_epoch: 40,
            ..TrainConfig::default()
        }
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Source of training/validation scenes, keyed so generation order never
/// affects content.
pub trait SceneProvider: Sync {
    fn build(&self, stream: u64, index: usize) -> Result<AerScene>;
}

/// The full random pipeline: fresh geometry, sources and SIR per scene.
pub struct PoolSceneProvider<'a> {
    pub bank: &'a SourceBank,
    pub pool: &'a GeometryPool,
    pub spec: SceneSpec,
}

impl SceneProvider for PoolSceneProvider<'_> {
    fn build(&self, stream: u64, index: usize) -> Result<AerScene> {
        dataset_scene(self.bank, self.pool, &self.spec, stream, index)
    }
}

/// Replays a fixed list of scenes (index modulo length).
pub struct FixedScenes(pub Vec<AerScene>);

impl SceneProvider for FixedScenes {
    fn build(&self, _stream: u64, index: usize) -> Result<AerScene> {
        Ok(self.0[index % self.0.len()].clone())
    }
}

/// Scene sources for the two streams; separate generators let training and
/// validation use their own geometry pools.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub train: &'a dyn SceneProvider,
    pub val: &'a dyn SceneProvider,
}

impl<'a> Providers<'a> {
    pub fn same(provider: &'a dyn SceneProvider) -> Providers<'a> {
        Providers { train: provider, val: provider }
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    /// Checkpoint with the best validation loss.
    pub best: Checkpoint,
    /// State at the last completed epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochStats>,
}

const VAL_STREAM_SALT: u64 = 0x5a17_da7a;

/// Stream key of the fixed validation set for a training seed.
pub fn validation_stream_seed(train_seed: u64) -> u64 {
    stream_seed(train_seed, VAL_STREAM_SALT)
}

/// Per-example loss and parameter gradients for one batch, reduced in
/// example order.
///
/// Returns `(mean loss, summed grads scaled by 1/batch)`.
fn batch_grads(
    model: &Model,
    scenes: &[AerScene],
) -> Result<(f64, Vec<Tensor>)> {
    let per_example: Vec<Result<(f64, Vec<Tensor>)>> = scenes
        .par_iter()
        .map(|scene| {
            let mut tape = Tape::new();
            let bp = model.bind(&mut tape, true);
            let out = model.forward(&mut tape, &bp, &scene.mixture, &scene.reference)?;
            let flat = tape.reshape(out.estimate, &[scene.mixture.len()])?;
            let loss = sdr_loss(&mut tape, &scene.echo, flat)?;
            let loss_value = tape.value(loss).item();
            tape.backward(loss)?;
            let grads: Vec<Tensor> = bp
                .vars()
                .iter()
                .map(|&v| {
                    tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v)))
                })
                .collect();
            Ok((loss_value, grads))
        })
        .collect();

    let scale = 1.0 / scenes.len() as f64;
    let mut mean_loss = 0.0;
    let mut total: Option<Vec<Tensor>> = None;
    for item in per_example {
        let (loss, grads) = item?;
        mean_loss += loss * scale;
        match &mut total {
            None => {
                let mut g = grads;
                for t in &mut g {
                    for v in t.data_mut() {
                        *v *= scale;
                    }
                }
                total = Some(g);
            }
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                        *x += y * scale;
                    }
                }
            }
        }
    }
    Ok((mean_loss, total.expect("non-empty batch")))
}

/// Mean validation loss (negative SDR) over a fixed stream.
pub fn validation_loss(
    model: &Model,
    provider: &dyn SceneProvider,
    stream: u64,
    count: usize,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = provider.build(stream, i)?;
            let mut tape = Tape::new();
            let bp = model.bind(&mut tape, false);
            let out = model.forward(&mut tape, &bp, &scene.mixture, &scene.reference)?;
            let flat = tape.reshape(out.estimate, &[scene.mixture.len()])?;
            let loss = sdr_loss(&mut tape, &scene.echo, flat)?;
            Ok(tape.value(loss).item())
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / count as f64)
}

/// Runs the full training loop.
///
/// Each epoch draws `train_per_epoch` fresh scenes from `providers.train`
/// (stream keyed by `(seed, epoch)`) and evaluates the fixed validation
/// stream from `providers.val`; per batch: forward, mean negative-SDR
/// loss, backward, global clip, Adam step. Aborts with a diagnostic on
/// non-finite loss.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    providers: Providers<'_>,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    let config_hash = resume.as_ref().map(|c| c.config_hash.clone()).unwrap_or_default();
    let (mut params, mut optim, mut scheduler, mut history) = match resume {
        Some(ck) => {
            if ck.config != *model_cfg {
                return Err(Error::Checkpoint("resume config differs from model config".into()));
            }
            (ck.params, ck.optim, ck.schedule, ck.history)
        }
        None => {
            let params = ModelParams::init(model_cfg, cfg.seed);
            let optim = OptimState::new(&params, cfg.lr);
            let scheduler = PlateauScheduler::new(cfg.plateau_patience, cfg.plateau_factor);
            (params, optim, scheduler, Vec::new())
        }
    };

    let val_stream = stream_seed(cfg.seed, VAL_STREAM_SALT);
    let snapshot = |params: &ModelParams,
                    optim: &OptimState,
                    scheduler: &PlateauScheduler,
                    history: &[HistoryEntry]| Checkpoint {
        version: CHECKPOINT_VERSION,
        config: *model_cfg,
        params: params.clone(),
        optim: optim.clone(),
        schedule: scheduler.clone(),
        history: history.to_vec(),
        config_hash: config_hash.clone(),
    };

    // best-checkpoint tracking restarts at the resume point
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut stats_log: Vec<EpochStats> = Vec::new();
    let start_epoch = history.len();
    for epoch in start_epoch..cfg.max_epochs {
        let t0 = std::time::Instant::now();
        let train_stream = stream_seed(cfg.seed, epoch as u64);
        let mut train_loss = 0.0;
        let mut batches = 0usize;

        let mut index = 0;
        while index < cfg.train_per_epoch {
            let count = cfg.batch.min(cfg.train_per_epoch - index);
            let scenes: Vec<AerScene> = (index..index + count)
                .into_par_iter()
                .map(|i| providers.train.build(train_stream, i))
                .collect::<Result<_>>()?;
            let model = Model { config: *model_cfg, params: params.clone() };
            let (loss, mut grads) = batch_grads(&model, &scenes)?;
            let norm = clip_grad_l2(&mut grads, cfg.clip_norm);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batches, grad_norm: norm });
            }
            adam_step(&mut params, &grads, &mut optim, cfg.weight_decay);
            train_loss += loss;
            batches += 1;
            index += count;
        }
        train_loss /= batches.max(1) as f64;

        let model = Model { config: *model_cfg, params: params.clone() };
        let val_loss = validation_loss(&model, providers.val, val_stream, cfg.val_per_epoch)?;
        optim.lr = scheduler.observe(val_loss, optim.lr);

        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr: optim.lr,
            seconds: t0.elapsed().as_secs_f64(),
        };
        history.push(HistoryEntry::from(&stats));
        stats_log.push(stats);
        on_epoch(&stats);

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, snapshot(&params, &optim, &scheduler, &history)));
        }
        let val_history: Vec<f64> = history.iter().map(|e| e.val_loss).collect();
        if early_stop(&val_history, cfg.early_stop_patience) {
            break;
        }
    }

    let last = snapshot(&params, &optim, &scheduler, &history);
    let best = best.map(|(_, ck)| ck).unwrap_or_else(|| last.clone());
    Ok(TrainOutcome { best, last, history: stats_log })
}
