//! Batch-experiment commands behind the CLI: RIR generation, scene-set
//! export, training, evaluation tables and the speaker-switch demo.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex_prefix, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{
    embedding_deviation_map, erle_curve, ExampleMetrics, MetricReport, ERLE_FRAME, ERLE_HOP,
};
use crate::nn::Model;
use crate::report::{svg_heatmap, svg_line_plot, write_matrix_csv, write_series_csv};
use crate::rir::{
    measured_t60, sample_geometry, simulate_rir_default, GeometryPool, Rir, RirRequest, RoomSpec,
    Split,
};
use crate::scene::{
    build_switch_scenario, read_scene, sample_scene_tagged, synth_source, write_scene, AerScene,
    ManifestEntry, SourceBank, SubsetTag, SynthKind,
};
use crate::seeding::stream_rng;
use crate::signal::Waveform;
use crate::train::{train, Checkpoint, PoolSceneProvider, Providers, TrainOutcome};
use crate::wav::write_wav_f32;

fn args_hash(parts: &[String]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0]);
    }
    hex_prefix(&hasher.finalize(), 16)
}

/// Parses a `WxLxH` room description in meters.
pub fn parse_room(s: &str) -> Result<RoomSpec> {
    let dims: Vec<f64> = s
        .split(['x', 'X'])
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("room '{s}' is not WxLxH")))?;
    if dims.len() != 3 || dims.iter().any(|d| *d <= 0.0) {
        return Err(Error::Config(format!("room '{s}' is not WxLxH")));
    }
    Ok(RoomSpec::new(dims[0], dims[1], dims[2]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RirSidecar {
    pub request: RirRequest,
    pub seed: u64,
    pub measured_t60: Option<f64>,
    pub args_hash: String,
}

/// `gen-rir`: simulates one impulse response and writes `<out>.wav` plus a
/// `<out>.json` sidecar with the full request.
pub fn gen_rir(
    room: &str,
    t60: f64,
    distance: f64,
    sample_rate: u32,
    seed: u64,
    out: &Path,
) -> Result<RirSidecar> {
    let room = parse_room(room)?;
    let mut rng = stream_rng(seed, 0x9e19);
    // seeded placement with the same clearances as scene sampling
    let pool = GeometryPool {
        rooms: vec![room],
        t60s: vec![t60.max(0.0)],
        distances: vec![distance],
        split: Split::Test,
    };
    let (mut request, _) = sample_geometry(&pool, sample_rate, &mut rng)?;
    request.t60 = t60;
    let rir = simulate_rir_default(&request)?;

    let wav_path = out.with_extension("wav");
    let json_path = out.with_extension("json");
    if let Some(parent) = wav_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_wav_f32(&wav_path, &rir.as_waveform())?;
    let sidecar = RirSidecar {
        request,
        seed,
        measured_t60: measured_t60(&rir).ok(),
        args_hash: args_hash(&[
            format!("{room:?}"),
            t60.to_string(),
            distance.to_string(),
            sample_rate.to_string(),
            seed.to_string(),
        ]),
    };
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::Config(format!("sidecar encode: {e}")))?,
    )?;
    Ok(sidecar)
}

/// `gen-scenes`: writes `count` scene directories plus `manifest.jsonl`.
pub fn gen_scenes(
    cfg: &ExperimentConfig,
    split: Split,
    count: usize,
    seed: u64,
    subset: Option<SubsetTag>,
    switch_scenario: bool,
    out: &Path,
) -> Result<Vec<ManifestEntry>> {
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    let fs = cfg.data.sample_rate;
    let bank = SourceBank::synthetic(fs, cfg.data.bank_duration, cfg.data.bank_per_class, seed);
    let pool = GeometryPool::for_split(split);
    let spec = cfg.scene_spec();

    let entries: Vec<Result<(AerScene, String)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let scene = if switch_scenario {
                switch_scene(fs, seed, i)?
            } else {
                sample_scene_tagged(&bank, &pool, &spec, subset, &mut rng)?
            };
            let dir = format!("scene_{i:05}");
            write_scene(out.join(&dir), &scene, &hash)?;
            Ok((scene, dir))
        })
        .collect();

    let mut manifest = Vec::new();
    for e in entries {
        let (scene, dir) = e?;
        manifest.push(ManifestEntry {
            dir,
            subset: scene.subset_tag,
            sir_db: scene.sir_db,
            sample_rate: fs,
            config_hash: hash.clone(),
        });
    }
    let mut f = std::fs::File::create(out.join("manifest.jsonl"))?;
    for m in &manifest {
        let line = serde_json::to_string(m)
            .map_err(|e| Error::Config(format!("manifest encode: {e}")))?;
        writeln!(f, "{line}")?;
    }
    Ok(manifest)
}

/// The stress scene: two 2 s far-end sources, echo path moved from
/// 0.85 m to 1.35 m at the switch, 0 dB SIR.
fn switch_scene(fs: u32, seed: u64, index: usize) -> Result<AerScene> {
    let mut rng = stream_rng(seed, index as u64);
    let pool = GeometryPool::for_split(Split::Test);
    let base = |distance: f64, rng: &mut rand_chacha::ChaCha8Rng| -> Result<RirRequest> {
        let single = GeometryPool {
            rooms: vec![pool.rooms[1]],
            t60s: vec![pool.t60s[0]],
            distances: vec![distance],
            split: Split::Test,
        };
        let (req, _) = sample_geometry(&single, fs, rng)?;
        Ok(req)
    };
    let req_a = base(0.85, &mut rng)?;
    // same room and mic; only the loudspeaker moves
    let mut req_b = base(1.35, &mut rng)?;
    req_b.mic_pos = req_a.mic_pos;
    let rir_a = simulate_rir_default(&req_a)?;
    let rir_b = simulate_rir_default(&req_b)?;

    let mix_seed = seed ^ 0x5317c4;
    let spk_a = synth_source(SynthKind::AmNoise, mix_seed ^ (index as u64) << 2, 2.0, fs);
    let spk_b = synth_source(SynthKind::AmNoise, mix_seed ^ ((index as u64) << 2 | 1), 2.0, fs);
    let near = synth_source(SynthKind::AmNoise, mix_seed ^ ((index as u64) << 2 | 2), 4.0, fs);
    let near_req = base(1.1, &mut rng)?;
    let near_rir = simulate_rir_default(&near_req)?;
    build_switch_scenario(&spk_a, &spk_b, &rir_a, &rir_b, &near, Some(&near_rir), 0.0)
}

/// `train`: runs the training loop, writing `log.csv`, the canonical
/// config, and `best.ckpt` / `last.ckpt` under `out`.
pub fn train_run(
    cfg: &ExperimentConfig,
    out: &Path,
    resume: Option<PathBuf>,
    mut progress: impl FnMut(&crate::train::EpochStats),
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out)?;
    let hash = cfg.hash();
    std::fs::write(out.join("config.toml"), cfg.to_canonical_toml())?;

    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config();
    let spec = cfg.scene_spec();
    let bank = build_bank(cfg, train_cfg.seed)?;
    let train_pool = GeometryPool::for_split(Split::Training);
    let val_pool = GeometryPool::for_split(Split::Validation);
    let train_provider = PoolSceneProvider { bank: &bank, pool: &train_pool, spec };
    let val_provider = PoolSceneProvider { bank: &bank, pool: &val_pool, spec };

    let resume_ck = match resume {
        Some(path) => Some(Checkpoint::load(path)?),
        None => None,
    };

    let mut log = std::fs::File::create(out.join("log.csv"))?;
    writeln!(log, "# config_hash={hash}")?;
    writeln!(log, "epoch,train_loss,val_loss,lr,seconds")?;

    let mut outcome = train(
        &model_cfg,
        &train_cfg,
        Providers { train: &train_provider, val: &val_provider },
        resume_ck,
        |stats| {
            let _ = writeln!(
                log,
                "{},{},{},{},{:.3}",
                stats.epoch, stats.train_loss, stats.val_loss, stats.lr, stats.seconds
            );
            progress(stats);
        },
    )?;
    outcome.best.config_hash = hash.clone();
    outcome.last.config_hash = hash;
    outcome.best.save(out.join("best.ckpt"))?;
    outcome.last.save(out.join("last.ckpt"))?;
    Ok(outcome)
}

fn build_bank(cfg: &ExperimentConfig, seed: u64) -> Result<SourceBank> {
    if cfg.data.bank == "synthetic" {
        Ok(SourceBank::synthetic(
            cfg.data.sample_rate,
            cfg.data.bank_duration,
            cfg.data.bank_per_class,
            seed,
        ))
    } else {
        SourceBank::from_dir(&cfg.data.bank, cfg.data.sample_rate)
    }
}

/// Echo estimator used by `eval` and `demo-switch`: a trained checkpoint
/// or a metric-pipeline stub.
pub enum Estimator {
    Model(Box<Model>),
    /// Perfect echo estimate (pipeline upper bound).
    Oracle,
    /// All-zero estimate (pipeline floor; near-end estimate = mixture).
    Zero,
}

impl Estimator {
    /// `oracle` and `zero` are stub names; anything else loads a
    /// checkpoint file.
    pub fn from_spec(spec: &str) -> Result<Estimator> {
        match spec {
            "oracle" => Ok(Estimator::Oracle),
            "zero" => Ok(Estimator::Zero),
            path => {
                let ck = Checkpoint::load(path)?;
                Ok(Estimator::Model(Box::new(Model { config: ck.config, params: ck.params })))
            }
        }
    }

    /// `random:<preset>` stubs a freshly initialized model (demo runs
    /// without training).
    pub fn from_spec_or_random(spec: &str, seed: u64) -> Result<Estimator> {
        if let Some(preset) = spec.strip_prefix("random:") {
            let cfg = ExperimentConfig::preset(preset)?;
            return Ok(Estimator::Model(Box::new(Model::new(cfg.model_config(), seed))));
        }
        if spec == "random" {
            let cfg = ExperimentConfig::preset("desk")?;
            return Ok(Estimator::Model(Box::new(Model::new(cfg.model_config(), seed))));
        }
        Estimator::from_spec(spec)
    }

    pub fn estimate_echo(&self, scene: &AerScene) -> Result<Waveform> {
        match self {
            Estimator::Model(m) => {
                // resampling is out of scope; mismatched material is rejected
                if scene.mixture.sample_rate != m.config.sample_rate {
                    return Err(Error::SampleRateMismatch(
                        scene.mixture.sample_rate,
                        m.config.sample_rate,
                    ));
                }
                Ok(m.infer(&scene.mixture, &scene.reference)?.estimate)
            }
            Estimator::Oracle => Ok(scene.echo.clone()),
            Estimator::Zero => {
                Ok(Waveform::zeros(scene.mixture.len(), scene.mixture.sample_rate))
            }
        }
    }
}

/// `eval`: per-example metrics over a manifest, aggregated per subset.
///
/// Writes `per_example.jsonl`, `report.json` and `table.csv` with columns
/// `SS, SN, NS, NN, mean`.
pub fn eval_manifest(
    estimator: &Estimator,
    manifest_path: &Path,
    out: &Path,
) -> Result<MetricReport> {
    std::fs::create_dir_all(out)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = std::fs::read_to_string(manifest_path)?;
    let entries: Vec<ManifestEntry> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("manifest: {e}"))))
        .collect::<Result<_>>()?;

    let rows: Vec<Result<ExampleMetrics>> = entries
        .par_iter()
        .map(|entry| {
            let scene = read_scene(base.join(&entry.dir))?;
            let echo_est = estimator.estimate_echo(&scene)?;
            ExampleMetrics::compute(&scene, &echo_est)
        })
        .collect();
    let examples: Vec<ExampleMetrics> = rows.into_iter().collect::<Result<_>>()?;

    let mut per_example = std::fs::File::create(out.join("per_example.jsonl"))?;
    for e in &examples {
        writeln!(
            per_example,
            "{}",
            serde_json::to_string(e).map_err(|x| Error::Config(x.to_string()))?
        )?;
    }

    let report = MetricReport::from_examples(examples);
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report).map_err(|x| Error::Config(x.to_string()))?,
    )?;

    let mut table = std::fs::File::create(out.join("table.csv"))?;
    writeln!(table, "SS,SN,NS,NN,mean")?;
    let col = |tag: &str| {
        report
            .subset_mean_si_sdri
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, v)| format!("{v:.4}"))
            .unwrap_or_default()
    };
    writeln!(
        table,
        "{},{},{},{},{:.4}",
        col("SS"),
        col("SN"),
        col("NS"),
        col("NN"),
        report.mean_si_sdri
    )?;
    Ok(report)
}

/// Artifacts written by `demo-switch`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchDemoSummary {
    pub si_sdri_db: f64,
    pub erle_points: usize,
    pub embedding_shape: Vec<usize>,
    pub config_hash: String,
}

/// `demo-switch`: runs the stress scenario, emitting waveform CSVs, the
/// ERLE curve, the embedding-deviation map and SVG renderings.
pub fn demo_switch(
    estimator: &Estimator,
    sample_rate: u32,
    seed: u64,
    out: &Path,
) -> Result<SwitchDemoSummary> {
    std::fs::create_dir_all(out)?;
    let scene = switch_scene(sample_rate, seed, 0)?;
    let echo_est = estimator.estimate_echo(&scene)?;
    let near_est = crate::metrics::near_end_estimate(&scene.mixture, &echo_est)?;
    let si = crate::metrics::si_sdri(&scene, &near_est)?;

    let hash = args_hash(&[format!("demo-switch fs={sample_rate} seed={seed}")]);
    let comments: Vec<(&str, &str)> = vec![("config_hash", hash.as_str())];

    let series = |w: &Waveform| -> Vec<(f64, f64)> {
        w.samples
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 / w.sample_rate as f64, v))
            .collect()
    };
    write_series_csv(out.join("mixture.csv"), &comments, "time_s,amplitude", &series(&scene.mixture))?;
    write_series_csv(out.join("near_end.csv"), &comments, "time_s,amplitude", &series(&scene.near_end))?;
    write_series_csv(out.join("estimate.csv"), &comments, "time_s,amplitude", &series(&near_est))?;

    let erle = erle_curve(&scene.echo, &echo_est, ERLE_FRAME, ERLE_HOP)?;
    write_series_csv(out.join("erle.csv"), &comments, "time_s,erle_db", &erle)?;
    svg_line_plot(out.join("erle.svg"), "ERLE over time (dB)", &erle)?;
    svg_line_plot(out.join("waveforms.svg"), "near-end estimate", &series(&near_est))?;

    // embedding deviation needs the model's embedding path; the stubs have
    // none, so they emit a zero map of nominal size
    let deviation = match estimator {
        Estimator::Model(m) => {
            let inf = m.infer(&scene.mixture, &scene.reference)?;
            embedding_deviation_map(&inf.embedding)
        }
        _ => crate::tensor::Tensor::zeros(&[1, scene.reference.len() / 16]),
    };
    write_matrix_csv(out.join("embedding_deviation.csv"), &comments, &deviation)?;
    svg_heatmap(out.join("embedding_deviation.svg"), "embedding |deviation from mean|", &deviation)?;

    let summary = SwitchDemoSummary {
        si_sdri_db: si,
        erle_points: erle.len(),
        embedding_shape: deviation.shape().to_vec(),
        config_hash: hash,
    };
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?,
    )?;
    Ok(summary)
}

/// Reusable correlated-reference scene builder over a small cached RIR
/// set: fresh sources and SIR per index, geometry cycled from the cache.
///
/// Scene cost stays at two fast convolutions, which keeps training-loop
/// experiments CPU-friendly while preserving the echo = filtered-reference
/// structure.
pub struct CachedRirScenes {
    pairs: Vec<(Rir, Rir)>,
    pub sample_rate: u32,
    pub duration: f64,
    pub sir_range: (f64, f64),
}

impl CachedRirScenes {
    /// Simulates `n_pairs` echo/near geometry draws from a small-room,
    /// short-decay pool.
    pub fn build(sample_rate: u32, duration: f64, n_pairs: usize, seed: u64) -> Result<CachedRirScenes> {
        let pool = GeometryPool {
            rooms: vec![RoomSpec::new(4.0, 5.0, 2.7), RoomSpec::new(3.5, 4.0, 2.7)],
            t60s: vec![0.15, 0.2],
            distances: vec![0.5, 0.8, 1.1],
            split: Split::Training,
        };
        let pairs: Vec<Result<(Rir, Rir)>> = (0..n_pairs)
            .into_par_iter()
            .map(|i| {
                let mut rng = stream_rng(seed, i as u64);
                let (echo_req, near_req) = sample_geometry(&pool, sample_rate, &mut rng)?;
                Ok((simulate_rir_default(&echo_req)?, simulate_rir_default(&near_req)?))
            })
            .collect();
        Ok(CachedRirScenes {
            pairs: pairs.into_iter().collect::<Result<_>>()?,
            sample_rate,
            duration,
            sir_range: (-5.0, 5.0),
        })
    }
}

impl crate::train::SceneProvider for CachedRirScenes {
    fn build(&self, stream: u64, index: usize) -> Result<AerScene> {
        let mut rng = stream_rng(stream, index as u64);
        use rand::Rng;
        let far = synth_source(
            SynthKind::AmNoise,
            rng.gen::<u64>(),
            self.duration,
            self.sample_rate,
        );
        let near = synth_source(
            SynthKind::AmNoise,
            rng.gen::<u64>(),
            self.duration,
            self.sample_rate,
        );
        let sir = rng.gen_range(self.sir_range.0..=self.sir_range.1);
        let (echo_rir, near_rir) = &self.pairs[rng.gen_range(0..self.pairs.len())];
        crate::scene::mix_scene(&far, &near, echo_rir, near_rir, sir, SubsetTag::SS)
    }
}
