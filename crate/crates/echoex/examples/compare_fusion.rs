//! The central comparison: train the same tiny extractor with
//! time-invariant (averaged) and time-varying (per-frame) reference
//! embeddings on correlated-reference scenes, then score both on held-out
//! scenes.
//!
//! The scenes make the difference stark: target and interferer share the
//! same source class, so the averaged embedding carries almost nothing
//! while the per-frame embedding tracks the reference envelope.
//!
//! ```bash
//! cargo run --example compare_fusion            # 6 epochs, a few minutes
//! cargo run --example compare_fusion -- 30 11   # epochs, seed
//! ```

use echoex::commands::CachedRirScenes;
use echoex::metrics::{near_end_estimate, si_sdri};
use echoex::nn::{FusionMode, Model, ModelConfig};
use echoex::train::{train, Providers, SceneProvider, TrainConfig};
use std::time::Instant;

fn main() -> echoex::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(11);

    let provider = CachedRirScenes::build(8000, 0.5, 32, 900)?;
    let test_scenes: Vec<_> =
        (0..100).map(|i| provider.build(0xE57, i)).collect::<echoex::Result<_>>()?;
    let train_cfg = TrainConfig {
        batch: 8,
        max_epochs: epochs,
        train_per_epoch: 200,
        val_per_epoch: 40,
        seed,
        ..TrainConfig::default()
    };

    let mut results = Vec::new();
    for fusion in [FusionMode::Ti, FusionMode::Tv] {
        let t0 = Instant::now();
        let model_cfg = ModelConfig::tiny_dprnn(fusion);
        let out = train(&model_cfg, &train_cfg, Providers::same(&provider), None, |e| {
            println!(
                "  [{fusion:?}] epoch {:>2}: train {:7.3}  val {:7.3}",
                e.epoch, e.train_loss, e.val_loss
            );
        })?;
        let model = Model { config: out.best.config, params: out.best.params };
        let mut total = 0.0;
        for s in &test_scenes {
            let est = model.infer(&s.mixture, &s.reference)?.estimate;
            let near = near_end_estimate(&s.mixture, &est)?;
            total += si_sdri(s, &near)?;
        }
        let score = total / test_scenes.len() as f64;
        println!(
            "{fusion:?}: SI-SDRi {score:+.3} dB on 100 held-out scenes ({:.0}s)",
            t0.elapsed().as_secs_f64()
        );
        results.push(score);
    }
    println!("TV advantage: {:+.3} dB", results[1] - results[0]);
    Ok(())
}
