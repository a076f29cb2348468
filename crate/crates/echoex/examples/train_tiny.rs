//! Train the tiny DPRNN-TV extractor for a few epochs on synthetic
//! correlated-reference scenes and report the SI-SDR improvement on held
//! out scenes.
//!
//! ```bash
//! cargo run --example train_tiny            # 5 epochs, ~2 min
//! cargo run --example train_tiny -- 30      # longer run
//! ```

use echoex::commands::CachedRirScenes;
use echoex::metrics::{near_end_estimate, si_sdri};
use echoex::nn::{FusionMode, Model, ModelConfig};
use echoex::train::{train, Providers, SceneProvider, TrainConfig};

fn main() -> echoex::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let provider = CachedRirScenes::build(8000, 0.5, 32, 900)?;

    let model_cfg = ModelConfig::tiny_dprnn(FusionMode::Tv);
    let train_cfg = TrainConfig {
        batch: 8,
        max_epochs: epochs,
        train_per_epoch: 200,
        val_per_epoch: 40,
        seed: 11,
        ..TrainConfig::default()
    };
    println!(
        "training tiny DPRNN-TV ({} parameters) for {epochs} epochs",
        model_cfg.param_count()
    );
    let outcome = train(&model_cfg, &train_cfg, Providers::same(&provider), None, |e| {
        println!(
            "epoch {:>2}: train {:7.3}  val {:7.3}  lr {:.2e}  ({:.1}s)",
            e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds
        );
    })?;

    let model = Model { config: outcome.best.config, params: outcome.best.params };
    let mut total = 0.0;
    let n = 50;
    for i in 0..n {
        let scene = provider.build(0xE57, i)?;
        let est = model.infer(&scene.mixture, &scene.reference)?.estimate;
        let near = near_end_estimate(&scene.mixture, &est)?;
        total += si_sdri(&scene, &near)?;
    }
    println!("held-out SI-SDRi over {n} scenes: {:.2} dB", total / n as f64);
    Ok(())
}
