//! Evaluate the metric pipeline over a generated scene set, bracketing it
//! with the oracle (perfect echo estimate) and zero stubs.
//!
//! ```bash
//! cargo run --example evaluate
//! ```

use echoex::commands::{eval_manifest, gen_scenes, Estimator};
use echoex::config::ExperimentConfig;
use echoex::rir::Split;

fn main() -> echoex::Result<()> {
    let out = std::path::Path::new("eval_demo");
    let mut cfg = ExperimentConfig::desk();
    cfg.data.duration = 0.5;

    let scenes = out.join("scenes");
    gen_scenes(&cfg, Split::Test, 12, 5, None, false, &scenes)?;
    let manifest = scenes.join("manifest.jsonl");

    for (name, estimator) in [("oracle", Estimator::Oracle), ("zero", Estimator::Zero)] {
        let report = eval_manifest(&estimator, &manifest, &out.join(name))?;
        println!("{name:>6}: mean SI-SDRi {:+7.2} dB", report.mean_si_sdri);
        for (tag, v) in &report.subset_mean_si_sdri {
            println!("        {tag}: {v:+7.2} dB");
        }
    }
    println!("tables and per-example metrics under {}/", out.display());
    Ok(())
}
