//! The loudspeaker-movement stress scenario: the far-end signal switches
//! speakers after 2 s and the echo path jumps from 0.85 m to 1.35 m.
//! Emits waveform CSVs, the ERLE curve and the embedding-deviation map.
//!
//! ```bash
//! cargo run --example switch_demo                     # random-init model
//! cargo run --example switch_demo -- path/to/best.ckpt
//! ```

use echoex::commands::{demo_switch, Estimator};

fn main() -> echoex::Result<()> {
    let spec = std::env::args().nth(1).unwrap_or_else(|| "random:tiny".into());
    let estimator = Estimator::from_spec_or_random(&spec, 7)?;
    let out = std::path::Path::new("switch_demo_out");
    let summary = demo_switch(&estimator, 8000, 7, out)?;
    println!("estimator: {spec}");
    println!("SI-SDRi {:+.2} dB over the 4 s scene", summary.si_sdri_db);
    println!(
        "{} ERLE points, embedding deviation map {:?}",
        summary.erle_points, summary.embedding_shape
    );
    println!("artifacts in {}/", out.display());
    Ok(())
}
