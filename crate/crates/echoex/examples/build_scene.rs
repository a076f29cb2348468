//! Build one echo-reduction scene: sample geometry from the test pool,
//! simulate both acoustic paths, mix at a requested SIR and export the
//! scene directory.
//!
//! ```bash
//! cargo run --example build_scene
//! ```

use echoex::rir::{GeometryPool, Split};
use echoex::scene::{sample_scene, write_scene, SceneSpec, SourceBank};
use echoex::seeding::stream_rng;
use echoex::signal::power_db;

fn main() -> echoex::Result<()> {
    let fs = 8000;
    let bank = SourceBank::synthetic(fs, 3.0, 2, 42);
    let pool = GeometryPool::for_split(Split::Test);
    let spec = SceneSpec { duration: 1.0, sir_range: (-5.0, 5.0) };

    let scene = sample_scene(&bank, &pool, &spec, &mut stream_rng(42, 0))?;
    println!("subset {}  SIR {:+.2} dB", scene.subset_tag.name(), scene.sir_db);
    println!("far-end class: {:?}, near-end class: {:?}", scene.meta.far_class, scene.meta.near_class);
    println!("echo path: {:.2} m in {:?} m room, T60 {:.2} s",
        scene.meta.echo_paths[0].distance(),
        scene.meta.echo_paths[0].room.dims(),
        scene.meta.echo_paths[0].t60);
    println!("levels: mixture {:.1} dB, echo {:.1} dB, near {:.1} dB",
        power_db(&scene.mixture)?, power_db(&scene.echo)?, power_db(&scene.near_end)?);

    write_scene("scene_demo", &scene, "example")?;
    println!("wrote scene_demo/ (mixture.wav, echo.wav, near.wav, ref.wav, metadata.json)");
    Ok(())
}
