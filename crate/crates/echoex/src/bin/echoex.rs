//! Batch-experiment CLI: scene/RIR generation, training, evaluation and
//! the speaker-switch demo. All heavy lifting lives in the library; this
//! binary only parses arguments and dispatches.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use echoex::commands::{self, Estimator};
use echoex::config::ExperimentConfig;
use echoex::rir::Split;
use echoex::scene::SubsetTag;

#[derive(Parser)]
#[command(name = "echoex", version, about = "Informed source extraction for acoustic echo reduction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a room impulse response (WAV + JSON sidecar).
    GenRir {
        /// Room dimensions in meters, e.g. 3.0x5.0x3.0
        #[arg(long)]
        room: String,
        /// Reverberation time in seconds (0 = anechoic)
        #[arg(long)]
        t60: f64,
        /// Source-to-microphone distance in meters
        #[arg(long)]
        distance: f64,
        /// Output path (extension is replaced by .wav/.json)
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16000)]
        sample_rate: u32,
    },
    /// Generate a directory of scenes plus a manifest.
    GenScenes {
        /// Geometry pool: train | val | test
        #[arg(long)]
        split: String,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Force every scene into one subset: SS | SN | NS | NN
        #[arg(long)]
        subset: Option<String>,
        /// Build the loudspeaker-movement stress scenario instead
        #[arg(long, default_value_t = false)]
        switch_scenario: bool,
        /// Experiment config file (defaults to the chosen preset)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Preset when no config file is given: desk | full | tiny
        #[arg(long, default_value = "desk")]
        preset: String,
    },
    /// Train a model; writes log.csv and best/last checkpoints.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint file
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (or the oracle/zero stubs) over a manifest.
    Eval {
        /// Checkpoint path, or "oracle" / "zero" stubs
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the speaker-switch scenario and emit plots.
    DemoSwitch {
        /// Checkpoint path, or "oracle" / "zero" / "random[:preset]"
        #[arg(long)]
        checkpoint: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8000)]
        sample_rate: u32,
    },
}

fn run() -> echoex::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenRir { room, t60, distance, out, seed, sample_rate } => {
            let sidecar = commands::gen_rir(&room, t60, distance, sample_rate, seed, &out)?;
            match sidecar.measured_t60 {
                Some(t) => println!(
                    "wrote {} (requested T60 {:.3} s, measured {:.3} s)",
                    out.with_extension("wav").display(),
                    t60,
                    t
                ),
                None => println!("wrote {} (anechoic)", out.with_extension("wav").display()),
            }
        }
        Command::GenScenes {
            split,
            count,
            out,
            seed,
            subset,
            switch_scenario,
            config,
            preset,
        } => {
            let cfg = load_config(config.as_deref(), &preset)?;
            let split: Split = split.parse()?;
            let subset: Option<SubsetTag> = subset.map(|s| s.parse()).transpose()?;
            let manifest =
                commands::gen_scenes(&cfg, split, count, seed, subset, switch_scenario, &out)?;
            println!("wrote {} scenes to {}", manifest.len(), out.display());
        }
        Command::Train { config, preset, out, resume } => {
            let cfg = load_config(config.as_deref(), &preset)?;
            let outcome = commands::train_run(&cfg, &out, resume, |e| {
                println!(
                    "epoch {:>3}: train {:8.3}  val {:8.3}  lr {:.2e}  ({:.1}s)",
                    e.epoch, e.train_loss, e.val_loss, e.lr, e.seconds
                );
            })?;
            let best = outcome.history.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
            println!(
                "done after {} epochs; best val loss {:.3}; checkpoints in {}",
                outcome.history.len(),
                best,
                out.display()
            );
        }
        Command::Eval { checkpoint, manifest, out } => {
            let estimator = Estimator::from_spec(&checkpoint)?;
            let report = commands::eval_manifest(&estimator, &manifest, &out)?;
            for (tag, v) in &report.subset_mean_si_sdri {
                println!("{tag}: {v:.2} dB SI-SDRi");
            }
            println!("mean: {:.2} dB SI-SDRi over {} examples", report.mean_si_sdri, report.examples.len());
        }
        Command::DemoSwitch { checkpoint, out, seed, sample_rate } => {
            let estimator = Estimator::from_spec_or_random(&checkpoint, seed)?;
            let summary = commands::demo_switch(&estimator, sample_rate, seed, &out)?;
            println!(
                "switch demo: SI-SDRi {:.2} dB, {} ERLE points, artifacts in {}",
                summary.si_sdri_db,
                summary.erle_points,
                out.display()
            );
        }
    }
    Ok(())
}

fn load_config(path: Option<&std::path::Path>, preset: &str) -> echoex::Result<ExperimentConfig> {
    match path {
        Some(p) => echoex::config::parse_config(p),
        None => ExperimentConfig::preset(preset),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
