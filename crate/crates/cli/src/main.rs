//! Command-line driver for the gaze mapping pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use gazefusion::geometry::{calibrate_homography, parse_pairs};
use gazefusion::io::write_sequence;
use gazefusion::pipeline::{self, PipelineConfig, PoseSource};
use gazefusion::synth::{generate_sequence, room_class_names, SequenceConfig, SyntheticScene};
use gazefusion::{Error, Result};

#[derive(Parser)]
#[command(name = "gazefusion", version, about = "Semantic surfel mapping with 3D gaze attribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Process a sequence and write every export.
    Run(RunArgs),
    /// Estimate the eye-tracker to RGB-D homography from point pairs.
    Calibrate {
        /// Text file with one `sx sy tx ty` pair per line.
        pairs: PathBuf,
        #[arg(long, default_value = ".")]
        output_dir: PathBuf,
    },
    /// Render a synthetic sequence with ground truth.
    Synth(SynthArgs),
    /// Process a sequence and write only the selected exports.
    Export {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated subset of ply, trajectory, gaze, instances.
        #[arg(long, value_delimiter = ',', required = true)]
        only: Vec<String>,
    },
    /// Dwell and revisit report from a directory of exports.
    Stats {
        dir: PathBuf,
        /// Number of classes listed in the ranking.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Sequence directory containing `manifest.txt`.
    sequence: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    pose_source: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description; the default room when absent.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 0.4)]
    accuracy: f64,
    #[arg(long, default_value_t = 0.2)]
    flip_rate: f64,
    /// Gaze jitter in pixels.
    #[arg(long, default_value_t = 2.0)]
    jitter: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    output_dir: PathBuf,
}

fn config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = &args.pose_source {
        cfg.pose_source = PoseSource::parse(s)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(args: &RunArgs, cfg: &PipelineConfig) -> Result<()> {
    let s = pipeline::run(&args.sequence, cfg, &args.output_dir)?;
    print!("{}", s.to_text());
    Ok(())
}

fn calibrate(pairs: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(pairs).map_err(|_| Error::MissingFile(pairs.to_path_buf()))?;
    let cal = calibrate_homography(&parse_pairs(&text)?)?;
    std::fs::create_dir_all(out).map_err(|e| Error::WriteFailure {
        path: out.to_path_buf(),
        source: e,
    })?;
    let path = out.join("homography.txt");
    std::fs::write(&path, cal.homography.to_text()).map_err(|e| Error::WriteFailure { path: path.clone(), source: e })?;
    println!("wrote {}", path.display());
    println!("rms {:.6}", cal.rms);
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let scene = match &a.scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|_| Error::MissingFile(p.clone()))?;
            SyntheticScene::parse(&text)?
        }
        None => SyntheticScene::room(),
    };
    let mut cfg = SequenceConfig {
        frames: a.frames,
        width: a.width,
        height: a.height,
        classes: a.classes,
        accuracy: a.accuracy,
        flip_rate: a.flip_rate,
        seed: a.seed,
        ..SequenceConfig::default()
    };
    cfg.scanpath.jitter = a.jitter;
    let seq = generate_sequence(&scene, &cfg)?;
    write_sequence(&seq, &room_class_names(a.classes), &a.output_dir)?;
    info!("{} frames, {} gaze samples", seq.frames.len(), seq.gaze.len());
    println!("wrote {}", a.output_dir.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(&args, &config(&args)?),
        Command::Calibrate { pairs, output_dir } => calibrate(&pairs, &output_dir),
        Command::Synth(args) => synth(&args),
        Command::Export { run: args, only } => {
            let mut cfg = config(&args)?;
            cfg.exports.ply = false;
            cfg.exports.trajectory = false;
            cfg.exports.gaze = false;
            cfg.exports.instances = false;
            for name in &only {
                match name.as_str() {
                    "ply" => cfg.exports.ply = true,
                    "trajectory" => cfg.exports.trajectory = true,
                    "gaze" => cfg.exports.gaze = true,
                    "instances" => cfg.exports.instances = true,
                    other => return Err(Error::Config(format!("unknown export `{other}`"))),
                }
            }
            run(&args, &cfg)
        }
        Command::Stats { dir, top } => {
            print!("{}", pipeline::stats(&dir)?.to_text(top));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
