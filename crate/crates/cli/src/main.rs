use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hoa_cli::{run_all, run_stage, run_synth, CliError, LoadedConfig, Stage};

/// Hand-object pose annotation pipeline.
#[derive(Debug, Parser)]
#[command(name = "hoa", version)]
struct Cli {
    /// Seed for every random choice; overrides the config.
    #[arg(long, global = true, env = "HOA_SEED")]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, env = "HOA_JOBS", default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct StageArgs {
    #[arg(long, short, env = "HOA_CONFIG", default_value = "config.json")]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long, short, env = "HOA_OUTPUT")]
    output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve camera extrinsics from calibration markers.
    CalibrateExtrinsic(StageArgs),
    /// Pair camera frames with mocap frames by timestamp.
    Sync(StageArgs),
    /// Fuse multi-view 2D keypoints into 3D joints.
    FuseKeypoints(StageArgs),
    /// Register each marker rig to its object mesh.
    RegisterObject(StageArgs),
    /// Per-frame object poses from marker tracks.
    TrackObject(StageArgs),
    /// Fit the hand model to the keypoints.
    FitHands(StageArgs),
    /// Score the outputs against ground truth.
    Evaluate(StageArgs),
    /// Run every stage in order.
    All(StageArgs),
    /// Generate a synthetic scene and a config for it.
    Synth {
        /// Scene description; defaults are used when absent.
        #[arg(long, env = "HOA_SCENE")]
        spec: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn load(args: &StageArgs, seed: Option<u64>) -> Result<LoadedConfig, CliError> {
    let mut cfg = LoadedConfig::load(&args.config)?;
    if let Some(seed) = seed {
        cfg.config.seed = seed;
    }
    if let Some(out) = &args.output {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let stage = |s: Stage, args: &StageArgs| -> Result<(), CliError> {
        let summary = run_stage(s, &load(args, cli.seed)?)?;
        eprintln!("{}: {summary}", s.name());
        Ok(())
    };
    match &cli.command {
        Command::CalibrateExtrinsic(a) => stage(Stage::CalibrateExtrinsic, a),
        Command::Sync(a) => stage(Stage::Sync, a),
        Command::FuseKeypoints(a) => stage(Stage::FuseKeypoints, a),
        Command::RegisterObject(a) => stage(Stage::RegisterObject, a),
        Command::TrackObject(a) => stage(Stage::TrackObject, a),
        Command::FitHands(a) => stage(Stage::FitHands, a),
        Command::Evaluate(a) => stage(Stage::Evaluate, a),
        Command::All(a) => {
            for (s, summary) in run_all(&load(a, cli.seed)?)? {
                eprintln!("{}: {summary}", s.name());
            }
            Ok(())
        }
        Command::Synth { spec, out } => {
            let summary = run_synth(spec.as_deref(), out, cli.seed)?;
            eprintln!("synth: {summary}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
