//! Command-line entry point: `synth`, `calibrate`, `track`, and `eval`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arcpose::residuals::{self, NoiseCalibration};
use arcpose::synth::TrajectorySpec;
use clap::{Args, Parser, Subcommand};

use arcpose_cli::error::{CliError, Result};
use arcpose_cli::evalcmd;
use arcpose_cli::schema::{self, Ablation, Method, RunSettings};
use arcpose_cli::tracker;

#[derive(Parser)]
#[command(
    name = "arcpose",
    version,
    about = "Monocular pose tracking for a rigidly grasped circular needle",
    long_about = "Batch tools for 6-DoF needle pose inference: synthetic scene \
                  generation, observation-noise calibration, particle-based \
                  tracking (Newton-preconditioned transport or a bootstrap \
                  particle filter), and result aggregation."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Estimate per-channel noise scales from a dataset with ground truth.
    Calibrate(CalibrateArgs),
    /// Track the needle pose over a dataset and write per-frame metrics.
    Track(TrackArgs),
    /// Aggregate one or more results files into summary tables.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Trajectory family: slow, normal, induced_rotation, or
    /// suturing_occlusion.
    #[arg(long)]
    kind: String,
    /// Number of frames to generate.
    #[arg(long)]
    frames: usize,
    /// RNG seed for trajectory and rendering noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise scales used for rendering (defaults to the built-in values).
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Translational speed override, meters per second.
    #[arg(long)]
    speed: Option<f64>,
    /// Frame period override, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Induced-rotation amplitude override, degrees.
    #[arg(long)]
    rot_amplitude_deg: Option<f64>,
    /// Output directory; writes dataset.jsonl inside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Input dataset (JSON lines) with ground-truth poses.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory; writes calibration.json inside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    /// Input dataset (JSON lines).
    #[arg(long)]
    dataset: PathBuf,
    /// Noise calibration file; falls back to the dataset's embedded
    /// calibration, then to built-in defaults.
    #[arg(long)]
    calib: Option<PathBuf>,
    /// Run configuration file (JSON); command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Solver: svn or pf.
    #[arg(long)]
    method: Option<String>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated ablation flags (no_dense, no_sparse, one_keypoint,
    /// no_image, no_robot_pos, no_robot_ori, no_robot_no_motion, svgd).
    #[arg(long, value_delimiter = ',')]
    ablate: Vec<String>,
    /// Record per-frame wall time (makes output timing-dependent).
    #[arg(long)]
    timing: bool,
    /// Output directory; writes results.csv and diagnostics.jsonl inside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Results files to aggregate (concatenated before grouping).
    #[arg(required = true)]
    results: Vec<PathBuf>,
    /// Optional output directory; writes summary.csv and summary.txt inside.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn load_calib_or_default(path: &Option<PathBuf>) -> Result<NoiseCalibration> {
    match path {
        Some(p) => schema::load_calibration(p),
        None => Ok(NoiseCalibration::default()),
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let kind = schema::kind_from_str(&args.kind)?;
    let mut spec = TrajectorySpec::new(kind, args.frames, args.seed);
    if let Some(v) = args.speed {
        spec.speed = v;
    }
    if let Some(v) = args.dt {
        spec.dt = v;
    }
    if let Some(v) = args.rot_amplitude_deg {
        spec.rot_amplitude = v.to_radians();
    }
    if spec.n_frames == 0 {
        return Err(CliError::data("--frames must be positive"));
    }
    let calibration = load_calib_or_default(&args.calib)?;
    let dataset = tracker::synthesize_dataset(&spec, &calibration)?;
    ensure_out_dir(&args.out)?;
    schema::save_dataset(&args.out.join("dataset.jsonl"), &dataset)?;
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<()> {
    let dataset = schema::load_dataset(&args.dataset)?;
    let pairs: Vec<_> = dataset
        .frames
        .iter()
        .filter_map(|f| f.gt_pose.map(|gt| (f.observation.clone(), gt)))
        .collect();
    let calibration =
        residuals::calibrate_noise(&pairs, &dataset.intrinsics, &dataset.model).map_err(|e| {
            match e {
                residuals::ResidualError::InsufficientData { .. } => {
                    CliError::data(format!("calibration: {e}"))
                }
                other => CliError::numeric(format!("calibration: {other}")),
            }
        })?;
    ensure_out_dir(&args.out)?;
    schema::save_calibration(&args.out.join("calibration.json"), &calibration)?;
    Ok(())
}

fn cmd_track(args: &TrackArgs) -> Result<()> {
    let dataset = schema::load_dataset(&args.dataset)?;
    let calibration = match &args.calib {
        Some(p) => schema::load_calibration(p)?,
        None => dataset.calibration.clone().unwrap_or_default(),
    };
    let config = match &args.config {
        Some(p) => Some(schema::load_config(p)?),
        None => None,
    };
    let cli_method = match &args.method {
        Some(m) => Some(m.parse::<Method>()?),
        None => None,
    };
    let cli_ablate = args
        .ablate
        .iter()
        .map(|s| s.parse::<Ablation>())
        .collect::<Result<Vec<_>>>()?;
    let settings = RunSettings::resolve(config.as_ref(), cli_method, args.seed, &cli_ablate)?;

    let output = tracker::run_track(&dataset, &calibration, &settings, args.timing)?;
    ensure_out_dir(&args.out)?;
    fs::write(args.out.join("results.csv"), &output.results_csv)?;
    fs::write(args.out.join("diagnostics.jsonl"), &output.diagnostics_jsonl)?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let output = evalcmd::run_eval(&args.results)?;
    print!("{}", output.summary_text);
    if let Some(dir) = &args.out {
        ensure_out_dir(dir)?;
        fs::write(dir.join("summary.csv"), &output.summary_csv)?;
        fs::write(dir.join("summary.txt"), &output.summary_text)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Track(args) => cmd_track(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
