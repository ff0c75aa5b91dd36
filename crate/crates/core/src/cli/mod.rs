//! Command-line front end for the `nff` binary.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Render, edit and fit feature-field scenes built from semantic voxels and object boxes.
#[derive(Debug, Parser)]
#[command(name = "nff", version)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (overrides NFF_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural scene: `<out>/scene.json` and `<out>/grid.uvgx`.
    MakeScene(MakeSceneArgs),
    /// Render a scene to PPM.
    Render(RenderArgs),
    /// Apply an edit script to a scene, writing new files.
    Edit(EditArgs),
    /// Fit generator parameters to posed target images.
    Fit(FitArgs),
    /// Alternating image/patch discriminator and generator steps on fixtures.
    TrainToy(TrainToyArgs),
    /// Time guided and dense sampling and compare their feature images.
    Bench(BenchArgs),
    /// Run finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Write the ray samples of selected pixels as TSV.
    SampleRays(SampleRaysArgs),
}

#[derive(Debug, Args)]
pub struct MakeSceneArgs {
    #[arg(long, default_value = "clevr-w")]
    pub preset: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// Generator parameters: a checkpoint, or a fresh initialization.
#[derive(Debug, Args)]
pub struct GeneratorArgs {
    /// Parameter checkpoint (NFCK). Without it, parameters are initialized from `--gen-seed`.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub gen_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output resolution `WxH` (even numbers).
    #[arg(long)]
    pub res: Option<String>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
    /// Render this many poses along a forward trajectory to numbered files.
    #[arg(long)]
    pub traj: Option<usize>,
    /// Distance between trajectory poses.
    #[arg(long, default_value_t = 0.5)]
    pub traj_step: f64,
    /// Write the feature image as NFIM.
    #[arg(long)]
    pub dump_features: Option<PathBuf>,
    /// Write each object's alpha map as `<prefix><k>.pgm`.
    #[arg(long)]
    pub dump_alphas: Option<PathBuf>,
    /// Sample at stratum starts instead of jittered positions.
    #[arg(long)]
    pub no_jitter: bool,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    pub scene: PathBuf,
    pub script: PathBuf,
    /// Output scene JSON; the edited grid is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub scene: PathBuf,
    /// Run directory for checkpoints, loss.tsv and meta.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Pose manifest (as written by `render --traj`). Without it, targets are
    /// rendered from a frozen reference generator on an orbit around the scene.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub views: usize,
    #[arg(long, default_value_t = 1000)]
    pub reference_seed: u64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda_feat: f64,
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: usize,
    /// Exclude projected object rectangles from the loss.
    #[arg(long)]
    pub mask_objects: bool,
    #[arg(long)]
    pub res: Option<String>,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub res: usize,
    #[arg(long, default_value = "clevr-w")]
    pub preset: String,
    #[arg(long, default_value_t = 10.0)]
    pub lambda_r1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_patch: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchMode {
    Guided,
    Dense,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    pub scene: PathBuf,
    #[arg(long, value_enum, default_value_t = BenchMode::Both)]
    pub mode: BenchMode,
    #[arg(long)]
    pub res: Option<String>,
    #[arg(long, default_value_t = nff_core::sampling::DENSE_SAMPLES)]
    pub dense_samples: usize,
    #[command(flatten)]
    pub generator: GeneratorArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Substrate,
    Generators,
    Compositor,
    Losses,
    All,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(value_enum, default_value_t = Component::All)]
    pub component: Component,
    /// Scale one primitive's gradient rule by 1.5 to exercise the harness.
    #[arg(long, hide = true)]
    pub fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleRaysArgs {
    pub scene: PathBuf,
    /// Output TSV (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub res: Option<String>,
    /// Feature-resolution pixels as `u,v`; every pixel when omitted.
    #[arg(long = "pixel")]
    pub pixels: Vec<String>,
    #[arg(long)]
    pub dense: bool,
    #[arg(long)]
    pub no_jitter: bool,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Check(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Check(_) => 3,
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

fn configure_threads(cli: &Cli) -> Result<usize, Failure> {
    let requested = if cli.deterministic {
        Some(1)
    } else if let Some(n) = cli.threads {
        Some(n)
    } else {
        match std::env::var("NFF_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| Failure::Usage(format!("NFF_THREADS must be a count, got `{v}`")))?),
            Err(_) => None,
        }
    };
    if requested == Some(0) {
        return Err(Failure::Usage("thread count must be at least 1".into()));
    }
    if let Some(n) = requested {
        // a second call in the same process fails harmlessly
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = configure_threads(&cli).and_then(|threads| commands::run(&cli, threads));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("usage error: {m}"),
                Failure::Data(e) => eprintln!("error: {e:#}"),
                Failure::Check(m) => eprintln!("check failed: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
