//! `esl`: synthetic cryo-EM data, ESL rotation estimation, joint refinement
//! and sampling diagnostics from the command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or unreadable inputs; exit code 2.
    Usage(String),
    /// Failure while computing or writing results; exit code 1.
    Runtime(String),
}

#[derive(Parser, Debug)]
#[command(name = "esl", version, about = "Ellipsoidal support lifting for cryo-EM rotation estimation")]
struct Cli {
    /// Worker threads; defaults to all available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `key=value` file supplying defaults for any flag of the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CtfArgs {
    #[arg(long, default_value_t = 1.5)]
    pub defocus_um: f64,
    #[arg(long, default_value_t = 2.0)]
    pub cs_mm: f64,
    #[arg(long, default_value_t = 0.25)]
    pub wavenumber_invnm: f64,
    #[arg(long, default_value_t = 0.1)]
    pub amp_contrast: f64,
}

#[derive(Args, Debug, Clone)]
pub struct LiftArgs {
    #[arg(long, default_value_t = 1)]
    pub mesh_level: usize,
    #[arg(long, default_value_t = 0.66)]
    pub eta: f64,
    #[arg(long, default_value_t = 15.0)]
    pub j0: f64,
    /// Fixed γ; estimated per image when absent.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Barycentre gradient iterations.
    #[arg(long, default_value_t = 20)]
    pub bary_iters: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded Gaussian-blob phantom volume.
    #[command(args_override_self = true)]
    Phantom {
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Voxel size in nm; defaults to a 19.7 nm box.
        #[arg(long)]
        voxel_size: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate noisy CTF-modulated projections of a volume.
    #[command(args_override_self = true)]
    GenData {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        voxel_size: Option<f64>,
        #[arg(long, default_value_t = 256)]
        num_images: usize,
        #[arg(long, default_value_t = 0.0625)]
        snr: f64,
        #[command(flatten)]
        ctf: CtfArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// One ESL rotation update against a fixed volume.
    #[command(args_override_self = true)]
    EstimateRotations {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        voxel_size: Option<f64>,
        #[command(flatten)]
        ctf: CtfArgs,
        #[command(flatten)]
        lift: LiftArgs,
        /// Noise level; the mean image variance when absent.
        #[arg(long)]
        sigma: Option<f64>,
        /// Largest number of projected pixel values held at once.
        #[arg(long, default_value_t = 100_000_000)]
        memory_budget: usize,
        /// Project this many rotations at a time instead of all at once.
        #[arg(long)]
        chunk: Option<usize>,
        #[arg(long)]
        out_rotations: PathBuf,
        #[arg(long)]
        out_weights: Option<PathBuf>,
        #[arg(long)]
        out_metrics: Option<PathBuf>,
        #[arg(long)]
        gt_rotations: Option<PathBuf>,
    },
    /// Alternating rotation and volume updates.
    #[command(args_override_self = true)]
    Refine {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        init_volume: PathBuf,
        #[arg(long)]
        voxel_size: Option<f64>,
        /// Gaussian blur of the initial volume, in voxels.
        #[arg(long, default_value_t = 0.0)]
        init_blur: f64,
        #[command(flatten)]
        ctf: CtfArgs,
        #[command(flatten)]
        lift: LiftArgs,
        #[arg(long, default_value_t = 10)]
        iters: usize,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        tau1: Option<f64>,
        #[arg(long)]
        tau2: Option<f64>,
        #[arg(long, default_value_t = 512)]
        chunk: usize,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        gt_rotations: Option<PathBuf>,
    },
    /// Worst-case local discrepancy of the interval grid sequence.
    #[command(args_override_self = true)]
    LdsCheck {
        #[arg(long, allow_negative_numbers = true)]
        eta: f64,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        #[arg(long, default_value_t = 7)]
        levels: usize,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the SO(3) sampling mesh of a refinement level.
    #[command(args_override_self = true)]
    So3Mesh {
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align estimated rotations to ground truth and tabulate errors.
    #[command(args_override_self = true)]
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate the antipodally symmetric S³ base node set.
    #[command(args_override_self = true)]
    BaseNodes {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = esl::sampling::mesh::BASE_NODE_COUNT / 2)]
        pairs: usize,
        #[arg(long, default_value_t = esl::sampling::mesh::BASE_NODE_ITERS)]
        iters: usize,
        #[arg(long, default_value_t = esl::sampling::mesh::BASE_NODE_SEED)]
        seed: u64,
    },
}

fn run() -> Result<(), CliError> {
    let args = config::expand(&Cli::command(), std::env::args_os().collect())?;
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => std::process::exit(0),
            _ => std::process::exit(2),
        }
    })?;
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Phantom { size, voxel_size, seed, out } => commands::phantom(size, voxel_size, seed, &out),
        Command::GenData { volume, voxel_size, num_images, snr, ctf, seed, out_dir } => {
            commands::gen_data(&volume, voxel_size, num_images, snr, &ctf, seed, &out_dir)
        }
        Command::EstimateRotations {
            volume,
            images,
            voxel_size,
            ctf,
            lift,
            sigma,
            memory_budget,
            chunk,
            out_rotations,
            out_weights,
            out_metrics,
            gt_rotations,
        } => commands::estimate_rotations(&commands::EstimateArgs {
            volume,
            images,
            voxel_size,
            ctf,
            lift,
            sigma,
            memory_budget,
            chunk,
            out_rotations,
            out_weights,
            out_metrics,
            gt_rotations,
        }),
        Command::Refine {
            images,
            init_volume,
            voxel_size,
            init_blur,
            ctf,
            lift,
            iters,
            sigma,
            tau1,
            tau2,
            chunk,
            out_dir,
            gt_rotations,
        } => commands::refine(&commands::RefineArgs {
            images,
            init_volume,
            voxel_size,
            init_blur,
            ctf,
            lift,
            iters,
            sigma,
            tau1,
            tau2,
            chunk,
            out_dir,
            gt_rotations,
        }),
        Command::LdsCheck { eta, b, levels, out } => commands::lds_check(eta, b, levels, out.as_deref()),
        Command::So3Mesh { level, out } => commands::so3_mesh(level, &out),
        Command::Eval { est, gt, out } => commands::eval(&est, &gt, &out),
        Command::BaseNodes { out, pairs, iters, seed } => commands::base_nodes(&out, pairs, iters, seed),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
