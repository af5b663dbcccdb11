//! `relit`: dataset generation, training, relighting, rendering and
//! evaluation.

mod commands;
mod views;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relit_core::config::RunConfig;
use relit_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "relit", version, about = "Sparse-view relightable Gaussian reconstruction")]
struct Cli {
    /// Run configuration (TOML). Defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the resolved configuration, all defaults included, and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a procedural dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a generated dataset.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relight posed views under an environment map.
    Relight {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        views: PathBuf,
        /// Target lighting (PFM). Without it the relight is unconditional.
        #[arg(long)]
        envmap: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        cfg: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a Gaussian PLY along a camera path.
    Render {
        #[arg(long)]
        ply: PathBuf,
        /// JSON list of cameras. Without it a turntable is generated.
        #[arg(long)]
        camera_path: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Turntable frame count.
        #[arg(long, default_value_t = 36)]
        frames: usize,
        /// Turntable image size.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// PSNR/SSIM of predicted images against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Directory of mask PNGs named like the images.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RELIT_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("RELIT_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::InvalidArgument("no command given; see --help".into()));
    };
    match command {
        Command::GenData { out, scenes, seed } => commands::gen_data(&config, &out, scenes, seed),
        Command::Train { data, out } => commands::train(&config, data, out),
        Command::Relight { ckpt, views, envmap, steps, cfg, seed, out } => {
            let mut sampler = config.sampler.clone();
            sampler.steps = steps.unwrap_or(sampler.steps);
            sampler.cfg = cfg.unwrap_or(sampler.cfg);
            sampler.seed = seed.unwrap_or(sampler.seed);
            commands::relight(&ckpt, &views, envmap.as_deref(), &sampler, &out)
        }
        Command::Render { ply, camera_path, out, frames, size } => commands::render(&ply, camera_path.as_deref(), &out, frames, size),
        Command::Eval { pred, gt, mask } => commands::eval(&pred, &gt, mask.as_deref()),
    }
}

fn report(category: &str, message: &str) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": category, "message": message }));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => return report("usage", e.to_string().trim()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.category(), &e.to_string()),
    }
}
