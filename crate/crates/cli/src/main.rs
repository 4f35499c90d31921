use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod assets;
mod haze;
mod metrics;
mod parse;
mod poses;
mod serve;
mod sim;

#[derive(Parser)]
#[command(
    name = "smokeforge",
    version,
    about = "Simulatable smoke from Gaussian-particle assets"
)]
struct Cli {
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect and convert particle assets and point clouds.
    #[command(subcommand)]
    Asset(assets::AssetCmd),
    /// Splat one asset frame onto density and velocity grids.
    Splat(sim::SplatArgs),
    /// Run the solver and write per-step grid dumps.
    Simulate(sim::SimulateArgs),
    /// Haze compositing and clean-smoke extraction.
    #[command(subcommand)]
    Haze(haze::HazeCmd),
    /// Camera pose conversion, comparison and generation.
    #[command(subcommand)]
    Pose(poses::PoseCmd),
    /// Volume-render a density grid or asset frame.
    Render(sim::RenderArgs),
    /// Image quality metrics over frames or frame directories.
    #[command(subcommand)]
    Metrics(metrics::MetricsCmd),
    /// Serve an interactive simulation session over TCP.
    Serve(serve::ServeArgs),
    /// Rebuild a session from its command log.
    Replay {
        log: PathBuf,
        /// Write the final density and velocity as a grid dump.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| match cli.command {
        Command::Asset(c) => assets::run(c),
        Command::Splat(a) => sim::splat(a),
        Command::Simulate(a) => sim::simulate(a),
        Command::Haze(c) => haze::run(c),
        Command::Pose(c) => poses::run(c),
        Command::Render(a) => sim::render(a),
        Command::Metrics(c) => metrics::run(c),
        Command::Serve(a) => serve::serve(a),
        Command::Replay { log, out } => serve::replay(&log, out.as_deref()),
    })
}
