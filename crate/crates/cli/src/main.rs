//! Command-line surface for the tracked 3D ultrasound volumetry pipeline:
//! simulate, compound, train, segment, volume, stats, report.
//!
//! Every command writes exactly one `manifest.json` next to its outputs with
//! the resolved configuration snapshot; timestamps live only there, so the
//! data artifacts are byte-reproducible for a fixed seed and any thread
//! count. Exit codes: 0 success, 2 input/data error, 3 configuration error.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tusvol_core::Error;

#[derive(Parser)]
#[command(name = "tusvol", version, about = "Tracked freehand 3D ultrasound thyroid volumetry toolkit")]
pub struct Cli {
    /// Master seed for anything stochastic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap (outputs do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file; flags take precedence over its values.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a virtual study (sweeps, study.csv, reference.csv) or a
    /// training dataset.
    Simulate(commands::SimulateArgs),
    /// Compound a sweep container into a voxel volume.
    Compound(commands::CompoundArgs),
    /// Train the segmentation network on a dataset directory.
    Train(commands::TrainArgs),
    /// Segment a compounded volume into a binary mask.
    Segment(commands::SegmentArgs),
    /// Compute a volume from caliper axes or a mask.
    Volume(commands::VolumeArgs),
    /// Run the agreement-statistics battery over a study table.
    Stats(commands::StatsArgs),
    /// Render observer-variability tables and Bland-Altman plots.
    Report(commands::ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let file_cfg = match config::FileConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let seed = cli.seed.or(file_cfg.seed).unwrap_or(42);
    let threads = cli.threads.or(file_cfg.threads);
    if let Some(n) = threads {
        if n == 0 {
            return fail(&Error::Config("--threads must be at least 1".into()));
        }
        // Ignore failure: the global pool can only be set once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let ctx = commands::Context { seed, file: file_cfg };
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(&ctx, args),
        Command::Compound(args) => commands::compound(&ctx, args),
        Command::Train(args) => commands::train(&ctx, args),
        Command::Segment(args) => commands::segment(&ctx, args),
        Command::Volume(args) => commands::volume(&ctx, args),
        Command::Stats(args) => commands::stats(&ctx, args),
        Command::Report(args) => commands::report(&ctx, args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if e.is_config() {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}
