use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flownet_cli::commands::{self, DataArgs};
use flownet_core::data::{GeometryKind, SplitPart};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "flownet", version, about = "Flow-token spatio-temporal forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Coords,
    Distances,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

#[derive(clap::Args)]
struct Data {
    /// Checkpoint manifest written by `train`
    #[arg(long)]
    ckpt: PathBuf,
    /// Observation CSV
    #[arg(long)]
    data: PathBuf,
    /// Coordinates CSV, or a distance matrix with `--geometry-kind distances`
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long, value_enum, default_value = "coords")]
    geometry_kind: Kind,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the best checkpoint
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train once per seed (comma separated) into `OUT/seed_<s>` and report mean and std
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Print MAE and RMSE of a checkpoint as JSON
    Eval {
        #[command(flatten)]
        data: Data,
        #[arg(long, value_enum, default_value = "test")]
        split: Part,
    },
    /// Generate a synthetic flow system
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the ground-truth transfer tensors
        #[arg(long)]
        transfers: bool,
    },
    /// Write learned spatial statistics
    #[command(subcommand)]
    Export(Export),
}

#[derive(Subcommand)]
enum Export {
    /// Radius and out-degree per node and patch
    MaskStats {
        #[command(flatten)]
        data: Data,
        #[arg(long, value_enum, default_value = "val")]
        split: Part,
        #[arg(long)]
        out: PathBuf,
    },
    /// Averaged N x N allocation matrix
    Allocation {
        #[command(flatten)]
        data: Data,
        #[arg(long, value_enum, default_value = "val")]
        split: Part,
        /// Average one flow layer only
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn data_args(d: &Data, split: Part) -> DataArgs {
    DataArgs {
        observations: d.data.clone(),
        geometry: d.geometry.clone(),
        geometry_kind: match d.geometry_kind {
            Kind::Coords => GeometryKind::Coords,
            Kind::Distances => GeometryKind::Distances,
        },
        split: match split {
            Part::Train => SplitPart::Train,
            Part::Val => SplitPart::Val,
            Part::Test => SplitPart::Test,
        },
    }
}

fn print<S: Serialize>(value: &S) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ckpt(d: &Data) -> &Path {
    &d.ckpt
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, out, seeds } if seeds.is_empty() => print(&commands::train(&config, &out)?),
        Command::Train { config, out, seeds } => print(&commands::train_sweep(&config, &out, &seeds)?),
        Command::Eval { data, split } => print(&commands::eval(ckpt(&data), &data_args(&data, split))?),
        Command::Synth { spec, out, transfers } => print(&commands::synth(&spec, &out, transfers)?),
        Command::Export(Export::MaskStats { data, split, out }) => {
            print(&commands::export_mask_stats(ckpt(&data), &data_args(&data, split), &out)?)
        }
        Command::Export(Export::Allocation { data, split, layer, out }) => {
            print(&commands::export_allocation(ckpt(&data), &data_args(&data, split), layer, &out)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
