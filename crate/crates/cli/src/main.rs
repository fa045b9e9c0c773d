//! `woodvol`: synthetic plots to scans to samples to trained regressors to
//! biomass and carbon estimates.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use woodvol_core::dataset::SampleMethod;
use woodvol_core::encoders::Architecture;

use commands::{AllometryMode, CloudFormat};
use error::{CliError, CliResult};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nformats: manifest woodvol-manifest/1, checkpoint woodvol-checkpoint/1, ",
    "train summary woodvol-train-summary/1, predict report woodvol-predict-report/1, ",
    "mesh obj (v/f subset), cloud xyz (x y z return_number) | ply (binary_little_endian 1.0, float64 xyz, uint8 return_number)"
);

#[derive(Parser)]
#[command(name = "woodvol", version = VERSION, about = "Plot wood volume, biomass and carbon from simulated laser scans")]
struct Cli {
    /// Worker threads; 1 guarantees bit-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn parse_arch(s: &str) -> Result<Architecture, String> {
    Architecture::parse(s).ok_or_else(|| format!("unknown architecture `{s}` (pointnet, pointnetpp, dgcnn)"))
}

fn parse_method(s: &str) -> Result<SampleMethod, String> {
    SampleMethod::parse(s).ok_or_else(|| format!("unknown sampling method `{s}` (rs, fps)"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic plots: meshes plus a manifest.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scan every plot of a plots manifest.
    Scan {
        #[arg(long)]
        manifest: PathBuf,
        /// Pipeline config; defaults to the one embedded in the manifest.
        #[arg(long)]
        config: Option<PathBuf>,
        /// TOML file with scanner keys only, overriding the `[scanner]` section.
        #[arg(long)]
        scanner_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "xyz")]
        format: CloudFormat,
    },
    /// Downsample scanned clouds to a fixed size and report spatial metrics.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_parser = parse_method)]
        method: Option<SampleMethod>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "xyz")]
        format: CloudFormat,
    },
    /// K-fold cross-validated training on a samples manifest.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_arch)]
        arch: Option<Architecture>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// No per-epoch progress on stderr.
        #[arg(long)]
        quiet: bool,
    },
    /// Tiled volume, biomass and carbon estimates for one cloud.
    Predict {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// m
        #[arg(long)]
        tile_edge: Option<f64>,
        /// kg/m³
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        min_points: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tree AGB from diameters (cm) or heights (m).
    Allometry {
        #[arg(long, value_enum)]
        mode: AllometryMode,
        #[arg(long, default_value = "eucalypt")]
        model: String,
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        values: Vec<f64>,
        /// Coefficient file replacing the bundled one.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::data("--threads", e))?;
    }
    match cli.command {
        Command::Generate { config, out } => commands::generate(config.as_deref(), &out),
        Command::Scan {
            manifest,
            config,
            scanner_config,
            out,
            format,
        } => commands::scan(&manifest, config.as_deref(), scanner_config.as_deref(), &out, format),
        Command::Sample {
            input,
            config,
            method,
            n,
            out,
            format,
        } => commands::sample(&input, config.as_deref(), method, n, &out, format),
        Command::Train {
            dataset,
            arch,
            config,
            out,
            quiet,
        } => commands::train(&dataset, arch, config.as_deref(), &out, quiet),
        Command::Predict {
            cloud,
            checkpoint,
            config,
            tile_edge,
            density,
            min_points,
            out,
        } => commands::predict(
            &cloud,
            &checkpoint,
            config.as_deref(),
            tile_edge,
            density,
            min_points,
            &out,
        ),
        Command::Allometry {
            mode,
            model,
            values,
            table,
            out,
        } => commands::allometry(mode, &model, &values, table.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
