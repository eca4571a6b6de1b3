use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use navlab::commands::{cmd_inflate, cmd_replay, cmd_track, cmd_train, BufferSource, InflateOptions};
use navlab::config::RunConfig;
use navlab::service::{serve, AssistWorld};
use navlab::LabError;
use navlab_core::gridmap::InflationConfig;

#[derive(Parser)]
#[command(name = "navlab", version, about = "Risk-calibrated tracking, mapping and driver assist")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or read training tuples and calibrate discrepancy bounds.
    Train,
    /// Run the tracking experiment with calibrated bounds.
    Track,
    /// Serve the driver-assist loop over a websocket.
    AssistServe {
        /// Listen address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Inflate an occupancy grid into a cost map.
    Inflate {
        /// Grid file (text or .pgm).
        input: PathBuf,
        /// Cost map file (text or .pgm).
        output: PathBuf,
        /// Buffer size in cells.
        #[arg(long, conflicts_with = "bounds")]
        cells: Option<usize>,
        /// Derive the buffer from a bounds file.
        #[arg(long)]
        bounds: Option<PathBuf>,
        /// Vehicle radius used with --bounds (m).
        #[arg(long, default_value_t = 0.39)]
        r_ego: f64,
        /// Cell size of PGM input (m).
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
        /// Map centre of PGM input (m).
        #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_negative_numbers = true, default_values_t = [0.0, 0.0])]
        origin: Vec<f64>,
        /// Treat unknown cells as occupied.
        #[arg(long)]
        pessimistic_unknown: bool,
    },
    /// Re-run a recorded tracking run and compare metrics.
    Replay {
        /// Directory written by `track`; defaults to the output directory.
        run_dir: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> Result<RunConfig, LabError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, LabError> {
    match cli.command {
        Command::Train => {
            let cfg = load(&cli)?;
            let doc = cmd_train(&cfg)?;
            println!("Z = {:.6}", doc.z_matched);
            println!("Z_perp = {:.6}", doc.z_unmatched);
            println!("q = {} of {}", doc.quantile_index, doc.sample_count);
            println!("r0 = {:.6} m", doc.r0);
            println!("r_dt = {:.6} m", doc.r_dt);
            println!("wrote {}", cfg.output_dir.join(navlab::commands::BOUNDS_FILE).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Track => {
            let cfg = load(&cli)?;
            let s = cmd_track(&cfg)?;
            println!("steps = {}", s.steps);
            println!("rms_error = {:.4} m", s.rms_error);
            println!("contacts = {}", s.contacts);
            println!("uncertified = {}", s.uncertified);
            println!("wrote {}", cfg.output_dir.display());
            Ok(if s.contacts > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::AssistServe { ref bind } => {
            let cfg = load(&cli)?;
            let addr = bind.clone().unwrap_or_else(|| cfg.serve.bind.clone());
            let world = AssistWorld::from_config(cfg.serve)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(world, &addr, async {
                let _ = tokio::signal::ctrl_c().await;
            }))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Inflate { ref input, ref output, cells, ref bounds, r_ego, resolution, ref origin, pessimistic_unknown } => {
            let buffer = match (cells, bounds) {
                (Some(n), _) => BufferSource::Cells(n),
                (None, Some(path)) => BufferSource::Bounds { path: path.clone(), r_ego },
                (None, None) => {
                    let cfg = load(&cli)?;
                    BufferSource::Bounds { path: cfg.bounds_path(), r_ego }
                }
            };
            let opts = InflateOptions {
                input: input.clone(),
                output: output.clone(),
                buffer,
                resolution,
                origin: [origin[0], origin[1]],
                inflation: InflationConfig { pessimistic_unknown, ..InflationConfig::default() },
            };
            let n = cmd_inflate(&opts)?;
            println!("buffer_cells = {n}");
            println!("wrote {}", output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { ref run_dir } => {
            let dir = match run_dir {
                Some(d) => d.clone(),
                None => load(&cli)?.output_dir,
            };
            let report = cmd_replay(&dir)?;
            println!("contacts = {}", report.summary.contacts);
            if report.identical {
                println!("metrics identical");
                Ok(ExitCode::SUCCESS)
            } else {
                println!("metrics differ");
                Ok(ExitCode::from(3))
            }
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "navlab=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
