//! Subcommand implementations behind the `navlab` binary.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use navlab_core::conformal::{calibrate, CalibrationConfig};
use navlab_core::controller::tube_radii;
use navlab_core::gridmap::{buffer_cells, inflate, InflationConfig};
use navlab_core::mppi::{default_lethal_threshold, CostWeights, MppiParams};
use navlab_core::sim::{generate_training, metrics, run_tracking_experiment, RunLog, RunSummary};
use navlab_core::Limits;

use crate::config::RunConfig;
use crate::formats::{
    costmap_to_pgm, costmap_to_text, decode_tuples, encode_tuples, grid_from_pgm, grid_from_text, run_log_to_json,
    sha256_hex, summary_to_json, write_file, BoundsDocument, BOUNDS_FORMAT,
};
use crate::LabError;

/// Artifact names inside the output directory.
pub const TUPLES_FILE: &str = "tuples.jsonl";
/// Calibrated bounds.
pub const BOUNDS_FILE: &str = "bounds.toml";
/// Full step log of a tracking run.
pub const RUN_LOG_FILE: &str = "run_log.json";
/// Summary metrics of a tracking run.
pub const METRICS_FILE: &str = "metrics.json";
/// Effective configuration of a tracking run.
pub const CONFIG_FILE: &str = "config.toml";

/// Calibrate bounds from simulated or recorded training tuples and write
/// `tuples.jsonl` and `bounds.toml`.
pub fn cmd_train(cfg: &RunConfig) -> Result<BoundsDocument, LabError> {
    let t = &cfg.train;
    let (tuples, bytes) = match &t.tuples {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
            (decode_tuples(BufReader::new(bytes.as_slice()))?, bytes)
        }
        None => {
            let model = t.model()?;
            let tuples = generate_training(&model, &t.lap_times, t.laps, t.dt);
            let bytes = encode_tuples(&tuples);
            (tuples, bytes)
        }
    };
    write_file(&cfg.output_dir.join(TUPLES_FILE), &bytes)?;
    tracing::info!(tuples = tuples.len(), "calibrating");
    let cal = calibrate(&tuples, &CalibrationConfig::new(t.epsilon, t.subsample, cfg.seed), &t.extraction)?;
    let (r0, r_dt) = if cal.insufficient {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let r = tube_radii(&cal.bounds, &t.tube)?;
        (r.r0, r.r_dt)
    };
    let doc = BoundsDocument {
        format: BOUNDS_FORMAT.into(),
        z_matched: cal.bounds.z_matched,
        z_unmatched: cal.bounds.z_unmatched,
        epsilon: t.epsilon,
        sample_count: t.subsample,
        quantile_index: cal.index,
        insufficient: cal.insufficient,
        seed: cfg.seed,
        preset: if t.tuples.is_some() { "recorded".into() } else { t.preset.clone() },
        dataset_sha256: sha256_hex(&bytes),
        r0,
        r_dt,
    };
    write_file(&cfg.output_dir.join(BOUNDS_FILE), doc.to_toml().as_bytes())?;
    Ok(doc)
}

/// Read a bounds document, with a hint when it is missing.
pub fn load_bounds(path: &Path) -> Result<BoundsDocument, LabError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            LabError::Config(format!(
                "bounds file {} not found; run `navlab train` with the same output directory first",
                path.display()
            ))
        } else {
            LabError::Io(e)
        }
    })?;
    BoundsDocument::from_toml(&text)
}

fn run_track(cfg: &RunConfig, doc: &BoundsDocument) -> Result<(RunLog, RunSummary), LabError> {
    if doc.insufficient {
        return Err(LabError::Config("bounds are infinite; collect more training data or raise epsilon".into()));
    }
    let mut scenario = cfg.track.scenario.clone();
    scenario.bounds = Some(doc.bounds());
    scenario.seed = cfg.seed;
    let log = run_tracking_experiment(&scenario)?;
    let summary = metrics(&log);
    Ok((log, summary))
}

/// Run the tracking experiment and write the log, metrics, bounds and the
/// effective configuration into the output directory.
pub fn cmd_track(cfg: &RunConfig) -> Result<RunSummary, LabError> {
    let bounds_path = cfg.bounds_path();
    let doc = load_bounds(&bounds_path)?;
    let (log, summary) = run_track(cfg, &doc)?;
    let out = &cfg.output_dir;
    write_file(&out.join(RUN_LOG_FILE), run_log_to_json(&log).as_bytes())?;
    write_file(&out.join(METRICS_FILE), summary_to_json(&summary).as_bytes())?;
    if bounds_path != out.join(BOUNDS_FILE) {
        write_file(&out.join(BOUNDS_FILE), doc.to_toml().as_bytes())?;
    }
    let mut saved = cfg.clone();
    saved.track.bounds = None;
    write_file(&out.join(CONFIG_FILE), saved.to_toml().as_bytes())?;
    Ok(summary)
}

/// Outcome of a replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// Freshly computed metrics.
    pub summary: RunSummary,
    /// Whether the metrics bytes equal the recorded ones.
    pub identical: bool,
}

/// Re-run the configuration saved in `run_dir` and compare metrics.
pub fn cmd_replay(run_dir: &Path) -> Result<ReplayReport, LabError> {
    let mut cfg = RunConfig::load(&run_dir.join(CONFIG_FILE))?;
    cfg.output_dir = run_dir.to_path_buf();
    cfg.track.bounds = Some(run_dir.join(BOUNDS_FILE));
    let doc = load_bounds(&run_dir.join(BOUNDS_FILE))?;
    let recorded = std::fs::read(run_dir.join(METRICS_FILE))?;
    let (_, summary) = run_track(&cfg, &doc)?;
    let identical = summary_to_json(&summary).as_bytes() == recorded.as_slice();
    Ok(ReplayReport { summary, identical })
}

/// Buffer source for `inflate`.
#[derive(Debug, Clone, PartialEq)]
pub enum BufferSource {
    /// Fixed `N_ε`.
    Cells(usize),
    /// Derived from `r(ΔT)` of a bounds document.
    Bounds { path: PathBuf, r_ego: f64 },
}

/// Options of `inflate`.
#[derive(Debug, Clone, PartialEq)]
pub struct InflateOptions {
    /// Grid file, text or `.pgm`.
    pub input: PathBuf,
    /// Cost map file, text or `.pgm`.
    pub output: PathBuf,
    /// Buffer size.
    pub buffer: BufferSource,
    /// Cell size for PGM input (m).
    pub resolution: f64,
    /// Map origin for PGM input (m).
    pub origin: [f64; 2],
    /// Inflation settings.
    pub inflation: InflationConfig,
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Inflate an occupancy grid into a cost map. Returns `N_ε`.
pub fn cmd_inflate(opts: &InflateOptions) -> Result<usize, LabError> {
    let bytes = std::fs::read(&opts.input).map_err(|e| LabError::Config(format!("{}: {e}", opts.input.display())))?;
    let grid = if is_pgm(&opts.input) {
        grid_from_pgm(&bytes, opts.resolution, opts.origin)?
    } else {
        let text = String::from_utf8(bytes).map_err(|_| LabError::Format("grid file is not UTF-8".into()))?;
        grid_from_text(&text)?
    };
    let n = match &opts.buffer {
        BufferSource::Cells(n) => *n,
        BufferSource::Bounds { path, r_ego } => {
            let doc = load_bounds(path)?;
            if !doc.r_dt.is_finite() {
                return Err(LabError::Config("bounds are infinite".into()));
            }
            buffer_cells(doc.r_dt, *r_ego, grid.geometry.resolution)
        }
    };
    let lethal = default_lethal_threshold(&CostWeights::default(), &MppiParams::default(), &Limits::default());
    let map = inflate(&grid, n, &opts.inflation, lethal);
    let out = if is_pgm(&opts.output) { costmap_to_pgm(&map) } else { costmap_to_text(&map).into_bytes() };
    write_file(&opts.output, &out)?;
    Ok(n)
}
