//! On-disk formats: training tuples, bounds documents, grids, cost maps and run logs.

use std::io::{BufRead, Write};

use navlab_core::conformal::TrainingTuple;
use navlab_core::gridmap::{DiscrepancyCostMap, GridGeometry, OccupancyGrid};
use navlab_core::sim::{RunLog, RunSummary};
use navlab_core::{Pose, VelocityCmd};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::LabError;

/// Tag written into every bounds document.
pub const BOUNDS_FORMAT: &str = "navlab-bounds/1";

/// One training tuple as a flat line record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TupleRecord {
    /// Timestamp (s).
    pub t: f64,
    /// Pose at the start of the interval `[x, y, θ]`.
    pub prev: [f64; 3],
    /// Measured pose at the end of the interval.
    pub measured: [f64; 3],
    /// Optimal state the interval steered toward.
    pub optimal: [f64; 3],
    /// Applied input `[v, ω]`.
    pub applied: [f64; 2],
    /// Optimal input `[v, ω]`.
    pub optimal_input: [f64; 2],
    /// Interval length (s).
    pub dt: f64,
}

fn pose3(p: Pose) -> [f64; 3] {
    [p.x, p.y, p.theta]
}

fn from3(p: [f64; 3]) -> Pose {
    Pose::new(p[0], p[1], p[2])
}

impl From<&TrainingTuple> for TupleRecord {
    fn from(t: &TrainingTuple) -> Self {
        TupleRecord {
            t: t.time,
            prev: pose3(t.prev_state),
            measured: pose3(t.measured_state),
            optimal: pose3(t.optimal_state),
            applied: [t.applied_input.v, t.applied_input.omega],
            optimal_input: [t.optimal_input.v, t.optimal_input.omega],
            dt: t.dt,
        }
    }
}

impl From<TupleRecord> for TrainingTuple {
    fn from(r: TupleRecord) -> Self {
        TrainingTuple {
            time: r.t,
            prev_state: from3(r.prev),
            measured_state: from3(r.measured),
            optimal_state: from3(r.optimal),
            applied_input: VelocityCmd::new(r.applied[0], r.applied[1]),
            optimal_input: VelocityCmd::new(r.optimal_input[0], r.optimal_input[1]),
            dt: r.dt,
        }
    }
}

/// Serialise tuples as JSON lines.
pub fn encode_tuples(tuples: &[TrainingTuple]) -> Vec<u8> {
    let mut out = Vec::with_capacity(tuples.len() * 200);
    for t in tuples {
        serde_json::to_writer(&mut out, &TupleRecord::from(t)).expect("tuple record serialises");
        out.push(b'\n');
    }
    out
}

/// Parse JSON-lines tuples; blank lines are ignored.
pub fn decode_tuples(reader: impl BufRead) -> Result<Vec<TrainingTuple>, LabError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TupleRecord = serde_json::from_str(&line)
            .map_err(|e| LabError::Format(format!("tuple line {}: {e}", i + 1)))?;
        out.push(rec.into());
    }
    Ok(out)
}

/// Lower-case hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Calibration result with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsDocument {
    /// Always [`BOUNDS_FORMAT`].
    pub format: String,
    /// Matched bound `Z_ε`.
    pub z_matched: f64,
    /// Unmatched bound `Z⊥_ε`.
    pub z_unmatched: f64,
    /// Risk level.
    pub epsilon: f64,
    /// Subsample size `L`.
    pub sample_count: usize,
    /// Order index `q_ε`.
    pub quantile_index: usize,
    /// Set when the quantile is the appended `+∞`.
    pub insufficient: bool,
    /// Seed of the subsample draw.
    pub seed: u64,
    /// Disturbance preset of the training runs.
    pub preset: String,
    /// SHA-256 of the tuple file.
    pub dataset_sha256: String,
    /// `r(0)` (m).
    pub r0: f64,
    /// `r(ΔT)` (m).
    pub r_dt: f64,
}

impl BoundsDocument {
    /// Bounds in core form.
    pub fn bounds(&self) -> navlab_core::controller::DiscrepancyBounds {
        navlab_core::controller::DiscrepancyBounds::new(
            self.z_matched,
            self.z_unmatched,
            self.epsilon,
            self.sample_count,
        )
    }

    /// TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("bounds document serialises")
    }

    /// Parse and check the format tag.
    pub fn from_toml(text: &str) -> Result<Self, LabError> {
        let doc: BoundsDocument = toml::from_str(text).map_err(|e| LabError::Format(e.to_string()))?;
        if doc.format != BOUNDS_FORMAT {
            return Err(LabError::Format(format!("unsupported bounds format {:?}", doc.format)));
        }
        Ok(doc)
    }
}

const GRID_MAGIC: &str = "navlab-grid 1";
const COSTMAP_MAGIC: &str = "navlab-costmap 1";

fn write_header(out: &mut String, magic: &str, geo: &GridGeometry) {
    out.push_str(magic);
    out.push('\n');
    out.push_str(&format!("width {}\nheight {}\nresolution {}\n", geo.width, geo.height, geo.resolution));
    out.push_str(&format!("origin {} {}\n", geo.origin[0], geo.origin[1]));
}

struct Header<'a> {
    geometry: GridGeometry,
    extra: Vec<(&'a str, &'a str)>,
    rows: Vec<&'a str>,
}

fn parse_header<'a>(text: &'a str, magic: &str, extra_keys: &[&'a str]) -> Result<Header<'a>, LabError> {
    let bad = |m: String| LabError::Format(m);
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    if lines.next().map(str::trim) != Some(magic) {
        return Err(bad(format!("missing `{magic}` header")));
    }
    let mut field = |key: &str| -> Result<&'a str, LabError> {
        let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
        line.strip_prefix(key)
            .map(str::trim)
            .ok_or_else(|| bad(format!("expected `{key}`, found `{line}`")))
    };
    let num = |s: &str, key: &str| -> Result<f64, LabError> {
        s.parse::<f64>().map_err(|_| bad(format!("bad {key} `{s}`")))
    };
    let width = field("width")?.parse::<usize>().map_err(|e| bad(format!("width: {e}")))?;
    let height = field("height")?.parse::<usize>().map_err(|e| bad(format!("height: {e}")))?;
    let resolution = num(field("resolution")?, "resolution")?;
    let origin: Vec<&str> = field("origin")?.split_whitespace().collect();
    if origin.len() != 2 {
        return Err(bad("origin needs two values".into()));
    }
    let origin = [num(origin[0], "origin")?, num(origin[1], "origin")?];
    let mut extra = Vec::new();
    for key in extra_keys {
        extra.push((*key, field(key)?));
    }
    let rows: Vec<&str> = lines.collect();
    if rows.len() != height {
        return Err(bad(format!("expected {height} rows, found {}", rows.len())));
    }
    if !(resolution > 0.0) || width == 0 || height == 0 {
        return Err(bad("grid must be nonempty with positive resolution".into()));
    }
    Ok(Header { geometry: GridGeometry { width, height, resolution, origin }, extra, rows })
}

fn parse_row<T: std::str::FromStr>(row: &str, width: usize, y: usize) -> Result<Vec<T>, LabError> {
    let vals: Result<Vec<T>, _> = row.split_whitespace().map(str::parse).collect();
    let vals = vals.map_err(|_| LabError::Format(format!("bad value in row for y = {y}")))?;
    if vals.len() != width {
        return Err(LabError::Format(format!("row for y = {y} has {} values, expected {width}", vals.len())));
    }
    Ok(vals)
}

/// Text form of an occupancy grid; rows run from the top (largest `y`) down.
pub fn grid_to_text(grid: &OccupancyGrid) -> String {
    let geo = grid.geometry;
    let mut out = String::new();
    write_header(&mut out, GRID_MAGIC, &geo);
    for iy in (0..geo.height).rev() {
        let row: Vec<String> = (0..geo.width).map(|ix| grid.get(ix, iy).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parse [`grid_to_text`] output.
pub fn grid_from_text(text: &str) -> Result<OccupancyGrid, LabError> {
    let h = parse_header(text, GRID_MAGIC, &[])?;
    let geo = h.geometry;
    let mut grid = OccupancyGrid::filled(geo, 0);
    for (r, row) in h.rows.iter().enumerate() {
        let iy = geo.height - 1 - r;
        for (ix, v) in parse_row::<u8>(row, geo.width, iy)?.into_iter().enumerate() {
            if v > 100 {
                return Err(LabError::Format(format!("occupancy {v} above 100")));
            }
            grid.set(ix, iy, v);
        }
    }
    Ok(grid)
}

/// Text form of a cost map, rows from the top down.
pub fn costmap_to_text(map: &DiscrepancyCostMap) -> String {
    let geo = map.geometry;
    let mut out = String::new();
    write_header(&mut out, COSTMAP_MAGIC, &geo);
    out.push_str(&format!("lethal {}\nbuffer_cells {}\n", map.lethal, map.buffer_cells));
    for iy in (0..geo.height).rev() {
        let row: Vec<String> = (0..geo.width).map(|ix| map.get(ix, iy).to_string()).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Parse [`costmap_to_text`] output.
pub fn costmap_from_text(text: &str) -> Result<DiscrepancyCostMap, LabError> {
    let h = parse_header(text, COSTMAP_MAGIC, &["lethal", "buffer_cells"])?;
    let geo = h.geometry;
    let lethal: f64 = h.extra[0].1.parse().map_err(|_| LabError::Format("bad lethal".into()))?;
    let buffer_cells: usize = h.extra[1].1.parse().map_err(|_| LabError::Format("bad buffer_cells".into()))?;
    let mut cells = vec![0.0; geo.len()];
    for (r, row) in h.rows.iter().enumerate() {
        let iy = geo.height - 1 - r;
        for (ix, v) in parse_row::<f64>(row, geo.width, iy)?.into_iter().enumerate() {
            cells[geo.index(ix, iy)] = v;
        }
    }
    Ok(DiscrepancyCostMap { geometry: geo, cells, lethal, buffer_cells })
}

/// Binary PGM (P5) of an occupancy grid: free is white, occupied black.
pub fn grid_to_pgm(grid: &OccupancyGrid) -> Vec<u8> {
    let geo = grid.geometry;
    let mut out = format!("P5\n{} {}\n255\n", geo.width, geo.height).into_bytes();
    for iy in (0..geo.height).rev() {
        for ix in 0..geo.width {
            let v = grid.get(ix, iy) as u32;
            out.push((255 - (v * 255 + 50) / 100) as u8);
        }
    }
    out
}

/// Binary PGM of a cost map: lethal cells black, soft costs shaded.
pub fn costmap_to_pgm(map: &DiscrepancyCostMap) -> Vec<u8> {
    let geo = map.geometry;
    let mut out = format!("P5\n{} {}\n255\n", geo.width, geo.height).into_bytes();
    for iy in (0..geo.height).rev() {
        for ix in 0..geo.width {
            let c = map.get(ix, iy);
            let px = if c >= map.lethal { 0 } else { 255 - (c.min(1.0) * 200.0).round() as u8 };
            out.push(px);
        }
    }
    out
}

/// Parse a P2 or P5 image into an occupancy grid of the given geometry.
///
/// Pixel `p` of maximum `m` maps to occupancy `round(100 (m − p)/m)`.
pub fn grid_from_pgm(bytes: &[u8], resolution: f64, origin: [f64; 2]) -> Result<OccupancyGrid, LabError> {
    let bad = |m: &str| LabError::Format(format!("pgm: {m}"));
    let mut pos = 0;
    let mut token = || -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().ok_or_else(|| bad("empty file"))?;
    let width: usize = token().and_then(|t| t.parse().ok()).ok_or_else(|| bad("width"))?;
    let height: usize = token().and_then(|t| t.parse().ok()).ok_or_else(|| bad("height"))?;
    let maxval: u32 = token().and_then(|t| t.parse().ok()).ok_or_else(|| bad("maxval"))?;
    if maxval == 0 || maxval > 255 || width == 0 || height == 0 {
        return Err(bad("only nonempty 8-bit images are supported"));
    }
    let pixels: Vec<u32> = match magic.as_str() {
        "P5" => {
            let start = pos + 1;
            let data = bytes.get(start..start + width * height).ok_or_else(|| bad("truncated data"))?;
            data.iter().map(|&b| b as u32).collect()
        }
        "P2" => {
            let mut v = Vec::with_capacity(width * height);
            for _ in 0..width * height {
                v.push(token().and_then(|t| t.parse().ok()).ok_or_else(|| bad("truncated data"))?);
            }
            v
        }
        _ => return Err(bad("expected P2 or P5")),
    };
    let geo = GridGeometry { width, height, resolution, origin };
    let mut grid = OccupancyGrid::filled(geo, 0);
    for (i, &p) in pixels.iter().enumerate() {
        let (r, ix) = (i / width, i % width);
        let p = p.min(maxval);
        let occ = ((maxval - p) * 100 + maxval / 2) / maxval;
        grid.set(ix, height - 1 - r, occ as u8);
    }
    Ok(grid)
}

/// Pretty JSON of a run log.
pub fn run_log_to_json(log: &RunLog) -> String {
    serde_json::to_string(log).expect("run log serialises")
}

/// Parse a run log.
pub fn run_log_from_json(text: &str) -> Result<RunLog, LabError> {
    serde_json::from_str(text).map_err(|e| LabError::Format(format!("run log: {e}")))
}

/// Metrics summary as pretty JSON with a trailing newline.
pub fn summary_to_json(summary: &RunSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serialises");
    s.push('\n');
    s
}

/// Write bytes to `path`, creating parent directories.
pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<(), LabError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
