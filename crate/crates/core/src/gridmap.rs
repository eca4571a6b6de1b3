//! Occupancy grids, simulated range sensing and discrepancy-aware inflation.
//!
//! A cell is occupied when its value exceeds 50 (unknown cells hold 50). Inflation by
//! `N` cells produces two tiers:
//!
//! * lethal: the disc of radius `N·r_map` around the cell center meets an occupied
//!   cell square; such cells hold exactly the lethal threshold;
//! * soft: `Σ_{|i|,|j| ≤ N} α_shift · (occ/100) / √(i² + j² + 1)` over occupied cells,
//!   kept strictly below the lethal threshold.

use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, floor, sin, sqrt};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::dynamics::Pose;

/// Occupancy of a cell with no information.
pub const UNKNOWN: u8 = 50;

/// Size, resolution and placement of a grid.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    /// Cells along x.
    pub width: usize,
    /// Cells along y.
    pub height: usize,
    /// Cell edge length (m).
    pub resolution: f64,
    /// World coordinates of the grid center (m).
    pub origin: [f64; 2],
}

impl Default for GridGeometry {
    fn default() -> Self {
        GridGeometry { width: 200, height: 200, resolution: 0.05, origin: [0.0, 0.0] }
    }
}

impl GridGeometry {
    /// Number of cells.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    /// True for a grid without cells.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Signed cell coordinates `⌊(p − origin)/r + size/2⌋` of a world point.
    pub fn cell_coords(&self, p: [f64; 2]) -> (i64, i64) {
        let fx = (p[0] - self.origin[0]) / self.resolution + self.width as f64 / 2.0;
        let fy = (p[1] - self.origin[1]) / self.resolution + self.height as f64 / 2.0;
        (floor(fx) as i64, floor(fy) as i64)
    }

    /// Cell containing a world point, if it lies on the map.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let (ix, iy) = self.cell_coords(p);
        self.checked(ix, iy)
    }

    /// Bounds-checked conversion of signed cell coordinates.
    pub fn checked(&self, ix: i64, iy: i64) -> Option<(usize, usize)> {
        if ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height {
            Some((ix as usize, iy as usize))
        } else {
            None
        }
    }

    /// Row-major index of a cell.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    /// World coordinates of a cell center.
    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5 - self.width as f64 / 2.0) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5 - self.height as f64 / 2.0) * self.resolution,
        ]
    }
}

/// Occupancy grid with per-cell values in `0..=100`.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    /// Grid geometry.
    pub geometry: GridGeometry,
    /// Row-major occupancy values.
    pub cells: Vec<u8>,
}

impl OccupancyGrid {
    /// Grid filled with one value.
    pub fn filled(geometry: GridGeometry, value: u8) -> Self {
        OccupancyGrid { geometry, cells: vec![value.min(100); geometry.len()] }
    }

    /// Grid with every cell unknown.
    pub fn unknown(geometry: GridGeometry) -> Self {
        Self::filled(geometry, UNKNOWN)
    }

    /// Value of a cell.
    pub fn get(&self, ix: usize, iy: usize) -> u8 {
        self.cells[self.geometry.index(ix, iy)]
    }

    /// Overwrite a cell, clamping to 100.
    pub fn set(&mut self, ix: usize, iy: usize, value: u8) {
        let i = self.geometry.index(ix, iy);
        self.cells[i] = value.min(100);
    }

    /// Whether a value counts as occupied.
    pub fn is_occupied_value(value: u8, pessimistic_unknown: bool) -> bool {
        if pessimistic_unknown { value >= UNKNOWN } else { value > UNKNOWN }
    }
}

/// Ground-truth obstacle shape.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    /// Axis-aligned box `[min, max]`.
    Box {
        /// Lower corner (m).
        min: [f64; 2],
        /// Upper corner (m).
        max: [f64; 2],
    },
    /// Disc.
    Disc {
        /// Center (m).
        center: [f64; 2],
        /// Radius (m).
        radius: f64,
    },
}

impl Obstacle {
    /// Box centered at `center` with the given full size.
    pub fn centered_box(center: [f64; 2], size: [f64; 2]) -> Self {
        Obstacle::Box {
            min: [center[0] - size[0] / 2.0, center[1] - size[1] / 2.0],
            max: [center[0] + size[0] / 2.0, center[1] + size[1] / 2.0],
        }
    }

    /// Whether the closed shape contains `p`.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Obstacle::Box { min, max } => {
                p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1]
            }
            Obstacle::Disc { center, radius } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                dx * dx + dy * dy <= radius * radius
            }
        }
    }

    /// Euclidean distance from `p` to the shape (0 inside).
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match *self {
            Obstacle::Box { min, max } => {
                let dx = (min[0] - p[0]).max(0.0).max(p[0] - max[0]);
                let dy = (min[1] - p[1]).max(0.0).max(p[1] - max[1]);
                libm::hypot(dx, dy)
            }
            Obstacle::Disc { center, radius } => {
                (libm::hypot(p[0] - center[0], p[1] - center[1]) - radius).max(0.0)
            }
        }
    }

    /// Smallest `t ≥ 0` with `origin + t·dir` on the shape, for a unit `dir`.
    pub fn ray_hit(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        if self.contains(origin) {
            return Some(0.0);
        }
        match *self {
            Obstacle::Box { min, max } => {
                let mut t0 = 0.0f64;
                let mut t1 = f64::INFINITY;
                for k in 0..2 {
                    if dir[k].abs() < 1e-15 {
                        if origin[k] < min[k] || origin[k] > max[k] {
                            return None;
                        }
                    } else {
                        let a = (min[k] - origin[k]) / dir[k];
                        let b = (max[k] - origin[k]) / dir[k];
                        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                        t0 = t0.max(lo);
                        t1 = t1.min(hi);
                    }
                }
                (t0 <= t1).then_some(t0)
            }
            Obstacle::Disc { center, radius } => {
                let f = [origin[0] - center[0], origin[1] - center[1]];
                let b = f[0] * dir[0] + f[1] * dir[1];
                let c = f[0] * f[0] + f[1] * f[1] - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - sqrt(disc);
                (t >= 0.0).then_some(t)
            }
        }
    }
}

/// Collection of ground-truth obstacles.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObstacleSet {
    /// The shapes.
    pub obstacles: Vec<Obstacle>,
}

impl ObstacleSet {
    /// Set from a list of shapes.
    pub fn new(obstacles: Vec<Obstacle>) -> Self {
        ObstacleSet { obstacles }
    }

    /// Whether any shape contains `p`.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    /// Distance from `p` to the nearest shape (`+∞` when empty).
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        self.obstacles.iter().map(|o| o.distance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Nearest ray hit over all shapes.
    pub fn ray_hit(&self, origin: [f64; 2], dir: [f64; 2]) -> Option<f64> {
        self.obstacles.iter().filter_map(|o| o.ray_hit(origin, dir)).reduce(f64::min)
    }
}

/// `⌈(r_tube + r_ego) / r_map⌉`.
pub fn buffer_cells(r_tube: f64, r_ego: f64, r_map: f64) -> usize {
    let x = (r_tube + r_ego) / r_map;
    // Guard against quotients such as 11.000000000000002 for 0.55/0.05.
    let n = libm::ceil(x - 1e-9 * x.max(1.0));
    if n > 0.0 { n as usize } else { 0 }
}

/// Ground-truth grid: 100 where the cell center lies in an obstacle, else 0.
pub fn rasterize(obstacles: &ObstacleSet, geometry: GridGeometry) -> OccupancyGrid {
    let mut grid = OccupancyGrid::filled(geometry, 0);
    for iy in 0..geometry.height {
        for ix in 0..geometry.width {
            if obstacles.contains(geometry.center(ix, iy)) {
                grid.set(ix, iy, 100);
            }
        }
    }
    grid
}

/// Parameters of the simulated range sensor and its inverse model.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    /// Beams per scan, evenly spread over a full turn.
    pub beam_count: usize,
    /// Maximum range (m).
    pub max_range: f64,
    /// Increment applied to hit cells.
    pub hit_step: u8,
    /// Decrement applied to traversed free cells.
    pub free_step: u8,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel { beam_count: 720, max_range: 6.0, hit_step: 50, free_step: 10 }
    }
}

/// Summary of one scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanReport {
    /// Cells whose value changed.
    pub changed: usize,
    /// Set when the sensor pose was off the map and nothing was updated.
    pub off_map: bool,
}

/// Cast `beam_count` rays from `pose` and update the grid in place.
///
/// Cells crossed before a hit move toward 0 and hit cells toward 100; a cell hit by
/// any beam of the scan is not freed by another.
pub fn sensor_update_in_place(
    grid: &mut OccupancyGrid,
    pose: &Pose,
    obstacles: &ObstacleSet,
    sensor: &SensorModel,
) -> ScanReport {
    let geo = grid.geometry;
    let origin = [pose.x, pose.y];
    if geo.cell_of(origin).is_none() || sensor.beam_count == 0 {
        return ScanReport { changed: 0, off_map: true };
    }
    const FREE: u8 = 1;
    const HIT: u8 = 2;
    let mut mark = vec![0u8; geo.len()];
    for k in 0..sensor.beam_count {
        let a = pose.theta + 2.0 * core::f64::consts::PI * k as f64 / sensor.beam_count as f64;
        let dir = [cos(a), sin(a)];
        let hit = obstacles.ray_hit(origin, dir).filter(|&t| t <= sensor.max_range);
        let reach = hit.unwrap_or(sensor.max_range);
        let hit_cell = hit.and_then(|t| {
            let nudge = 1e-9 * geo.resolution;
            geo.cell_of([origin[0] + (t + nudge) * dir[0], origin[1] + (t + nudge) * dir[1]])
        });
        traverse(&geo, origin, dir, reach, |ix, iy| {
            if Some((ix, iy)) == hit_cell {
                return false;
            }
            let i = geo.index(ix, iy);
            if mark[i] == 0 {
                mark[i] = FREE;
            }
            true
        });
        if let Some((ix, iy)) = hit_cell {
            mark[geo.index(ix, iy)] = HIT;
        }
    }
    let mut changed = 0;
    for (cell, m) in grid.cells.iter_mut().zip(mark.iter()) {
        let next = match *m {
            HIT => cell.saturating_add(sensor.hit_step).min(100),
            FREE => cell.saturating_sub(sensor.free_step),
            _ => continue,
        };
        if next != *cell {
            *cell = next;
            changed += 1;
        }
    }
    ScanReport { changed, off_map: false }
}

/// Pure form of [`sensor_update_in_place`].
pub fn sensor_update(
    grid: &OccupancyGrid,
    pose: &Pose,
    obstacles: &ObstacleSet,
    sensor: &SensorModel,
) -> (OccupancyGrid, ScanReport) {
    let mut next = grid.clone();
    let report = sensor_update_in_place(&mut next, pose, obstacles, sensor);
    (next, report)
}

/// Visit the cells crossed by the segment `origin + t·dir`, `t ∈ [0, length]`, in
/// order, stopping at the map edge or when `visit` returns false.
fn traverse(
    geo: &GridGeometry,
    origin: [f64; 2],
    dir: [f64; 2],
    length: f64,
    mut visit: impl FnMut(usize, usize) -> bool,
) {
    let r = geo.resolution;
    let (mut ix, mut iy) = geo.cell_coords(origin);
    let step = [if dir[0] >= 0.0 { 1i64 } else { -1 }, if dir[1] >= 0.0 { 1i64 } else { -1 }];
    let lower = geo.center(0, 0);
    let edge = |i: i64, k: usize, s: i64| {
        let base = if k == 0 { lower[0] } else { lower[1] } - 0.5 * r;
        base + (i + if s > 0 { 1 } else { 0 }) as f64 * r
    };
    let t_of = |k: usize, i: i64| {
        if dir[k].abs() < 1e-15 {
            f64::INFINITY
        } else {
            (edge(i, k, step[k]) - origin[k]) / dir[k]
        }
    };
    let mut t_next = [t_of(0, ix), t_of(1, iy)];
    let delta = [
        if dir[0].abs() < 1e-15 { f64::INFINITY } else { r / dir[0].abs() },
        if dir[1].abs() < 1e-15 { f64::INFINITY } else { r / dir[1].abs() },
    ];
    loop {
        let Some((cx, cy)) = geo.checked(ix, iy) else { return };
        if !visit(cx, cy) {
            return;
        }
        let k = if t_next[0] < t_next[1] { 0 } else { 1 };
        if t_next[k] > length {
            return;
        }
        if k == 0 {
            ix += step[0];
        } else {
            iy += step[1];
        }
        t_next[k] += delta[k];
    }
}

/// Inflated cost map.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, PartialEq)]
pub struct DiscrepancyCostMap {
    /// Geometry of the source grid.
    pub geometry: GridGeometry,
    /// Row-major costs in `[0, lethal]`.
    pub cells: Vec<f64>,
    /// Lethal threshold.
    pub lethal: f64,
    /// Buffer size `N` in cells.
    pub buffer_cells: usize,
}

/// Inflation settings.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InflationConfig {
    /// Weight of each shifted map in the soft tier.
    pub alpha_shift: f64,
    /// Treat unknown cells (50) as occupied.
    pub pessimistic_unknown: bool,
}

impl Default for InflationConfig {
    fn default() -> Self {
        InflationConfig { alpha_shift: 0.1, pessimistic_unknown: false }
    }
}

/// Offsets `(di, dj)` whose cell square lies within `n` cells of the origin cell center.
pub fn lethal_stencil(n: usize) -> Vec<(i64, i64)> {
    let n = n as i64;
    let reach = n as f64;
    let mut out = Vec::new();
    for dj in -n..=n {
        for di in -n..=n {
            let gx = (di.abs() as f64 - 0.5).max(0.0);
            let gy = (dj.abs() as f64 - 0.5).max(0.0);
            if gx * gx + gy * gy <= reach * reach {
                out.push((di, dj));
            }
        }
    }
    out
}

/// Build the two-tier cost map with buffer `n_eps` and lethal threshold `lethal`.
pub fn inflate(
    grid: &OccupancyGrid,
    n_eps: usize,
    config: &InflationConfig,
    lethal: f64,
) -> DiscrepancyCostMap {
    let geo = grid.geometry;
    let mut soft = vec![0.0f64; geo.len()];
    let mut is_lethal = vec![false; geo.len()];
    let stencil = lethal_stencil(n_eps);
    let n = n_eps as i64;
    let mut weights = Vec::with_capacity(((2 * n + 1) * (2 * n + 1)) as usize);
    for j in -n..=n {
        for i in -n..=n {
            weights.push((i, j, 1.0 / sqrt((i * i + j * j + 1) as f64)));
        }
    }
    for oy in 0..geo.height {
        for ox in 0..geo.width {
            let occ = grid.get(ox, oy);
            if !OccupancyGrid::is_occupied_value(occ, config.pessimistic_unknown) {
                continue;
            }
            for &(di, dj) in &stencil {
                if let Some((x, y)) = geo.checked(ox as i64 + di, oy as i64 + dj) {
                    is_lethal[geo.index(x, y)] = true;
                }
            }
            let scale = config.alpha_shift * occ as f64 / 100.0;
            for &(i, j, w) in &weights {
                if let Some((x, y)) = geo.checked(ox as i64 + i, oy as i64 + j) {
                    soft[geo.index(x, y)] += scale * w;
                }
            }
        }
    }
    let below = lethal * (1.0 - f64::EPSILON);
    let cells = soft
        .iter()
        .zip(is_lethal.iter())
        .map(|(&s, &l)| if l { lethal } else { s.min(below) })
        .collect();
    DiscrepancyCostMap { geometry: geo, cells, lethal, buffer_cells: n_eps }
}

impl DiscrepancyCostMap {
    /// Cost at a world position; off-map positions are lethal.
    pub fn query(&self, p: [f64; 2]) -> f64 {
        match self.geometry.cell_of(p) {
            Some((ix, iy)) => self.cells[self.geometry.index(ix, iy)],
            None => self.lethal,
        }
    }

    /// Whether a world position is lethal.
    pub fn is_lethal(&self, p: [f64; 2]) -> bool {
        self.query(p) >= self.lethal
    }

    /// Cost of a cell.
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.cells[self.geometry.index(ix, iy)]
    }
}

/// Cost of a world position (free-function form of [`DiscrepancyCostMap::query`]).
pub fn query_cost(costmap: &DiscrepancyCostMap, p: [f64; 2]) -> f64 {
    costmap.query(p)
}
