//! Websocket wire protocol: JSON text frames tagged by `type`.

use navlab_core::assist::AssistMode;
use navlab_core::controller::TubeRadii;
use navlab_core::gridmap::{DiscrepancyCostMap, GridGeometry, Obstacle};
use navlab_core::{Pose, VelocityCmd};
use serde::{Deserialize, Serialize};

/// Version carried by every message.
pub const PROTOCOL_VERSION: u32 = 1;

/// Level of a lethal cell in a cost-map patch.
pub const LETHAL_LEVEL: u8 = 255;

/// Message sent by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// First frame of every session.
    Hello(Hello),
    /// Periodic broadcast.
    State(ServerState),
    /// Rejection of one client frame.
    Error(ErrorFrame),
}

/// Session greeting with the static scene and the current cost map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    /// Protocol version.
    pub version: u32,
    /// Sequence number of the latest state.
    pub seq: u64,
    /// Identifier of this session in acknowledgements.
    pub client_id: u64,
    /// Broadcast rate (Hz).
    pub tick_hz: f64,
    /// Map geometry.
    pub geometry: GridGeometry,
    /// Ground-truth obstacles, for display.
    pub obstacles: Vec<Obstacle>,
    /// Vehicle radius (m).
    pub r_ego: f64,
    /// Full cost map.
    pub costmap: CostmapPatch,
}

/// Decision mode as shown to the driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Joystick applied unchanged.
    PassThrough,
    /// Planner command applied.
    Override,
    /// Planner failed; vehicle stopped.
    EmergencyStop,
}

impl Mode {
    /// Mode of an assist decision.
    pub fn of(mode: AssistMode, emergency_stop: bool) -> Self {
        match (mode, emergency_stop) {
            (_, true) => Mode::EmergencyStop,
            (AssistMode::PassThrough, false) => Mode::PassThrough,
            (AssistMode::Override, false) => Mode::Override,
        }
    }
}

/// Costs behind the decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Costs {
    /// Uniformly weighted cost of the projected joystick trajectory.
    pub joystick: f64,
    /// Total cost of the override plan.
    pub plan: Option<f64>,
    /// Lethal threshold.
    pub lethal: f64,
}

/// Latest applied command of one client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    /// Session identifier.
    pub client_id: u64,
    /// Sequence number of the applied command.
    pub seq: u64,
}

/// One control tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    /// Protocol version.
    pub version: u32,
    /// Strictly increasing tick counter.
    pub seq: u64,
    /// Simulation time (s).
    pub clock: f64,
    /// Set while the simulation is paused.
    pub paused: bool,
    /// Vehicle pose.
    pub pose: Pose,
    /// Applied command.
    pub command: VelocityCmd,
    /// Latched joystick.
    pub joystick: VelocityCmd,
    /// Decision mode.
    pub mode: Mode,
    /// Projected joystick trajectory `[x, y, θ]`.
    pub joystick_trajectory: Vec<[f64; 3]>,
    /// Override plan, empty in pass-through.
    pub plan: Vec<[f64; 3]>,
    /// Tube radii.
    pub radii: TubeRadii,
    /// Risk level.
    pub epsilon: f64,
    /// Buffer size `N_ε`.
    pub buffer_cells: usize,
    /// Decision costs.
    pub costs: Costs,
    /// Latest applied command per client.
    pub acks: Vec<Ack>,
    /// Contacts with true obstacles so far.
    pub contacts: usize,
    /// Changed cost-map cells since the previous state.
    pub costmap_patch: Option<CostmapPatch>,
}

/// Rejected client frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    /// Protocol version.
    pub version: u32,
    /// Sequence number of the latest state.
    pub seq: u64,
    /// Sequence number of the rejected command, when it could be read.
    pub rejected: Option<u64>,
    /// Reason.
    pub message: String,
}

/// Message sent by a client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientMessage {
    /// Protocol version.
    pub version: u32,
    /// Client-chosen sequence number, echoed in [`ServerState::acks`].
    pub seq: u64,
    /// The command.
    pub command: ClientCommand,
}

/// Commands accepted from clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientCommand {
    /// Latch a joystick command.
    Joystick {
        /// Linear velocity (m/s).
        v: f64,
        /// Angular velocity (rad/s).
        omega: f64,
    },
    /// Recalibrate at a new risk level and re-inflate.
    SetEpsilon {
        /// New risk level in `(0, 1)`.
        epsilon: f64,
    },
    /// Pause or resume the simulation.
    Pause {
        /// Target state.
        paused: bool,
    },
    /// Return the vehicle to its start and clear the map.
    Reset,
}

/// Run of equal levels starting at a row-major cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRun {
    /// First cell.
    pub start: usize,
    /// Number of cells.
    pub len: usize,
    /// Level: [`LETHAL_LEVEL`] for lethal, otherwise `round(100 cost)` capped at 254.
    pub level: u8,
}

/// Run-length-encoded cost-map cells. Re-applying a patch is idempotent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostmapPatch {
    /// Cells along x.
    pub width: usize,
    /// Cells along y.
    pub height: usize,
    /// Set when the runs cover every cell.
    pub full: bool,
    /// Runs in increasing `start` order.
    pub runs: Vec<CostRun>,
}

/// Quantised level of every cell.
pub fn levels(map: &DiscrepancyCostMap) -> Vec<u8> {
    map.cells
        .iter()
        .map(|&c| if c >= map.lethal { LETHAL_LEVEL } else { (c * 100.0).round().clamp(0.0, 254.0) as u8 })
        .collect()
}

fn push_run(runs: &mut Vec<CostRun>, i: usize, level: u8) {
    match runs.last_mut() {
        Some(r) if r.start + r.len == i && r.level == level => r.len += 1,
        _ => runs.push(CostRun { start: i, len: 1, level }),
    }
}

/// Patch covering every cell.
pub fn full_patch(geometry: &GridGeometry, current: &[u8]) -> CostmapPatch {
    let mut runs = Vec::new();
    for (i, &l) in current.iter().enumerate() {
        push_run(&mut runs, i, l);
    }
    CostmapPatch { width: geometry.width, height: geometry.height, full: true, runs }
}

/// Patch of the cells that differ from `previous`, or a full patch when there is
/// no usable previous map. `None` when nothing changed.
pub fn diff_patch(geometry: &GridGeometry, previous: Option<&[u8]>, current: &[u8]) -> Option<CostmapPatch> {
    match previous {
        Some(prev) if prev.len() == current.len() => {
            let mut runs = Vec::new();
            for (i, (&a, &b)) in prev.iter().zip(current).enumerate() {
                if a != b {
                    push_run(&mut runs, i, b);
                }
            }
            (!runs.is_empty()).then_some(CostmapPatch {
                width: geometry.width,
                height: geometry.height,
                full: false,
                runs,
            })
        }
        _ => Some(full_patch(geometry, current)),
    }
}

/// Apply a patch to a level buffer; a full patch resizes the buffer.
pub fn apply_patch(levels: &mut Vec<u8>, patch: &CostmapPatch) -> Result<(), String> {
    let n = patch.width * patch.height;
    if patch.full {
        levels.clear();
        levels.resize(n, 0);
    } else if levels.len() != n {
        return Err(format!("patch for {n} cells applied to {} cells", levels.len()));
    }
    for r in &patch.runs {
        let end = r.start.checked_add(r.len).filter(|&e| e <= n).ok_or("run out of range")?;
        levels[r.start..end].fill(r.level);
    }
    Ok(())
}

/// Parse and check a client frame; on failure also returns the sequence number
/// when it could be read.
pub fn parse_client(text: &str) -> Result<ClientMessage, (Option<u64>, String)> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| (None, format!("malformed JSON: {e}")))?;
    let seq = value.get("seq").and_then(|s| s.as_u64());
    let msg: ClientMessage = serde_json::from_value(value).map_err(|e| (seq, format!("invalid message: {e}")))?;
    if msg.version != PROTOCOL_VERSION {
        return Err((seq, format!("unsupported protocol version {}, expected {PROTOCOL_VERSION}", msg.version)));
    }
    Ok(msg)
}
