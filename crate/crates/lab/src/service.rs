//! Driver-assist service: one control loop owns the simulation, websocket
//! sessions exchange messages with it.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use navlab_core::assist::{assist_step, AssistDecision, AssistParams, JoystickCmd};
use navlab_core::conformal::{calibrate_samples, extract_all, CalibrationConfig, DiscrepancySample};
use navlab_core::controller::{tube_radii, DiscrepancyBounds, TubeRadii};
use navlab_core::gridmap::{
    buffer_cells, inflate, sensor_update_in_place, DiscrepancyCostMap, ObstacleSet, OccupancyGrid,
};
use navlab_core::mppi::default_lethal_threshold;
use navlab_core::mppi::{CostWeights, MppiParams};
use navlab_core::sim::{generate_training, step_true, SimState};
use navlab_core::{Pose, VelocityCmd};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::config::ServeConfig;
use crate::protocol::{
    diff_patch, full_patch, levels, parse_client, Ack, ClientCommand, ClientMessage, Costs, ErrorFrame, Hello,
    Mode, ServerMessage, ServerState, PROTOCOL_VERSION,
};
use crate::LabError;

/// Simulation, map and assist state advanced one tick at a time.
pub struct AssistWorld {
    cfg: ServeConfig,
    samples: Vec<DiscrepancySample>,
    obstacles: ObstacleSet,
    sim: SimState,
    pose: Pose,
    clock: f64,
    grid: OccupancyGrid,
    costmap: DiscrepancyCostMap,
    levels: Vec<u8>,
    sent: Option<Vec<u8>>,
    lethal: f64,
    epsilon: f64,
    radii: TubeRadii,
    joystick: JoystickCmd,
    paused: bool,
    acks: BTreeMap<u64, u64>,
    seq: u64,
    contacts: usize,
    in_contact: bool,
    last: Option<AssistDecision>,
}

fn bounds_at(samples: &[DiscrepancySample], epsilon: f64, subsample: usize, seed: u64) -> Result<DiscrepancyBounds, LabError> {
    let cfg = CalibrationConfig::new(epsilon, subsample.min(samples.len()), seed);
    Ok(calibrate_samples(samples, &cfg)?.bounds)
}

impl AssistWorld {
    /// Simulate the configured training runs and build the world.
    pub fn from_config(cfg: ServeConfig) -> Result<Self, LabError> {
        let model = cfg.train.model()?;
        let data = generate_training(&model, &cfg.train.lap_times, cfg.train.laps, cfg.train.dt);
        let (samples, _) = extract_all(&data, &cfg.train.extraction);
        Self::new(cfg, samples)
    }

    /// World calibrated from already extracted discrepancy samples.
    pub fn new(cfg: ServeConfig, samples: Vec<DiscrepancySample>) -> Result<Self, LabError> {
        if samples.is_empty() {
            return Err(LabError::Config("no discrepancy samples for calibration".into()));
        }
        let params = MppiParams { horizon: cfg.assist.horizon, dt: cfg.limits.dt, ..MppiParams::default() };
        let lethal = default_lethal_threshold(&CostWeights::default(), &params, &cfg.limits);
        let grid = OccupancyGrid::unknown(cfg.geometry);
        let costmap = inflate(&grid, 0, &cfg.inflation, lethal);
        let mut world = AssistWorld {
            obstacles: ObstacleSet::new(cfg.obstacles.clone()),
            sim: SimState::at_rest(cfg.start, &cfg.disturbance, cfg.limits.dt),
            pose: cfg.start,
            clock: 0.0,
            levels: levels(&costmap),
            grid,
            costmap,
            sent: None,
            lethal,
            epsilon: cfg.epsilon,
            radii: TubeRadii { r0: 0.0, r_dt: 0.0 },
            joystick: JoystickCmd::default(),
            paused: false,
            acks: BTreeMap::new(),
            seq: 0,
            contacts: 0,
            in_contact: false,
            last: None,
            samples,
            cfg,
        };
        world.set_epsilon(world.epsilon)?;
        Ok(world)
    }

    fn set_epsilon(&mut self, epsilon: f64) -> Result<(), LabError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(LabError::Config(format!("epsilon {epsilon} outside (0, 1)")));
        }
        let bounds = bounds_at(&self.samples, epsilon, self.cfg.train.subsample, self.cfg.assist.seed)?;
        let radii = tube_radii(&bounds, &self.cfg.tube)?;
        self.epsilon = epsilon;
        self.radii = radii;
        self.reinflate();
        Ok(())
    }

    fn reinflate(&mut self) {
        let n = buffer_cells(self.radii.r_dt, self.cfg.r_ego, self.cfg.geometry.resolution);
        self.costmap = inflate(&self.grid, n, &self.cfg.inflation, self.lethal);
        self.levels = levels(&self.costmap);
    }

    fn reset(&mut self) {
        self.sim = SimState::at_rest(self.cfg.start, &self.cfg.disturbance, self.cfg.limits.dt);
        self.pose = self.cfg.start;
        self.clock = 0.0;
        self.grid = OccupancyGrid::unknown(self.cfg.geometry);
        self.joystick = JoystickCmd::default();
        self.in_contact = false;
        self.reinflate();
    }

    /// Apply one client command; the sequence number is acknowledged on success.
    pub fn apply(&mut self, client_id: u64, msg: &ClientMessage) -> Result<(), String> {
        match msg.command {
            ClientCommand::Joystick { v, omega } => {
                if !(v.is_finite() && omega.is_finite()) {
                    return Err("joystick values must be finite".into());
                }
                self.joystick = JoystickCmd { v, omega, timestamp: self.clock };
            }
            ClientCommand::SetEpsilon { epsilon } => self.set_epsilon(epsilon).map_err(|e| e.to_string())?,
            ClientCommand::Pause { paused } => self.paused = paused,
            ClientCommand::Reset => self.reset(),
        }
        self.acks.insert(client_id, msg.seq);
        Ok(())
    }

    /// Forget a disconnected client.
    pub fn leave(&mut self, client_id: u64) {
        self.acks.remove(&client_id);
    }

    /// Greeting for a new session, with the full cost map.
    pub fn hello(&self, client_id: u64) -> Hello {
        Hello {
            version: PROTOCOL_VERSION,
            seq: self.seq,
            client_id,
            tick_hz: self.cfg.tick_hz,
            geometry: self.cfg.geometry,
            obstacles: self.cfg.obstacles.clone(),
            r_ego: self.cfg.r_ego,
            costmap: full_patch(&self.cfg.geometry, self.sent.as_deref().unwrap_or(&self.levels)),
        }
    }

    /// Sense, decide, and advance the plant unless paused.
    pub fn tick(&mut self) -> ServerState {
        if !self.paused {
            let scan = sensor_update_in_place(&mut self.grid, &self.pose, &self.obstacles, &self.cfg.sensor);
            if scan.changed > 0 {
                self.reinflate();
            }
        }
        let params = AssistParams { seed: self.cfg.assist.seed ^ self.seq.wrapping_mul(0x9E37_79B9_7F4A_7C15), ..self.cfg.assist };
        let decision = assist_step(
            self.pose,
            &self.joystick,
            &self.costmap,
            self.radii.r0,
            &params,
            &self.cfg.gains,
            self.cfg.form,
            &self.cfg.limits,
        );
        if !self.paused {
            self.pose = step_true(&mut self.sim, decision.command, &self.cfg.disturbance, self.cfg.limits.dt);
            self.clock += self.cfg.limits.dt;
            let touching = self.obstacles.distance(self.pose.position()) < self.cfg.r_ego;
            if touching && !self.in_contact {
                self.contacts += 1;
            }
            self.in_contact = touching;
        }
        self.seq += 1;
        let patch = diff_patch(&self.cfg.geometry, self.sent.as_deref(), &self.levels);
        self.sent = Some(self.levels.clone());
        let traj = |p: &[Pose]| p.iter().map(|s| [s.x, s.y, s.theta]).collect::<Vec<_>>();
        let state = ServerState {
            version: PROTOCOL_VERSION,
            seq: self.seq,
            clock: self.clock,
            paused: self.paused,
            pose: self.pose,
            command: decision.command,
            joystick: VelocityCmd::new(self.joystick.v, self.joystick.omega),
            mode: Mode::of(decision.mode, decision.emergency_stop),
            joystick_trajectory: traj(&decision.projected),
            plan: decision.plan.as_ref().map(|p| traj(&p.states)).unwrap_or_default(),
            radii: self.radii,
            epsilon: self.epsilon,
            buffer_cells: self.costmap.buffer_cells,
            costs: Costs {
                joystick: decision.joystick_cost,
                plan: decision.plan.as_ref().map(|p| p.total_cost),
                lethal: self.lethal,
            },
            acks: self.acks.iter().map(|(&client_id, &seq)| Ack { client_id, seq }).collect(),
            contacts: self.contacts,
            costmap_patch: patch,
        };
        self.last = Some(decision);
        state
    }

    /// Current pose.
    pub fn pose(&self) -> Pose {
        self.pose
    }

    /// Current cost map.
    pub fn costmap(&self) -> &DiscrepancyCostMap {
        &self.costmap
    }

    /// Latest decision.
    pub fn last_decision(&self) -> Option<&AssistDecision> {
        self.last.as_ref()
    }

    /// Latest tick number.
    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Contacts so far.
    pub fn contacts(&self) -> usize {
        self.contacts
    }

    /// Current tube radii.
    pub fn radii(&self) -> TubeRadii {
        self.radii
    }
}

fn to_json(msg: &ServerMessage) -> Arc<str> {
    serde_json::to_string(msg).expect("server message serialises").into()
}

enum Inbound {
    Join { client_id: u64, errors: mpsc::UnboundedSender<Arc<str>>, reply: oneshot::Sender<(Arc<str>, broadcast::Receiver<Arc<str>>)> },
    Command { client_id: u64, msg: ClientMessage },
    Leave { client_id: u64 },
}

/// Cloneable handle used by sessions.
#[derive(Clone)]
pub struct ServiceHandle {
    inbound: mpsc::UnboundedSender<Inbound>,
    next_id: Arc<AtomicU64>,
}

fn control_loop(
    mut world: AssistWorld,
    mut inbound: mpsc::UnboundedReceiver<Inbound>,
    states: broadcast::Sender<Arc<str>>,
    shutdown: watch::Receiver<bool>,
) {
    let period = Duration::from_secs_f64(1.0 / world.cfg.tick_hz);
    let mut errors: BTreeMap<u64, mpsc::UnboundedSender<Arc<str>>> = BTreeMap::new();
    let mut next = Instant::now();
    while !*shutdown.borrow() {
        loop {
            match inbound.try_recv() {
                Ok(Inbound::Join { client_id, errors: tx, reply }) => {
                    errors.insert(client_id, tx);
                    let hello = to_json(&ServerMessage::Hello(world.hello(client_id)));
                    let _ = reply.send((hello, states.subscribe()));
                }
                Ok(Inbound::Command { client_id, msg }) => {
                    if let Err(message) = world.apply(client_id, &msg) {
                        let frame = ErrorFrame { version: PROTOCOL_VERSION, seq: world.seq, rejected: Some(msg.seq), message };
                        if let Some(tx) = errors.get(&client_id) {
                            let _ = tx.send(to_json(&ServerMessage::Error(frame)));
                        }
                    }
                }
                Ok(Inbound::Leave { client_id }) => {
                    errors.remove(&client_id);
                    world.leave(client_id);
                }
                Err(mpsc::error::TryRecvError::Empty) => break,
                Err(mpsc::error::TryRecvError::Disconnected) => return,
            }
        }
        let state = world.tick();
        let _ = states.send(to_json(&ServerMessage::State(state)));
        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
}

async fn ws_handler(ws: WebSocketUpgrade, State(handle): State<ServiceHandle>) -> Response {
    ws.on_upgrade(move |socket| session(socket, handle))
}

async fn session(socket: WebSocket, handle: ServiceHandle) {
    let client_id = handle.next_id.fetch_add(1, Ordering::Relaxed);
    let (err_tx, mut err_rx) = mpsc::unbounded_channel();
    let (reply_tx, reply_rx) = oneshot::channel();
    if handle.inbound.send(Inbound::Join { client_id, errors: err_tx, reply: reply_tx }).is_err() {
        return;
    }
    let Ok((hello, mut states)) = reply_rx.await else { return };
    let (mut sink, mut stream) = socket.split();
    if sink.send(Message::Text(hello.as_ref().into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            state = states.recv() => match state {
                Ok(text) => {
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => tracing::warn!(client_id, n, "session lagged"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(text) = err_rx.recv() => {
                if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                    break;
                }
            }
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => match parse_client(text.as_str()) {
                    Ok(msg) => {
                        if handle.inbound.send(Inbound::Command { client_id, msg }).is_err() {
                            break;
                        }
                    }
                    Err((rejected, message)) => {
                        let frame = ErrorFrame { version: PROTOCOL_VERSION, seq: 0, rejected, message };
                        let text = to_json(&ServerMessage::Error(frame));
                        if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                            break;
                        }
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    let frame = ErrorFrame { version: PROTOCOL_VERSION, seq: 0, rejected: None, message: "binary frames are not supported".into() };
                    let text = to_json(&ServerMessage::Error(frame));
                    if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = handle.inbound.send(Inbound::Leave { client_id });
}

/// Running service.
pub struct Service {
    /// Bound address.
    pub addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    server: tokio::task::JoinHandle<std::io::Result<()>>,
    control: tokio::task::JoinHandle<()>,
}

impl Service {
    /// Start the control loop and accept sessions on `/ws`.
    pub fn start(world: AssistWorld, listener: TcpListener) -> Result<Service, LabError> {
        let addr = listener.local_addr()?;
        let (in_tx, in_rx) = mpsc::unbounded_channel();
        let (state_tx, _) = broadcast::channel(64);
        let (stop_tx, stop_rx) = watch::channel(false);
        let control = {
            let states = state_tx.clone();
            let stop = stop_rx.clone();
            tokio::task::spawn_blocking(move || control_loop(world, in_rx, states, stop))
        };
        let handle = ServiceHandle { inbound: in_tx, next_id: Arc::new(AtomicU64::new(1)) };
        let app = Router::new()
            .route("/ws", get(ws_handler))
            .route("/health", get(|| async { "ok" }))
            .with_state(handle);
        let mut stop = stop_rx;
        let server = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = stop.wait_for(|s| *s).await;
                })
                .await
        });
        Ok(Service { addr, shutdown: stop_tx, server, control })
    }

    /// Stop accepting, close sessions and end the control loop.
    pub async fn stop(self) -> Result<(), LabError> {
        let _ = self.shutdown.send(true);
        self.server.await.map_err(|e| LabError::Service(e.to_string()))??;
        self.control.await.map_err(|e| LabError::Service(e.to_string()))?;
        Ok(())
    }
}

/// Bind `addr`, serve until `shutdown` resolves, then stop.
pub async fn serve(
    world: AssistWorld,
    addr: &str,
    shutdown: impl std::future::Future<Output = ()>,
) -> Result<(), LabError> {
    let listener = TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            LabError::Service(format!("address {addr} is already in use"))
        } else {
            LabError::Io(e)
        }
    })?;
    let service = Service::start(world, listener)?;
    tracing::info!(addr = %service.addr, "assist service listening on /ws");
    shutdown.await;
    tracing::info!("shutting down");
    service.stop().await
}

#[cfg(test)]
mod tests {
    use super::*;
    use navlab_core::gridmap::{GridGeometry, Obstacle};
    use navlab_core::sim::DisturbanceModel;

    pub(crate) fn small_world(obstacles: Vec<Obstacle>) -> AssistWorld {
        let samples: Vec<DiscrepancySample> = (0..2000)
            .map(|i| DiscrepancySample { matched_norm: 0.3 * i as f64 / 2000.0, unmatched_mag: 0.01 * i as f64 / 2000.0, matched: [0.0, 0.0] })
            .collect();
        let cfg = ServeConfig {
            obstacles,
            disturbance: DisturbanceModel::identity(),
            geometry: GridGeometry { width: 120, height: 120, resolution: 0.05, origin: [0.0, 0.0] },
            assist: AssistParams { sample_count: 400, ..AssistParams::default() },
            ..ServeConfig::default()
        };
        AssistWorld::new(cfg, samples).unwrap()
    }

    fn msg(seq: u64, command: ClientCommand) -> ClientMessage {
        ClientMessage { version: PROTOCOL_VERSION, seq, command }
    }

    #[test]
    fn zero_joystick_keeps_pose() {
        let mut w = small_world(vec![]);
        w.apply(1, &msg(1, ClientCommand::Joystick { v: 0.0, omega: 0.0 })).unwrap();
        let a = w.tick();
        let b = w.tick();
        assert_eq!(a.pose, w.cfg.start);
        assert_eq!(b.pose, w.cfg.start);
        assert_eq!(b.mode, Mode::PassThrough);
        assert_eq!(b.acks, vec![Ack { client_id: 1, seq: 1 }]);
        assert!(b.seq > a.seq);
        assert!(a.costmap_patch.as_ref().unwrap().full);
    }

    #[test]
    fn epsilon_changes_buffer() {
        let mut w = small_world(vec![Obstacle::centered_box([1.0, 0.0], [0.2, 0.2])]);
        w.tick();
        let before = w.costmap().buffer_cells;
        w.apply(1, &msg(2, ClientCommand::SetEpsilon { epsilon: 0.001 })).unwrap();
        let s = w.tick();
        assert!(s.buffer_cells >= before);
        assert_eq!(s.epsilon, 0.001);
        assert!(w.apply(1, &msg(3, ClientCommand::SetEpsilon { epsilon: 1.5 })).is_err());
        // Too few samples for this level: the quantile is infinite.
        assert!(w.apply(1, &msg(4, ClientCommand::SetEpsilon { epsilon: 1e-4 })).is_err());
        let s = w.tick();
        assert_eq!(s.acks, vec![Ack { client_id: 1, seq: 2 }]);
        assert_eq!(s.epsilon, 0.001);
    }

    #[test]
    fn pause_and_reset() {
        let mut w = small_world(vec![]);
        w.apply(1, &msg(1, ClientCommand::Joystick { v: 1.0, omega: 0.0 })).unwrap();
        w.tick();
        let moved = w.pose();
        assert!(moved.x > 0.0);
        w.apply(1, &msg(2, ClientCommand::Pause { paused: true })).unwrap();
        let s = w.tick();
        assert!(s.paused);
        assert_eq!(s.pose, moved);
        w.apply(1, &msg(3, ClientCommand::Reset)).unwrap();
        w.apply(1, &msg(4, ClientCommand::Pause { paused: false })).unwrap();
        let s = w.tick();
        assert_eq!(s.joystick, VelocityCmd::new(0.0, 0.0));
        assert_eq!(s.pose, w.cfg.start);
    }
}
