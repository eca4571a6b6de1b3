//! Deterministic closed-loop simulator.
//!
//! The true plant is the unicycle driven through a parametric actuator chain
//! (dead time, first-order lag, slip gains, additive noise) plus a body-frame lateral
//! skid. It is integrated with five substeps per control period.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use libm::{cos, exp, round, sin, sqrt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::conformal::TrainingTuple;
use crate::controller::{
    compose_command, kappa_reduced, tube_radii, DiscrepancyBounds, ErrorForm, Gains, TubeParams,
    TubeRadii,
};
use crate::dynamics::{polar_error, propagate_nominal, wrap_angle, Limits, Pose, ReferencePoint, VelocityCmd};
use crate::error::Error;
use crate::gridmap::{
    buffer_cells, inflate, sensor_update_in_place, DiscrepancyCostMap, GridGeometry, InflationConfig,
    Obstacle, ObstacleSet, OccupancyGrid, SensorModel,
};
use crate::mppi::{
    flat_warm_start, plan, reference_positions, shift_warm_start, CostWeights, MppiParams, PlanRequest,
    PlanResult,
};
use crate::path::{Circle, Figure8, Line, ReferencePath, Stationary};

/// Substeps of the true-plant integration per control period.
pub const TRUE_SUBSTEPS: usize = 5;

/// Parametric model of the gap between the nominal unicycle and the plant.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceModel {
    /// Factor on the commanded linear velocity.
    pub slip_gain: f64,
    /// Factor on the commanded angular velocity.
    pub omega_gain: f64,
    /// Dead time (s), rounded to whole control steps.
    pub input_delay: f64,
    /// First-order actuator time constant (s); 0 disables the lag.
    pub lag_tau: f64,
    /// Body-frame lateral velocity bias (m/s).
    pub lateral_skid: f64,
    /// Standard deviations of additive white noise on `(v, ω)`.
    pub noise_std: [f64; 2],
    /// Noise seed.
    pub seed: u64,
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        Self::identity()
    }
}

impl DisturbanceModel {
    /// No discrepancy at all.
    pub fn identity() -> Self {
        DisturbanceModel {
            slip_gain: 1.0,
            omega_gain: 1.0,
            input_delay: 0.0,
            lag_tau: 0.0,
            lateral_skid: 0.0,
            noise_std: [0.0, 0.0],
            seed: 0,
        }
    }

    /// Slip, two-step delay and skid used by the closed-loop safety experiment.
    pub fn acceptance() -> Self {
        DisturbanceModel {
            slip_gain: 0.85,
            input_delay: 0.1,
            lateral_skid: 0.05,
            noise_std: [0.01, 0.01],
            ..Self::identity()
        }
    }

    /// Named preset: `identity`, `acceptance` or `a` to `d`.
    pub fn preset(name: &str) -> Option<Self> {
        let base = Self::identity();
        Some(match name {
            "identity" => base,
            "acceptance" => Self::acceptance(),
            "a" | "A" => DisturbanceModel {
                slip_gain: 0.8,
                omega_gain: 0.9,
                input_delay: 0.05,
                lag_tau: 0.1,
                lateral_skid: 0.05,
                noise_std: [0.08, 0.1],
                ..base
            },
            "b" | "B" => DisturbanceModel {
                slip_gain: 0.75,
                omega_gain: 0.85,
                input_delay: 0.1,
                lag_tau: 0.1,
                lateral_skid: 0.03,
                noise_std: [0.08, 0.12],
                ..base
            },
            "c" | "C" => DisturbanceModel {
                slip_gain: 0.8,
                omega_gain: 0.95,
                input_delay: 0.05,
                lag_tau: 0.15,
                lateral_skid: 0.04,
                noise_std: [0.08, 0.1],
                ..base
            },
            "d" | "D" => DisturbanceModel {
                slip_gain: 0.75,
                omega_gain: 0.9,
                input_delay: 0.1,
                lag_tau: 0.15,
                lateral_skid: 0.05,
                noise_std: [0.1, 0.12],
                ..base
            },
            _ => return None,
        })
    }

    /// Check the parameter ranges.
    pub fn validate(&self) -> Result<(), Error> {
        let gain_ok = |g: f64| g > 0.0 && g <= 2.0;
        if !gain_ok(self.slip_gain) || !gain_ok(self.omega_gain) {
            return Err(Error::InvalidParameter("gains must lie in (0, 2]"));
        }
        if !(self.input_delay >= 0.0 && self.lag_tau >= 0.0) {
            return Err(Error::InvalidParameter("delay and lag must be nonnegative"));
        }
        if !(self.noise_std[0] >= 0.0 && self.noise_std[1] >= 0.0 && self.lateral_skid.is_finite()) {
            return Err(Error::InvalidParameter("noise must be nonnegative"));
        }
        Ok(())
    }

    /// Dead time in control steps.
    pub fn delay_steps(&self, dt: f64) -> usize {
        round(self.input_delay / dt).max(0.0) as usize
    }
}

/// Plant state including the hidden actuator state.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// Pose.
    pub pose: Pose,
    /// Simulation clock (s).
    pub clock: f64,
    /// Commands waiting out the dead time, oldest first.
    pub queue: VecDeque<VelocityCmd>,
    /// Output of the actuator lag.
    pub lagged: VelocityCmd,
    /// Disturbance `(true − nominal)/Δt` of the last step.
    pub last_disturbance: [f64; 3],
    rng: ChaCha8Rng,
}

impl SimState {
    /// Plant at `pose` whose actuators already settled on `cmd`.
    pub fn new(pose: Pose, cmd: VelocityCmd, model: &DisturbanceModel, dt: f64) -> Self {
        let n = model.delay_steps(dt);
        SimState {
            pose,
            clock: 0.0,
            queue: core::iter::repeat_n(cmd, n).collect(),
            lagged: cmd,
            last_disturbance: [0.0; 3],
            rng: ChaCha8Rng::seed_from_u64(model.seed),
        }
    }

    /// Plant at rest.
    pub fn at_rest(pose: Pose, model: &DisturbanceModel, dt: f64) -> Self {
        Self::new(pose, VelocityCmd::default(), model, dt)
    }

    /// Replace the noise stream seed.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

/// Advance the plant by one control period and record the realised disturbance.
pub fn step_true(state: &mut SimState, cmd: VelocityCmd, model: &DisturbanceModel, dt: f64) -> Pose {
    let start = state.pose;
    state.queue.push_back(cmd);
    let delayed = state.queue.pop_front().unwrap_or(cmd);
    let h = dt / TRUE_SUBSTEPS as f64;
    let blend = if model.lag_tau > 0.0 { 1.0 - exp(-h / model.lag_tau) } else { 1.0 };
    let noise = if model.noise_std[0] > 0.0 || model.noise_std[1] > 0.0 {
        let a: f64 = StandardNormal.sample(&mut state.rng);
        let b: f64 = StandardNormal.sample(&mut state.rng);
        [model.noise_std[0] * a, model.noise_std[1] * b]
    } else {
        [0.0, 0.0]
    };
    let mut p = start;
    for _ in 0..TRUE_SUBSTEPS {
        state.lagged.v += blend * (delayed.v - state.lagged.v);
        state.lagged.omega += blend * (delayed.omega - state.lagged.omega);
        let v = model.slip_gain * state.lagged.v + noise[0];
        let w = model.omega_gain * state.lagged.omega + noise[1];
        let (s, c) = (sin(p.theta), cos(p.theta));
        let skid = model.lateral_skid;
        p = Pose {
            x: p.x + (v * c - skid * s) * h,
            y: p.y + (v * s + skid * c) * h,
            theta: wrap_angle(p.theta + w * h),
        };
    }
    let nominal = propagate_nominal(start, cmd, dt, TRUE_SUBSTEPS);
    state.last_disturbance = [
        (p.x - nominal.x) / dt,
        (p.y - nominal.y) / dt,
        wrap_angle(p.theta - nominal.theta) / dt,
    ];
    state.pose = p;
    state.clock += dt;
    p
}

/// Reference path choices for scenario files.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PathSpec {
    /// See [`Figure8`].
    Figure8(Figure8),
    /// See [`Circle`].
    Circle(Circle),
    /// See [`Line`].
    Line(Line),
    /// See [`Stationary`].
    Stationary(Stationary),
}

impl PathSpec {
    /// Lap time of periodic paths.
    pub fn period(&self) -> Option<f64> {
        match self {
            PathSpec::Figure8(f) => Some(f.lap_time),
            PathSpec::Circle(c) if c.rate != 0.0 => Some(2.0 * core::f64::consts::PI / c.rate.abs()),
            _ => None,
        }
    }
}

impl ReferencePath for PathSpec {
    fn sample(&self, t: f64) -> ReferencePoint {
        match self {
            PathSpec::Figure8(p) => p.sample(t),
            PathSpec::Circle(p) => p.sample(t),
            PathSpec::Line(p) => p.sample(t),
            PathSpec::Stationary(p) => p.sample(t),
        }
    }
}

/// Lap times of the training runs (s).
pub const TRAINING_LAP_TIMES: [f64; 4] = [20.0, 30.0, 40.0, 50.0];

/// Track the standard figure-8 for each lap time with `u = u_d + κ̂(e)` and emit one
/// tuple per control step.
///
/// The waypoint of the step starting at `t` is the flat pose at `t + Δt`.
pub fn generate_training(
    model: &DisturbanceModel,
    lap_times: &[f64],
    laps: usize,
    dt: f64,
) -> Vec<TrainingTuple> {
    generate_training_with(model, lap_times, laps, dt, &Gains::default(), &Limits::default())
}

/// [`generate_training`] with explicit gains and limits.
pub fn generate_training_with(
    model: &DisturbanceModel,
    lap_times: &[f64],
    laps: usize,
    dt: f64,
    gains: &Gains,
    limits: &Limits,
) -> Vec<TrainingTuple> {
    let mut out = Vec::new();
    for (run, &lap) in lap_times.iter().enumerate() {
        let path = Figure8::standard(lap);
        let steps = round(lap * laps as f64 / dt) as usize;
        let (pose0, u0) = path.flat(0.0).unwrap_or_default();
        let mut state = SimState::new(pose0, u0, model, dt);
        state.reseed(model.seed.wrapping_add(run as u64));
        for i in 0..steps {
            let t = i as f64 * dt;
            let Some((target, _)) = path.flat(t + dt) else { continue };
            let u_d = path.flat(t).map(|(_, u)| u).unwrap_or_default();
            let prev = state.pose;
            let e = polar_error(&prev, &target);
            let cmd = (u_d + kappa_reduced(&e, gains, limits.rho_dz)).clamp(limits);
            let measured = step_true(&mut state, cmd, model, dt);
            out.push(TrainingTuple {
                time: t + dt,
                prev_state: prev,
                measured_state: measured,
                optimal_state: target,
                applied_input: cmd,
                optimal_input: u_d,
                dt,
            });
        }
    }
    out
}

/// Full description of one closed-loop run.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Reference path.
    pub path: PathSpec,
    /// Laps of a periodic path.
    pub laps: f64,
    /// Run length (s); overrides `laps` when set.
    pub duration: Option<f64>,
    /// Ground-truth obstacles.
    pub obstacles: Vec<Obstacle>,
    /// Plant discrepancy.
    pub disturbance: DisturbanceModel,
    /// Calibrated bounds; `None` means zero.
    pub bounds: Option<DiscrepancyBounds>,
    /// Force the buffer size `N_ε`.
    pub buffer_override: Option<usize>,
    /// Vehicle circumscribed radius (m).
    pub r_ego: f64,
    /// Map geometry.
    pub geometry: GridGeometry,
    /// Range sensor.
    pub sensor: SensorModel,
    /// Inflation settings.
    pub inflation: InflationConfig,
    /// Control steps between map updates.
    pub map_period: usize,
    /// Planner sampling.
    pub mppi: MppiParams,
    /// Planner costs.
    pub weights: CostWeights,
    /// Ancillary gains.
    pub gains: Gains,
    /// Ancillary error model.
    pub form: ErrorForm,
    /// Actuator limits and control period.
    pub limits: Limits,
    /// Tube coefficients.
    pub tube: TubeParams,
    /// Stop at the first contact.
    pub abort_on_contact: bool,
    /// Seed mixed into the planner and plant noise.
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            path: PathSpec::Figure8(Figure8::standard(30.0)),
            laps: 1.0,
            duration: None,
            obstacles: Vec::new(),
            disturbance: DisturbanceModel::identity(),
            bounds: None,
            buffer_override: None,
            r_ego: 0.39,
            geometry: GridGeometry::default(),
            sensor: SensorModel::default(),
            inflation: InflationConfig::default(),
            map_period: 10,
            mppi: MppiParams::default(),
            weights: CostWeights::default(),
            gains: Gains::default(),
            form: ErrorForm::Reduced,
            limits: Limits::default(),
            tube: TubeParams::default(),
            abort_on_contact: false,
            seed: 0,
        }
    }
}

/// Three 0.3 m boxes placed on the standard figure-8.
pub fn blocking_boxes(lap_time: f64) -> Vec<Obstacle> {
    let path = Figure8::standard(lap_time);
    [0.1, 0.4, 0.65]
        .iter()
        .map(|f| Obstacle::centered_box(path.sample(f * lap_time).position, [0.3, 0.3]))
        .collect()
}

impl Scenario {
    /// Ten laps of the 30 s figure-8 blocked by [`blocking_boxes`] under the
    /// acceptance disturbance.
    pub fn blocked_figure8(bounds: Option<DiscrepancyBounds>, seed: u64) -> Self {
        Scenario {
            laps: 10.0,
            obstacles: blocking_boxes(30.0),
            disturbance: DisturbanceModel::acceptance(),
            bounds,
            abort_on_contact: true,
            seed,
            ..Scenario::default()
        }
    }

    /// Run length in seconds.
    pub fn run_time(&self) -> Result<f64, Error> {
        match (self.duration, self.path.period()) {
            (Some(d), _) => Ok(d),
            (None, Some(p)) => Ok(p * self.laps),
            (None, None) => Err(Error::InvalidParameter("aperiodic paths need a duration")),
        }
    }

    /// Check every nested parameter set.
    pub fn validate(&self) -> Result<(), Error> {
        self.disturbance.validate()?;
        self.gains.validate()?;
        self.limits.validate()?;
        if self.map_period == 0 || self.mppi.horizon == 0 || self.mppi.sample_count == 0 {
            return Err(Error::InvalidParameter("periods and counts must be positive"));
        }
        if !(self.mppi.lambda > 0.0 && self.mppi.dt > 0.0 && self.r_ego >= 0.0) {
            return Err(Error::InvalidParameter("lambda, dt and r_ego must be positive"));
        }
        if self.geometry.is_empty() || !(self.geometry.resolution > 0.0) {
            return Err(Error::InvalidParameter("map geometry must be nonempty"));
        }
        self.run_time().map(|_| ())
    }
}

/// Kind of a logged event.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    /// The vehicle disc touched a true obstacle.
    Contact {
        /// Center distance to the obstacle (m).
        clearance: f64,
    },
    /// The vehicle center entered a lethal cell.
    LethalEntry,
    /// The planner resampled.
    Retry {
        /// Extra attempts used.
        count: usize,
    },
    /// The plan was not certified.
    Uncertified,
    /// The cost map was rebuilt.
    MapUpdate {
        /// Cells changed by the scan.
        changed: usize,
    },
}

/// A timestamped event.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Time (s).
    pub time: f64,
    /// What happened.
    pub kind: EventKind,
}

/// One control step of a run.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Time at the start of the step (s).
    pub clock: f64,
    /// Pose at the start of the step.
    pub pose: Pose,
    /// Applied command.
    pub command: VelocityCmd,
    /// Waypoint tracked over the step.
    pub optimal_state: Pose,
    /// Reference position at `clock`.
    pub reference: [f64; 2],
    /// Planner collision flag.
    pub collision_free: bool,
    /// Planner initial-error flag.
    pub initial_error_ok: bool,
    /// Plan cost.
    pub plan_cost: f64,
    /// Distance to the nearest true obstacle, if any.
    pub clearance: Option<f64>,
}

/// Complete record of a run.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    /// Control period (s).
    pub dt: f64,
    /// Tube radii used for inflation.
    pub radii: TubeRadii,
    /// Buffer size `N_ε`.
    pub buffer_cells: usize,
    /// Per-step records.
    pub steps: Vec<StepRecord>,
    /// Events in time order.
    pub events: Vec<Event>,
    /// Set when the run stopped at a contact.
    pub aborted: bool,
}

/// Data handed to an observer after each planning cycle.
#[derive(Debug, Clone, Copy)]
pub struct CycleView<'a> {
    /// Step index.
    pub step: usize,
    /// Time (s).
    pub time: f64,
    /// Measured pose.
    pub pose: Pose,
    /// The plan.
    pub plan: &'a PlanResult,
    /// Occupancy grid the cost map was built from.
    pub grid: &'a OccupancyGrid,
    /// Cost map used by the planner.
    pub costmap: &'a DiscrepancyCostMap,
    /// Tube radii.
    pub radii: TubeRadii,
    /// Vehicle radius.
    pub r_ego: f64,
}

/// Closed loop: sense → inflate → plan → compose → plant.
pub fn run_tracking_experiment(scenario: &Scenario) -> Result<RunLog, Error> {
    run_tracking_experiment_observed(scenario, |_| {})
}

fn mix(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// [`run_tracking_experiment`] calling `observer` after every plan.
pub fn run_tracking_experiment_observed(
    scenario: &Scenario,
    mut observer: impl FnMut(&CycleView<'_>),
) -> Result<RunLog, Error> {
    scenario.validate()?;
    let dt = scenario.limits.dt;
    let mppi = MppiParams { dt, ..scenario.mppi };
    let weights = scenario.weights.resolved(&mppi, &scenario.limits);
    let bounds = scenario.bounds.unwrap_or(DiscrepancyBounds::new(0.0, 0.0, 0.0, 0));
    let radii = tube_radii(&bounds, &TubeParams { dt, ..scenario.tube })?;
    let n_eps = scenario
        .buffer_override
        .unwrap_or_else(|| buffer_cells(radii.r_dt, scenario.r_ego, scenario.geometry.resolution));
    let obstacles = ObstacleSet::new(scenario.obstacles.clone());
    let path = scenario.path;
    let steps = round(scenario.run_time()? / dt) as usize;

    let (pose0, u0) = path.flat(0.0).unwrap_or((Pose::new(path.sample(0.0).position[0], path.sample(0.0).position[1], 0.0), VelocityCmd::default()));
    let mut model = scenario.disturbance;
    model.seed = mix(model.seed, scenario.seed);
    let mut plant = SimState::new(pose0, u0, &model, dt);
    let mut grid = OccupancyGrid::unknown(scenario.geometry);
    let mut costmap = inflate(&grid, n_eps, &scenario.inflation, weights.cap);
    let mut warm = flat_warm_start(&path, 0.0, mppi.horizon, dt);
    let mut log = RunLog { dt, radii, buffer_cells: n_eps, steps: Vec::with_capacity(steps), events: Vec::new(), aborted: false };

    for i in 0..steps {
        let t = i as f64 * dt;
        let pose = plant.pose;
        if i % scenario.map_period == 0 {
            let report = sensor_update_in_place(&mut grid, &pose, &obstacles, &scenario.sensor);
            if report.changed > 0 || i == 0 {
                costmap = inflate(&grid, n_eps, &scenario.inflation, weights.cap);
                log.events.push(Event { time: t, kind: EventKind::MapUpdate { changed: report.changed } });
            }
        }
        let reference = reference_positions(&path, t, mppi.horizon, dt);
        let request = PlanRequest { state: pose, reference: &reference, costmap: &costmap, r0: radii.r0 };
        let params = MppiParams { seed: mix(scenario.seed, i as u64 + 1), ..mppi };
        let result = plan(&request, &warm, &params, &weights, &scenario.limits);
        observer(&CycleView {
            step: i,
            time: t,
            pose,
            plan: &result,
            grid: &grid,
            costmap: &costmap,
            radii,
            r_ego: scenario.r_ego,
        });
        if result.retries > 0 {
            log.events.push(Event { time: t, kind: EventKind::Retry { count: result.retries } });
        }
        if !result.certified() {
            log.events.push(Event { time: t, kind: EventKind::Uncertified });
        }
        let target = result.states[1];
        let e = polar_error(&pose, &target);
        let command = compose_command(result.inputs[0], &e, &scenario.gains, scenario.form, &scenario.limits);
        let clearance = if obstacles.obstacles.is_empty() { None } else { Some(obstacles.distance(pose.position())) };
        log.steps.push(StepRecord {
            clock: t,
            pose,
            command,
            optimal_state: target,
            reference: reference[0],
            collision_free: result.collision_free,
            initial_error_ok: result.initial_error_ok,
            plan_cost: result.total_cost,
            clearance,
        });
        let next = step_true(&mut plant, command, &model, dt);
        let t_next = t + dt;
        if costmap.is_lethal(next.position()) && !costmap.is_lethal(pose.position()) {
            log.events.push(Event { time: t_next, kind: EventKind::LethalEntry });
        }
        let d = obstacles.distance(next.position());
        if d < scenario.r_ego {
            log.events.push(Event { time: t_next, kind: EventKind::Contact { clearance: d } });
            if scenario.abort_on_contact {
                log.aborted = true;
                break;
            }
        }
        let tail = path.sample(t_next + (mppi.horizon as f64 - 1.0) * dt);
        warm = shift_warm_start(&result.inputs, &tail);
    }
    Ok(log)
}

/// Aggregate statistics of a run.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunSummary {
    /// Logged steps.
    pub steps: usize,
    /// RMS distance to the reference (m).
    pub rms_error: f64,
    /// Largest distance to the reference (m).
    pub max_error: f64,
    /// Smallest center distance to a true obstacle (m).
    pub min_clearance: Option<f64>,
    /// Contact events (counted as entries into contact).
    pub contacts: usize,
    /// Lethal-cell entries.
    pub lethal_entries: usize,
    /// Mean plan cost.
    pub mean_plan_cost: f64,
    /// Total extra planning attempts.
    pub retries: usize,
    /// Steps whose plan was not certified.
    pub uncertified: usize,
    /// Whether the run stopped early.
    pub aborted: bool,
}

/// Summarise a run log.
pub fn metrics(log: &RunLog) -> RunSummary {
    let n = log.steps.len();
    let mut sq = 0.0;
    let mut max_error: f64 = 0.0;
    let mut cost = 0.0;
    let mut min_clearance: Option<f64> = None;
    for s in &log.steps {
        let d2 = (s.pose.x - s.reference[0]).powi(2) + (s.pose.y - s.reference[1]).powi(2);
        sq += d2;
        max_error = max_error.max(sqrt(d2));
        cost += s.plan_cost;
        if let Some(c) = s.clearance {
            min_clearance = Some(min_clearance.map_or(c, |m: f64| m.min(c)));
        }
    }
    let mut summary = RunSummary {
        steps: n,
        rms_error: if n > 0 { sqrt(sq / n as f64) } else { 0.0 },
        max_error,
        min_clearance,
        mean_plan_cost: if n > 0 { cost / n as f64 } else { 0.0 },
        aborted: log.aborted,
        ..RunSummary::default()
    };
    for e in &log.events {
        match e.kind {
            EventKind::Contact { clearance } => {
                summary.contacts += 1;
                summary.min_clearance = Some(summary.min_clearance.map_or(clearance, |m| m.min(clearance)));
            }
            EventKind::LethalEntry => summary.lethal_entries += 1,
            EventKind::Retry { count } => summary.retries += count,
            EventKind::Uncertified => summary.uncertified += 1,
            EventKind::MapUpdate { .. } => {}
        }
    }
    summary
}
