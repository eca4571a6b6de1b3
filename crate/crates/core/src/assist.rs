//! Driver assist: score the projected joystick trajectory on the cost map and
//! override it with the planner when it is unsafe.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::controller::{compose_command, ErrorForm, Gains};
use crate::dynamics::{polar_error, step_nominal, Limits, Pose, VelocityCmd};
use crate::gridmap::DiscrepancyCostMap;
use crate::mppi::{
    plan_mixture, CostWeights, MapSchedule, MppiParams, PlanRequest, PlanResult, SampleGroup, Weighting,
};

/// Joystick sample.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JoystickCmd {
    /// Linear velocity (m/s).
    pub v: f64,
    /// Angular velocity (rad/s).
    pub omega: f64,
    /// Client timestamp (s).
    #[cfg_attr(feature = "serde", serde(default))]
    pub timestamp: f64,
}

impl JoystickCmd {
    /// Command without a timestamp.
    pub fn new(v: f64, omega: f64) -> Self {
        JoystickCmd { v, omega, timestamp: 0.0 }
    }

    /// As a velocity command clamped to `limits`.
    pub fn clamped(&self, limits: &Limits) -> VelocityCmd {
        VelocityCmd::new(self.v, self.omega).clamp(limits)
    }
}

/// Whether the driver's command was forwarded.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssistMode {
    /// The clamped joystick command is applied.
    #[default]
    PassThrough,
    /// The planner output is applied.
    Override,
}

/// Settings of the assist loop.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssistParams {
    /// Projection horizon in steps.
    pub horizon: usize,
    /// Samples of the override planner.
    pub sample_count: usize,
    /// Inverse temperature of the override planner.
    pub lambda: f64,
    /// Per-channel perturbation standard deviations.
    pub perturbation_std: [f64; 2],
    /// Share of samples drawn around the joystick sequence.
    pub joystick_share: f64,
    /// Uniform weight `α_joy` of the pass-through check.
    pub alpha_joy: f64,
    /// Weighting of map costs inside the override planner.
    pub override_schedule: MapSchedule,
    /// Penalty on initial errors beyond `r0`.
    pub alpha_iss: f64,
    /// Resampling attempts.
    pub max_attempts: usize,
    /// Weight exponent form.
    pub weighting: Weighting,
    /// Planner seed.
    pub seed: u64,
}

impl Default for AssistParams {
    fn default() -> Self {
        AssistParams {
            horizon: 30,
            sample_count: 5000,
            lambda: 0.05,
            perturbation_std: [0.25, 0.25],
            joystick_share: 0.8,
            alpha_joy: 1.0,
            override_schedule: MapSchedule::InverseSquare,
            alpha_iss: 10_000.0,
            max_attempts: 5,
            weighting: Weighting::Printed,
            seed: 0,
        }
    }
}

impl AssistParams {
    /// Joystick-warm and turn-in-place sample counts.
    pub fn allocation(&self) -> (usize, usize) {
        let joy = libm::floor(self.joystick_share.clamp(0.0, 1.0) * self.sample_count as f64) as usize;
        (joy, self.sample_count - joy)
    }
}

/// Output of [`assist_step`].
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, PartialEq)]
pub struct AssistDecision {
    /// Applied mode.
    pub mode: AssistMode,
    /// Command to apply.
    pub command: VelocityCmd,
    /// `α_joy Σ_k cost(p_k)` of the projected joystick trajectory.
    pub joystick_cost: f64,
    /// Projected joystick trajectory.
    pub projected: Vec<Pose>,
    /// Override plan, when one was computed.
    pub plan: Option<PlanResult>,
    /// Set when the override plan was not certified and the vehicle is stopped.
    pub emergency_stop: bool,
}

/// Zero-order-hold Euler rollout of the joystick for `horizon` steps.
pub fn project_joystick(pose: Pose, joy: &JoystickCmd, horizon: usize, dt: f64) -> Vec<Pose> {
    let u = VelocityCmd::new(joy.v, joy.omega);
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(pose);
    let mut p = pose;
    for _ in 0..horizon {
        p = step_nominal(p, u, dt);
        out.push(p);
    }
    out
}

/// `Σ_{k=1..n_h} cost(p_k) / k²`.
pub fn joystick_cost(traj: &[Pose], costmap: &DiscrepancyCostMap) -> f64 {
    scheduled_cost(traj, costmap, MapSchedule::InverseSquare, 1.0)
}

/// `α Σ_{k=1..n_h} w_k cost(p_k)` for the given schedule.
pub fn scheduled_cost(traj: &[Pose], costmap: &DiscrepancyCostMap, schedule: MapSchedule, alpha: f64) -> f64 {
    traj.iter()
        .enumerate()
        .skip(1)
        .map(|(k, p)| alpha * schedule.weight(k) * costmap.query(p.position()))
        .sum()
}

/// One assist cycle.
///
/// Pass-through when the uniformly weighted joystick cost is below the lethal
/// threshold; otherwise plan around the joystick sequence and the turn-in-place
/// primitive `[0, ω_joy]` and apply the composed first input. An uncertified plan
/// stops the vehicle while keeping the requested rotation.
#[allow(clippy::too_many_arguments)]
pub fn assist_step(
    state: Pose,
    joy: &JoystickCmd,
    costmap: &DiscrepancyCostMap,
    r0: f64,
    params: &AssistParams,
    gains: &Gains,
    form: ErrorForm,
    limits: &Limits,
) -> AssistDecision {
    let dt = limits.dt;
    let projected = project_joystick(state, joy, params.horizon, dt);
    let threshold = costmap.lethal;
    let cost = scheduled_cost(&projected, costmap, MapSchedule::Uniform, params.alpha_joy);
    let joy_u = joy.clamped(limits);
    if cost < threshold {
        return AssistDecision {
            mode: AssistMode::PassThrough,
            command: joy_u,
            joystick_cost: cost,
            projected,
            plan: None,
            emergency_stop: false,
        };
    }
    let (n_joy, n_tip) = params.allocation();
    let var = [params.perturbation_std[0].powi(2), params.perturbation_std[1].powi(2)];
    let tip = VelocityCmd::new(0.0, joy_u.omega);
    let groups = [
        SampleGroup { nominal: vec![joy_u; params.horizon], count: n_joy, sigma: var },
        SampleGroup { nominal: vec![tip; params.horizon], count: n_tip, sigma: var },
    ];
    let mppi = MppiParams {
        horizon: params.horizon,
        dt,
        sample_count: params.sample_count,
        sigma: var,
        lambda: params.lambda,
        seed: params.seed,
        weighting: params.weighting,
        max_attempts: params.max_attempts,
        include_nominal: true,
    };
    let weights = CostWeights {
        q_stage: [0.0, 0.0],
        q_terminal: [0.0, 0.0],
        r_input: [0.0, 0.0],
        alpha_iss: params.alpha_iss,
        cap: threshold,
        map_schedule: params.override_schedule,
    };
    let reference: Vec<[f64; 2]> = projected.iter().map(|p| p.position()).collect();
    let request = PlanRequest { state, reference: &reference, costmap, r0 };
    let result = plan_mixture(&request, &groups, &mppi, &weights, limits);
    let (command, emergency_stop) = if result.certified() {
        let e = polar_error(&state, &result.states[1]);
        (compose_command(result.inputs[0], &e, gains, form, limits), false)
    } else {
        (tip, true)
    };
    AssistDecision {
        mode: AssistMode::Override,
        command,
        joystick_cost: cost,
        projected,
        plan: Some(result),
        emergency_stop,
    }
}
