//! Sampling-based receding-horizon planner.
//!
//! Each cycle draws `N` Gaussian perturbation sequences `Δʲ` around a nominal input
//! sequence `U`, rolls them out through the clamped nominal model, scores them on the
//! cost map and aggregates
//!
//! ```text
//! wʲ ∝ exp(−Cʲ/λ − Σᵢ uᵢᵀ Σ⁻¹ (uᵢ + 2δᵢʲ)),      U* = U + Σⱼ wʲ Δʲ
//! ```
//!
//! with the normaliser evaluated in log space. Samples may come from several nominal
//! sequences (mixture warm starts); aggregation is then `Σⱼ wʲ (Uʲ + Δʲ)`.

use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, exp, log, sin, sqrt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::dynamics::{flat_reference, polar_error, Limits, Pose, ReferencePoint, VelocityCmd};
use crate::gridmap::DiscrepancyCostMap;
use crate::path::ReferencePath;

/// Form of the importance-weight exponent.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// `−C/λ − Σ uᵀΣ⁻¹(u + 2δ)`.
    #[default]
    Printed,
    /// `−C/λ − Σ uᵀΣ⁻¹δ`.
    Conventional,
}

/// Sampling parameters.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MppiParams {
    /// Horizon `n_h` in steps.
    pub horizon: usize,
    /// Step length (s).
    pub dt: f64,
    /// Number of sampled sequences.
    pub sample_count: usize,
    /// Diagonal of the perturbation covariance `Σ_u` (variances).
    pub sigma: [f64; 2],
    /// Inverse temperature `λ`.
    pub lambda: f64,
    /// Seed of the perturbation draw.
    pub seed: u64,
    /// Weight exponent form.
    pub weighting: Weighting,
    /// Planning attempts when the initial error exceeds `r0`.
    pub max_attempts: usize,
    /// Make the first sample of each group the unperturbed nominal sequence.
    pub include_nominal: bool,
}

impl Default for MppiParams {
    fn default() -> Self {
        MppiParams {
            horizon: 30,
            dt: 0.05,
            sample_count: 2000,
            sigma: [0.2, 0.2],
            lambda: 0.1,
            seed: 0,
            weighting: Weighting::Printed,
            max_attempts: 5,
            include_nominal: true,
        }
    }
}

/// Weighting of map costs along the horizon.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapSchedule {
    /// Every step weighted 1.
    #[default]
    Uniform,
    /// Step `k` weighted `1/k²`.
    InverseSquare,
}

impl MapSchedule {
    /// Weight of step `k ≥ 1`.
    pub fn weight(self, k: usize) -> f64 {
        match self {
            MapSchedule::Uniform => 1.0,
            MapSchedule::InverseSquare => 1.0 / (k * k) as f64,
        }
    }
}

/// Diagonal cost weights.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    /// Diagonal of the stage position weight `Q`.
    pub q_stage: [f64; 2],
    /// Diagonal of the terminal position weight `Q_T`.
    pub q_terminal: [f64; 2],
    /// Diagonal of the input weight `R`.
    pub r_input: [f64; 2],
    /// Penalty when the initial tracking error exceeds `r0`.
    pub alpha_iss: f64,
    /// Tracking-cost cap and lethal threshold `L̄_track`; non-positive selects
    /// [`default_lethal_threshold`].
    pub cap: f64,
    /// Weighting of map costs along the horizon.
    pub map_schedule: MapSchedule,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            q_stage: [50.0, 50.0],
            q_terminal: [200.0, 200.0],
            r_input: [1.0, 1.0],
            alpha_iss: 10_000.0,
            cap: 0.0,
            map_schedule: MapSchedule::Uniform,
        }
    }
}

impl CostWeights {
    /// Weights with `cap` resolved to the default threshold when unset.
    pub fn resolved(mut self, params: &MppiParams, limits: &Limits) -> Self {
        if !(self.cap > 0.0) {
            self.cap = default_lethal_threshold(&self, params, limits);
        }
        self
    }
}

/// `n_h · qmax · (v_max n_h Δt)²`: the stage cost of the largest displacement reachable
/// over the horizon, summed over the horizon.
pub fn default_lethal_threshold(weights: &CostWeights, params: &MppiParams, limits: &Limits) -> f64 {
    let reach = limits.v_max * params.horizon as f64 * params.dt;
    let q = weights.q_stage[0].max(weights.q_stage[1]);
    params.horizon as f64 * q * reach * reach
}

/// Parts of a trajectory cost.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    /// Capped tracking and input cost.
    pub tracking: f64,
    /// Scheduled sum of map costs over the planned positions.
    pub collision: f64,
    /// Capped tracking cost plus the unweighted map-cost sum; the certificate
    /// compares this against `L̄_track`.
    pub certificate: f64,
    /// Initial-error penalty.
    pub iss_penalty: f64,
    /// Sum of the above.
    pub total: f64,
}

/// Output of one planning cycle.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// `n_h + 1` poses starting at the query state.
    pub states: Vec<Pose>,
    /// `n_h` clamped inputs.
    pub inputs: Vec<VelocityCmd>,
    /// Cost of the returned trajectory.
    pub total_cost: f64,
    /// Cost parts.
    pub cost: CostBreakdown,
    /// `tracking + Σ map cost < L̄_track`.
    pub collision_free: bool,
    /// Initial tracking error within `r0`.
    pub initial_error_ok: bool,
    /// Extra attempts used.
    pub retries: usize,
}

impl PlanResult {
    /// Both certificate flags hold.
    pub fn certified(&self) -> bool {
        self.collision_free && self.initial_error_ok
    }
}

/// Reduced polar norm of the first step, zero inside the dead zone.
pub fn initial_error(start: &Pose, next: &Pose, rho_dz: f64) -> f64 {
    let e = polar_error(start, next);
    if e.is_converged(rho_dz) { 0.0 } else { e.reduced_norm() }
}

/// Euler rollout with per-step clamping.
pub fn rollout(start: Pose, inputs: &[VelocityCmd], limits: &Limits, dt: f64) -> Vec<Pose> {
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(start);
    let mut p = start;
    for u in inputs {
        p = crate::dynamics::step_nominal(p, u.clamp(limits), dt);
        out.push(p);
    }
    out
}

fn quad(w: &[f64; 2], a: f64, b: f64) -> f64 {
    w[0] * a * a + w[1] * b * b
}

/// Cost of a rolled-out trajectory.
///
/// `reference` holds at least `n_h + 1` positions aligned with `states`.
pub fn trajectory_cost(
    states: &[Pose],
    inputs: &[VelocityCmd],
    reference: &[[f64; 2]],
    costmap: &DiscrepancyCostMap,
    weights: &CostWeights,
    r0: f64,
    rho_dz: f64,
) -> CostBreakdown {
    let n = inputs.len();
    let mut tracking = 0.0;
    for k in 1..=n {
        let (dx, dy) = (states[k].x - reference[k][0], states[k].y - reference[k][1]);
        tracking += if k == n { quad(&weights.q_terminal, dx, dy) } else { quad(&weights.q_stage, dx, dy) };
    }
    for u in inputs {
        tracking += 0.5 * quad(&weights.r_input, u.v, u.omega);
    }
    let tracking = tracking.min(weights.cap);
    let mut collision = 0.0;
    let mut unweighted = 0.0;
    for (k, s) in states.iter().enumerate().skip(1) {
        let c = costmap.query([s.x, s.y]);
        unweighted += c;
        collision += weights.map_schedule.weight(k) * c;
    }
    let iss_penalty = if n > 0 && initial_error(&states[0], &states[1], rho_dz) > r0 {
        weights.alpha_iss
    } else {
        0.0
    };
    CostBreakdown {
        tracking,
        collision,
        certificate: tracking + unweighted,
        iss_penalty,
        total: tracking + collision + iss_penalty,
    }
}

/// Normalised `exp(s_j)` computed with the log-sum-exp shift.
pub fn normalized_weights(exponents: &[f64]) -> Vec<f64> {
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let n = exponents.len().max(1) as f64;
        return vec![1.0 / n; exponents.len()];
    }
    let raw: Vec<f64> = exponents.iter().map(|&s| exp(s - max)).collect();
    let eta: f64 = raw.iter().sum();
    raw.iter().map(|w| w / eta).collect()
}

/// Log of the normaliser `η = Σ exp(s_j)`.
pub fn log_normalizer(exponents: &[f64]) -> f64 {
    let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + log(exponents.iter().map(|&s| exp(s - max)).sum::<f64>())
}

fn control_term(nominal: &[VelocityCmd], delta: &[[f64; 2]], sigma: &[f64; 2], form: Weighting) -> f64 {
    let inv = [1.0 / sigma[0], 1.0 / sigma[1]];
    nominal
        .iter()
        .zip(delta)
        .map(|(u, d)| match form {
            Weighting::Printed => {
                inv[0] * u.v * (u.v + 2.0 * d[0]) + inv[1] * u.omega * (u.omega + 2.0 * d[1])
            }
            Weighting::Conventional => inv[0] * u.v * d[0] + inv[1] * u.omega * d[1],
        })
        .sum()
}

/// Importance-weight exponent of one sample.
pub fn weight_exponent(
    cost: f64,
    nominal: &[VelocityCmd],
    delta: &[[f64; 2]],
    params: &MppiParams,
) -> f64 {
    -cost / params.lambda - control_term(nominal, delta, &params.sigma, params.weighting)
}

/// Weights and aggregated sequence `U + Σ wʲ Δʲ` for a shared nominal `U`.
pub fn aggregate(
    nominal: &[VelocityCmd],
    perturbations: &[Vec<[f64; 2]>],
    costs: &[f64],
    params: &MppiParams,
) -> (Vec<VelocityCmd>, Vec<f64>) {
    let exps: Vec<f64> = perturbations
        .iter()
        .zip(costs)
        .map(|(d, &c)| weight_exponent(c, nominal, d, params))
        .collect();
    let w = normalized_weights(&exps);
    let mut out = nominal.to_vec();
    for (d, &wj) in perturbations.iter().zip(&w) {
        for (u, di) in out.iter_mut().zip(d) {
            u.v += wj * di[0];
            u.omega += wj * di[1];
        }
    }
    (out, w)
}

/// Inputs of one planning query.
#[derive(Debug, Clone, Copy)]
pub struct PlanRequest<'a> {
    /// Current state.
    pub state: Pose,
    /// Reference positions for steps `0..=n_h`.
    pub reference: &'a [[f64; 2]],
    /// Cost-map snapshot.
    pub costmap: &'a DiscrepancyCostMap,
    /// Initial tube radius `r0`.
    pub r0: f64,
}

/// A nominal sequence and the number of samples drawn around it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGroup {
    /// Nominal sequence of length `n_h`.
    pub nominal: Vec<VelocityCmd>,
    /// Samples drawn around it.
    pub count: usize,
    /// Per-channel perturbation variances for this group.
    pub sigma: [f64; 2],
}

/// Plan around a single warm start.
pub fn plan(
    request: &PlanRequest<'_>,
    warm: &[VelocityCmd],
    params: &MppiParams,
    weights: &CostWeights,
    limits: &Limits,
) -> PlanResult {
    let group = SampleGroup { nominal: warm.to_vec(), count: params.sample_count, sigma: params.sigma };
    plan_mixture(request, core::slice::from_ref(&group), params, weights, limits)
}

/// Plan with samples drawn around several nominal sequences and aggregated jointly.
pub fn plan_mixture(
    request: &PlanRequest<'_>,
    groups: &[SampleGroup],
    params: &MppiParams,
    weights: &CostWeights,
    limits: &Limits,
) -> PlanResult {
    let n_h = params.horizon;
    let weights = weights.resolved(params, limits);
    let attempts = params.max_attempts.max(1);
    let mut result = None;
    for attempt in 0..attempts {
        let seed = params.seed ^ (attempt as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let inputs = sample_and_aggregate(request, groups, params, &weights, limits, seed);
        let states = rollout(request.state, &inputs, limits, params.dt);
        let cost = trajectory_cost(
            &states,
            &inputs,
            request.reference,
            request.costmap,
            &weights,
            request.r0,
            limits.rho_dz,
        );
        let initial_error_ok = initial_error(&states[0], &states[1.min(n_h)], limits.rho_dz) <= request.r0;
        let r = PlanResult {
            total_cost: cost.total,
            collision_free: cost.certificate < weights.cap,
            initial_error_ok,
            cost,
            states,
            inputs,
            retries: attempt,
        };
        let done = r.initial_error_ok;
        result = Some(r);
        if done {
            break;
        }
    }
    result.expect("at least one attempt")
}

fn sample_and_aggregate(
    request: &PlanRequest<'_>,
    groups: &[SampleGroup],
    params: &MppiParams,
    weights: &CostWeights,
    limits: &Limits,
    seed: u64,
) -> Vec<VelocityCmd> {
    let n_h = params.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = groups.iter().map(|g| g.count).sum();
    let mut exps = Vec::with_capacity(total);
    let mut sequences: Vec<[f64; 2]> = Vec::with_capacity(total * n_h);
    let mut delta = vec![[0.0f64; 2]; n_h];
    let mut u = vec![VelocityCmd::default(); n_h];
        for g in groups {
        let std = [sqrt(g.sigma[0]), sqrt(g.sigma[1])];
        for j in 0..g.count {
            let keep = params.include_nominal && j == 0;
            for (k, d) in delta.iter_mut().enumerate() {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                *d = if keep { [0.0, 0.0] } else { [std[0] * a, std[1] * b] };
                u[k] = VelocityCmd::new(g.nominal[k].v + d[0], g.nominal[k].omega + d[1]);
            }
            let c = rollout_cost(request, &u, weights, limits, params.dt);
            let control = control_term(&g.nominal, &delta, &params.sigma, params.weighting);
            exps.push(-c / params.lambda - control);
            sequences.extend(u.iter().map(|x| [x.v, x.omega]));
        }
    }
    let w = normalized_weights(&exps);
    let mut out = vec![VelocityCmd::default(); n_h];
    for (j, wj) in w.iter().enumerate() {
        if *wj == 0.0 {
            continue;
        }
        for (k, o) in out.iter_mut().enumerate() {
            let s = sequences[j * n_h + k];
            o.v += wj * s[0];
            o.omega += wj * s[1];
        }
    }
    out.iter().map(|u| u.clamp(limits)).collect()
}

/// Fused rollout and cost used by the sampler; agrees with
/// [`rollout`] followed by [`trajectory_cost`].
fn rollout_cost(
    request: &PlanRequest<'_>,
    inputs: &[VelocityCmd],
    weights: &CostWeights,
    limits: &Limits,
    dt: f64,
) -> f64 {
    let n = inputs.len();
    let (mut x, mut y, mut th) = (request.state.x, request.state.y, request.state.theta);
    let mut tracking = 0.0;
    let mut collision = 0.0;
    let mut iss = 0.0;
    for (k, u) in inputs.iter().enumerate() {
        let u = u.clamp(limits);
        x += u.v * cos(th) * dt;
        y += u.v * sin(th) * dt;
        th = crate::dynamics::wrap_angle(th + u.omega * dt);
        tracking += 0.5 * quad(&weights.r_input, u.v, u.omega);
        let r = request.reference[k + 1];
        let (dx, dy) = (x - r[0], y - r[1]);
        tracking += if k + 1 == n { quad(&weights.q_terminal, dx, dy) } else { quad(&weights.q_stage, dx, dy) };
        collision += weights.map_schedule.weight(k + 1) * request.costmap.query([x, y]);
        if k == 0 {
            let next = Pose { x, y, theta: th };
            if initial_error(&request.state, &next, limits.rho_dz) > request.r0 {
                iss = weights.alpha_iss;
            }
        }
    }
    tracking.min(weights.cap) + collision + iss
}

/// Positions `p^d(t0 + k Δt)` for `k = 0..=n_h`.
pub fn reference_positions(path: &impl ReferencePath, t0: f64, horizon: usize, dt: f64) -> Vec<[f64; 2]> {
    (0..=horizon).map(|k| path.sample(t0 + k as f64 * dt).position).collect()
}

/// Flat inputs along the reference for steps `0..n_h`, `(0, 0)` where stationary.
pub fn flat_warm_start(path: &impl ReferencePath, t0: f64, horizon: usize, dt: f64) -> Vec<VelocityCmd> {
    (0..horizon)
        .map(|k| path.flat(t0 + k as f64 * dt).map(|(_, u)| u).unwrap_or_default())
        .collect()
}

/// Left-shift the previous inputs and fill the last slot from the flat input of
/// `tail`, or `(0, 0)` when the tail is stationary.
pub fn shift_warm_start(previous: &[VelocityCmd], tail: &ReferencePoint) -> Vec<VelocityCmd> {
    if previous.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<VelocityCmd> = previous[1..].to_vec();
    out.push(flat_reference(tail).map(|(_, u)| u).unwrap_or_default());
    out
}
