//! Nominal unicycle model, flat reference inputs and the polar tracking error.
//!
//! The nominal model is `ẋ = v cos θ`, `ẏ = v sin θ`, `θ̇ = ω`. Tracking errors are
//! expressed in polar form `e = (ρ, γ, δ)` relative to a target pose, where `ρ` is
//! the distance to the target, `γ` the bearing of the target in the body frame and
//! `δ = γ + θ − θ*`. Under the nominal model the error evolves as `ė = g_p(e) δu`.

use core::f64::consts::{FRAC_PI_2, PI};

use libm::{atan2, cos, hypot, sin};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Wrap an angle to `(−π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let two_pi = 2.0 * PI;
    let mut a = libm::fmod(angle + PI, two_pi);
    if a <= 0.0 {
        a += two_pi;
    }
    a - PI
}

/// Planar vehicle pose.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    /// World x position (m).
    pub x: f64,
    /// World y position (m).
    pub y: f64,
    /// Heading (rad) in `(−π, π]`.
    pub theta: f64,
}

impl Pose {
    /// Construct a pose, wrapping the heading.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose { x, y, theta: wrap_angle(theta) }
    }

    /// Position as `[x, y]`.
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Euclidean distance between the positions of two poses.
    pub fn distance(&self, other: &Pose) -> f64 {
        hypot(self.x - other.x, self.y - other.y)
    }
}

/// Linear and angular velocity command.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VelocityCmd {
    /// Linear velocity (m/s).
    pub v: f64,
    /// Angular velocity (rad/s).
    pub omega: f64,
}

impl VelocityCmd {
    /// Construct a command.
    pub const fn new(v: f64, omega: f64) -> Self {
        VelocityCmd { v, omega }
    }

    /// Element-wise clamp into the symmetric input limits.
    pub fn clamp(self, limits: &Limits) -> Self {
        VelocityCmd {
            v: self.v.clamp(-limits.v_max, limits.v_max),
            omega: self.omega.clamp(-limits.omega_max, limits.omega_max),
        }
    }
}

impl core::ops::Add for VelocityCmd {
    type Output = VelocityCmd;
    fn add(self, rhs: VelocityCmd) -> VelocityCmd {
        VelocityCmd::new(self.v + rhs.v, self.omega + rhs.omega)
    }
}

impl core::ops::Sub for VelocityCmd {
    type Output = VelocityCmd;
    fn sub(self, rhs: VelocityCmd) -> VelocityCmd {
        VelocityCmd::new(self.v - rhs.v, self.omega - rhs.omega)
    }
}

/// Input bounds, polar-distance domain and control period.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    /// Symmetric linear velocity bound (m/s).
    pub v_max: f64,
    /// Symmetric angular velocity bound (rad/s).
    pub omega_max: f64,
    /// Dead-zone radius (m); errors with `ρ < rho_dz` count as converged.
    pub rho_dz: f64,
    /// Largest polar distance of the operating domain (m).
    pub rho_max: f64,
    /// Control period (s).
    pub dt: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { v_max: 2.0, omega_max: 2.0, rho_dz: 0.05, rho_max: 0.5, dt: 0.05 }
    }
}

impl Limits {
    /// Check the invariants `0 < rho_dz < rho_max`, `dt > 0` and positive bounds.
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.v_max > 0.0 && self.omega_max > 0.0) {
            return Err(Error::InvalidParameter("input limits must be positive"));
        }
        if !(self.rho_dz > 0.0 && self.rho_dz < self.rho_max) {
            return Err(Error::InvalidParameter("require 0 < rho_dz < rho_max"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be positive"));
        }
        Ok(())
    }
}

/// Sample of a reference path with its first two derivatives.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReferencePoint {
    /// `(x, y)` (m).
    pub position: [f64; 2],
    /// `(ẋ, ẏ)` (m/s).
    pub velocity: [f64; 2],
    /// `(ẍ, ÿ)` (m/s²).
    pub acceleration: [f64; 2],
}

/// Polar tracking error `(ρ, γ, δ)`.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolarError {
    /// Distance to the target (m).
    pub rho: f64,
    /// Bearing of the target in the body frame (rad), within `[−π/2, π/2]`.
    pub gamma: f64,
    /// `γ + θ − θ*` (rad), within `[−π/2, π/2]`.
    pub delta: f64,
    /// Set when `γ` or `δ` had to be clamped into `[−π/2, π/2]`.
    pub saturated: bool,
}

impl PolarError {
    /// Unsaturated error from its components.
    pub const fn new(rho: f64, gamma: f64, delta: f64) -> Self {
        PolarError { rho, gamma, delta, saturated: false }
    }

    /// True when `ρ` lies inside the dead zone.
    pub fn is_converged(&self, rho_dz: f64) -> bool {
        self.rho < rho_dz
    }

    /// Euclidean norm of the full error.
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.rho * self.rho + self.gamma * self.gamma + self.delta * self.delta)
    }

    /// Euclidean norm of the reduced error `(ρ, γ)`.
    pub fn reduced_norm(&self) -> f64 {
        hypot(self.rho, self.gamma)
    }

    /// Components as an array.
    pub fn to_array(&self) -> [f64; 3] {
        [self.rho, self.gamma, self.delta]
    }
}

/// Explicit Euler step of the nominal model.
pub fn step_nominal(pose: Pose, cmd: VelocityCmd, dt: f64) -> Pose {
    Pose::new(
        pose.x + cmd.v * cos(pose.theta) * dt,
        pose.y + cmd.v * sin(pose.theta) * dt,
        pose.theta + cmd.omega * dt,
    )
}

/// Classical fourth-order Runge–Kutta step of the nominal model.
pub fn step_nominal_rk4(pose: Pose, cmd: VelocityCmd, dt: f64) -> Pose {
    let f = |th: f64| (cmd.v * cos(th), cmd.v * sin(th));
    let th = pose.theta;
    let (x1, y1) = f(th);
    let (x2, y2) = f(th + 0.5 * dt * cmd.omega);
    let (x4, y4) = f(th + dt * cmd.omega);
    Pose::new(
        pose.x + dt / 6.0 * (x1 + 4.0 * x2 + x4),
        pose.y + dt / 6.0 * (y1 + 4.0 * y2 + y4),
        th + cmd.omega * dt,
    )
}

/// Hold `cmd` for `dt`, integrating the nominal model with `substeps` Euler steps.
pub fn propagate_nominal(pose: Pose, cmd: VelocityCmd, dt: f64, substeps: usize) -> Pose {
    let n = substeps.max(1);
    let h = dt / n as f64;
    (0..n).fold(pose, |p, _| step_nominal(p, cmd, h))
}

/// Flat pose and input for a reference sample.
///
/// The heading follows the velocity direction and `ω` is the path curvature rate
/// `(ẋÿ − ẏẍ)/(ẋ² + ẏ²)`.
pub fn flat_reference(reference: &ReferencePoint) -> Result<(Pose, VelocityCmd), Error> {
    let [dx, dy] = reference.velocity;
    let [ddx, ddy] = reference.acceleration;
    let speed_sq = dx * dx + dy * dy;
    if speed_sq == 0.0 {
        return Err(Error::HeadingUndefined);
    }
    let theta = atan2(dy, dx);
    let s = sin(theta);
    let v = if s.abs() < 1e-12 { dx / cos(theta) } else { dy / s };
    let omega = (dx * ddy - dy * ddx) / speed_sq;
    let pose = Pose::new(reference.position[0], reference.position[1], theta);
    Ok((pose, VelocityCmd::new(v, omega)))
}

fn clamp_half_pi(angle: f64, saturated: &mut bool) -> f64 {
    if angle > FRAC_PI_2 {
        *saturated = true;
        FRAC_PI_2
    } else if angle < -FRAC_PI_2 {
        *saturated = true;
        -FRAC_PI_2
    } else {
        angle
    }
}

/// Polar error of `current` with respect to `target`.
///
/// `γ` is the bearing of the vector from the vehicle to the target measured from
/// the vehicle heading. Both angles are wrapped, then clamped into `[−π/2, π/2]`.
pub fn polar_error(current: &Pose, target: &Pose) -> PolarError {
    let dx = target.x - current.x;
    let dy = target.y - current.y;
    let rho = hypot(dx, dy);
    let bearing = if rho == 0.0 { current.theta } else { atan2(dy, dx) };
    let gamma = wrap_angle(bearing - current.theta);
    let delta = wrap_angle(gamma + current.theta - target.theta);
    let mut saturated = false;
    let gamma = clamp_half_pi(gamma, &mut saturated);
    let delta = clamp_half_pi(delta, &mut saturated);
    PolarError { rho, gamma, delta, saturated }
}

/// Pose whose polar error with respect to `target` equals `e` (inverse of [`polar_error`]).
pub fn pose_from_polar(target: &Pose, e: &PolarError) -> Pose {
    let bearing = e.delta + target.theta;
    Pose::new(
        target.x - e.rho * cos(bearing),
        target.y - e.rho * sin(bearing),
        bearing - e.gamma,
    )
}

/// The 3×2 input matrix `g_p(e)` of the polar error dynamics, row-major.
pub fn g_p(e: &PolarError) -> [[f64; 2]; 3] {
    let (s, c) = (sin(e.gamma), cos(e.gamma));
    [[-c, 0.0], [s / e.rho, -1.0], [s / e.rho, 0.0]]
}

/// The 2×2 input matrix `ĝ_p(ê)` of the reduced `(ρ, γ)` error dynamics, row-major.
pub fn g_p_reduced(e: &PolarError) -> [[f64; 2]; 2] {
    let (s, c) = (sin(e.gamma), cos(e.gamma));
    [[-c, 0.0], [s / e.rho, -1.0]]
}

/// Unit vector spanning the orthogonal complement of the columns of `g_p(e)`.
pub fn unmatched_direction(e: &PolarError) -> [f64; 3] {
    let g = g_p(e);
    let a = [g[0][0], g[1][0], g[2][0]];
    let b = [g[0][1], g[1][1], g[2][1]];
    let n = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
    let len = libm::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2]);
    [n[0] / len, n[1] / len, n[2] / len]
}

/// Error rate `ė = g_p(e) δu`.
pub fn polar_error_rate(e: &PolarError, du: VelocityCmd, rho_dz: f64) -> Result<[f64; 3], Error> {
    if e.rho < rho_dz {
        return Err(Error::IllConditioned { rho: e.rho });
    }
    let g = g_p(e);
    Ok(core::array::from_fn(|i| g[i][0] * du.v + g[i][1] * du.omega))
}

/// Reduced error rate `(ρ̇, γ̇) = ĝ_p(ê) δu`.
pub fn polar_error_rate_reduced(
    e: &PolarError,
    du: VelocityCmd,
    rho_dz: f64,
) -> Result<[f64; 2], Error> {
    if e.rho < rho_dz {
        return Err(Error::IllConditioned { rho: e.rho });
    }
    let g = g_p_reduced(e);
    Ok(core::array::from_fn(|i| g[i][0] * du.v + g[i][1] * du.omega))
}
