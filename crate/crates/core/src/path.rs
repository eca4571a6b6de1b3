//! Analytic reference paths sampled with exact derivatives.

use core::f64::consts::PI;

use libm::{cos, sin};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::dynamics::{flat_reference, Pose, ReferencePoint, VelocityCmd};

/// A time-parameterised planar path.
pub trait ReferencePath {
    /// Position, velocity and acceleration at time `t` (s).
    fn sample(&self, t: f64) -> ReferencePoint;

    /// Flat pose and input at `t`, or `None` where the path is stationary.
    fn flat(&self, t: f64) -> Option<(Pose, VelocityCmd)> {
        flat_reference(&self.sample(t)).ok()
    }
}

/// Lemniscate-like loop `x = a cos(2πt/T)`, `y = b sin(4πt/T)`.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Figure8 {
    /// Half-width along x (m).
    pub a: f64,
    /// Half-height along y (m).
    pub b: f64,
    /// Lap time (s).
    pub lap_time: f64,
}

impl Figure8 {
    /// The 5 m × 2.5 m loop with the given lap time.
    pub fn standard(lap_time: f64) -> Self {
        Figure8 { a: 2.5, b: 1.25, lap_time }
    }
}

impl ReferencePath for Figure8 {
    fn sample(&self, t: f64) -> ReferencePoint {
        let w = 2.0 * PI / self.lap_time;
        let (s1, c1) = (sin(w * t), cos(w * t));
        let (s2, c2) = (sin(2.0 * w * t), cos(2.0 * w * t));
        ReferencePoint {
            position: [self.a * c1, self.b * s2],
            velocity: [-self.a * w * s1, 2.0 * self.b * w * c2],
            acceleration: [-self.a * w * w * c1, -4.0 * self.b * w * w * s2],
        }
    }
}

/// Circle of radius `radius` around `center` traversed at angular rate `rate`.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    /// Center (m).
    pub center: [f64; 2],
    /// Radius (m).
    pub radius: f64,
    /// Angular rate (rad/s); negative for clockwise.
    pub rate: f64,
    /// Phase at `t = 0` (rad).
    pub phase: f64,
}

impl ReferencePath for Circle {
    fn sample(&self, t: f64) -> ReferencePoint {
        let a = self.phase + self.rate * t;
        let (s, c) = (sin(a), cos(a));
        let (r, w) = (self.radius, self.rate);
        ReferencePoint {
            position: [self.center[0] + r * c, self.center[1] + r * s],
            velocity: [-r * w * s, r * w * c],
            acceleration: [-r * w * w * c, -r * w * w * s],
        }
    }
}

/// Straight line at constant velocity.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    /// Position at `t = 0` (m).
    pub start: [f64; 2],
    /// Constant velocity (m/s).
    pub velocity: [f64; 2],
}

impl ReferencePath for Line {
    fn sample(&self, t: f64) -> ReferencePoint {
        ReferencePoint {
            position: [self.start[0] + self.velocity[0] * t, self.start[1] + self.velocity[1] * t],
            velocity: self.velocity,
            acceleration: [0.0; 2],
        }
    }
}

/// A path that stays at one point.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationary {
    /// The held position (m).
    pub position: [f64; 2],
}

impl ReferencePath for Stationary {
    fn sample(&self, _t: f64) -> ReferencePoint {
        ReferencePoint { position: self.position, ..ReferencePoint::default() }
    }
}
