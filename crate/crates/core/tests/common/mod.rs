#![allow(dead_code)]

use navlab_core::controller::{kappa_iss, ErrorForm, Gains};
use navlab_core::dynamics::{g_p_reduced, PolarError};
use navlab_core::VelocityCmd;

/// Worst-case matched disturbance of magnitude `z`: aligned with `ĝ_pᵀ ê`.
pub fn adversary(e: [f64; 2], z: f64) -> [f64; 2] {
    let g = g_p_reduced(&PolarError::new(e[0], e[1], 0.0));
    let gt = [g[0][0] * e[0] + g[1][0] * e[1], g[0][1] * e[0] + g[1][1] * e[1]];
    let n = gt[0].hypot(gt[1]);
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [z * gt[0] / n, z * gt[1] / n]
    }
}

/// Reduced error rate `ĝ_p(ê)(κ_ISS(ê) + d)`; `d` may depend on the state.
pub fn reduced_rate(e: [f64; 2], gains: &Gains, d: &impl Fn([f64; 2]) -> [f64; 2]) -> [f64; 2] {
    let pe = PolarError::new(e[0], e[1], 0.0);
    let k = kappa_iss(&pe, gains, ErrorForm::Reduced, 0.0);
    let dist = d(e);
    let u = VelocityCmd::new(k.v + dist[0], k.omega + dist[1]);
    let g = g_p_reduced(&pe);
    [g[0][0] * u.v + g[0][1] * u.omega, g[1][0] * u.v + g[1][1] * u.omega]
}

fn stiffness(e: [f64; 2], gains: &Gains, z: f64) -> f64 {
    let s = (e[1].sin() / e[0]).abs();
    (1.0 + s * s) / gains.lambda1 + gains.k1 + gains.k2 + z * (1.0 + 1.0 / e[0])
}

fn rk4(e: [f64; 2], h: f64, f: &impl Fn([f64; 2]) -> [f64; 2]) -> [f64; 2] {
    let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
    let k1 = f(e);
    let k2 = f(add(e, k1, 0.5 * h));
    let k3 = f(add(e, k2, 0.5 * h));
    let k4 = f(add(e, k3, h));
    [
        e[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        e[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// One RK4 step of length `dt`, subdivided where the closed loop is stiff.
pub fn step(e: [f64; 2], dt: f64, gains: &Gains, z: f64, d: &impl Fn([f64; 2]) -> [f64; 2]) -> [f64; 2] {
    let f = |x: [f64; 2]| reduced_rate(x, gains, d);
    let m = ((stiffness(e, gains, z) * dt / 0.25).ceil() as usize).clamp(1, 4096);
    let h = dt / m as f64;
    let mut x = e;
    for _ in 0..m {
        x = rk4(x, h, &f);
    }
    x
}

/// `V̂ = ½(ρ² + γ²)`.
pub fn v_hat(e: [f64; 2]) -> f64 {
    0.5 * (e[0] * e[0] + e[1] * e[1])
}
