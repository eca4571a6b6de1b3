//! Ancillary tracking laws, Lyapunov bookkeeping and tube radii.
//!
//! The nominal law `κ` stabilises the polar error; `κ_ISS = κ − λ1⁻¹ g_pᵀ e` adds
//! damping against matched disturbances. Given calibrated bounds `Z` (matched) and
//! `Z⊥` (unmatched), the tracking error over one planning interval stays inside
//!
//! ```text
//! r(τ) = Z² / (4 (α1 − Z⊥ τ e^{l_V τ}))
//! ```
//!
//! provided it starts inside `r(0)`.

use libm::{cos, exp, sin};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::dynamics::{g_p, g_p_reduced, Limits, PolarError, VelocityCmd};
use crate::error::Error;

/// Ancillary controller gains.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    /// Distance gain.
    pub k1: f64,
    /// Bearing gain.
    pub k2: f64,
    /// Heading-offset weight.
    pub k3: f64,
    /// ISS augmentation weight; the correction is scaled by `1/lambda1`.
    pub lambda1: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains { k1: 0.3, k2: 0.15, k3: 1.0, lambda1: 1000.0 }
    }
}

impl Gains {
    /// Check that every gain is strictly positive.
    pub fn validate(&self) -> Result<(), Error> {
        if self.k1 > 0.0 && self.k2 > 0.0 && self.k3 > 0.0 && self.lambda1 > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("gains must be strictly positive"))
        }
    }
}

/// Which error model the ancillary law acts on.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorForm {
    /// Three-state `(ρ, γ, δ)` dynamics.
    Full,
    /// Two-state `(ρ, γ)` dynamics.
    #[default]
    Reduced,
}

/// Coefficients of the Lyapunov bounds and the planning interval.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeParams {
    /// Lower quadratic bound `α1 ‖e‖² ≤ V`.
    pub alpha1: f64,
    /// Upper quadratic bound `V ≤ α2 ‖e‖²`.
    pub alpha2: f64,
    /// Slope of the linear decay rate `α3`.
    pub alpha3_slope: f64,
    /// Lipschitz constant of `V` on the operating domain.
    pub lipschitz_v: f64,
    /// Planning interval (s).
    pub dt: f64,
}

impl Default for TubeParams {
    fn default() -> Self {
        TubeParams {
            alpha1: 0.5,
            alpha2: 0.5,
            alpha3_slope: 0.0024,
            lipschitz_v: core::f64::consts::FRAC_PI_2,
            dt: 0.05,
        }
    }
}

/// Calibrated probabilistic discrepancy bounds.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscrepancyBounds {
    /// Matched bound `Z_ε` (velocity-command units).
    pub z_matched: f64,
    /// Unmatched bound `Z⊥_ε`.
    pub z_unmatched: f64,
    /// Risk level.
    pub epsilon: f64,
    /// Number of calibration samples.
    pub sample_count: usize,
}

impl DiscrepancyBounds {
    /// Bounds with explicit magnitudes.
    pub fn new(z_matched: f64, z_unmatched: f64, epsilon: f64, sample_count: usize) -> Self {
        DiscrepancyBounds { z_matched, z_unmatched, epsilon, sample_count }
    }
}

/// Start and end radius of the tube over one planning interval.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TubeRadii {
    /// `r(0)` (m).
    pub r0: f64,
    /// `r(ΔT)` (m).
    pub r_dt: f64,
}

fn sinc_cos(gamma: f64) -> f64 {
    if gamma.abs() < 1e-6 {
        1.0
    } else {
        sin(gamma) * cos(gamma) / gamma
    }
}

/// Nominal three-state law: `v = k1 ρ cos γ`, `ω = k2 γ + k1 (sin γ cos γ / γ)(γ + k3 δ)`.
pub fn kappa(e: &PolarError, gains: &Gains, rho_dz: f64) -> VelocityCmd {
    if e.rho < rho_dz {
        return VelocityCmd::default();
    }
    VelocityCmd::new(
        gains.k1 * e.rho * cos(e.gamma),
        gains.k2 * e.gamma + gains.k1 * sinc_cos(e.gamma) * (e.gamma + gains.k3 * e.delta),
    )
}

/// Nominal two-state law: `v = k1 ρ cos γ`, `ω = k2 γ + k1 sin γ cos γ`.
pub fn kappa_reduced(e: &PolarError, gains: &Gains, rho_dz: f64) -> VelocityCmd {
    if e.rho < rho_dz {
        return VelocityCmd::default();
    }
    VelocityCmd::new(
        gains.k1 * e.rho * cos(e.gamma),
        gains.k2 * e.gamma + gains.k1 * sin(e.gamma) * cos(e.gamma),
    )
}

/// Augmented law `κ(e) − (1/λ1) g_p(e)ᵀ e` in the selected error form.
pub fn kappa_iss(e: &PolarError, gains: &Gains, form: ErrorForm, rho_dz: f64) -> VelocityCmd {
    if e.rho < rho_dz {
        return VelocityCmd::default();
    }
    let w = 1.0 / gains.lambda1;
    match form {
        ErrorForm::Full => {
            let g = g_p(e);
            let x = e.to_array();
            let gt = [
                g[0][0] * x[0] + g[1][0] * x[1] + g[2][0] * x[2],
                g[0][1] * x[0] + g[1][1] * x[1] + g[2][1] * x[2],
            ];
            let k = kappa(e, gains, rho_dz);
            VelocityCmd::new(k.v - w * gt[0], k.omega - w * gt[1])
        }
        ErrorForm::Reduced => {
            let g = g_p_reduced(e);
            let gt = [g[0][0] * e.rho + g[1][0] * e.gamma, g[0][1] * e.rho + g[1][1] * e.gamma];
            let k = kappa_reduced(e, gains, rho_dz);
            VelocityCmd::new(k.v - w * gt[0], k.omega - w * gt[1])
        }
    }
}

/// `V = ½(ρ² + γ² + k3 δ²)`.
pub fn lyapunov(e: &PolarError, k3: f64) -> f64 {
    0.5 * (e.rho * e.rho + e.gamma * e.gamma + k3 * e.delta * e.delta)
}

/// `V̂ = ½(ρ² + γ²)`.
pub fn lyapunov_reduced(e: &PolarError) -> f64 {
    0.5 * (e.rho * e.rho + e.gamma * e.gamma)
}

/// Tube radius `r(τ)`; fails when the denominator is not positive.
pub fn tube_radius(tau: f64, bounds: &DiscrepancyBounds, tube: &TubeParams) -> Result<f64, Error> {
    let denominator = tube.alpha1 - bounds.z_unmatched * tau * exp(tube.lipschitz_v * tau);
    if !(denominator > 0.0) {
        return Err(Error::TubeBlowUp { denominator });
    }
    Ok(bounds.z_matched * bounds.z_matched / (4.0 * denominator))
}

/// `r(0)` and `r(ΔT)` for the interval length in `tube`.
pub fn tube_radii(bounds: &DiscrepancyBounds, tube: &TubeParams) -> Result<TubeRadii, Error> {
    Ok(TubeRadii { r0: tube_radius(0.0, bounds, tube)?, r_dt: tube_radius(tube.dt, bounds, tube)? })
}

/// Applied command: `clamp(u* + κ_ISS(e))`.
pub fn compose_command(
    u_star: VelocityCmd,
    e: &PolarError,
    gains: &Gains,
    form: ErrorForm,
    limits: &Limits,
) -> VelocityCmd {
    (u_star + kappa_iss(e, gains, form, limits.rho_dz)).clamp(limits)
}

/// Largest `λ1` for which the reduced closed loop under `κ_ISS` keeps the level set
/// `V̂ = Z²/4` invariant against any `‖d_u‖ ≤ Z`.
///
/// Completing the square gives `V̇ ≤ −(k1 ρ² cos²γ + k2 γ²) + λ1 Z²/4`, so the bound
/// is the minimum of the nominal decay over the level set divided by `Z²/4`. Points
/// inside the dead zone are excluded. The level set is scanned on `samples` points.
pub fn iss_weight_bound(gains: &Gains, z: f64, rho_dz: f64, samples: usize) -> f64 {
    let level = z * z / 4.0;
    let radius = libm::sqrt(2.0 * level);
    let mut best = f64::INFINITY;
    for i in 0..=samples {
        let phi = -core::f64::consts::FRAC_PI_2 + core::f64::consts::PI * i as f64 / samples as f64;
        let rho = radius * cos(phi);
        let gamma = radius * sin(phi);
        if rho < rho_dz {
            continue;
        }
        let c = cos(gamma);
        let decay = gains.k1 * rho * rho * c * c + gains.k2 * gamma * gamma;
        best = best.min(decay / level);
    }
    best
}
