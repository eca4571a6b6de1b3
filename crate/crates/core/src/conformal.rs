//! Matched/unmatched discrepancy extraction and split conformal calibration.
//!
//! For a tuple `(x_{i−1}, x̂_i, x*_i, u_{i−1}, u*_{i−1}, Δt)` the nominal prediction
//! `e_i` is the polar error of the nominally propagated state, and the residual
//! `δê = ê_i − e_i` is split by least squares against `G = g_p(e_{i−1}) Δt`:
//!
//! ```text
//! d_u = argmin ‖δê − G d‖,   matched = ‖d_u‖,   unmatched = ‖δê − G d_u‖
//! ```
//!
//! Bounds are the `⌈(L+1)(1−ε)⌉`-th order statistic of `L` scores with `+∞` appended.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::controller::DiscrepancyBounds;
use crate::dynamics::{
    g_p, polar_error, pose_from_polar, propagate_nominal, unmatched_direction, wrap_angle,
    PolarError, Pose, VelocityCmd,
};
use crate::error::Error;

/// One closed-loop training record.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingTuple {
    /// Time at the end of the interval (s).
    pub time: f64,
    /// State at the start of the interval.
    pub prev_state: Pose,
    /// Measured state at the end of the interval.
    pub measured_state: Pose,
    /// Waypoint tracked during the interval.
    pub optimal_state: Pose,
    /// Input applied during the interval.
    pub applied_input: VelocityCmd,
    /// Feed-forward part of the applied input.
    pub optimal_input: VelocityCmd,
    /// Interval length (s).
    pub dt: f64,
}

/// Discrepancy magnitudes extracted from one tuple.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscrepancySample {
    /// `‖d_u‖`.
    pub matched_norm: f64,
    /// `‖δê − G d_u‖`.
    pub unmatched_mag: f64,
    /// The matched input discrepancy `d_u`.
    pub matched: [f64; 2],
}

/// Quadrature used for `∫ g_p dτ` over the interval.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Quadrature {
    /// `g_p(e_{i−1}) Δt`.
    #[default]
    LeftPoint,
    /// `g_p(½(e_{i−1} + e_i)) Δt`.
    Midpoint,
}

/// Nonconformity score applied to the matched discrepancy.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Score {
    /// Raw magnitudes.
    #[default]
    Raw,
    /// Magnitude after removing the sample mean of `d_u` and of the unmatched part.
    MeanOffset,
}

/// Settings of the extraction step.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionConfig {
    /// Tuples whose initial polar distance is below this are skipped (m).
    pub rho_dz: f64,
    /// Euler substeps used to propagate the nominal model over `Δt`.
    pub substeps: usize,
    /// Quadrature for `G`.
    pub quadrature: Quadrature,
    /// Drop tuples whose angle errors saturate or jump by more than `π/2`.
    pub drop_wrapped: bool,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            rho_dz: 0.01,
            substeps: 5,
            quadrature: Quadrature::LeftPoint,
            drop_wrapped: false,
        }
    }
}

/// Subsampling and risk settings of a calibration.
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    /// Risk level in `(0, 1)`.
    pub epsilon: f64,
    /// Number of scores `L` drawn without replacement.
    pub subsample: usize,
    /// Seed of the subsampling draw.
    pub seed: u64,
    /// Nonconformity score.
    #[cfg_attr(feature = "serde", serde(default))]
    pub score: Score,
}

impl CalibrationConfig {
    /// Configuration with raw scores.
    pub fn new(epsilon: f64, subsample: usize, seed: u64) -> Self {
        CalibrationConfig { epsilon, subsample, seed, score: Score::Raw }
    }
}

/// Result of [`conformal_quantile`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantile {
    /// The selected order statistic (may be `+∞`).
    pub value: f64,
    /// 1-based order index `q_ε`.
    pub index: usize,
    /// Set when `q_ε` selects the appended `+∞`.
    pub insufficient: bool,
}

/// Outcome of [`calibrate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Calibrated bounds.
    pub bounds: DiscrepancyBounds,
    /// Order index used for both quantiles.
    pub index: usize,
    /// Set when the quantile is the appended `+∞`.
    pub insufficient: bool,
    /// Tuples skipped during extraction.
    pub skipped: usize,
    /// Tuples available after extraction.
    pub usable: usize,
}

/// Counts of tuples dropped by [`extract_all`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExtractionStats {
    /// Tuples starting inside the dead zone.
    pub dead_zone: usize,
    /// Tuples removed by the wrap filter.
    pub wrapped: usize,
}

fn sub_polar(a: &PolarError, b: &PolarError) -> [f64; 3] {
    [a.rho - b.rho, wrap_angle(a.gamma - b.gamma), wrap_angle(a.delta - b.delta)]
}

/// Least-squares split of `delta_e` against the columns of `g`.
///
/// Returns `d_u` and the residual `delta_e − g d_u`.
pub fn decompose_residual(delta_e: [f64; 3], g: [[f64; 2]; 3]) -> ([f64; 2], [f64; 3]) {
    let mut gtg = [[0.0; 2]; 2];
    let mut gtb = [0.0; 2];
    for row in 0..3 {
        for i in 0..2 {
            gtb[i] += g[row][i] * delta_e[row];
            for j in 0..2 {
                gtg[i][j] += g[row][i] * g[row][j];
            }
        }
    }
    let det = gtg[0][0] * gtg[1][1] - gtg[0][1] * gtg[1][0];
    let d = if det.abs() > 1e-300 {
        [
            (gtg[1][1] * gtb[0] - gtg[0][1] * gtb[1]) / det,
            (gtg[0][0] * gtb[1] - gtg[1][0] * gtb[0]) / det,
        ]
    } else {
        [0.0, 0.0]
    };
    let residual: [f64; 3] =
        core::array::from_fn(|row| delta_e[row] - g[row][0] * d[0] - g[row][1] * d[1]);
    (d, residual)
}

fn norm3(v: [f64; 3]) -> f64 {
    libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
}

fn scaled(g: [[f64; 2]; 3], dt: f64) -> [[f64; 2]; 3] {
    g.map(|row| row.map(|x| x * dt))
}

/// Split the residual of one tuple; `None` when the tuple is skipped.
pub fn extract_discrepancy(
    tuple: &TrainingTuple,
    config: &ExtractionConfig,
) -> Option<DiscrepancySample> {
    extract_classified(tuple, config).ok()
}

enum Skip {
    DeadZone,
    Wrapped,
}

fn extract_classified(
    tuple: &TrainingTuple,
    config: &ExtractionConfig,
) -> Result<DiscrepancySample, Skip> {
    let e_prev = polar_error(&tuple.prev_state, &tuple.optimal_state);
    if e_prev.rho < config.rho_dz {
        return Err(Skip::DeadZone);
    }
    let e_meas = polar_error(&tuple.measured_state, &tuple.optimal_state);
    let nominal = propagate_nominal(tuple.prev_state, tuple.applied_input, tuple.dt, config.substeps);
    let e_nom = polar_error(&nominal, &tuple.optimal_state);
    let delta_e = sub_polar(&e_meas, &e_nom);
    if config.drop_wrapped
        && (e_prev.saturated
            || e_meas.saturated
            || e_nom.saturated
            || delta_e[1].abs() > core::f64::consts::FRAC_PI_2
            || delta_e[2].abs() > core::f64::consts::FRAC_PI_2)
    {
        return Err(Skip::Wrapped);
    }
    let at = match config.quadrature {
        Quadrature::LeftPoint => e_prev,
        Quadrature::Midpoint => {
            let mid = PolarError::new(
                0.5 * (e_prev.rho + e_nom.rho),
                0.5 * (e_prev.gamma + e_nom.gamma),
                0.5 * (e_prev.delta + e_nom.delta),
            );
            if mid.rho > 0.0 { mid } else { e_prev }
        }
    };
    let (d, residual) = decompose_residual(delta_e, scaled(g_p(&at), tuple.dt));
    Ok(DiscrepancySample {
        matched_norm: libm::hypot(d[0], d[1]),
        unmatched_mag: norm3(residual),
        matched: d,
    })
}

/// Extract every usable tuple, counting the skipped ones.
pub fn extract_all(
    tuples: &[TrainingTuple],
    config: &ExtractionConfig,
) -> (Vec<DiscrepancySample>, ExtractionStats) {
    let mut stats = ExtractionStats::default();
    let mut out = Vec::with_capacity(tuples.len());
    for t in tuples {
        match extract_classified(t, config) {
            Ok(s) => out.push(s),
            Err(Skip::DeadZone) => stats.dead_zone += 1,
            Err(Skip::Wrapped) => stats.wrapped += 1,
        }
    }
    (out, stats)
}

/// 1-based order index `⌈(n+1)(1−ε)⌉`.
pub fn quantile_index(n: usize, epsilon: f64) -> usize {
    let x = (n as f64 + 1.0) * (1.0 - epsilon);
    // Guard against products such as 18.999999999999996 for 20·0.95.
    let q = libm::ceil(x - 1e-9 * x.max(1.0));
    (q.max(1.0) as usize).min(n + 1)
}

/// The `⌈(n+1)(1−ε)⌉`-th smallest of `scores ∪ {+∞}`.
pub fn conformal_quantile(scores: &[f64], epsilon: f64) -> Result<Quantile, Error> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("scores must be nonempty"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter("epsilon must lie in (0, 1)"));
    }
    let index = quantile_index(scores.len(), epsilon);
    if index > scores.len() {
        return Ok(Quantile { value: f64::INFINITY, index, insufficient: true });
    }
    let mut v: Vec<f64> = scores.to_vec();
    let (_, nth, _) = v.select_nth_unstable_by(index - 1, f64::total_cmp);
    Ok(Quantile { value: *nth, index, insufficient: false })
}

fn scores_of(samples: &[DiscrepancySample], score: Score) -> (Vec<f64>, Vec<f64>) {
    match score {
        Score::Raw => (
            samples.iter().map(|s| s.matched_norm).collect(),
            samples.iter().map(|s| s.unmatched_mag).collect(),
        ),
        Score::MeanOffset => {
            let n = samples.len().max(1) as f64;
            let mean = samples.iter().fold([0.0; 2], |a, s| [a[0] + s.matched[0], a[1] + s.matched[1]]);
            let mean = [mean[0] / n, mean[1] / n];
            let mean_u = samples.iter().map(|s| s.unmatched_mag).sum::<f64>() / n;
            (
                samples
                    .iter()
                    .map(|s| libm::hypot(s.matched[0] - mean[0], s.matched[1] - mean[1]))
                    .collect(),
                samples.iter().map(|s| (s.unmatched_mag - mean_u).abs()).collect(),
            )
        }
    }
}

/// Seeded draw of `subsample` items without replacement, then both quantiles.
pub fn calibrate_samples(
    samples: &[DiscrepancySample],
    config: &CalibrationConfig,
) -> Result<Calibration, Error> {
    if config.subsample == 0 {
        return Err(Error::InvalidParameter("subsample must be positive"));
    }
    if samples.len() < config.subsample {
        return Err(Error::InsufficientData { required: config.subsample, available: samples.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut picked = rand::seq::index::sample(&mut rng, samples.len(), config.subsample).into_vec();
    picked.sort_unstable();
    let drawn: Vec<DiscrepancySample> = picked.iter().map(|&i| samples[i]).collect();
    let (matched, unmatched) = scores_of(&drawn, config.score);
    let qm = conformal_quantile(&matched, config.epsilon)?;
    let qu = conformal_quantile(&unmatched, config.epsilon)?;
    Ok(Calibration {
        bounds: DiscrepancyBounds::new(qm.value, qu.value, config.epsilon, config.subsample),
        index: qm.index,
        insufficient: qm.insufficient,
        skipped: 0,
        usable: samples.len(),
    })
}

/// Extract, subsample and calibrate a training dataset.
pub fn calibrate(
    dataset: &[TrainingTuple],
    config: &CalibrationConfig,
    extraction: &ExtractionConfig,
) -> Result<Calibration, Error> {
    if dataset.len() < config.subsample {
        return Err(Error::InsufficientData { required: config.subsample, available: dataset.len() });
    }
    let (samples, stats) = extract_all(dataset, extraction);
    let mut cal = calibrate_samples(&samples, config)?;
    cal.skipped = stats.dead_zone + stats.wrapped;
    Ok(cal)
}

/// Build a tuple whose residual is exactly `G d_u + d⊥ n̂` for the given disturbance.
///
/// `e_prev` must lie outside the dead zone and away from the `±π/2` clamp.
pub fn synthesize_tuple(
    target: &Pose,
    e_prev: &PolarError,
    input: VelocityCmd,
    d_u: [f64; 2],
    d_perp: f64,
    dt: f64,
    substeps: usize,
) -> TrainingTuple {
    let prev = pose_from_polar(target, e_prev);
    let nominal = propagate_nominal(prev, input, dt, substeps);
    let e_nom = polar_error(&nominal, target);
    let g = scaled(g_p(e_prev), dt);
    let n = unmatched_direction(e_prev);
    let shift: [f64; 3] =
        core::array::from_fn(|r| g[r][0] * d_u[0] + g[r][1] * d_u[1] + d_perp * n[r]);
    let e_meas = PolarError::new(e_nom.rho + shift[0], e_nom.gamma + shift[1], e_nom.delta + shift[2]);
    TrainingTuple {
        time: 0.0,
        prev_state: prev,
        measured_state: pose_from_polar(target, &e_meas),
        optimal_state: *target,
        applied_input: input,
        optimal_input: input,
        dt,
    }
}
