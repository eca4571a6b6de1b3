//! Acceptance criteria 1–8. Each criterion prints one PASS/FAIL line.

mod common;

use std::time::{Duration, Instant};

use common::{adversary, step, v_hat};
use navlab_core::conformal::{
    calibrate, extract_all, synthesize_tuple, CalibrationConfig, ExtractionConfig, TrainingTuple,
};
use navlab_core::controller::{iss_weight_bound, tube_radii, DiscrepancyBounds, Gains, TubeParams};
use navlab_core::dynamics::{PolarError, Pose, VelocityCmd};
use navlab_core::gridmap::{
    inflate, query_cost, GridGeometry, InflationConfig, Obstacle, ObstacleSet, OccupancyGrid,
};
use navlab_core::mppi::{
    aggregate, normalized_weights, plan, reference_positions, CostWeights, MppiParams, PlanRequest,
};
use navlab_core::path::{Circle, ReferencePath};
use navlab_core::sim::{
    generate_training, metrics, run_tracking_experiment_observed, DisturbanceModel, Scenario, TRAINING_LAP_TIMES,
};
use navlab_core::Limits;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = f();
    let elapsed = t0.elapsed();
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let pass = out.pass && in_time;
    println!(
        "criterion {n} [{name}]: {} ({}; {:.2} s{})",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        if in_time { "" } else { ", over time budget" }
    );
    pass
}

// Printed bounds and radii: (config, ε, Z, Z⊥, r0, r_ΔT).
const TABLE: [(&str, f64, f64, f64, f64, f64); 12] = [
    ("A", 0.001, 0.710, 0.448, 0.252, 0.255),
    ("A", 0.005, 0.423, 0.025, 0.090, 0.090),
    ("A", 0.01, 0.393, 0.019, 0.077, 0.077),
    ("B", 0.001, 2.153, 0.034, 2.318, 2.320),
    ("B", 0.005, 0.419, 0.030, 0.088, 0.088),
    ("B", 0.01, 0.381, 0.026, 0.073, 0.073),
    ("C", 0.001, 1.113, 0.032, 0.619, 0.620),
    ("C", 0.005, 0.413, 0.027, 0.085, 0.085),
    ("C", 0.01, 0.369, 0.020, 0.068, 0.068),
    ("D", 0.001, 1.878, 0.095, 1.763, 1.768),
    ("D", 0.005, 0.429, 0.032, 0.092, 0.092),
    ("D", 0.01, 0.401, 0.031, 0.080, 0.081),
];

fn criterion_1() -> Outcome {
    let tube = TubeParams::default();
    let mut worst: f64 = 0.0;
    let mut worst_cell = String::new();
    for &(cfg, eps, z, zp, r0, rdt) in &TABLE {
        let radii = match tube_radii(&DiscrepancyBounds::new(z, zp, eps, 3000), &tube) {
            Ok(r) => r,
            Err(e) => return Outcome { pass: false, detail: format!("{cfg} ε={eps}: {e}") },
        };
        for (got, want) in [(radii.r0, r0), (radii.r_dt, rdt)] {
            let rel = (got - want).abs() / want;
            if rel > worst {
                worst = rel;
                worst_cell = format!("{cfg} ε={eps}: {got:.4} vs {want:.3}");
            }
        }
    }
    Outcome { pass: worst <= 0.05, detail: format!("max relative error {:.2}% at {worst_cell}", worst * 100.0) }
}

fn synthetic_tuples(rng: &mut ChaCha8Rng, n: usize) -> Vec<TrainingTuple> {
    (0..n)
        .map(|_| {
            let target = Pose::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let e = PolarError::new(rng.random_range(0.2..1.0), rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
            let input = VelocityCmd::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let mag = rng.random_range(0.0..0.4);
            let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let d_perp = rng.random_range(-0.03..0.03);
            synthesize_tuple(&target, &e, input, [mag * dir.cos(), mag * dir.sin()], d_perp, 0.05, 5)
        })
        .collect()
}

fn criterion_2() -> Outcome {
    let extraction = ExtractionConfig::default();
    let mut detail = Vec::new();
    let mut pass = true;
    for eps in [0.01f64, 0.05] {
        let margin = eps + 3.0 * (eps * (1.0 - eps) / 2000.0).sqrt();
        let mut good = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let train = synthetic_tuples(&mut rng, 3000);
            let test = synthetic_tuples(&mut rng, 2000);
            let cal = match calibrate(&train, &CalibrationConfig::new(eps, 3000, seed), &extraction) {
                Ok(c) => c,
                Err(e) => return Outcome { pass: false, detail: format!("calibration failed: {e}") },
            };
            let (held, _) = extract_all(&test, &extraction);
            let n = held.len() as f64;
            let over_m = held.iter().filter(|s| s.matched_norm > cal.bounds.z_matched).count() as f64 / n;
            let over_u = held.iter().filter(|s| s.unmatched_mag > cal.bounds.z_unmatched).count() as f64 / n;
            if over_m <= margin && over_u <= margin {
                good += 1;
            }
        }
        pass &= good >= 47;
        detail.push(format!("ε={eps}: {good}/50 seeds within {margin:.4}"));
    }
    Outcome { pass, detail: detail.join(", ") }
}

fn square_distance(c: [f64; 2], o: [f64; 2], r: f64) -> f64 {
    let gx = ((c[0] - o[0]).abs() - 0.5 * r).max(0.0);
    let gy = ((c[1] - o[1]).abs() - 0.5 * r).max(0.0);
    gx.hypot(gy)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0usize;
    let mut queries = 0usize;
    for _ in 0..100 {
        let geo = GridGeometry {
            width: rng.random_range(1..=50),
            height: rng.random_range(1..=50),
            resolution: rng.random_range(0.02..0.2),
            origin: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
        };
        let n = rng.random_range(0..=5usize);
        let density: f64 = rng.random_range(0.0..0.1);
        let mut grid = OccupancyGrid::filled(geo, 0);
        for iy in 0..geo.height {
            for ix in 0..geo.width {
                let v = if rng.random::<f64>() < density {
                    [51u8, 80, 100][rng.random_range(0..3)]
                } else {
                    [0u8, 20, 50][rng.random_range(0..3)]
                };
                grid.set(ix, iy, v);
            }
        }
        let map = inflate(&grid, n, &InflationConfig::default(), 13_500.0);
        let r = geo.resolution;
        let reach = n as f64 * r;
        let occupied: Vec<[f64; 2]> = (0..geo.height)
            .flat_map(|iy| (0..geo.width).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| grid.get(ix, iy) > 50)
            .map(|(ix, iy)| geo.center(ix, iy))
            .collect();
        let x0 = geo.origin[0] - geo.width as f64 * r / 2.0;
        let y0 = geo.origin[1] - geo.height as f64 * r / 2.0;
        for iy in 0..geo.height {
            for ix in 0..geo.width {
                let c = [x0 + (ix as f64 + 0.5) * r, y0 + (iy as f64 + 0.5) * r];
                let oracle = occupied.iter().any(|&o| square_distance(c, o, r) <= reach + 1e-9 * r);
                let jitter = [c[0] + rng.random_range(-0.45..0.45) * r, c[1] + rng.random_range(-0.45..0.45) * r];
                for p in [c, jitter] {
                    queries += 1;
                    if (query_cost(&map, p) >= map.lethal) != oracle {
                        mismatches += 1;
                    }
                }
            }
        }
        for _ in 0..20 {
            let side = rng.random_range(0..4);
            let t: f64 = rng.random_range(0.0..1.0);
            let (w, h) = (geo.width as f64 * r, geo.height as f64 * r);
            let p = match side {
                0 => [x0 - 0.01 - t, y0 + t * h],
                1 => [x0 + w + 0.01 + t, y0 + t * h],
                2 => [x0 + t * w, y0 - 0.01 - t],
                _ => [x0 + t * w, y0 + h + 0.01 + t],
            };
            queries += 1;
            if query_cost(&map, p) < map.lethal {
                mismatches += 1;
            }
        }
    }
    Outcome { pass: mismatches == 0, detail: format!("{mismatches} mismatches over {queries} queries") }
}

fn criterion_4() -> Outcome {
    let z = 0.423;
    let bound = iss_weight_bound(&Gains::default(), z, 0.0, 4000);
    let gains = Gains { lambda1: 0.5 * bound, ..Gains::default() };
    let level = z * z / 4.0;
    let radius = (2.0 * level).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rho_dz = Limits::default().rho_dz;
    let mut converged = 0;
    let mut peak_ratio: f64 = 0.0;
    for trial in 0..100 {
        let phi: f64 = rng.random_range(-1.55..1.55);
        let r = if trial % 2 == 0 { radius } else { radius * rng.random::<f64>().sqrt() };
        let mut e = [r * phi.cos(), r * phi.sin()];
        let random_dir = trial % 4 == 3;
        let mut dir_rng = ChaCha8Rng::seed_from_u64(40 + trial as u64);
        for _ in 0..10_000 {
            e = if random_dir {
                let a: f64 = dir_rng.random_range(0.0..std::f64::consts::TAU);
                let m = z * dir_rng.random::<f64>();
                step(e, 1e-3, &gains, z, &move |_| [m * a.cos(), m * a.sin()])
            } else {
                step(e, 1e-3, &gains, z, &|x| adversary(x, z))
            };
            peak_ratio = peak_ratio.max(v_hat(e) / level);
            // Inside the dead zone the error counts as converged.
            if random_dir && e[0] < rho_dz {
                converged += 1;
                break;
            }
        }
    }
    Outcome {
        pass: peak_ratio <= 1.0 + 1e-6,
        detail: format!(
            "λ1 = {:.4}, peak V/(Z²/4) = {peak_ratio:.6}, {converged} trials reached the dead zone",
            gains.lambda1
        ),
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sum: f64 = 0.0;
    for _ in 0..100_000 {
        let n = rng.random_range(1..=64);
        let lambda = 10f64.powf(rng.random_range(-9.0..3.0));
        let exps: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..20_000.0) / lambda).collect();
        let w = normalized_weights(&exps);
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Outcome { pass: false, detail: "negative or NaN weight".into() };
        }
        worst_sum = worst_sum.max((w.iter().sum::<f64>() - 1.0).abs());
    }

    let params = MppiParams { lambda: 1e-9, ..MppiParams::default() };
    let nominal = vec![VelocityCmd::default(); 10];
    let mut argmin_ok = true;
    for _ in 0..200 {
        let perturbations: Vec<Vec<[f64; 2]>> = (0..50)
            .map(|_| {
                (0..10)
                    .map(|_| {
                        let a: f64 = StandardNormal.sample(&mut rng);
                        let b: f64 = StandardNormal.sample(&mut rng);
                        [a, b]
                    })
                    .collect()
            })
            .collect();
        let costs: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..100.0)).collect();
        let best = (0..50).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap();
        let (u, _) = aggregate(&nominal, &perturbations, &costs, &params);
        for (k, uk) in u.iter().enumerate() {
            let d = perturbations[best][k];
            argmin_ok &= (uk.v - d[0]).abs() < 1e-12 && (uk.omega - d[1]).abs() < 1e-12;
        }
    }

    let mut grid = OccupancyGrid::filled(GridGeometry::default(), 0);
    let obstacles = ObstacleSet::new(vec![Obstacle::centered_box([1.0, 0.1], [0.3, 0.3])]);
    for iy in 0..grid.geometry.height {
        for ix in 0..grid.geometry.width {
            if obstacles.contains(grid.geometry.center(ix, iy)) {
                grid.set(ix, iy, 100);
            }
        }
    }
    let limits = Limits::default();
    let params = MppiParams { seed: 77, ..MppiParams::default() };
    let weights = CostWeights::default().resolved(&params, &limits);
    let map = inflate(&grid, 10, &InflationConfig::default(), weights.cap);
    let path = Circle { center: [0.0, 1.0], radius: 1.0, rate: 0.5, phase: -std::f64::consts::FRAC_PI_2 };
    let reference = reference_positions(&path, 0.0, params.horizon, params.dt);
    let start = path.flat(0.0).unwrap().0;
    let warm = vec![VelocityCmd::new(0.5, 0.5); params.horizon];
    let request = PlanRequest { state: start, reference: &reference, costmap: &map, r0: 0.2 };
    let a = plan(&request, &warm, &params, &weights, &limits);
    let b = plan(&request, &warm, &params, &weights, &limits);
    let bits = |p: &navlab_core::mppi::PlanResult| -> Vec<u64> {
        p.states
            .iter()
            .flat_map(|s| [s.x.to_bits(), s.y.to_bits(), s.theta.to_bits()])
            .chain(p.inputs.iter().flat_map(|u| [u.v.to_bits(), u.omega.to_bits()]))
            .chain([p.total_cost.to_bits()])
            .collect()
    };
    let deterministic = bits(&a) == bits(&b) && a == b;

    Outcome {
        pass: worst_sum <= 1e-12 && argmin_ok && deterministic,
        detail: format!(
            "max |Σw − 1| = {worst_sum:.1e}, argmin selected: {argmin_ok}, bit-identical replan: {deterministic}"
        ),
    }
}

struct SafetyRuns {
    inflated_contacts: Vec<usize>,
    baseline_contacts: Vec<usize>,
    buffer_cells: usize,
    r_dt: f64,
    certified_cycles: usize,
    false_certificates: usize,
    strict_square_hits: usize,
    cycles: usize,
}

fn safety_runs() -> Result<SafetyRuns, String> {
    let model = DisturbanceModel::acceptance();
    let data = generate_training(&model, &TRAINING_LAP_TIMES, 3, 0.05);
    let cal = calibrate(&data, &CalibrationConfig::new(0.01, 3000, 1), &ExtractionConfig::default())
        .map_err(|e| e.to_string())?;
    let mut out = SafetyRuns {
        inflated_contacts: Vec::new(),
        baseline_contacts: Vec::new(),
        buffer_cells: 0,
        r_dt: 0.0,
        certified_cycles: 0,
        false_certificates: 0,
        strict_square_hits: 0,
        cycles: 0,
    };
    for seed in 0..5u64 {
        let scenario = Scenario::blocked_figure8(Some(cal.bounds), seed);
        let mut certified = 0;
        let mut false_cert = 0;
        let mut strict = 0;
        let mut cycles = 0;
        let log = run_tracking_experiment_observed(&scenario, |view| {
            cycles += 1;
            if !view.plan.certified() {
                return;
            }
            certified += 1;
            let reach = view.radii.r_dt + view.r_ego;
            let geo = view.grid.geometry;
            let half = 0.5 * geo.resolution;
            let mut centre_hit = false;
            let mut square_hit = false;
            for s in &view.plan.states[1..] {
                for iy in 0..geo.height {
                    for ix in 0..geo.width {
                        if view.grid.get(ix, iy) <= 50 {
                            continue;
                        }
                        let c = geo.center(ix, iy);
                        let (dx, dy) = (s.x - c[0], s.y - c[1]);
                        if dx.hypot(dy) <= reach {
                            centre_hit = true;
                        }
                        let gx = (dx.abs() - half).max(0.0);
                        let gy = (dy.abs() - half).max(0.0);
                        if gx.hypot(gy) <= reach {
                            square_hit = true;
                        }
                    }
                }
            }
            false_cert += centre_hit as usize;
            strict += square_hit as usize;
        })
        .map_err(|e| e.to_string())?;
        out.buffer_cells = log.buffer_cells;
        out.r_dt = log.radii.r_dt;
        out.inflated_contacts.push(metrics(&log).contacts);
        out.certified_cycles += certified;
        out.false_certificates += false_cert;
        out.strict_square_hits += strict;
        out.cycles += cycles;

        let mut baseline = Scenario::blocked_figure8(Some(cal.bounds), seed);
        baseline.buffer_override = Some(0);
        let log = run_tracking_experiment_observed(&baseline, |_| {}).map_err(|e| e.to_string())?;
        out.baseline_contacts.push(metrics(&log).contacts);
    }
    Ok(out)
}

#[test]
fn acceptance() {
    let mut all = true;
    all &= report(1, "tube radii", Some(Duration::from_secs(1)), criterion_1);
    all &= report(2, "conformal coverage", Some(Duration::from_secs(120)), criterion_2);
    all &= report(3, "cost-map lethal iff", Some(Duration::from_secs(30)), criterion_3);
    all &= report(4, "ISS invariance", Some(Duration::from_secs(60)), criterion_4);
    all &= report(5, "MPPI sanity", Some(Duration::from_secs(60)), criterion_5);

    let t0 = Instant::now();
    let runs = safety_runs();
    let elapsed = t0.elapsed();
    all &= report(6, "closed-loop safety", None, || match &runs {
        Ok(r) => {
            let ok = r.inflated_contacts.iter().all(|&c| c == 0)
                && r.baseline_contacts.iter().all(|&c| c >= 1)
                && elapsed <= Duration::from_secs(300);
            Outcome {
                pass: ok,
                detail: format!(
                    "N_ε = {}, r_ΔT = {:.3}, contacts with buffer {:?}, without {:?}, {:.1} s",
                    r.buffer_cells,
                    r.r_dt,
                    r.inflated_contacts,
                    r.baseline_contacts,
                    elapsed.as_secs_f64()
                ),
            }
        }
        Err(e) => Outcome { pass: false, detail: e.clone() },
    });
    all &= report(7, "certificate soundness", None, || match &runs {
        Ok(r) => Outcome {
            pass: r.certified_cycles >= 500 && r.false_certificates == 0,
            detail: format!(
                "{} certified of {} cycles, {} false, {} within reach of an occupied square",
                r.certified_cycles, r.cycles, r.false_certificates, r.strict_square_hits
            ),
        },
        Err(e) => Outcome { pass: false, detail: e.clone() },
    });

    all &= report(8, "circle flatness", None, || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let radius = rng.random_range(0.1..5.0);
            let mut rate = rng.random_range(0.05..2.0);
            if rng.random::<bool>() {
                rate = -rate;
            }
            let path = Circle {
                center: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                radius,
                rate,
                phase: rng.random_range(-3.0..3.0),
            };
            for _ in 0..10 {
                let t = rng.random_range(0.0..100.0);
                let Some((_, u)) = path.flat(t) else { return Outcome { pass: false, detail: "no flat input".into() } };
                worst = worst.max((u.v - radius * rate.abs()).abs()).max((u.omega - rate).abs());
            }
        }
        Outcome { pass: worst <= 1e-9, detail: format!("max error {worst:.1e}") }
    });
    assert!(all, "acceptance criteria failed");
}
