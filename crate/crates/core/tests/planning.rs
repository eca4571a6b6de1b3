use navlab_core::assist::{assist_step, project_joystick, AssistMode, AssistParams, JoystickCmd};
use navlab_core::controller::{ErrorForm, Gains};
use navlab_core::gridmap::{
    inflate, rasterize, DiscrepancyCostMap, GridGeometry, InflationConfig, Obstacle, ObstacleSet, OccupancyGrid,
};
use navlab_core::mppi::{plan, reference_positions, CostWeights, MppiParams, PlanRequest};
use navlab_core::path::Line;
use navlab_core::{Limits, Pose, VelocityCmd};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LETHAL: f64 = 13_500.0;

fn map_of(obstacles: Vec<Obstacle>, n: usize) -> (OccupancyGrid, DiscrepancyCostMap) {
    let grid = rasterize(&ObstacleSet::new(obstacles), GridGeometry::default());
    let map = inflate(&grid, n, &InflationConfig::default(), LETHAL);
    (grid, map)
}

fn buffered_hit(grid: &OccupancyGrid, states: &[Pose], reach: f64) -> bool {
    let geo = grid.geometry;
    states.iter().any(|s| {
        (0..geo.height).any(|iy| {
            (0..geo.width).any(|ix| {
                if grid.get(ix, iy) <= 50 {
                    return false;
                }
                let c = geo.center(ix, iy);
                (s.x - c[0]).hypot(s.y - c[1]) <= reach
            })
        })
    })
}

fn gap_wall(center: f64, half_gap: f64) -> Vec<Obstacle> {
    vec![
        Obstacle::Box { min: [1.0, center + half_gap], max: [1.2, 3.0] },
        Obstacle::Box { min: [1.0, -3.0], max: [1.2, center - half_gap] },
    ]
}

#[test]
fn plans_through_offset_gap() {
    let limits = Limits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut passed = 0;
    for seed in 0..100u64 {
        let center = rng.random_range(-0.3..0.3);
        let (grid, map) = map_of(gap_wall(center, 0.6), 5);
        let params = MppiParams { seed, ..MppiParams::default() };
        let weights = CostWeights::default().resolved(&params, &limits);
        let map = DiscrepancyCostMap { lethal: weights.cap, ..map };
        let path = Line { start: [0.0, 0.0], velocity: [1.2, 0.0] };
        let reference = reference_positions(&path, 0.0, params.horizon, params.dt);
        let warm = vec![VelocityCmd::new(1.2, 0.0); params.horizon];
        let request = PlanRequest { state: Pose::new(0.0, 0.0, 0.0), reference: &reference, costmap: &map, r0: 0.1 };
        let result = plan(&request, &warm, &params, &weights, &limits);
        let end = result.states.last().unwrap();
        if result.certified() && end.x > 1.3 && !buffered_hit(&grid, &result.states[1..], 5.0 * 0.05) {
            passed += 1;
        }
    }
    assert!(passed >= 95, "{passed}/100");
}

fn wall_ahead() -> Vec<Obstacle> {
    vec![Obstacle::Box { min: [1.0, -1.5], max: [1.2, 1.5] }]
}

#[test]
fn full_speed_at_wall_is_overridden() {
    let limits = Limits::default();
    let (grid, map) = map_of(wall_ahead(), 10);
    let joy = JoystickCmd::new(2.0, 0.0);
    let params = AssistParams { seed: 4, ..AssistParams::default() };
    let d = assist_step(Pose::new(0.0, 0.0, 0.0), &joy, &map, 0.09, &params, &Gains::default(), ErrorForm::Reduced, &limits);
    assert_eq!(d.mode, AssistMode::Override);
    assert!(d.joystick_cost >= LETHAL);
    let plan = d.plan.expect("override plan");
    assert!(plan.certified() && !d.emergency_stop);
    assert!(!buffered_hit(&grid, &plan.states[1..], 10.0 * 0.05));
    assert!(d.command.v < 2.0);
}

#[test]
fn rotation_near_wall_passes_through() {
    let limits = Limits::default();
    let (_, map) = map_of(wall_ahead(), 10);
    let joy = JoystickCmd::new(0.0, 1.2);
    let d = assist_step(Pose::new(0.3, 0.0, 0.0), &joy, &map, 0.09, &AssistParams::default(), &Gains::default(), ErrorForm::Reduced, &limits);
    assert_eq!(d.mode, AssistMode::PassThrough);
    assert_eq!(d.command, VelocityCmd::new(0.0, 1.2));
    assert!(d.projected.iter().all(|p| p.x == 0.3 && p.y == 0.0));
}

#[test]
fn larger_buffer_never_relaxes_override() {
    let limits = Limits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let params = AssistParams { sample_count: 200, ..AssistParams::default() };
    for _ in 0..60 {
        let c = [rng.random_range(0.3..2.5), rng.random_range(-1.5..1.5)];
        let obstacles = vec![Obstacle::centered_box(c, [rng.random_range(0.1..0.6), rng.random_range(0.1..0.6)])];
        let grid = rasterize(&ObstacleSet::new(obstacles), GridGeometry::default());
        let joy = JoystickCmd::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mut overridden = false;
        for n in 0..=12 {
            let map = inflate(&grid, n, &InflationConfig::default(), LETHAL);
            let d = assist_step(Pose::new(0.0, 0.0, 0.0), &joy, &map, 0.09, &params, &Gains::default(), ErrorForm::Reduced, &limits);
            let now = d.mode == AssistMode::Override;
            assert!(!(overridden && !now), "buffer {n} relaxed an override");
            overridden |= now;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pass_through_returns_clamped_joystick(v in -4.0f64..4.0, w in -4.0f64..4.0, x in -1.0f64..0.5) {
        let limits = Limits::default();
        let (_, map) = map_of(wall_ahead(), 10);
        let joy = JoystickCmd::new(v, w);
        let params = AssistParams { sample_count: 100, ..AssistParams::default() };
        let d = assist_step(Pose::new(x, 0.0, 0.0), &joy, &map, 0.09, &params, &Gains::default(), ErrorForm::Reduced, &limits);
        if d.mode == AssistMode::PassThrough {
            prop_assert_eq!(d.command, joy.clamped(&limits));
            prop_assert!(d.joystick_cost < LETHAL);
        } else {
            let traj = project_joystick(Pose::new(x, 0.0, 0.0), &joy, params.horizon, limits.dt);
            prop_assert!(traj.iter().skip(1).any(|p| map.is_lethal(p.position())) || d.joystick_cost >= LETHAL);
        }
    }
}
