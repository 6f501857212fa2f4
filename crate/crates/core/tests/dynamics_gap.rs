use drivesim_core::engine::{Engine, SimConfig};
use drivesim_core::friction::{assign_friction, FrictionAssignment, Surface, MU_FLOOR};
use drivesim_core::policy::{LaneFollower, Policy};
use drivesim_core::reward::Reason;
use drivesim_core::synth::straight_scene;
use drivesim_core::vehicle::{Backend, VehicleParams, GRAVITY};
use drivesim_core::world::{build_world_batch, BuildParams, FillMode};

fn run(backend: Backend, friction: FrictionAssignment) -> (Reason, Vec<f64>) {
    let batch = build_world_batch(&[straight_scene("gap", 1, 50.0)], 1, FillMode::Fixed, 42, &BuildParams::default()).unwrap();
    let cfg = SimConfig {
        num_envs: 1,
        num_agents: 1,
        backend,
        ..SimConfig::default()
    };
    let mut e = Engine::new(batch, vec![friction], VehicleParams::default(), cfg).unwrap();
    let mut p = LaneFollower::default();
    let log = e.run_episode(|eng: &Engine| p.act(eng), true).unwrap();
    let speeds = log.records.iter().map(|r| r.vx.hypot(r.vy)).collect();
    (log.reasons[0], speeds)
}

#[test]
fn hard_rain_friction_is_the_floor() {
    let f = assign_friction(Surface::SMA, 2.0).unwrap();
    assert_eq!(f.mu_static, MU_FLOOR);
    assert_eq!(MU_FLOOR, 1e-3);
}

#[test]
fn both_backends_reach_a_dry_goal() {
    for backend in [Backend::Bicycle, Backend::Dynamic] {
        let (reason, _) = run(backend, FrictionAssignment::dry(Surface::AC));
        assert_eq!(reason, Reason::Goal, "{backend:?}");
    }
}

#[test]
fn hard_rain_separates_the_backends() {
    let rain = assign_friction(Surface::SMA, 2.0).unwrap();
    let (bicycle, _) = run(Backend::Bicycle, rain);
    let (dynamic, speeds) = run(Backend::Dynamic, rain);
    assert_eq!(bicycle, Reason::Goal);
    assert_eq!(dynamic, Reason::Timeout);
    // traction-limited: no control step accelerates faster than mu g
    let dt = SimConfig::default().control_dt();
    let bound = rain.mu_static * GRAVITY * 1.05;
    let mut prev = 0.0;
    for v in speeds {
        assert!((v - prev) / dt <= bound, "{} > {bound}", (v - prev) / dt);
        prev = v;
    }
}
