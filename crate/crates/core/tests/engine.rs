use drivesim_core::engine::{Engine, SimConfig, PARKING};
use drivesim_core::friction::{FrictionAssignment, Surface};
use drivesim_core::reward::Reason;
use drivesim_core::scenario::{AgentRecord, ScenarioSpec};
use drivesim_core::synth::{junction_scene, straight_road, straight_scene};
use drivesim_core::vehicle::{Backend, VehicleParams};
use drivesim_core::world::{build_world_batch, BuildParams, FillMode};
use drivesim_core::SimError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn engine(scenes: &[ScenarioSpec], worlds: usize, agents: usize, tweak: impl FnOnce(&mut SimConfig)) -> Engine {
    let batch = build_world_batch(scenes, worlds, FillMode::Fixed, 42, &BuildParams::default()).unwrap();
    let mut cfg = SimConfig {
        num_envs: worlds,
        num_agents: agents,
        ..SimConfig::default()
    };
    tweak(&mut cfg);
    Engine::new(batch, vec![FrictionAssignment::dry(Surface::AC); worlds], VehicleParams::default(), cfg).unwrap()
}

fn random_actions(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|_| [rng.gen_range(-0.2..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.4)]).collect()
}

fn agent(x: f64, y: f64, gx: f64) -> AgentRecord {
    AgentRecord {
        id: format!("{x}"),
        start: [x, y],
        start_heading: 0.0,
        goal: [gx, y],
        length: 4.0,
        width: 2.0,
    }
}

#[test]
fn inactive_slots_follow_valid_spawns() {
    let mut a = straight_road("a", 100.0, 2, 1.0);
    a.agents = vec![agent(-30.0, 1.75, 0.0), agent(-30.0, -1.75, 0.0), agent(-10.0, 1.75, 20.0)];
    let mut b = straight_road("b", 100.0, 2, 1.0);
    b.agents = vec![agent(-30.0, 1.75, 0.0), agent(0.0, 0.0, 1.0)];
    let e = engine(&[a, b], 2, 3, |_| {});
    assert_eq!(e.state.alive, vec![true, true, true, true, false, false]);
    assert_eq!([e.state.x[4], e.state.y[4]], PARKING);
    assert!(e.obs_row(4).iter().all(|v| *v == 0.0));
}

#[test]
fn zero_actions_keep_agents_still() {
    let mut e = engine(&[junction_scene("j", 8, 3)], 2, 8, |_| {});
    let before = e.state.clone();
    let out = e.step(&vec![[0.0; 3]; 16]).unwrap();
    assert!(out.dones.iter().all(|d| !d));
    for i in 0..16 {
        assert!((e.state.x[i] - before.x[i]).abs() < 1e-6);
        assert!(e.state.vx[i].abs() < 1e-6);
    }
}

#[test]
fn non_finite_action_names_slot() {
    let mut e = engine(&[junction_scene("j", 4, 3)], 2, 4, |_| {});
    let mut acts = vec![[0.0; 3]; 8];
    acts[6][1] = f64::NAN;
    match e.step(&acts) {
        Err(SimError::NonFiniteAction { world, agent }) => assert_eq!((world, agent), (1, 2)),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(e.step(&acts[..5]), Err(SimError::Shape(_))));
}

#[test]
fn batched_and_reference_paths_agree() {
    let scenes = [junction_scene("j1", 16, 1), junction_scene("j2", 16, 2), straight_scene("s", 4, 60.0)];
    for backend in [Backend::Dynamic, Backend::Bicycle] {
        let mut fast = engine(&scenes, 8, 16, |c| c.backend = backend);
        let mut slow = engine(&scenes, 8, 16, |c| c.backend = backend);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..60 {
            let acts = random_actions(&mut rng, 128);
            let a = fast.step(&acts).unwrap();
            let b = slow.reference_step(&acts).unwrap();
            assert_eq!(a, b);
            assert_eq!(fast.obs(), slow.obs());
            assert_eq!(fast.state, slow.state);
        }
    }
}

#[test]
fn worker_pool_matches_inline() {
    let scenes = [junction_scene("j1", 16, 5)];
    let mut one = engine(&scenes, 4, 16, |_| {});
    let mut many = engine(&scenes, 4, 16, |c| c.workers = 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let acts = random_actions(&mut rng, 64);
        assert_eq!(one.step(&acts).unwrap(), many.step(&acts).unwrap());
        assert_eq!(one.obs(), many.obs());
    }
}

#[test]
fn reset_restores_fresh_state() {
    let scenes = [junction_scene("j", 8, 11)];
    let fresh = engine(&scenes, 2, 8, |_| {});
    let mut e = engine(&scenes, 2, 8, |_| {});
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..30 {
        e.step(&random_actions(&mut rng, 16)).unwrap();
    }
    e.reset();
    assert_eq!(e.state, fresh.state);
    assert_eq!(e.obs(), fresh.obs());

    let snapshot = e.state.clone();
    let n = e.num_slots();
    e.teleport_reset(&vec![false; n], &vec![([0.0, 0.0], 0.0); n], &vec![[0.0, 0.0]; n]).unwrap();
    assert_eq!(e.state, snapshot);
}

#[test]
fn collision_warmup_lasts_exactly_24_steps() {
    let mut s = straight_road("w", 120.0, 2, 1.0);
    // two overlapping agents parked on the same lane
    s.agents = vec![agent(0.0, 1.75, 60.0), agent(2.0, 1.75, 60.0)];
    let mut e = engine(&[s], 1, 2, |_| {});
    for step in 1..=24 {
        let out = e.step(&[[0.0; 3]; 2]).unwrap();
        let collided = out.events.iter().any(|ev| ev.kind == Reason::Collision);
        assert_eq!(collided, step == 24, "step {step}");
    }
    assert_eq!(e.state.reason, vec![Reason::Collision; 2]);

    // restarting both slots restarts the window
    let n = e.num_slots();
    let starts = vec![([10.0, 1.75], 0.0), ([12.0, 1.75], 0.0)];
    e.teleport_reset(&vec![true; n], &starts, &vec![[60.0, 1.75]; 2]).unwrap();
    let mut first = None;
    for step in 1..=30 {
        let out = e.step(&[[0.0; 3]; 2]).unwrap();
        if first.is_none() && out.events.iter().any(|ev| ev.kind == Reason::Collision) {
            first = Some(step);
        }
    }
    assert_eq!(first, Some(24));
}

#[test]
fn full_throttle_reaches_goal_in_both_backends() {
    let mut s = straight_road("g", 120.0, 1, 1.0);
    s.agents = vec![agent(-10.0, 0.0, 10.0)];
    for backend in [Backend::Dynamic, Backend::Bicycle] {
        let mut e = engine(&[s.clone()], 1, 1, |c| c.backend = backend);
        let log = e.run_episode(|_| vec![[1.0, 0.0, 0.0]], true).unwrap();
        assert_eq!(log.reasons[0], Reason::Goal, "{backend:?}");
        assert!(log.steps < 1500);
        assert_eq!(log.records.len(), log.steps as usize);
        let last = log.records.last().unwrap();
        assert!(last.done && last.terms.goal == 45.0);
        assert!((last.x - 10.0).hypot(last.y) <= 3.0);
    }
}

#[test]
fn idle_episode_times_out() {
    let mut s = straight_road("t", 120.0, 1, 1.0);
    s.agents = vec![agent(-10.0, 0.0, 30.0)];
    let mut e = engine(&[s], 1, 1, |_| {});
    let log = e.run_episode(|_| vec![[0.0; 3]], true).unwrap();
    assert_eq!(log.steps, 1500);
    assert_eq!(log.reasons[0], Reason::Timeout);
    assert_eq!(log.records.len(), 1500);
    // 60 Hz resampling doubles the control rate
    let rs = log.resample(0, 0, 60.0);
    assert_eq!(rs.len(), 2 * 1499 + 1);
}

#[test]
fn invincible_mode_logs_without_terminating() {
    let mut s = straight_road("i", 120.0, 2, 1.0);
    s.agents = vec![agent(0.0, 1.75, 60.0), agent(2.0, 1.75, 60.0)];
    let mut e = engine(&[s], 1, 2, |c| {
        c.invincible = true;
        c.episode_len = 40;
    });
    let log = e.run_episode(|_| vec![[0.0; 3]; 2], true).unwrap();
    assert_eq!(log.steps, 40);
    assert_eq!(log.reasons, vec![Reason::Timeout; 2]);
    assert_eq!(log.events.iter().filter(|ev| ev.kind == Reason::Collision).count(), 2 * (40 - 23));
    for r in &log.records {
        assert_eq!([r.terms.goal, r.terms.collision, r.terms.crash, r.terms.lane_forbidden], [0.0; 4]);
        assert_eq!(r.done, r.step == 40);
    }
}

#[test]
fn terminated_agents_vanish_from_neighbours() {
    let mut s = straight_road("n", 160.0, 2, 1.0);
    s.agents = vec![agent(-20.0, 1.75, -12.0), agent(-15.0, -1.75, 60.0)];
    let mut e = engine(&[s], 1, 2, |_| {});
    let dim = e.obs_dim();
    let nb = dim - 24 * 7;
    assert!(e.obs_row(1)[nb..nb + 7].iter().any(|v| *v != 0.0));
    let mut done_step = None;
    for step in 0..200 {
        let out = e.step(&[[1.0, 0.0, 0.0], [0.0; 3]]).unwrap();
        if out.dones[0] {
            done_step = Some(step);
            break;
        }
    }
    assert!(done_step.is_some());
    assert_eq!(e.state.reason[0], Reason::Goal);
    assert!(e.obs_row(1)[nb..].iter().all(|v| *v == 0.0));
    let out = e.step(&[[1.0, 0.0, 0.0], [0.0; 3]]).unwrap();
    assert_eq!(out.rewards[0], 0.0);
    assert!(out.events.iter().all(|ev| ev.agent == 1));
}

#[test]
fn runs_are_deterministic() {
    let scenes = [junction_scene("j", 16, 8)];
    let run = || {
        let mut e = engine(&scenes, 2, 16, |_| {});
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut outs = Vec::new();
        for _ in 0..50 {
            outs.push(e.step(&random_actions(&mut rng, 32)).unwrap());
        }
        (outs, e.state.flat())
    };
    assert_eq!(run(), run());
}
