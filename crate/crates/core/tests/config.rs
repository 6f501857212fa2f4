use drivesim_core::config::RootConfig;
use drivesim_core::reward::RewardConfig;
use drivesim_core::vehicle::Backend;
use drivesim_core::SimError;

#[test]
fn empty_file_gives_defaults() {
    let c = RootConfig::from_yaml("").unwrap();
    assert_eq!(c, RootConfig::default());
    assert_eq!((c.env.num_envs, c.env.num_agents_per_env, c.env.dynamics_mode), (256, 16, Backend::Dynamic));
    assert_eq!(c.seed, 42);
    assert!(!c.eval.invincible && !c.eval.random_goals.enabled);
}

#[test]
fn dynamics_mode_switches_backend() {
    let c = RootConfig::from_yaml("env:\n  dynamics_mode: bicycle\n").unwrap();
    assert_eq!(c.sim_config().backend, Backend::Bicycle);
}

#[test]
fn unknown_key_is_named() {
    match RootConfig::from_yaml("env:\n  num_env: 4\n") {
        Err(SimError::Config { path, message }) => {
            assert!(path.starts_with("env"), "{path}");
            assert!(message.contains("num_env"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    match RootConfig::from_yaml("reward:\n  goal_weight: lots\n") {
        Err(SimError::Config { path, .. }) => assert_eq!(path, "reward.goal_weight"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(RootConfig::from_yaml("env:\n  num_agents_per_env: 17\n"), Err(SimError::Config { .. })));
}

#[test]
fn round_trip_is_identity() {
    let mut c = RootConfig::default();
    c.env.num_envs = 8;
    c.eval.random_goals.enabled = true;
    c.reward.ttc_floor = 0.25;
    c.scenes.config_path = Some("scenes".into());
    let text = c.to_yaml();
    let back = RootConfig::from_yaml(&text).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_yaml(), text);
}

#[test]
fn every_reward_field_is_addressable() {
    let defaults = serde_json::to_value(RewardConfig::default()).unwrap();
    let keys: Vec<String> = defaults.as_object().unwrap().keys().cloned().collect();
    assert_eq!(keys.len(), 25);
    for key in keys {
        let old = defaults[&key].as_f64().unwrap();
        let new = if defaults[&key].is_u64() { old + 1.0 } else { old * 2.0 + 0.125 };
        let text = format!("reward:\n  {key}: {new}\n");
        let c = RootConfig::from_yaml(&text).unwrap();
        let got = serde_json::to_value(&c.reward).unwrap();
        assert_eq!(got[&key].as_f64().unwrap(), new, "{key}");
        for (other, v) in got.as_object().unwrap() {
            if *other != key {
                assert_eq!(*v, defaults[other], "{key} changed {other}");
            }
        }
    }
}

#[test]
fn relative_paths_resolve_against_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.yaml");
    std::fs::write(&path, "scenes:\n  config_path: pool\n").unwrap();
    let c = RootConfig::load(&path).unwrap();
    assert_eq!(c.scenes.config_path.unwrap(), dir.path().join("pool"));
}

#[test]
fn small_engine_from_config() {
    let c = RootConfig::from_yaml("env:\n  num_envs: 3\n  num_agents_per_env: 4\neval:\n  random_goals:\n    enabled: true\n    min_m: 20\n    max_m: 40\n").unwrap();
    let e = c.build_engine().unwrap();
    assert_eq!((e.num_worlds(), e.num_agents(), e.obs_dim()), (3, 4, 1929));
    for i in 0..e.num_slots() {
        if e.state.alive[i] {
            let d = (e.state.goal_pos[i][0] - e.state.start_pos[i][0]).hypot(e.state.goal_pos[i][1] - e.state.start_pos[i][1]);
            assert!(d <= 40.0 + 1e-9, "{d}");
        }
    }
}

#[test]
fn shipped_configs_load() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = RootConfig::load(root.join("default.yaml")).unwrap();
    assert_eq!(default, RootConfig::default());
    let scenes = RootConfig::load(root.join("scenes.yaml")).unwrap();
    let pool = scenes.scene_pool().unwrap();
    assert_eq!(pool.len(), 2);
    let small = RootConfig::load(root.join("small.yaml")).unwrap();
    assert_eq!(small.env.num_envs, 4);
}
