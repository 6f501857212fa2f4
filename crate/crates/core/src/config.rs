//! Hierarchical YAML configuration.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;
use crate::engine::{Engine, SimConfig, MAX_AGENTS};
use crate::error::{Result, SimError};
use crate::friction::{sample_weather, FrictionModel, WeatherConfig};
use crate::goals::{resample_goals, GoalRange};
use crate::obs::ObsConfig;
use crate::reward::RewardConfig;
use crate::scenario::{load_scenario, reject_degenerate_scene, ScenarioSpec, SceneFilterParams, SceneVerdict};
use crate::synth::{bench_scene, junction_scene, straight_scene};
use crate::sysid::CemConfig;
use crate::vehicle::{Backend, VehicleParams};
use crate::world::{build_world_batch, BuildParams, FillMode};

/// Deserialize YAML, reporting failures with the key path of the offending
/// field. An empty document yields the type's defaults.
pub fn from_yaml_str<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    let body = if text.trim().is_empty() { "{}" } else { text };
    let de = serde_yaml::Deserializer::from_str(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        SimError::Config {
            path: if path == "." { context.to_string() } else { path },
            message,
        }
    })
}

/// Environment shape and stepping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub num_envs: usize,
    pub num_agents_per_env: usize,
    pub dynamics_mode: Backend,
    pub physics_dt: f64,
    pub decimation: usize,
    pub episode_len: u32,
    pub workers: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        let s = SimConfig::default();
        EnvSection {
            num_envs: s.num_envs,
            num_agents_per_env: s.num_agents,
            dynamics_mode: s.backend,
            physics_dt: s.physics_dt,
            decimation: s.decimation,
            episode_len: s.episode_len,
            workers: s.workers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Junction,
    Straight,
    Bench,
}

/// Where scenes come from: a scenario file or directory of them, otherwise
/// a procedural generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenesSection {
    pub config_path: Option<PathBuf>,
    pub generator: Generator,
    /// Distinct generated scenes in the pool.
    pub num_scenes: usize,
    pub fill_mode: FillMode,
    pub build: BuildParams,
    pub filter: SceneFilterParams,
}

impl Default for ScenesSection {
    fn default() -> Self {
        ScenesSection {
            config_path: None,
            generator: Generator::Junction,
            num_scenes: 4,
            fill_mode: FillMode::RandomFill,
            build: BuildParams::default(),
            filter: SceneFilterParams::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleSection {
    /// JSON file of vehicle parameters; defaults when absent.
    pub params_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomGoals {
    pub enabled: bool,
    pub min_m: f64,
    pub max_m: f64,
}

impl Default for RandomGoals {
    fn default() -> Self {
        RandomGoals {
            enabled: false,
            min_m: 10.0,
            max_m: 100.0,
        }
    }
}

impl RandomGoals {
    pub fn range(&self) -> Option<GoalRange> {
        self.enabled.then_some(GoalRange {
            min_m: self.min_m,
            max_m: self.max_m,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub invincible: bool,
    pub random_goals: RandomGoals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SysidSection {
    pub cem: CemConfig,
    /// Fraction of the full maneuver suite.
    pub maneuver_scale: f64,
    pub max_per_tier: Option<usize>,
    /// Relative perturbation of the hidden teacher parameters.
    pub teacher_perturbation: f64,
}

impl Default for SysidSection {
    fn default() -> Self {
        SysidSection {
            cem: CemConfig::default(),
            maneuver_scale: 0.2,
            max_per_tier: Some(5),
            teacher_perturbation: 0.15,
        }
    }
}

/// The whole configuration hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RootConfig {
    pub seed: u64,
    pub env: EnvSection,
    pub scenes: ScenesSection,
    pub weather: WeatherConfig,
    pub obs: ObsConfig,
    pub reward: RewardConfig,
    pub vehicle: VehicleSection,
    pub eval: EvalSection,
    pub bench: BenchConfig,
    pub sysid: SysidSection,
}

impl Default for RootConfig {
    fn default() -> Self {
        RootConfig {
            seed: 42,
            env: EnvSection::default(),
            scenes: ScenesSection::default(),
            weather: WeatherConfig::default(),
            obs: ObsConfig::default(),
            reward: RewardConfig::default(),
            vehicle: VehicleSection::default(),
            eval: EvalSection::default(),
            bench: BenchConfig::default(),
            sysid: SysidSection::default(),
        }
    }
}

impl RootConfig {
    pub fn from_yaml(text: &str) -> Result<Self> {
        let cfg: RootConfig = from_yaml_str(text, "config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a file; relative paths inside resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut cfg = Self::from_yaml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scenes.config_path, &mut cfg.vehicle.params_path].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: String| {
            Err(SimError::Config {
                path: path.into(),
                message,
            })
        };
        if self.env.num_envs == 0 {
            return bad("env.num_envs", "must be positive".into());
        }
        if !(1..=MAX_AGENTS).contains(&self.env.num_agents_per_env) {
            return bad("env.num_agents_per_env", format!("must be in 1..={MAX_AGENTS}"));
        }
        if !(self.env.physics_dt > 0.0) || self.env.decimation == 0 {
            return bad("env.physics_dt", "physics_dt and decimation must be positive".into());
        }
        if self.env.workers == 0 {
            return bad("env.workers", "must be at least 1".into());
        }
        let g = &self.eval.random_goals;
        if g.enabled && !(g.min_m >= 0.0 && g.max_m >= g.min_m) {
            return bad("eval.random_goals", format!("need 0 <= min_m <= max_m, got {}..{}", g.min_m, g.max_m));
        }
        if let Err(e) = self.weather.validate() {
            return bad("weather", e.to_string());
        }
        if let Err(e) = self.sysid.cem.validate() {
            return bad("sysid.cem", e.to_string());
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            num_envs: self.env.num_envs,
            num_agents: self.env.num_agents_per_env,
            backend: self.env.dynamics_mode,
            physics_dt: self.env.physics_dt,
            decimation: self.env.decimation,
            episode_len: self.env.episode_len,
            seed: self.seed,
            invincible: self.eval.invincible,
            workers: self.env.workers,
            obs: self.obs.clone(),
            reward: self.reward.clone(),
        }
    }

    pub fn vehicle_params(&self) -> Result<VehicleParams> {
        match &self.vehicle.params_path {
            Some(p) => VehicleParams::load(p),
            None => Ok(VehicleParams::default()),
        }
    }

    /// Scene pool after the degenerate-scene filter, with goals resampled
    /// when random goals are enabled.
    pub fn scene_pool(&self) -> Result<Vec<ScenarioSpec>> {
        let s = &self.scenes;
        let raw = match &s.config_path {
            Some(p) => load_scene_dir(p)?,
            None => (0..s.num_scenes.max(1))
                .map(|k| match s.generator {
                    Generator::Junction => junction_scene(&format!("junction_{k}"), self.env.num_agents_per_env, self.seed + k as u64),
                    Generator::Straight => straight_scene(&format!("straight_{k}"), 4, 50.0),
                    Generator::Bench => bench_scene(&format!("bench_{k}"), self.env.num_agents_per_env),
                })
                .collect(),
        };
        let mut pool = Vec::new();
        for (k, spec) in raw.into_iter().enumerate() {
            if let SceneVerdict::Reject(why) = reject_degenerate_scene(&spec, &s.filter) {
                log::warn!("scene {} rejected: {why}", spec.scenario_id);
                continue;
            }
            pool.push(match self.eval.random_goals.range() {
                Some(range) => resample_goals(&spec, range, substream_seed(self.seed, k)).0,
                None => spec,
            });
        }
        if pool.is_empty() {
            return Err(SimError::Invalid("scene pool is empty after filtering".into()));
        }
        Ok(pool)
    }

    /// Engine over the configured pool, weather and vehicle.
    pub fn build_engine(&self) -> Result<Engine> {
        let pool = self.scene_pool()?;
        let n = self.env.num_envs;
        let batch = build_world_batch(&pool, n, self.scenes.fill_mode, self.seed, &self.scenes.build)?;
        let friction = sample_weather(&FrictionModel::default(), &self.weather, n, self.seed)?;
        Engine::new(batch, friction, self.vehicle_params()?, self.sim_config())
    }
}

fn substream_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// A scenario file, or every `.json` file of a directory in name order.
pub fn load_scene_dir(path: &Path) -> Result<Vec<ScenarioSpec>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| SimError::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(SimError::Invalid(format!("no scenario files in {}", path.display())));
        }
        files.iter().map(load_scenario).collect()
    } else {
        Ok(vec![load_scenario(path)?])
    }
}
