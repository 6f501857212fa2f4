//! Throughput harness: controlled agent steps per second (CASPS) with a
//! per-phase timing breakdown, for the batched and reference paths.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, PhaseTimings, SimConfig};
use crate::error::{Result, SimError};
use crate::friction::{FrictionAssignment, Surface};
use crate::policy::{LaneFollower, Policy};
use crate::synth::bench_scene;
use crate::vehicle::{Backend, VehicleParams};
use crate::world::{build_world_batch, BuildParams, FillMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPath {
    Vectorized,
    Reference,
}

/// Mean wall-clock milliseconds per control step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseMs {
    pub physics: f64,
    pub observation: f64,
    pub reward_termination: f64,
    pub action: f64,
    pub reset: f64,
}

impl PhaseMs {
    pub fn from_timings(t: &PhaseTimings) -> Self {
        let per = |d: Duration| if t.steps == 0 { 0.0 } else { d.as_secs_f64() * 1e3 / t.steps as f64 };
        PhaseMs {
            physics: per(t.physics),
            observation: per(t.observation),
            reward_termination: per(t.reward_termination),
            action: per(t.action),
            reset: per(t.reset),
        }
    }

    pub fn total(&self) -> f64 {
        self.physics + self.observation + self.reward_termination + self.action + self.reset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub worlds: usize,
    pub agents: usize,
    pub backend: Backend,
    pub path: BenchPath,
    pub workers: usize,
    pub warmup_steps: usize,
    pub steps: usize,
    /// Alive controlled agents summed over measured steps.
    pub agent_steps: u64,
    pub wall_s: f64,
    pub casps: f64,
    pub phase_ms: PhaseMs,
}

pub fn casps(agent_steps: u64, wall_s: f64) -> f64 {
    agent_steps as f64 / wall_s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub worlds: Vec<usize>,
    pub agents: usize,
    pub backend: Backend,
    pub workers: usize,
    /// Control steps per iteration.
    pub iteration_steps: usize,
    pub warmup_iterations: usize,
    pub measure_iterations: usize,
    /// Multiplies both iteration counts for desk-scale runs.
    pub scale: f64,
    pub reference: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            worlds: vec![8, 16, 32, 64],
            agents: 16,
            backend: Backend::Dynamic,
            workers: 1,
            iteration_steps: 128,
            warmup_iterations: 50,
            measure_iterations: 50,
            scale: 0.02,
            reference: true,
        }
    }
}

impl BenchConfig {
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_iterations as f64 * self.scale * self.iteration_steps as f64).round() as usize
    }

    pub fn measure_steps(&self) -> usize {
        (self.measure_iterations as f64 * self.scale * self.iteration_steps as f64).round() as usize
    }
}

/// Engine over `worlds` copies of the benchmark scene.
pub fn bench_engine(worlds: usize, agents: usize, backend: Backend, workers: usize) -> Result<Engine> {
    let scene = bench_scene("bench", agents);
    let batch = build_world_batch(&[scene], worlds, FillMode::Fixed, 42, &BuildParams::default())?;
    let cfg = SimConfig {
        num_envs: worlds,
        num_agents: agents,
        backend,
        workers,
        ..SimConfig::default()
    };
    Engine::new(batch, vec![FrictionAssignment::dry(Surface::AC); worlds], VehicleParams::default(), cfg)
}

/// Step with the lane follower, teleporting finished agents back to their
/// starts. Only engine time counts toward the wall clock.
pub fn measure(engine: &mut Engine, path: BenchPath, warmup: usize, steps: usize) -> Result<(u64, Duration)> {
    if steps == 0 {
        return Err(SimError::InsufficientSamples("no measured steps after warmup".into()));
    }
    let mut policy = LaneFollower::default();
    let n = engine.num_slots();
    let starts: Vec<_> = (0..n).map(|i| (engine.state.start_pos[i], engine.state.start_yaw[i])).collect();
    let goals = engine.state.goal_pos.clone();
    let mut agent_steps = 0;
    let mut wall = Duration::ZERO;
    for k in 0..warmup + steps {
        if k == warmup {
            engine.reset_timings();
        }
        let actions = policy.act(engine);
        let alive = engine.alive_count() as u64;
        let t0 = Instant::now();
        let out = match path {
            BenchPath::Vectorized => engine.step(&actions)?,
            BenchPath::Reference => engine.reference_step(&actions)?,
        };
        engine.teleport_reset(&out.dones, &starts, &goals)?;
        if k >= warmup {
            wall += t0.elapsed();
            agent_steps += alive;
        }
    }
    Ok((agent_steps, wall))
}

pub fn run_case(worlds: usize, cfg: &BenchConfig, path: BenchPath) -> Result<BenchReport> {
    let mut engine = bench_engine(worlds, cfg.agents, cfg.backend, cfg.workers)?;
    let (warmup, steps) = (cfg.warmup_steps(), cfg.measure_steps());
    let (agent_steps, wall) = measure(&mut engine, path, warmup, steps)?;
    let wall_s = wall.as_secs_f64();
    Ok(BenchReport {
        worlds,
        agents: cfg.agents,
        backend: cfg.backend,
        path,
        workers: cfg.workers,
        warmup_steps: warmup,
        steps,
        agent_steps,
        wall_s,
        casps: casps(agent_steps, wall_s),
        phase_ms: PhaseMs::from_timings(&engine.timings()),
    })
}

/// Every world count of the grid on the vectorized path, then on the
/// reference path when enabled.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchReport>> {
    let mut paths = vec![BenchPath::Vectorized];
    if cfg.reference {
        paths.push(BenchPath::Reference);
    }
    let mut out = Vec::new();
    for path in paths {
        for &w in &cfg.worlds {
            out.push(run_case(w, cfg, path)?);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct CsvRow {
    worlds: usize,
    agents: usize,
    backend: Backend,
    path: BenchPath,
    workers: usize,
    steps: usize,
    casps: f64,
    physics_ms: f64,
    observation_ms: f64,
    reward_termination_ms: f64,
    action_ms: f64,
    reset_ms: f64,
}

pub fn to_csv(reports: &[BenchReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(CsvRow {
            worlds: r.worlds,
            agents: r.agents,
            backend: r.backend,
            path: r.path,
            workers: r.workers,
            steps: r.steps,
            casps: r.casps,
            physics_ms: r.phase_ms.physics,
            observation_ms: r.phase_ms.observation,
            reward_termination_ms: r.phase_ms.reward_termination,
            action_ms: r.phase_ms.action,
            reset_ms: r.phase_ms.reset,
        })
        .map_err(|e| SimError::Invalid(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| SimError::Invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn casps_from_definition() {
        // 8 worlds x 4 agents alive for 300 steps in one second
        assert_eq!(casps(8 * 4 * 300, 1.0), 9600.0);
    }

    #[test]
    fn desk_scale_window() {
        let c = BenchConfig::default();
        assert_eq!(c.warmup_steps(), 128);
        assert_eq!(c.measure_steps(), 128);
    }
}
