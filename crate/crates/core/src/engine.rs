//! Batched multi-world engine.
//!
//! State is structure-of-arrays over `W * M` agent slots in world-major
//! order, kept in world-local coordinates (global = local + grid offset).
//! [`Engine::step`] is the batched path: per-world segment grids, hull
//! centres and pairwise distances computed once per step, optional
//! parallelism over worlds. [`Engine::reference_step`] evaluates every
//! agent on its own with exhaustive scans. Both call the same per-element
//! kernels, so their outputs agree bit-for-bit.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::friction::FrictionAssignment;
use crate::geometry::{norm, sub, Vec2};
use crate::obs::{
    ego_features, neighbor_features, road_context, select_nearest, AgentView, ObsConfig, ROAD_FEATURES,
};
use crate::reward::{
    dense_rewards, detect_crash, detect_goal, detect_lane_forbidden, edge_nearest_ahead, edge_tau, edge_ttc, finalize, hulls_overlap, lane_row,
    warmup_elapsed, EventFlags, LaneHit, Reason, RewardConfig, RewardTerms,
};
use crate::spatial::{nearest_in, nearest_with_grid, SegmentGrid};
use crate::vehicle::{control_tick, decode_action, Action, AgentDynState, Backend, Contact, SurfaceSlot, VehicleParams};
use crate::world::WorldBatch;

/// Maximum agent slots per world.
pub const MAX_AGENTS: usize = 16;
/// Off-stage parking position relative to the world origin.
pub const PARKING: Vec2 = [1000.0, 0.0];
/// Cell size of the per-world segment grids, m.
const GRID_CELL: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub num_envs: usize,
    pub num_agents: usize,
    pub backend: Backend,
    pub physics_dt: f64,
    pub decimation: usize,
    pub episode_len: u32,
    pub seed: u64,
    pub invincible: bool,
    /// Worker threads for the batched path; 1 runs inline.
    pub workers: usize,
    pub obs: ObsConfig,
    pub reward: RewardConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_envs: 256,
            num_agents: 16,
            backend: Backend::Dynamic,
            physics_dt: 1.0 / 120.0,
            decimation: 4,
            episode_len: 1500,
            seed: 42,
            invincible: false,
            workers: 1,
            obs: ObsConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn control_dt(&self) -> f64 {
        self.physics_dt * self.decimation as f64
    }

}

/// Structure-of-arrays agent state over `W * M` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStateBatch {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub yaw: Vec<f64>,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub yaw_rate: Vec<f64>,
    pub steer: Vec<f64>,
    pub steer_rate: Vec<f64>,
    pub wheel_front: Vec<f64>,
    pub wheel_rear: Vec<f64>,
    pub brake_sign_front: Vec<f64>,
    pub brake_sign_rear: Vec<f64>,
    pub load_transfer: Vec<f64>,
    pub alive: Vec<bool>,
    /// Slot holds a valid spawn for this world.
    pub active: Vec<bool>,
    pub reason: Vec<Reason>,
    pub spawn_step: Vec<u32>,
    pub start_pos: Vec<Vec2>,
    pub start_yaw: Vec<f64>,
    pub goal_pos: Vec<Vec2>,
    pub length: Vec<f64>,
    pub width: Vec<f64>,
}

impl AgentStateBatch {
    fn new(n: usize) -> Self {
        AgentStateBatch {
            x: vec![PARKING[0]; n],
            y: vec![PARKING[1]; n],
            yaw: vec![0.0; n],
            vx: vec![0.0; n],
            vy: vec![0.0; n],
            yaw_rate: vec![0.0; n],
            steer: vec![0.0; n],
            steer_rate: vec![0.0; n],
            wheel_front: vec![0.0; n],
            wheel_rear: vec![0.0; n],
            brake_sign_front: vec![1.0; n],
            brake_sign_rear: vec![1.0; n],
            load_transfer: vec![0.0; n],
            alive: vec![false; n],
            active: vec![false; n],
            reason: vec![Reason::None; n],
            spawn_step: vec![0; n],
            start_pos: vec![PARKING; n],
            start_yaw: vec![0.0; n],
            goal_pos: vec![PARKING; n],
            length: vec![4.0; n],
            width: vec![2.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> AgentDynState {
        AgentDynState {
            pos: [self.x[i], self.y[i]],
            yaw: self.yaw[i],
            vx: self.vx[i],
            vy: self.vy[i],
            yaw_rate: self.yaw_rate[i],
            steer: self.steer[i],
            steer_rate: self.steer_rate[i],
            wheel_front: self.wheel_front[i],
            wheel_rear: self.wheel_rear[i],
            brake_sign_front: self.brake_sign_front[i],
            brake_sign_rear: self.brake_sign_rear[i],
            load_transfer: self.load_transfer[i],
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, s: &AgentDynState) {
        self.x[i] = s.pos[0];
        self.y[i] = s.pos[1];
        self.yaw[i] = s.yaw;
        self.vx[i] = s.vx;
        self.vy[i] = s.vy;
        self.yaw_rate[i] = s.yaw_rate;
        self.steer[i] = s.steer;
        self.steer_rate[i] = s.steer_rate;
        self.wheel_front[i] = s.wheel_front;
        self.wheel_rear[i] = s.wheel_rear;
        self.brake_sign_front[i] = s.brake_sign_front;
        self.brake_sign_rear[i] = s.brake_sign_rear;
        self.load_transfer[i] = s.load_transfer;
    }

    /// Every continuous state field of every slot, field-major.
    pub fn flat(&self) -> Vec<f64> {
        [
            &self.x,
            &self.y,
            &self.yaw,
            &self.vx,
            &self.vy,
            &self.yaw_rate,
            &self.steer,
            &self.steer_rate,
            &self.wheel_front,
            &self.wheel_rear,
            &self.brake_sign_front,
            &self.brake_sign_rear,
            &self.load_transfer,
        ]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect()
    }
}

/// For each world, the first world with the same scene and identical
/// geometry rows.
fn canonical_worlds(batch: &WorldBatch) -> Vec<usize> {
    let rows = |w: usize| batch.row(w, 0)..batch.row(w, batch.counts[w]);
    let same = |a: usize, b: usize| {
        let (ra, rb) = (rows(a), rows(b));
        batch.counts[a] == batch.counts[b]
            && batch.midpoints[ra.clone()] == batch.midpoints[rb.clone()]
            && batch.directions[ra.clone()] == batch.directions[rb.clone()]
            && batch.type_codes[ra.clone()] == batch.type_codes[rb.clone()]
            && batch.half_lengths[ra.clone()] == batch.half_lengths[rb.clone()]
            && batch.half_widths[ra] == batch.half_widths[rb]
    };
    let mut out: Vec<usize> = Vec::with_capacity(batch.num_worlds);
    for w in 0..batch.num_worlds {
        let found = (0..w).find(|&v| out[v] == v && batch.scene_of_world[v] == batch.scene_of_world[w] && same(v, w));
        out.push(found.unwrap_or(w));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub step: u32,
    pub world: usize,
    pub agent: usize,
    pub kind: Reason,
}

/// Wall-clock time per engine phase, accumulated over `steps` ticks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseTimings {
    pub physics: Duration,
    pub observation: Duration,
    pub reward_termination: Duration,
    pub action: Duration,
    pub reset: Duration,
    pub steps: u64,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.physics + self.observation + self.reward_termination + self.action + self.reset
    }
}

/// Per-tick results. Observations live in [`Engine::obs`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub terms: Vec<RewardTerms>,
    /// Every detection of the tick, ordered by (world, agent, kind).
    pub events: Vec<Event>,
    /// Minimum raw vehicle TTC per slot (infinite when unthreatened).
    pub min_ttc: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Path {
    Batched,
    Reference,
}

/// Per-world scratch results of the observation phase.
struct WorldObs {
    min_ttc: Vec<f64>,
    views: Vec<Option<AgentView>>,
    dist: Vec<f64>,
}

struct WorldReward {
    terms: Vec<RewardTerms>,
    flags: Vec<EventFlags>,
}

pub struct Engine {
    cfg: SimConfig,
    batch: WorldBatch,
    friction: Vec<FrictionAssignment>,
    contacts: Vec<Contact>,
    params: VehicleParams,
    /// World whose geometry rows each world reads; worlds holding identical
    /// geometry share one copy so hot data stays in cache.
    geo: Vec<usize>,
    /// Built for canonical worlds only; index with `geo[w]`.
    grids: Vec<SegmentGrid>,
    max_half_width: Vec<f64>,
    pub state: AgentStateBatch,
    prev_pos: Vec<Vec2>,
    /// Pose at termination for slots that finished on the latest tick.
    terminal: Vec<Option<AgentDynState>>,
    actions: Vec<Action>,
    obs: Vec<f32>,
    step_count: u32,
    timings: PhaseTimings,
    pool: Option<rayon::ThreadPool>,
}

impl Engine {
    pub fn new(batch: WorldBatch, friction: Vec<FrictionAssignment>, params: VehicleParams, cfg: SimConfig) -> Result<Self> {
        if cfg.num_envs != batch.num_worlds {
            return Err(SimError::Shape(format!("config has {} worlds, batch has {}", cfg.num_envs, batch.num_worlds)));
        }
        if friction.len() != batch.num_worlds {
            return Err(SimError::Shape(format!("{} friction assignments for {} worlds", friction.len(), batch.num_worlds)));
        }
        if cfg.num_agents == 0 || cfg.num_agents > MAX_AGENTS {
            return Err(SimError::Invalid(format!("num_agents must be in 1..={MAX_AGENTS}, got {}", cfg.num_agents)));
        }
        if cfg.decimation == 0 || !(cfg.physics_dt > 0.0) {
            return Err(SimError::Invalid("physics_dt and decimation must be positive".into()));
        }
        params.validate()?;
        let w = batch.num_worlds;
        let m = cfg.num_agents;
        let contacts = friction
            .iter()
            .map(|f| {
                let slot = if f.water_film_h > 0.0 { SurfaceSlot::Wet } else { SurfaceSlot::Dry };
                Contact::new(f.mu_static, slot, &params)
            })
            .collect();
        let geo = canonical_worlds(&batch);
        let grids = (0..w)
            .map(|i| if geo[i] == i { SegmentGrid::build(&batch, i, GRID_CELL) } else { SegmentGrid::empty(GRID_CELL) })
            .collect();
        let max_half_width = (0..w)
            .map(|i| (0..batch.counts[i]).map(|k| batch.half_widths[batch.row(i, k)]).fold(0.0, f64::max))
            .collect();
        let mut state = AgentStateBatch::new(w * m);
        for wi in 0..w {
            for (mi, a) in batch.agents[wi].iter().take(m).enumerate() {
                let i = wi * m + mi;
                state.active[i] = true;
                state.start_pos[i] = a.start;
                state.start_yaw[i] = a.start_heading;
                state.goal_pos[i] = a.goal;
                state.length[i] = a.length;
                state.width[i] = a.width;
            }
        }
        let pool = if cfg.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.workers)
                    .build()
                    .map_err(|e| SimError::Invalid(format!("worker pool: {e}")))?,
            )
        } else {
            None
        };
        let dim = cfg.obs.obs_dim();
        let mut engine = Engine {
            batch,
            friction,
            contacts,
            params,
            geo,
            grids,
            max_half_width,
            prev_pos: vec![PARKING; w * m],
            terminal: vec![None; w * m],
            actions: vec![Action::default(); w * m],
            obs: vec![0.0; w * m * dim],
            step_count: 0,
            timings: PhaseTimings::default(),
            pool,
            state,
            cfg,
        };
        engine.reset();
        Ok(engine)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn batch(&self) -> &WorldBatch {
        &self.batch
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn friction(&self) -> &[FrictionAssignment] {
        &self.friction
    }

    pub fn num_worlds(&self) -> usize {
        self.batch.num_worlds
    }

    pub fn num_agents(&self) -> usize {
        self.cfg.num_agents
    }

    pub fn num_slots(&self) -> usize {
        self.state.len()
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.obs.obs_dim()
    }

    pub fn obs(&self) -> &[f32] {
        &self.obs
    }

    pub fn obs_row(&self, i: usize) -> &[f32] {
        let d = self.obs_dim();
        &self.obs[i * d..(i + 1) * d]
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn timings(&self) -> PhaseTimings {
        self.timings
    }

    pub fn reset_timings(&mut self) {
        self.timings = PhaseTimings::default();
    }

    pub fn alive_count(&self) -> usize {
        self.state.alive.iter().filter(|a| **a).count()
    }

    /// Position in the shared global frame.
    pub fn global_pos(&self, i: usize) -> Vec2 {
        let off = self.batch.grid_offsets[i / self.cfg.num_agents];
        [self.state.x[i] + off[0], self.state.y[i] + off[1]]
    }

    /// Nearest driving-lane segment to slot `i` as `(row index, distance,
    /// signed lateral)`.
    pub fn nearest_lane(&self, i: usize) -> LaneHit {
        let g = self.geo[self.world_of(i)];
        let mut scratch = Vec::new();
        let p = [self.state.x[i], self.state.y[i]];
        nearest_with_grid(&self.batch, g, &self.grids[g], p, |r| lane_row(&self.batch, g, r), &mut scratch)
    }

    /// Pose of a slot that terminated on the latest tick, before parking.
    pub fn terminal_state(&self, i: usize) -> Option<AgentDynState> {
        self.terminal[i]
    }

    pub fn world_of(&self, i: usize) -> usize {
        i / self.cfg.num_agents
    }

    fn park(&mut self, i: usize) {
        let mut s = AgentDynState::at_rest(PARKING, 0.0);
        s.brake_sign_front = 1.0;
        s.brake_sign_rear = 1.0;
        self.state.set(i, &s);
        self.prev_pos[i] = PARKING;
    }

    /// Restart the episode: every valid slot returns to its start pose.
    pub fn reset(&mut self) {
        self.step_count = 0;
        let n = self.num_slots();
        let mask: Vec<bool> = self.state.active.clone();
        let starts: Vec<(Vec2, f64)> = (0..n).map(|i| (self.state.start_pos[i], self.state.start_yaw[i])).collect();
        let goals = self.state.goal_pos.clone();
        for i in 0..n {
            if !mask[i] {
                self.park(i);
                self.state.alive[i] = false;
                self.state.reason[i] = Reason::None;
            }
        }
        self.teleport_reset(&mask, &starts, &goals).expect("shapes match by construction");
        self.refresh_obs();
    }

    /// Rewrite masked slots in place: new pose at rest, cleared latches,
    /// new goal, alive again with the collision warmup restarted.
    pub fn teleport_reset(&mut self, mask: &[bool], starts: &[(Vec2, f64)], goals: &[Vec2]) -> Result<()> {
        let n = self.num_slots();
        if mask.len() != n || starts.len() != n || goals.len() != n {
            return Err(SimError::Shape(format!(
                "teleport arrays {}/{}/{} for {n} slots",
                mask.len(),
                starts.len(),
                goals.len()
            )));
        }
        let t0 = Instant::now();
        for i in 0..n {
            if !mask[i] || !self.state.active[i] {
                continue;
            }
            let (pos, yaw) = starts[i];
            self.state.set(i, &AgentDynState::at_rest(pos, yaw));
            self.state.start_pos[i] = pos;
            self.state.start_yaw[i] = yaw;
            self.state.goal_pos[i] = goals[i];
            self.state.alive[i] = true;
            self.state.reason[i] = Reason::None;
            self.state.spawn_step[i] = self.step_count;
            self.prev_pos[i] = pos;
            self.actions[i] = Action::default();
        }
        self.timings.reset += t0.elapsed();
        Ok(())
    }

    /// Recompute observations for the current state without stepping.
    pub fn refresh_obs(&mut self) {
        self.observe_all(Path::Batched);
    }

    fn check_actions(&self, actions: &[[f64; 3]]) -> Result<()> {
        let n = self.num_slots();
        if actions.len() != n {
            return Err(SimError::Shape(format!("expected {n} actions ({}x{}), got {}", self.num_worlds(), self.num_agents(), actions.len())));
        }
        let m = self.cfg.num_agents;
        for (i, a) in actions.iter().enumerate() {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteAction { world: i / m, agent: i % m });
            }
        }
        Ok(())
    }

    /// Batched control tick.
    pub fn step(&mut self, actions: &[[f64; 3]]) -> Result<StepOutput> {
        self.advance(actions, Path::Batched)
    }

    /// Per-agent reference control tick over the identical arithmetic.
    pub fn reference_step(&mut self, actions: &[[f64; 3]]) -> Result<StepOutput> {
        self.advance(actions, Path::Reference)
    }

    fn advance(&mut self, actions: &[[f64; 3]], path: Path) -> Result<StepOutput> {
        self.check_actions(actions)?;
        let n = self.num_slots();

        let t0 = Instant::now();
        for i in 0..n {
            self.actions[i] = if self.state.alive[i] { decode_action(actions[i]) } else { Action::default() };
        }
        self.timings.action += t0.elapsed();

        let t0 = Instant::now();
        for i in 0..n {
            self.prev_pos[i] = [self.state.x[i], self.state.y[i]];
        }
        match path {
            Path::Batched => self.physics_batched(),
            Path::Reference => self.physics_reference(),
        }
        self.step_count += 1;
        self.timings.physics += t0.elapsed();

        let t0 = Instant::now();
        let per_world = self.observe_all(path);
        self.timings.observation += t0.elapsed();

        let t0 = Instant::now();
        let rewards = self.reward_all(path, &per_world);
        let out = self.terminate(&rewards, &per_world);
        self.timings.reward_termination += t0.elapsed();

        let t0 = Instant::now();
        for i in 0..n {
            self.terminal[i] = None;
            if out.dones[i] {
                self.terminal[i] = Some(self.state.get(i));
                self.park(i);
            }
        }
        self.timings.reset += t0.elapsed();

        // survivors of a world that lost agents are re-observed without them
        let t0 = Instant::now();
        let m = self.cfg.num_agents;
        for w in 0..self.batch.num_worlds {
            if out.dones[w * m..(w + 1) * m].iter().any(|d| *d) {
                self.reobserve_world(w, path);
            }
        }
        self.timings.observation += t0.elapsed();
        self.timings.steps += 1;
        Ok(out)
    }

    fn physics_batched(&mut self) {
        let cfg = &self.cfg;
        let m = cfg.num_agents;
        let backend = cfg.backend;
        let (dt, dec) = (cfg.physics_dt, cfg.decimation);
        let params = &self.params;
        let contacts = &self.contacts;
        let actions = &self.actions;
        let alive = &self.state.alive;
        let run = |w: usize| -> Vec<(usize, AgentDynState)> {
            (w * m..(w + 1) * m)
                .filter(|&i| alive[i])
                .map(|i| (i, control_tick(backend, &self.state.get(i), &actions[i], dt, dec, params, contacts[w])))
                .collect()
        };
        let updates: Vec<Vec<(usize, AgentDynState)>> = match &self.pool {
            Some(pool) => pool.install(|| (0..self.batch.num_worlds).into_par_iter().map(run).collect()),
            None => (0..self.batch.num_worlds).map(run).collect(),
        };
        for (i, s) in updates.into_iter().flatten() {
            self.state.set(i, &s);
        }
    }

    fn physics_reference(&mut self) {
        let m = self.cfg.num_agents;
        for i in 0..self.num_slots() {
            if !self.state.alive[i] {
                continue;
            }
            let s = self.state.get(i);
            let next = control_tick(
                self.cfg.backend,
                &s,
                &self.actions[i],
                self.cfg.physics_dt,
                self.cfg.decimation,
                &self.params,
                self.contacts[i / m],
            );
            self.state.set(i, &next);
        }
    }

    fn view(&self, i: usize) -> AgentView {
        AgentView::new(
            [self.state.x[i], self.state.y[i]],
            self.state.yaw[i],
            self.state.vx[i],
            self.state.vy[i],
            self.state.length[i],
            self.state.width[i],
            self.params.wheelbase,
        )
    }

    /// Observe every world into the shared buffer, returning per-world
    /// scratch for the reward phase.
    fn observe_all(&mut self, path: Path) -> Vec<WorldObs> {
        let chunk = self.cfg.num_agents * self.obs_dim();
        let mut obs = std::mem::take(&mut self.obs);
        let this = &*self;
        let per_world = match (path, &this.pool) {
            (Path::Batched, Some(pool)) => pool.install(|| {
                obs.par_chunks_mut(chunk).enumerate().map(|(w, out)| this.observe_world_batched(w, out)).collect()
            }),
            (Path::Batched, None) => obs.chunks_mut(chunk).enumerate().map(|(w, out)| this.observe_world_batched(w, out)).collect(),
            (Path::Reference, _) => obs.chunks_mut(chunk).enumerate().map(|(w, out)| this.observe_world_reference(w, out)).collect(),
        };
        self.obs = obs;
        per_world
    }

    /// Re-observe one world after some of its agents were parked.
    fn reobserve_world(&mut self, w: usize, path: Path) {
        let chunk = self.cfg.num_agents * self.obs_dim();
        let mut obs = std::mem::take(&mut self.obs);
        let out = &mut obs[w * chunk..(w + 1) * chunk];
        match path {
            Path::Batched => self.observe_world_batched(w, out),
            Path::Reference => self.observe_world_reference(w, out),
        };
        self.obs = obs;
    }

    fn ego_block<T: crate::obs::ObsValue>(&self, i: usize, ego: &AgentView, out: &mut [T]) {
        let w = self.world_of(i);
        let token = self.cfg.obs.include_weather.then_some(&self.friction[w].weather_token);
        ego_features(ego, self.state.goal_pos[i], token, &self.cfg.obs, out);
    }

    fn observe_world_batched(&self, w: usize, out: &mut [f32]) -> WorldObs {
        let g = self.geo[w];
        let m = self.cfg.num_agents;
        let dim = self.obs_dim();
        let cfg = &self.cfg.obs;
        let base = w * m;
        let views: Vec<Option<AgentView>> = (0..m).map(|k| self.state.alive[base + k].then(|| self.view(base + k))).collect();
        let mut dist = vec![f64::INFINITY; m * m];
        for a in 0..m {
            let Some(va) = &views[a] else { continue };
            for b in (a + 1)..m {
                let Some(vb) = &views[b] else { continue };
                dist[a * m + b] = norm(sub(vb.pos, va.pos));
                dist[b * m + a] = norm(sub(va.pos, vb.pos));
            }
        }
        let mut min_ttc = vec![f64::INFINITY; m];
        let mut cands = Vec::new();
        let mut order = Vec::with_capacity(m);
        let ego_dim = cfg.ego_dim();
        let road_end = ego_dim + cfg.k_r * ROAD_FEATURES;
        let r = cfg.road_radius;
        for k in 0..m {
            let row = &mut out[k * dim..(k + 1) * dim];
            let Some(ego) = &views[k] else {
                row.fill(0.0);
                continue;
            };
            self.ego_block(base + k, ego, &mut row[..ego_dim]);
            self.grids[g].candidates(ego.pos, r, &mut cands);
            cands.retain(|&c| norm(sub(self.batch.midpoints[self.batch.row(g, c as usize)], ego.pos)) <= r);
            cands.sort_unstable();
            road_context(&self.batch, g, ego, cands.iter().map(|&c| c as usize), cfg, &mut row[ego_dim..road_end]);
            order.clear();
            order.extend((0..m).map(|j| (dist[k * m + j], j)));
            select_nearest(&mut order, cfg.k_v);
            let selected: Vec<&AgentView> = order.iter().map(|&(_, j)| views[j].as_ref().expect("finite distance implies alive")).collect();
            min_ttc[k] = neighbor_features(ego, &selected, cfg, &mut row[road_end..]);
        }
        WorldObs { min_ttc, views, dist }
    }

    /// One slot observed with exhaustive scans; returns its minimum raw TTC.
    fn observe_agent_reference<T: crate::obs::ObsValue>(&self, i: usize, row: &mut [T]) -> f64 {
        if !self.state.alive[i] {
            row.fill(T::default());
            return f64::INFINITY;
        }
        let cfg = &self.cfg.obs;
        let m = self.cfg.num_agents;
        let (g, base) = (self.geo[i / m], (i / m) * m);
        let ego = self.view(i);
        let ego_dim = cfg.ego_dim();
        let road_end = ego_dim + cfg.k_r * ROAD_FEATURES;
        self.ego_block(i, &ego, &mut row[..ego_dim]);
        road_context(&self.batch, g, &ego, 0..self.batch.counts[g], cfg, &mut row[ego_dim..road_end]);
        let mut order: Vec<(f64, usize)> = (0..m)
            .map(|j| {
                let alive = base + j != i && self.state.alive[base + j];
                let d = if alive { norm(sub([self.state.x[base + j], self.state.y[base + j]], ego.pos)) } else { f64::INFINITY };
                (d, j)
            })
            .collect();
        select_nearest(&mut order, cfg.k_v);
        let others: Vec<AgentView> = order.iter().map(|&(_, j)| self.view(base + j)).collect();
        let selected: Vec<&AgentView> = others.iter().collect();
        neighbor_features(&ego, &selected, cfg, &mut row[road_end..])
    }

    fn observe_world_reference(&self, w: usize, out: &mut [f32]) -> WorldObs {
        let m = self.cfg.num_agents;
        let dim = self.obs_dim();
        let min_ttc = (0..m).map(|k| self.observe_agent_reference(w * m + k, &mut out[k * dim..(k + 1) * dim])).collect();
        WorldObs {
            min_ttc,
            views: Vec::new(),
            dist: Vec::new(),
        }
    }

    /// Full-precision observation of one slot from exhaustive scans; the
    /// stored `f32` rows are this vector rounded.
    pub fn observe_f64(&self, i: usize) -> Vec<f64> {
        let mut row = vec![0.0f64; self.obs_dim()];
        self.observe_agent_reference(i, &mut row);
        row
    }

    fn reward_all(&self, path: Path, per_world: &[WorldObs]) -> Vec<WorldReward> {
        let w = self.batch.num_worlds;
        match (path, &self.pool) {
            (Path::Batched, Some(pool)) => {
                pool.install(|| (0..w).into_par_iter().map(|wi| self.reward_world(wi, path, &per_world[wi])).collect())
            }
            _ => (0..w).map(|wi| self.reward_world(wi, path, &per_world[wi])).collect(),
        }
    }

    fn reward_world(&self, w: usize, path: Path, wo: &WorldObs) -> WorldReward {
        let g = self.geo[w];
        let m = self.cfg.num_agents;
        let base = w * m;
        let rcfg = &self.cfg.reward;
        let mut terms = vec![RewardTerms::default(); m];
        let mut flags = vec![EventFlags::default(); m];
        let mut cands = Vec::new();
        let timeout = self.step_count >= self.cfg.episode_len;
        for k in 0..m {
            let i = base + k;
            if !self.state.alive[i] {
                continue;
            }
            let s = self.state.get(i);
            let finite = s.is_finite();
            let owned;
            let ego = match path {
                Path::Batched => wo.views[k].as_ref().expect("alive agent has a view"),
                Path::Reference => {
                    owned = self.view(i);
                    &owned
                }
            };
            let lf_reach = ego.hull.offset + ego.hull.radius + self.grids[g].max_half_length() + self.max_half_width[g];
            let (lane, lane_forbidden, edge_tau, collided) = match path {
                Path::Batched => {
                    let lane: LaneHit = nearest_with_grid(&self.batch, g, &self.grids[g], ego.pos, |r| lane_row(&self.batch, g, r), &mut cands);
                    self.grids[g].candidates(ego.pos, lf_reach, &mut cands);
                    let lf = detect_lane_forbidden(&self.batch, g, ego, cands.iter().map(|&c| c as usize));
                    let et = self.edge_tau_chunked(g, ego, &mut cands);
                    let collided = (0..m).any(|j| {
                        let d = wo.dist[k * m + j];
                        if !d.is_finite() {
                            return false;
                        }
                        let other = wo.views[j].as_ref().expect("finite distance implies alive");
                        let bound = ego.hull.offset + other.hull.offset + ego.hull.radius + other.hull.radius;
                        d <= bound + 1e-9 && hulls_overlap(ego, other)
                    });
                    (lane, lf, et, collided)
                }
                Path::Reference => {
                    let all = 0..self.batch.counts[g];
                    let lane = nearest_in(&self.batch, g, ego.pos, all.clone(), |r| lane_row(&self.batch, g, r));
                    let lf = detect_lane_forbidden(&self.batch, g, ego, all.clone());
                    let et = edge_ttc(&self.batch, g, ego, all, rcfg);
                    let collided = (0..m).any(|j| j != k && self.state.alive[base + j] && hulls_overlap(ego, &self.view(base + j)));
                    (lane, lf, et, collided)
                }
            };
            let f = EventFlags {
                goal: finite && detect_goal(ego.pos, self.state.goal_pos[i], rcfg),
                collision: collided && warmup_elapsed(self.step_count, self.state.spawn_step[i], rcfg),
                crash: detect_crash(ego.pos, self.state.start_pos[i], s.speed(), finite, rcfg),
                lane_forbidden: finite && lane_forbidden,
                timeout,
            };
            let t = if finite {
                dense_rewards(&self.batch, g, ego, self.prev_pos[i], self.state.goal_pos[i], lane, wo.min_ttc[k], edge_tau, rcfg)
            } else {
                RewardTerms::default()
            };
            terms[k] = t;
            flags[k] = f;
        }
        WorldReward { terms, flags }
    }

    /// Edge TTC scanning the forward corridor in 5 m slices, nearest first;
    /// equal to an exhaustive scan.
    fn edge_tau_chunked(&self, g: usize, ego: &AgentView, cands: &mut Vec<u32>) -> f64 {
        const SLICE: f64 = 5.0;
        let rcfg = &self.cfg.reward;
        let half = rcfg.edge_corridor;
        let mut nearest = f64::INFINITY;
        let mut x0 = 0.0;
        while x0 < rcfg.edge_range {
            let x1 = (x0 + SLICE).min(rcfg.edge_range);
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for (bx, by) in [(x0, -half), (x0, half), (x1, -half), (x1, half)] {
                let p = [ego.pos[0] + ego.cos * bx - ego.sin * by, ego.pos[1] + ego.sin * bx + ego.cos * by];
                for k in 0..2 {
                    lo[k] = lo[k].min(p[k] - 1e-6);
                    hi[k] = hi[k].max(p[k] + 1e-6);
                }
            }
            self.grids[g].candidates_box(lo, hi, cands);
            nearest = nearest.min(edge_nearest_ahead(&self.batch, g, ego, cands.iter().map(|&c| c as usize), rcfg));
            // unvisited slices lie strictly farther ahead
            if nearest <= x1 {
                break;
            }
            x0 = x1;
        }
        edge_tau(nearest, ego)
    }

    fn terminate(&mut self, rewards: &[WorldReward], per_world: &[WorldObs]) -> StepOutput {
        let m = self.cfg.num_agents;
        let n = self.num_slots();
        let mut out = StepOutput {
            rewards: vec![0.0; n],
            dones: vec![false; n],
            terms: vec![RewardTerms::default(); n],
            events: Vec::new(),
            min_ttc: vec![f64::INFINITY; n],
        };
        for (w, wr) in rewards.iter().enumerate() {
            for k in 0..m {
                let i = w * m + k;
                if !self.state.alive[i] {
                    continue;
                }
                out.min_ttc[i] = per_world[w].min_ttc[k];
                let f = wr.flags[k];
                let mut t = wr.terms[k];
                let mut reason = finalize(&f, &mut t, self.cfg.invincible, &self.cfg.reward);
                // a diverged state cannot continue even when events are not terminal
                if self.cfg.invincible && f.crash && !self.state.get(i).is_finite() {
                    reason = Reason::Crash;
                }
                for (fired, kind) in [
                    (f.goal, Reason::Goal),
                    (f.collision, Reason::Collision),
                    (f.crash, Reason::Crash),
                    (f.lane_forbidden, Reason::LaneForbidden),
                    (f.timeout, Reason::Timeout),
                ] {
                    if fired {
                        out.events.push(Event {
                            step: self.step_count,
                            world: w,
                            agent: k,
                            kind,
                        });
                    }
                }
                out.terms[i] = t;
                out.rewards[i] = t.total();
                if reason != Reason::None {
                    out.dones[i] = true;
                    self.state.alive[i] = false;
                    self.state.reason[i] = reason;
                }
            }
        }
        out
    }

    /// Run until every agent is done or the episode length is reached.
    pub fn run_episode<P>(&mut self, mut policy: P, record: bool) -> Result<EpisodeLog>
    where
        P: FnMut(&Engine) -> Vec<[f64; 3]>,
    {
        self.reset();
        let mut log = EpisodeLog {
            control_dt: self.cfg.control_dt(),
            num_worlds: self.num_worlds(),
            num_agents: self.num_agents(),
            ..Default::default()
        };
        let n = self.num_slots();
        let mut returns = vec![0.0; n];
        while self.step_count < self.cfg.episode_len && self.alive_count() > 0 {
            let actions = policy(self);
            let was_alive = self.state.alive.clone();
            let out = self.step(&actions)?;
            for i in 0..n {
                returns[i] += out.rewards[i];
                if record && was_alive[i] {
                    log.records.push(self.record(i, &actions[i], &out));
                }
            }
            log.events.extend(out.events.iter().copied());
            log.steps += 1;
        }
        log.reasons = self.state.reason.clone();
        log.active = self.state.active.clone();
        log.lengths = self.state.length.clone();
        log.returns = returns;
        Ok(log)
    }

    fn record(&self, i: usize, raw: &[f64; 3], out: &StepOutput) -> StepRecord {
        let m = self.cfg.num_agents;
        let off = self.batch.grid_offsets[i / m];
        // parked agents are logged at their terminal pose
        let s = if out.dones[i] { self.last_pose_before_park(i) } else { self.state.get(i) };
        StepRecord {
            step: self.step_count,
            world: i / m,
            agent: i % m,
            local: s.pos,
            x: s.pos[0] + off[0],
            y: s.pos[1] + off[1],
            yaw: s.yaw,
            vx: s.vx,
            vy: s.vy,
            yaw_rate: s.yaw_rate,
            steer: s.steer,
            wheel_front: s.wheel_front,
            wheel_rear: s.wheel_rear,
            action: *raw,
            reward: out.rewards[i],
            terms: out.terms[i],
            events: out
                .events
                .iter()
                .filter(|e| e.world == i / m && e.agent == i % m)
                .map(|e| e.kind)
                .collect(),
            done: out.dones[i],
        }
    }

    /// Recompute every logged reward from the logged states and events
    /// against this engine's geometry and configuration. Assumes the log
    /// starts from this engine's spawn state.
    pub fn replay_rewards(&self, log: &EpisodeLog) -> Vec<f64> {
        let m = self.cfg.num_agents;
        let rcfg = &self.cfg.reward;
        let wb = self.params.wheelbase;
        let mut prev: Vec<Vec2> = self.state.start_pos.clone();
        let mut scratch = vec![0.0f64; self.cfg.obs.k_v * crate::obs::NEIGHBOR_FEATURES];
        let mut out = Vec::with_capacity(log.records.len());
        let mut start = 0;
        while start < log.records.len() {
            let step = log.records[start].step;
            let end = start + log.records[start..].iter().take_while(|r| r.step == step).count();
            let recs = &log.records[start..end];
            let view = |r: &StepRecord| {
                let i = r.world * m + r.agent;
                AgentView::new(r.local, r.yaw, r.vx, r.vy, self.state.length[i], self.state.width[i], wb)
            };
            for r in recs {
                let i = r.world * m + r.agent;
                let g = self.geo[r.world];
                let ego = view(r);
                let mut order: Vec<(f64, usize)> = recs
                    .iter()
                    .filter(|o| o.world == r.world && o.agent != r.agent)
                    .map(|o| (norm(sub(o.local, ego.pos)), o.agent))
                    .collect();
                select_nearest(&mut order, self.cfg.obs.k_v);
                let others: Vec<AgentView> = order
                    .iter()
                    .map(|&(_, j)| view(recs.iter().find(|o| o.world == r.world && o.agent == j).expect("selected neighbour is logged")))
                    .collect();
                let selected: Vec<&AgentView> = others.iter().collect();
                let min_ttc = neighbor_features(&ego, &selected, &self.cfg.obs, &mut scratch);
                let finite = [r.local[0], r.local[1], r.yaw, r.vx, r.vy, r.yaw_rate, r.steer, r.wheel_front, r.wheel_rear].iter().all(|v| v.is_finite());
                let mut t = if finite {
                    let all = 0..self.batch.counts[g];
                    let lane = nearest_in(&self.batch, g, ego.pos, all.clone(), |row| lane_row(&self.batch, g, row));
                    let et = edge_ttc(&self.batch, g, &ego, all, rcfg);
                    dense_rewards(&self.batch, g, &ego, prev[i], self.state.goal_pos[i], lane, min_ttc, et, rcfg)
                } else {
                    RewardTerms::default()
                };
                let has = |k: Reason| r.events.contains(&k);
                let flags = EventFlags {
                    goal: has(Reason::Goal),
                    collision: has(Reason::Collision),
                    crash: has(Reason::Crash),
                    lane_forbidden: has(Reason::LaneForbidden),
                    timeout: has(Reason::Timeout),
                };
                finalize(&flags, &mut t, self.cfg.invincible, rcfg);
                out.push(t.total());
                prev[i] = r.local;
            }
            start = end;
        }
        out
    }

    fn last_pose_before_park(&self, i: usize) -> AgentDynState {
        self.terminal[i].unwrap_or_else(|| self.state.get(i))
    }
}

/// One logged `(step, world, agent)` record at control rate, global frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u32,
    pub world: usize,
    pub agent: usize,
    /// World-local position; `x`, `y` add the world's grid offset.
    pub local: Vec2,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
    pub steer: f64,
    pub wheel_front: f64,
    pub wheel_rear: f64,
    pub action: [f64; 3],
    pub reward: f64,
    pub terms: RewardTerms,
    pub events: Vec<Reason>,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub control_dt: f64,
    pub num_worlds: usize,
    pub num_agents: usize,
    pub steps: u32,
    pub records: Vec<StepRecord>,
    pub events: Vec<Event>,
    pub reasons: Vec<Reason>,
    pub active: Vec<bool>,
    pub lengths: Vec<f64>,
    pub returns: Vec<f64>,
}

impl EpisodeLog {
    pub fn agent_records(&self, world: usize, agent: usize) -> Vec<&StepRecord> {
        self.records.iter().filter(|r| r.world == world && r.agent == agent).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }

    /// Linear resampling of one agent's pose channels to `hz`, starting at
    /// the first record.
    pub fn resample(&self, world: usize, agent: usize, hz: f64) -> Vec<[f64; 4]> {
        let recs = self.agent_records(world, agent);
        if recs.is_empty() {
            return Vec::new();
        }
        let t_of = |r: &StepRecord| r.step as f64 * self.control_dt;
        let t0 = t_of(recs[0]);
        let t1 = t_of(recs[recs.len() - 1]);
        let count = ((t1 - t0) * hz).floor() as usize + 1;
        let mut out = Vec::with_capacity(count);
        let mut j = 0;
        for k in 0..count {
            let t = t0 + k as f64 / hz;
            while j + 1 < recs.len() && t_of(recs[j + 1]) < t {
                j += 1;
            }
            let a = recs[j];
            let b = recs[(j + 1).min(recs.len() - 1)];
            let span = t_of(b) - t_of(a);
            let u = if span > 0.0 { ((t - t_of(a)) / span).clamp(0.0, 1.0) } else { 0.0 };
            let lerp = |x: f64, y: f64| x + (y - x) * u;
            out.push([t, lerp(a.x, b.x), lerp(a.y, b.y), lerp(a.vx.hypot(a.vy), b.vx.hypot(b.vy))]);
        }
        out
    }
}
