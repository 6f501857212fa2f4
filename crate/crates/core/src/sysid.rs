//! Cross-entropy system identification of the 20-parameter vehicle vector
//! against reference rollouts of scripted maneuvers.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::wrap_angle;
use crate::rng::{substream, Stream};
use crate::vehicle::{decode_action, step_dynamic, AgentDynState, Contact, SurfaceSlot, VehicleParams, NUM_PARAMS, PARAM_NAMES};

/// Recording rate of rollouts, Hz.
pub const LOG_HZ: f64 = 60.0;
/// Channel weights: position, yaw, speed, yaw rate, wheel speed, steer.
pub const CHANNEL_WEIGHTS: [f64; 6] = [1.0, 0.4, 0.35, 0.25, 0.05, 0.05];
pub const FINAL_POSITION_WEIGHT: f64 = 1.5;
pub const FINAL_SPEED_WEIGHT: f64 = 0.75;
/// Full-suite maneuver count per tier.
pub const TIER_COUNTS: [usize; 5] = [17, 64, 18, 39, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Longitudinal,
    Lateral,
    Combined,
    Frequency,
    Surface,
}

impl Tier {
    pub const ALL: [Tier; 5] = [Tier::Longitudinal, Tier::Lateral, Tier::Combined, Tier::Frequency, Tier::Surface];
}

/// Surface under the vehicle from `from` seconds on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePatch {
    pub from: f64,
    pub slot: SurfaceSlot,
    pub mu: f64,
}

pub const DRY_PATCH_MU: f64 = 1.0;
pub const WET_PATCH_MU: f64 = 0.75;
pub const GRAVEL_PATCH_MU: f64 = 0.60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maneuver {
    pub id: String,
    pub tier: Tier,
    pub duration: f64,
    /// Raw action keyframes `(t, action)`, linearly interpolated and held
    /// past the last key.
    pub keys: Vec<(f64, [f64; 3])>,
    pub surfaces: Vec<SurfacePatch>,
}

impl Maneuver {
    pub fn action_at(&self, t: f64) -> [f64; 3] {
        let k = &self.keys;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, a0), (t1, a1)) = (w[0], w[1]);
            if t < t1 {
                let u = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return [0, 1, 2].map(|c| a0[c] + (a1[c] - a0[c]) * u);
            }
        }
        k[k.len() - 1].1
    }

    pub fn surface_at(&self, t: f64) -> SurfacePatch {
        let mut cur = self.surfaces[0];
        for p in &self.surfaces {
            if p.from <= t {
                cur = *p;
            }
        }
        cur
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SimError::Invalid(format!("maneuver {}: {m}", self.id)));
        if self.keys.is_empty() || self.surfaces.is_empty() {
            return bad("empty schedule");
        }
        if self.keys[0].0 > 0.0 || self.surfaces[0].from > 0.0 {
            return bad("schedule must start at t = 0");
        }
        if self.keys.windows(2).any(|w| w[1].0 < w[0].0) {
            return bad("keyframes out of order");
        }
        let in_bounds = |a: &[f64; 3]| (0.0..=1.0).contains(&a[0]) && (-1.0..=1.0).contains(&a[1]) && (0.0..=1.0).contains(&a[2]);
        if !self.keys.iter().all(|(_, a)| in_bounds(a)) {
            return bad("action out of bounds");
        }
        Ok(())
    }
}

fn dry() -> Vec<SurfacePatch> {
    vec![SurfacePatch {
        from: 0.0,
        slot: SurfaceSlot::Dry,
        mu: DRY_PATCH_MU,
    }]
}

fn maneuver(id: String, tier: Tier, duration: f64, keys: Vec<(f64, [f64; 3])>) -> Maneuver {
    Maneuver {
        id,
        tier,
        duration,
        keys,
        surfaces: dry(),
    }
}

/// Every maneuver of one tier in the full suite.
pub fn tier_suite(tier: Tier) -> Vec<Maneuver> {
    let mut out = Vec::new();
    match tier {
        Tier::Longitudinal => {
            for k in 1..=10 {
                let th = k as f64 / 10.0;
                out.push(maneuver(format!("throttle_{k:02}"), tier, 6.0, vec![(0.0, [th, 0.0, 0.0])]));
            }
            for (k, b) in [0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
                out.push(maneuver(
                    format!("brake_{k}"),
                    tier,
                    7.0,
                    vec![(0.0, [1.0, 0.0, 0.0]), (4.0, [1.0, 0.0, 0.0]), (4.0, [0.0, 0.0, b])],
                ));
            }
            out.push(maneuver("ramp_up".into(), tier, 8.0, vec![(0.0, [0.0; 3]), (8.0, [1.0, 0.0, 0.0])]));
            out.push(maneuver(
                "ramp_down".into(),
                tier,
                8.0,
                vec![(0.0, [1.0, 0.0, 0.0]), (4.0, [1.0, 0.0, 0.0]), (8.0, [0.0, 0.0, 0.0])],
            ));
            out.push(maneuver(
                "ramp_brake".into(),
                tier,
                8.0,
                vec![(0.0, [1.0, 0.0, 0.0]), (4.0, [1.0, 0.0, 0.0]), (4.0, [0.0; 3]), (8.0, [0.0, 0.0, 1.0])],
            ));
        }
        Tier::Lateral => {
            // step steer and constant radius at four throttles, four amplitudes, both sides
            for (ti, th) in [0.25, 0.5, 0.75, 1.0].into_iter().enumerate() {
                for (ai, amp) in [0.2, 0.4, 0.7, 1.0].into_iter().enumerate() {
                    for side in [1.0, -1.0] {
                        let s = side * amp;
                        let tag = if side > 0.0 { "l" } else { "r" };
                        out.push(maneuver(
                            format!("step_{ti}_{ai}_{tag}"),
                            tier,
                            6.0,
                            vec![(0.0, [th, 0.0, 0.0]), (2.0, [th, 0.0, 0.0]), (2.0, [th, s, 0.0])],
                        ));
                        out.push(maneuver(format!("radius_{ti}_{ai}_{tag}"), tier, 6.0, vec![(0.0, [th, s, 0.0])]));
                    }
                }
            }
        }
        Tier::Combined => {
            // trail braking after a straight run
            for (ti, th) in [0.4, 0.7, 1.0].into_iter().enumerate() {
                for (si, st) in [0.3, 0.6, 1.0].into_iter().enumerate() {
                    for side in [1.0, -1.0] {
                        let s = side * st;
                        let tag = if side > 0.0 { "l" } else { "r" };
                        out.push(maneuver(
                            format!("trail_{ti}_{si}_{tag}"),
                            tier,
                            7.0,
                            vec![(0.0, [th, 0.0, 0.0]), (4.0, [th, 0.0, 0.0]), (4.0, [0.0, s, 0.6]), (7.0, [0.0, s, 0.1])],
                        ));
                    }
                }
            }
        }
        Tier::Frequency => {
            let rate = 30.0;
            for (ti, th) in [0.3, 0.6, 0.9].into_iter().enumerate() {
                for (ai, amp) in [0.2, 0.5].into_iter().enumerate() {
                    for (fi, f) in [0.25, 0.5, 1.0, 1.5, 2.0, 3.0].into_iter().enumerate() {
                        let keys = (0..=(6.0 * rate) as usize)
                            .map(|k| {
                                let t = k as f64 / rate;
                                (t, [th, amp * (std::f64::consts::TAU * f * t).sin(), 0.0])
                            })
                            .collect();
                        out.push(maneuver(format!("sine_{ti}_{ai}_{fi}"), tier, 6.0, keys));
                    }
                }
                // chirp from 0.2 to 3 Hz
                let keys = (0..=(8.0 * rate) as usize)
                    .map(|k| {
                        let t = k as f64 / rate;
                        let phase = std::f64::consts::TAU * (0.2 * t + 0.5 * (2.8 / 8.0) * t * t);
                        (t, [th, 0.4 * phase.sin(), 0.0])
                    })
                    .collect();
                out.push(maneuver(format!("chirp_{ti}"), tier, 8.0, keys));
            }
        }
        Tier::Surface => {
            let mut m = maneuver(
                "transition".into(),
                tier,
                9.0,
                vec![(0.0, [1.0, 0.0, 0.0]), (3.0, [1.0, 0.3, 0.0]), (6.0, [0.0, -0.3, 0.8]), (9.0, [0.0, 0.0, 1.0])],
            );
            m.surfaces = vec![
                SurfacePatch {
                    from: 0.0,
                    slot: SurfaceSlot::Dry,
                    mu: DRY_PATCH_MU,
                },
                SurfacePatch {
                    from: 3.0,
                    slot: SurfaceSlot::Wet,
                    mu: WET_PATCH_MU,
                },
                SurfacePatch {
                    from: 6.0,
                    slot: SurfaceSlot::Gravel,
                    mu: GRAVEL_PATCH_MU,
                },
            ];
            out.push(m);
        }
    }
    out
}

/// Evenly spread indices, always keeping the first and last.
fn spread(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    if k == 1 {
        return vec![0];
    }
    (0..k).map(|j| (j * (n - 1) + (k - 1) / 2) / (k - 1)).collect()
}

/// Suite sampled at `scale` of the full tier counts (at least one per
/// tier), optionally capped per tier. `scale = 1` yields the full suite.
pub fn generate_maneuvers(scale: f64, max_per_tier: Option<usize>) -> Vec<Maneuver> {
    let mut out = Vec::new();
    for tier in Tier::ALL {
        let full = tier_suite(tier);
        let mut k = ((full.len() as f64 * scale).round() as usize).clamp(1, full.len());
        if let Some(cap) = max_per_tier {
            k = k.min(cap.max(1));
        }
        out.extend(spread(full.len(), k).into_iter().map(|i| full[i].clone()));
    }
    out
}

/// One 60 Hz frame of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Frame {
    pub pos: [f64; 2],
    pub yaw: f64,
    pub speed: f64,
    pub yaw_rate: f64,
    pub wheel: [f64; 2],
    pub steer: f64,
}

impl Frame {
    fn of(s: &AgentDynState) -> Self {
        Frame {
            pos: s.pos,
            yaw: s.yaw,
            speed: s.speed(),
            yaw_rate: s.yaw_rate,
            wheel: [s.wheel_front, s.wheel_rear],
            steer: s.steer,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.pos.iter().chain(self.wheel.iter()).chain([self.yaw, self.speed, self.yaw_rate, self.steer].iter()).all(|v| v.is_finite())
    }
}

/// Drive the dynamic model through a maneuver: raw actions decoded at the
/// control rate, `decimation` substeps of `physics_dt`, frames at 60 Hz.
pub fn rollout(p: &VehicleParams, m: &Maneuver, physics_dt: f64, decimation: usize) -> Vec<Frame> {
    let control_dt = physics_dt * decimation as f64;
    let ticks = (m.duration / control_dt).round() as usize;
    let every = ((1.0 / LOG_HZ) / physics_dt).round().max(1.0) as usize;
    let mut s = AgentDynState::at_rest([0.0, 0.0], 0.0);
    let mut frames = vec![Frame::of(&s)];
    let mut sub = 0usize;
    for k in 0..ticks {
        let t = k as f64 * control_dt;
        let a = decode_action(m.action_at(t));
        let patch = m.surface_at(t);
        let contact = Contact::new(patch.mu, patch.slot, p);
        for _ in 0..decimation {
            s = step_dynamic(&s, &a, physics_dt, p, contact);
            sub += 1;
            if sub % every == 0 {
                frames.push(Frame::of(&s));
            }
        }
    }
    frames
}

/// Weighted channel MSE plus terminal position and speed penalties.
pub fn sysid_loss(student: &[Frame], teacher: &[Frame]) -> Result<f64> {
    if student.len() != teacher.len() || student.is_empty() {
        return Err(SimError::Shape(format!("logs of {} and {} frames", student.len(), teacher.len())));
    }
    let mut mse = [0.0; 6];
    for (a, b) in student.iter().zip(teacher) {
        let dp = [a.pos[0] - b.pos[0], a.pos[1] - b.pos[1]];
        mse[0] += dp[0] * dp[0] + dp[1] * dp[1];
        mse[1] += wrap_angle(a.yaw - b.yaw).powi(2);
        mse[2] += (a.speed - b.speed).powi(2);
        mse[3] += (a.yaw_rate - b.yaw_rate).powi(2);
        mse[4] += 0.5 * ((a.wheel[0] - b.wheel[0]).powi(2) + (a.wheel[1] - b.wheel[1]).powi(2));
        mse[5] += (a.steer - b.steer).powi(2);
    }
    let t = student.len() as f64;
    let mut loss: f64 = mse.iter().zip(CHANNEL_WEIGHTS).map(|(m, w)| w * m / t).sum();
    let (a, b) = (student[student.len() - 1], teacher[teacher.len() - 1]);
    loss += FINAL_POSITION_WEIGHT * ((a.pos[0] - b.pos[0]).powi(2) + (a.pos[1] - b.pos[1]).powi(2));
    loss += FINAL_SPEED_WEIGHT * (a.speed - b.speed).powi(2);
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub init_std_frac: f64,
    pub min_std_frac: f64,
    pub stage_weights: [f64; 5],
    pub refinement_window: f64,
    pub brake_window: f64,
    pub total_trials: usize,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            population: 24,
            elite_frac: 0.25,
            init_std_frac: 0.25,
            min_std_frac: 0.05,
            stage_weights: [0.30, 0.20, 0.15, 0.20, 0.15],
            refinement_window: 0.18,
            brake_window: 0.10,
            total_trials: 320,
            seed: 42,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.stage_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SimError::Invalid(format!("stage weights sum to {sum}")));
        }
        if self.population < 4 {
            return Err(SimError::Invalid("population must be at least 4".into()));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return Err(SimError::Invalid("elite_frac must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// Trials per stage; rounding remainders go to the earliest stages.
    pub fn stage_trials(&self) -> [usize; 5] {
        let raw = self.stage_weights.map(|w| w * self.total_trials as f64);
        let mut out = raw.map(|r| r.floor() as usize);
        let mut left = self.total_trials - out.iter().sum::<usize>();
        for o in out.iter_mut() {
            if left == 0 {
                break;
            }
            *o += 1;
            left -= 1;
        }
        out
    }

    pub fn elite_count(&self) -> usize {
        ((self.population as f64 * self.elite_frac).round() as usize).max(1)
    }
}

/// Search box per parameter: ±50% of the default, with absolute ranges for
/// parameters whose default is zero.
pub fn default_bounds() -> Vec<(f64, f64)> {
    let d = VehicleParams::default().to_vector();
    PARAM_NAMES
        .iter()
        .zip(d)
        .map(|(name, v)| match *name {
            "com_offset" => (-0.3, 0.3),
            _ => (0.5 * v, 1.5 * v),
        })
        .collect()
}

/// Outcome of a generic CEM minimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemRun {
    pub best: Vec<f64>,
    pub best_loss: f64,
    /// Best-so-far loss after each trial.
    pub history: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub rejected: Vec<String>,
}

/// Minimise `f` from `start` with per-coordinate `std`, floored at
/// `min_std`, inside `bounds`, over `trials` evaluations.
pub fn cem_minimize<F>(
    f: F,
    start: &[f64],
    std: &[f64],
    min_std: &[f64],
    bounds: &[(f64, f64)],
    cfg: &CemConfig,
    trials: usize,
    rng: &mut impl Rng,
) -> CemRun
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = start.len();
    let mut mean = start.to_vec();
    let mut sd = std.to_vec();
    let mut best = start.to_vec();
    let mut best_loss = f(start);
    let mut history = Vec::with_capacity(trials);
    let mut rejected = Vec::new();
    let mut done = 0;
    while done < trials {
        let n = cfg.population.min(trials - done);
        let cands: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..dim)
                    .map(|d| {
                        let z: f64 = rng.sample(StandardNormal);
                        (mean[d] + sd[d] * z).clamp(bounds[d].0, bounds[d].1)
                    })
                    .collect()
            })
            .collect();
        let losses: Vec<f64> = cands.par_iter().map(|c| f(c)).collect();
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for (i, l) in losses.iter().enumerate() {
            if l.is_finite() {
                order.push(i);
            } else {
                rejected.push(format!("trial {}: non-finite loss", done + i));
            }
            if l.is_finite() && *l < best_loss {
                best_loss = *l;
                best = cands[i].clone();
            }
            history.push(best_loss);
        }
        done += n;
        order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
        order.truncate(cfg.elite_count());
        if order.is_empty() {
            continue;
        }
        let k = order.len() as f64;
        for d in 0..dim {
            let m = order.iter().map(|&i| cands[i][d]).sum::<f64>() / k;
            let v = order.iter().map(|&i| (cands[i][d] - m).powi(2)).sum::<f64>() / k;
            mean[d] = m;
            sd[d] = v.sqrt().max(min_std[d]);
        }
    }
    CemRun {
        best,
        best_loss,
        history,
        mean,
        std: sd,
        rejected,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Longitudinal,
    Steering,
    Surface,
    Refinement,
    BrakePreservation,
}

impl StageKind {
    pub const ALL: [StageKind; 5] =
        [StageKind::Longitudinal, StageKind::Steering, StageKind::Surface, StageKind::Refinement, StageKind::BrakePreservation];

    pub fn params(self) -> Vec<usize> {
        let names: &[&str] = match self {
            StageKind::Longitudinal | StageKind::BrakePreservation => {
                &["tau_drive_max", "tau_brake_front", "tau_brake_rear", "wheel_mass", "inertia_scale"]
            }
            StageKind::Steering => &[
                "theta_max",
                "kp",
                "kd",
                "tau_steer_max",
                "susp_stiffness",
                "susp_damping",
                "lambda_yaw",
                "lambda_lat",
                "com_offset",
            ],
            StageKind::Surface => &["f_lon_dry", "f_lat_dry", "f_lon_wet", "f_lat_wet", "f_lon_gravel", "f_lat_gravel"],
            StageKind::Refinement => &PARAM_NAMES,
        };
        names.iter().map(|n| VehicleParams::index_of(n).expect("known parameter")).collect()
    }

    pub fn tiers(self) -> &'static [Tier] {
        match self {
            StageKind::Longitudinal | StageKind::BrakePreservation => &[Tier::Longitudinal],
            StageKind::Steering => &[Tier::Lateral, Tier::Combined, Tier::Frequency],
            StageKind::Surface => &[Tier::Surface],
            StageKind::Refinement => &Tier::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: StageKind,
    pub maneuvers: usize,
    pub trials: usize,
    pub best_loss: f64,
    /// Loss of the inherited configuration on this stage's maneuvers.
    pub start_loss: f64,
    pub start_params: Vec<f64>,
    pub best_params: Vec<f64>,
    pub history: Vec<f64>,
    pub rejected: Vec<String>,
    /// Stream index the stage sampled from; replaying a stage from its
    /// `start_params` with this seed reproduces it.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysidReport {
    pub stages: Vec<StageReport>,
    pub best: Vec<f64>,
}

/// Reference rollouts for every maneuver of a suite.
pub struct Teacher {
    pub maneuvers: Vec<Maneuver>,
    pub logs: Vec<Vec<Frame>>,
    pub physics_dt: f64,
    pub decimation: usize,
}

impl Teacher {
    /// Teacher logs from the dynamic model under hidden parameters.
    pub fn from_params(hidden: &VehicleParams, maneuvers: Vec<Maneuver>, physics_dt: f64, decimation: usize) -> Result<Self> {
        for m in &maneuvers {
            m.validate()?;
        }
        let logs = maneuvers.par_iter().map(|m| rollout(hidden, m, physics_dt, decimation)).collect();
        Ok(Teacher {
            maneuvers,
            logs,
            physics_dt,
            decimation,
        })
    }

    /// Teacher from externally supplied 60 Hz logs.
    pub fn from_logs(maneuvers: Vec<Maneuver>, logs: Vec<Vec<Frame>>, physics_dt: f64, decimation: usize) -> Result<Self> {
        if maneuvers.len() != logs.len() {
            return Err(SimError::Shape(format!("{} maneuvers, {} logs", maneuvers.len(), logs.len())));
        }
        Ok(Teacher {
            maneuvers,
            logs,
            physics_dt,
            decimation,
        })
    }

    /// Mean loss of `params` over the maneuvers with indices `which`;
    /// infinite when a rollout diverges.
    pub fn loss(&self, params: &VehicleParams, which: &[usize]) -> f64 {
        let mut total = 0.0;
        for &i in which {
            let student = rollout(params, &self.maneuvers[i], self.physics_dt, self.decimation);
            if !student.iter().all(Frame::is_finite) {
                return f64::INFINITY;
            }
            match sysid_loss(&student, &self.logs[i]) {
                Ok(l) => total += l,
                Err(_) => return f64::INFINITY,
            }
        }
        total / which.len().max(1) as f64
    }
}

/// Perturb every fitted parameter by `frac` of its default with a seeded
/// random sign.
pub fn perturbed_teacher_params(frac: f64, seed: u64) -> VehicleParams {
    let mut rng = substream(seed, Stream::Perturb, 0);
    let base = VehicleParams::default();
    let mut v = base.to_vector();
    for (i, x) in v.iter_mut().enumerate() {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        *x = if PARAM_NAMES[i] == "com_offset" { sign * frac } else { *x * (1.0 + sign * frac) };
    }
    base.with_vector(&v)
}

/// Run one stage from `start`, optimising only the stage's parameters.
pub fn run_stage(
    teacher: &Teacher,
    stage: StageKind,
    start: &[f64],
    bounds: &[(f64, f64)],
    cfg: &CemConfig,
    trials: usize,
) -> Result<StageReport> {
    let stage_idx = StageKind::ALL.iter().position(|s| *s == stage).expect("listed stage") as u64;
    let which: Vec<usize> = (0..teacher.maneuvers.len())
        .filter(|&i| stage.tiers().contains(&teacher.maneuvers[i].tier))
        .collect();
    if which.is_empty() {
        return Err(SimError::InsufficientSamples(format!("no maneuvers for stage {stage:?}")));
    }
    let idx = stage.params();
    let base = VehicleParams::default().with_vector(start);
    let window = match stage {
        StageKind::Refinement => Some(cfg.refinement_window),
        StageKind::BrakePreservation => Some(cfg.brake_window),
        _ => None,
    };
    let sub_bounds: Vec<(f64, f64)> = idx
        .iter()
        .map(|&i| {
            let (lo, hi) = bounds[i];
            match window {
                Some(wf) => {
                    let half = 0.5 * wf * (hi - lo);
                    ((start[i] - half).max(lo), (start[i] + half).min(hi))
                }
                None => (lo, hi),
            }
        })
        .collect();
    let ranges: Vec<f64> = idx.iter().map(|&i| bounds[i].1 - bounds[i].0).collect();
    let init_frac = window.map_or(cfg.init_std_frac, |w| cfg.init_std_frac * w);
    let std: Vec<f64> = ranges.iter().map(|r| init_frac * r).collect();
    let min_std: Vec<f64> = ranges.iter().map(|r| cfg.min_std_frac * window.unwrap_or(1.0) * r).collect();
    let x0: Vec<f64> = idx.iter().map(|&i| start[i]).collect();
    let assemble = |x: &[f64]| {
        let mut v = start.to_vec();
        for (k, &i) in idx.iter().enumerate() {
            v[i] = x[k];
        }
        base.with_vector(&v)
    };
    let objective = |x: &[f64]| teacher.loss(&assemble(x), &which);
    let mut rng = substream(cfg.seed, Stream::Search, stage_idx);
    let run = cem_minimize(objective, &x0, &std, &min_std, &sub_bounds, cfg, trials, &mut rng);
    let mut best_params = start.to_vec();
    for (k, &i) in idx.iter().enumerate() {
        best_params[i] = run.best[k];
    }
    Ok(StageReport {
        stage,
        maneuvers: which.len(),
        trials,
        start_loss: teacher.loss(&base.with_vector(start), &which),
        best_loss: run.best_loss,
        start_params: start.to_vec(),
        best_params,
        history: run.history,
        rejected: run.rejected,
        seed: stage_idx,
    })
}

/// All five stages in order; each starts from the previous stage's best.
pub fn run_cem(teacher: &Teacher, cfg: &CemConfig, bounds: &[(f64, f64)], start: &VehicleParams) -> Result<SysidReport> {
    cfg.validate()?;
    if bounds.len() != NUM_PARAMS {
        return Err(SimError::Shape(format!("{} bounds for {NUM_PARAMS} parameters", bounds.len())));
    }
    let mut cur = start.to_vector().to_vec();
    for (i, (&(lo, hi), v)) in bounds.iter().zip(&cur).enumerate() {
        if !(lo <= *v && *v <= hi) {
            return Err(SimError::Invalid(format!("{} = {v} outside bounds [{lo}, {hi}]", PARAM_NAMES[i])));
        }
    }
    let trials = cfg.stage_trials();
    let mut stages = Vec::new();
    for (k, stage) in StageKind::ALL.into_iter().enumerate() {
        let rep = run_stage(teacher, stage, &cur, bounds, cfg, trials[k])?;
        cur = rep.best_params.clone();
        stages.push(rep);
    }
    Ok(SysidReport { stages, best: cur })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_suite_tier_counts() {
        let all = generate_maneuvers(1.0, None);
        for (tier, n) in Tier::ALL.iter().zip(TIER_COUNTS) {
            assert_eq!(all.iter().filter(|m| m.tier == *tier).count(), n, "{tier:?}");
        }
        assert_eq!(all.len(), 139);
        all.iter().for_each(|m| m.validate().unwrap());
    }

    #[test]
    fn desk_scale_keeps_every_tier() {
        let desk = generate_maneuvers(0.2, Some(5));
        for tier in Tier::ALL {
            let n = desk.iter().filter(|m| m.tier == tier).count();
            assert!((1..=5).contains(&n), "{tier:?}: {n}");
        }
        // throttle coverage spans 10% to 100%
        let lon: Vec<&Maneuver> = desk.iter().filter(|m| m.tier == Tier::Longitudinal).collect();
        assert_eq!(lon[0].id, "throttle_01");
        assert_eq!(generate_maneuvers(0.2, Some(5)), desk);
    }

    #[test]
    fn stage_split_of_320() {
        assert_eq!(CemConfig::default().stage_trials(), [96, 64, 48, 64, 48]);
        assert_eq!(CemConfig::default().elite_count(), 6);
    }

    #[test]
    fn loss_offsets() {
        let base: Vec<Frame> = (0..10).map(|k| Frame { speed: k as f64, ..Default::default() }).collect();
        assert_eq!(sysid_loss(&base, &base).unwrap(), 0.0);
        let shifted: Vec<Frame> = base.iter().map(|f| Frame { pos: [f.pos[0] + 1.0, f.pos[1]], ..*f }).collect();
        assert!((sysid_loss(&shifted, &base).unwrap() - 2.5).abs() < 1e-12);
        let yawed: Vec<Frame> = base.iter().map(|f| Frame { yaw: f.yaw + 1.0, ..*f }).collect();
        assert!((sysid_loss(&yawed, &base).unwrap() - 0.4).abs() < 1e-12);
        assert!(sysid_loss(&base[..3], &base).is_err());
    }

    #[test]
    fn cem_toy_quadratic() {
        let cfg = CemConfig {
            population: 4,
            ..CemConfig::default()
        };
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2);
        let bounds = [(-10.0, 10.0); 2];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // a single elite per generation, so the floor keeps the walk moving
        let run = cem_minimize(f, &[0.0, 0.0], &[5.0, 5.0], &[0.25, 0.25], &bounds, &cfg, 60 * 4, &mut rng);
        // within 1% of the search range
        assert!((run.best[0] - 3.0).abs() < 0.2 && (run.best[1] + 1.0).abs() < 0.2, "{:?}", run.best);
        assert!(run.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
