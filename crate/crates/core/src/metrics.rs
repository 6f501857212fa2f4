//! Episode safety metrics: success rate, collision rate and deceleration
//! rate to avoid a crash (DRAC).

use serde::{Deserialize, Serialize};

use crate::engine::{EpisodeLog, StepRecord};
use crate::geometry::{dot, norm, sub, to_body};
use crate::reward::Reason;

/// DRAC threshold separating critical interactions, m/s².
pub const DRAC_THRESHOLD: f64 = 3.4;

/// Deceleration needed to avoid a neighbour closing at `closing_speed`
/// over `gap`; zero unless closing over a positive gap.
pub fn drac(closing_speed: f64, gap: f64) -> f64 {
    if closing_speed > 0.0 && gap > 0.0 {
        closing_speed * closing_speed / (2.0 * gap)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub success_rate: f64,
    pub collision_rate: f64,
    /// Valid spawns the rates are taken over.
    pub num_agents: usize,
    /// Episode-maximum DRAC per slot; zero for inactive slots.
    pub max_drac: Vec<f64>,
    /// Mean of the per-agent maxima above the threshold; zero when none is.
    pub mean_max_drac: f64,
    pub agents_over_threshold: usize,
}

fn world_velocity(r: &StepRecord) -> [f64; 2] {
    let (s, c) = r.yaw.sin_cos();
    [c * r.vx - s * r.vy, s * r.vx + c * r.vy]
}

/// Closing speed and bumper gap from `ego` to a neighbour ahead of it.
pub fn following_interaction(ego: &StepRecord, other: &StepRecord, ego_len: f64, other_len: f64) -> Option<(f64, f64)> {
    let rel = sub([other.x, other.y], [ego.x, ego.y]);
    let (s, c) = ego.yaw.sin_cos();
    if to_body(rel, c, s)[0] <= 0.0 {
        return None;
    }
    let d = norm(rel);
    let rel_v = sub(world_velocity(other), world_velocity(ego));
    let closing = -dot(rel, rel_v) / d;
    Some((closing, d - 0.5 * (ego_len + other_len)))
}

pub fn episode_metrics(log: &EpisodeLog) -> EpisodeMetrics {
    let n = log.active.len();
    let valid = log.active.iter().filter(|a| **a).count();
    // invincible runs never terminate on a goal, so success reads the event stream
    let mut reached = vec![false; n];
    let mut collided = vec![false; n];
    for e in &log.events {
        match e.kind {
            Reason::Goal => reached[e.world * log.num_agents + e.agent] = true,
            Reason::Collision => collided[e.world * log.num_agents + e.agent] = true,
            _ => {}
        }
    }
    let goals = (0..n).filter(|&i| log.active[i] && (reached[i] || log.reasons[i] == Reason::Goal)).count();
    let mut max_drac = vec![0.0f64; n];
    let mut k = 0;
    while k < log.records.len() {
        let step = log.records[k].step;
        let mut end = k;
        while end < log.records.len() && log.records[end].step == step {
            end += 1;
        }
        let frame = &log.records[k..end];
        for a in frame {
            let ia = a.world * log.num_agents + a.agent;
            for b in frame {
                if a.world != b.world || a.agent == b.agent {
                    continue;
                }
                let ib = b.world * log.num_agents + b.agent;
                if let Some((closing, gap)) = following_interaction(a, b, log.lengths[ia], log.lengths[ib]) {
                    max_drac[ia] = max_drac[ia].max(drac(closing, gap));
                }
            }
        }
        k = end;
    }
    let over: Vec<f64> = max_drac.iter().copied().filter(|d| *d > DRAC_THRESHOLD).collect();
    let rate = |count: usize| if valid == 0 { 0.0 } else { count as f64 / valid as f64 };
    EpisodeMetrics {
        success_rate: rate(goals),
        collision_rate: rate((0..n).filter(|&i| log.active[i] && collided[i]).count()),
        num_agents: valid,
        mean_max_drac: if over.is_empty() { 0.0 } else { over.iter().sum::<f64>() / over.len() as f64 },
        agents_over_threshold: over.len(),
        max_drac,
    }
}
