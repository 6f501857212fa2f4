//! Ten-term reward, sparse event detection and termination priority.

use serde::{Deserialize, Serialize};

use crate::geometry::{circle_obb_overlap, dot, norm, norm_sq, sub, to_body, Vec2};
use crate::obs::AgentView;
use crate::scenario::{is_edge, is_lane};
use crate::world::WorldBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub goal_weight: f64,
    pub goal_radius: f64,
    pub collision_weight: f64,
    pub collision_warmup: u32,
    pub crash_weight: f64,
    pub drift_limit: f64,
    pub speed_limit: f64,
    pub lane_forbidden_weight: f64,
    pub progress_weight: f64,
    pub progress_clamp: f64,
    pub lane_weight: f64,
    pub lane_sigma: f64,
    pub heading_weight: f64,
    pub offroad_weight: f64,
    pub offroad_lat_limit: f64,
    pub offroad_dist_limit: f64,
    pub idle_weight: f64,
    pub idle_speed: f64,
    pub ttc_alpha_v: f64,
    pub ttc_pmax_v: f64,
    pub edge_alpha: f64,
    pub edge_pmax: f64,
    pub ttc_floor: f64,
    pub edge_range: f64,
    /// Half-width of the corridor ahead searched for road edges, m.
    pub edge_corridor: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            goal_weight: 45.0,
            goal_radius: 3.0,
            collision_weight: 6.0,
            collision_warmup: 24,
            crash_weight: 10.0,
            drift_limit: 100.0,
            speed_limit: 100.0,
            lane_forbidden_weight: 20.0,
            progress_weight: 2.0,
            progress_clamp: 2.0,
            lane_weight: 0.08,
            lane_sigma: 1.75,
            heading_weight: 0.8,
            offroad_weight: 0.5,
            offroad_lat_limit: 3.25,
            offroad_dist_limit: 6.0,
            idle_weight: 0.05,
            idle_speed: 1.0,
            ttc_alpha_v: 0.10,
            ttc_pmax_v: 0.35,
            edge_alpha: 0.07,
            edge_pmax: 0.40,
            ttc_floor: 0.5,
            edge_range: 40.0,
            edge_corridor: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    None,
    Goal,
    Collision,
    Crash,
    LaneForbidden,
    Timeout,
}

/// Raw event detections for one agent on one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventFlags {
    pub goal: bool,
    pub collision: bool,
    pub crash: bool,
    pub lane_forbidden: bool,
    pub timeout: bool,
}

impl EventFlags {
    /// Highest-priority sparse event: goal, crash, lane_forbidden, collision.
    pub fn primary(&self) -> Reason {
        if self.goal {
            Reason::Goal
        } else if self.crash {
            Reason::Crash
        } else if self.lane_forbidden {
            Reason::LaneForbidden
        } else if self.collision {
            Reason::Collision
        } else {
            Reason::None
        }
    }

    pub fn any(&self) -> bool {
        self.goal || self.collision || self.crash || self.lane_forbidden || self.timeout
    }
}

/// Per-term reward breakdown, signed as applied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub goal: f64,
    pub collision: f64,
    pub crash: f64,
    pub lane_forbidden: f64,
    pub progress: f64,
    pub lane: f64,
    pub offroad: f64,
    pub idle: f64,
    pub ttc_vehicle: f64,
    pub ttc_edge: f64,
}

impl RewardTerms {
    pub fn dense_sum(&self) -> f64 {
        self.progress + self.lane + self.offroad + self.idle + self.ttc_vehicle + self.ttc_edge
    }

    pub fn total(&self) -> f64 {
        self.goal + self.collision + self.crash + self.lane_forbidden + self.dense_sum()
    }
}

#[inline]
pub fn detect_goal(pos: Vec2, goal: Vec2, cfg: &RewardConfig) -> bool {
    norm(sub(goal, pos)) <= cfg.goal_radius
}

/// Divergence guard: drift from start, non-finite state, runaway speed.
#[inline]
pub fn detect_crash(pos: Vec2, start: Vec2, speed: f64, finite: bool, cfg: &RewardConfig) -> bool {
    !finite || !(norm(sub(pos, start)) <= cfg.drift_limit) || !(speed <= cfg.speed_limit)
}

/// Three-circle hull overlap between two agents.
#[inline]
pub fn hulls_overlap(a: &AgentView, b: &AgentView) -> bool {
    let reach = a.hull.radius + b.hull.radius;
    let r2 = reach * reach;
    a.centers
        .iter()
        .any(|ca| b.centers.iter().any(|cb| norm_sq(sub(*cb, *ca)) < r2))
}

#[inline]
pub fn warmup_elapsed(step: u32, spawn_step: u32, cfg: &RewardConfig) -> bool {
    step.saturating_sub(spawn_step) >= cfg.collision_warmup
}

/// Any hull circle overlapping a road-edge box among `candidates`.
pub fn detect_lane_forbidden(batch: &WorldBatch, w: usize, ego: &AgentView, candidates: impl Iterator<Item = usize>) -> bool {
    for i in candidates {
        let row = batch.row(w, i);
        if !is_edge(batch.type_codes[row]) {
            continue;
        }
        for c in &ego.centers {
            if circle_obb_overlap(
                *c,
                ego.hull.radius,
                batch.midpoints[row],
                batch.directions[row],
                batch.half_lengths[row],
                batch.half_widths[row],
            ) {
                return true;
            }
        }
    }
    false
}

/// Smallest forward distance to a road-edge midpoint among `candidates`
/// inside the corridor ahead, infinite when there is none.
pub fn edge_nearest_ahead(batch: &WorldBatch, w: usize, ego: &AgentView, candidates: impl Iterator<Item = usize>, cfg: &RewardConfig) -> f64 {
    let mut nearest = f64::INFINITY;
    for i in candidates {
        let row = batch.row(w, i);
        if !is_edge(batch.type_codes[row]) {
            continue;
        }
        let b = to_body(sub(batch.midpoints[row], ego.pos), ego.cos, ego.sin);
        if b[0] > 0.0 && b[0] <= cfg.edge_range && b[1].abs() <= cfg.edge_corridor && b[0] < nearest {
            nearest = b[0];
        }
    }
    nearest
}

/// Time to cover `distance` at the forward speed, floored at 0.1 m/s.
#[inline]
pub fn edge_tau(distance: f64, ego: &AgentView) -> f64 {
    if distance.is_finite() {
        distance / ego.vel_body[0].max(0.1)
    } else {
        f64::INFINITY
    }
}

/// Time to reach the nearest road edge ahead inside the forward corridor,
/// infinite when none lies within range.
pub fn edge_ttc(batch: &WorldBatch, w: usize, ego: &AgentView, candidates: impl Iterator<Item = usize>, cfg: &RewardConfig) -> f64 {
    edge_tau(edge_nearest_ahead(batch, w, ego, candidates, cfg), ego)
}

/// Predicate selecting driving-lane rows.
#[inline]
pub fn lane_row(batch: &WorldBatch, w: usize, i: usize) -> bool {
    is_lane(batch.type_codes[batch.row(w, i)])
}

#[inline]
pub fn ttc_penalty(tau: f64, alpha: f64, pmax: f64, floor: f64) -> f64 {
    if tau.is_finite() {
        (alpha / tau.max(floor)).min(pmax)
    } else {
        0.0
    }
}

#[inline]
pub fn lane_quality(lateral: f64, heading_cos: f64, cfg: &RewardConfig) -> f64 {
    (-(lateral / cfg.lane_sigma).powi(2)).exp() * ((1.0 - cfg.heading_weight) + cfg.heading_weight * heading_cos.max(0.0))
}

/// Nearest lane segment in the form `(row index, distance, signed lateral)`.
pub type LaneHit = Option<(usize, f64, f64)>;

/// Dense terms for an agent that moved from `prev_pos` to `ego.pos`.
pub fn dense_rewards(
    batch: &WorldBatch,
    w: usize,
    ego: &AgentView,
    prev_pos: Vec2,
    goal: Vec2,
    lane: LaneHit,
    min_vehicle_ttc: f64,
    edge_tau: f64,
    cfg: &RewardConfig,
) -> RewardTerms {
    let mut t = RewardTerms::default();
    match lane {
        Some((i, dist, lateral)) => {
            let row = batch.row(w, i);
            let mut dir = batch.directions[row];
            // orient the lane toward the goal
            if dot(dir, sub(goal, ego.pos)) < 0.0 {
                dir = [-dir[0], -dir[1]];
            }
            let disp = dot(sub(ego.pos, prev_pos), dir).clamp(-cfg.progress_clamp, cfg.progress_clamp);
            t.progress = cfg.progress_weight * disp;
            let heading_cos = ego.cos * dir[0] + ego.sin * dir[1];
            t.lane = cfg.lane_weight * lane_quality(lateral, heading_cos, cfg);
            if lateral.abs() > cfg.offroad_lat_limit || dist > cfg.offroad_dist_limit {
                t.offroad = -cfg.offroad_weight;
            }
        }
        None => t.offroad = -cfg.offroad_weight,
    }
    if ego.speed() < cfg.idle_speed {
        t.idle = -cfg.idle_weight;
    }
    t.ttc_vehicle = -ttc_penalty(min_vehicle_ttc, cfg.ttc_alpha_v, cfg.ttc_pmax_v, cfg.ttc_floor);
    t.ttc_edge = -ttc_penalty(edge_tau, cfg.edge_alpha, cfg.edge_pmax, cfg.ttc_floor);
    t
}

/// Fold the consumed sparse event into the terms. Returns the termination
/// reason (`None` when the agent continues).
pub fn finalize(flags: &EventFlags, terms: &mut RewardTerms, invincible: bool, cfg: &RewardConfig) -> Reason {
    let primary = flags.primary();
    if invincible {
        return if flags.timeout { Reason::Timeout } else { Reason::None };
    }
    match primary {
        Reason::Goal => terms.goal = cfg.goal_weight,
        Reason::Crash => terms.crash = -cfg.crash_weight,
        Reason::LaneForbidden => terms.lane_forbidden = -cfg.lane_forbidden_weight,
        Reason::Collision => terms.collision = -cfg.collision_weight,
        _ => {}
    }
    if primary == Reason::None && flags.timeout {
        Reason::Timeout
    } else {
        primary
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn view(pos: Vec2, yaw: f64, v: f64) -> AgentView {
        AgentView::new(pos, yaw, v, 0.0, 4.0, 2.0, 2.6)
    }

    #[test]
    fn goal_radius_boundary() {
        let cfg = RewardConfig::default();
        assert!(detect_goal([2.99, 0.0], [0.0, 0.0], &cfg));
        assert!(!detect_goal([3.01, 0.0], [0.0, 0.0], &cfg));
    }

    #[test]
    fn crash_guard() {
        let cfg = RewardConfig::default();
        assert!(detect_crash([101.0, 0.0], [0.0, 0.0], 1.0, true, &cfg));
        assert!(!detect_crash([50.0, 0.0], [0.0, 0.0], 1.0, true, &cfg));
        assert!(detect_crash([0.0, 0.0], [0.0, 0.0], f64::NAN, false, &cfg));
        assert!(detect_crash([0.0, 0.0], [0.0, 0.0], 101.0, true, &cfg));
    }

    #[test]
    fn warmup_window() {
        let cfg = RewardConfig::default();
        assert!(!warmup_elapsed(10, 0, &cfg));
        assert!(!warmup_elapsed(23, 0, &cfg));
        assert!(warmup_elapsed(24, 0, &cfg));
        assert!(warmup_elapsed(30, 0, &cfg));
    }

    #[test]
    fn lane_quality_values() {
        let cfg = RewardConfig::default();
        assert_abs_diff_eq!(cfg.lane_weight * lane_quality(0.0, 1.0, &cfg), 0.08, epsilon = 1e-15);
        let q = lane_quality(1.75, 1.0, &cfg);
        assert_abs_diff_eq!(q, (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.lane_weight * q, 0.0294, epsilon = 1e-4);
        // reversed heading keeps only the position share
        assert_abs_diff_eq!(lane_quality(0.0, -1.0, &cfg), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn ttc_penalty_values() {
        let cfg = RewardConfig::default();
        assert_abs_diff_eq!(ttc_penalty(0.4, cfg.ttc_alpha_v, cfg.ttc_pmax_v, cfg.ttc_floor), 0.20, epsilon = 1e-15);
        assert_abs_diff_eq!(ttc_penalty(0.1, cfg.edge_alpha, cfg.edge_pmax, cfg.ttc_floor), 0.14, epsilon = 1e-15);
        assert_eq!(ttc_penalty(f64::INFINITY, 0.1, 0.35, 0.5), 0.0);
        assert_abs_diff_eq!(ttc_penalty(0.2, 0.5, 0.35, 0.5), 0.35, epsilon = 1e-15);
    }

    #[test]
    fn priority_order() {
        let cfg = RewardConfig::default();
        let all = EventFlags {
            goal: true,
            collision: true,
            crash: true,
            lane_forbidden: true,
            timeout: false,
        };
        let mut t = RewardTerms::default();
        assert_eq!(finalize(&all, &mut t, false, &cfg), Reason::Goal);
        assert_eq!(t.goal, 45.0);
        assert_eq!(t.crash, 0.0);
        let mut t = RewardTerms::default();
        let f = EventFlags {
            lane_forbidden: true,
            collision: true,
            ..Default::default()
        };
        assert_eq!(finalize(&f, &mut t, false, &cfg), Reason::LaneForbidden);
        assert_eq!(t.lane_forbidden, -20.0);
        let mut t = RewardTerms::default();
        let f = EventFlags {
            collision: true,
            ..Default::default()
        };
        assert_eq!(finalize(&f, &mut t, false, &cfg), Reason::Collision);
        assert_eq!(t.collision, -6.0);
        let mut t = RewardTerms::default();
        assert_eq!(finalize(&f, &mut t, true, &cfg), Reason::None);
        assert_eq!(t.total(), 0.0);
    }

    #[test]
    fn hull_overlap_symmetric() {
        let a = view([0.0, 0.0], 0.0, 0.0);
        let b = view([4.0, 1.0], 0.3, 0.0);
        assert_eq!(hulls_overlap(&a, &b), hulls_overlap(&b, &a));
        assert!(!hulls_overlap(&a, &view([10.0, 0.0], 0.0, 0.0)));
    }
}
