//! Per-agent observation kernels: ego state, road context, neighbours and
//! swept-circle time-to-collision.
//!
//! Kernels take candidate index lists so the batched path (grid lookups,
//! precomputed distances) and the per-agent reference path (exhaustive
//! scans) evaluate identical arithmetic.

use serde::{Deserialize, Serialize};

use crate::geometry::{norm, sub, to_body, wrap_angle, CircleHull, Vec2};
use crate::world::WorldBatch;

pub const EGO_DIM: usize = 7;
pub const WEATHER_DIM: usize = 4;
pub const ROAD_FEATURES: usize = 5;
pub const NEIGHBOR_FEATURES: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObsConfig {
    pub k_r: usize,
    pub road_radius: f64,
    pub k_v: usize,
    pub ttc_max: f64,
    pub bbox_half: f64,
    pub speed_norm: f64,
    pub type_norm: f64,
    pub include_weather: bool,
}

impl Default for ObsConfig {
    fn default() -> Self {
        ObsConfig {
            k_r: 350,
            road_radius: 10.0,
            k_v: 24,
            ttc_max: 10.0,
            bbox_half: 100.0,
            speed_norm: 10.0,
            type_norm: 20.0,
            include_weather: true,
        }
    }
}

impl ObsConfig {
    pub fn ego_dim(&self) -> usize {
        EGO_DIM + if self.include_weather { WEATHER_DIM } else { 0 }
    }

    pub fn obs_dim(&self) -> usize {
        self.ego_dim() + self.k_r * ROAD_FEATURES + self.k_v * NEIGHBOR_FEATURES
    }
}

/// Element type of an observation buffer.
pub trait ObsValue: Copy + Default {
    fn from_f64(v: f64) -> Self;
}

impl ObsValue for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl ObsValue for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
}

/// Kinematic snapshot of one agent as seen by observation and reward code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentView {
    pub pos: Vec2,
    pub yaw: f64,
    pub cos: f64,
    pub sin: f64,
    /// Body-frame velocity.
    pub vel_body: Vec2,
    /// World-frame velocity.
    pub vel: Vec2,
    pub length: f64,
    pub width: f64,
    pub hull: CircleHull,
    pub centers: [Vec2; 3],
}

impl AgentView {
    pub fn new(pos: Vec2, yaw: f64, vx: f64, vy: f64, length: f64, width: f64, wheelbase: f64) -> Self {
        let (sin, cos) = yaw.sin_cos();
        let hull = CircleHull::from_dims(length, width, wheelbase);
        AgentView {
            pos,
            yaw,
            cos,
            sin,
            vel_body: [vx, vy],
            vel: [cos * vx - sin * vy, sin * vx + cos * vy],
            length,
            width,
            hull,
            centers: hull.centers(pos, cos, sin),
        }
    }

    pub fn speed(&self) -> f64 {
        norm(self.vel_body)
    }
}

/// Ego block: goal in body frame, heading error to the goal as (sin, cos),
/// goal distance, body velocity, then the optional weather token.
pub fn ego_features<T: ObsValue>(ego: &AgentView, goal: Vec2, weather: Option<&[f64; 4]>, cfg: &ObsConfig, out: &mut [T]) {
    let g = to_body(sub(goal, ego.pos), ego.cos, ego.sin);
    let err = g[1].atan2(g[0]);
    let dist = norm(g);
    let b = cfg.bbox_half;
    let vals = [
        g[0] / b,
        g[1] / b,
        err.sin(),
        err.cos(),
        dist / b,
        ego.vel_body[0] / cfg.speed_norm,
        ego.vel_body[1] / cfg.speed_norm,
    ];
    for (o, v) in out.iter_mut().zip(vals) {
        *o = T::from_f64(v);
    }
    if let Some(tok) = weather {
        for (o, v) in out[EGO_DIM..EGO_DIM + WEATHER_DIM].iter_mut().zip(tok) {
            *o = T::from_f64(*v);
        }
    }
}

/// Road block: segments of world `w` whose midpoint lies within the road
/// radius, in ascending row order (polyline order), first `k_r` kept and
/// the rest of the block zeroed. `candidates` must be ascending and contain
/// every qualifying row.
pub fn road_context<T: ObsValue>(
    batch: &WorldBatch,
    w: usize,
    ego: &AgentView,
    candidates: impl Iterator<Item = usize>,
    cfg: &ObsConfig,
    out: &mut [T],
) -> usize {
    let r = cfg.road_radius;
    let mut k = 0;
    for i in candidates {
        if k == cfg.k_r {
            break;
        }
        let row = batch.row(w, i);
        let rel = sub(batch.midpoints[row], ego.pos);
        if norm(rel) > r {
            continue;
        }
        let pb = to_body(rel, ego.cos, ego.sin);
        let db = to_body(batch.directions[row], ego.cos, ego.sin);
        let o = &mut out[k * ROAD_FEATURES..(k + 1) * ROAD_FEATURES];
        o[0] = T::from_f64(pb[0] / r);
        o[1] = T::from_f64(pb[1] / r);
        o[2] = T::from_f64(batch.type_codes[row] as f64 / cfg.type_norm);
        o[3] = T::from_f64(db[0]);
        o[4] = T::from_f64(db[1]);
        k += 1;
    }
    out[k * ROAD_FEATURES..cfg.k_r * ROAD_FEATURES].fill(T::default());
    k
}

/// Earliest contact time between two constant-velocity three-circle hulls,
/// `f64::INFINITY` when no pair ever touches.
pub fn hull_contact_time(a: &AgentView, b: &AgentView) -> f64 {
    let rv = sub(b.vel, a.vel);
    let rv2 = rv[0] * rv[0] + rv[1] * rv[1];
    let reach = a.hull.radius + b.hull.radius;
    let mut best = f64::INFINITY;
    for ca in &a.centers {
        for cb in &b.centers {
            let p = sub(*cb, *ca);
            let c = p[0] * p[0] + p[1] * p[1] - reach * reach;
            if c < 0.0 {
                return 0.0;
            }
            if rv2 < 1e-12 {
                continue;
            }
            let bq = p[0] * rv[0] + p[1] * rv[1];
            let disc = bq * bq - rv2 * c;
            if bq >= 0.0 || disc < 0.0 {
                continue;
            }
            let t = (-bq - disc.sqrt()) / rv2;
            if t < best {
                best = t;
            }
        }
    }
    best
}

/// TTC in seconds, infinite for neighbours behind the ego or with no
/// contact trajectory.
pub fn swept_circle_ttc_raw(ego: &AgentView, other: &AgentView) -> f64 {
    let rel = to_body(sub(other.pos, ego.pos), ego.cos, ego.sin);
    if rel[0] < 0.0 {
        return f64::INFINITY;
    }
    hull_contact_time(ego, other)
}

/// TTC clamped into `[0, ttc_max]`.
pub fn swept_circle_ttc(ego: &AgentView, other: &AgentView, ttc_max: f64) -> f64 {
    swept_circle_ttc_raw(ego, other).clamp(0.0, ttc_max)
}

/// Pick the `k` nearest entries of `(distance, index)` pairs, ties broken by
/// index. Infinite distances are never selected.
pub fn select_nearest(dists: &mut Vec<(f64, usize)>, k: usize) {
    dists.retain(|d| d.0.is_finite());
    dists.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    dists.truncate(k);
}

/// Neighbour block for already selected neighbours; returns the minimum raw
/// TTC over them.
pub fn neighbor_features<T: ObsValue>(ego: &AgentView, selected: &[&AgentView], cfg: &ObsConfig, out: &mut [T]) -> f64 {
    let b = cfg.bbox_half;
    let mut min_ttc = f64::INFINITY;
    for (k, other) in selected.iter().enumerate().take(cfg.k_v) {
        let rel = to_body(sub(other.pos, ego.pos), ego.cos, ego.sin);
        let ttc = swept_circle_ttc_raw(ego, other);
        min_ttc = min_ttc.min(ttc);
        let o = &mut out[k * NEIGHBOR_FEATURES..(k + 1) * NEIGHBOR_FEATURES];
        o[0] = T::from_f64(rel[0] / b);
        o[1] = T::from_f64(rel[1] / b);
        o[2] = T::from_f64(other.length / b);
        o[3] = T::from_f64(other.width / b);
        o[4] = T::from_f64(wrap_angle(other.yaw - ego.yaw) / std::f64::consts::PI);
        o[5] = T::from_f64(other.speed() / cfg.speed_norm);
        o[6] = T::from_f64(ttc.clamp(0.0, cfg.ttc_max) / cfg.ttc_max);
    }
    let used = selected.len().min(cfg.k_v);
    out[used * NEIGHBOR_FEATURES..cfg.k_v * NEIGHBOR_FEATURES].fill(T::default());
    min_ttc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn view(pos: Vec2, yaw: f64, vx: f64) -> AgentView {
        AgentView::new(pos, yaw, vx, 0.0, 4.0, 2.0, 2.6)
    }

    #[test]
    fn dims() {
        let cfg = ObsConfig::default();
        assert_eq!(cfg.obs_dim(), 1929);
        let no_w = ObsConfig {
            include_weather: false,
            ..cfg
        };
        assert_eq!(no_w.obs_dim(), 1925);
    }

    #[test]
    fn ego_at_goal() {
        let cfg = ObsConfig::default();
        let mut out = [9.0f32; 11];
        ego_features(&view([3.0, 4.0], 0.0, 0.0), [3.0, 4.0], Some(&[0.5, 1.0, 0.0, 0.0]), &cfg, &mut out);
        assert_eq!(&out[..7], &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&out[7..], &[0.5, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn ego_goal_ahead() {
        let cfg = ObsConfig::default();
        let mut out = [0.0f32; 7];
        ego_features(&view([0.0, 0.0], 0.0, 0.0), [100.0, 0.0], None, &cfg, &mut out);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[4], 1.0);
    }

    #[test]
    fn ttc_stationary_ahead() {
        let ego = view([0.0, 0.0], 0.0, 10.0);
        let other = view([20.0, 0.0], 0.0, 0.0);
        let t = swept_circle_ttc(&ego, &other, 10.0);
        assert_abs_diff_eq!(t, 1.556, epsilon = 1e-9);
    }

    #[test]
    fn ttc_behind_and_diverging() {
        let ego = view([0.0, 0.0], 0.0, 10.0);
        let behind = view([-20.0, 0.0], 0.0, 10.0);
        assert_eq!(swept_circle_ttc(&ego, &behind, 10.0), 10.0);
        let away = view([0.0, 10.0], std::f64::consts::FRAC_PI_2, 5.0);
        let ego_still = view([0.0, 0.0], 0.0, 0.0);
        assert_eq!(swept_circle_ttc(&ego_still, &away, 10.0), 10.0);
    }

    #[test]
    fn ttc_overlapping_is_zero() {
        let a = view([0.0, 0.0], 0.0, 0.0);
        let b = view([1.0, 0.5], 0.0, 0.0);
        assert_eq!(swept_circle_ttc(&a, &b, 10.0), 0.0);
    }

    #[test]
    fn nearest_selection_skips_infinite() {
        let mut d = vec![(3.0, 0), (f64::INFINITY, 1), (1.0, 5), (1.0, 2)];
        select_nearest(&mut d, 2);
        assert_eq!(d, vec![(1.0, 2), (1.0, 5)]);
    }
}
