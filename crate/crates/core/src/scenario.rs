//! Scenario interchange schema: one JSON file per driving scenario carrying
//! typed road polylines and agent start/goal records.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{norm, segment_segment_distance, sub};

/// Waymo lane-center feature codes.
pub const LANE_CODES: [i32; 2] = [1, 2];
/// Waymo road-edge feature codes.
pub const EDGE_CODES: [i32; 2] = [15, 16];

#[inline]
pub fn is_lane(code: i32) -> bool {
    LANE_CODES.contains(&code)
}

#[inline]
pub fn is_edge(code: i32) -> bool {
    EDGE_CODES.contains(&code)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    #[serde(rename = "type")]
    pub type_code: i32,
    pub points: Vec<[f64; 3]>,
}

fn default_length() -> f64 {
    4.0
}

fn default_width() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: String,
    pub start: [f64; 2],
    pub start_heading: f64,
    pub goal: [f64; 2],
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub polylines: Vec<Polyline>,
    #[serde(default)]
    pub agents: Vec<AgentRecord>,
}

impl ScenarioSpec {
    pub fn from_json_str(text: &str, context: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ScenarioSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if inner.is_syntax() || inner.is_eof() {
                SimError::Parse {
                    context: context.to_string(),
                    message: inner.to_string(),
                }
            } else {
                SimError::schema(path, inner.to_string())
            }
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialization cannot fail")
    }

    /// Check schema invariants, naming the first offending field.
    pub fn validate(&self) -> Result<()> {
        if self.scenario_id.is_empty() {
            return Err(SimError::schema("scenario_id", "must be non-empty"));
        }
        if self.polylines.is_empty() {
            return Err(SimError::schema("polylines", "at least one polyline is required"));
        }
        for (i, pl) in self.polylines.iter().enumerate() {
            if pl.points.len() < 2 {
                return Err(SimError::schema(
                    format!("polylines[{i}].points"),
                    format!("needs at least 2 points, found {}", pl.points.len()),
                ));
            }
            for (j, p) in pl.points.iter().enumerate() {
                for (k, v) in p.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(SimError::schema(format!("polylines[{i}].points[{j}][{k}]"), "non-finite coordinate"));
                    }
                }
            }
        }
        for (i, a) in self.agents.iter().enumerate() {
            let checks: [(&str, f64); 6] = [
                ("start[0]", a.start[0]),
                ("start[1]", a.start[1]),
                ("goal[0]", a.goal[0]),
                ("goal[1]", a.goal[1]),
                ("start_heading", a.start_heading),
                ("length", a.length),
            ];
            for (name, v) in checks {
                if !v.is_finite() {
                    return Err(SimError::schema(format!("agents[{i}].{name}"), "non-finite value"));
                }
            }
            if !(a.length > 0.0) {
                return Err(SimError::schema(format!("agents[{i}].length"), "must be positive"));
            }
            if !(a.width > 0.0 && a.width.is_finite()) {
                return Err(SimError::schema(format!("agents[{i}].width"), "must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Mean of every polyline point in XY.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0usize;
        for p in self.polylines.iter().flat_map(|pl| pl.points.iter()) {
            sx += p[0];
            sy += p[1];
            n += 1;
        }
        (n > 0).then(|| [sx / n as f64, sy / n as f64])
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    ScenarioSpec::from_json_str(&text, &path.display().to_string())
}

/// Retain agents whose endpoints are inside `±bbox_half`, whose start/goal
/// separation exceeds `goal_radius`, and whose coordinates are finite; keep
/// at most `cap` in file order. Coordinates must already be re-centred.
pub fn filter_agents(spec: &ScenarioSpec, bbox_half: f64, goal_radius: f64, cap: usize) -> Vec<AgentRecord> {
    spec.agents
        .iter()
        .filter(|a| agent_passes(a, bbox_half, goal_radius))
        .take(cap)
        .cloned()
        .collect()
}

pub fn agent_passes(a: &AgentRecord, bbox_half: f64, goal_radius: f64) -> bool {
    let finite = a.start.iter().chain(a.goal.iter()).all(|v| v.is_finite()) && a.start_heading.is_finite();
    let inside = |p: [f64; 2]| p[0].abs() <= bbox_half && p[1].abs() <= bbox_half;
    finite && inside(a.start) && inside(a.goal) && norm(sub(a.goal, a.start)) > goal_radius
}

/// Parameters of the automated scene filters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneFilterParams {
    pub bbox_half: f64,
    pub goal_radius: f64,
    pub agent_cap: usize,
    /// Vertical separation above which XY-overlapping segments count as multi-level.
    pub z_gap: f64,
    /// Reject when more than this fraction of segments sit on a multi-level overlap.
    pub overlap_fraction: f64,
    /// XY distance under which two segments are treated as overlapping.
    pub xy_tolerance: f64,
    /// Consecutive points farther apart than this are discontinuities.
    pub gap: f64,
}

impl Default for SceneFilterParams {
    fn default() -> Self {
        SceneFilterParams {
            bbox_half: 100.0,
            goal_radius: 3.0,
            agent_cap: 16,
            z_gap: 3.0,
            overlap_fraction: 0.2,
            xy_tolerance: 0.5,
            gap: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SceneVerdict {
    Accept,
    Reject(String),
}

impl SceneVerdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, SceneVerdict::Accept)
    }
}

/// A polyline segment kept with its original elevation, used by the
/// multi-level overlap check.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RawSegment {
    pub polyline: usize,
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub z: f64,
}

pub(crate) fn raw_segments(spec: &ScenarioSpec, gap: f64) -> Vec<RawSegment> {
    let mut out = Vec::new();
    for (pi, pl) in spec.polylines.iter().enumerate() {
        for w in pl.points.windows(2) {
            let a = [w[0][0], w[0][1]];
            let b = [w[1][0], w[1][1]];
            let len = norm(sub(b, a));
            if len > 0.0 && len <= gap {
                out.push(RawSegment {
                    polyline: pi,
                    a,
                    b,
                    z: 0.5 * (w[0][2] + w[1][2]),
                });
            }
        }
    }
    out
}

/// Fraction of segments that overlap (in XY) a segment of a different
/// polyline lying more than `z_gap` above or below it.
pub fn multi_level_fraction(spec: &ScenarioSpec, params: &SceneFilterParams) -> f64 {
    let segs = raw_segments(spec, params.gap);
    if segs.is_empty() {
        return 0.0;
    }
    let tol = params.xy_tolerance;
    // bucket by cell to avoid the quadratic scan on large scenes
    let cell = (params.gap + tol).max(1.0);
    let key = |p: [f64; 2]| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (i, s) in segs.iter().enumerate() {
        buckets.entry(key(s.a)).or_default().push(i);
    }
    let mut flagged = vec![false; segs.len()];
    for (i, s) in segs.iter().enumerate() {
        let (cx, cy) = key(s.a);
        'outer: for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(list) = buckets.get(&(cx + dx, cy + dy)) else { continue };
                for &j in list {
                    let o = &segs[j];
                    if o.polyline != s.polyline
                        && (o.z - s.z).abs() > params.z_gap
                        && segment_segment_distance(s.a, s.b, o.a, o.b) < tol
                    {
                        flagged[i] = true;
                        break 'outer;
                    }
                }
            }
        }
    }
    flagged.iter().filter(|f| **f).count() as f64 / segs.len() as f64
}

/// Automated geometric scene filter: degenerate lane structure, multi-level
/// overlap from z-flattening, or no usable agents.
pub fn reject_degenerate_scene(spec: &ScenarioSpec, params: &SceneFilterParams) -> SceneVerdict {
    if !spec.polylines.iter().any(|p| is_lane(p.type_code)) {
        return SceneVerdict::Reject("no drivable lanes".into());
    }
    let frac = multi_level_fraction(spec, params);
    if frac > params.overlap_fraction {
        return SceneVerdict::Reject(format!(
            "multi-level overlap on {:.1}% of segments (limit {:.1}%)",
            100.0 * frac,
            100.0 * params.overlap_fraction
        ));
    }
    let center = spec.centroid().unwrap_or([0.0, 0.0]);
    let mut shifted = spec.clone();
    for a in &mut shifted.agents {
        a.start = sub(a.start, center);
        a.goal = sub(a.goal, center);
    }
    if filter_agents(&shifted, params.bbox_half, params.goal_radius, params.agent_cap).is_empty() {
        return SceneVerdict::Reject("no valid agents".into());
    }
    SceneVerdict::Accept
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(id: &str, start: [f64; 2], goal: [f64; 2]) -> AgentRecord {
        AgentRecord {
            id: id.into(),
            start,
            start_heading: 0.0,
            goal,
            length: 4.0,
            width: 2.0,
        }
    }

    fn straight(agents: Vec<AgentRecord>) -> ScenarioSpec {
        ScenarioSpec {
            scenario_id: "s".into(),
            polylines: vec![Polyline {
                type_code: 1,
                points: (0..=20).map(|i| [i as f64 * 2.0 - 20.0, 0.0, 0.0]).collect(),
            }],
            agents,
        }
    }

    #[test]
    fn minimal_file_loads() {
        let text = r#"{"scenario_id":"a","polylines":[{"type":1,"points":[[0,0,0],[1,0,0]]}]}"#;
        let spec = ScenarioSpec::from_json_str(text, "inline").unwrap();
        assert_eq!(spec.polylines.len(), 1);
        assert!(spec.agents.is_empty());
    }

    #[test]
    fn defaults_and_unknown_keys() {
        let text = r#"{"scenario_id":"a","extra":1,"polylines":[{"type":1,"points":[[0,0,0],[1,0,0]],"foo":2}],
            "agents":[{"id":"x","start":[0,0],"start_heading":0.0,"goal":[1,0]}]}"#;
        let spec = ScenarioSpec::from_json_str(text, "inline").unwrap();
        assert_eq!(spec.agents[0].length, 4.0);
        assert_eq!(spec.agents[0].width, 2.0);
        // later filtered: below the goal radius
        assert!(filter_agents(&spec, 100.0, 3.0, 16).is_empty());
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let err = ScenarioSpec::from_json_str("{\"scenario_id\": ", "inline").unwrap_err();
        assert!(matches!(err, SimError::Parse { .. }), "{err}");
    }

    #[test]
    fn missing_field_names_path() {
        let text = r#"{"scenario_id":"a","polylines":[{"type":1,"points":[[0,0,0],[1,0,0]]}],
            "agents":[{"id":"x","start":[0,0],"goal":[1,0]}]}"#;
        let err = ScenarioSpec::from_json_str(text, "inline").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("agents[0]") && msg.contains("start_heading"), "{msg}");
    }

    #[test]
    fn single_point_polyline_rejected() {
        let text = r#"{"scenario_id":"a","polylines":[{"type":1,"points":[[0,0,0]]}]}"#;
        let err = ScenarioSpec::from_json_str(text, "inline").unwrap_err();
        assert!(err.to_string().contains("polylines[0].points"));
    }

    #[test]
    fn non_finite_coordinate_named() {
        let mut spec = straight(vec![]);
        spec.polylines[0].points[3][1] = f64::NAN;
        let err = spec.validate().unwrap_err();
        assert!(err.to_string().contains("polylines[0].points[3][1]"), "{err}");
    }

    #[test]
    fn filter_goal_radius_and_cap() {
        let mut agents = vec![agent("near", [0.0, 0.0], [2.0, 0.0])];
        agents.extend((0..20).map(|i| agent(&format!("a{i}"), [i as f64, 5.0], [i as f64, 30.0])));
        agents.push(agent("out", [0.0, 0.0], [150.0, 0.0]));
        let spec = straight(agents);
        let kept = filter_agents(&spec, 100.0, 3.0, 16);
        assert_eq!(kept.len(), 16);
        assert_eq!(kept[0].id, "a0");
        assert_eq!(kept[15].id, "a15");
        let all = filter_agents(&spec, 100.0, 3.0, 100);
        assert_eq!(all.len(), 20);
        assert!(all.iter().all(|a| a.id != "near" && a.id != "out"));
    }

    #[test]
    fn edge_only_scene_rejected() {
        let mut spec = straight(vec![agent("a", [0.0, 0.0], [10.0, 0.0])]);
        spec.polylines[0].type_code = 15;
        assert_eq!(
            reject_degenerate_scene(&spec, &SceneFilterParams::default()),
            SceneVerdict::Reject("no drivable lanes".into())
        );
    }

    #[test]
    fn flat_scene_accepted() {
        let spec = straight(vec![agent("a", [-10.0, 0.0], [10.0, 0.0]), agent("b", [-10.0, 3.0], [10.0, 3.0])]);
        assert!(reject_degenerate_scene(&spec, &SceneFilterParams::default()).is_accept());
    }

    #[test]
    fn scene_without_agents_rejected() {
        let spec = straight(vec![agent("a", [0.0, 0.0], [1.0, 0.0])]);
        assert_eq!(
            reject_degenerate_scene(&spec, &SceneFilterParams::default()),
            SceneVerdict::Reject("no valid agents".into())
        );
    }

    #[test]
    fn round_trip_serialization() {
        let spec = straight(vec![agent("a", [-10.0, 0.25], [10.0, 0.1])]);
        let text = spec.to_json_string();
        let back = ScenarioSpec::from_json_str(&text, "rt").unwrap();
        assert_eq!(spec, back);
    }
}
