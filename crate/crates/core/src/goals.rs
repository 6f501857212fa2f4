//! Goal resampling by travel distance along the directed lane graph.

use petgraph::algo::dijkstra;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{dot, norm, sub, Vec2};
use crate::rng::{substream, Stream};
use crate::scenario::{is_lane, ScenarioSpec};

/// Lane ends closer than this to another lane's first point continue into it.
pub const JOIN_TOLERANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalRange {
    pub min_m: f64,
    pub max_m: f64,
}

/// Directed lane graph over lane-centre polyline points.
pub struct LaneGraph {
    graph: DiGraph<Vec2, f64>,
    /// Directed lane pieces `(from, to)` in polyline order.
    edges: Vec<(NodeIndex, NodeIndex)>,
}

impl LaneGraph {
    pub fn build(spec: &ScenarioSpec) -> Self {
        let mut graph = DiGraph::new();
        let mut edges = Vec::new();
        let mut ends: Vec<(NodeIndex, NodeIndex)> = Vec::new();
        for pl in spec.polylines.iter().filter(|p| is_lane(p.type_code) && p.points.len() >= 2) {
            let ids: Vec<NodeIndex> = pl.points.iter().map(|p| graph.add_node([p[0], p[1]])).collect();
            for w in ids.windows(2) {
                let len = norm(sub(graph[w[1]], graph[w[0]]));
                graph.add_edge(w[0], w[1], len);
                edges.push((w[0], w[1]));
            }
            ends.push((ids[0], ids[ids.len() - 1]));
        }
        for &(_, last) in &ends {
            for &(first, _) in &ends {
                let gap = norm(sub(graph[first], graph[last]));
                if first != last && gap <= JOIN_TOLERANCE && !graph.contains_edge(last, first) {
                    graph.add_edge(last, first, gap);
                }
            }
        }
        LaneGraph { graph, edges }
    }

    /// Nearest lane piece to `p`: edge index and arc position along it.
    fn project(&self, p: Vec2) -> Option<(usize, f64)> {
        let mut best: Option<(f64, usize, f64)> = None;
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            let (pa, pb) = (self.graph[a], self.graph[b]);
            let d = sub(pb, pa);
            let len = norm(d);
            if len == 0.0 {
                continue;
            }
            let s = (dot(sub(p, pa), d) / len).clamp(0.0, len);
            let q = [pa[0] + d[0] * s / len, pa[1] + d[1] * s / len];
            let dist = norm(sub(p, q));
            if best.map_or(true, |(bd, _, _)| dist < bd) {
                best = Some((dist, k, s));
            }
        }
        best.map(|(_, k, s)| (k, s))
    }

    /// Reachable lane pieces whose travel distance from `start` overlaps the
    /// range, as `(point_a, point_b, distance_at_a, usable_lo, usable_hi)`
    /// with usable arc positions along the piece.
    fn windows(&self, start: Vec2, range: GoalRange) -> Vec<(Vec2, Vec2, f64, f64, f64)> {
        let Some((k0, s0)) = self.project(start) else {
            return Vec::new();
        };
        let (a0, b0) = self.edges[k0];
        let len0 = self.graph[self.graph.find_edge(a0, b0).expect("lane piece")];
        let dist = dijkstra(&self.graph, b0, None, |e| *e.weight());
        let mut out = Vec::new();
        let mut push = |pa: Vec2, pb: Vec2, base: f64, lo: f64, hi: f64| {
            let lo = lo.max(range.min_m - base);
            let hi = hi.min(range.max_m - base);
            if hi >= lo {
                out.push((pa, pb, base, lo, hi));
            }
        };
        // remainder of the start piece
        push(self.graph[a0], self.graph[b0], -s0, s0, len0);
        for &(a, b) in &self.edges {
            if let Some(&d) = dist.get(&a) {
                let len = self.graph[self.graph.find_edge(a, b).expect("lane piece")];
                push(self.graph[a], self.graph[b], len0 - s0 + d, 0.0, len);
            }
        }
        out
    }
}

/// Draw a goal whose lane travel distance from `start` lies in the range,
/// uniformly over the qualifying lane length.
pub fn sample_goal(graph: &LaneGraph, start: Vec2, range: GoalRange, rng: &mut impl Rng) -> Option<Vec2> {
    let wins = graph.windows(start, range);
    let total: f64 = wins.iter().map(|w| w.4 - w.3).sum();
    let pick = |(pa, pb, _, lo, _): (Vec2, Vec2, f64, f64, f64), s: f64| {
        let d = sub(pb, pa);
        let len = norm(d);
        let u = (lo + s) / len;
        [pa[0] + d[0] * u, pa[1] + d[1] * u]
    };
    if wins.is_empty() {
        return None;
    }
    if total == 0.0 {
        // degenerate range: every window is a single point
        let w = wins[rng.gen_range(0..wins.len())];
        return Some(pick(w, 0.0));
    }
    let mut t = rng.gen::<f64>() * total;
    for w in &wins {
        let span = w.4 - w.3;
        if t <= span {
            return Some(pick(*w, t));
        }
        t -= span;
    }
    wins.last().map(|w| pick(*w, w.4 - w.3))
}

/// New goals for every agent of a scene. Agents without a reachable lane
/// point in range keep their goal; their ids are returned.
pub fn resample_goals(spec: &ScenarioSpec, range: GoalRange, seed: u64) -> (ScenarioSpec, Vec<String>) {
    let graph = LaneGraph::build(spec);
    let mut out = spec.clone();
    let mut unchanged = Vec::new();
    for (k, agent) in out.agents.iter_mut().enumerate() {
        let mut rng = substream(seed, Stream::Spawn, k as u64);
        match sample_goal(&graph, agent.start, range, &mut rng) {
            Some(g) => agent.goal = g,
            None => {
                log::warn!("agent {} of {}: no lane point {}..{} m away, goal kept", agent.id, spec.scenario_id, range.min_m, range.max_m);
                unchanged.push(agent.id.clone());
            }
        }
    }
    (out, unchanged)
}

/// Travel distance along the lane graph from `start` to `goal`, when the
/// goal lies on a lane piece reachable from the start.
pub fn travel_distance(spec: &ScenarioSpec, start: Vec2, goal: Vec2) -> Option<f64> {
    let graph = LaneGraph::build(spec);
    let (kg, sg) = graph.project(goal)?;
    let wins = graph.windows(start, GoalRange { min_m: 0.0, max_m: f64::INFINITY });
    let (a, b) = graph.edges[kg];
    let (pa, pb) = (graph.graph[a], graph.graph[b]);
    wins.iter()
        .filter(|w| w.0 == pa && w.1 == pb && sg >= w.3 - 1e-9 && sg <= w.4 + 1e-9)
        .map(|w| w.2 + sg)
        .min_by(f64::total_cmp)
}
