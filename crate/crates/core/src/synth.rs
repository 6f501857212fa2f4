//! Procedural scenes: straight multi-lane roads, a four-way junction and a
//! two-level overpass fixture. Generated scenes use the same interchange
//! schema as loaded ones.

use rand::Rng;

use crate::rng::{stream, Stream};
use crate::scenario::{AgentRecord, Polyline, ScenarioSpec};

pub const LANE_WIDTH: f64 = 3.5;
pub const LANE_CODE: i32 = 1;
pub const EDGE_CODE: i32 = 15;

fn line(a: [f64; 2], b: [f64; 2], spacing: f64, code: i32) -> Polyline {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let n = (len / spacing).ceil().max(1.0) as usize;
    let points = (0..=n)
        .map(|k| {
            let u = k as f64 / n as f64;
            [a[0] + (b[0] - a[0]) * u, a[1] + (b[1] - a[1]) * u, 0.0]
        })
        .collect();
    Polyline {
        type_code: code,
        points,
    }
}

/// Lateral offsets of lane centres for `lanes` lanes, centred on zero.
pub fn lane_offsets(lanes: usize) -> Vec<f64> {
    (0..lanes)
        .map(|k| (k as f64 - (lanes as f64 - 1.0) / 2.0) * LANE_WIDTH)
        .collect()
}

/// One-way road along +x over `[-length/2, length/2]` with `lanes` lane
/// centres and an edge on both sides.
pub fn straight_road(id: &str, length: f64, lanes: usize, spacing: f64) -> ScenarioSpec {
    let h = length / 2.0;
    let mut polylines: Vec<Polyline> = lane_offsets(lanes)
        .into_iter()
        .map(|y| line([-h, y], [h, y], spacing, LANE_CODE))
        .collect();
    let e = lanes as f64 * LANE_WIDTH / 2.0;
    polylines.push(line([-h, -e], [h, -e], spacing, EDGE_CODE));
    polylines.push(line([-h, e], [h, e], spacing, EDGE_CODE));
    ScenarioSpec {
        scenario_id: id.into(),
        polylines,
        agents: Vec::new(),
    }
}

/// Straight road with one agent per lane at `x = -travel/2`, goal `travel`
/// metres ahead in the same lane.
pub fn straight_scene(id: &str, lanes: usize, travel: f64) -> ScenarioSpec {
    let mut s = straight_road(id, 180.0, lanes, 1.0);
    s.agents = lane_offsets(lanes)
        .into_iter()
        .enumerate()
        .map(|(k, y)| AgentRecord {
            id: format!("a{k}"),
            start: [-travel / 2.0, y],
            start_heading: 0.0,
            goal: [travel / 2.0, y],
            length: 4.0,
            width: 2.0,
        })
        .collect();
    s
}

/// Four-way junction of two-lane one-way roads along both axes. Agents
/// spawn on lane points at least 8 m apart with goals 20 to 60 m further
/// along their lane.
pub fn junction_scene(id: &str, num_agents: usize, seed: u64) -> ScenarioSpec {
    let h = 90.0;
    let mut polylines = Vec::new();
    for y in lane_offsets(2) {
        polylines.push(line([-h, y], [h, y], 1.0, LANE_CODE));
        polylines.push(line([y, -h], [y, h], 1.0, LANE_CODE));
    }
    let e = LANE_WIDTH;
    // edges stop short of the crossing so each road stays open
    for (a, b) in [([-h, -e], [-e - 1.0, -e]), ([e + 1.0, -e], [h, -e]), ([-h, e], [-e - 1.0, e]), ([e + 1.0, e], [h, e])] {
        polylines.push(line(a, b, 1.0, EDGE_CODE));
        polylines.push(line([a[1], a[0]], [b[1], b[0]], 1.0, EDGE_CODE));
    }
    let lanes: Vec<usize> = polylines.iter().enumerate().filter(|(_, p)| p.type_code == LANE_CODE).map(|(i, _)| i).collect();
    let mut rng = stream(seed, Stream::Spawn);
    let mut agents: Vec<AgentRecord> = Vec::new();
    let mut tries = 0;
    while agents.len() < num_agents && tries < 10_000 {
        tries += 1;
        let pl = &polylines[lanes[rng.gen_range(0..lanes.len())]];
        let n = pl.points.len();
        let travel = rng.gen_range(20..=60);
        let k = rng.gen_range(0..n - travel);
        let (p, q) = (pl.points[k], pl.points[k + travel]);
        let start = [p[0], p[1]];
        if agents.iter().any(|a| (a.start[0] - start[0]).hypot(a.start[1] - start[1]) < 8.0) {
            continue;
        }
        let nxt = pl.points[k + 1];
        agents.push(AgentRecord {
            id: format!("a{}", agents.len()),
            start,
            start_heading: (nxt[1] - p[1]).atan2(nxt[0] - p[0]),
            goal: [q[0], q[1]],
            length: 4.0,
            width: 2.0,
        });
    }
    ScenarioSpec {
        scenario_id: id.into(),
        polylines,
        agents,
    }
}

/// Town grid used for throughput measurement: five two-lane roads along
/// each axis 40 m apart, sampled every 0.5 m, edges open at crossings.
/// Agents drive +x on the horizontal roads with goals 60 m ahead.
pub fn bench_scene(id: &str, num_agents: usize) -> ScenarioSpec {
    let (h, spacing) = (90.0, 0.5);
    let roads = [-80.0, -40.0, 0.0, 40.0, 80.0];
    let e = LANE_WIDTH;
    let mut polylines = Vec::new();
    for &c in &roads {
        for y in lane_offsets(2) {
            polylines.push(line([-h, c + y], [h, c + y], spacing, LANE_CODE));
            polylines.push(line([c + y, -h], [c + y, h], spacing, LANE_CODE));
        }
        for side in [-e, e] {
            let mut from = -h;
            for &cross in roads.iter().chain(std::iter::once(&(h + e + 1.0))) {
                let to = (cross - e - 1.0).min(h);
                if to > from {
                    polylines.push(line([from, c + side], [to, c + side], spacing, EDGE_CODE));
                    polylines.push(line([c + side, from], [c + side, to], spacing, EDGE_CODE));
                }
                from = cross + e + 1.0;
            }
        }
    }
    let agents = (0..num_agents)
        .map(|k| {
            let road = roads[1 + k % 3];
            let y = road + lane_offsets(2)[(k / 3) % 2];
            let x = -75.0 + 20.0 * (k / 6) as f64;
            AgentRecord {
                id: format!("a{k}"),
                start: [x, y],
                start_heading: 0.0,
                goal: [x + 60.0, y],
                length: 4.0,
                width: 2.0,
            }
        })
        .collect();
    ScenarioSpec {
        scenario_id: id.into(),
        polylines,
        agents,
    }
}

/// A road passing over another one 6 m higher along their whole shared
/// span, with one valid agent.
pub fn two_level_fixture() -> ScenarioSpec {
    let mut lower = line([-50.0, 0.0], [50.0, 0.0], 2.0, LANE_CODE);
    let mut upper = line([-50.0, 0.0], [50.0, 0.0], 2.0, LANE_CODE);
    for p in &mut upper.points {
        p[2] = 6.0;
    }
    for p in &mut lower.points {
        p[2] = 0.0;
    }
    ScenarioSpec {
        scenario_id: "two_level".into(),
        polylines: vec![lower, upper],
        agents: vec![AgentRecord {
            id: "a0".into(),
            start: [-20.0, 0.0],
            start_heading: 0.0,
            goal: [20.0, 0.0],
            length: 4.0,
            width: 2.0,
        }],
    }
}
