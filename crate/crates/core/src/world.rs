//! Scene preparation (recentre, flatten, segmentize) and the padded
//! multi-world geometry batch laid out on a square grid.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::geometry::{norm, scale, sub, Vec2};
use crate::rng::{stream, Stream};
use crate::scenario::{filter_agents, AgentRecord, Polyline, ScenarioSpec};

/// Half-width of every road segment box.
pub const SEGMENT_HALF_WIDTH: f64 = 0.05;
/// Distance between neighbouring world centres.
pub const GRID_PITCH: f64 = 400.0;

/// Oriented box segment placed at the midpoint of a consecutive point pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub mid: Vec2,
    pub dir: Vec2,
    pub type_code: i32,
    pub half_length: f64,
    pub half_width: f64,
    /// Index of the source polyline within its scenario.
    pub polyline: u32,
}

/// Shift every polyline point and agent endpoint so the mean polyline point
/// sits at the origin. Returns the shifted scene and the removed centre.
pub fn recenter(spec: &ScenarioSpec) -> Result<(ScenarioSpec, Vec2)> {
    let center = spec
        .centroid()
        .ok_or_else(|| SimError::Invalid(format!("scenario `{}` has no polyline points", spec.scenario_id)))?;
    let mut out = spec.clone();
    for pl in &mut out.polylines {
        for p in &mut pl.points {
            p[0] -= center[0];
            p[1] -= center[1];
        }
    }
    for a in &mut out.agents {
        a.start = sub(a.start, center);
        a.goal = sub(a.goal, center);
    }
    Ok((out, center))
}

/// Collapse every point to `z = 0`, returning the original elevations per polyline.
pub fn flatten_z(spec: &ScenarioSpec) -> (ScenarioSpec, Vec<Vec<f64>>) {
    let mut out = spec.clone();
    let mut original = Vec::with_capacity(out.polylines.len());
    for pl in &mut out.polylines {
        original.push(pl.points.iter().map(|p| p[2]).collect());
        for p in &mut pl.points {
            p[2] = 0.0;
        }
    }
    (out, original)
}

/// One segment per consecutive point pair no longer than `gap` with both
/// endpoints inside `±bbox_half`.
pub fn segmentize(polyline: &Polyline, polyline_index: u32, gap: f64, bbox_half: f64) -> Vec<Segment> {
    let inside = |p: &[f64; 3]| p[0].abs() <= bbox_half && p[1].abs() <= bbox_half;
    let mut out = Vec::new();
    for w in polyline.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if !inside(a) || !inside(b) {
            continue;
        }
        let d = sub([b[0], b[1]], [a[0], a[1]]);
        let len = norm(d);
        if len <= 0.0 || len > gap {
            continue;
        }
        out.push(Segment {
            mid: [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
            dir: scale(d, 1.0 / len),
            type_code: polyline.type_code,
            half_length: 0.5 * len,
            half_width: SEGMENT_HALF_WIDTH,
            polyline: polyline_index,
        });
    }
    out
}

/// Knobs shared by scene preparation and batch assembly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildParams {
    pub gap: f64,
    pub bbox_half: f64,
    pub goal_radius: f64,
    pub agent_cap: usize,
}

impl Default for BuildParams {
    fn default() -> Self {
        BuildParams {
            gap: 3.0,
            bbox_half: 100.0,
            goal_radius: 3.0,
            agent_cap: 16,
        }
    }
}

/// A scene after recentring, flattening, segmentation and agent filtering.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub scenario_id: String,
    pub center: Vec2,
    pub original_z: Vec<Vec<f64>>,
    /// Recentred and flattened polylines.
    pub polylines: Vec<Polyline>,
    pub segments: Vec<Segment>,
    pub agents: Vec<AgentRecord>,
}

pub fn prepare_scene(spec: &ScenarioSpec, params: &BuildParams) -> Result<PreparedScene> {
    let (centered, center) = recenter(spec)?;
    let (flat, original_z) = flatten_z(&centered);
    let segments = flat
        .polylines
        .iter()
        .enumerate()
        .flat_map(|(i, pl)| segmentize(pl, i as u32, params.gap, params.bbox_half))
        .collect();
    let agents = filter_agents(&flat, params.bbox_half, params.goal_radius, params.agent_cap);
    Ok(PreparedScene {
        scenario_id: flat.scenario_id,
        center,
        original_z,
        polylines: flat.polylines,
        segments,
        agents,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// World `w` uses scene `w mod n` in pool order.
    Fixed,
    /// Pool shuffled with the seeded shuffle stream, then tiled.
    RandomFill,
}

/// Offset of world `w` for a grid of `num_worlds` worlds.
pub fn grid_offset(w: usize, num_worlds: usize) -> Vec2 {
    let cols = (num_worlds as f64).sqrt().ceil().max(1.0) as usize;
    [(w % cols) as f64 * GRID_PITCH, (w / cols) as f64 * GRID_PITCH]
}

/// Scene index for every world slot.
pub fn assign_scenes(num_scenes: usize, num_worlds: usize, mode: FillMode, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..num_scenes).collect();
    if mode == FillMode::RandomFill {
        order.shuffle(&mut stream(seed, Stream::Shuffle));
    }
    (0..num_worlds).map(|w| order[w % num_scenes]).collect()
}

/// Padded geometry for `W` worlds. Row `w * p_max + i` is segment `i` of
/// world `w`; valid rows of a world form the prefix `0..counts[w]` and
/// padding rows are all-zero with a false mask.
#[derive(Debug, Clone)]
pub struct WorldBatch {
    pub num_worlds: usize,
    pub p_max: usize,
    pub midpoints: Vec<Vec2>,
    pub directions: Vec<Vec2>,
    pub type_codes: Vec<i32>,
    pub half_lengths: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub polyline_index: Vec<u32>,
    pub mask: Vec<bool>,
    pub counts: Vec<usize>,
    pub grid_offsets: Vec<Vec2>,
    pub scenario_ids: Vec<String>,
    /// Pool index used by each world.
    pub scene_of_world: Vec<usize>,
    /// Filtered, locally-centred agents of each world.
    pub agents: Vec<Vec<AgentRecord>>,
}

impl WorldBatch {
    #[inline]
    pub fn row(&self, w: usize, i: usize) -> usize {
        w * self.p_max + i
    }

    pub fn segment(&self, w: usize, i: usize) -> Segment {
        let r = self.row(w, i);
        Segment {
            mid: self.midpoints[r],
            dir: self.directions[r],
            type_code: self.type_codes[r],
            half_length: self.half_lengths[r],
            half_width: self.half_widths[r],
            polyline: self.polyline_index[r],
        }
    }

    /// Batch with the same worlds but every agent list replaced.
    pub fn with_agents(mut self, agents: Vec<Vec<AgentRecord>>) -> Result<Self> {
        if agents.len() != self.num_worlds {
            return Err(SimError::Shape(format!("{} agent lists for {} worlds", agents.len(), self.num_worlds)));
        }
        self.agents = agents;
        Ok(self)
    }

    pub fn from_prepared(pool: &[PreparedScene], assignment: &[usize]) -> Result<Self> {
        if pool.is_empty() {
            return Err(SimError::Invalid("empty scene pool".into()));
        }
        let num_worlds = assignment.len();
        if num_worlds == 0 {
            return Err(SimError::Invalid("at least one world is required".into()));
        }
        if let Some(&bad) = assignment.iter().find(|&&s| s >= pool.len()) {
            return Err(SimError::Invalid(format!("scene index {bad} outside pool of {}", pool.len())));
        }
        let p_max = assignment.iter().map(|&s| pool[s].segments.len()).max().unwrap_or(0);
        let n = num_worlds * p_max;
        let mut b = WorldBatch {
            num_worlds,
            p_max,
            midpoints: vec![[0.0; 2]; n],
            directions: vec![[0.0; 2]; n],
            type_codes: vec![0; n],
            half_lengths: vec![0.0; n],
            half_widths: vec![0.0; n],
            polyline_index: vec![0; n],
            mask: vec![false; n],
            counts: Vec::with_capacity(num_worlds),
            grid_offsets: (0..num_worlds).map(|w| grid_offset(w, num_worlds)).collect(),
            scenario_ids: Vec::with_capacity(num_worlds),
            scene_of_world: assignment.to_vec(),
            agents: Vec::with_capacity(num_worlds),
        };
        for (w, &s) in assignment.iter().enumerate() {
            let scene = &pool[s];
            for (i, seg) in scene.segments.iter().enumerate() {
                let r = w * p_max + i;
                b.midpoints[r] = seg.mid;
                b.directions[r] = seg.dir;
                b.type_codes[r] = seg.type_code;
                b.half_lengths[r] = seg.half_length;
                b.half_widths[r] = seg.half_width;
                b.polyline_index[r] = seg.polyline;
                b.mask[r] = true;
            }
            b.counts.push(scene.segments.len());
            b.scenario_ids.push(scene.scenario_id.clone());
            b.agents.push(scene.agents.clone());
        }
        Ok(b)
    }

    /// Write the binary geometry export.
    ///
    /// Layout (little-endian): magic `DSWB`, `u32` version, `u32` W, `u32`
    /// P_max, then f32 midpoints (W·P·2), f32 directions (W·P·2), i32 type
    /// codes, f32 half-lengths, f32 half-widths, f32 grid offsets (W·2), and
    /// the mask packed LSB-first into ceil(W·P/8) bytes.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_u32::<LittleEndian>(BINARY_VERSION)?;
        out.write_u32::<LittleEndian>(self.num_worlds as u32)?;
        out.write_u32::<LittleEndian>(self.p_max as u32)?;
        for v in self.midpoints.iter().chain(self.directions.iter()) {
            out.write_f32::<LittleEndian>(v[0] as f32)?;
            out.write_f32::<LittleEndian>(v[1] as f32)?;
        }
        for &t in &self.type_codes {
            out.write_i32::<LittleEndian>(t)?;
        }
        for &v in self.half_lengths.iter().chain(self.half_widths.iter()) {
            out.write_f32::<LittleEndian>(v as f32)?;
        }
        for v in &self.grid_offsets {
            out.write_f32::<LittleEndian>(v[0] as f32)?;
            out.write_f32::<LittleEndian>(v[1] as f32)?;
        }
        out.write_all(&pack_bits(&self.mask))?;
        Ok(())
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| SimError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_binary(&mut w).map_err(|e| SimError::io(path, e))?;
        w.flush().map_err(|e| SimError::io(path, e))
    }
}

pub const BINARY_MAGIC: &[u8; 4] = b"DSWB";
pub const BINARY_VERSION: u32 = 1;

/// Decoded binary export, single-precision as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGeometry {
    pub version: u32,
    pub num_worlds: usize,
    pub p_max: usize,
    pub midpoints: Vec<[f32; 2]>,
    pub directions: Vec<[f32; 2]>,
    pub type_codes: Vec<i32>,
    pub half_lengths: Vec<f32>,
    pub half_widths: Vec<f32>,
    pub grid_offsets: Vec<[f32; 2]>,
    pub mask: Vec<bool>,
}

pub fn read_binary<R: Read>(mut input: R) -> Result<BinaryGeometry> {
    let bad = |e: std::io::Error| SimError::Parse {
        context: "binary geometry".into(),
        message: e.to_string(),
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(bad)?;
    if &magic != BINARY_MAGIC {
        return Err(SimError::Parse {
            context: "binary geometry".into(),
            message: "bad magic".into(),
        });
    }
    let version = input.read_u32::<LittleEndian>().map_err(bad)?;
    let num_worlds = input.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let p_max = input.read_u32::<LittleEndian>().map_err(bad)? as usize;
    let n = num_worlds * p_max;
    let mut pairs = |count: usize| -> Result<Vec<[f32; 2]>> {
        (0..count)
            .map(|_| Ok([input.read_f32::<LittleEndian>().map_err(bad)?, input.read_f32::<LittleEndian>().map_err(bad)?]))
            .collect()
    };
    let midpoints = pairs(n)?;
    let directions = pairs(n)?;
    let type_codes = (0..n).map(|_| input.read_i32::<LittleEndian>().map_err(bad)).collect::<Result<Vec<_>>>()?;
    let half_lengths = (0..n).map(|_| input.read_f32::<LittleEndian>().map_err(bad)).collect::<Result<Vec<_>>>()?;
    let half_widths = (0..n).map(|_| input.read_f32::<LittleEndian>().map_err(bad)).collect::<Result<Vec<_>>>()?;
    let grid_offsets = (0..num_worlds)
        .map(|_| Ok([input.read_f32::<LittleEndian>().map_err(bad)?, input.read_f32::<LittleEndian>().map_err(bad)?]))
        .collect::<Result<Vec<_>>>()?;
    let mut packed = vec![0u8; n.div_ceil(8)];
    input.read_exact(&mut packed).map_err(bad)?;
    let mask = (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect();
    Ok(BinaryGeometry {
        version,
        num_worlds,
        p_max,
        midpoints,
        directions,
        type_codes,
        half_lengths,
        half_widths,
        grid_offsets,
        mask,
    })
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

/// Prepare every scene and assemble `num_worlds` worlds.
pub fn build_world_batch(
    scenes: &[ScenarioSpec],
    num_worlds: usize,
    mode: FillMode,
    seed: u64,
    params: &BuildParams,
) -> Result<WorldBatch> {
    if scenes.is_empty() {
        return Err(SimError::Invalid("empty scene list".into()));
    }
    let pool = scenes.iter().map(|s| prepare_scene(s, params)).collect::<Result<Vec<_>>>()?;
    let assignment = assign_scenes(pool.len(), num_worlds, mode, seed);
    WorldBatch::from_prepared(&pool, &assignment)
}
