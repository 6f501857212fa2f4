//! Uniform-grid index over the segments of one world.
//!
//! Each segment is bucketed by its midpoint only. Queries widen their search
//! by the largest half-length in the world so results always equal an
//! exhaustive scan.

use crate::geometry::{point_segment, Vec2};
use crate::world::WorldBatch;

#[derive(Debug, Clone)]
pub struct SegmentGrid {
    cell: f64,
    origin: Vec2,
    nx: usize,
    ny: usize,
    /// CSR layout: indices of cell `c` are `items[starts[c]..starts[c + 1]]`,
    /// ascending.
    starts: Vec<u32>,
    items: Vec<u32>,
    max_half_length: f64,
}

impl SegmentGrid {
    pub fn build(batch: &WorldBatch, world: usize, cell: f64) -> Self {
        let n = batch.counts[world];
        let mids: Vec<Vec2> = (0..n).map(|i| batch.midpoints[batch.row(world, i)]).collect();
        let max_half_length = (0..n).map(|i| batch.half_lengths[batch.row(world, i)]).fold(0.0, f64::max);
        if n == 0 {
            return SegmentGrid::empty(cell);
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for m in &mids {
            for k in 0..2 {
                lo[k] = lo[k].min(m[k]);
                hi[k] = hi[k].max(m[k]);
            }
        }
        let nx = ((hi[0] - lo[0]) / cell).floor() as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell).floor() as usize + 1;
        let cell_of = |m: Vec2| -> usize {
            let cx = (((m[0] - lo[0]) / cell).floor() as usize).min(nx - 1);
            let cy = (((m[1] - lo[1]) / cell).floor() as usize).min(ny - 1);
            cy * nx + cx
        };
        let mut counts = vec![0u32; nx * ny + 1];
        for m in &mids {
            counts[cell_of(*m) + 1] += 1;
        }
        for c in 1..counts.len() {
            counts[c] += counts[c - 1];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0u32; n];
        for (i, m) in mids.iter().enumerate() {
            let c = cell_of(*m);
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        SegmentGrid {
            cell,
            origin: lo,
            nx,
            ny,
            starts,
            items,
            max_half_length,
        }
    }

    /// Grid holding no segments.
    pub fn empty(cell: f64) -> Self {
        SegmentGrid {
            cell,
            origin: [0.0, 0.0],
            nx: 0,
            ny: 0,
            starts: vec![0],
            items: vec![],
            max_half_length: 0.0,
        }
    }

    pub fn max_half_length(&self) -> f64 {
        self.max_half_length
    }

    #[inline]
    fn cell_range(&self, lo: f64, hi: f64, origin: f64, n: usize) -> Option<(usize, usize)> {
        let a = ((lo - origin) / self.cell).floor();
        let b = ((hi - origin) / self.cell).floor();
        if b < 0.0 || a >= n as f64 {
            return None;
        }
        Some((a.max(0.0) as usize, (b as usize).min(n - 1)))
    }

    /// Replace `out` with every segment whose midpoint lies within the square
    /// `[p - r, p + r]`, in cell order; callers apply the exact predicate.
    pub fn candidates(&self, p: Vec2, r: f64, out: &mut Vec<u32>) {
        self.candidates_box([p[0] - r, p[1] - r], [p[0] + r, p[1] + r], out);
    }

    /// Every segment whose midpoint lies in the box `[lo, hi]`, in cell order.
    pub fn candidates_box(&self, lo: Vec2, hi: Vec2, out: &mut Vec<u32>) {
        out.clear();
        if self.nx == 0 {
            return;
        }
        let Some((x0, x1)) = self.cell_range(lo[0], hi[0], self.origin[0], self.nx) else { return };
        let Some((y0, y1)) = self.cell_range(lo[1], hi[1], self.origin[1], self.ny) else { return };
        for cy in y0..=y1 {
            let a = self.starts[cy * self.nx + x0] as usize;
            let b = self.starts[cy * self.nx + x1 + 1] as usize;
            out.extend_from_slice(&self.items[a..b]);
        }
    }
}

/// Nearest segment among `candidates` satisfying `keep`, ties broken by
/// lower index. Returns `(index, distance, lateral)`.
#[inline]
pub fn nearest_in<F: Fn(usize) -> bool>(
    batch: &WorldBatch,
    world: usize,
    p: Vec2,
    candidates: impl Iterator<Item = usize>,
    keep: F,
) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    for i in candidates {
        if !keep(i) {
            continue;
        }
        let r = batch.row(world, i);
        let (d, lat) = point_segment(p, batch.midpoints[r], batch.directions[r], batch.half_lengths[r]);
        if best.map_or(true, |(bi, bd, _)| d < bd || (d == bd && i < bi)) {
            best = Some((i, d, lat));
        }
    }
    best
}

/// Grid-accelerated nearest-segment search equal to an exhaustive scan.
pub fn nearest_with_grid<F: Fn(usize) -> bool>(
    batch: &WorldBatch,
    world: usize,
    grid: &SegmentGrid,
    p: Vec2,
    keep: F,
    scratch: &mut Vec<u32>,
) -> Option<(usize, f64, f64)> {
    if batch.counts[world] == 0 {
        return None;
    }
    let mut r = grid.cell;
    loop {
        grid.candidates(p, r, scratch);
        let found = nearest_in(batch, world, p, scratch.iter().map(|&i| i as usize), &keep);
        // segments outside the searched square have midpoint distance > r,
        // so their distance exceeds r - max_half_length
        if let Some(hit) = found {
            if hit.1 < r - grid.max_half_length {
                return Some(hit);
            }
        }
        let covers_all = p[0] - r <= grid.origin[0]
            && p[1] - r <= grid.origin[1]
            && p[0] + r >= grid.origin[0] + grid.nx as f64 * grid.cell
            && p[1] + r >= grid.origin[1] + grid.ny as f64 * grid.cell;
        if covers_all {
            return found;
        }
        r *= 2.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Polyline, ScenarioSpec};
    use crate::world::{build_world_batch, BuildParams, FillMode};
    use proptest::prelude::*;

    fn batch_from(points: Vec<Vec<[f64; 3]>>) -> WorldBatch {
        let spec = ScenarioSpec {
            scenario_id: "g".into(),
            polylines: points
                .into_iter()
                .enumerate()
                .map(|(i, p)| Polyline {
                    type_code: if i % 2 == 0 { 1 } else { 15 },
                    points: p,
                })
                .collect(),
            agents: vec![],
        };
        build_world_batch(&[spec], 1, FillMode::Fixed, 0, &BuildParams::default()).unwrap()
    }

    proptest! {
        #[test]
        fn grid_nearest_equals_brute_force(
            lines in prop::collection::vec(prop::collection::vec((-60.0f64..60.0, -60.0f64..60.0), 2..12), 1..6),
            q in (-90.0f64..90.0, -90.0f64..90.0),
        ) {
            // chain random points into short steps so most pairs survive the gap rule
            let pts: Vec<Vec<[f64; 3]>> = lines.iter().map(|l| {
                let mut cur = [l[0].0, l[0].1];
                l.iter().map(|&(dx, dy)| {
                    cur = [cur[0] + dx / 30.0, cur[1] + dy / 30.0];
                    [cur[0], cur[1], 0.0]
                }).collect()
            }).collect();
            let b = batch_from(pts);
            let grid = SegmentGrid::build(&b, 0, 5.0);
            let mut scratch = Vec::new();
            let keep = |i: usize| b.type_codes[b.row(0, i)] == 1;
            let fast = nearest_with_grid(&b, 0, &grid, [q.0, q.1], keep, &mut scratch);
            let slow = nearest_in(&b, 0, [q.0, q.1], 0..b.counts[0], keep);
            prop_assert_eq!(fast, slow);
        }
    }

    #[test]
    fn candidates_superset_of_radius() {
        let b = batch_from(vec![(0..40).map(|i| [i as f64 - 20.0, 0.0, 0.0]).collect()]);
        let grid = SegmentGrid::build(&b, 0, 5.0);
        let mut out = Vec::new();
        grid.candidates([0.0, 0.0], 10.0, &mut out);
        let within: Vec<u32> = (0..b.counts[0] as u32)
            .filter(|&i| {
                let m = b.midpoints[i as usize];
                m[0].hypot(m[1]) <= 10.0
            })
            .collect();
        assert!(within.iter().all(|i| out.contains(i)));
        let mut sorted = out.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), out.len());
    }
}
