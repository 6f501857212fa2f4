use drivesim_core::scenario::{reject_degenerate_scene, Polyline, SceneFilterParams, SceneVerdict};
use drivesim_core::synth::{junction_scene, straight_scene, two_level_fixture};
use drivesim_core::world::{build_world_batch, grid_offset, prepare_scene, segmentize, BuildParams, FillMode, GRID_PITCH, SEGMENT_HALF_WIDTH};

fn pl(points: &[[f64; 3]]) -> Polyline {
    Polyline {
        type_code: 1,
        points: points.to_vec(),
    }
}

#[test]
fn segment_vectors_are_unit_and_centred() {
    let line = pl(&[[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [3.0, 6.0, 1.0], [-1.0, 6.0, 0.0]]);
    // gap 5: all three pairs kept (lengths 5, 2, 4)
    let segs = segmentize(&line, 7, 5.0, 100.0);
    assert_eq!(segs.len(), 3);
    let expected = [([1.5, 2.0], [0.6, 0.8], 2.5), ([3.0, 5.0], [0.0, 1.0], 1.0), ([1.0, 6.0], [-1.0, 0.0], 2.0)];
    for (s, (mid, dir, half)) in segs.iter().zip(expected) {
        assert!((s.dir[0].hypot(s.dir[1]) - 1.0).abs() < 1e-12);
        assert!((s.mid[0] - mid[0]).abs() < 1e-12 && (s.mid[1] - mid[1]).abs() < 1e-12);
        assert!((s.dir[0] - dir[0]).abs() < 1e-12 && (s.dir[1] - dir[1]).abs() < 1e-12);
        assert_eq!(s.half_length, half);
        assert_eq!(s.half_width, SEGMENT_HALF_WIDTH);
        assert_eq!(s.polyline, 7);
    }
}

#[test]
fn gap_and_bbox_drop_pairs() {
    let line = pl(&[[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [3.0, 6.0, 0.0]]);
    // the 5 m pair exceeds a 3 m gap, the 2 m pair survives; a pair of
    // exactly the gap length is kept
    let segs = segmentize(&line, 0, 3.0, 100.0);
    assert_eq!(segs.len(), 1);
    assert_eq!(segs[0].mid, [3.0, 5.0]);
    assert_eq!(segmentize(&pl(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]), 0, 3.0, 100.0).len(), 1);
    // one endpoint outside the box drops the pair
    let edge = pl(&[[98.0, 0.0, 0.0], [99.5, 0.0, 0.0], [100.5, 0.0, 0.0]]);
    assert_eq!(segmentize(&edge, 0, 3.0, 100.0).len(), 1);
    // zero-length pairs carry no direction and are skipped
    assert!(segmentize(&pl(&[[1.0, 1.0, 0.0], [1.0, 1.0, 0.0]]), 0, 3.0, 100.0).is_empty());
}

#[test]
fn prepared_scene_is_recentred_and_flat() {
    let mut spec = straight_scene("s", 2, 50.0);
    for p in spec.polylines.iter_mut().flat_map(|p| p.points.iter_mut()) {
        p[0] += 1000.0;
        p[2] = 4.0;
    }
    for a in &mut spec.agents {
        a.start[0] += 1000.0;
        a.goal[0] += 1000.0;
    }
    let prep = prepare_scene(&spec, &BuildParams::default()).unwrap();
    assert!((prep.center[0] - 1000.0).abs() < 1e-9);
    assert!(prep.polylines.iter().flat_map(|p| &p.points).all(|p| p[2] == 0.0));
    assert!(prep.original_z.iter().flatten().all(|z| *z == 4.0));
    assert_eq!(prep.agents.len(), 2);
    assert!((prep.agents[0].start[0] + 25.0).abs() < 1e-9);
}

#[test]
fn grid_offsets_use_400m_pitch() {
    assert_eq!(GRID_PITCH, 400.0);
    for n in [1usize, 2, 5, 9, 10, 64] {
        let cols = (n as f64).sqrt().ceil() as usize;
        for w in 0..n {
            let o = grid_offset(w, n);
            assert_eq!(o, [400.0 * (w % cols) as f64, 400.0 * (w / cols) as f64]);
        }
    }
    let b = build_world_batch(&[straight_scene("s", 1, 50.0)], 9, FillMode::Fixed, 0, &BuildParams::default()).unwrap();
    assert_eq!(b.grid_offsets[4], [400.0, 400.0]);
    assert_eq!(b.grid_offsets[8], [800.0, 800.0]);
}

#[test]
fn seed_42_random_fill_is_reproducible() {
    let pool: Vec<_> = (0..5).map(|k| junction_scene(&format!("j{k}"), 6, k)).collect();
    let params = BuildParams::default();
    let a = build_world_batch(&pool, 12, FillMode::RandomFill, 42, &params).unwrap();
    let b = build_world_batch(&pool, 12, FillMode::RandomFill, 42, &params).unwrap();
    assert_eq!(a.scene_of_world, b.scene_of_world);
    assert_eq!(a.scenario_ids, b.scenario_ids);
    assert_eq!(a.midpoints, b.midpoints);
    assert_eq!(a.agents, b.agents);
    // tiling repeats the shuffled order
    for w in 5..12 {
        assert_eq!(a.scene_of_world[w], a.scene_of_world[w - 5]);
    }
    let differs = (0..20u64).any(|s| build_world_batch(&pool, 5, FillMode::RandomFill, s, &params).unwrap().scene_of_world != a.scene_of_world[..5]);
    assert!(differs, "the shuffle ignores the seed");
}

#[test]
fn two_level_fixture_is_rejected() {
    let verdict = reject_degenerate_scene(&two_level_fixture(), &SceneFilterParams::default());
    match verdict {
        SceneVerdict::Reject(reason) => assert!(reason.contains("multi-level"), "{reason}"),
        SceneVerdict::Accept => panic!("overpass fixture accepted"),
    }
    // the same roads at one level pass
    let mut flat = two_level_fixture();
    for p in flat.polylines.iter_mut().flat_map(|p| p.points.iter_mut()) {
        p[2] = 0.0;
    }
    assert!(reject_degenerate_scene(&flat, &SceneFilterParams::default()).is_accept());
}
