use polarstream::geometry::{
    apply_motion, cart_polar, polar_cart, LidarPoint, PolarGridSpec, RigidMotion2D, SectorSpec,
    FULL_SWEEP_SPAN, THETA_ORIGIN,
};
use polarstream::rng::SeededRng;
use polarstream::stream::{accumulate, slice_sweep, stream_sectors, AccumulationConfig, Sweep};

fn random_points(count: usize, reach: f64, seed: u64) -> Vec<LidarPoint> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            LidarPoint::new(
                rng.uniform(-reach, reach),
                rng.uniform(-reach, reach),
                rng.uniform(-6.0, 4.0),
                rng.unit(),
                0.0,
            )
        })
        .collect()
}

#[test]
fn negative_quadrant_round_trip() {
    let (r, t) = cart_polar(-3.0, -4.0);
    assert!((r - 5.0).abs() < 1e-12);
    assert!((t - (-4.0f64).atan2(-3.0)).abs() < 1e-12);
    let (x, y) = polar_cart(r, t);
    assert!((x + 3.0).abs() < 1e-6 && (y + 4.0).abs() < 1e-6);
}

#[test]
fn every_in_range_point_has_one_cell() {
    let grid = PolarGridSpec::full_sweep();
    let (dr, dt) = (grid.delta_r(), grid.delta_theta());
    for p in random_points(10_000, 55.0, 1) {
        let in_z = p.z >= grid.z_min() && p.z < grid.z_max();
        let rows: Vec<usize> = (0..grid.n_r())
            .filter(|&i| {
                let lo = grid.r_min() + i as f64 * dr;
                p.r >= lo && p.r < lo + dr
            })
            .collect();
        let cols: Vec<usize> = (0..grid.n_theta())
            .filter(|&j| {
                let lo = grid.theta_min() + j as f64 * dt;
                p.theta >= lo && p.theta < lo + dt
            })
            .collect();
        match grid.bin(&p) {
            Ok(cell) => {
                assert!(in_z);
                assert_eq!(rows, vec![cell.row]);
                assert_eq!(cols, vec![cell.col]);
            }
            Err(_) => assert!(!in_z || rows.len() != 1 || cols.len() != 1),
        }
    }
}

#[test]
fn motion_then_inverse_restores_points() {
    let mut rng = SeededRng::new(2);
    for p in random_points(1000, 60.0, 3) {
        let m = RigidMotion2D::new(
            rng.uniform(-3.2, 3.2),
            rng.uniform(-20.0, 20.0),
            rng.uniform(-20.0, 20.0),
        );
        let moved = apply_motion(&[p], &m);
        let back = apply_motion(&moved, &m.inverse())[0];
        assert!((back.x - p.x).abs() < 1e-6 && (back.y - p.y).abs() < 1e-6);
        assert_eq!(back.z, p.z);
    }
}

#[test]
fn four_sectors_cover_equal_spans() {
    let grid = PolarGridSpec::full_sweep();
    for k in 0..4 {
        let s = SectorSpec::new(0, k, 4, &grid, false).unwrap();
        assert!((s.theta_hi - s.theta_lo - 1.5744).abs() < 1e-9);
        assert!((s.theta_lo - (THETA_ORIGIN + k as f64 * FULL_SWEEP_SPAN / 4.0)).abs() < 1e-9);
    }
}

#[test]
fn sectors_partition_in_range_points() {
    let grid = PolarGridSpec::full_sweep();
    let sweep = Sweep {
        id: 0,
        points: random_points(20_000, 55.0, 4),
        ego_pose: RigidMotion2D::IDENTITY,
    };
    let mut expected: Vec<usize> = (0..sweep.points.len())
        .filter(|&i| grid.bin(&sweep.points[i]).is_ok())
        .collect();
    expected.sort_unstable();
    for n in [1, 2, 8, 32, 512] {
        for canonical in [false, true] {
            let sectors = slice_sweep(&sweep, n, canonical, &grid).unwrap();
            let mut got: Vec<usize> = sectors
                .iter()
                .flat_map(|s| s.source_indices.iter().copied())
                .collect();
            got.sort_unstable();
            assert_eq!(got, expected, "n = {n}, canonical = {canonical}");
            for s in &sectors {
                let g = s.spec.grid(&grid).unwrap();
                assert!(s.points.iter().all(|p| g.bin(p).is_ok()));
            }
        }
    }
}

#[test]
fn accumulated_history_moves_with_ego() {
    let past = Sweep {
        id: 0,
        points: vec![LidarPoint::new(0.0, 0.0, 0.5, 0.3, 0.0)],
        ego_pose: RigidMotion2D::IDENTITY,
    };
    let current = Sweep {
        id: 1,
        points: vec![LidarPoint::new(5.0, 5.0, 0.0, 0.1, 0.0)],
        ego_pose: RigidMotion2D::new(0.0, 1.0, 0.0),
    };
    let merged = accumulate(&[past, current], &AccumulationConfig::default()).unwrap();
    assert_eq!(merged.points.len(), 2);
    let p = merged.points[1];
    assert!((p.x + 1.0).abs() < 1e-12 && p.y.abs() < 1e-12);
    assert!((p.dt + 0.05).abs() < 1e-12);
    assert_eq!(merged.points[0].dt, 0.0);
}

#[test]
fn eighth_sector_arrives_after_its_scan_share() {
    let grid = PolarGridSpec::full_sweep();
    let s = SectorSpec::new(0, 0, 8, &grid, true).unwrap();
    assert_eq!(s.arrival_time_ms(), 6.25);
    let last = SectorSpec::new(0, 7, 8, &grid, true).unwrap();
    assert_eq!(last.arrival_time_ms(), 50.0);
}

#[test]
fn stream_matches_batch_slicing() {
    let grid = PolarGridSpec::full_sweep();
    let sweeps: Vec<Sweep> = (0..3)
        .map(|k| Sweep {
            id: k,
            points: random_points(3000, 55.0, 10 + k),
            ego_pose: RigidMotion2D::new(0.01 * k as f64, k as f64, 0.0),
        })
        .collect();
    let streamed: Vec<_> = stream_sectors(sweeps.clone(), 8, true, grid)
        .unwrap()
        .collect();
    let batch: Vec<_> = sweeps
        .iter()
        .flat_map(|s| slice_sweep(s, 8, true, &grid).unwrap())
        .collect();
    assert_eq!(streamed, batch);
    let order: Vec<(u64, usize)> = streamed
        .iter()
        .map(|s| (s.spec.sweep_id, s.spec.index))
        .collect();
    assert!(order.windows(2).all(|w| w[0] < w[1]));
}
