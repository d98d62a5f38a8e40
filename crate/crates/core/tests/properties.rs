use proptest::prelude::*;

use polarstream::bench::{canvas_table, latency_table, BYTES_PER_VALUE, CANVAS_CHANNELS};
use polarstream::context::{PadLayer, PadState};
use polarstream::geometry::{
    apply_motion, cart_polar, polar_cart, Grid, LidarPoint, PolarGridSpec, RigidMotion2D,
    SectorSpec,
};
use polarstream::heads::{DecodedBox, GtBox};
use polarstream::pillars::{group_points, pillarize, PillarEncoderParams};
use polarstream::polar_layers::{
    apply_undistortion, apply_undistortion_lazy, build_undistortion_plan, partition_rows,
    small_angle_offset, stratified_conv, LearnedUndistortion, QueryGrid, StratifiedConvParams,
    UndistortionMode,
};
use polarstream::postprocess::{
    nms, panoptic_fuse, rotated_iou, stateful_nms, NmsConfig, NmsState, PanopticConfig,
};
use polarstream::rng::SeededRng;
use polarstream::stream::{slice_sweep, Sweep};
use polarstream::tensor::{conv2d, relu, ColumnPadding, Conv2d, FeatureMap};

fn cloud(count: usize, seed: u64) -> Vec<LidarPoint> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            LidarPoint::new(
                rng.uniform(-55.0, 55.0),
                rng.uniform(-55.0, 55.0),
                rng.uniform(-6.0, 4.0),
                rng.unit(),
                0.0,
            )
        })
        .collect()
}

fn random_box(rng: &mut SeededRng, reach: f64) -> GtBox {
    GtBox {
        class: rng.below(3),
        x: rng.uniform(-reach, reach),
        y: rng.uniform(-reach, reach),
        z: 0.0,
        l: rng.uniform(1.0, 5.0),
        w: rng.uniform(0.5, 2.5),
        h: 1.5,
        yaw: rng.uniform(-3.14, 3.14),
        vx: 0.0,
        vy: 0.0,
    }
}

fn random_boxes(count: usize, reach: f64, seed: u64) -> Vec<DecodedBox> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            let bbox = random_box(&mut rng, reach);
            let (_, t) = cart_polar(bbox.x, bbox.y);
            let grid = PolarGridSpec::full_sweep();
            let sector =
                ((t - grid.theta_min()) / (grid.theta_max() - grid.theta_min()) * 8.0) as usize;
            DecodedBox {
                bbox,
                score: rng.uniform(0.0, 1.0),
                sector: sector.min(7),
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polar_round_trip(r in 0.0f64..100.0, t in -3.14159f64..3.14159) {
        let (x, y) = polar_cart(r, t);
        let (r2, t2) = cart_polar(x, y);
        let (x2, y2) = polar_cart(r2, t2);
        prop_assert!((x - x2).abs() < 1e-6 && (y - y2).abs() < 1e-6);
    }

    #[test]
    fn binning_stays_within_half_a_cell(x in -51.0f64..51.0, y in -51.0f64..51.0, z in -4.9f64..2.9) {
        let g = PolarGridSpec::full_sweep();
        let p = LidarPoint::new(x, y, z, 0.0, 0.0);
        if let Ok(cell) = g.bin(&p) {
            let (rc, tc) = g.cell_center(cell);
            prop_assert!((p.r - rc).abs() <= 0.5 * g.delta_r() + 1e-9);
            prop_assert!((p.theta - tc).abs() <= 0.5 * g.delta_theta() + 1e-9);
        }
    }

    #[test]
    fn motions_are_rigid(seed in any::<u64>(), yaw in -3.2f64..3.2, tx in -30.0f64..30.0, ty in -30.0f64..30.0) {
        let pts = cloud(20, seed);
        let moved = apply_motion(&pts, &RigidMotion2D::new(yaw, tx, ty));
        for i in 0..pts.len() {
            for j in 0..i {
                let d0 = (pts[i].x - pts[j].x).hypot(pts[i].y - pts[j].y);
                let d1 = (moved[i].x - moved[j].x).hypot(moved[i].y - moved[j].y);
                prop_assert!((d0 - d1).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sectors_partition_and_stay_canonical(seed in any::<u64>(), log_n in 0u32..10) {
        let n = 1usize << log_n;
        let grid = PolarGridSpec::full_sweep();
        let sweep = Sweep { id: 3, points: cloud(500, seed), ego_pose: RigidMotion2D::IDENTITY };
        let sectors = slice_sweep(&sweep, n, true, &grid).unwrap();
        let mut seen = vec![0u8; sweep.points.len()];
        for s in &sectors {
            for &i in &s.source_indices {
                seen[i] += 1;
            }
            let lo = grid.theta_min();
            for p in &s.points {
                prop_assert!(p.theta >= lo - 1e-9 && p.theta < lo + 6.2976 / n as f64 + 1e-9);
            }
        }
        for (i, p) in sweep.points.iter().enumerate() {
            prop_assert_eq!(seen[i], u8::from(grid.bin(p).is_ok()));
        }
        prop_assert_eq!(slice_sweep(&sweep, n, true, &grid).unwrap(), sectors);
    }

    #[test]
    fn pillars_ignore_order_and_keep_points(seed in any::<u64>(), count in 0usize..600) {
        let grid = Grid::Polar(PolarGridSpec::full_sweep().downsample(8).unwrap());
        let pts = cloud(count, seed);
        let params = PillarEncoderParams::seeded(4, &mut SeededRng::new(seed ^ 1));
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert_eq!(pillarize(&pts, &grid, &params).unwrap(), pillarize(&rev, &grid, &params).unwrap());
        let a = group_points(&pts, &grid);
        let in_range = pts.iter().filter(|p| polarstream::geometry::bin_of(p, &grid).is_ok()).count();
        prop_assert_eq!(a.pillars.values().map(Vec::len).sum::<usize>(), in_range);
    }

    #[test]
    fn conv_is_linear_and_padding_consistent(seed in any::<u64>(), alpha in -2.0f32..2.0, beta in -2.0f32..2.0) {
        let mut rng = SeededRng::new(seed);
        let a = FeatureMap::random(7, 9, 2, -1.0, 1.0, &mut rng);
        let b = FeatureMap::random(7, 9, 2, -1.0, 1.0, &mut rng);
        let w: Vec<f32> = (0..3 * 3 * 2 * 3).map(|_| rng.uniform_f32(-1.0, 1.0)).collect();
        let k = Conv2d::new(3, 2, 3, 1, w, vec![0.0; 3]).unwrap();
        let mix = FeatureMap::from_fn(7, 9, 2, |i, j, c| alpha * a.get(i, j, c) + beta * b.get(i, j, c));
        let lhs = conv2d(&mix, &k, ColumnPadding::Zero).unwrap();
        let (ca, cb) = (conv2d(&a, &k, ColumnPadding::Zero).unwrap(), conv2d(&b, &k, ColumnPadding::Zero).unwrap());
        let rhs = FeatureMap::from_fn(7, 9, 3, |i, j, c| alpha * ca.get(i, j, c) + beta * cb.get(i, j, c));
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-4);

        let z = FeatureMap::zeros(7, 1, 2);
        let framed = FeatureMap::concat_cols(&[&z, &a, &z]).unwrap();
        prop_assert_eq!(conv2d(&framed, &k, ColumnPadding::Provided).unwrap(), ca);
        let r = relu(&a);
        prop_assert_eq!(relu(&r), r);
    }

    #[test]
    fn identical_strata_equal_plain_conv(seed in any::<u64>(), s in 1usize..5) {
        let mut rng = SeededRng::new(seed);
        let map = FeatureMap::random(16, 6, 2, -1.0, 1.0, &mut rng);
        let k = Conv2d::seeded(3, 2, 2, 1, &mut rng);
        let params = StratifiedConvParams::new(vec![k.clone(); s]).unwrap();
        let out = stratified_conv(&map, &params, &partition_rows(16, s).unwrap(), ColumnPadding::Zero).unwrap();
        prop_assert_eq!(out, conv2d(&map, &k, ColumnPadding::Zero).unwrap());
    }

    #[test]
    fn oracle_taps_are_convex(seed in any::<u64>()) {
        let src = PolarGridSpec::full_sweep().downsample(16).unwrap();
        let mut rng = SeededRng::new(seed);
        let xy: Vec<(f64, f64)> = (0..64).map(|_| (rng.uniform(-52.0, 52.0), rng.uniform(-52.0, 52.0))).collect();
        let q = QueryGrid::from_xy(8, 8, &xy, &src).unwrap();
        let plan = build_undistortion_plan(&src, &q, &UndistortionMode::Oracle).unwrap();
        for i in 0..plan.len() {
            if let Some(taps) = plan.taps(i) {
                let total: f32 = taps.iter().map(|t| t.w * t.w_mod).sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
                prop_assert!(taps.iter().all(|t| (0.0..=1.0).contains(&t.w_mod)));
            }
        }
        let mode = UndistortionMode::Learned(LearnedUndistortion::seeded(4, &mut rng));
        let map = FeatureMap::random(src.n_r(), src.n_theta(), 3, -1.0, 1.0, &mut rng);
        let planned = apply_undistortion(&map, &build_undistortion_plan(&src, &q, &mode).unwrap()).unwrap();
        prop_assert_eq!(apply_undistortion_lazy(&map, &src, &q, &mode).unwrap(), planned);
    }

    #[test]
    fn small_angle_error_is_second_order(r_c in 0.3f64..50.3, t_c in -3.14f64..3.14, frac in -1.0f64..1.0) {
        let dt = PolarGridSpec::full_sweep().delta_theta();
        let t_s = frac * dt;
        let (exact, approx) = small_angle_offset(r_c, t_c, t_s);
        prop_assert!((exact - approx).abs() <= r_c * t_s * t_s + 1e-12);
    }

    #[test]
    fn sectors_must_arrive_in_order(first in 1usize..8) {
        let grid = PolarGridSpec::full_sweep();
        let mut st = PadState::new(vec![PadLayer { radius: 1, scale: 1 }]);
        prop_assert!(st.begin_sector(&SectorSpec::new(0, first, 8, &grid, false).unwrap()).is_err());
        st.begin_sector(&SectorSpec::new(0, 0, 8, &grid, false).unwrap()).unwrap();
        prop_assert!(st.begin_sector(&SectorSpec::new(0, 0, 8, &grid, false).unwrap()).is_err());
        if first > 1 {
            prop_assert!(st.begin_sector(&SectorSpec::new(0, first, 8, &grid, false).unwrap()).is_err());
        }
    }

    #[test]
    fn iou_is_symmetric_and_rotation_free(seed in any::<u64>(), spin in -3.14f64..3.14) {
        let mut rng = SeededRng::new(seed);
        let a = random_box(&mut rng, 3.0);
        let b = random_box(&mut rng, 3.0);
        let iou = rotated_iou(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&iou));
        prop_assert!((iou - rotated_iou(&b, &a)).abs() < 1e-12);
        let m = RigidMotion2D::new(spin, 0.0, 0.0);
        prop_assert!((iou - rotated_iou(&a.transformed(&m), &b.transformed(&m))).abs() < 1e-9);
    }

    #[test]
    fn nms_keeps_only_separated_boxes(seed in any::<u64>(), count in 0usize..60) {
        let boxes = random_boxes(count, 8.0, seed);
        let cfg = NmsConfig::default();
        let kept = nms(&boxes, &cfg);
        for i in 0..kept.len() {
            for j in 0..i {
                if kept[i].bbox.class == kept[j].bbox.class {
                    prop_assert!(rotated_iou(&kept[i].bbox, &kept[j].bbox) <= cfg.iou_threshold);
                }
            }
        }
        prop_assert_eq!(nms(&kept, &cfg), kept.clone());

        let grid = PolarGridSpec::full_sweep();
        let whole = SectorSpec::new(0, 0, 1, &grid, false).unwrap();
        prop_assert_eq!(stateful_nms(&boxes, &whole, &mut NmsState::new(), &cfg).unwrap(), kept);

        let mut state = NmsState::new();
        let mut all = Vec::new();
        for k in 0..8 {
            let part: Vec<DecodedBox> = boxes.iter().filter(|b| b.sector == k).copied().collect();
            all.extend(stateful_nms(&part, &SectorSpec::new(0, k, 8, &grid, false).unwrap(), &mut state, &cfg).unwrap());
        }
        for i in 0..all.len() {
            for j in 0..i {
                if all[i].bbox.class == all[j].bbox.class {
                    prop_assert!(rotated_iou(&all[i].bbox, &all[j].bbox) <= cfg.iou_threshold);
                }
            }
        }
    }

    #[test]
    fn global_fusion_ignores_arrival_order(seed in any::<u64>()) {
        let boxes = random_boxes(12, 30.0, seed);
        let mut rng = SeededRng::new(seed ^ 7);
        let pts: Vec<LidarPoint> = (0..200)
            .map(|_| LidarPoint::new(rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0), 0.0, 0.0, 0.0))
            .collect();
        let sem: Vec<u16> = (0..200).map(|_| rng.below(12) as u16).collect();
        let cfg = PanopticConfig::default();
        let mut shuffled = boxes.clone();
        shuffled.reverse();
        prop_assert_eq!(
            panoptic_fuse(&pts, &sem, &boxes, &cfg).unwrap(),
            panoptic_fuse(&pts, &sem, &shuffled, &cfg).unwrap()
        );
    }

    #[test]
    fn latency_falls_with_more_sectors(runtime in 0.0f64..100.0) {
        let ns = [1, 2, 4, 8, 16, 32];
        let t = latency_table(&ns, &[runtime; 6]).unwrap();
        for w in t.rows.windows(2) {
            prop_assert!(w[1].end_to_end_ms < w[0].end_to_end_ms);
        }
        for r in &t.rows {
            prop_assert!((r.end_to_end_ms - (50.0 / r.sectors as f64 + runtime)).abs() < 1e-12);
        }
    }
}

#[test]
fn canvas_bytes_follow_shape() {
    let t = canvas_table(
        &[1, 2, 4, 8, 16, 32, 64, 128, 256, 512],
        &PolarGridSpec::full_sweep(),
    )
    .unwrap();
    for r in &t.rows {
        for c in [r.polar, r.cartesian] {
            assert_eq!(
                c.bytes,
                c.height * c.width * CANVAS_CHANNELS * BYTES_PER_VALUE
            );
        }
    }
}
