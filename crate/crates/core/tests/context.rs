use polarstream::context::{warp_polar_map, ContextPadder, PadLayer, PaddingMode, SweepMemory};
use polarstream::geometry::{PolarGridSpec, RigidMotion2D, SectorSpec};
use polarstream::rng::SeededRng;
use polarstream::tensor::{conv2d, ColumnPadding, Conv2d, FeatureMap};

const LAYER: [PadLayer; 1] = [PadLayer {
    radius: 1,
    scale: 1,
}];

fn grid() -> PolarGridSpec {
    PolarGridSpec::full_sweep().downsample(8).unwrap()
}

fn spec(sweep: u64, index: usize, n: usize) -> SectorSpec {
    SectorSpec::new(sweep, index, n, &grid(), false).unwrap()
}

/// Convolution of `map` with its θ axis closed on itself.
fn circular_conv(map: &FeatureMap, conv: &Conv2d) -> FeatureMap {
    let w = map.w();
    let cols: Vec<usize> = std::iter::once(w - 1)
        .chain(0..w)
        .chain(std::iter::once(0))
        .collect();
    conv2d(&map.gather_cols(&cols), conv, ColumnPadding::Provided).unwrap()
}

#[test]
fn true_leading_context_reproduces_full_conv() {
    let mut rng = SeededRng::new(1);
    let full = FeatureMap::random(64, 64, 3, -1.0, 1.0, &mut rng);
    let conv = Conv2d::seeded(3, 3, 4, 1, &mut rng);
    let reference = conv2d(&full, &conv, ColumnPadding::Zero).unwrap();
    for n in [2, 4, 8, 16] {
        let per = 64 / n;
        let mut padder = ContextPadder::new(PaddingMode::Trailing, grid(), LAYER.to_vec());
        for k in 0..n {
            padder
                .begin_sector(&spec(0, k, n), RigidMotion2D::IDENTITY)
                .unwrap();
            let sector = full.slice_cols(k * per, per).unwrap();
            let padded = padder.pad(0, &sector).unwrap();
            let lead = if k + 1 < n {
                full.slice_cols((k + 1) * per, 1).unwrap()
            } else {
                FeatureMap::zeros(64, 1, 3)
            };
            let body = padded.slice_cols(0, per + 1).unwrap();
            let fixed = FeatureMap::concat_cols(&[&body, &lead]).unwrap();
            let out = conv2d(&fixed, &conv, ColumnPadding::Provided).unwrap();
            let expect = reference.slice_cols(k * per, per).unwrap();
            assert!(
                out.max_abs_diff(&expect).unwrap() <= 1e-5,
                "n = {n}, sector {k}"
            );
        }
    }
}

#[test]
fn static_memory_closes_the_sweep_circle() {
    let mut rng = SeededRng::new(2);
    let full = FeatureMap::random(64, 64, 2, -1.0, 1.0, &mut rng);
    let conv = Conv2d::seeded(3, 2, 2, 1, &mut rng);
    let reference = circular_conv(&full, &conv);
    for n in [1, 4, 8] {
        let per = 64 / n;
        let mut padder = ContextPadder::new(PaddingMode::Bidirectional, grid(), LAYER.to_vec());
        padder.set_memory(SweepMemory {
            sweep_id: 0,
            ego_pose: RigidMotion2D::IDENTITY,
            layers: vec![full.clone()],
        });
        for k in 0..n {
            padder
                .begin_sector(&spec(1, k, n), RigidMotion2D::IDENTITY)
                .unwrap();
            let padded = padder
                .pad(0, &full.slice_cols(k * per, per).unwrap())
                .unwrap();
            let out = conv2d(&padded, &conv, ColumnPadding::Provided).unwrap();
            assert!(
                out.max_abs_diff(&reference.slice_cols(k * per, per).unwrap())
                    .unwrap()
                    <= 1e-5
            );
        }
    }
}

#[test]
fn recorded_memory_is_the_sweep_input() {
    let mut rng = SeededRng::new(3);
    let full = FeatureMap::random(64, 64, 2, -1.0, 1.0, &mut rng);
    let pose = RigidMotion2D::new(0.2, 3.0, -1.0);
    let mut padder = ContextPadder::new(PaddingMode::Bidirectional, grid(), LAYER.to_vec());
    for k in 0..4 {
        padder.begin_sector(&spec(0, k, 4), pose).unwrap();
        padder
            .pad(0, &full.slice_cols(k * 16, 16).unwrap())
            .unwrap();
    }
    assert!(padder.memory().is_none());
    padder.begin_sector(&spec(1, 0, 4), pose).unwrap();
    let mem = padder.memory().unwrap();
    assert_eq!(mem.sweep_id, 0);
    assert_eq!(mem.ego_pose, pose);
    assert_eq!(mem.layers, vec![full]);
}

#[test]
fn whole_column_yaw_is_a_circular_shift() {
    let g = PolarGridSpec::full_sweep();
    let mut rng = SeededRng::new(4);
    let map = FeatureMap::random(512, 512, 2, -1.0, 1.0, &mut rng);
    for m in [1usize, 7, 200] {
        let warped = warp_polar_map(
            &map,
            &RigidMotion2D::new(m as f64 * g.delta_theta(), 0.0, 0.0),
            &g,
        )
        .unwrap();
        let cols: Vec<usize> = (0..512).map(|j| (j + 512 - m) % 512).collect();
        assert_eq!(warped, map.gather_cols(&cols), "m = {m}");
    }
}

#[test]
fn translation_resamples_bilinearly() {
    let g = grid();
    let map = FeatureMap::from_fn(64, 64, 1, |i, _, _| i as f32);
    // Rows are linear in range, so a small translation moves every interior
    // cell by the range change of its centre.
    let motion = RigidMotion2D::new(0.0, 0.3, -0.2);
    let warped = warp_polar_map(&map, &motion, &g).unwrap();
    let inv = motion.inverse();
    for i in 2..60 {
        for j in 0..64 {
            let (x, y) = g.cell_center_xy(polarstream::geometry::CellIndex::new(i, j));
            let (sx, sy) = inv.apply(x, y);
            let u = (sx.hypot(sy) - g.r_min()) / g.delta_r() - 0.5;
            assert!((warped.get(i, j, 0) as f64 - u).abs() < 1e-3, "({i}, {j})");
        }
    }
}
