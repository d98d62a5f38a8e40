use std::fs;

use polarstream::heads::is_thing;
use polarstream::pipeline::{evaluate, run_scene, Heads, HeatmapKind, MetricSet, PipelineConfig};
use polarstream::postprocess::FusionMode;
use polarstream::stream::AccumulationConfig;
use polarstream::synth::{generate, read_scene, write_scene, SceneSpec};

fn spec(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        sweeps: 3,
        boxes_min: 6,
        boxes_max: 10,
        points_per_box: 50,
        ground_density: 0.1,
        ..Default::default()
    }
}

#[test]
fn scenes_are_byte_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_scene(a.path(), &generate(&spec(5)).unwrap()).unwrap();
    write_scene(b.path(), &generate(&spec(5)).unwrap()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 8);
    for name in names {
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap()
        );
    }
    let back = read_scene(a.path()).unwrap();
    assert_eq!(back.boxes, generate(&spec(5)).unwrap().boxes);
    assert_ne!(generate(&spec(6)).unwrap().sweeps, back.sweeps);
}

#[test]
fn instance_ids_follow_their_object() {
    let scene = generate(&spec(7)).unwrap();
    for ((sweep, labels), boxes) in scene.sweeps.iter().zip(&scene.labels).zip(&scene.boxes) {
        assert_eq!(sweep.points.len(), labels.len());
        for (p, l) in sweep.points.iter().zip(labels) {
            if l.instance == 0 {
                assert!(!is_thing(l.semantic));
                continue;
            }
            let b = &boxes[l.instance as usize - 1];
            assert_eq!(b.class as u16, l.semantic);
            assert!(b.contains(p.x, p.y, p.z, 1e-6));
        }
    }
    let empty = generate(&SceneSpec {
        boxes_min: 0,
        boxes_max: 0,
        ..spec(8)
    })
    .unwrap();
    assert!(empty
        .labels
        .iter()
        .flatten()
        .all(|l| l.instance == 0 && !is_thing(l.semantic)));
}

#[test]
fn oracle_heads_are_perfect_for_every_configuration() {
    let scene = generate(&spec(9)).unwrap();
    for (n, canonical, history) in [(1, true, 1), (8, false, 1), (32, true, 3), (4, true, 2)] {
        let cfg = PipelineConfig {
            sectors: n,
            canonicalize: canonical,
            accumulation: AccumulationConfig {
                history_sweeps: history,
                sweep_period_s: 0.05,
            },
            ..Default::default()
        };
        let ctx = format!("n = {n}, canonical = {canonical}, history {history}");
        let global = run_scene(&scene, &cfg, &Heads::Oracle, FusionMode::Global).unwrap();
        assert_eq!(global.sector_ms.len(), n * scene.sweeps.len());
        assert_eq!(global.predictions.sectors, n);
        let r = evaluate(&global.predictions, &scene, MetricSet::ALL).unwrap();
        assert!((r.detection.unwrap().mean_ap - 1.0).abs() < 1e-9, "{ctx}");
        assert!((r.segmentation.unwrap().miou - 1.0).abs() < 1e-9, "{ctx}");
        assert!((r.panoptic.unwrap().pq - 1.0).abs() < 1e-9, "{ctx}");

        // Stateful fusion keeps boxes and labels but points scanned before
        // their box's sector cannot join it.
        let stateful = run_scene(&scene, &cfg, &Heads::Oracle, FusionMode::Stateful).unwrap();
        let r = evaluate(&stateful.predictions, &scene, MetricSet::ALL).unwrap();
        assert_eq!(
            stateful
                .predictions
                .sweeps
                .iter()
                .map(|s| &s.boxes)
                .collect::<Vec<_>>(),
            global
                .predictions
                .sweeps
                .iter()
                .map(|s| &s.boxes)
                .collect::<Vec<_>>()
        );
        assert!((r.segmentation.unwrap().miou - 1.0).abs() < 1e-9, "{ctx}");
        let pq = r.panoptic.unwrap().pq;
        assert!(pq <= 1.0 + 1e-12 && pq > 0.5, "{ctx}: stateful PQ {pq}");
        if n == 1 {
            assert!((pq - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn cartesian_heatmap_oracle_finds_every_object() {
    let scene = generate(&spec(10)).unwrap();
    let cfg = PipelineConfig {
        sectors: 4,
        heatmap: HeatmapKind::Cartesian,
        ..Default::default()
    };
    let out = run_scene(&scene, &cfg, &Heads::Oracle, FusionMode::Global).unwrap();
    assert_eq!(out.predictions.heatmap_grid, "cartesian");
    let r = evaluate(&out.predictions, &scene, MetricSet::ALL).unwrap();
    let det = r.detection.unwrap();
    assert!((det.mean_ap - 1.0).abs() < 1e-9);
    assert!((r.segmentation.unwrap().miou - 1.0).abs() < 1e-9);
}
