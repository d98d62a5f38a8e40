//! Deterministic synthetic scenes: moving boxes sampled on their faces over
//! a ground plane split into stuff patches, seen from an ego vehicle on a
//! unicycle trajectory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{self, PointLabel};
use crate::geometry::{
    polar_cart, wrap_angle, CellIndex, LidarPoint, PolarGridSpec, RigidMotion2D,
};
use crate::heads::{assign_targets, majority_logits, GtBox, NetOutputs, THING_CLASSES};
use crate::rng::SeededRng;
use crate::stream::{Sector, Sweep};

pub const GROUND_Z: f64 = -1.8;
/// Rows and columns per stuff patch of the full-sweep grid.
pub const STUFF_PATCH: usize = 64;
pub const STUFF_CLASSES: usize = 6;

/// Mean `(l, w, h)` and top speed of each thing class.
pub const CLASS_PRIORS: [([f64; 3], f64); THING_CLASSES] = [
    ([4.6, 1.9, 1.7], 10.0),
    ([6.9, 2.5, 2.9], 8.0),
    ([6.4, 2.8, 3.2], 2.0),
    ([11.0, 2.9, 3.5], 8.0),
    ([12.0, 2.9, 3.9], 6.0),
    ([0.5, 2.5, 1.0], 0.0),
    ([2.1, 0.8, 1.5], 8.0),
    ([1.7, 0.6, 1.3], 5.0),
    ([0.7, 0.7, 1.8], 1.5),
    ([0.4, 0.4, 1.0], 0.0),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub sweeps: usize,
    pub boxes_min: usize,
    pub boxes_max: usize,
    pub points_per_box: usize,
    /// Ground points per square metre of the annulus.
    pub ground_density: f64,
    pub ego_speed: f64,
    pub ego_yaw_rate: f64,
    pub sweep_period_s: f64,
    /// Placement attempts per box before giving up.
    pub max_retries: usize,
    #[serde(skip, default)]
    pub grid: PolarGridSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            sweeps: 4,
            boxes_min: 8,
            boxes_max: 16,
            points_per_box: 80,
            ground_density: 0.5,
            ego_speed: 5.0,
            ego_yaw_rate: 0.1,
            sweep_period_s: 0.05,
            max_retries: 2000,
            grid: PolarGridSpec::full_sweep(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 {
            return Err(Error::config("a scene needs at least one sweep"));
        }
        if self.boxes_min > self.boxes_max {
            return Err(Error::config("boxes_min exceeds boxes_max"));
        }
        for (name, v) in [
            ("ground_density", self.ground_density),
            ("ego_speed", self.ego_speed),
            ("sweep_period_s", self.sweep_period_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "{name} must be a finite non-negative number"
                )));
            }
        }
        if !self.ego_yaw_rate.is_finite() {
            return Err(Error::config("ego_yaw_rate must be finite"));
        }
        Ok(())
    }
}

/// An object in the world frame at sweep 0, moving with constant velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Object {
    world: GtBox,
}

impl Object {
    fn at(&self, t: f64) -> GtBox {
        GtBox {
            x: self.world.x + self.world.vx * t,
            y: self.world.y + self.world.vy * t,
            ..self.world
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    /// Points of each sweep in its own ego frame, `dt = 0`.
    pub sweeps: Vec<Sweep>,
    pub labels: Vec<Vec<PointLabel>>,
    /// GT boxes of each sweep in its ego frame; box `k` has instance `k + 1`.
    pub boxes: Vec<Vec<GtBox>>,
}

/// Ego pose (world <- ego) after `k` sweeps.
fn ego_pose(spec: &SceneSpec, k: usize) -> RigidMotion2D {
    let dt = spec.sweep_period_s;
    let (mut x, mut y, mut yaw) = (0.0, 0.0, 0.0f64);
    for _ in 0..k {
        x += spec.ego_speed * yaw.cos() * dt;
        y += spec.ego_speed * yaw.sin() * dt;
        yaw += spec.ego_yaw_rate * dt;
    }
    RigidMotion2D::new(wrap_angle(yaw), x, y)
}

fn in_annulus(b: &GtBox, grid: &PolarGridSpec) -> bool {
    let r = b.x.hypot(b.y);
    let d = b.half_diagonal();
    r - d >= grid.r_min() + 1.0 && r + d <= grid.r_max() - 0.5
}

fn separated(a: &GtBox, b: &GtBox) -> bool {
    let dist = (a.x - b.x).hypot(a.y - b.y);
    let (da, db) = (a.half_diagonal(), b.half_diagonal());
    dist > da + db + 1.0 && (a.class != b.class || dist > 2.0 * da.max(db) + 0.5)
}

fn sample_object(spec: &SceneSpec, rng: &mut SeededRng) -> Object {
    let class = rng.below(THING_CLASSES);
    let ([l, w, h], vmax) = CLASS_PRIORS[class];
    let jitter = |rng: &mut SeededRng, v: f64| v * rng.uniform(0.9, 1.1);
    let (l, w, h) = (jitter(rng, l), jitter(rng, w), jitter(rng, h));
    let grid = &spec.grid;
    let r = rng.uniform(grid.r_min(), grid.r_max());
    let t = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
    let (x, y) = polar_cart(r, t);
    let yaw = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
    let speed = rng.uniform(0.0, vmax);
    Object {
        world: GtBox {
            class,
            x,
            y,
            z: GROUND_Z + h / 2.0,
            l,
            w,
            h,
            yaw,
            vx: speed * yaw.cos(),
            vy: speed * yaw.sin(),
        },
    }
}

/// Uniform point on the four side faces and the top of `b`, area weighted.
fn surface_point(b: &GtBox, rng: &mut SeededRng) -> (f64, f64, f64) {
    let (l, w, h) = (b.l, b.w, b.h);
    let areas = [l * h, l * h, w * h, w * h, l * w];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.uniform(0.0, total);
    let mut face = 0;
    while face < 4 && pick >= areas[face] {
        pick -= areas[face];
        face += 1;
    }
    let (u, v) = (rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    let (lx, ly, lz) = match face {
        0 => (u * l, w / 2.0, v * h),
        1 => (u * l, -w / 2.0, v * h),
        2 => (l / 2.0, u * w, v * h),
        3 => (-l / 2.0, u * w, v * h),
        _ => (u * l, v * w, h / 2.0),
    };
    let (s, c) = b.yaw.sin_cos();
    (b.x + c * lx - s * ly, b.y + s * lx + c * ly, b.z + lz)
}

/// Stuff class of a full-sweep cell.
pub fn stuff_class(cell: CellIndex) -> u16 {
    (THING_CLASSES + (cell.row / STUFF_PATCH + cell.col / STUFF_PATCH) % STUFF_CLASSES) as u16
}

/// Places objects that satisfy annulus and separation rules in every sweep.
fn place_objects(spec: &SceneSpec, rng: &mut SeededRng) -> Result<Vec<Object>> {
    let count = rng.range_inclusive(spec.boxes_min, spec.boxes_max);
    let poses: Vec<RigidMotion2D> = (0..spec.sweeps).map(|k| ego_pose(spec, k)).collect();
    let to_ego = |o: &Object, k: usize| {
        o.at(k as f64 * spec.sweep_period_s)
            .transformed(&poses[k].inverse())
    };
    let mut placed: Vec<Object> = Vec::with_capacity(count);
    for n in 0..count {
        let mut ok = None;
        for _ in 0..spec.max_retries.max(1) {
            let cand = sample_object(spec, rng);
            let fits = (0..spec.sweeps).all(|k| {
                let b = to_ego(&cand, k);
                in_annulus(&b, &spec.grid) && placed.iter().all(|p| separated(&b, &to_ego(p, k)))
            });
            if fits {
                ok = Some(cand);
                break;
            }
        }
        match ok {
            Some(o) => placed.push(o),
            None => {
                return Err(Error::Infeasible(format!(
                    "could not place box {} of {count} after {} attempts",
                    n + 1,
                    spec.max_retries
                )))
            }
        }
    }
    Ok(placed)
}

pub fn generate(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let grid = spec.grid;
    let mut rng = SeededRng::new(spec.seed);
    let objects = place_objects(spec, &mut rng)?;
    let area = std::f64::consts::PI * (grid.r_max().powi(2) - grid.r_min().powi(2));
    let ground_count = (spec.ground_density * area).round() as usize;
    let mut scene = SynthScene {
        sweeps: Vec::with_capacity(spec.sweeps),
        labels: Vec::with_capacity(spec.sweeps),
        boxes: Vec::with_capacity(spec.sweeps),
    };
    for k in 0..spec.sweeps {
        let pose = ego_pose(spec, k);
        let to_ego = pose.inverse();
        let boxes: Vec<GtBox> = objects
            .iter()
            .map(|o| o.at(k as f64 * spec.sweep_period_s).transformed(&to_ego))
            .collect();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut occupied = BTreeSet::new();
        for (id, b) in boxes.iter().enumerate() {
            for _ in 0..spec.points_per_box {
                let (x, y, z) = surface_point(b, &mut rng);
                let p = LidarPoint::new(x, y, z, rng.unit(), 0.0);
                if let Ok(cell) = grid.bin(&p) {
                    occupied.insert(cell);
                }
                points.push(p);
                labels.push(PointLabel {
                    semantic: b.class as u16,
                    instance: id as u32 + 1,
                });
            }
        }
        for _ in 0..ground_count {
            let r = rng
                .uniform(grid.r_min().powi(2), grid.r_max().powi(2))
                .sqrt();
            let t = rng.uniform(-std::f64::consts::PI, std::f64::consts::PI);
            let (x, y) = polar_cart(r, t);
            let p = LidarPoint::new(x, y, GROUND_Z, rng.unit(), 0.0);
            let Ok(cell) = grid.bin(&p) else { continue };
            if occupied.contains(&cell) {
                continue;
            }
            points.push(p);
            labels.push(PointLabel {
                semantic: stuff_class(cell),
                instance: 0,
            });
        }
        scene.sweeps.push(Sweep {
            id: k as u64,
            points,
            ego_pose: pose,
        });
        scene.labels.push(labels);
        scene.boxes.push(boxes);
    }
    Ok(scene)
}

/// Perfect head outputs for one sector: the assigned heatmap and regression
/// targets plus per-cell majority-vote segmentation logits. `labels` are
/// the sweep's point labels, indexed through the sector's source indices.
pub fn oracle_outputs(
    sector: &Sector,
    labels: &[PointLabel],
    boxes: &[GtBox],
    full: &PolarGridSpec,
) -> Result<NetOutputs> {
    let grid = sector.spec.grid(full)?;
    let targets = assign_targets(boxes, full, &sector.spec)?;
    let sector_labels: Vec<u16> = sector
        .source_indices
        .iter()
        .map(|&i| {
            labels
                .get(i)
                .map(|l| l.semantic)
                .ok_or_else(|| Error::shape("oracle labels", format!("> {i}"), labels.len()))
        })
        .collect::<Result<_>>()?;
    Ok(NetOutputs {
        heatmap: targets.heatmap,
        reg: targets.reg,
        seg: majority_logits(&sector.points, &sector_labels, &grid)?,
    })
}

/// Writes per-sweep point and label files, GT boxes and ego poses.
pub fn write_scene(dir: &Path, scene: &SynthScene) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut gt = BTreeMap::new();
    let mut poses = BTreeMap::new();
    for ((sweep, labels), boxes) in scene.sweeps.iter().zip(&scene.labels).zip(&scene.boxes) {
        let mut w = formats::create(&dir.join(formats::sweep_points_name(sweep.id)))?;
        formats::write_pspc(&mut w, &sweep.points)?;
        std::io::Write::flush(&mut w)?;
        let mut w = formats::create(&dir.join(formats::sweep_labels_name(sweep.id)))?;
        formats::write_pslb(&mut w, labels)?;
        std::io::Write::flush(&mut w)?;
        gt.insert(sweep.id, boxes.clone());
        poses.insert(sweep.id, sweep.ego_pose);
    }
    formats::write_gt_csv(formats::create(&dir.join(formats::GT_FILE))?, &gt)?;
    formats::write_poses_csv(formats::create(&dir.join(formats::POSES_FILE))?, &poses)?;
    Ok(())
}

/// Reads a scene directory written by [`write_scene`]. Sweeps follow the
/// pose file; sweeps without boxes get empty GT lists.
pub fn read_scene(dir: &Path) -> Result<SynthScene> {
    let poses = formats::read_poses_csv(formats::open(&dir.join(formats::POSES_FILE))?)?;
    let gt = formats::read_gt_csv(formats::open(&dir.join(formats::GT_FILE))?)?;
    let mut scene = SynthScene {
        sweeps: Vec::new(),
        labels: Vec::new(),
        boxes: Vec::new(),
    };
    for (&id, &pose) in &poses {
        let points = formats::read_pspc(&mut formats::open(
            &dir.join(formats::sweep_points_name(id)),
        )?)?;
        let labels = formats::read_pslb(&mut formats::open(
            &dir.join(formats::sweep_labels_name(id)),
        )?)?;
        if labels.len() != points.len() {
            return Err(Error::shape("scene labels", points.len(), labels.len()));
        }
        scene.sweeps.push(Sweep {
            id,
            points,
            ego_pose: pose,
        });
        scene.labels.push(labels);
        scene.boxes.push(gt.get(&id).cloned().unwrap_or_default());
    }
    if let Some(extra) = gt.keys().find(|k| !poses.contains_key(k)) {
        return Err(Error::format(
            "GT CSV",
            format!("boxes for unknown sweep {extra}"),
        ));
    }
    Ok(scene)
}
