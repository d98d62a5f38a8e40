//! Centre-heatmap target assignment and decoding on polar grids, point-wise
//! segmentation from logits, and the reference network forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    polar_cart, wrap_angle, CartesianGridSpec, CellIndex, LidarPoint, PolarGridSpec, RigidMotion2D,
    SectorSpec,
};
use crate::stream::to_sector_frame;
use crate::tensor::FeatureMap;

pub mod network;

pub use network::{
    forward_backbone, pad_layers, BackboneOutputs, NetConfig, NetOutputs, ReferenceNet, ThetaPad,
    ZeroPad, PAD_LAYERS,
};

/// Detection (thing) classes.
pub const THING_CLASSES: usize = 10;
/// All semantic classes; ids `THING_CLASSES..SEG_CLASSES` are stuff.
pub const SEG_CLASSES: usize = 16;
/// Label of points outside the grid or excluded from evaluation.
pub const IGNORE_LABEL: u16 = 255;
/// Channels of the regression map: d_x, d_y, log l, log w, log h, z,
/// cos φ_rel, sin φ_rel, v_rel_x, v_rel_y.
pub const REG_CHANNELS: usize = 10;

pub fn is_thing(label: u16) -> bool {
    (label as usize) < THING_CLASSES
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtBox {
    pub class: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub yaw: f64,
    pub vx: f64,
    pub vy: f64,
}

impl GtBox {
    /// BEV corners, counter-clockwise.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.l / 2.0, self.w / 2.0);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
            .map(|(a, b)| (self.x + c * a - s * b, self.y + s * a + c * b))
    }

    /// Half of the BEV diagonal.
    pub fn half_diagonal(&self) -> f64 {
        0.5 * self.l.hypot(self.w)
    }

    /// The box after a planar rigid motion.
    pub fn transformed(&self, m: &RigidMotion2D) -> Self {
        let (x, y) = m.apply(self.x, self.y);
        let (vx, vy) = m.rotate(self.vx, self.vy);
        Self {
            x,
            y,
            vx,
            vy,
            yaw: wrap_angle(self.yaw + m.yaw),
            ..*self
        }
    }

    /// Whether `(x, y, z)` lies inside the box, up to `tol`.
    pub fn contains(&self, x: f64, y: f64, z: f64, tol: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (dx, dy) = (x - self.x, y - self.y);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        u.abs() <= self.l / 2.0 + tol
            && v.abs() <= self.w / 2.0 + tol
            && (z - self.z).abs() <= self.h / 2.0 + tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedBox {
    #[serde(flatten)]
    pub bbox: GtBox,
    pub score: f64,
    pub sector: usize,
}

/// CenterNet radius for an object `height x width` cells large.
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    let (a1, b1) = (1.0, height + width);
    let c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + (b1 * b1 - 4.0 * a1 * c1).sqrt()) / 2.0;
    let (a2, b2) = (4.0, 2.0 * (height + width));
    let c2 = (1.0 - min_overlap) * width * height;
    let r2 = (b2 + (b2 * b2 - 4.0 * a2 * c2).sqrt()) / 2.0;
    let (a3, b3) = (4.0 * min_overlap, -2.0 * min_overlap * (height + width));
    let c3 = (min_overlap - 1.0) * width * height;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / 2.0;
    r1.min(r2).min(r3)
}

pub const MIN_OVERLAP: f64 = 0.1;
pub const MIN_RADIUS: usize = 2;

/// Range and azimuth extent of the box corners, in cells. Azimuths are
/// unwrapped around the centre's.
pub fn polar_spans(b: &GtBox, grid: &PolarGridSpec) -> (f64, f64) {
    let (_, tc) = grid.polar_of(b.x, b.y);
    let (mut rlo, mut rhi, mut tlo, mut thi) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (x, y) in b.corners() {
        let r = x.hypot(y);
        let dt = wrap_angle(y.atan2(x) - tc);
        rlo = rlo.min(r);
        rhi = rhi.max(r);
        tlo = tlo.min(dt);
        thi = thi.max(dt);
    }
    (
        (rhi - rlo) / grid.delta_r(),
        (thi - tlo) / grid.delta_theta(),
    )
}

pub fn gaussian_radius_polar(b: &GtBox, grid: &PolarGridSpec) -> Result<usize> {
    let (r, t) = grid.polar_of(b.x, b.y);
    if grid.bin_polar(r, t).is_err() {
        return Err(Error::config(format!(
            "box centre ({}, {}) is outside the grid",
            b.x, b.y
        )));
    }
    let (h, w) = polar_spans(b, grid);
    Ok((gaussian_radius(h, w, MIN_OVERLAP).floor() as usize).max(MIN_RADIUS))
}

/// Unnormalised gaussian with peak 1 at `center`, merged by elementwise max.
pub fn draw_gaussian(map: &mut FeatureMap, channel: usize, center: CellIndex, radius: usize) {
    let sigma = (2 * radius + 1) as f64 / 6.0;
    let rad = radius as isize;
    for di in -rad..=rad {
        for dj in -rad..=rad {
            let (i, j) = (center.row as isize + di, center.col as isize + dj);
            if i < 0 || j < 0 || i >= map.h() as isize || j >= map.w() as isize {
                continue;
            }
            let g = (-((di * di + dj * dj) as f64) / (2.0 * sigma * sigma)).exp();
            if g < f64::EPSILON {
                continue;
            }
            let (i, j) = (i as usize, j as usize);
            let v = map.get(i, j, channel).max(g as f32);
            map.set(i, j, channel, v);
        }
    }
}

/// Training targets of one sector.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    /// `H x W x THING_CLASSES`.
    pub heatmap: FeatureMap,
    /// `H x W x REG_CHANNELS`, valid where `mask` is set.
    pub reg: FeatureMap,
    pub mask: Vec<bool>,
    /// `(box index, class, cell)` of every assigned box.
    pub peaks: Vec<(usize, usize, CellIndex)>,
}

/// Box centre in the sector frame with its cell, or `None` outside the
/// sector.
fn box_in_sector(b: &GtBox, full: &PolarGridSpec, spec: &SectorSpec) -> Option<(GtBox, CellIndex)> {
    let p = LidarPoint::new(b.x, b.y, b.z, 0.0, 0.0);
    let (_, cell) = to_sector_frame(full, spec, &p)?;
    Some((b.transformed(&spec.to_sweep_frame().inverse()), cell))
}

/// Splats a gaussian per box whose centre falls in the sector and writes the
/// regression targets at its centre cell. Boxes are given in the sweep frame.
pub fn assign_targets(boxes: &[GtBox], full: &PolarGridSpec, spec: &SectorSpec) -> Result<Targets> {
    let grid = spec.grid(full)?;
    let (h, w) = (grid.n_r(), grid.n_theta());
    let mut t = Targets {
        heatmap: FeatureMap::zeros(h, w, THING_CLASSES),
        reg: FeatureMap::zeros(h, w, REG_CHANNELS),
        mask: vec![false; h * w],
        peaks: Vec::new(),
    };
    for (k, b) in boxes.iter().enumerate() {
        if b.class >= THING_CLASSES {
            return Err(Error::config(format!(
                "box class {} is not a thing class",
                b.class
            )));
        }
        let Some((local, cell)) = box_in_sector(b, full, spec) else {
            continue;
        };
        let radius = gaussian_radius_polar(b, full)?;
        draw_gaussian(&mut t.heatmap, b.class, cell, radius);
        let (xc, yc) = grid.cell_center_xy(cell);
        let (_, tc) = grid.cell_center(cell);
        let phi = wrap_angle(local.yaw - tc);
        let (vx, vy) = RigidMotion2D::new(-tc, 0.0, 0.0).rotate(local.vx, local.vy);
        let values = [
            local.x - xc,
            local.y - yc,
            local.l.ln(),
            local.w.ln(),
            local.h.ln(),
            local.z,
            phi.cos(),
            phi.sin(),
            vx,
            vy,
        ];
        for (ch, v) in values.iter().enumerate() {
            t.reg.set(cell.row, cell.col, ch, *v as f32);
        }
        t.mask[cell.row * w + cell.col] = true;
        t.peaks.push((k, b.class, cell));
    }
    Ok(t)
}

/// Grid the classification heatmap lives on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HeatmapGrid {
    /// Same cells as the regression maps.
    Polar,
    /// Undistorted cartesian grid; regression values are gathered from the
    /// polar cell containing each peak's centre.
    Cartesian(CartesianGridSpec),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodeConfig {
    pub topk: usize,
    pub score_thresh: f32,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            topk: 1000,
            score_thresh: 0.1,
        }
    }
}

fn is_local_max(map: &FeatureMap, i: usize, j: usize, ch: usize) -> bool {
    let v = map.get(i, j, ch);
    for ii in i.saturating_sub(1)..=(i + 1).min(map.h() - 1) {
        for jj in j.saturating_sub(1)..=(j + 1).min(map.w() - 1) {
            if map.get(ii, jj, ch) > v {
                return false;
            }
        }
    }
    true
}

/// Peaks of `heatmap` (scores in `[0, 1]`) turned into boxes in the sweep
/// frame.
pub fn decode(
    heatmap: &FeatureMap,
    reg: &FeatureMap,
    full: &PolarGridSpec,
    spec: &SectorSpec,
    heat_grid: &HeatmapGrid,
    cfg: &DecodeConfig,
) -> Result<Vec<DecodedBox>> {
    let grid = spec.grid(full)?;
    if (reg.h(), reg.w(), reg.c()) != (grid.n_r(), grid.n_theta(), REG_CHANNELS) {
        return Err(Error::shape(
            "decode regression map",
            format!("{} x {} x {REG_CHANNELS}", grid.n_r(), grid.n_theta()),
            format!("{:?}", reg.shape()),
        ));
    }
    let expect = match heat_grid {
        HeatmapGrid::Polar => (grid.n_r(), grid.n_theta()),
        HeatmapGrid::Cartesian(c) => (c.n_x, c.n_y),
    };
    if (heatmap.h(), heatmap.w()) != expect || heatmap.c() != THING_CLASSES {
        return Err(Error::shape(
            "decode heatmap",
            format!("{} x {} x {THING_CLASSES}", expect.0, expect.1),
            format!("{:?}", heatmap.shape()),
        ));
    }
    let mut peaks = Vec::new();
    for i in 0..heatmap.h() {
        for j in 0..heatmap.w() {
            for ch in 0..THING_CLASSES {
                let v = heatmap.get(i, j, ch);
                if v >= cfg.score_thresh && is_local_max(heatmap, i, j, ch) {
                    peaks.push((v, ch, i, j));
                }
            }
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
    peaks.truncate(cfg.topk);
    let to_sweep = spec.to_sweep_frame();
    let mut out = Vec::with_capacity(peaks.len());
    for (score, class, i, j) in peaks {
        let cell = match heat_grid {
            HeatmapGrid::Polar => CellIndex::new(i, j),
            HeatmapGrid::Cartesian(c) => {
                let (x, y) = c.cell_center_xy(CellIndex::new(i, j));
                let (r, t) = grid.polar_of(x, y);
                match grid.bin_polar(r, t) {
                    Ok(cell) => cell,
                    Err(_) => continue,
                }
            }
        };
        let v = reg.pixel(cell.row, cell.col);
        let (xc, yc) = grid.cell_center_xy(cell);
        let (_, tc) = grid.cell_center(cell);
        let phi = (v[7] as f64).atan2(v[6] as f64) + tc;
        let (vx, vy) = RigidMotion2D::new(tc, 0.0, 0.0).rotate(v[8] as f64, v[9] as f64);
        let local = GtBox {
            class,
            x: xc + v[0] as f64,
            y: yc + v[1] as f64,
            z: v[5] as f64,
            l: (v[2] as f64).exp(),
            w: (v[3] as f64).exp(),
            h: (v[4] as f64).exp(),
            yaw: wrap_angle(phi),
            vx,
            vy,
        };
        out.push(DecodedBox {
            bbox: local.transformed(&to_sweep),
            score: score as f64,
            sector: spec.index,
        });
    }
    Ok(out)
}

/// Argmax class of each point's cell; points outside the grid get
/// [`IGNORE_LABEL`]. Points must be in the grid's frame.
pub fn segment_points(
    seg_logits: &FeatureMap,
    points: &[LidarPoint],
    grid: &PolarGridSpec,
) -> Result<Vec<u16>> {
    if (seg_logits.h(), seg_logits.w()) != (grid.n_r(), grid.n_theta()) {
        return Err(Error::shape(
            "segment_points",
            format!("{} x {}", grid.n_r(), grid.n_theta()),
            format!("{} x {}", seg_logits.h(), seg_logits.w()),
        ));
    }
    Ok(points
        .iter()
        .map(|p| match grid.bin(p) {
            Ok(cell) => argmax(seg_logits.pixel(cell.row, cell.col)) as u16,
            Err(_) => IGNORE_LABEL,
        })
        .collect())
}

/// First index of the largest value.
fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One-hot logits holding each cell's most frequent label (lowest class on
/// ties). Labels of [`IGNORE_LABEL`] do not vote.
pub fn majority_logits(
    points: &[LidarPoint],
    labels: &[u16],
    grid: &PolarGridSpec,
) -> Result<FeatureMap> {
    if points.len() != labels.len() {
        return Err(Error::shape(
            "majority_logits labels",
            points.len(),
            labels.len(),
        ));
    }
    let mut votes = vec![0u32; grid.n_r() * grid.n_theta() * SEG_CLASSES];
    for (p, &l) in points.iter().zip(labels) {
        if (l as usize) >= SEG_CLASSES {
            continue;
        }
        if let Ok(c) = grid.bin(p) {
            votes[(c.row * grid.n_theta() + c.col) * SEG_CLASSES + l as usize] += 1;
        }
    }
    let mut out = FeatureMap::zeros(grid.n_r(), grid.n_theta(), SEG_CLASSES);
    for (cell, v) in votes.chunks_exact(SEG_CLASSES).enumerate() {
        let best = (0..SEG_CLASSES).fold(0, |b, k| if v[k] > v[b] { k } else { b });
        if v[best] > 0 {
            out.data_mut()[cell * SEG_CLASSES + best] = 1.0;
        }
    }
    Ok(out)
}

/// Cartesian image of a polar cell centre; handy for tests and oracles.
pub fn cell_center_xy(grid: &PolarGridSpec, cell: CellIndex) -> (f64, f64) {
    let (r, t) = grid.cell_center(cell);
    polar_cart(r, t)
}
