//! Rotated BEV IoU, greedy NMS, stateful NMS across the sectors of a sweep,
//! and panoptic fusion of boxes with point labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LidarPoint, SectorSpec};
use crate::heads::{is_thing, DecodedBox, GtBox};

type Pt = (f64, f64);

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn polygon_area(poly: &[Pt]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let s: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    0.5 * s.abs()
}

/// Clips `subject` against every edge of the counter-clockwise convex
/// polygon `clip`.
fn clip_polygon(subject: &[Pt], clip: &[Pt]) -> Vec<Pt> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (dp, dq) = (cross(a, b, p), cross(a, b, q));
            if dp >= 0.0 {
                out.push(p);
            }
            if (dp >= 0.0) != (dq >= 0.0) {
                let t = dp / (dp - dq);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
    }
    out
}

/// BEV IoU of two yaw-rotated rectangles.
pub fn rotated_iou(a: &GtBox, b: &GtBox) -> f64 {
    let (area_a, area_b) = (a.l * a.w, b.l * b.w);
    if area_a <= 0.0 || area_b <= 0.0 {
        return 0.0;
    }
    let reach = a.half_diagonal() + b.half_diagonal();
    if (a.x - b.x).hypot(a.y - b.y) > reach {
        return 0.0;
    }
    let inter = polygon_area(&clip_polygon(&a.corners(), &b.corners()));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub iou_threshold: f64,
    pub per_class: bool,
    pub max_kept: usize,
    pub score_threshold: f64,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            per_class: true,
            max_kept: 83,
            score_threshold: 0.1,
        }
    }
}

impl NmsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("iou threshold", self.iou_threshold),
            ("score threshold", self.score_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }

    fn conflicts(&self, a: &DecodedBox, b: &DecodedBox) -> bool {
        (!self.per_class || a.bbox.class == b.bbox.class)
            && rotated_iou(&a.bbox, &b.bbox) > self.iou_threshold
    }
}

/// Indices of candidates above the score threshold, by descending score
/// with ties in input order.
fn score_order(boxes: &[DecodedBox], cfg: &NmsConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len())
        .filter(|&i| boxes[i].score >= cfg.score_threshold)
        .collect();
    order.sort_by(|&i, &j| boxes[j].score.total_cmp(&boxes[i].score));
    order
}

/// Greedy suppression against `prior` boxes and boxes kept earlier in
/// the same call; returns indices into `boxes` in keep order.
fn greedy(
    boxes: &[DecodedBox],
    prior: &[DecodedBox],
    budget: usize,
    cfg: &NmsConfig,
) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(boxes, cfg) {
        if kept.len() >= budget {
            break;
        }
        let b = &boxes[i];
        if prior.iter().any(|p| cfg.conflicts(p, b))
            || kept.iter().any(|&k| cfg.conflicts(&boxes[k], b))
        {
            continue;
        }
        kept.push(i);
    }
    kept
}

/// Indices of boxes kept by greedy NMS, in keep order.
pub fn nms_indices(boxes: &[DecodedBox], cfg: &NmsConfig) -> Vec<usize> {
    greedy(boxes, &[], cfg.max_kept, cfg)
}

pub fn nms(boxes: &[DecodedBox], cfg: &NmsConfig) -> Vec<DecodedBox> {
    nms_indices(boxes, cfg)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

/// Boxes kept so far in the sweep in progress.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NmsState {
    cursor: Option<(u64, usize, usize)>,
    kept: Vec<DecodedBox>,
}

impl NmsState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn kept(&self) -> &[DecodedBox] {
        &self.kept
    }

    /// Advances to `spec`, clearing the kept boxes when it starts a sweep.
    fn advance(&mut self, spec: &SectorSpec) -> Result<()> {
        let ok = match self.cursor {
            None => spec.index == 0,
            Some((sweep, index, n)) => {
                n == spec.n
                    && ((spec.sweep_id == sweep && spec.index == index + 1)
                        || (spec.sweep_id > sweep && spec.index == 0 && index + 1 == n))
            }
        };
        if !ok {
            return Err(Error::StreamOrder(format!(
                "sector ({}, {}/{}) cannot follow {:?}",
                spec.sweep_id, spec.index, spec.n, self.cursor
            )));
        }
        if spec.index == 0 {
            self.kept.clear();
        }
        self.cursor = Some((spec.sweep_id, spec.index, spec.n));
        Ok(())
    }
}

/// Greedy NMS over one sector's boxes where boxes kept by earlier sectors
/// of the same sweep also suppress. The kept-box cap applies to the sweep.
pub fn stateful_nms(
    boxes: &[DecodedBox],
    spec: &SectorSpec,
    state: &mut NmsState,
    cfg: &NmsConfig,
) -> Result<Vec<DecodedBox>> {
    state.advance(spec)?;
    let budget = cfg.max_kept.saturating_sub(state.kept.len());
    let kept: Vec<DecodedBox> = greedy(boxes, &state.kept, budget, cfg)
        .into_iter()
        .map(|i| boxes[i])
        .collect();
    state.kept.extend_from_slice(&kept);
    Ok(kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Global,
    Stateful,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "stateful" => Ok(Self::Stateful),
            other => Err(Error::config(format!("unknown fusion mode '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanopticConfig {
    pub mode: FusionMode,
    pub score_threshold: f64,
}

impl Default for PanopticConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::Global,
            score_threshold: 0.3,
        }
    }
}

/// Instance id of each point: the id of the nearest same-class box centre
/// (lowest id on exact ties), 0 for stuff points and thing points with no
/// candidate. `boxes[k]` carries id `ids[k]`.
pub fn assign_instances(
    points: &[LidarPoint],
    semantic: &[u16],
    boxes: &[GtBox],
    ids: &[u32],
) -> Result<Vec<u32>> {
    if points.len() != semantic.len() {
        return Err(Error::shape(
            "panoptic labels",
            points.len(),
            semantic.len(),
        ));
    }
    if boxes.len() != ids.len() {
        return Err(Error::shape("panoptic ids", boxes.len(), ids.len()));
    }
    Ok(points
        .iter()
        .zip(semantic)
        .map(|(p, &label)| {
            if !is_thing(label) {
                return 0;
            }
            let mut best: Option<(f64, u32)> = None;
            for (b, &id) in boxes.iter().zip(ids) {
                if b.class != label as usize {
                    continue;
                }
                let d = (p.x - b.x).powi(2) + (p.y - b.y).powi(2);
                let better = match best {
                    None => true,
                    Some((bd, bid)) => d < bd || (d == bd && id < bid),
                };
                if better {
                    best = Some((d, id));
                }
            }
            best.map_or(0, |(_, id)| id)
        })
        .collect())
}

/// Boxes above the fusion threshold in canonical order `(sector, -score,
/// class, x, y)`, so ids do not depend on arrival order.
pub fn fusion_order(boxes: &[DecodedBox], score_threshold: f64) -> Vec<DecodedBox> {
    let mut v: Vec<DecodedBox> = boxes
        .iter()
        .filter(|b| b.score >= score_threshold)
        .copied()
        .collect();
    v.sort_by(|a, b| {
        a.sector
            .cmp(&b.sector)
            .then(b.score.total_cmp(&a.score))
            .then(a.bbox.class.cmp(&b.bbox.class))
            .then(a.bbox.x.total_cmp(&b.bbox.x))
            .then(a.bbox.y.total_cmp(&b.bbox.y))
    });
    v
}

/// Global fusion: all boxes of the sweep are known. Box of rank `k` in
/// [`fusion_order`] gets id `k + 1`.
pub fn panoptic_fuse(
    points: &[LidarPoint],
    semantic: &[u16],
    boxes: &[DecodedBox],
    cfg: &PanopticConfig,
) -> Result<Vec<u32>> {
    let ordered = fusion_order(boxes, cfg.score_threshold);
    let gt: Vec<GtBox> = ordered.iter().map(|b| b.bbox).collect();
    let ids: Vec<u32> = (1..=gt.len() as u32).collect();
    assign_instances(points, semantic, &gt, &ids)
}

/// Stateful fusion: each sector's points only see boxes that arrived up to
/// and including that sector. Ids follow arrival order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatefulFusion {
    cursor: Option<(u64, usize, usize)>,
    boxes: Vec<GtBox>,
    ids: Vec<u32>,
}

impl StatefulFusion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn fuse_sector(
        &mut self,
        spec: &SectorSpec,
        boxes: &[DecodedBox],
        points: &[LidarPoint],
        semantic: &[u16],
        cfg: &PanopticConfig,
    ) -> Result<Vec<u32>> {
        let mut nms_like = NmsState {
            cursor: self.cursor,
            kept: Vec::new(),
        };
        nms_like.advance(spec)?;
        self.cursor = nms_like.cursor;
        if spec.index == 0 {
            self.boxes.clear();
            self.ids.clear();
        }
        for b in fusion_order(boxes, cfg.score_threshold) {
            self.boxes.push(b.bbox);
            self.ids.push(self.ids.len() as u32 + 1);
        }
        assign_instances(points, semantic, &self.boxes, &self.ids)
    }
}
