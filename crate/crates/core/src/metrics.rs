//! Distance-threshold detection AP, semantic mIoU and panoptic quality.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{is_thing, DecodedBox, GtBox, IGNORE_LABEL, SEG_CLASSES, THING_CLASSES};

pub const DISTANCE_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
const RECALL_POINTS: usize = 101;

/// Mean of the best precision at recall >= r over 101 evenly spaced r.
pub fn interpolated_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let best = precision
            .iter()
            .zip(recall)
            .filter(|(_, &rc)| rc >= r - 1e-12)
            .map(|(&p, _)| p)
            .fold(0.0, f64::max);
        total += best;
    }
    total / RECALL_POINTS as f64
}

/// AP of one class at one distance threshold. Predictions are matched in
/// descending score order (ties by sweep then input order) to the nearest
/// unmatched same-class GT of their sweep within `threshold` metres.
/// Returns `None` when the class has no GT.
pub fn class_ap(
    preds: &[Vec<DecodedBox>],
    gts: &[Vec<GtBox>],
    class: usize,
    threshold: f64,
) -> Option<f64> {
    let n_gt: usize = gts
        .iter()
        .map(|g| g.iter().filter(|b| b.class == class).count())
        .sum();
    if n_gt == 0 {
        return None;
    }
    let mut cands: Vec<(usize, &DecodedBox)> = preds
        .iter()
        .enumerate()
        .flat_map(|(s, list)| list.iter().map(move |b| (s, b)))
        .filter(|(_, b)| b.bbox.class == class)
        .collect();
    cands.sort_by(|a, b| b.1.score.total_cmp(&a.1.score));
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut precision, mut recall) = (Vec::new(), Vec::new());
    for (s, p) in cands {
        let mut best: Option<(f64, usize)> = None;
        for (k, g) in gts
            .get(s)
            .map(Vec::as_slice)
            .unwrap_or(&[])
            .iter()
            .enumerate()
        {
            if g.class != class || taken[s][k] {
                continue;
            }
            let d = (g.x - p.bbox.x).hypot(g.y - p.bbox.y);
            if d <= threshold && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, k));
            }
        }
        match best {
            Some((_, k)) => {
                taken[s][k] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    Some(interpolated_ap(&precision, &recall))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub thresholds: Vec<f64>,
    /// `ap[class][threshold]`, `None` for classes without GT.
    pub ap: Vec<Vec<Option<f64>>>,
    pub mean_ap: f64,
    pub num_predictions: usize,
    pub num_gt: usize,
}

/// Per-sweep prediction and GT lists, aligned by position.
pub fn eval_detection(preds: &[Vec<DecodedBox>], gts: &[Vec<GtBox>]) -> Result<DetectionReport> {
    if preds.len() != gts.len() {
        return Err(Error::shape(
            "eval_detection sweeps",
            gts.len(),
            preds.len(),
        ));
    }
    let ap: Vec<Vec<Option<f64>>> = (0..THING_CLASSES)
        .map(|c| {
            DISTANCE_THRESHOLDS
                .iter()
                .map(|&t| class_ap(preds, gts, c, t))
                .collect()
        })
        .collect();
    let vals: Vec<f64> = ap.iter().flatten().flatten().copied().collect();
    let mean_ap = if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    Ok(DetectionReport {
        thresholds: DISTANCE_THRESHOLDS.to_vec(),
        ap,
        mean_ap,
        num_predictions: preds.iter().map(Vec::len).sum(),
        num_gt: gts.iter().map(Vec::len).sum(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    /// IoU per class, `None` for classes absent from GT.
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
    pub num_points: usize,
}

/// Confusion counts over points whose GT is not [`IGNORE_LABEL`]. A
/// prediction outside the class range counts only as a miss.
pub fn eval_segmentation(pred: &[u16], gt: &[u16]) -> Result<SegmentationReport> {
    if pred.len() != gt.len() {
        return Err(Error::shape(
            "eval_segmentation labels",
            gt.len(),
            pred.len(),
        ));
    }
    let k = SEG_CLASSES;
    let (mut tp, mut fp, mut fn_) = (vec![0u64; k], vec![0u64; k], vec![0u64; k]);
    let mut present = vec![false; k];
    let mut n = 0;
    for (&p, &g) in pred.iter().zip(gt) {
        if g == IGNORE_LABEL || g as usize >= k {
            continue;
        }
        n += 1;
        let g = g as usize;
        present[g] = true;
        if p as usize == g {
            tp[g] += 1;
        } else {
            fn_[g] += 1;
            if (p as usize) < k {
                fp[p as usize] += 1;
            }
        }
    }
    let iou: Vec<Option<f64>> = (0..k)
        .map(|c| present[c].then(|| tp[c] as f64 / (tp[c] + fp[c] + fn_[c]) as f64))
        .collect();
    let vals: Vec<f64> = iou.iter().flatten().copied().collect();
    let miou = if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    Ok(SegmentationReport {
        iou,
        miou,
        num_points: n,
    })
}

/// `(semantic class, instance id)` of one point.
pub type PanopticLabel = (u16, u32);

/// Segment key: thing segments are `(class, instance)`, stuff segments
/// `(class, 0)`. Void points have no segment.
fn segment_of(label: PanopticLabel) -> Option<(u16, u32)> {
    let (c, inst) = label;
    if c as usize >= SEG_CLASSES {
        None
    } else if is_thing(c) {
        (inst != 0).then_some((c, inst))
    } else {
        Some((c, 0))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanopticClass {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanopticReport {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    /// Per class, `None` when the class has no segment on either side.
    pub per_class: Vec<Option<PanopticClass>>,
}

#[derive(Clone, Copy, Debug, Default)]
struct ClassTally {
    iou_sum: f64,
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn tally_sweep(pred: &[PanopticLabel], gt: &[PanopticLabel], tally: &mut [ClassTally]) {
    let mut gt_size: BTreeMap<(u16, u32), usize> = BTreeMap::new();
    let mut pred_size: BTreeMap<(u16, u32), usize> = BTreeMap::new();
    let mut inter: BTreeMap<((u16, u32), (u16, u32)), usize> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(gt) {
        if g.0 == IGNORE_LABEL {
            continue;
        }
        let gs = segment_of(g);
        let ps = segment_of(p);
        if let Some(gs) = gs {
            *gt_size.entry(gs).or_default() += 1;
        }
        if let Some(ps) = ps {
            *pred_size.entry(ps).or_default() += 1;
        }
        if let (Some(gs), Some(ps)) = (gs, ps) {
            if gs.0 == ps.0 {
                *inter.entry((gs, ps)).or_default() += 1;
            }
        }
    }
    let mut matched_gt = std::collections::BTreeSet::new();
    let mut matched_pred = std::collections::BTreeSet::new();
    for (&(gs, ps), &i) in &inter {
        let union = gt_size[&gs] + pred_size[&ps] - i;
        let iou = i as f64 / union as f64;
        if iou > 0.5 {
            let t = &mut tally[gs.0 as usize];
            t.iou_sum += iou;
            t.tp += 1;
            matched_gt.insert(gs);
            matched_pred.insert(ps);
        }
    }
    for gs in gt_size.keys().filter(|s| !matched_gt.contains(*s)) {
        tally[gs.0 as usize].fn_ += 1;
    }
    for ps in pred_size.keys().filter(|s| !matched_pred.contains(*s)) {
        tally[ps.0 as usize].fp += 1;
    }
}

/// PQ, SQ and RQ accumulated over sweeps; `pred[s]` and `gt[s]` are the
/// per-point labels of sweep `s`. Means are over classes with at least one
/// segment.
pub fn eval_panoptic(
    pred: &[Vec<PanopticLabel>],
    gt: &[Vec<PanopticLabel>],
) -> Result<PanopticReport> {
    if pred.len() != gt.len() {
        return Err(Error::shape("eval_panoptic sweeps", gt.len(), pred.len()));
    }
    let mut tally = vec![ClassTally::default(); SEG_CLASSES];
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::shape("eval_panoptic points", g.len(), p.len()));
        }
        tally_sweep(p, g, &mut tally);
    }
    let per_class: Vec<Option<PanopticClass>> = tally
        .iter()
        .map(|t| {
            let denom = t.tp as f64 + 0.5 * t.fp as f64 + 0.5 * t.fn_ as f64;
            (denom > 0.0).then(|| {
                let sq = if t.tp > 0 {
                    t.iou_sum / t.tp as f64
                } else {
                    0.0
                };
                PanopticClass {
                    pq: t.iou_sum / denom,
                    sq,
                    rq: t.tp as f64 / denom,
                    tp: t.tp,
                    fp: t.fp,
                    fn_: t.fn_,
                }
            })
        })
        .collect();
    let present: Vec<&PanopticClass> = per_class.iter().flatten().collect();
    let mean = |f: fn(&PanopticClass) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64
        }
    };
    Ok(PanopticReport {
        pq: mean(|c| c.pq),
        sq: mean(|c| c.sq),
        rq: mean(|c| c.rq),
        per_class,
    })
}

/// Combined report; absent sections were not requested.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panoptic: Option<PanopticReport>,
    pub sweeps: usize,
}

/// Display names of the semantic classes by id.
pub fn class_names() -> BTreeMap<usize, &'static str> {
    [
        "car",
        "truck",
        "construction_vehicle",
        "bus",
        "trailer",
        "barrier",
        "motorcycle",
        "bicycle",
        "pedestrian",
        "traffic_cone",
        "driveable_surface",
        "other_flat",
        "sidewalk",
        "terrain",
        "manmade",
        "vegetation",
    ]
    .into_iter()
    .enumerate()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(class: usize, x: f64) -> GtBox {
        GtBox {
            class,
            x,
            y: 0.0,
            z: 0.0,
            l: 1.0,
            w: 1.0,
            h: 1.0,
            yaw: 0.0,
            vx: 0.0,
            vy: 0.0,
        }
    }

    fn pred(b: GtBox, score: f64) -> DecodedBox {
        DecodedBox {
            bbox: b,
            score,
            sector: 0,
        }
    }

    #[test]
    fn perfect_and_empty_detection() {
        let g = vec![vec![gt(0, 1.0), gt(3, 5.0)]];
        let p = vec![g[0].iter().map(|&b| pred(b, 1.0)).collect()];
        assert_eq!(eval_detection(&p, &g).unwrap().mean_ap, 1.0);
        assert_eq!(eval_detection(&[vec![]], &g).unwrap().mean_ap, 0.0);
    }

    #[test]
    fn hand_enumerated_pr_curve() {
        let g = vec![vec![gt(0, 0.0), gt(0, 10.0), gt(0, 20.0)]];
        let p = vec![vec![
            pred(gt(0, 0.0), 0.9),
            pred(gt(0, 10.0), 0.8),
            pred(gt(0, 23.0), 0.7),
        ]];
        let ap2 = class_ap(&p, &g, 0, 2.0).unwrap();
        let ap4 = class_ap(&p, &g, 0, 4.0).unwrap();
        assert!((ap2 - 67.0 / 101.0).abs() < 1e-12);
        assert_eq!(ap4, 1.0);
    }

    #[test]
    fn two_class_miou() {
        let gt: Vec<u16> = (0..100).map(|i| if i % 2 == 0 { 10 } else { 11 }).collect();
        let r = eval_segmentation(&vec![10; 100], &gt).unwrap();
        assert_eq!(r.iou[10], Some(0.5));
        assert_eq!(r.iou[11], Some(0.0));
        assert_eq!(r.miou, 0.25);
        assert!(eval_segmentation(&[1], &[]).is_err());
    }

    #[test]
    fn half_covered_instance_is_not_matched() {
        let g = vec![vec![(0u16, 1u32); 4]];
        let p = vec![vec![(0, 5), (0, 5), (0, 0), (0, 0)]];
        let r = eval_panoptic(&p, &g).unwrap();
        assert_eq!(r.pq, 0.0);
        let r = eval_panoptic(&g, &g).unwrap();
        assert_eq!((r.pq, r.sq, r.rq), (1.0, 1.0, 1.0));
    }
}
