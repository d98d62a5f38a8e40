//! Dynamic voxelisation into pillars, point decoration, a single-layer
//! max-pooling encoder and the scatter onto a dense canvas.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{bin_of, CellIndex, Grid, LidarPoint};
use crate::rng::SeededRng;
use crate::tensor::FeatureMap;

/// Width of a decorated point feature.
pub const POINT_FEATURES: usize = 17;
/// Default encoder width.
pub const DEFAULT_CHANNELS: usize = 32;

/// Per-point cell and per-cell point lists. No sampling and no per-pillar
/// cap: every in-range point sits in exactly one list.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PillarAssignment {
    /// `None` for dropped (out-of-range) points.
    pub cells: Vec<Option<CellIndex>>,
    /// Point indices per occupied cell, in input order.
    pub pillars: BTreeMap<CellIndex, Vec<usize>>,
}

impl PillarAssignment {
    pub fn occupied(&self) -> usize {
        self.pillars.len()
    }

    pub fn kept_points(&self) -> usize {
        self.pillars.values().map(Vec::len).sum()
    }
}

pub fn group_points(points: &[LidarPoint], grid: &Grid) -> PillarAssignment {
    let mut out = PillarAssignment {
        cells: Vec::with_capacity(points.len()),
        pillars: BTreeMap::new(),
    };
    for (i, p) in points.iter().enumerate() {
        let cell = bin_of(p, grid).ok();
        if let Some(c) = cell {
            out.pillars.entry(c).or_default().push(i);
        }
        out.cells.push(cell);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoratedPoint {
    pub index: usize,
    pub cell: CellIndex,
    /// r, θ, z, x, y, i, t, xyz centre offsets, xyz cluster offsets,
    /// rθ centre offsets, rθ cluster offsets.
    pub features: [f64; POINT_FEATURES],
}

/// Order-independent mean: values are sorted before summation so any
/// permutation of a pillar's points gives the same bits.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Decorated features of every kept point, in input order.
pub fn decorate(
    points: &[LidarPoint],
    assignment: &PillarAssignment,
    grid: &Grid,
) -> Vec<DecoratedPoint> {
    let z_center = grid.z_center();
    let mut cluster: BTreeMap<CellIndex, [f64; 5]> = BTreeMap::new();
    for (cell, idx) in &assignment.pillars {
        let mean =
            |f: fn(&LidarPoint) -> f64| stable_mean(idx.iter().map(|&i| f(&points[i])).collect());
        cluster.insert(
            *cell,
            [
                mean(|p| p.x),
                mean(|p| p.y),
                mean(|p| p.z),
                mean(|p| p.r),
                mean(|p| p.theta),
            ],
        );
    }
    assignment
        .cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (i, c)))
        .map(|(index, cell)| {
            let p = &points[index];
            let (xc, yc) = grid.cell_center_xy(cell);
            let (rc, tc) = grid.cell_center_polar(cell);
            let m = cluster[&cell];
            DecoratedPoint {
                index,
                cell,
                features: [
                    p.r,
                    p.theta,
                    p.z,
                    p.x,
                    p.y,
                    p.intensity,
                    p.dt,
                    p.x - xc,
                    p.y - yc,
                    p.z - z_center,
                    p.x - m[0],
                    p.y - m[1],
                    p.z - m[2],
                    p.r - rc,
                    p.theta - tc,
                    p.r - m[3],
                    p.theta - m[4],
                ],
            }
        })
        .collect()
}

/// Linear layer `17 -> C`, weights row-major `[C][17]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PillarEncoderParams {
    channels: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl PillarEncoderParams {
    pub fn new(channels: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("encoder needs at least one channel"));
        }
        if weights.len() != channels * POINT_FEATURES || bias.len() != channels {
            return Err(Error::shape(
                "PillarEncoderParams",
                format!("{} weights, {channels} biases", channels * POINT_FEATURES),
                format!("{} weights, {} biases", weights.len(), bias.len()),
            ));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::config("encoder parameters must be finite"));
        }
        Ok(Self {
            channels,
            weights,
            bias,
        })
    }

    pub fn seeded(channels: usize, rng: &mut SeededRng) -> Self {
        let bound = (1.0 / POINT_FEATURES as f64).sqrt() as f32;
        let weights = (0..channels * POINT_FEATURES)
            .map(|_| rng.uniform_f32(-bound, bound))
            .collect();
        let bias = (0..channels).map(|_| rng.uniform_f32(-0.1, 0.1)).collect();
        Self::new(channels, weights, bias).expect("valid shape")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    fn activate(&self, f: &[f64; POINT_FEATURES], out: &mut [f32]) {
        for (co, o) in out.iter_mut().enumerate() {
            let w = &self.weights[co * POINT_FEATURES..(co + 1) * POINT_FEATURES];
            let mut acc = self.bias[co];
            for (wv, &fv) in w.iter().zip(f) {
                acc += wv * fv as f32;
            }
            *o = acc.max(0.0);
        }
    }
}

/// Feature vector of one occupied cell.
pub type CellFeature = (CellIndex, Vec<f32>);

/// Max over the pillar's points of `ReLU(W f + b)`, cells in `(row, col)`
/// order. Empty cells are absent.
pub fn encode_pillars(
    decorated: &[DecoratedPoint],
    assignment: &PillarAssignment,
    params: &PillarEncoderParams,
) -> Vec<CellFeature> {
    let by_index: BTreeMap<usize, &DecoratedPoint> =
        decorated.iter().map(|d| (d.index, d)).collect();
    let mut tmp = vec![0.0f32; params.channels];
    assignment
        .pillars
        .iter()
        .map(|(cell, idx)| {
            let mut feat = vec![0.0f32; params.channels];
            for i in idx {
                let Some(d) = by_index.get(i) else { continue };
                params.activate(&d.features, &mut tmp);
                for (a, &b) in feat.iter_mut().zip(&tmp) {
                    *a = a.max(b);
                }
            }
            (*cell, feat)
        })
        .collect()
}

/// Dense `rows x cols x C` canvas with the given cells filled in.
pub fn scatter(
    cells: &[CellFeature],
    rows: usize,
    cols: usize,
    channels: usize,
) -> Result<FeatureMap> {
    let mut canvas = FeatureMap::zeros(rows, cols, channels);
    let mut seen = vec![false; rows * cols];
    for (cell, feat) in cells {
        if cell.row >= rows || cell.col >= cols {
            return Err(Error::shape(
                "scatter",
                format!("cell within {rows} x {cols}"),
                format!("({}, {})", cell.row, cell.col),
            ));
        }
        if feat.len() != channels {
            return Err(Error::shape("scatter channels", channels, feat.len()));
        }
        let flat = cell.row * cols + cell.col;
        if std::mem::replace(&mut seen[flat], true) {
            return Err(Error::DuplicateCell {
                row: cell.row,
                col: cell.col,
            });
        }
        canvas.pixel_mut(cell.row, cell.col).copy_from_slice(feat);
    }
    Ok(canvas)
}

/// Group, decorate, encode and scatter in one call.
pub fn pillarize(
    points: &[LidarPoint],
    grid: &Grid,
    params: &PillarEncoderParams,
) -> Result<FeatureMap> {
    let assignment = group_points(points, grid);
    let decorated = decorate(points, &assignment, grid);
    let cells = encode_pillars(&decorated, &assignment, params);
    scatter(&cells, grid.rows(), grid.cols(), params.channels)
}
