//! Range-stratified convolution and normalisation, feature undistortion from
//! polar bins to arbitrary query positions, and centre-offset analysis.

use crate::error::{Error, Result};
use crate::geometry::{CartesianGridSpec, CellIndex, Grid, PolarGridSpec};
use crate::rng::SeededRng;
use crate::tensor::{
    apply_rows, conv2d_rows, fit_rows, ColumnPadding, Conv2d, FeatureMap, NormParams,
};

/// Contiguous radial bands: row `i` belongs to stratum `floor(i * S / H)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StratumPartition {
    h: usize,
    starts: Vec<usize>,
}

pub fn partition_rows(h: usize, s: usize) -> Result<StratumPartition> {
    if s == 0 || s > h {
        return Err(Error::config(format!(
            "cannot split {h} rows into {s} strata"
        )));
    }
    Ok(StratumPartition {
        h,
        starts: (0..s).map(|k| (k * h).div_ceil(s)).collect(),
    })
}

impl StratumPartition {
    pub fn strata(&self) -> usize {
        self.starts.len()
    }
    pub fn rows(&self) -> usize {
        self.h
    }
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn stratum_of(&self, row: usize) -> usize {
        row * self.strata() / self.h
    }

    /// Row range `[lo, hi)` of stratum `k`.
    pub fn bounds(&self, k: usize) -> (usize, usize) {
        let hi = self.starts.get(k + 1).copied().unwrap_or(self.h);
        (self.starts[k], hi)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedConvParams {
    kernels: Vec<Conv2d>,
}

impl StratifiedConvParams {
    pub fn new(kernels: Vec<Conv2d>) -> Result<Self> {
        let first = kernels
            .first()
            .ok_or_else(|| Error::config("stratified convolution needs a kernel"))?;
        if kernels.iter().any(|k| !k.same_geometry(first)) {
            return Err(Error::config("stratum kernels differ in shape"));
        }
        Ok(Self { kernels })
    }

    pub fn seeded(
        s: usize,
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut SeededRng,
    ) -> Self {
        Self {
            kernels: (0..s)
                .map(|_| Conv2d::seeded(k, c_in, c_out, stride, rng))
                .collect(),
        }
    }

    pub fn kernels(&self) -> &[Conv2d] {
        &self.kernels
    }
}

/// Output row `i` uses the kernel of the stratum holding `i` (at the output
/// resolution); input windows crossing a band edge are not masked.
pub fn stratified_conv(
    map: &FeatureMap,
    params: &StratifiedConvParams,
    partition: &StratumPartition,
    padding: ColumnPadding,
) -> Result<FeatureMap> {
    if params.kernels.len() != partition.strata() {
        return Err(Error::shape(
            "stratified_conv strata",
            partition.strata(),
            params.kernels.len(),
        ));
    }
    let first = &params.kernels[0];
    let h_out =
        crate::tensor::conv_out_len(map.h(), first.kernel(), first.stride(), first.radius());
    if h_out != partition.rows() {
        return Err(Error::shape(
            "stratified_conv partition rows",
            h_out,
            partition.rows(),
        ));
    }
    conv2d_rows(map, first, padding, |row| {
        &params.kernels[partition.stratum_of(row)]
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StratifiedNormParams {
    pub strata: Vec<NormParams>,
}

impl StratifiedNormParams {
    pub fn identity(s: usize, c: usize) -> Self {
        Self {
            strata: vec![NormParams::identity(c); s],
        }
    }
}

/// Per-(stratum, channel) statistics over each band's rows.
pub fn stratified_norm_fit(
    map: &FeatureMap,
    partition: &StratumPartition,
) -> Result<StratifiedNormParams> {
    if partition.rows() != map.h() {
        return Err(Error::shape(
            "stratified_norm partition rows",
            map.h(),
            partition.rows(),
        ));
    }
    Ok(StratifiedNormParams {
        strata: (0..partition.strata())
            .map(|k| {
                let (lo, hi) = partition.bounds(k);
                fit_rows(map, lo, hi)
            })
            .collect(),
    })
}

pub fn stratified_norm_apply(
    map: &FeatureMap,
    params: &StratifiedNormParams,
    partition: &StratumPartition,
) -> Result<FeatureMap> {
    if partition.rows() != map.h() || params.strata.len() != partition.strata() {
        return Err(Error::shape(
            "stratified_norm_apply",
            format!("{} rows, {} strata", map.h(), partition.strata()),
            format!("{} rows, {} strata", partition.rows(), params.strata.len()),
        ));
    }
    let mut out = map.clone();
    for (k, p) in params.strata.iter().enumerate() {
        if p.channels() != map.c() {
            return Err(Error::shape(
                "stratified_norm_apply channels",
                map.c(),
                p.channels(),
            ));
        }
        p.validate()?;
        let (lo, hi) = partition.bounds(k);
        apply_rows(&mut out, lo, hi, p);
    }
    Ok(out)
}

/// Fit on `map` then apply, returning both.
pub fn stratified_norm(
    map: &FeatureMap,
    partition: &StratumPartition,
) -> Result<(FeatureMap, StratifiedNormParams)> {
    let params = stratified_norm_fit(map, partition)?;
    Ok((stratified_norm_apply(map, &params, partition)?, params))
}

/// Query positions of an undistortion, each as `(r, θ)` in the source
/// grid's azimuth convention.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryGrid {
    pub rows: usize,
    pub cols: usize,
    pub positions: Vec<(f64, f64)>,
}

impl QueryGrid {
    /// Cell centres of a cartesian grid.
    pub fn cartesian(grid: &CartesianGridSpec, src: &PolarGridSpec) -> Self {
        let mut positions = Vec::with_capacity(grid.n_x * grid.n_y);
        for i in 0..grid.n_x {
            for j in 0..grid.n_y {
                let (x, y) = grid.cell_center_xy(CellIndex::new(i, j));
                positions.push(src.polar_of(x, y));
            }
        }
        Self {
            rows: grid.n_x,
            cols: grid.n_y,
            positions,
        }
    }

    /// Cell centres of a polar grid.
    pub fn polar(grid: &PolarGridSpec) -> Self {
        let mut positions = Vec::with_capacity(grid.n_r() * grid.n_theta());
        for i in 0..grid.n_r() {
            for j in 0..grid.n_theta() {
                positions.push(grid.cell_center(CellIndex::new(i, j)));
            }
        }
        Self {
            rows: grid.n_r(),
            cols: grid.n_theta(),
            positions,
        }
    }

    /// Arbitrary cartesian positions laid out as `rows x cols`.
    pub fn from_xy(
        rows: usize,
        cols: usize,
        xy: &[(f64, f64)],
        src: &PolarGridSpec,
    ) -> Result<Self> {
        if xy.len() != rows * cols {
            return Err(Error::shape("QueryGrid::from_xy", rows * cols, xy.len()));
        }
        Ok(Self {
            rows,
            cols,
            positions: xy.iter().map(|&(x, y)| src.polar_of(x, y)).collect(),
        })
    }
}

/// One of the nine taps of a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tap {
    /// Source bin, `None` when outside the grid.
    pub src: Option<CellIndex>,
    pub w: f32,
    pub w_mod: f32,
    pub bias: f32,
}

const INVALID_TAP: Tap = Tap {
    src: None,
    w: 0.0,
    w_mod: 0.0,
    bias: 0.0,
};

/// Per-query 3 x 3 taps around the nearest source bin. Queries outside the
/// polar annulus or window are invalid and produce zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct UndistortionPlan {
    src_rows: usize,
    src_cols: usize,
    rows: usize,
    cols: usize,
    taps: Vec<Option<[Tap; 9]>>,
}

impl UndistortionPlan {
    pub fn query_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn source_shape(&self) -> (usize, usize) {
        (self.src_rows, self.src_cols)
    }
    /// Taps of query `q`, `None` when the query is invalid.
    pub fn taps(&self, q: usize) -> Option<&[Tap; 9]> {
        self.taps[q].as_ref()
    }
    pub fn len(&self) -> usize {
        self.taps.len()
    }
    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// `3x3 conv -> tanh -> 1x1 conv` over the 5-channel position encoding
/// `(r, cos θ, sin θ, x, y)` of the source grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulationNet {
    pub conv3: Conv2d,
    pub conv1: Conv2d,
}

pub const PE_CHANNELS: usize = 5;

impl ModulationNet {
    pub fn new(conv3: Conv2d, conv1: Conv2d) -> Result<Self> {
        if conv3.kernel() != 3 || conv3.c_in() != PE_CHANNELS || conv3.stride() != 1 {
            return Err(Error::config(
                "modulation net needs a stride-1 3x3 conv over 5 channels",
            ));
        }
        if conv1.kernel() != 1 || conv1.c_in() != conv3.c_out() || conv1.c_out() != 1 {
            return Err(Error::config(
                "modulation net head must be a 1x1 conv to one channel",
            ));
        }
        Ok(Self { conv3, conv1 })
    }

    pub fn seeded(hidden: usize, rng: &mut SeededRng) -> Self {
        Self::new(
            Conv2d::seeded(3, PE_CHANNELS, hidden, 1, rng),
            Conv2d::seeded(1, hidden, 1, 1, rng),
        )
        .expect("valid geometry")
    }

    /// Network whose output is `value` everywhere.
    pub fn constant(value: f32) -> Self {
        Self::new(
            Conv2d::new(3, PE_CHANNELS, 1, 1, vec![0.0; 9 * PE_CHANNELS], vec![0.0])
                .expect("valid"),
            Conv2d::new(1, 1, 1, 1, vec![0.0], vec![value]).expect("valid"),
        )
        .expect("valid geometry")
    }

    /// Output at source cell `(i, j)`; the encoding map is zero-padded.
    pub fn eval_at(&self, pe: &FeatureMap, i: usize, j: usize) -> f32 {
        let hidden = self.conv3.c_out();
        let mut acc: Vec<f32> = self.conv3.bias().to_vec();
        for ki in 0..3 {
            let ii = i as isize + ki as isize - 1;
            if ii < 0 || ii >= pe.h() as isize {
                continue;
            }
            for kj in 0..3 {
                let jj = j as isize + kj as isize - 1;
                if jj < 0 || jj >= pe.w() as isize {
                    continue;
                }
                let x = pe.pixel(ii as usize, jj as usize);
                for (ci, &xv) in x.iter().enumerate() {
                    for (co, a) in acc.iter_mut().enumerate() {
                        *a += xv * self.conv3.weight(ki, kj, ci, co);
                    }
                }
            }
        }
        let mut out = self.conv1.bias()[0];
        for (co, a) in acc.iter().enumerate().take(hidden) {
            out += a.tanh() * self.conv1.weight(0, 0, co, 0);
        }
        out
    }
}

/// Position encoding `(r, cos θ, sin θ, x, y)` at each cell centre.
pub fn position_encoding(grid: &PolarGridSpec) -> FeatureMap {
    FeatureMap::from_fn(grid.n_r(), grid.n_theta(), PE_CHANNELS, |i, j, ch| {
        let (r, t) = grid.cell_center(CellIndex::new(i, j));
        (match ch {
            0 => r,
            1 => t.cos(),
            2 => t.sin(),
            3 => r * t.cos(),
            _ => r * t.sin(),
        }) as f32
    })
}

/// Stored kernel `w_k` plus the modulation nets producing `w′_k` and `b′_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedUndistortion {
    pub kernel: [f32; 9],
    pub g: ModulationNet,
    pub q: ModulationNet,
}

impl LearnedUndistortion {
    pub fn seeded(hidden: usize, rng: &mut SeededRng) -> Self {
        let mut kernel = [0.0; 9];
        for k in &mut kernel {
            *k = rng.uniform_f32(0.0, 2.0 / 9.0);
        }
        Self {
            kernel,
            g: ModulationNet::seeded(hidden, rng),
            q: ModulationNet::seeded(hidden, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum UndistortionMode {
    /// Bilinear interpolation expressed as a modulated 3 x 3 gather.
    Oracle,
    Learned(LearnedUndistortion),
}

/// Continuous source coordinates of a query, clamped to bin centres, or
/// `None` when the query is outside the grid.
fn continuous_coords(src: &PolarGridSpec, r: f64, t: f64) -> Option<(f64, f64)> {
    if !src.contains_polar(r, t) {
        return None;
    }
    let u = ((r - src.r_min()) / src.delta_r() - 0.5).clamp(0.0, (src.n_r() - 1) as f64);
    let v =
        ((t - src.theta_min()) / src.delta_theta() - 0.5).clamp(0.0, (src.n_theta() - 1) as f64);
    Some((u, v))
}

fn bilinear_weight(u: f64, v: f64, i: usize, j: usize) -> f64 {
    let wu = (1.0 - (u - i as f64).abs()).max(0.0);
    let wv = (1.0 - (v - j as f64).abs()).max(0.0);
    wu * wv
}

/// The 3 x 3 neighbourhood of the bin nearest `(u, v)`.
fn neighbourhood(u: f64, v: f64) -> [(isize, isize); 9] {
    let (ci, cj) = (u.round() as isize, v.round() as isize);
    let mut out = [(0, 0); 9];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (ci + k as isize / 3 - 1, cj + k as isize % 3 - 1);
    }
    out
}

fn in_grid(src: &PolarGridSpec, (i, j): (isize, isize)) -> Option<CellIndex> {
    (i >= 0 && j >= 0 && (i as usize) < src.n_r() && (j as usize) < src.n_theta())
        .then(|| CellIndex::new(i as usize, j as usize))
}

fn query_taps(
    src: &PolarGridSpec,
    pos: (f64, f64),
    mode: &UndistortionMode,
    mut modulation: impl FnMut(CellIndex) -> (f32, f32),
) -> Option<[Tap; 9]> {
    let (u, v) = continuous_coords(src, pos.0, pos.1)?;
    let mut taps = [INVALID_TAP; 9];
    for (k, (tap, at)) in taps.iter_mut().zip(neighbourhood(u, v)).enumerate() {
        let Some(cell) = in_grid(src, at) else {
            continue;
        };
        *tap = match mode {
            UndistortionMode::Oracle => Tap {
                src: Some(cell),
                w: 1.0,
                w_mod: bilinear_weight(u, v, cell.row, cell.col) as f32,
                bias: 0.0,
            },
            UndistortionMode::Learned(l) => {
                let (w_mod, bias) = modulation(cell);
                Tap {
                    src: Some(cell),
                    w: l.kernel[k],
                    w_mod,
                    bias,
                }
            }
        };
    }
    Some(taps)
}

/// Precomputes taps for every query. In learned mode `g` and `q` are
/// evaluated once per source location and shared by all queries.
pub fn build_undistortion_plan(
    src: &PolarGridSpec,
    queries: &QueryGrid,
    mode: &UndistortionMode,
) -> Result<UndistortionPlan> {
    if queries.positions.is_empty() {
        return Err(Error::config("undistortion needs at least one query"));
    }
    if queries.positions.len() != queries.rows * queries.cols {
        return Err(Error::shape(
            "QueryGrid",
            queries.rows * queries.cols,
            queries.positions.len(),
        ));
    }
    let modulation: Option<Vec<(f32, f32)>> = match mode {
        UndistortionMode::Oracle => None,
        UndistortionMode::Learned(l) => {
            let pe = position_encoding(src);
            let mut table = Vec::with_capacity(src.n_r() * src.n_theta());
            for i in 0..src.n_r() {
                for j in 0..src.n_theta() {
                    table.push((l.g.eval_at(&pe, i, j), l.q.eval_at(&pe, i, j)));
                }
            }
            Some(table)
        }
    };
    let taps = queries
        .positions
        .iter()
        .map(|&pos| {
            query_taps(src, pos, mode, |c| {
                modulation
                    .as_ref()
                    .map_or((1.0, 0.0), |t| t[c.row * src.n_theta() + c.col])
            })
        })
        .collect();
    Ok(UndistortionPlan {
        src_rows: src.n_r(),
        src_cols: src.n_theta(),
        rows: queries.rows,
        cols: queries.cols,
        taps,
    })
}

fn gather(map: &FeatureMap, taps: &[Tap; 9], out: &mut [f32]) {
    out.fill(0.0);
    for tap in taps {
        let Some(cell) = tap.src else { continue };
        let f = map.pixel(cell.row, cell.col);
        for (o, &v) in out.iter_mut().zip(f) {
            *o += tap.w * (tap.w_mod * v + tap.bias);
        }
    }
}

/// `f_q = Σ_k w_k (w′_k f_{p_k} + b′_k)` per query and channel.
pub fn apply_undistortion(map: &FeatureMap, plan: &UndistortionPlan) -> Result<FeatureMap> {
    if (map.h(), map.w()) != (plan.src_rows, plan.src_cols) {
        return Err(Error::shape(
            "apply_undistortion",
            format!("{} x {}", plan.src_rows, plan.src_cols),
            format!("{} x {}", map.h(), map.w()),
        ));
    }
    let mut out = FeatureMap::zeros(plan.rows, plan.cols, map.c());
    for (q, taps) in plan.taps.iter().enumerate() {
        if let Some(taps) = taps {
            gather(
                map,
                taps,
                &mut out.data_mut()[q * map.c()..(q + 1) * map.c()],
            );
        }
    }
    Ok(out)
}

/// Same result as building a plan and applying it, but evaluates `g` and
/// `q` on demand for each query's taps.
pub fn apply_undistortion_lazy(
    map: &FeatureMap,
    src: &PolarGridSpec,
    queries: &QueryGrid,
    mode: &UndistortionMode,
) -> Result<FeatureMap> {
    if (map.h(), map.w()) != (src.n_r(), src.n_theta()) {
        return Err(Error::shape(
            "apply_undistortion_lazy",
            format!("{} x {}", src.n_r(), src.n_theta()),
            format!("{} x {}", map.h(), map.w()),
        ));
    }
    let pe = match mode {
        UndistortionMode::Learned(_) => Some(position_encoding(src)),
        UndistortionMode::Oracle => None,
    };
    let mut out = FeatureMap::zeros(queries.rows, queries.cols, map.c());
    for (q, &pos) in queries.positions.iter().enumerate() {
        let taps = query_taps(src, pos, mode, |c| match (mode, &pe) {
            (UndistortionMode::Learned(l), Some(pe)) => {
                (l.g.eval_at(pe, c.row, c.col), l.q.eval_at(pe, c.row, c.col))
            }
            _ => (1.0, 0.0),
        });
        if let Some(taps) = taps {
            gather(
                map,
                &taps,
                &mut out.data_mut()[q * map.c()..(q + 1) * map.c()],
            );
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OffsetStats {
    pub dx: AxisStats,
    pub dy: AxisStats,
}

fn axis_stats(v: &[f64]) -> AxisStats {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    AxisStats {
        mean,
        std: var.sqrt(),
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Moments of centre-offset regression targets for uniformly placed
/// targets. Cartesian offsets are measured from the cell's lower corner in
/// cell units; polar offsets from the cartesian image of the cell centre,
/// divided by the radial pitch.
pub fn offset_targets_stats(grid: &Grid, samples: usize, seed: u64) -> Result<OffsetStats> {
    if samples < 1000 {
        return Err(Error::config(
            "offset statistics need at least 1000 samples",
        ));
    }
    let mut rng = SeededRng::new(seed);
    let (mut dx, mut dy) = (Vec::with_capacity(samples), Vec::with_capacity(samples));
    match grid {
        Grid::Cartesian(g) => {
            while dx.len() < samples {
                let (x, y) = (rng.uniform(g.x_min, g.x_max), rng.uniform(g.y_min, g.y_max));
                let Ok(cell) = g.bin_xy(x, y) else { continue };
                let (x0, y0) = g.cell_corner_xy(cell);
                dx.push((x - x0) / g.delta_x());
                dy.push((y - y0) / g.delta_y());
            }
        }
        Grid::Polar(g) => {
            let rm = g.r_max();
            while dx.len() < samples {
                let (x, y) = (rng.uniform(-rm, rm), rng.uniform(-rm, rm));
                let (r, t) = g.polar_of(x, y);
                let Ok(cell) = g.bin_polar(r, t) else {
                    continue;
                };
                let (xc, yc) = g.cell_center_xy(cell);
                dx.push((x - xc) / g.delta_r());
                dy.push((y - yc) / g.delta_r());
            }
        }
    }
    Ok(OffsetStats {
        dx: axis_stats(&dx),
        dy: axis_stats(&dy),
    })
}

/// Exact and first-order x offset of a target displaced by `theta_s` in
/// azimuth from a cell centre at `(r_c, theta_c)`.
pub fn small_angle_offset(r_c: f64, theta_c: f64, theta_s: f64) -> (f64, f64) {
    let exact = r_c * ((theta_c + theta_s).cos() - theta_c.cos());
    let approx = -r_c * theta_s * theta_c.sin();
    (exact, approx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{conv2d, norm_apply, norm_fit};

    #[test]
    fn default_partition_has_64_row_bands() {
        let p = partition_rows(512, 8).unwrap();
        assert_eq!(p.starts(), &[0, 64, 128, 192, 256, 320, 384, 448]);
        assert_eq!(partition_rows(512, 1).unwrap().starts(), &[0]);
        let each = partition_rows(5, 5).unwrap();
        assert_eq!(
            (0..5).map(|i| each.stratum_of(i)).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4]
        );
        assert!(partition_rows(4, 0).is_err() && partition_rows(4, 5).is_err());
    }

    #[test]
    fn uneven_partition_is_consistent() {
        for h in 1..40 {
            for s in 1..=h {
                let p = partition_rows(h, s).unwrap();
                for i in 0..h {
                    let (lo, hi) = p.bounds(p.stratum_of(i));
                    assert!(lo <= i && i < hi);
                }
                let sizes: Vec<_> = (0..s).map(|k| p.bounds(k).1 - p.bounds(k).0).collect();
                assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
        }
    }

    #[test]
    fn two_strata_scale_halves() {
        let mut rng = SeededRng::new(1);
        let m = FeatureMap::random(6, 4, 2, -1.0, 1.0, &mut rng);
        let mut double = Conv2d::identity(2).weights().to_vec();
        double.iter_mut().for_each(|w| *w *= 2.0);
        let params = StratifiedConvParams::new(vec![
            Conv2d::identity(2),
            Conv2d::new(1, 2, 2, 1, double, vec![0.0; 2]).unwrap(),
        ])
        .unwrap();
        let out = stratified_conv(
            &m,
            &params,
            &partition_rows(6, 2).unwrap(),
            ColumnPadding::Zero,
        )
        .unwrap();
        for i in 0..6 {
            for j in 0..4 {
                for c in 0..2 {
                    let f = if i < 3 { 1.0 } else { 2.0 };
                    assert_eq!(out.get(i, j, c), f * m.get(i, j, c));
                }
            }
        }
    }

    #[test]
    fn identical_kernels_match_plain_conv() {
        let mut rng = SeededRng::new(2);
        let m = FeatureMap::random(16, 9, 3, -1.0, 1.0, &mut rng);
        let k = Conv2d::seeded(3, 3, 4, 1, &mut rng);
        let params = StratifiedConvParams::new(vec![k.clone(); 4]).unwrap();
        let a = stratified_conv(
            &m,
            &params,
            &partition_rows(16, 4).unwrap(),
            ColumnPadding::Zero,
        )
        .unwrap();
        assert_eq!(a, conv2d(&m, &k, ColumnPadding::Zero).unwrap());
    }

    #[test]
    fn single_stratum_norm_is_plain_norm() {
        let mut rng = SeededRng::new(3);
        let m = FeatureMap::random(8, 8, 2, -3.0, 3.0, &mut rng);
        let p = partition_rows(8, 1).unwrap();
        let (out, params) = stratified_norm(&m, &p).unwrap();
        assert_eq!(params.strata[0], norm_fit(&m));
        assert_eq!(out, norm_apply(&m, &norm_fit(&m)).unwrap());
    }

    #[test]
    fn banded_constants_normalise_to_zero() {
        let m = FeatureMap::from_fn(8, 4, 1, |i, _, _| if i < 4 { 5.0 } else { 9.0 });
        let (out, _) = stratified_norm(&m, &partition_rows(8, 2).unwrap()).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-4));
    }

    fn small_grid() -> PolarGridSpec {
        PolarGridSpec::new(1.0, 9.0, -0.8, 0.8, -1.0, 1.0, 8, 16).unwrap()
    }

    #[test]
    fn oracle_query_at_bin_center_hits_one_tap() {
        let g = small_grid();
        let c = g.cell_center(CellIndex::new(3, 5));
        let plan = build_undistortion_plan(
            &g,
            &QueryGrid {
                rows: 1,
                cols: 1,
                positions: vec![c],
            },
            &UndistortionMode::Oracle,
        )
        .unwrap();
        let taps = plan.taps(0).unwrap();
        let hot: Vec<_> = taps.iter().filter(|t| t.w_mod > 0.0).collect();
        assert_eq!(hot.len(), 1);
        assert_eq!(hot[0].src, Some(CellIndex::new(3, 5)));
        assert!((hot[0].w_mod - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_midpoint_splits_evenly() {
        let g = small_grid();
        let (r, t0) = g.cell_center(CellIndex::new(2, 6));
        let (_, t1) = g.cell_center(CellIndex::new(2, 7));
        let q = QueryGrid {
            rows: 1,
            cols: 1,
            positions: vec![(r, 0.5 * (t0 + t1))],
        };
        let plan = build_undistortion_plan(&g, &q, &UndistortionMode::Oracle).unwrap();
        let hot: Vec<_> = plan
            .taps(0)
            .unwrap()
            .iter()
            .filter(|t| t.w_mod > 1e-9)
            .collect();
        assert_eq!(hot.len(), 2);
        for t in hot {
            assert!((t.w_mod - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn outside_queries_are_invalid() {
        let g = small_grid();
        let q = QueryGrid {
            rows: 1,
            cols: 2,
            positions: vec![(0.5, 0.0), (5.0, 2.0)],
        };
        let plan = build_undistortion_plan(&g, &q, &UndistortionMode::Oracle).unwrap();
        assert!(plan.taps(0).is_none() && plan.taps(1).is_none());
        let out = apply_undistortion(
            &FeatureMap::from_vec(8, 16, 1, vec![1.0; 128]).unwrap(),
            &plan,
        )
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let empty = QueryGrid {
            rows: 0,
            cols: 0,
            positions: vec![],
        };
        assert!(build_undistortion_plan(&g, &empty, &UndistortionMode::Oracle).is_err());
    }

    #[test]
    fn constant_nets_give_box_sum() {
        let g = small_grid();
        let mut rng = SeededRng::new(9);
        let m = FeatureMap::random(8, 16, 2, -1.0, 1.0, &mut rng);
        let learned = LearnedUndistortion {
            kernel: [1.0; 9],
            g: ModulationNet::constant(1.0),
            q: ModulationNet::constant(0.0),
        };
        let q = QueryGrid::polar(&g);
        let plan = build_undistortion_plan(&g, &q, &UndistortionMode::Learned(learned)).unwrap();
        let out = apply_undistortion(&m, &plan).unwrap();
        for i in 1..7 {
            for j in 1..15 {
                for c in 0..2 {
                    let mut s = 0.0f32;
                    for di in 0..3 {
                        for dj in 0..3 {
                            s += m.get(i + di - 1, j + dj - 1, c);
                        }
                    }
                    assert!((out.get(i, j, c) - s).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn learned_lazy_path_matches_plan() {
        let g = small_grid();
        let mut rng = SeededRng::new(10);
        let m = FeatureMap::random(8, 16, 3, -1.0, 1.0, &mut rng);
        let mode = UndistortionMode::Learned(LearnedUndistortion::seeded(4, &mut rng));
        let cart = CartesianGridSpec::enclosing_wedge(&g, 9.0, 0.5).unwrap();
        let q = QueryGrid::cartesian(&cart, &g);
        let plan = build_undistortion_plan(&g, &q, &mode).unwrap();
        assert_eq!(
            apply_undistortion(&m, &plan).unwrap(),
            apply_undistortion_lazy(&m, &g, &q, &mode).unwrap()
        );
    }

    #[test]
    fn cartesian_offsets_are_uniform_on_cells() {
        let s = offset_targets_stats(&Grid::Cartesian(CartesianGridSpec::full_sweep()), 20_000, 1)
            .unwrap();
        assert!((0.27..=0.30).contains(&s.dx.std));
        let unit = CartesianGridSpec::new(0.0, 1.0, 0.0, 1.0, -1.0, 1.0, 1, 1).unwrap();
        let s = offset_targets_stats(&Grid::Cartesian(unit), 20_000, 2).unwrap();
        assert!((s.dx.mean - 0.5).abs() < 0.02);
        assert!(s.dx.min >= 0.0 && s.dx.max < 1.0);
    }

    #[test]
    fn small_angle_cases() {
        assert_eq!(small_angle_offset(10.0, 1.0, 0.0), (0.0, 0.0));
        let (e, a) = small_angle_offset(10.0, std::f64::consts::FRAC_PI_4, 0.0123);
        assert!((e - a).abs() / e.abs().max(1e-9) <= 0.01);
        let (e, a) = small_angle_offset(10.0, 0.0, 0.0123);
        assert_eq!(a, 0.0);
        assert!(e < 0.0 && e.abs() <= 10.0 * 0.0123f64.powi(2) / 2.0);
    }
}
