//! Dense H x W x C feature maps and the handful of operators the reference
//! network needs.
//!
//! Every reduction runs in a fixed order so that two code paths computing the
//! same quantity (a sector-wise run and a full-sweep run, a stratified layer
//! with identical kernels and a plain one) agree bit for bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Row-major `H x W x C` activations; element `(i, j, c)` lives at
/// `(i * w + j) * c_total + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::shape("FeatureMap::from_vec", h * w * c, data.len()));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn from_fn(
        h: usize,
        w: usize,
        c: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    data.push(f(i, j, ch));
                }
            }
        }
        Self { h, w, c, data }
    }

    /// Uniform values in `[lo, hi)`.
    pub fn random(h: usize, w: usize, c: usize, lo: f32, hi: f32, rng: &mut SeededRng) -> Self {
        Self::from_fn(h, w, c, |_, _, _| rng.uniform_f32(lo, hi))
    }

    pub fn h(&self) -> usize {
        self.h
    }
    pub fn w(&self) -> usize {
        self.w
    }
    pub fn c(&self) -> usize {
        self.c
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, ch: usize) -> f32 {
        self.data[(i * self.w + j) * self.c + ch]
    }

    pub fn set(&mut self, i: usize, j: usize, ch: usize, v: f32) {
        self.data[(i * self.w + j) * self.c + ch] = v;
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f32] {
        let at = (i * self.w + j) * self.c;
        &self.data[at..at + self.c]
    }

    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [f32] {
        let at = (i * self.w + j) * self.c;
        &mut self.data[at..at + self.c]
    }

    /// Columns `[start, start + n)`.
    pub fn slice_cols(&self, start: usize, n: usize) -> Result<Self> {
        if start + n > self.w {
            return Err(Error::shape(
                "slice_cols",
                format!("columns within {}", self.w),
                format!("[{start}, {})", start + n),
            ));
        }
        let mut data = Vec::with_capacity(self.h * n * self.c);
        for i in 0..self.h {
            let at = (i * self.w + start) * self.c;
            data.extend_from_slice(&self.data[at..at + n * self.c]);
        }
        Ok(Self {
            h: self.h,
            w: n,
            c: self.c,
            data,
        })
    }

    /// Gathers arbitrary columns, in the given order.
    pub fn gather_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.h * cols.len() * self.c);
        for i in 0..self.h {
            for &j in cols {
                data.extend_from_slice(self.pixel(i, j));
            }
        }
        Self {
            h: self.h,
            w: cols.len(),
            c: self.c,
            data,
        }
    }

    /// Side-by-side concatenation along the column axis.
    pub fn concat_cols(maps: &[&FeatureMap]) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::config("concat_cols needs at least one map"))?;
        let (h, c) = (first.h, first.c);
        for m in maps {
            if m.h != h || m.c != c {
                return Err(Error::shape(
                    "concat_cols",
                    format!("{h} x _ x {c}"),
                    format!("{} x {} x {}", m.h, m.w, m.c),
                ));
            }
        }
        let w: usize = maps.iter().map(|m| m.w).sum();
        let mut data = Vec::with_capacity(h * w * c);
        for i in 0..h {
            for m in maps {
                let at = i * m.w * c;
                data.extend_from_slice(&m.data[at..at + m.w * c]);
            }
        }
        Ok(Self { h, w, c, data })
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f32> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                "max_abs_diff",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// How the θ (column) border of a convolution input is handled. Rows are
/// always zero-padded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnPadding {
    /// Symmetric zero padding by the kernel radius.
    Zero,
    /// The input already carries `radius` context columns on each side.
    Provided,
}

/// Square convolution with weights laid out `[ki][kj][c_in][c_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    k: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl Conv2d {
    pub fn new(
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if k % 2 == 0 || k == 0 {
            return Err(Error::config(format!("kernel size {k} must be odd")));
        }
        if stride == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::config("stride and channel counts must be positive"));
        }
        if weights.len() != k * k * c_in * c_out {
            return Err(Error::shape(
                "Conv2d weights",
                k * k * c_in * c_out,
                weights.len(),
            ));
        }
        if bias.len() != c_out {
            return Err(Error::shape("Conv2d bias", c_out, bias.len()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::config("convolution parameters must be finite"));
        }
        Ok(Self {
            k,
            c_in,
            c_out,
            stride,
            weights,
            bias,
        })
    }

    /// He-style uniform initialisation with zero bias.
    pub fn seeded(k: usize, c_in: usize, c_out: usize, stride: usize, rng: &mut SeededRng) -> Self {
        let bound = (6.0 / (k * k * c_in) as f64).sqrt() as f32;
        let weights = (0..k * k * c_in * c_out)
            .map(|_| rng.uniform_f32(-bound, bound))
            .collect();
        Self::new(k, c_in, c_out, stride, weights, vec![0.0; c_out]).expect("valid geometry")
    }

    /// 1 x 1 kernel copying the input channels.
    pub fn identity(c: usize) -> Self {
        let mut weights = vec![0.0; c * c];
        for i in 0..c {
            weights[i * c + i] = 1.0;
        }
        Self::new(1, c, c, 1, weights, vec![0.0; c]).expect("valid geometry")
    }

    pub fn kernel(&self) -> usize {
        self.k
    }
    pub fn radius(&self) -> usize {
        self.k / 2
    }
    pub fn c_in(&self) -> usize {
        self.c_in
    }
    pub fn c_out(&self) -> usize {
        self.c_out
    }
    pub fn stride(&self) -> usize {
        self.stride
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight(&self, ki: usize, kj: usize, ci: usize, co: usize) -> f32 {
        self.weights[((ki * self.k + kj) * self.c_in + ci) * self.c_out + co]
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.k == other.k
            && self.c_in == other.c_in
            && self.c_out == other.c_out
            && self.stride == other.stride
    }
}

/// Output extent of a strided window sweep.
pub fn conv_out_len(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

pub fn conv2d(map: &FeatureMap, conv: &Conv2d, padding: ColumnPadding) -> Result<FeatureMap> {
    conv2d_rows(map, conv, padding, |_| conv)
}

/// Convolution whose kernel may change per output row. All kernels must
/// share `geometry`'s shape; summation order is `(ki, kj, ci)` per output.
pub(crate) fn conv2d_rows<'a>(
    map: &FeatureMap,
    geometry: &Conv2d,
    padding: ColumnPadding,
    kernel_for_row: impl Fn(usize) -> &'a Conv2d + Sync,
) -> Result<FeatureMap> {
    let (k, s, c_in, c_out) = (geometry.k, geometry.stride, geometry.c_in, geometry.c_out);
    if map.c != c_in {
        return Err(Error::shape("conv2d input channels", c_in, map.c));
    }
    let p = k / 2;
    let col_pad = match padding {
        ColumnPadding::Zero => p,
        ColumnPadding::Provided => 0,
    };
    if map.w + 2 * col_pad < k || map.h + 2 * p < k {
        return Err(Error::shape(
            "conv2d input extent",
            format!(">= {k}"),
            map.w + 2 * col_pad,
        ));
    }
    let h_out = conv_out_len(map.h, k, s, p);
    let w_out = conv_out_len(map.w, k, s, col_pad);
    let mut out = FeatureMap::zeros(h_out, w_out, c_out);
    out.data
        .par_chunks_mut(w_out * c_out)
        .enumerate()
        .for_each(|(oi, row)| {
            let kern = kernel_for_row(oi);
            for acc in row.chunks_exact_mut(c_out) {
                acc.copy_from_slice(&kern.bias);
            }
            for ki in 0..k {
                let ii = (oi * s + ki) as isize - p as isize;
                if ii < 0 || ii >= map.h as isize {
                    continue;
                }
                let in_row =
                    &map.data[ii as usize * map.w * c_in..(ii as usize + 1) * map.w * c_in];
                for (oj, acc) in row.chunks_exact_mut(c_out).enumerate() {
                    for kj in 0..k {
                        let jj = (oj * s + kj) as isize - col_pad as isize;
                        if jj < 0 || jj >= map.w as isize {
                            continue;
                        }
                        let x = &in_row[jj as usize * c_in..(jj as usize + 1) * c_in];
                        let wbase = (ki * k + kj) * c_in * c_out;
                        let wk = &kern.weights[wbase..wbase + c_in * c_out];
                        for (ci, &xv) in x.iter().enumerate() {
                            let wrow = &wk[ci * c_out..(ci + 1) * c_out];
                            for (a, &wv) in acc.iter_mut().zip(wrow) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Per-channel affine normalisation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl NormParams {
    pub fn identity(c: usize) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            mean: vec![0.0; c],
            var: vec![1.0; c],
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.mean.len() != c || self.var.len() != c {
            return Err(Error::shape(
                "NormParams",
                c,
                format!("{}/{}/{}", self.beta.len(), self.mean.len(), self.var.len()),
            ));
        }
        if self.var.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::config("normalisation variance must be non-negative"));
        }
        Ok(())
    }
}

/// Mean and biased variance per channel over rows `[r0, r1)`, accumulated in
/// f64 in row-major order.
pub(crate) fn fit_rows(map: &FeatureMap, r0: usize, r1: usize) -> NormParams {
    let c = map.c;
    let slice = &map.data[r0 * map.w * c..r1 * map.w * c];
    let count = (slice.len() / c).max(1) as f64;
    let mut sum = vec![0.0f64; c];
    for px in slice.chunks_exact(c) {
        for (s, &v) in sum.iter_mut().zip(px) {
            *s += v as f64;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let mut sq = vec![0.0f64; c];
    for px in slice.chunks_exact(c) {
        for ((s, &v), m) in sq.iter_mut().zip(px).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    NormParams {
        gamma: vec![1.0; c],
        beta: vec![0.0; c],
        mean: mean.iter().map(|&m| m as f32).collect(),
        var: sq.iter().map(|&s| (s / count) as f32).collect(),
        eps: 1e-5,
    }
}

pub(crate) fn apply_rows(map: &mut FeatureMap, r0: usize, r1: usize, params: &NormParams) {
    let c = map.c;
    let coef: Vec<(f64, f64, f64)> = (0..c)
        .map(|ch| {
            let scale =
                params.gamma[ch] as f64 / (params.var[ch] as f64 + params.eps as f64).sqrt();
            (params.mean[ch] as f64, scale, params.beta[ch] as f64)
        })
        .collect();
    let w = map.w;
    for px in map.data[r0 * w * c..r1 * w * c].chunks_exact_mut(c) {
        for (v, &(m, scale, b)) in px.iter_mut().zip(&coef) {
            *v = ((*v as f64 - m) * scale + b) as f32;
        }
    }
}

pub fn norm_fit(map: &FeatureMap) -> NormParams {
    fit_rows(map, 0, map.h)
}

pub fn norm_apply(map: &FeatureMap, params: &NormParams) -> Result<FeatureMap> {
    if params.channels() != map.c {
        return Err(Error::shape("norm_apply", params.channels(), map.c));
    }
    params.validate()?;
    let mut out = map.clone();
    apply_rows(&mut out, 0, map.h, params);
    Ok(out)
}

pub fn relu(map: &FeatureMap) -> FeatureMap {
    let mut out = map.clone();
    relu_in_place(&mut out);
    out
}

pub fn relu_in_place(map: &mut FeatureMap) {
    for v in &mut map.data {
        *v = v.max(0.0);
    }
}

/// Source sample for output index `o` under the half-pixel convention.
fn upsample_source(o: usize, factor: usize, n: usize) -> (usize, usize, f32) {
    let s = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, (s - i0 as f64) as f32)
}

/// Bilinear upsampling with `align_corners = false` and edge clamping.
pub fn bilinear_upsample(map: &FeatureMap, factor: usize) -> Result<FeatureMap> {
    if factor == 0 {
        return Err(Error::config("upsampling factor must be positive"));
    }
    let (h, w, c) = (map.h * factor, map.w * factor, map.c);
    let cols: Vec<_> = (0..w).map(|j| upsample_source(j, factor, map.w)).collect();
    let mut out = FeatureMap::zeros(h, w, c);
    for i in 0..h {
        let (r0, r1, ty) = upsample_source(i, factor, map.h);
        for (j, &(c0, c1, tx)) in cols.iter().enumerate() {
            let (a, b) = (map.pixel(r0, c0), map.pixel(r0, c1));
            let (d, e) = (map.pixel(r1, c0), map.pixel(r1, c1));
            let o = out.pixel_mut(i, j);
            for ch in 0..c {
                let top = a[ch] + (b[ch] - a[ch]) * tx;
                let bot = d[ch] + (e[ch] - d[ch]) * tx;
                o[ch] = top + (bot - top) * ty;
            }
        }
    }
    Ok(out)
}

/// Stacks the channels of `a` followed by those of `b`.
pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.h != b.h || a.w != b.w {
        return Err(Error::shape(
            "concat_channels",
            format!("{} x {}", a.h, a.w),
            format!("{} x {}", b.h, b.w),
        ));
    }
    let c = a.c + b.c;
    let mut data = Vec::with_capacity(a.h * a.w * c);
    for (pa, pb) in a.data.chunks_exact(a.c).zip(b.data.chunks_exact(b.c)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Ok(FeatureMap {
        h: a.h,
        w: a.w,
        c,
        data,
    })
}
