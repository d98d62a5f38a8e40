//! θ context padding for sector-wise convolution.
//!
//! Each padded layer pulls its low-θ (trailing) context from the last input
//! columns of the preceding sector and, in bidirectional mode, its high-θ
//! (leading) context from the previous sweep's full-width layer inputs after
//! warping them into the current ego frame. The [`taint`] submodule tracks
//! which output columns are affected by zero-substituted context.

use crate::error::{Error, Result};
use crate::geometry::{
    cart_polar, polar_cart, wrap_angle, CellIndex, PolarGridSpec, RigidMotion2D, SectorSpec,
};
use crate::tensor::FeatureMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PaddingMode {
    Zero,
    Trailing,
    Bidirectional,
}

impl std::str::FromStr for PaddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "trailing" => Ok(Self::Trailing),
            "bidirectional" => Ok(Self::Bidirectional),
            other => Err(Error::config(format!("unknown padding mode '{other}'"))),
        }
    }
}

/// A layer that reads θ context: its pad width and the downsampling factor
/// of its input relative to the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PadLayer {
    pub radius: usize,
    pub scale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cursor {
    sweep_id: u64,
    index: usize,
    n: usize,
}

/// Trailing-column buffers, one per registered layer, plus the position of
/// the most recent sector.
#[derive(Clone, Debug)]
pub struct PadState {
    layers: Vec<PadLayer>,
    trailing: Vec<Option<FeatureMap>>,
    cursor: Option<Cursor>,
}

impl PadState {
    pub fn new(layers: Vec<PadLayer>) -> Self {
        let trailing = vec![None; layers.len()];
        Self {
            layers,
            trailing,
            cursor: None,
        }
    }

    pub fn layers(&self) -> &[PadLayer] {
        &self.layers
    }

    pub fn reset(&mut self) {
        self.trailing.iter_mut().for_each(|t| *t = None);
        self.cursor = None;
    }

    /// Stored trailing columns of `layer` from the previous sector.
    pub fn trailing(&self, layer: usize) -> Option<&FeatureMap> {
        self.trailing.get(layer).and_then(Option::as_ref)
    }

    /// Moves the cursor to `spec`. Sectors must arrive in scan order, each
    /// exactly once, and a new sweep may only start once the previous one
    /// completed. Returns true when `spec` opens a new sweep.
    pub fn begin_sector(&mut self, spec: &SectorSpec) -> Result<bool> {
        let next = Cursor {
            sweep_id: spec.sweep_id,
            index: spec.index,
            n: spec.n,
        };
        let new_sweep = match self.cursor {
            None => {
                if spec.index != 0 {
                    return Err(Error::StreamOrder(format!(
                        "stream must start at sector 0, got {}",
                        spec.index
                    )));
                }
                true
            }
            Some(cur) if cur.n != spec.n => {
                return Err(Error::StreamOrder(format!(
                    "sector count changed from {} to {}",
                    cur.n, spec.n
                )));
            }
            Some(cur) if spec.sweep_id == cur.sweep_id && spec.index == cur.index + 1 => false,
            Some(cur)
                if spec.sweep_id > cur.sweep_id && spec.index == 0 && cur.index + 1 == cur.n =>
            {
                true
            }
            Some(cur) => {
                return Err(Error::StreamOrder(format!(
                    "sector ({}, {}) cannot follow ({}, {})",
                    spec.sweep_id, spec.index, cur.sweep_id, cur.index
                )));
            }
        };
        if new_sweep {
            self.trailing.iter_mut().for_each(|t| *t = None);
        }
        self.cursor = Some(next);
        Ok(new_sweep)
    }

    /// Pads `map` (this layer's input for the current sector) by the layer
    /// radius on both θ sides and records its last columns for the next
    /// sector. `leading` supplies warped previous-sweep context in
    /// bidirectional mode.
    pub fn pad_theta(
        &mut self,
        layer: usize,
        map: &FeatureMap,
        mode: PaddingMode,
        leading: Option<&WarpedMemory<'_>>,
    ) -> Result<FeatureMap> {
        let cursor = self
            .cursor
            .ok_or_else(|| Error::StreamOrder("pad_theta called before begin_sector".into()))?;
        let spec = *self
            .layers
            .get(layer)
            .ok_or_else(|| Error::config(format!("layer {layer} is not registered")))?;
        let p = spec.radius;
        if p > map.w() {
            return Err(Error::shape(
                "pad_theta sector width",
                format!(">= {p}"),
                map.w(),
            ));
        }
        let zeros = || FeatureMap::zeros(map.h(), p, map.c());
        let memory = match mode {
            PaddingMode::Bidirectional => leading,
            _ => None,
        };
        let low = match (mode, cursor.index, memory) {
            (PaddingMode::Zero, _, _) => zeros(),
            (_, 0, Some(mem)) => mem.trailing_wrap(layer, map, cursor.n)?,
            (_, 0, None) => zeros(),
            _ => match &self.trailing[layer] {
                Some(t) if t.h() == map.h() && t.c() == map.c() && t.w() == p => t.clone(),
                Some(t) => {
                    return Err(Error::shape(
                        "pad_theta stored columns",
                        format!("{} x {p} x {}", map.h(), map.c()),
                        format!("{:?}", t.shape()),
                    ))
                }
                None => {
                    return Err(Error::StreamOrder(format!(
                        "layer {layer} was not run for the preceding sector"
                    )))
                }
            },
        };
        let high = match memory {
            Some(mem) => mem.leading_pad(layer, map, cursor.index, cursor.n)?,
            None => zeros(),
        };
        let padded = FeatureMap::concat_cols(&[&low, map, &high])?;
        self.trailing[layer] = Some(map.slice_cols(map.w() - p, p)?);
        Ok(padded)
    }
}

/// Full-width layer inputs of one completed sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepMemory {
    pub sweep_id: u64,
    pub ego_pose: RigidMotion2D,
    pub layers: Vec<FeatureMap>,
}

/// Concatenates per-sector layer inputs (`sectors[index][layer]`) along θ in
/// scan order.
pub fn merge_full_sweep(
    sectors: &[Vec<FeatureMap>],
    sweep_id: u64,
    ego_pose: RigidMotion2D,
) -> Result<SweepMemory> {
    let first = sectors
        .first()
        .ok_or(Error::MissingSector { sweep_id, index: 0 })?;
    let layers = (0..first.len())
        .map(|l| {
            let maps: Vec<&FeatureMap> = sectors.iter().map(|s| &s[l]).collect();
            FeatureMap::concat_cols(&maps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepMemory {
        sweep_id,
        ego_pose,
        layers,
    })
}

/// Collects layer inputs while a sweep streams through.
#[derive(Clone, Debug)]
pub struct MemoryBuilder {
    sweep_id: u64,
    ego_pose: RigidMotion2D,
    slots: Vec<Vec<Option<FeatureMap>>>,
}

impl MemoryBuilder {
    pub fn new(sweep_id: u64, ego_pose: RigidMotion2D, n: usize, layers: usize) -> Self {
        Self {
            sweep_id,
            ego_pose,
            slots: vec![vec![None; layers]; n],
        }
    }

    pub fn sweep_id(&self) -> u64 {
        self.sweep_id
    }

    pub fn record(&mut self, index: usize, layer: usize, map: &FeatureMap) -> Result<()> {
        let slot = self
            .slots
            .get_mut(index)
            .and_then(|s| s.get_mut(layer))
            .ok_or_else(|| {
                Error::config(format!("no memory slot for sector {index} layer {layer}"))
            })?;
        *slot = Some(map.clone());
        Ok(())
    }

    pub fn finish(self) -> Result<SweepMemory> {
        let sweep_id = self.sweep_id;
        let mut sectors = Vec::with_capacity(self.slots.len());
        for (index, s) in self.slots.into_iter().enumerate() {
            sectors.push(
                s.into_iter()
                    .collect::<Option<Vec<_>>>()
                    .ok_or(Error::MissingSector { sweep_id, index })?,
            );
        }
        merge_full_sweep(&sectors, sweep_id, self.ego_pose)
    }
}

/// Snaps coordinates that are integral up to round-off.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-6 {
        r
    } else {
        v
    }
}

/// Warps the listed target columns of a full-sweep polar map. Each target
/// cell centre is mapped through `inverse(motion)`; the source is sampled
/// bilinearly, circularly in θ (one period is the map width) and as zero
/// outside `[r_min, r_max]`.
pub fn warp_polar_columns(
    map: &FeatureMap,
    motion: &RigidMotion2D,
    grid: &PolarGridSpec,
    cols: &[usize],
) -> Result<FeatureMap> {
    if (map.h(), map.w()) != (grid.n_r(), grid.n_theta()) {
        return Err(Error::shape(
            "warp_polar_map",
            format!("{} x {}", grid.n_r(), grid.n_theta()),
            format!("{} x {}", map.h(), map.w()),
        ));
    }
    if let Some(&bad) = cols.iter().find(|&&j| j >= map.w()) {
        return Err(Error::shape(
            "warp_polar_map column",
            format!("< {}", map.w()),
            bad,
        ));
    }
    if motion.is_identity() {
        return Ok(map.gather_cols(cols));
    }
    let inv = motion.inverse();
    let (h, w, c) = map.shape();
    let mut out = FeatureMap::zeros(h, cols.len(), c);
    for i in 0..h {
        for (oj, &j) in cols.iter().enumerate() {
            let (rt, tt) = grid.cell_center(CellIndex::new(i, j));
            let (x, y) = polar_cart(rt, tt);
            let (xs, ys) = inv.apply(x, y);
            let (rs, ts) = cart_polar(xs, ys);
            if !(rs >= grid.r_min() && rs <= grid.r_max()) {
                continue;
            }
            let u = snap(((rs - grid.r_min()) / grid.delta_r() - 0.5).clamp(0.0, (h - 1) as f64));
            let v = snap(j as f64 + wrap_angle(ts - tt) / grid.delta_theta());
            let (r0, fu) = (u.floor() as usize, (u - u.floor()) as f32);
            let r1 = (r0 + 1).min(h - 1);
            let v0 = v.floor();
            let fv = (v - v0) as f32;
            let c0 = (v0 as i64).rem_euclid(w as i64) as usize;
            let c1 = (c0 + 1) % w;
            let (a, b) = (map.pixel(r0, c0), map.pixel(r0, c1));
            let (d, e) = (map.pixel(r1, c0), map.pixel(r1, c1));
            let o = out.pixel_mut(i, oj);
            for ch in 0..c {
                let top = a[ch] + (b[ch] - a[ch]) * fv;
                let bot = d[ch] + (e[ch] - d[ch]) * fv;
                o[ch] = top + (bot - top) * fu;
            }
        }
    }
    Ok(out)
}

pub fn warp_polar_map(
    map: &FeatureMap,
    motion: &RigidMotion2D,
    grid: &PolarGridSpec,
) -> Result<FeatureMap> {
    let cols: Vec<usize> = (0..map.w()).collect();
    warp_polar_columns(map, motion, grid, &cols)
}

/// Previous-sweep memory seen from the current sweep.
#[derive(Clone, Copy, Debug)]
pub struct WarpedMemory<'a> {
    pub memory: &'a SweepMemory,
    /// Previous ego frame to current ego frame.
    pub motion: RigidMotion2D,
    /// Canvas-resolution full-sweep grid.
    pub grid: &'a PolarGridSpec,
    pub layers: &'a [PadLayer],
}

impl WarpedMemory<'_> {
    fn layer_view(
        &self,
        layer: usize,
        sector: &FeatureMap,
        n: usize,
    ) -> Result<(&FeatureMap, PolarGridSpec, usize)> {
        let spec = self
            .layers
            .get(layer)
            .ok_or_else(|| Error::config(format!("layer {layer} is not registered")))?;
        let full = self
            .memory
            .layers
            .get(layer)
            .ok_or_else(|| Error::config(format!("memory has no layer {layer}")))?;
        if full.w() != sector.w() * n || full.h() != sector.h() || full.c() != sector.c() {
            return Err(Error::shape(
                "sweep memory layer",
                format!("{} x {} x {}", sector.h(), sector.w() * n, sector.c()),
                format!("{:?}", full.shape()),
            ));
        }
        Ok((full, self.grid.downsample(spec.scale)?, spec.radius))
    }

    /// The `p` warped columns that follow sector `index`'s θ end, wrapping
    /// past the end of the sweep.
    pub fn leading_pad(
        &self,
        layer: usize,
        sector: &FeatureMap,
        index: usize,
        n: usize,
    ) -> Result<FeatureMap> {
        let (full, grid, p) = self.layer_view(layer, sector, n)?;
        let end = (index + 1) * sector.w();
        let cols: Vec<usize> = (0..p).map(|t| (end + t) % full.w()).collect();
        warp_polar_columns(full, &self.motion, &grid, &cols)
    }

    /// The `p` warped columns before the start of the sweep (its wrapped
    /// end), used as sector 0's trailing context.
    pub fn trailing_wrap(&self, layer: usize, sector: &FeatureMap, n: usize) -> Result<FeatureMap> {
        let (full, grid, p) = self.layer_view(layer, sector, n)?;
        let cols: Vec<usize> = (0..p).map(|t| full.w() - p + t).collect();
        warp_polar_columns(full, &self.motion, &grid, &cols)
    }
}

/// Free-standing form of [`WarpedMemory::leading_pad`]. With no memory the
/// pad is all zeros.
pub fn leading_pad(
    spec: &SectorSpec,
    layer: usize,
    sector: &FeatureMap,
    memory: Option<&SweepMemory>,
    motion: RigidMotion2D,
    grid: &PolarGridSpec,
    layers: &[PadLayer],
) -> Result<FeatureMap> {
    let p = layers
        .get(layer)
        .ok_or_else(|| Error::config(format!("layer {layer} is not registered")))?
        .radius;
    match memory {
        None => Ok(FeatureMap::zeros(sector.h(), p, sector.c())),
        Some(memory) => WarpedMemory {
            memory,
            motion,
            grid,
            layers,
        }
        .leading_pad(layer, sector, spec.index, spec.n),
    }
}

/// Owns the padding state of one stream: trailing buffers, the memory of
/// the sweep in progress and the completed previous sweep.
#[derive(Clone, Debug)]
pub struct ContextPadder {
    mode: PaddingMode,
    grid: PolarGridSpec,
    state: PadState,
    building: Option<MemoryBuilder>,
    memory: Option<SweepMemory>,
    motion: RigidMotion2D,
    index: usize,
}

impl ContextPadder {
    pub fn new(mode: PaddingMode, grid: PolarGridSpec, layers: Vec<PadLayer>) -> Self {
        Self {
            mode,
            grid,
            state: PadState::new(layers),
            building: None,
            memory: None,
            motion: RigidMotion2D::IDENTITY,
            index: 0,
        }
    }

    pub fn mode(&self) -> PaddingMode {
        self.mode
    }

    pub fn memory(&self) -> Option<&SweepMemory> {
        self.memory.as_ref()
    }

    /// Installs `memory` as the completed previous sweep, replacing any
    /// sweep still being recorded. Takes effect at the next sweep start.
    pub fn set_memory(&mut self, memory: SweepMemory) {
        self.building = None;
        self.memory = Some(memory);
    }

    /// Starts a sector whose sweep has ego pose `ego_pose` (world <- ego).
    pub fn begin_sector(&mut self, spec: &SectorSpec, ego_pose: RigidMotion2D) -> Result<()> {
        let new_sweep = self.state.begin_sector(spec)?;
        self.index = spec.index;
        if self.mode == PaddingMode::Bidirectional && new_sweep {
            if let Some(done) = self.building.take() {
                self.memory = Some(done.finish()?);
            }
            if let Some(mem) = &self.memory {
                self.motion = ego_pose.inverse().compose(&mem.ego_pose);
            }
            self.building = Some(MemoryBuilder::new(
                spec.sweep_id,
                ego_pose,
                spec.n,
                self.state.layers().len(),
            ));
        }
        Ok(())
    }

    pub fn pad(&mut self, layer: usize, map: &FeatureMap) -> Result<FeatureMap> {
        let layers = self.state.layers().to_vec();
        let warped = self.memory.as_ref().map(|memory| WarpedMemory {
            memory,
            motion: self.motion,
            grid: &self.grid,
            layers: &layers,
        });
        let padded = self
            .state
            .pad_theta(layer, map, self.mode, warped.as_ref())?;
        if let Some(b) = &mut self.building {
            b.record(self.index, layer, map)?;
        }
        Ok(padded)
    }
}

/// Column contamination bookkeeping for context padding compared against a
/// full-sweep run with zero θ padding at the sweep ends.
pub mod taint {
    use super::PaddingMode;

    /// Appends pad columns for sector `index` of `n`. Trailing context is
    /// clean for sector 0 and otherwise inherits the predecessor's stored
    /// columns (`stored`); leading context is clean only for the last sector.
    pub fn pad(
        mask: &[bool],
        p: usize,
        index: usize,
        n: usize,
        mode: PaddingMode,
        stored: Option<&[bool]>,
    ) -> Vec<bool> {
        let low: Vec<bool> = match (mode, index, stored) {
            (_, 0, _) => vec![false; p],
            (PaddingMode::Zero, _, _) | (_, _, None) => vec![true; p],
            (_, _, Some(s)) => s.to_vec(),
        };
        let high = vec![index + 1 != n; p];
        [low, mask.to_vec(), high].concat()
    }

    /// Mask of a valid-mode window sweep over an already padded mask.
    pub fn conv(padded: &[bool], k: usize, stride: usize) -> Vec<bool> {
        let out = (padded.len() - k) / stride + 1;
        (0..out)
            .map(|j| padded[j * stride..j * stride + k].iter().any(|&t| t))
            .collect()
    }

    /// Mask after half-pixel bilinear upsampling of a map padded by one
    /// column per side, cropped back to the unpadded extent.
    pub fn upsample(padded: &[bool], factor: usize) -> Vec<bool> {
        let inner = padded.len() - 2;
        (0..inner * factor)
            .map(|j| {
                let s = (j + factor) as f64 + 0.5;
                let src = s / factor as f64 - 0.5;
                let i0 = src.floor() as usize;
                padded[i0] || padded[(i0 + 1).min(padded.len() - 1)]
            })
            .collect()
    }

    /// Last `p` entries.
    pub fn tail(mask: &[bool], p: usize) -> Vec<bool> {
        mask[mask.len() - p..].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn spec(sweep: u64, index: usize, n: usize) -> SectorSpec {
        SectorSpec::new(sweep, index, n, &PolarGridSpec::full_sweep(), false).unwrap()
    }

    #[test]
    fn first_sector_trailing_is_zero_mode() {
        let mut rng = SeededRng::new(1);
        let m = FeatureMap::random(4, 6, 2, 0.5, 1.0, &mut rng);
        let mut st = PadState::new(vec![PadLayer {
            radius: 1,
            scale: 1,
        }]);
        st.begin_sector(&spec(0, 0, 2)).unwrap();
        let a = st.pad_theta(0, &m, PaddingMode::Trailing, None).unwrap();
        st.reset();
        st.begin_sector(&spec(0, 0, 2)).unwrap();
        let b = st.pad_theta(0, &m, PaddingMode::Zero, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.w(), 8);
    }

    #[test]
    fn trailing_pad_is_predecessor_tail() {
        let mut rng = SeededRng::new(2);
        let a = FeatureMap::random(3, 5, 2, -1.0, 1.0, &mut rng);
        let b = FeatureMap::random(3, 5, 2, -1.0, 1.0, &mut rng);
        let mut st = PadState::new(vec![PadLayer {
            radius: 1,
            scale: 1,
        }]);
        st.begin_sector(&spec(0, 0, 2)).unwrap();
        st.pad_theta(0, &a, PaddingMode::Trailing, None).unwrap();
        st.begin_sector(&spec(0, 1, 2)).unwrap();
        let padded = st.pad_theta(0, &b, PaddingMode::Trailing, None).unwrap();
        assert_eq!(
            padded.slice_cols(0, 1).unwrap(),
            a.slice_cols(4, 1).unwrap()
        );
        assert!(padded
            .slice_cols(6, 1)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn order_violations_are_rejected() {
        let mut st = PadState::new(vec![PadLayer {
            radius: 1,
            scale: 1,
        }]);
        assert!(st.begin_sector(&spec(0, 1, 4)).is_err());
        st.begin_sector(&spec(0, 0, 4)).unwrap();
        assert!(st.begin_sector(&spec(0, 0, 4)).is_err());
        assert!(st.begin_sector(&spec(0, 2, 4)).is_err());
        assert!(st.begin_sector(&spec(1, 0, 4)).is_err());
        st.begin_sector(&spec(0, 1, 4)).unwrap();
        st.begin_sector(&spec(0, 2, 4)).unwrap();
        st.begin_sector(&spec(0, 3, 4)).unwrap();
        assert!(st.begin_sector(&spec(0, 3, 4)).is_err());
        assert!(st.begin_sector(&spec(1, 0, 8)).is_err());
        st.begin_sector(&spec(1, 0, 4)).unwrap();
    }

    #[test]
    fn merge_places_sectors_by_index() {
        let mut rng = SeededRng::new(3);
        let maps: Vec<Vec<FeatureMap>> = (0..4)
            .map(|_| vec![FeatureMap::random(2, 3, 1, -1.0, 1.0, &mut rng)])
            .collect();
        let mem = merge_full_sweep(&maps, 0, RigidMotion2D::IDENTITY).unwrap();
        assert_eq!(mem.layers[0].w(), 12);
        for (j, m) in maps.iter().enumerate() {
            assert_eq!(mem.layers[0].slice_cols(3 * j, 3).unwrap(), m[0]);
        }
        let mut b = MemoryBuilder::new(7, RigidMotion2D::IDENTITY, 2, 1);
        b.record(0, 0, &maps[0][0]).unwrap();
        assert!(matches!(
            b.finish(),
            Err(Error::MissingSector {
                sweep_id: 7,
                index: 1
            })
        ));
    }

    fn coarse_grid() -> PolarGridSpec {
        PolarGridSpec::full_sweep().downsample(8).unwrap()
    }

    #[test]
    fn identity_warp_is_exact() {
        let g = coarse_grid();
        let mut rng = SeededRng::new(4);
        let m = FeatureMap::random(64, 64, 2, -1.0, 1.0, &mut rng);
        assert_eq!(warp_polar_map(&m, &RigidMotion2D::IDENTITY, &g).unwrap(), m);
        // A zero-yaw zero-shift motion built by composition still warps exactly.
        let m2 = RigidMotion2D::new(0.3, 1.0, 2.0);
        let near_id = m2.compose(&m2.inverse());
        let w = warp_polar_map(&m, &near_id, &g).unwrap();
        assert!(w.max_abs_diff(&m).unwrap() < 1e-5);
    }

    #[test]
    fn yaw_by_whole_columns_shifts() {
        let g = coarse_grid();
        let mut rng = SeededRng::new(5);
        let m = FeatureMap::random(64, 64, 1, -1.0, 1.0, &mut rng);
        let w =
            warp_polar_map(&m, &RigidMotion2D::new(3.0 * g.delta_theta(), 0.0, 0.0), &g).unwrap();
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(w.get(i, j, 0), m.get(i, (j + 64 - 3) % 64, 0));
            }
        }
    }

    #[test]
    fn far_translation_empties_map() {
        let g = coarse_grid();
        let m = FeatureMap::from_vec(64, 64, 1, vec![1.0; 4096]).unwrap();
        let w = warp_polar_map(&m, &RigidMotion2D::new(0.0, 200.0, 0.0), &g).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn leading_pad_wraps_and_defaults_to_zero() {
        let full = PolarGridSpec::full_sweep();
        let mut rng = SeededRng::new(6);
        let layers = [PadLayer {
            radius: 2,
            scale: 8,
        }];
        let m = FeatureMap::random(64, 64, 1, -1.0, 1.0, &mut rng);
        let mem = SweepMemory {
            sweep_id: 0,
            ego_pose: RigidMotion2D::IDENTITY,
            layers: vec![m.clone()],
        };
        let sector = m.slice_cols(48, 16).unwrap();
        let s = spec(1, 3, 4);
        let pad = leading_pad(
            &s,
            0,
            &sector,
            Some(&mem),
            RigidMotion2D::IDENTITY,
            &full,
            &layers,
        )
        .unwrap();
        assert_eq!(pad, m.slice_cols(0, 2).unwrap());
        let s1 = spec(1, 1, 4);
        let pad = leading_pad(
            &s1,
            0,
            &sector,
            Some(&mem),
            RigidMotion2D::IDENTITY,
            &full,
            &layers,
        )
        .unwrap();
        assert_eq!(pad, m.slice_cols(32, 2).unwrap());
        let none = leading_pad(
            &s,
            0,
            &sector,
            None,
            RigidMotion2D::IDENTITY,
            &full,
            &layers,
        )
        .unwrap();
        assert!(none.data().iter().all(|&v| v == 0.0) && none.w() == 2);
    }

    #[test]
    fn taint_of_single_conv() {
        // n = 2, 4 columns per sector, one 3x3 conv.
        let clean = vec![false; 4];
        let s0 = taint::conv(
            &taint::pad(&clean, 1, 0, 2, PaddingMode::Trailing, None),
            3,
            1,
        );
        assert_eq!(s0, vec![false, false, false, true]);
        let stored = taint::tail(&clean, 1);
        let s1 = taint::conv(
            &taint::pad(&clean, 1, 1, 2, PaddingMode::Trailing, Some(&stored)),
            3,
            1,
        );
        assert_eq!(s1, vec![false; 4]);
        let up = taint::upsample(&[false, false, true], 2);
        assert_eq!(up, vec![false, true]);
    }
}
