//! Reference network: six-conv backbone with multi-scale fusion, the
//! classification, offset, regression and segmentation heads, and its
//! named-tensor weight layout.

use std::sync::{Arc, Mutex};

use crate::context::{taint, ContextPadder, PadLayer, PaddingMode};
use crate::error::{Error, Result};
use crate::formats::{Tensor, TensorMap};
use crate::geometry::PolarGridSpec;
use crate::pillars::{PillarEncoderParams, DEFAULT_CHANNELS, POINT_FEATURES};
use crate::polar_layers::{
    apply_undistortion, apply_undistortion_lazy, build_undistortion_plan, partition_rows,
    stratified_conv, stratified_norm_apply, LearnedUndistortion, ModulationNet, QueryGrid,
    StratifiedConvParams, StratifiedNormParams, UndistortionMode, UndistortionPlan,
};
use crate::rng::SeededRng;
use crate::tensor::{
    bilinear_upsample, concat_channels, conv2d, norm_apply, norm_fit, relu_in_place, ColumnPadding,
    Conv2d, FeatureMap, NormParams,
};

use super::{HeatmapGrid, REG_CHANNELS, SEG_CLASSES, THING_CLASSES};

/// θ padding source for the network's padded layers.
pub trait ThetaPad {
    /// `map` with `PAD_LAYERS[layer].radius` context columns on each θ side.
    fn pad(&mut self, layer: usize, map: &FeatureMap) -> Result<FeatureMap>;
}

impl ThetaPad for ContextPadder {
    fn pad(&mut self, layer: usize, map: &FeatureMap) -> Result<FeatureMap> {
        ContextPadder::pad(self, layer, map)
    }
}

/// Zero columns on both sides.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPad;

impl ThetaPad for ZeroPad {
    fn pad(&mut self, layer: usize, map: &FeatureMap) -> Result<FeatureMap> {
        let p = PAD_LAYERS
            .get(layer)
            .ok_or_else(|| Error::config(format!("layer {layer} is not registered")))?
            .radius;
        let z = FeatureMap::zeros(map.h(), p, map.c());
        FeatureMap::concat_cols(&[&z, map, &z])
    }
}

const fn layer(scale: usize) -> PadLayer {
    PadLayer { radius: 1, scale }
}

/// Padded layers in execution order: six backbone convs, the two upsampling
/// steps, then the shared, heatmap, offset and regression head convs.
pub const PAD_LAYERS: [PadLayer; 12] = [
    layer(1),
    layer(1),
    layer(1),
    layer(2),
    layer(2),
    layer(4),
    layer(2),
    layer(4),
    layer(1),
    layer(1),
    layer(1),
    layer(1),
];

pub const BACKBONE_STRIDES: [usize; 6] = [1, 1, 2, 1, 2, 1];
const UPSAMPLE_LAYERS: [usize; 2] = [6, 7];
const SHARED_LAYER: usize = 8;
const HEATMAP_LAYER: usize = 9;
const OFFSET_LAYER: usize = 10;
const REG_LAYER: usize = 11;

pub fn pad_layers() -> Vec<PadLayer> {
    PAD_LAYERS.to_vec()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub encoder_channels: usize,
    /// Channels of the stride 1, 2 and 4 stages.
    pub widths: [usize; 3],
    pub head_channels: usize,
    pub strata: usize,
    pub heatmap_instance_norm: bool,
    pub learned_undistortion: bool,
    pub modulation_hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder_channels: DEFAULT_CHANNELS,
            widths: [32, 64, 128],
            head_channels: 64,
            strata: 8,
            heatmap_instance_norm: true,
            learned_undistortion: true,
            modulation_hidden: 8,
        }
    }
}

impl NetConfig {
    /// Small widths for tests and quick runs.
    pub fn narrow(width: usize) -> Self {
        Self {
            encoder_channels: width,
            widths: [width; 3],
            head_channels: width,
            ..Self::default()
        }
    }

    fn fused_channels(&self) -> usize {
        self.widths.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv2d,
    pub norm: NormParams,
}

impl ConvBlock {
    fn forward(&self, padded: &FeatureMap) -> Result<FeatureMap> {
        let mut x = norm_apply(
            &conv2d(padded, &self.conv, ColumnPadding::Provided)?,
            &self.norm,
        )?;
        relu_in_place(&mut x);
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetHead {
    pub conv0: StratifiedConvParams,
    pub norm: StratifiedNormParams,
    pub conv1: StratifiedConvParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegHead {
    pub conv0: Conv2d,
    pub norm: NormParams,
    pub conv1: Conv2d,
}

/// Stage outputs at strides 1, 2 and 4 and their fusion at stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneOutputs {
    pub stages: [FeatureMap; 3],
    pub fused: FeatureMap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetOutputs {
    /// Raw class logits on the heatmap grid.
    pub heatmap: FeatureMap,
    /// `REG_CHANNELS` regression maps on the polar grid.
    pub reg: FeatureMap,
    pub seg: FeatureMap,
}

type PlanKey = (PolarGridSpec, HeatmapGrid);

/// Cached undistortion plans, one per (source grid, heatmap grid).
#[derive(Debug, Default)]
pub struct HeadPlan {
    plans: Mutex<Vec<(PlanKey, Arc<UndistortionPlan>)>>,
}

impl HeadPlan {
    fn get_or_build(&self, key: PlanKey, mode: &UndistortionMode) -> Result<Arc<UndistortionPlan>> {
        let mut plans = self.plans.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, p)) = plans.iter().find(|(k, _)| *k == key) {
            return Ok(p.clone());
        }
        let plan = Arc::new(build_undistortion_plan(
            &key.0,
            &query_grid(&key.0, &key.1),
            mode,
        )?);
        plans.push((key, plan.clone()));
        Ok(plan)
    }
}

fn query_grid(src: &PolarGridSpec, heat_grid: &HeatmapGrid) -> QueryGrid {
    match heat_grid {
        HeatmapGrid::Polar => QueryGrid::polar(src),
        HeatmapGrid::Cartesian(c) => QueryGrid::cartesian(c, src),
    }
}

#[derive(Debug)]
pub struct ReferenceNet {
    cfg: NetConfig,
    pub encoder: PillarEncoderParams,
    pub backbone: Vec<ConvBlock>,
    pub shared_conv: Conv2d,
    pub shared_norm: StratifiedNormParams,
    pub heatmap: Conv2d,
    pub undistortion: UndistortionMode,
    pub offset: OffsetHead,
    pub reg: RegHead,
    pub seg: Conv2d,
    plans: HeadPlan,
}

impl Clone for ReferenceNet {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            encoder: self.encoder.clone(),
            backbone: self.backbone.clone(),
            shared_conv: self.shared_conv.clone(),
            shared_norm: self.shared_norm.clone(),
            heatmap: self.heatmap.clone(),
            undistortion: self.undistortion.clone(),
            offset: self.offset.clone(),
            reg: self.reg.clone(),
            seg: self.seg.clone(),
            plans: HeadPlan::default(),
        }
    }
}

fn seeded_norm(c: usize, rng: &mut SeededRng) -> NormParams {
    let mut n = NormParams::identity(c);
    for ch in 0..c {
        n.gamma[ch] = rng.uniform_f32(0.8, 1.2);
        n.beta[ch] = rng.uniform_f32(-0.1, 0.1);
        n.mean[ch] = rng.uniform_f32(-0.1, 0.1);
        n.var[ch] = rng.uniform_f32(0.8, 1.2);
    }
    n
}

fn seeded_conv(k: usize, c_in: usize, c_out: usize, stride: usize, rng: &mut SeededRng) -> Conv2d {
    let base = Conv2d::seeded(k, c_in, c_out, stride, rng);
    let bias = (0..c_out).map(|_| rng.uniform_f32(-0.05, 0.05)).collect();
    Conv2d::new(k, c_in, c_out, stride, base.weights().to_vec(), bias).expect("valid geometry")
}

impl ReferenceNet {
    pub fn seeded(cfg: NetConfig, seed: u64) -> Result<Self> {
        validate_config(&cfg)?;
        let mut rng = SeededRng::new(seed);
        let encoder = PillarEncoderParams::seeded(cfg.encoder_channels, &mut rng);
        let [c1, c2, c3] = cfg.widths;
        let ins = [cfg.encoder_channels, c1, c1, c2, c2, c3];
        let outs = [c1, c1, c2, c2, c3, c3];
        let backbone = (0..6)
            .map(|i| ConvBlock {
                conv: seeded_conv(3, ins[i], outs[i], BACKBONE_STRIDES[i], &mut rng),
                norm: seeded_norm(outs[i], &mut rng),
            })
            .collect();
        let (f, ch, s) = (cfg.fused_channels(), cfg.head_channels, cfg.strata);
        let shared_conv = seeded_conv(3, f, ch, 1, &mut rng);
        let shared_norm = StratifiedNormParams {
            strata: (0..s).map(|_| seeded_norm(ch, &mut rng)).collect(),
        };
        let heatmap = seeded_conv(3, ch, THING_CLASSES, 1, &mut rng);
        let undistortion = if cfg.learned_undistortion {
            UndistortionMode::Learned(LearnedUndistortion::seeded(cfg.modulation_hidden, &mut rng))
        } else {
            UndistortionMode::Oracle
        };
        let strat = |k, ci, co, rng: &mut SeededRng| {
            StratifiedConvParams::new((0..s).map(|_| seeded_conv(k, ci, co, 1, rng)).collect())
                .expect("valid")
        };
        let offset = OffsetHead {
            conv0: strat(3, ch, ch, &mut rng),
            norm: StratifiedNormParams {
                strata: (0..s).map(|_| seeded_norm(ch, &mut rng)).collect(),
            },
            conv1: strat(1, ch, 2, &mut rng),
        };
        let reg = RegHead {
            conv0: seeded_conv(3, ch, ch, 1, &mut rng),
            norm: seeded_norm(ch, &mut rng),
            conv1: seeded_conv(1, ch, REG_CHANNELS - 2, 1, &mut rng),
        };
        let seg = seeded_conv(1, cfg.encoder_channels + f, SEG_CLASSES, 1, &mut rng);
        Ok(Self {
            cfg,
            encoder,
            backbone,
            shared_conv,
            shared_norm,
            heatmap,
            undistortion,
            offset,
            reg,
            seg,
            plans: HeadPlan::default(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// Backbone with θ padding before every convolution and before each
    /// upsampling step.
    pub fn backbone(&self, canvas: &FeatureMap, pad: &mut dyn ThetaPad) -> Result<BackboneOutputs> {
        if canvas.c() != self.cfg.encoder_channels {
            return Err(Error::shape(
                "backbone input channels",
                self.cfg.encoder_channels,
                canvas.c(),
            ));
        }
        if canvas.h() % 4 != 0 || canvas.w() % 4 != 0 {
            return Err(Error::shape(
                "backbone input extent",
                "multiples of 4",
                format!("{} x {}", canvas.h(), canvas.w()),
            ));
        }
        let mut x = canvas.clone();
        let mut stages = Vec::with_capacity(3);
        for (i, block) in self.backbone.iter().enumerate() {
            x = block.forward(&pad.pad(i, &x)?)?;
            if i % 2 == 1 {
                stages.push(x.clone());
            }
        }
        let up2 = upsample_padded(pad, UPSAMPLE_LAYERS[0], &stages[1], 2)?;
        let up3 = upsample_padded(pad, UPSAMPLE_LAYERS[1], &stages[2], 4)?;
        let fused = concat_channels(&concat_channels(&stages[0], &up2)?, &up3)?;
        let stages: [FeatureMap; 3] = stages.try_into().expect("three stages");
        Ok(BackboneOutputs { stages, fused })
    }

    /// Full forward pass of one sector. `grid` is the sector's polar grid.
    pub fn forward(
        &self,
        canvas: &FeatureMap,
        grid: &PolarGridSpec,
        heat_grid: &HeatmapGrid,
        pad: &mut dyn ThetaPad,
    ) -> Result<NetOutputs> {
        if (canvas.h(), canvas.w()) != (grid.n_r(), grid.n_theta()) {
            return Err(Error::shape(
                "forward canvas",
                format!("{} x {}", grid.n_r(), grid.n_theta()),
                format!("{} x {}", canvas.h(), canvas.w()),
            ));
        }
        let bb = self.backbone(canvas, pad)?;
        let partition = partition_rows(canvas.h(), self.cfg.strata)?;

        let shared = conv2d(
            &pad.pad(SHARED_LAYER, &bb.fused)?,
            &self.shared_conv,
            ColumnPadding::Provided,
        )?;
        let mut shared = stratified_norm_apply(&shared, &self.shared_norm, &partition)?;
        relu_in_place(&mut shared);

        let logits = conv2d(
            &pad.pad(HEATMAP_LAYER, &shared)?,
            &self.heatmap,
            ColumnPadding::Provided,
        )?;
        let mut heatmap = match &self.undistortion {
            UndistortionMode::Oracle => apply_undistortion_lazy(
                &logits,
                grid,
                &query_grid(grid, heat_grid),
                &UndistortionMode::Oracle,
            )?,
            mode => apply_undistortion(
                &logits,
                &*self.plans.get_or_build((*grid, *heat_grid), mode)?,
            )?,
        };
        if self.cfg.heatmap_instance_norm {
            heatmap = norm_apply(&heatmap, &norm_fit(&heatmap))?;
        }

        let off = stratified_conv(
            &pad.pad(OFFSET_LAYER, &shared)?,
            &self.offset.conv0,
            &partition,
            ColumnPadding::Provided,
        )?;
        let mut off = stratified_norm_apply(&off, &self.offset.norm, &partition)?;
        relu_in_place(&mut off);
        let off = stratified_conv(&off, &self.offset.conv1, &partition, ColumnPadding::Zero)?;

        let r = conv2d(
            &pad.pad(REG_LAYER, &shared)?,
            &self.reg.conv0,
            ColumnPadding::Provided,
        )?;
        let mut r = norm_apply(&r, &self.reg.norm)?;
        relu_in_place(&mut r);
        let r = conv2d(&r, &self.reg.conv1, ColumnPadding::Zero)?;

        let seg = conv2d(
            &concat_channels(canvas, &bb.fused)?,
            &self.seg,
            ColumnPadding::Zero,
        )?;
        Ok(NetOutputs {
            heatmap,
            reg: concat_channels(&off, &r)?,
            seg,
        })
    }

    /// Columns of each sector's stage outputs that can differ from a
    /// full-sweep zero-padded run, for a canvas `width` columns wide split
    /// into `n` sectors. Entry `[index]` holds the three stage masks and the
    /// fused mask.
    pub fn taint(
        width: usize,
        n: usize,
        mode: PaddingMode,
    ) -> Result<Vec<([Vec<bool>; 3], Vec<bool>)>> {
        if n == 0 || width % (4 * n) != 0 {
            return Err(Error::config(format!(
                "{width} columns cannot be split into {n} stride-aligned sectors"
            )));
        }
        let w = width / n;
        let mut stored: Vec<Option<Vec<bool>>> = vec![None; PAD_LAYERS.len()];
        let mut out = Vec::with_capacity(n);
        for index in 0..n {
            let mut padded = |layer: usize, mask: &[bool]| {
                let p = PAD_LAYERS[layer].radius;
                let m = taint::pad(mask, p, index, n, mode, stored[layer].as_deref());
                stored[layer] = Some(taint::tail(mask, p));
                m
            };
            let mut x = vec![false; w];
            let mut stages = Vec::new();
            for (i, &s) in BACKBONE_STRIDES.iter().enumerate() {
                x = taint::conv(&padded(i, &x), 3, s);
                if i % 2 == 1 {
                    stages.push(x.clone());
                }
            }
            let up2 = taint::upsample(&padded(UPSAMPLE_LAYERS[0], &stages[1]), 2);
            let up3 = taint::upsample(&padded(UPSAMPLE_LAYERS[1], &stages[2]), 4);
            let fused = (0..w).map(|j| stages[0][j] || up2[j] || up3[j]).collect();
            out.push((stages.try_into().expect("three stages"), fused));
        }
        Ok(out)
    }

    /// Parameters by name.
    pub fn to_tensors(&self) -> TensorMap {
        let mut m = TensorMap::new();
        let mut put = |name: String, dims: Vec<usize>, data: &[f32]| {
            m.insert(
                name,
                Tensor::new(dims, data.to_vec()).expect("consistent dims"),
            );
        };
        put(
            "encoder.weight".into(),
            vec![self.encoder.channels(), POINT_FEATURES],
            self.encoder.weights(),
        );
        put(
            "encoder.bias".into(),
            vec![self.encoder.channels()],
            self.encoder.bias(),
        );
        let mut tensors = Vec::new();
        for (i, b) in self.backbone.iter().enumerate() {
            conv_tensors(&mut tensors, &format!("backbone.{i}"), &b.conv);
            norm_tensors(&mut tensors, &format!("backbone.{i}.norm"), &b.norm);
        }
        conv_tensors(&mut tensors, "head.shared", &self.shared_conv);
        for (k, n) in self.shared_norm.strata.iter().enumerate() {
            norm_tensors(&mut tensors, &format!("head.shared.norm.{k}"), n);
        }
        conv_tensors(&mut tensors, "head.heatmap", &self.heatmap);
        if let UndistortionMode::Learned(l) = &self.undistortion {
            tensors.push((
                "head.undistort.kernel".into(),
                vec![3, 3],
                l.kernel.to_vec(),
            ));
            for (tag, net) in [("g", &l.g), ("q", &l.q)] {
                conv_tensors(
                    &mut tensors,
                    &format!("head.undistort.{tag}.conv3"),
                    &net.conv3,
                );
                conv_tensors(
                    &mut tensors,
                    &format!("head.undistort.{tag}.conv1"),
                    &net.conv1,
                );
            }
        }
        for (k, c) in self.offset.conv0.kernels().iter().enumerate() {
            conv_tensors(&mut tensors, &format!("head.offset.conv0.{k}"), c);
        }
        for (k, n) in self.offset.norm.strata.iter().enumerate() {
            norm_tensors(&mut tensors, &format!("head.offset.norm.{k}"), n);
        }
        for (k, c) in self.offset.conv1.kernels().iter().enumerate() {
            conv_tensors(&mut tensors, &format!("head.offset.conv1.{k}"), c);
        }
        conv_tensors(&mut tensors, "head.reg.conv0", &self.reg.conv0);
        norm_tensors(&mut tensors, "head.reg.norm", &self.reg.norm);
        conv_tensors(&mut tensors, "head.reg.conv1", &self.reg.conv1);
        conv_tensors(&mut tensors, "head.seg", &self.seg);
        for (name, dims, data) in tensors {
            put(name, dims, &data);
        }
        m
    }

    /// Rebuilds a network from [`Self::to_tensors`] output; widths, stratum
    /// count and undistortion mode are read off the tensors.
    pub fn from_tensors(m: &TensorMap, heatmap_instance_norm: bool) -> Result<Self> {
        let enc_w = get(m, "encoder.weight")?;
        if enc_w.dims.len() != 2 || enc_w.dims[1] != POINT_FEATURES {
            return Err(Error::format("PSWT", "encoder.weight must be [C, 17]"));
        }
        let encoder = PillarEncoderParams::new(
            enc_w.dims[0],
            enc_w.data.clone(),
            get(m, "encoder.bias")?.data.clone(),
        )?;
        let backbone = (0..6)
            .map(|i| {
                Ok(ConvBlock {
                    conv: take_conv(m, &format!("backbone.{i}"), BACKBONE_STRIDES[i])?,
                    norm: take_norm(m, &format!("backbone.{i}.norm"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let strata = (0..)
            .take_while(|k| m.contains_key(&format!("head.shared.norm.{k}.gamma")))
            .count();
        let shared_norm = StratifiedNormParams {
            strata: (0..strata)
                .map(|k| take_norm(m, &format!("head.shared.norm.{k}")))
                .collect::<Result<_>>()?,
        };
        let undistortion = if m.contains_key("head.undistort.kernel") {
            let k = get(m, "head.undistort.kernel")?;
            let kernel: [f32; 9] =
                k.data.clone().try_into().map_err(|_| {
                    Error::format("PSWT", "head.undistort.kernel must hold 9 values")
                })?;
            let net = |tag: &str| -> Result<ModulationNet> {
                ModulationNet::new(
                    take_conv(m, &format!("head.undistort.{tag}.conv3"), 1)?,
                    take_conv(m, &format!("head.undistort.{tag}.conv1"), 1)?,
                )
            };
            UndistortionMode::Learned(LearnedUndistortion {
                kernel,
                g: net("g")?,
                q: net("q")?,
            })
        } else {
            UndistortionMode::Oracle
        };
        let strat_conv = |prefix: &str| -> Result<StratifiedConvParams> {
            StratifiedConvParams::new(
                (0..strata)
                    .map(|k| take_conv(m, &format!("{prefix}.{k}"), 1))
                    .collect::<Result<_>>()?,
            )
        };
        let offset = OffsetHead {
            conv0: strat_conv("head.offset.conv0")?,
            norm: StratifiedNormParams {
                strata: (0..strata)
                    .map(|k| take_norm(m, &format!("head.offset.norm.{k}")))
                    .collect::<Result<_>>()?,
            },
            conv1: strat_conv("head.offset.conv1")?,
        };
        let reg = RegHead {
            conv0: take_conv(m, "head.reg.conv0", 1)?,
            norm: take_norm(m, "head.reg.norm")?,
            conv1: take_conv(m, "head.reg.conv1", 1)?,
        };
        let shared_conv = take_conv(m, "head.shared", 1)?;
        let modulation_hidden = match &undistortion {
            UndistortionMode::Learned(l) => l.g.conv3.c_out(),
            UndistortionMode::Oracle => NetConfig::default().modulation_hidden,
        };
        let cfg = NetConfig {
            encoder_channels: encoder.channels(),
            widths: [
                backbone[1].conv.c_out(),
                backbone[3].conv.c_out(),
                backbone[5].conv.c_out(),
            ],
            head_channels: shared_conv.c_out(),
            strata,
            heatmap_instance_norm,
            learned_undistortion: matches!(undistortion, UndistortionMode::Learned(_)),
            modulation_hidden,
        };
        let net = Self {
            cfg,
            encoder,
            backbone,
            shared_conv,
            shared_norm,
            heatmap: take_conv(m, "head.heatmap", 1)?,
            undistortion,
            offset,
            reg,
            seg: take_conv(m, "head.seg", 1)?,
            plans: HeadPlan::default(),
        };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        validate_config(&self.cfg)?;
        let [c1, c2, c3] = self.cfg.widths;
        let ins = [self.cfg.encoder_channels, c1, c1, c2, c2, c3];
        let outs = [c1, c1, c2, c2, c3, c3];
        let ch = self.cfg.head_channels;
        let f = self.cfg.fused_channels();
        let mut checks = Vec::new();
        for (i, b) in self.backbone.iter().enumerate() {
            checks.push((format!("backbone.{i}"), &b.conv, 3, ins[i], outs[i]));
        }
        checks.push(("head.shared".into(), &self.shared_conv, 3, f, ch));
        checks.push(("head.heatmap".into(), &self.heatmap, 3, ch, THING_CLASSES));
        for c in self.offset.conv0.kernels() {
            checks.push(("head.offset.conv0".into(), c, 3, ch, ch));
        }
        for c in self.offset.conv1.kernels() {
            checks.push(("head.offset.conv1".into(), c, 1, ch, 2));
        }
        checks.push(("head.reg.conv0".into(), &self.reg.conv0, 3, ch, ch));
        checks.push((
            "head.reg.conv1".into(),
            &self.reg.conv1,
            1,
            ch,
            REG_CHANNELS - 2,
        ));
        checks.push((
            "head.seg".into(),
            &self.seg,
            1,
            self.cfg.encoder_channels + f,
            SEG_CLASSES,
        ));
        for (name, c, k, ci, co) in checks {
            if (c.kernel(), c.c_in(), c.c_out()) != (k, ci, co) {
                return Err(Error::format(
                    "PSWT",
                    format!(
                        "{name} has shape {}x{}x{}x{}, expected {k}x{k}x{ci}x{co}",
                        c.kernel(),
                        c.kernel(),
                        c.c_in(),
                        c.c_out()
                    ),
                ));
            }
        }
        let norms = self
            .backbone
            .iter()
            .map(|b| (&b.norm, b.conv.c_out()))
            .chain(self.shared_norm.strata.iter().map(|n| (n, ch)))
            .chain(self.offset.norm.strata.iter().map(|n| (n, ch)))
            .chain(std::iter::once((&self.reg.norm, ch)));
        for (n, c) in norms {
            n.validate()?;
            if n.channels() != c {
                return Err(Error::format(
                    "PSWT",
                    format!("normalisation has {} channels, expected {c}", n.channels()),
                ));
            }
        }
        Ok(())
    }
}

fn validate_config(cfg: &NetConfig) -> Result<()> {
    if cfg.encoder_channels == 0 || cfg.widths.contains(&0) || cfg.head_channels == 0 {
        return Err(Error::config("network widths must be positive"));
    }
    if cfg.strata == 0 {
        return Err(Error::config("stratum count must be positive"));
    }
    Ok(())
}

/// Bilinear upsampling of a sector map using one column of θ context per
/// side, cropped back to the sector's extent.
fn upsample_padded(
    pad: &mut dyn ThetaPad,
    layer: usize,
    map: &FeatureMap,
    factor: usize,
) -> Result<FeatureMap> {
    let padded = pad.pad(layer, map)?;
    let p = (padded.w() - map.w()) / 2;
    bilinear_upsample(&padded, factor)?.slice_cols(p * factor, map.w() * factor)
}

type NamedTensor = (String, Vec<usize>, Vec<f32>);

fn conv_tensors(out: &mut Vec<NamedTensor>, prefix: &str, c: &Conv2d) {
    out.push((
        format!("{prefix}.weight"),
        vec![c.kernel(), c.kernel(), c.c_in(), c.c_out()],
        c.weights().to_vec(),
    ));
    out.push((format!("{prefix}.bias"), vec![c.c_out()], c.bias().to_vec()));
}

fn norm_tensors(out: &mut Vec<NamedTensor>, prefix: &str, n: &NormParams) {
    for (tag, v) in [
        ("gamma", &n.gamma),
        ("beta", &n.beta),
        ("mean", &n.mean),
        ("var", &n.var),
    ] {
        out.push((format!("{prefix}.{tag}"), vec![v.len()], v.clone()));
    }
}

fn get<'a>(m: &'a TensorMap, name: &str) -> Result<&'a Tensor> {
    m.get(name)
        .ok_or_else(|| Error::format("PSWT", format!("missing tensor {name}")))
}

fn take_conv(m: &TensorMap, prefix: &str, stride: usize) -> Result<Conv2d> {
    let w = get(m, &format!("{prefix}.weight"))?;
    if w.dims.len() != 4 || w.dims[0] != w.dims[1] {
        return Err(Error::format(
            "PSWT",
            format!("{prefix}.weight must be [k, k, c_in, c_out]"),
        ));
    }
    Conv2d::new(
        w.dims[0],
        w.dims[2],
        w.dims[3],
        stride,
        w.data.clone(),
        get(m, &format!("{prefix}.bias"))?.data.clone(),
    )
}

fn take_norm(m: &TensorMap, prefix: &str) -> Result<NormParams> {
    let v = |tag: &str| get(m, &format!("{prefix}.{tag}")).map(|t| t.data.clone());
    let n = NormParams {
        gamma: v("gamma")?,
        beta: v("beta")?,
        mean: v("mean")?,
        var: v("var")?,
        eps: 1e-5,
    };
    n.validate()?;
    Ok(n)
}

/// One sector through `net`; see [`ReferenceNet::forward`].
pub fn forward_backbone(
    net: &ReferenceNet,
    canvas: &FeatureMap,
    grid: &PolarGridSpec,
    heat_grid: &HeatmapGrid,
    pad: &mut dyn ThetaPad,
) -> Result<NetOutputs> {
    net.forward(canvas, grid, heat_grid, pad)
}
