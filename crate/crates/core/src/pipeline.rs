//! End-to-end streaming run over a scene: accumulate, slice, pillarize,
//! run heads, decode, stateful NMS and panoptic fusion.

use std::time::Instant;

use crate::context::{ContextPadder, PaddingMode};
use crate::error::{Error, Result};
use crate::formats::{PointLabel, PredictionFile, SweepPrediction, FORMAT_VERSION};
use crate::geometry::{CartesianGridSpec, Grid, LidarPoint, PolarGridSpec};
use crate::heads::{
    decode, pad_layers, segment_points, DecodeConfig, DecodedBox, HeatmapGrid, NetOutputs,
    ReferenceNet, IGNORE_LABEL,
};
use crate::metrics::{eval_detection, eval_panoptic, eval_segmentation, EvalReport};
use crate::pillars::pillarize;
use crate::polar_layers::{apply_undistortion_lazy, QueryGrid, UndistortionMode};
use crate::postprocess::{
    panoptic_fuse, stateful_nms, FusionMode, NmsConfig, NmsState, PanopticConfig, StatefulFusion,
};
use crate::stream::{accumulate, slice_sweep, AccumulationConfig, Sector};
use crate::synth::{oracle_outputs, SynthScene};

pub const CARTESIAN_HEATMAP_CELL: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapKind {
    Polar,
    Cartesian,
}

impl HeatmapKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Polar => "polar",
            Self::Cartesian => "cartesian",
        }
    }

    /// Heatmap grid of a sector; the cartesian grid encloses its wedge.
    pub fn grid(&self, sector: &PolarGridSpec) -> Result<HeatmapGrid> {
        Ok(match self {
            Self::Polar => HeatmapGrid::Polar,
            Self::Cartesian => HeatmapGrid::Cartesian(CartesianGridSpec::enclosing_wedge(
                sector,
                sector.r_max(),
                CARTESIAN_HEATMAP_CELL,
            )?),
        })
    }
}

impl std::str::FromStr for HeatmapKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polar" => Ok(Self::Polar),
            "cartesian" => Ok(Self::Cartesian),
            other => Err(Error::config(format!("unknown heatmap grid '{other}'"))),
        }
    }
}

pub fn padding_name(mode: PaddingMode) -> &'static str {
    match mode {
        PaddingMode::Zero => "zero",
        PaddingMode::Trailing => "trailing",
        PaddingMode::Bidirectional => "bidirectional",
    }
}

/// Source of head outputs.
#[derive(Clone, Debug)]
pub enum Heads {
    /// Perfect outputs built from the scene's labels and boxes.
    Oracle,
    Network(Box<ReferenceNet>),
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub sectors: usize,
    pub canonicalize: bool,
    pub padding: PaddingMode,
    pub heatmap: HeatmapKind,
    pub accumulation: AccumulationConfig,
    pub decode: DecodeConfig,
    pub nms: NmsConfig,
    pub panoptic: PanopticConfig,
    pub grid: PolarGridSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sectors: 1,
            canonicalize: true,
            padding: PaddingMode::Bidirectional,
            heatmap: HeatmapKind::Polar,
            accumulation: AccumulationConfig {
                history_sweeps: 1,
                sweep_period_s: 0.05,
            },
            decode: DecodeConfig::default(),
            nms: NmsConfig::default(),
            panoptic: PanopticConfig::default(),
            grid: PolarGridSpec::full_sweep(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub predictions: PredictionFile,
    /// Wall-clock processing time of every sector in stream order.
    pub sector_ms: Vec<f64>,
}

fn sigmoid_in_place(values: &mut [f32]) {
    for v in values {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    heads: &'a Heads,
    padder: ContextPadder,
    nms: NmsState,
    fusion: StatefulFusion,
}

impl Runner<'_> {
    fn outputs(
        &mut self,
        sector: &Sector,
        labels: &[PointLabel],
        scene_boxes: &[crate::heads::GtBox],
        sweep_pose: crate::geometry::RigidMotion2D,
        heat_grid: &HeatmapGrid,
    ) -> Result<NetOutputs> {
        let full = &self.cfg.grid;
        let grid = sector.spec.grid(full)?;
        match self.heads {
            Heads::Oracle => {
                let mut out = oracle_outputs(sector, labels, scene_boxes, full)?;
                if let HeatmapGrid::Cartesian(c) = heat_grid {
                    out.heatmap = apply_undistortion_lazy(
                        &out.heatmap,
                        &grid,
                        &QueryGrid::cartesian(c, &grid),
                        &UndistortionMode::Oracle,
                    )?;
                }
                Ok(out)
            }
            Heads::Network(net) => {
                let canvas = pillarize(&sector.points, &Grid::Polar(grid), &net.encoder)?;
                self.padder.begin_sector(&sector.spec, sweep_pose)?;
                let mut out = net.forward(&canvas, &grid, heat_grid, &mut self.padder)?;
                sigmoid_in_place(out.heatmap.data_mut());
                Ok(out)
            }
        }
    }
}

/// Streams every sweep of `scene` through the pipeline. Predictions are
/// aligned with each sweep's own points; accumulated history points only
/// feed the heads.
pub fn run_scene(
    scene: &SynthScene,
    cfg: &PipelineConfig,
    heads: &Heads,
    fusion: FusionMode,
) -> Result<RunOutput> {
    cfg.nms.validate()?;
    cfg.grid.cols_per_sector(cfg.sectors)?;
    let mut runner = Runner {
        cfg,
        heads,
        padder: ContextPadder::new(cfg.padding, cfg.grid, pad_layers()),
        nms: NmsState::new(),
        fusion: StatefulFusion::new(),
    };
    let mut sweeps = Vec::with_capacity(scene.sweeps.len());
    let mut sector_ms = Vec::new();
    for k in 0..scene.sweeps.len() {
        let acc = accumulate(&scene.sweeps[..=k], &cfg.accumulation)?;
        let current = scene.sweeps[k].points.len();
        let mut labels = scene.labels[k].clone();
        labels.resize(
            acc.points.len(),
            PointLabel {
                semantic: IGNORE_LABEL,
                instance: 0,
            },
        );
        let mut semantic = vec![IGNORE_LABEL; current];
        let mut instance = vec![0u32; current];
        let mut boxes: Vec<DecodedBox> = Vec::new();
        for sector in slice_sweep(&acc, cfg.sectors, cfg.canonicalize, &cfg.grid)? {
            let start = Instant::now();
            let grid = sector.spec.grid(&cfg.grid)?;
            let heat_grid = cfg.heatmap.grid(&grid)?;
            let out =
                runner.outputs(&sector, &labels, &scene.boxes[k], acc.ego_pose, &heat_grid)?;
            let decoded = decode(
                &out.heatmap,
                &out.reg,
                &cfg.grid,
                &sector.spec,
                &heat_grid,
                &cfg.decode,
            )?;
            let kept = stateful_nms(&decoded, &sector.spec, &mut runner.nms, &cfg.nms)?;
            let point_labels = segment_points(&out.seg, &sector.points, &grid)?;
            let own: Vec<usize> = (0..sector.points.len())
                .filter(|&i| sector.source_indices[i] < current)
                .collect();
            for &i in &own {
                semantic[sector.source_indices[i]] = point_labels[i];
            }
            if fusion == FusionMode::Stateful {
                let pts: Vec<LidarPoint> = own
                    .iter()
                    .map(|&i| acc.points[sector.source_indices[i]])
                    .collect();
                let sem: Vec<u16> = own.iter().map(|&i| point_labels[i]).collect();
                let ids =
                    runner
                        .fusion
                        .fuse_sector(&sector.spec, &kept, &pts, &sem, &cfg.panoptic)?;
                for (&i, id) in own.iter().zip(ids) {
                    instance[sector.source_indices[i]] = id;
                }
            }
            boxes.extend_from_slice(&kept);
            sector_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
        if fusion == FusionMode::Global {
            instance = panoptic_fuse(&acc.points[..current], &semantic, &boxes, &cfg.panoptic)?;
        }
        sweeps.push(SweepPrediction {
            sweep: acc.id,
            boxes,
            semantic,
            instance,
        });
    }
    Ok(RunOutput {
        predictions: PredictionFile {
            version: FORMAT_VERSION,
            sectors: cfg.sectors,
            padding: padding_name(cfg.padding).to_string(),
            heatmap_grid: cfg.heatmap.name().to_string(),
            sweeps,
        },
        sector_ms,
    })
}

/// Which metrics [`evaluate`] computes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MetricSet {
    pub map: bool,
    pub miou: bool,
    pub pq: bool,
}

impl MetricSet {
    pub const ALL: Self = Self {
        map: true,
        miou: true,
        pq: true,
    };
}

impl std::str::FromStr for MetricSet {
    type Err = Error;

    /// Comma-separated subset of `map`, `miou`, `pq`.
    fn from_str(s: &str) -> Result<Self> {
        let mut set = Self::default();
        for name in s.split(',').map(str::trim) {
            match name {
                "map" => set.map = true,
                "miou" => set.miou = true,
                "pq" => set.pq = true,
                other => return Err(Error::config(format!("unknown metric '{other}'"))),
            }
        }
        Ok(set)
    }
}

/// Scores predictions against a scene. Sweeps are matched by id and must
/// cover the scene exactly.
pub fn evaluate(
    pred: &PredictionFile,
    scene: &SynthScene,
    metrics: MetricSet,
) -> Result<EvalReport> {
    if pred.sweeps.len() != scene.sweeps.len() {
        return Err(Error::shape(
            "evaluate sweeps",
            scene.sweeps.len(),
            pred.sweeps.len(),
        ));
    }
    for (p, s) in pred.sweeps.iter().zip(&scene.sweeps) {
        if p.sweep != s.id {
            return Err(Error::config(format!(
                "prediction sweep {} does not match scene sweep {}",
                p.sweep, s.id
            )));
        }
        if p.semantic.len() != s.points.len() || p.instance.len() != s.points.len() {
            return Err(Error::shape(
                "evaluate point labels",
                s.points.len(),
                p.semantic.len(),
            ));
        }
    }
    let mut report = EvalReport {
        sweeps: scene.sweeps.len(),
        ..Default::default()
    };
    if metrics.map {
        let preds: Vec<Vec<DecodedBox>> = pred.sweeps.iter().map(|s| s.boxes.clone()).collect();
        report.detection = Some(eval_detection(&preds, &scene.boxes)?);
    }
    if metrics.miou {
        let p: Vec<u16> = pred
            .sweeps
            .iter()
            .flat_map(|s| s.semantic.iter().copied())
            .collect();
        let g: Vec<u16> = scene.labels.iter().flatten().map(|l| l.semantic).collect();
        report.segmentation = Some(eval_segmentation(&p, &g)?);
    }
    if metrics.pq {
        let p: Vec<Vec<(u16, u32)>> = pred
            .sweeps
            .iter()
            .map(|s| {
                s.semantic
                    .iter()
                    .copied()
                    .zip(s.instance.iter().copied())
                    .collect()
            })
            .collect();
        let g: Vec<Vec<(u16, u32)>> = scene
            .labels
            .iter()
            .map(|ls| ls.iter().map(|l| (l.semantic, l.instance)).collect())
            .collect();
        report.panoptic = Some(eval_panoptic(&p, &g)?);
    }
    Ok(report)
}
