//! Simulated streaming lidar source: history accumulation and azimuth
//! slicing of sweeps into scan-ordered sectors.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geometry::{CellIndex, LidarPoint, PolarGridSpec, RigidMotion2D, SectorSpec};

/// One full rotation. Points of the sweep itself carry `dt = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub id: u64,
    pub points: Vec<LidarPoint>,
    /// world <- ego at the sweep reference time.
    pub ego_pose: RigidMotion2D,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sector {
    pub spec: SectorSpec,
    pub points: Vec<LidarPoint>,
    /// Index of each point in the sliced sweep's point list.
    pub source_indices: Vec<usize>,
    pub arrival_time_ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccumulationConfig {
    pub history_sweeps: usize,
    pub sweep_period_s: f64,
}

impl Default for AccumulationConfig {
    fn default() -> Self {
        Self {
            history_sweeps: 10,
            sweep_period_s: 0.05,
        }
    }
}

/// Merges the last `cfg.history_sweeps` sweeps into the frame of the newest
/// one. Current points come first, then history from newest to oldest.
pub fn accumulate(history: &[Sweep], cfg: &AccumulationConfig) -> Result<Sweep> {
    if cfg.history_sweeps == 0 {
        return Err(Error::config("history_sweeps must be at least 1"));
    }
    let current = history
        .last()
        .ok_or_else(|| Error::config("cannot accumulate an empty history"))?;
    let mut points: Vec<LidarPoint> = current
        .points
        .iter()
        .map(|p| LidarPoint { dt: 0.0, ..*p })
        .collect();
    let to_current = current.ego_pose.inverse();
    let first = history.len().saturating_sub(cfg.history_sweeps);
    for past in history[first..history.len() - 1].iter().rev() {
        if past.id >= current.id {
            return Err(Error::StreamOrder(format!(
                "history sweep {} is not older than current sweep {}",
                past.id, current.id
            )));
        }
        let motion = to_current.compose(&past.ego_pose);
        let dt = -((current.id - past.id) as f64) * cfg.sweep_period_s;
        points.extend(past.points.iter().map(|p| {
            let (x, y) = motion.apply(p.x, p.y);
            LidarPoint::new(x, y, p.z, p.intensity, dt)
        }));
    }
    Ok(Sweep {
        id: current.id,
        points,
        ego_pose: current.ego_pose,
    })
}

/// Sector holding azimuth `theta` when `grid` is cut into `n` sectors.
pub fn sector_of(grid: &PolarGridSpec, n: usize, theta: f64) -> Option<usize> {
    let per = grid.n_theta() / n;
    grid.col_of(theta).map(|c| c / per)
}

/// Partitions the in-range points of `sweep` into `n` azimuth sectors in
/// scan order. Membership follows the full grid's columns so sector windows
/// and the full sweep bin every point identically.
pub fn slice_sweep(
    sweep: &Sweep,
    n: usize,
    canonicalize: bool,
    grid: &PolarGridSpec,
) -> Result<Vec<Sector>> {
    if n == 0 {
        return Err(Error::config("sector count must be positive"));
    }
    grid.cols_per_sector(n)?;
    let mut sectors = (0..n)
        .map(|k| {
            let spec = SectorSpec::new(sweep.id, k, n, grid, canonicalize)?;
            Ok(Sector {
                spec,
                points: Vec::new(),
                source_indices: Vec::new(),
                arrival_time_ms: spec.arrival_time_ms(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, p) in sweep.points.iter().enumerate() {
        if grid.bin(p).is_err() {
            continue;
        }
        let Some(col) = grid.col_of(p.theta) else {
            continue;
        };
        let sector = &mut sectors[col / (grid.n_theta() / n)];
        let (q, _) = to_sector_frame(grid, &sector.spec, p).expect("column selects the sector");
        sector.points.push(q);
        sector.source_indices.push(i);
    }
    Ok(sectors)
}

/// The point expressed in `spec`'s frame together with its cell in the
/// sector grid, or `None` when its range or azimuth puts it outside the
/// sector. Height is not checked.
pub fn to_sector_frame(
    full: &PolarGridSpec,
    spec: &SectorSpec,
    p: &LidarPoint,
) -> Option<(LidarPoint, CellIndex)> {
    let per = full.n_theta() / spec.n;
    let row = full.row_of(p.r)?;
    let col = full.col_of(p.theta)?;
    if col / per != spec.index {
        return None;
    }
    let cell = CellIndex::new(row, col % per);
    let rot = spec.canonical_rotation;
    if rot == 0.0 {
        return Some((*p, cell));
    }
    let canonical = full.canonical_sector(spec.n).ok()?;
    let (x, y) = RigidMotion2D::new(-rot, 0.0, 0.0).apply(p.x, p.y);
    // Keep the unwrapped azimuth so the point stays in the window.
    let theta = (p.theta - rot).clamp(canonical.theta_min(), canonical.theta_max());
    let q = LidarPoint {
        x,
        y,
        theta: snap_to_col(&canonical, theta, cell.col),
        ..*p
    };
    Some((q, cell))
}

/// Nudges `theta` by a few ulps when subtracting the rotation moved it
/// across a column edge, so canonical binning matches sweep-frame binning.
fn snap_to_col(grid: &PolarGridSpec, mut theta: f64, col: usize) -> f64 {
    for _ in 0..64 {
        match grid.col_of(theta) {
            Some(c) if c == col => break,
            Some(c) if c < col => theta = theta.next_up(),
            _ => theta = theta.next_down(),
        }
    }
    theta
}

/// Pull-based stream of sectors in `(sweep_id, index)` order.
pub struct SectorStream<I> {
    sweeps: I,
    n: usize,
    canonicalize: bool,
    grid: PolarGridSpec,
    pending: VecDeque<Sector>,
}

impl<I: Iterator<Item = Sweep>> SectorStream<I> {
    pub fn new(sweeps: I, n: usize, canonicalize: bool, grid: PolarGridSpec) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("sector count must be positive"));
        }
        grid.cols_per_sector(n)?;
        Ok(Self {
            sweeps,
            n,
            canonicalize,
            grid,
            pending: VecDeque::new(),
        })
    }
}

impl<I: Iterator<Item = Sweep>> Iterator for SectorStream<I> {
    type Item = Sector;

    fn next(&mut self) -> Option<Sector> {
        if self.pending.is_empty() {
            let sweep = self.sweeps.next()?;
            let sectors = slice_sweep(&sweep, self.n, self.canonicalize, &self.grid)
                .expect("sector count validated at construction");
            self.pending.extend(sectors);
        }
        self.pending.pop_front()
    }
}

/// Convenience wrapper around [`SectorStream`].
pub fn stream_sectors<I>(
    sweeps: I,
    n: usize,
    canonicalize: bool,
    grid: PolarGridSpec,
) -> Result<SectorStream<I::IntoIter>>
where
    I: IntoIterator<Item = Sweep>,
{
    SectorStream::new(sweeps.into_iter(), n, canonicalize, grid)
}
