//! Coordinate systems, planar rigid motions and BEV grid layouts.
//!
//! Polar grids are indexed `(row, col)` with rows along range and columns
//! along azimuth. A polar grid can be a *window* of a larger grid: it keeps
//! the parent's azimuth origin and pitch and only shifts the first column, so
//! a point lands in bit-identical cells whether it is binned by a sector
//! window or by the full-sweep grid.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Azimuth of the first column of the full-sweep polar grid.
pub const THETA_ORIGIN: f64 = -3.1488;
/// Azimuth extent covered by one sweep of the polar grid.
pub const FULL_SWEEP_SPAN: f64 = 6.2976;
/// Duration of one full lidar rotation.
pub const SCAN_PERIOD_MS: f64 = 50.0;

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Cartesian to polar; the origin maps to `(0, 0)`.
pub fn cart_polar(x: f64, y: f64) -> (f64, f64) {
    let r = x.hypot(y);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let theta = y.atan2(x);
    (r, if theta >= PI { theta - 2.0 * PI } else { theta })
}

pub fn polar_cart(r: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (r * c, r * s)
}

/// One lidar return. `r` and `theta` cache the BEV polar image of `(x, y)`;
/// `theta` lies in `[-pi, pi)` for raw points and inside the canonical
/// azimuth window for canonicalised sector points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub r: f64,
    pub theta: f64,
    pub intensity: f64,
    /// Seconds relative to the current sweep reference; `<= 0` for history.
    pub dt: f64,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64, dt: f64) -> Self {
        let (r, theta) = cart_polar(x, y);
        Self {
            x,
            y,
            z,
            r,
            theta,
            intensity,
            dt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub row: usize,
    pub col: usize,
}

impl CellIndex {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("point outside the grid extent")]
pub struct OutOfRange;

/// Half-open binning `[lo, lo + n*delta)` with the final cell closed above.
fn axis_bin(v: f64, lo: f64, delta: f64, n: usize) -> Option<usize> {
    // NaN fails both comparisons below.
    if !(v >= lo) {
        return None;
    }
    let hi = lo + delta * n as f64;
    if v > hi {
        return None;
    }
    let idx = ((v - lo) / delta).floor();
    Some(if idx >= n as f64 { n - 1 } else { idx as usize })
}

/// Polar (cylindrical) pillar layout: `n_r` range rows by `n_theta` azimuth
/// columns with a single pillar spanning `[z_min, z_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolarGridSpec {
    r_min: f64,
    r_max: f64,
    z_min: f64,
    z_max: f64,
    n_r: usize,
    theta_origin: f64,
    delta_theta: f64,
    col_start: usize,
    n_theta: usize,
}

impl PolarGridSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        r_min: f64,
        r_max: f64,
        theta_min: f64,
        theta_max: f64,
        z_min: f64,
        z_max: f64,
        n_r: usize,
        n_theta: usize,
    ) -> Result<Self> {
        if n_r == 0 || n_theta == 0 {
            return Err(Error::config("polar grid needs positive bin counts"));
        }
        if !(r_min >= 0.0 && r_max > r_min && theta_max > theta_min && z_max > z_min) {
            return Err(Error::config(format!(
                "degenerate polar extent r=[{r_min}, {r_max}] theta=[{theta_min}, {theta_max}] z=[{z_min}, {z_max}]"
            )));
        }
        Ok(Self {
            r_min,
            r_max,
            z_min,
            z_max,
            n_r,
            theta_origin: theta_min,
            delta_theta: (theta_max - theta_min) / n_theta as f64,
            col_start: 0,
            n_theta,
        })
    }

    /// 512 x 512 grid over r in [0.3, 50.3] m, the full azimuth span and
    /// z in [-5, 3] m.
    pub fn full_sweep() -> Self {
        Self::new(
            0.3,
            50.3,
            THETA_ORIGIN,
            THETA_ORIGIN + FULL_SWEEP_SPAN,
            -5.0,
            3.0,
            512,
            512,
        )
        .expect("default grid is valid")
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn z_min(&self) -> f64 {
        self.z_min
    }
    pub fn z_max(&self) -> f64 {
        self.z_max
    }
    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn n_theta(&self) -> usize {
        self.n_theta
    }
    pub fn delta_r(&self) -> f64 {
        (self.r_max - self.r_min) / self.n_r as f64
    }
    pub fn delta_theta(&self) -> f64 {
        self.delta_theta
    }
    /// Single pillar along height.
    pub fn delta_z(&self) -> f64 {
        self.z_max - self.z_min
    }
    /// Azimuth of column 0 of the grid this one was cut from.
    pub fn theta_origin(&self) -> f64 {
        self.theta_origin
    }
    /// Offset of this grid's first column inside its parent grid.
    pub fn col_start(&self) -> usize {
        self.col_start
    }
    pub fn theta_min(&self) -> f64 {
        self.theta_origin + self.col_start as f64 * self.delta_theta
    }
    pub fn theta_max(&self) -> f64 {
        self.theta_origin + (self.col_start + self.n_theta) as f64 * self.delta_theta
    }

    /// Sub-grid covering columns `[col_start, col_start + n_cols)` of this grid.
    pub fn window(&self, col_start: usize, n_cols: usize) -> Result<Self> {
        if n_cols == 0 || col_start + n_cols > self.n_theta {
            return Err(Error::config(format!(
                "window [{col_start}, {}) exceeds {} columns",
                col_start + n_cols,
                self.n_theta
            )));
        }
        Ok(Self {
            col_start: self.col_start + col_start,
            n_theta: n_cols,
            ..*self
        })
    }

    /// Number of columns per sector when the grid is sliced into `n` sectors.
    pub fn cols_per_sector(&self, n: usize) -> Result<usize> {
        if n == 0 || self.n_theta % n != 0 {
            return Err(Error::config(format!(
                "{n} sectors do not divide {} azimuth columns",
                self.n_theta
            )));
        }
        Ok(self.n_theta / n)
    }

    /// The window holding sector `index` of `n` in the sweep frame.
    pub fn sector_window(&self, index: usize, n: usize) -> Result<Self> {
        let w = self.cols_per_sector(n)?;
        if index >= n {
            return Err(Error::config(format!("sector {index} out of {n}")));
        }
        self.window(index * w, w)
    }

    /// The shared canonical window every canonicalised sector is rotated into.
    pub fn canonical_sector(&self, n: usize) -> Result<Self> {
        self.sector_window(0, n)
    }

    /// Coarser grid with the same extent, for strided feature maps.
    pub fn downsample(&self, stride: usize) -> Result<Self> {
        if stride == 0
            || self.n_r % stride != 0
            || self.n_theta % stride != 0
            || self.col_start % stride != 0
        {
            return Err(Error::config(format!(
                "stride {stride} does not divide polar grid {}x{} at column {}",
                self.n_r, self.n_theta, self.col_start
            )));
        }
        Ok(Self {
            n_r: self.n_r / stride,
            n_theta: self.n_theta / stride,
            col_start: self.col_start / stride,
            delta_theta: self.delta_theta * stride as f64,
            ..*self
        })
    }

    pub fn row_of(&self, r: f64) -> Option<usize> {
        axis_bin(r, self.r_min, self.delta_r(), self.n_r)
    }

    /// Local column of azimuth `theta`, computed through the parent's global
    /// column so windows agree with the grid they were cut from.
    pub fn col_of(&self, theta: f64) -> Option<usize> {
        if !(theta >= self.theta_min() && theta <= self.theta_max()) {
            return None;
        }
        let g = ((theta - self.theta_origin) / self.delta_theta).floor();
        let lo = self.col_start as f64;
        let hi = (self.col_start + self.n_theta - 1) as f64;
        Some((g.clamp(lo, hi) - lo) as usize)
    }

    /// Cell of a BEV polar coordinate, ignoring height.
    pub fn bin_polar(&self, r: f64, theta: f64) -> Result<CellIndex, OutOfRange> {
        match (self.row_of(r), self.col_of(theta)) {
            (Some(row), Some(col)) => Ok(CellIndex { row, col }),
            _ => Err(OutOfRange),
        }
    }

    pub fn bin(&self, p: &LidarPoint) -> Result<CellIndex, OutOfRange> {
        if !(p.z >= self.z_min && p.z <= self.z_max) {
            return Err(OutOfRange);
        }
        self.bin_polar(p.r, p.theta)
    }

    /// Geometric centre `(r, theta)` of a cell.
    pub fn cell_center(&self, cell: CellIndex) -> (f64, f64) {
        let r = self.r_min + (cell.row as f64 + 0.5) * self.delta_r();
        let g = (self.col_start + cell.col) as f64;
        (r, self.theta_origin + (g + 0.5) * self.delta_theta)
    }

    pub fn cell_center_xy(&self, cell: CellIndex) -> (f64, f64) {
        let (r, t) = self.cell_center(cell);
        polar_cart(r, t)
    }

    /// Polar image of `(x, y)`, with θ moved by a full turn when that brings
    /// it inside this grid's azimuth window.
    pub fn polar_of(&self, x: f64, y: f64) -> (f64, f64) {
        let (r, t) = cart_polar(x, y);
        let tau = 2.0 * PI;
        if t < self.theta_min() && t + tau <= self.theta_max() {
            (r, t + tau)
        } else if t > self.theta_max() && t - tau >= self.theta_min() {
            (r, t - tau)
        } else {
            (r, t)
        }
    }

    pub fn contains_polar(&self, r: f64, theta: f64) -> bool {
        r >= self.r_min && r <= self.r_max && theta >= self.theta_min() && theta <= self.theta_max()
    }
}

impl Default for PolarGridSpec {
    fn default() -> Self {
        Self::full_sweep()
    }
}

/// Cartesian pillar layout: rows along x, columns along y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartesianGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub n_x: usize,
    pub n_y: usize,
}

impl CartesianGridSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x_min: f64,
        x_max: f64,
        y_min: f64,
        y_max: f64,
        z_min: f64,
        z_max: f64,
        n_x: usize,
        n_y: usize,
    ) -> Result<Self> {
        if n_x == 0 || n_y == 0 || !(x_max > x_min && y_max > y_min && z_max > z_min) {
            return Err(Error::config("degenerate cartesian grid"));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
            z_min,
            z_max,
            n_x,
            n_y,
        })
    }

    /// [-51.2, 51.2]^2 at 0.2 m.
    pub fn full_sweep() -> Self {
        Self::new(-51.2, 51.2, -51.2, 51.2, -5.0, 3.0, 512, 512).expect("default grid is valid")
    }

    pub fn delta_x(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_x as f64
    }
    pub fn delta_y(&self) -> f64 {
        (self.y_max - self.y_min) / self.n_y as f64
    }

    pub fn bin_xy(&self, x: f64, y: f64) -> Result<CellIndex, OutOfRange> {
        match (
            axis_bin(x, self.x_min, self.delta_x(), self.n_x),
            axis_bin(y, self.y_min, self.delta_y(), self.n_y),
        ) {
            (Some(row), Some(col)) => Ok(CellIndex { row, col }),
            _ => Err(OutOfRange),
        }
    }

    pub fn bin(&self, p: &LidarPoint) -> Result<CellIndex, OutOfRange> {
        if !(p.z >= self.z_min && p.z <= self.z_max) {
            return Err(OutOfRange);
        }
        self.bin_xy(p.x, p.y)
    }

    pub fn cell_center_xy(&self, cell: CellIndex) -> (f64, f64) {
        (
            self.x_min + (cell.row as f64 + 0.5) * self.delta_x(),
            self.y_min + (cell.col as f64 + 0.5) * self.delta_y(),
        )
    }

    /// Lower corner of a cell, the reference for cartesian centre offsets.
    pub fn cell_corner_xy(&self, cell: CellIndex) -> (f64, f64) {
        (
            self.x_min + cell.row as f64 * self.delta_x(),
            self.y_min + cell.col as f64 * self.delta_y(),
        )
    }

    /// Smallest grid aligned to multiples of `cell` that encloses the annular
    /// wedge covered by a polar grid out to radius `r_outer`.
    pub fn enclosing_wedge(polar: &PolarGridSpec, r_outer: f64, cell: f64) -> Result<Self> {
        let (lo, hi) = (polar.theta_min(), polar.theta_max());
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &t in &[lo, hi] {
            for &r in &[polar.r_min(), r_outer] {
                let (x, y) = polar_cart(r, t);
                xs.push(x);
                ys.push(y);
            }
        }
        // Axis crossings inside the wedge reach the outer radius.
        let first = (lo / (PI / 2.0)).ceil() as i64;
        let last = (hi / (PI / 2.0)).floor() as i64;
        for k in first..=last {
            let (x, y) = polar_cart(r_outer, k as f64 * PI / 2.0);
            xs.push(x);
            ys.push(y);
        }
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Snap outward to the cell lattice; the epsilon absorbs trig round-off
        // on extents that are exact multiples of the cell size.
        let snap_lo = |v: f64| ((v / cell) + 1e-9).floor() * cell;
        let snap_hi = |v: f64| ((v / cell) - 1e-9).ceil() * cell;
        let (x0, x1) = (snap_lo(min(&xs)), snap_hi(max(&xs)));
        let (y0, y1) = (snap_lo(min(&ys)), snap_hi(max(&ys)));
        let n_x = ((x1 - x0) / cell).round() as usize;
        let n_y = ((y1 - y0) / cell).round() as usize;
        Self::new(x0, x1, y0, y1, polar.z_min(), polar.z_max(), n_x, n_y)
    }
}

impl Default for CartesianGridSpec {
    fn default() -> Self {
        Self::full_sweep()
    }
}

/// Either grid layout, for operations defined on both.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Grid {
    Polar(PolarGridSpec),
    Cartesian(CartesianGridSpec),
}

impl Grid {
    pub fn rows(&self) -> usize {
        match self {
            Grid::Polar(g) => g.n_r(),
            Grid::Cartesian(g) => g.n_x,
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Grid::Polar(g) => g.n_theta(),
            Grid::Cartesian(g) => g.n_y,
        }
    }

    pub fn z_center(&self) -> f64 {
        match self {
            Grid::Polar(g) => 0.5 * (g.z_min() + g.z_max()),
            Grid::Cartesian(g) => 0.5 * (g.z_min + g.z_max),
        }
    }

    pub fn cell_center_xy(&self, cell: CellIndex) -> (f64, f64) {
        match self {
            Grid::Polar(g) => g.cell_center_xy(cell),
            Grid::Cartesian(g) => g.cell_center_xy(cell),
        }
    }

    /// Cell centre as `(r, theta)` regardless of layout.
    pub fn cell_center_polar(&self, cell: CellIndex) -> (f64, f64) {
        match self {
            Grid::Polar(g) => g.cell_center(cell),
            Grid::Cartesian(g) => {
                let (x, y) = g.cell_center_xy(cell);
                cart_polar(x, y)
            }
        }
    }
}

/// Cell of `point` in `grid`; the caller decides whether to drop
/// out-of-range points.
pub fn bin_of(point: &LidarPoint, grid: &Grid) -> Result<CellIndex, OutOfRange> {
    match grid {
        Grid::Polar(g) => g.bin(point),
        Grid::Cartesian(g) => g.bin(point),
    }
}

/// Planar rigid motion: rotate about z by `yaw`, then translate by `(tx, ty)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RigidMotion2D {
    pub yaw: f64,
    pub tx: f64,
    pub ty: f64,
}

impl RigidMotion2D {
    pub const IDENTITY: Self = Self {
        yaw: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn new(yaw: f64, tx: f64, ty: f64) -> Self {
        Self { yaw, tx, ty }
    }

    pub fn is_identity(&self) -> bool {
        self.yaw == 0.0 && self.tx == 0.0 && self.ty == 0.0
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    pub fn rotate(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y, s * x + c * y)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let (tx, ty) = self.apply(other.tx, other.ty);
        Self {
            yaw: wrap_angle(self.yaw + other.yaw),
            tx,
            ty,
        }
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.yaw.sin_cos();
        Self {
            yaw: wrap_angle(-self.yaw),
            tx: -(c * self.tx + s * self.ty),
            ty: -(-s * self.tx + c * self.ty),
        }
    }
}

pub fn apply_motion(points: &[LidarPoint], m: &RigidMotion2D) -> Vec<LidarPoint> {
    if m.is_identity() {
        return points.to_vec();
    }
    points
        .iter()
        .map(|p| {
            let (x, y) = m.apply(p.x, p.y);
            LidarPoint::new(x, y, p.z, p.intensity, p.dt)
        })
        .collect()
}

/// Identity and azimuth window of one streamed sector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SectorSpec {
    pub sweep_id: u64,
    pub index: usize,
    pub n: usize,
    pub theta_lo: f64,
    pub theta_hi: f64,
    /// Rotation applied to this sector's points to move them into the
    /// canonical window; zero when canonicalisation is off.
    pub canonical_rotation: f64,
}

impl SectorSpec {
    pub fn new(
        sweep_id: u64,
        index: usize,
        n: usize,
        grid: &PolarGridSpec,
        canonicalize: bool,
    ) -> Result<Self> {
        let window = grid.sector_window(index, n)?;
        let theta_lo = window.theta_min();
        let rotation = (window.col_start() - grid.col_start()) as f64 * grid.delta_theta();
        Ok(Self {
            sweep_id,
            index,
            n,
            theta_lo,
            theta_hi: window.theta_max(),
            canonical_rotation: if canonicalize { rotation } else { 0.0 },
        })
    }

    /// Grid this sector's points are binned in: the shared canonical window
    /// when rotated, the sector's own window otherwise.
    pub fn grid(&self, full: &PolarGridSpec) -> Result<PolarGridSpec> {
        if self.canonical_rotation != 0.0 {
            full.canonical_sector(self.n)
        } else {
            full.sector_window(self.index, self.n)
        }
    }

    /// Motion taking canonical-frame coordinates back to the sweep frame.
    pub fn to_sweep_frame(&self) -> RigidMotion2D {
        RigidMotion2D::new(self.canonical_rotation, 0.0, 0.0)
    }

    /// Scan completion time of this sector, measured from sweep start.
    pub fn arrival_time_ms(&self) -> f64 {
        SCAN_PERIOD_MS * (self.index + 1) as f64 / self.n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn polar_axis_cases() {
        assert_eq!(cart_polar(1.0, 0.0), (1.0, 0.0));
        let (r, t) = cart_polar(0.0, 2.0);
        assert_eq!(r, 2.0);
        assert!((t - PI / 2.0).abs() < 1e-15);
        assert_eq!(cart_polar(0.0, 0.0), (0.0, 0.0));
    }

    #[test]
    fn polar_round_trip_negative_quadrant() {
        let (r, t) = cart_polar(-3.0, -4.0);
        assert!((r - 5.0).abs() < 1e-12);
        assert_eq!(t, (-4.0f64).atan2(-3.0));
        let (x, y) = polar_cart(r, t);
        assert!((x + 3.0).abs() < 1e-6 && (y + 4.0).abs() < 1e-6);
    }

    #[test]
    fn theta_is_half_open() {
        let (_, t) = cart_polar(-1.0, 0.0);
        assert!(t >= -PI && t < PI);
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn default_grid_pitches() {
        let g = PolarGridSpec::full_sweep();
        assert_eq!((g.n_r(), g.n_theta()), (512, 512));
        assert!((g.delta_theta() - 0.0123).abs() < 1e-6);
        assert!((g.delta_r() - 50.0 / 512.0).abs() < 1e-12);
        assert_eq!(g.delta_z(), 8.0);
        let c = CartesianGridSpec::full_sweep();
        assert!((c.delta_x() - 0.2).abs() < 1e-12 && (c.delta_y() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn bin_lower_corner_and_half_open() {
        let g = PolarGridSpec::full_sweep();
        let at = |r: f64, t: f64| g.bin_polar(r, t).unwrap();
        assert_eq!(at(g.r_min(), g.theta_min()), CellIndex::new(0, 0));
        let c = at(
            g.r_min() + 1.5 * g.delta_r(),
            g.theta_min() + 0.5 * g.delta_theta(),
        );
        assert_eq!(c, CellIndex::new(1, 0));
        // final cell closed above
        assert_eq!(at(g.r_max(), g.theta_max()), CellIndex::new(511, 511));
        assert_eq!(g.bin_polar(g.r_max() + 1e-6, 0.0), Err(OutOfRange));
        assert_eq!(g.bin_polar(0.29, 0.0), Err(OutOfRange));
        let p = LidarPoint::new(10.0, 0.0, 3.5, 0.0, 0.0);
        assert_eq!(g.bin(&p), Err(OutOfRange));
    }

    #[test]
    fn random_points_land_near_cell_centers() {
        let g = PolarGridSpec::full_sweep();
        let grid = Grid::Polar(g);
        let mut rng = SeededRng::new(11);
        for _ in 0..10_000 {
            let r = rng.uniform(g.r_min(), g.r_max());
            let t = rng.uniform(-PI, PI);
            let (x, y) = polar_cart(r, t);
            let p = LidarPoint::new(x, y, rng.uniform(-5.0, 3.0), 0.5, 0.0);
            let cell = bin_of(&p, &grid).expect("in range");
            let (rc, tc) = g.cell_center(cell);
            assert!((p.r - rc).abs() <= 0.5 * g.delta_r() + 1e-9);
            assert!((p.theta - tc).abs() <= 0.5 * g.delta_theta() + 1e-9);
        }
    }

    #[test]
    fn windows_agree_with_parent() {
        let g = PolarGridSpec::full_sweep();
        let w = g.sector_window(3, 8).unwrap();
        assert_eq!(w.col_start(), 192);
        let mut rng = SeededRng::new(5);
        for _ in 0..2000 {
            let t = rng.uniform(w.theta_min(), w.theta_max());
            let r = rng.uniform(1.0, 40.0);
            let full = g.bin_polar(r, t).unwrap();
            let local = w.bin_polar(r, t).unwrap();
            assert_eq!(full.col, local.col + 192);
            assert_eq!(g.cell_center(full), w.cell_center(local));
        }
    }

    #[test]
    fn sector_spans() {
        let g = PolarGridSpec::full_sweep();
        for n in [1, 2, 4, 8, 16, 32] {
            for k in 0..n {
                let s = SectorSpec::new(0, k, n, &g, true).unwrap();
                assert!((s.theta_hi - s.theta_lo - FULL_SWEEP_SPAN / n as f64).abs() < 1e-9);
                assert!((s.theta_lo - s.canonical_rotation - THETA_ORIGIN).abs() < 1e-12);
            }
        }
        let s = SectorSpec::new(0, 0, 8, &g, true).unwrap();
        assert_eq!(s.arrival_time_ms(), 6.25);
        assert!(SectorSpec::new(0, 0, 3, &g, true).is_err());
    }

    #[test]
    fn quarter_turn() {
        let m = RigidMotion2D::new(PI / 2.0, 0.0, 0.0);
        let (x, y) = m.apply(1.0, 0.0);
        assert!(x.abs() < 1e-9 && (y - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_motion_is_bit_exact() {
        let pts = vec![
            LidarPoint::new(-0.0, 2.5, 1.0, 0.1, 0.0),
            LidarPoint::new(3.25, -7.5, -1.0, 0.9, -0.05),
        ];
        let out = apply_motion(&pts, &RigidMotion2D::IDENTITY);
        for (a, b) in pts.iter().zip(&out) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = SeededRng::new(2);
        for _ in 0..200 {
            let m = RigidMotion2D::new(
                rng.uniform(-PI, PI),
                rng.uniform(-20.0, 20.0),
                rng.uniform(-20.0, 20.0),
            );
            let id = m.compose(&m.inverse());
            assert!(id.yaw.abs() < 1e-9 && id.tx.abs() < 1e-9 && id.ty.abs() < 1e-9);
        }
    }

    #[test]
    fn enclosing_wedge_full_sweep_is_square() {
        let g = PolarGridSpec::full_sweep();
        let c = CartesianGridSpec::enclosing_wedge(&g, 51.2, 0.2).unwrap();
        assert_eq!((c.n_x, c.n_y), (512, 512));
    }
}
