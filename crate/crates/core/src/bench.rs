//! Canvas memory and end-to-end latency tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CartesianGridSpec, PolarGridSpec, SCAN_PERIOD_MS};

/// Pillar feature channels of the scattered canvas.
pub const CANVAS_CHANNELS: usize = 32;
pub const BYTES_PER_VALUE: usize = 4;
pub const CARTESIAN_RANGE: f64 = 51.2;
pub const CARTESIAN_CELL: f64 = 0.2;

/// Published `(sectors, polar (h, w), polar MB, cartesian (h, w), cartesian MB)`.
pub const PUBLISHED_CANVAS: [(usize, (usize, usize), f64, (usize, usize), f64); 6] = [
    (1, (512, 512), 33.6, (512, 512), 33.6),
    (2, (512, 256), 16.8, (512, 256), 16.8),
    (4, (512, 128), 8.4, (512, 128), 8.4),
    (8, (512, 64), 4.2, (512, 128), 8.4),
    (16, (512, 32), 2.1, (512, 64), 4.2),
    (32, (512, 26), 1.3, (512, 32), 2.1),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanvasSize {
    pub height: usize,
    pub width: usize,
    pub bytes: usize,
}

impl CanvasSize {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bytes: height * width * CANVAS_CHANNELS * BYTES_PER_VALUE,
        }
    }

    /// Decimal megabytes.
    pub fn megabytes(&self) -> f64 {
        self.bytes as f64 / 1e6
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishedCanvas {
    pub polar: (usize, usize),
    pub polar_mb: f64,
    pub cartesian: (usize, usize),
    pub cartesian_mb: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanvasRow {
    pub sectors: usize,
    pub polar: CanvasSize,
    pub cartesian: CanvasSize,
    pub published: Option<PublishedCanvas>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanvasReport {
    pub rows: Vec<CanvasRow>,
}

fn check_sectors(ns: &[usize], grid: &PolarGridSpec) -> Result<()> {
    if ns.is_empty() {
        return Err(Error::config("no sector counts given"));
    }
    for &n in ns {
        if !n.is_power_of_two() {
            return Err(Error::config(format!(
                "sector count {n} is not a power of two"
            )));
        }
        grid.cols_per_sector(n)?;
    }
    Ok(())
}

/// Per-sector canvas sizes for each sector count. The cartesian size is the
/// smallest 0.2 m lattice rectangle enclosing the canonical wedge.
pub fn canvas_table(ns: &[usize], grid: &PolarGridSpec) -> Result<CanvasReport> {
    check_sectors(ns, grid)?;
    let rows = ns
        .iter()
        .map(|&n| {
            let sector = grid.canonical_sector(n)?;
            let cart =
                CartesianGridSpec::enclosing_wedge(&sector, CARTESIAN_RANGE, CARTESIAN_CELL)?;
            let published = PUBLISHED_CANVAS.iter().find(|row| row.0 == n).map(
                |&(_, polar, polar_mb, cartesian, cartesian_mb)| PublishedCanvas {
                    polar,
                    polar_mb,
                    cartesian,
                    cartesian_mb,
                },
            );
            Ok(CanvasRow {
                sectors: n,
                polar: CanvasSize::new(sector.n_r(), sector.n_theta()),
                cartesian: CanvasSize::new(cart.n_x, cart.n_y),
                published,
            })
        })
        .collect::<Result<_>>()?;
    Ok(CanvasReport { rows })
}

impl CanvasReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "sectors,polar_h,polar_w,polar_mb,cartesian_h,cartesian_w,cartesian_mb,published_polar,published_polar_mb,published_cartesian,published_cartesian_mb\n",
        );
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{:.1},{},{},{:.1}",
                r.sectors,
                r.polar.height,
                r.polar.width,
                r.polar.megabytes(),
                r.cartesian.height,
                r.cartesian.width,
                r.cartesian.megabytes()
            );
            match r.published {
                Some(p) => {
                    let _ = writeln!(
                        out,
                        ",{}x{},{:.1},{}x{},{:.1}",
                        p.polar.0,
                        p.polar.1,
                        p.polar_mb,
                        p.cartesian.0,
                        p.cartesian.1,
                        p.cartesian_mb
                    );
                }
                None => out.push_str(",,,,\n"),
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub sectors: usize,
    pub scan_ms: f64,
    pub runtime_ms: f64,
    pub end_to_end_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub rows: Vec<LatencyRow>,
}

/// End-to-end latency `50/n + runtime` for each sector count.
pub fn latency_table(ns: &[usize], runtimes_ms: &[f64]) -> Result<LatencyReport> {
    if ns.len() != runtimes_ms.len() {
        return Err(Error::shape("latency_table", ns.len(), runtimes_ms.len()));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for (&n, &runtime_ms) in ns.iter().zip(runtimes_ms) {
        if n == 0 {
            return Err(Error::config("sector count must be positive"));
        }
        if !(runtime_ms >= 0.0 && runtime_ms.is_finite()) {
            return Err(Error::config(format!(
                "runtime {runtime_ms} ms is not a finite non-negative value"
            )));
        }
        let scan_ms = SCAN_PERIOD_MS / n as f64;
        rows.push(LatencyRow {
            sectors: n,
            scan_ms,
            runtime_ms,
            end_to_end_ms: scan_ms + runtime_ms,
        });
    }
    Ok(LatencyReport { rows })
}

impl LatencyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sectors,scan_ms,runtime_ms,end_to_end_ms\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.sectors, r.scan_ms, r.runtime_ms, r.end_to_end_ms
            );
        }
        out
    }

    /// Scatter of end-to-end latency against sector count on a log2 axis.
    pub fn to_svg(&self) -> String {
        const W: f64 = 480.0;
        const H: f64 = 320.0;
        const M: f64 = 48.0;
        let xs: Vec<f64> = self
            .rows
            .iter()
            .map(|r| (r.sectors as f64).log2())
            .collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.end_to_end_ms).collect();
        let x_max = xs.iter().copied().fold(1.0, f64::max);
        let y_max = ys.iter().copied().fold(1.0, f64::max) * 1.1;
        let px = |x: f64| M + x / x_max * (W - 2.0 * M);
        let py = |y: f64| H - M - y / y_max * (H - 2.0 * M);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<line x1="{M}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#,
            y0 = H - M,
            x1 = W - M
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{y0}" stroke="black"/>"#,
            y0 = H - M
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-size="12" text-anchor="middle">sectors</text>"#,
            x = W / 2.0,
            y = H - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{y}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {y})">end-to-end latency (ms)</text>"#,
            y = H / 2.0
        );
        for (r, (&x, &y)) in self.rows.iter().zip(xs.iter().zip(&ys)) {
            let (cx, cy) = (px(x), py(y));
            let _ = writeln!(
                svg,
                r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="steelblue"/>"#
            );
            let _ = writeln!(
                svg,
                r#"<text x="{cx:.2}" y="{ty:.2}" font-size="10" text-anchor="middle">{n}: {y:.2}</text>"#,
                ty = cy - 8.0,
                n = r.sectors
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}
