//! Little-endian binary point/label/weight files, the GT box CSV, ego pose
//! CSV and the JSON prediction schema.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LidarPoint, RigidMotion2D};
use crate::heads::{DecodedBox, GtBox};

pub const FORMAT_VERSION: u32 = 1;

fn read_exact<const N: usize>(r: &mut impl Read, what: &'static str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::format(what, format!("truncated input ({e})")))?;
    Ok(buf)
}

fn read_header(r: &mut impl Read, magic: &[u8; 4], what: &'static str) -> Result<u32> {
    let m = read_exact::<4>(r, what)?;
    if &m != magic {
        return Err(Error::format(what, format!("bad magic {m:?}")));
    }
    let version = u32::from_le_bytes(read_exact(r, what)?);
    if version != FORMAT_VERSION {
        return Err(Error::format(
            what,
            format!("unsupported version {version}"),
        ));
    }
    Ok(version)
}

fn read_count(r: &mut impl Read, what: &'static str) -> Result<usize> {
    let n = u64::from_le_bytes(read_exact(r, what)?);
    usize::try_from(n).map_err(|_| Error::format(what, "record count overflows"))
}

fn expect_eof(r: &mut impl Read, what: &'static str) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::format(what, "trailing bytes after the last record")),
    }
}

/// Writes points as `(x, y, z, intensity, dt)` f32 records.
pub fn write_pspc(w: &mut impl Write, points: &[LidarPoint]) -> Result<()> {
    w.write_all(b"PSPC")?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(points.len() as u64).to_le_bytes())?;
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity, p.dt] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pspc(r: &mut impl Read) -> Result<Vec<LidarPoint>> {
    read_header(r, b"PSPC", "PSPC")?;
    let n = read_count(r, "PSPC")?;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let mut v = [0f64; 5];
        for x in &mut v {
            *x = f32::from_le_bytes(read_exact(r, "PSPC")?) as f64;
        }
        out.push(LidarPoint::new(v[0], v[1], v[2], v[3], v[4]));
    }
    expect_eof(r, "PSPC")?;
    Ok(out)
}

/// Per-point semantic class and instance id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub semantic: u16,
    pub instance: u32,
}

pub fn write_pslb(w: &mut impl Write, labels: &[PointLabel]) -> Result<()> {
    w.write_all(b"PSLB")?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(labels.len() as u64).to_le_bytes())?;
    for l in labels {
        w.write_all(&l.semantic.to_le_bytes())?;
        w.write_all(&l.instance.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_pslb(r: &mut impl Read) -> Result<Vec<PointLabel>> {
    read_header(r, b"PSLB", "PSLB")?;
    let n = read_count(r, "PSLB")?;
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        let semantic = u16::from_le_bytes(read_exact(r, "PSLB")?);
        let instance = u32::from_le_bytes(read_exact(r, "PSLB")?);
        out.push(PointLabel { semantic, instance });
    }
    expect_eof(r, "PSLB")?;
    Ok(out)
}

/// A named dense f32 array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape("Tensor", n, data.len()));
        }
        Ok(Self { dims, data })
    }
}

pub type TensorMap = BTreeMap<String, Tensor>;

/// Entries are written in name order.
pub fn write_pswt(w: &mut impl Write, tensors: &TensorMap) -> Result<()> {
    w.write_all(b"PSWT")?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::format("PSWT", format!("name too long: {name}")))?;
        let ndim = u8::try_from(t.dims.len())
            .map_err(|_| Error::format("PSWT", format!("too many dims in {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[ndim])?;
        for &d in &t.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::format("PSWT", format!("dimension too large in {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pswt(r: &mut impl Read) -> Result<TensorMap> {
    read_header(r, b"PSWT", "PSWT")?;
    let mut out = TensorMap::new();
    loop {
        let mut first = [0u8; 1];
        if r.read(&mut first)? == 0 {
            break;
        }
        let second = read_exact::<1>(r, "PSWT")?;
        let len = u16::from_le_bytes([first[0], second[0]]) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| Error::format("PSWT", "truncated tensor name"))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format("PSWT", "tensor name is not UTF-8"))?;
        let ndim = read_exact::<1>(r, "PSWT")?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(read_exact(r, "PSWT")?) as usize);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format("PSWT", format!("tensor {name} is too large")))?;
        let mut bytes = vec![0u8; count * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::format("PSWT", format!("truncated data for {name}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if out.insert(name.clone(), Tensor { dims, data }).is_some() {
            return Err(Error::format("PSWT", format!("duplicate tensor {name}")));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct GtRow {
    sweep: u64,
    class: usize,
    x: f64,
    y: f64,
    z: f64,
    l: f64,
    w: f64,
    h: f64,
    yaw: f64,
    vx: f64,
    vy: f64,
}

/// Boxes keyed by sweep id, one CSV row each.
pub fn write_gt_csv(w: impl Write, boxes: &BTreeMap<u64, Vec<GtBox>>) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    // An explicit header keeps files with no boxes well-formed.
    wr.write_record([
        "sweep", "class", "x", "y", "z", "l", "w", "h", "yaw", "vx", "vy",
    ])?;
    for (&sweep, list) in boxes {
        for b in list {
            wr.serialize(GtRow {
                sweep,
                class: b.class,
                x: b.x,
                y: b.y,
                z: b.z,
                l: b.l,
                w: b.w,
                h: b.h,
                yaw: b.yaw,
                vx: b.vx,
                vy: b.vy,
            })?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn read_gt_csv(r: impl Read) -> Result<BTreeMap<u64, Vec<GtBox>>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().collect::<Vec<_>>()
        != [
            "sweep", "class", "x", "y", "z", "l", "w", "h", "yaw", "vx", "vy",
        ]
    {
        return Err(Error::format(
            "GT CSV",
            format!("unexpected header {header:?}"),
        ));
    }
    let mut out: BTreeMap<u64, Vec<GtBox>> = BTreeMap::new();
    for row in rd.deserialize() {
        let g: GtRow = row?;
        out.entry(g.sweep).or_default().push(GtBox {
            class: g.class,
            x: g.x,
            y: g.y,
            z: g.z,
            l: g.l,
            w: g.w,
            h: g.h,
            yaw: g.yaw,
            vx: g.vx,
            vy: g.vy,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct PoseRow {
    sweep: u64,
    yaw: f64,
    tx: f64,
    ty: f64,
}

/// Ego poses (world <- ego) keyed by sweep id.
pub fn write_poses_csv(w: impl Write, poses: &BTreeMap<u64, RigidMotion2D>) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (&sweep, m) in poses {
        wr.serialize(PoseRow {
            sweep,
            yaw: m.yaw,
            tx: m.tx,
            ty: m.ty,
        })?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_poses_csv(r: impl Read) -> Result<BTreeMap<u64, RigidMotion2D>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = BTreeMap::new();
    for row in rd.deserialize() {
        let p: PoseRow = row?;
        out.insert(p.sweep, RigidMotion2D::new(p.yaw, p.tx, p.ty));
    }
    Ok(out)
}

/// Predictions of one sweep: boxes in the sweep's ego frame plus per-point
/// labels aligned with the sweep's point file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPrediction {
    pub sweep: u64,
    pub boxes: Vec<DecodedBox>,
    pub semantic: Vec<u16>,
    pub instance: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub version: u32,
    pub sectors: usize,
    pub padding: String,
    pub heatmap_grid: String,
    pub sweeps: Vec<SweepPrediction>,
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Point file name of a sweep inside a scene directory.
pub fn sweep_points_name(sweep: u64) -> String {
    format!("sweep_{sweep:06}.pspc")
}

pub fn sweep_labels_name(sweep: u64) -> String {
    format!("sweep_{sweep:06}.pslb")
}

pub const GT_FILE: &str = "gt.csv";
pub const POSES_FILE: &str = "poses.csv";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pspc_layout_is_little_endian() {
        let pts = [LidarPoint::new(1.0, -2.0, 0.5, 0.25, -0.05)];
        let mut buf = Vec::new();
        write_pspc(&mut buf, &pts).unwrap();
        assert_eq!(&buf[..4], b"PSPC");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 20);
        let back = read_pspc(&mut buf.as_slice()).unwrap();
        assert_eq!(back[0].y, -2.0);
        assert_eq!(back[0].dt, -0.05f32 as f64);
    }

    #[test]
    fn pslb_record_is_six_bytes() {
        let labels = [
            PointLabel {
                semantic: 3,
                instance: 7,
            },
            PointLabel {
                semantic: 12,
                instance: 0,
            },
        ];
        let mut buf = Vec::new();
        write_pslb(&mut buf, &labels).unwrap();
        assert_eq!(buf.len(), 16 + 12);
        assert_eq!(read_pslb(&mut buf.as_slice()).unwrap(), labels);
    }

    #[test]
    fn pswt_round_trip_and_corruption() {
        let mut m = TensorMap::new();
        m.insert(
            "a.weight".into(),
            Tensor::new(vec![2, 3], (0..6).map(|v| v as f32).collect()).unwrap(),
        );
        m.insert("b".into(), Tensor::new(vec![1], vec![-1.5]).unwrap());
        let mut buf = Vec::new();
        write_pswt(&mut buf, &m).unwrap();
        assert_eq!(read_pswt(&mut buf.as_slice()).unwrap(), m);
        let cut = &buf[..buf.len() - 2];
        assert!(matches!(
            read_pswt(&mut &cut[..]),
            Err(Error::Format { .. })
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_pswt(&mut bad.as_slice()).is_err());
    }

    #[test]
    fn gt_csv_round_trip() {
        let b = GtBox {
            class: 2,
            x: 1.5,
            y: -3.0,
            z: -1.0,
            l: 4.0,
            w: 2.0,
            h: 1.5,
            yaw: 0.3,
            vx: 1.0,
            vy: 0.0,
        };
        let mut m = BTreeMap::new();
        m.insert(0u64, vec![b]);
        m.insert(3u64, vec![b, b]);
        let mut buf = Vec::new();
        write_gt_csv(&mut buf, &m).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("sweep,class,x,y,z,l,w,h,yaw,vx,vy\n"));
        assert_eq!(read_gt_csv(buf.as_slice()).unwrap(), m);
        let mut empty = Vec::new();
        write_gt_csv(&mut empty, &BTreeMap::new()).unwrap();
        assert!(read_gt_csv(empty.as_slice()).unwrap().is_empty());
    }
}
