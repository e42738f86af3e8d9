//! Binary grid-map and point-cloud files, trajectory CSV and raw tensors.
//!
//! All binary formats are little-endian; byte layouts are documented in
//! `docs/FORMATS.md`. Writers go through a temporary file and a rename so a
//! reader never sees a half-written file.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud, Pose2, Pose3, Trajectory};
use crate::gridmap::{GridMap, GridSpec, Layer};

pub const MAP_MAGIC: &[u8; 4] = b"HBGM";
pub const CLOUD_MAGIC: &[u8; 4] = b"HBPC";
pub const TENSOR_MAGIC: &[u8; 4] = b"HBTN";
pub const FORMAT_VERSION: u16 = 1;

/// Write `bytes` to `path` via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = BufWriter::new(fs::File::create(&tmp)?);
        f.write_all(bytes)?;
        f.into_inner().map_err(|e| e.into_error())?.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], kind: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            kind,
        }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            kind: self.kind,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(self.err("bad magic"));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(self.err(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

/// Serialize a grid map. Values are stored as `f32`; invalid cells are
/// written as the sentinel 0.
pub fn encode_map(map: &GridMap) -> Vec<u8> {
    let spec = &map.spec;
    let n = spec.cell_count();
    let mut out = Vec::with_capacity(64 + map.layers().count() * (n * 4 + n / 8 + 32));
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.height_cells as u32).to_le_bytes());
    out.extend_from_slice(&(spec.width_cells as u32).to_le_bytes());
    for v in [
        spec.resolution,
        spec.center_pose.x(),
        spec.center_pose.y(),
        spec.center_pose.yaw(),
        map.timestamp,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(map.layers().count() as u32).to_le_bytes());
    for (name, layer) in map.layers() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for (&v, &ok) in layer.values().iter().zip(layer.validity()) {
            let v = if ok { v as f32 } else { 0.0 };
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut mask = vec![0u8; n.div_ceil(8)];
        for (i, _) in layer.validity().iter().enumerate().filter(|(_, &ok)| ok) {
            mask[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&mask);
    }
    out
}

/// Bytes of the fixed map header, up to the layer count.
pub const MAP_HEADER_LEN: usize = 4 + 2 + 2 * 4 + 5 * 8;

fn map_header(r: &mut Reader) -> Result<(GridSpec, f64)> {
    r.header(MAP_MAGIC)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let resolution = r.f64()?;
    let (x, y, yaw) = (r.f64()?, r.f64()?, r.f64()?);
    let timestamp = r.f64()?;
    let spec = GridSpec::new(height, width, resolution)
        .map_err(|e| r.err(e.to_string()))?
        .with_pose(Pose2::new(x, y, yaw));
    Ok((spec, timestamp))
}

/// Grid spec and timestamp of an encoded map, from its header alone.
pub fn decode_map_header(bytes: &[u8]) -> Result<(GridSpec, f64)> {
    map_header(&mut Reader::new(bytes, "grid map"))
}

pub fn decode_map(bytes: &[u8]) -> Result<GridMap> {
    let mut r = Reader::new(bytes, "grid map");
    let (spec, timestamp) = map_header(&mut r)?;
    let (height, width) = (spec.height_cells, spec.width_cells);
    let n = spec.cell_count();
    let mut map = GridMap::new(spec, timestamp);
    for _ in 0..r.u32()? {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.err("layer name is not UTF-8"))?
            .to_owned();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.f32()? as f64);
        }
        let mask = r.take(n.div_ceil(8))?;
        let valid = (0..n).map(|i| mask[i / 8] >> (i % 8) & 1 == 1).collect();
        let layer = Layer::from_parts(height, width, values, valid)?;
        if map.layer(&name).is_some() {
            return Err(r.err(format!("duplicate layer `{name}`")));
        }
        map.insert_layer(&name, layer)?;
    }
    r.finish()?;
    Ok(map)
}

pub fn write_map(path: &Path, map: &GridMap) -> Result<()> {
    write_atomic(path, &encode_map(map))
}

pub fn read_map(path: &Path) -> Result<GridMap> {
    decode_map(&read_file(path)?).map_err(|e| with_path(e, path))
}

/// Read only the header of a map file.
pub fn read_map_header(path: &Path) -> Result<(GridSpec, f64)> {
    let mut head = Vec::with_capacity(MAP_HEADER_LEN);
    fs::File::open(path)
        .and_then(|f| f.take(MAP_HEADER_LEN as u64).read_to_end(&mut head))
        .map_err(|e| Error::io(path, e))?;
    decode_map_header(&head).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format { kind, reason } => Error::Format {
            kind,
            reason: format!("{}: {reason}", path.display()),
        },
        other => other,
    }
}

/// Serialize a point cloud; coordinates and per-point time offsets
/// (relative to the cloud timestamp) are stored as `f32`.
pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + cloud.len() * 16);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    out.extend_from_slice(&cloud.timestamp.to_le_bytes());
    out.extend_from_slice(&cloud.source_id.to_le_bytes());
    for (p, t) in cloud.iter() {
        for v in [p.x, p.y, p.z, t - cloud.timestamp] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<PointCloud> {
    let mut r = Reader::new(bytes, "point cloud");
    r.header(CLOUD_MAGIC)?;
    let count = r.u32()? as usize;
    let timestamp = r.f64()?;
    let source_id = r.u32()?;
    if bytes.len().saturating_sub(r.pos) != count * 16 {
        return Err(r.err(format!("expected {count} records")));
    }
    let mut cloud = PointCloud::with_capacity(timestamp, source_id, count);
    for _ in 0..count {
        let (x, y, z, dt) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?);
        cloud.push(
            Point3::new(x as f64, y as f64, z as f64),
            timestamp + dt as f64,
        );
    }
    r.finish()?;
    Ok(cloud)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_atomic(path, &encode_cloud(cloud))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    decode_cloud(&read_file(path)?).map_err(|e| with_path(e, path))
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

/// Trajectory as CSV with columns `t,x,y,z,qw,qx,qy,qz`.
pub fn encode_trajectory(trajectory: &Trajectory) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (t, pose) in trajectory.samples() {
        let [qw, qx, qy, qz] = pose.wxyz();
        let p = pose.translation;
        w.serialize(TrajectoryRow {
            t: *t,
            x: p.x,
            y: p.y,
            z: p.z,
            qw,
            qx,
            qy,
            qz,
        })?;
    }
    w.into_inner().map_err(|e| Error::invalid(e.to_string()))
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let mut samples = Vec::new();
    for row in csv::Reader::from_reader(bytes).deserialize() {
        let r: TrajectoryRow = row?;
        let pose = Pose3::from_wxyz(
            [r.qw, r.qx, r.qy, r.qz],
            nalgebra::Vector3::new(r.x, r.y, r.z),
        )?;
        samples.push((r.t, pose));
    }
    Trajectory::new(samples)
}

pub fn write_trajectory(path: &Path, trajectory: &Trajectory) -> Result<()> {
    write_atomic(path, &encode_trajectory(trajectory)?)
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    decode_trajectory(&read_file(path)?)
}

/// Dense `f32` tensor with its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }
}

pub fn encode_tensor(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + tensor.shape.len() * 4 + tensor.data.len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
    for &d in &tensor.shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes, "tensor");
    r.header(TENSOR_MAGIC)?;
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank.min(16));
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    if n.map(|n| n * 4) != Some(bytes.len() - r.pos) {
        return Err(r.err(format!("payload does not match shape {shape:?}")));
    }
    let mut data = Vec::with_capacity(n.unwrap_or(0));
    while r.pos < bytes.len() {
        data.push(r.f32()?);
    }
    Tensor::new(shape, data)
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    write_atomic(path, &encode_tensor(tensor))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&read_file(path)?).map_err(|e| with_path(e, path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}
