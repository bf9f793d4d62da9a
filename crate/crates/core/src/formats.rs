//! On-disk formats: ESLT binary tensors, rotation / weight / metrics CSVs,
//! and `key=value` parameter files.
//!
//! ESLT layout (little-endian):
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic `ESLT` |
//! | 1 | version = 1 |
//! | 1 | dtype = 1 (f32) |
//! | 1 | rank |
//! | 1 | reserved = 0 |
//! | 4·rank | dims, u32 each |
//! | 4·Πdims | row-major payload |

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cryoem::{ImageStack, Volume};
use crate::error::FormatError;
use crate::esl::LiftedWeights;
use crate::manifold::Rotation;
use crate::refine::IterationMetrics;

pub const ESLT_MAGIC: &[u8; 4] = b"ESLT";
pub const ESLT_VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;

pub const ROTATIONS_HEADER: &str = "index,qw,qx,qy,qz";
pub const WEIGHTS_HEADER: &str = "image_index,sample_index,weight";
pub const METRICS_HEADER: &str = "iter,mean_err_deg,std_err_deg,mean_l0,mean_w2_deg,mean_gamma,objective";

/// Row-major f32 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, FormatError> {
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(FormatError::Invalid(format!("{} values for dims {dims:?}", data.len())));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(FormatError::Invalid(format!("dims {dims:?} exceed the header range")));
        }
        Ok(Tensor { dims, data })
    }
}

pub fn write_eslt<W: Write>(mut w: W, t: &Tensor) -> Result<(), FormatError> {
    w.write_all(ESLT_MAGIC)?;
    w.write_all(&[ESLT_VERSION, DTYPE_F32, t.dims.len() as u8, 0])?;
    for &d in &t.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(4 * t.data.len());
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_eslt<R: Read>(mut r: R) -> Result<Tensor, FormatError> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head)?;
    if &head[..4] != ESLT_MAGIC {
        return Err(FormatError::BadMagic);
    }
    if head[4] != ESLT_VERSION {
        return Err(FormatError::UnsupportedVersion(head[4]));
    }
    if head[5] != DTYPE_F32 {
        return Err(FormatError::UnsupportedDtype(head[5]));
    }
    let rank = head[6] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        dims.push(u32::from_le_bytes(b) as usize);
    }
    let expected = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::Invalid(format!("dims {dims:?} overflow")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(FormatError::PayloadSize { expected, found: payload.len() });
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Tensor { dims, data })
}

pub fn write_eslt_file(path: &Path, t: &Tensor) -> Result<(), FormatError> {
    write_eslt(BufWriter::new(File::create(path)?), t)
}

pub fn read_eslt_file(path: &Path) -> Result<Tensor, FormatError> {
    read_eslt(BufReader::new(File::open(path)?))
}

/// Rank-3 tensor `[n, n, n]` indexed `[z][y][x]`.
pub fn volume_to_tensor(v: &Volume) -> Tensor {
    let n = v.n();
    Tensor { dims: vec![n, n, n], data: v.data().iter().map(|&x| x as f32).collect() }
}

pub fn tensor_to_volume(t: &Tensor, voxel_size: f64) -> Result<Volume, FormatError> {
    match t.dims[..] {
        [a, b, c] if a == b && b == c => {
            Volume::new(a, voxel_size, t.data.iter().map(|&x| x as f64).collect())
                .map_err(|e| FormatError::Invalid(e.to_string()))
        }
        _ => Err(FormatError::Invalid(format!("volume must be a cubic rank-3 tensor, got dims {:?}", t.dims))),
    }
}

/// Rank-3 tensor `[count, n, n]`.
pub fn images_to_tensor(s: &ImageStack) -> Tensor {
    let n = s.n();
    Tensor { dims: vec![s.len(), n, n], data: s.data().iter().map(|&x| x as f32).collect() }
}

pub fn tensor_to_images(t: &Tensor, pixel_size: f64) -> Result<ImageStack, FormatError> {
    match t.dims[..] {
        [count, a, b] if a == b && count > 0 => {
            ImageStack::new(a, pixel_size, t.data.iter().map(|&x| x as f64).collect())
                .map_err(|e| FormatError::Invalid(e.to_string()))
        }
        _ => Err(FormatError::Invalid(format!("image stack must have dims [count, n, n], got {:?}", t.dims))),
    }
}

/// 17 significant digits; parses back to the same bits.
fn exact(x: f64) -> String {
    format!("{x:.16e}")
}

/// Data lines after a mandatory header, as `(line number, fields)`.
fn csv_rows<R: BufRead>(r: R, header: &str) -> Result<Vec<(usize, Vec<String>)>, FormatError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(FormatError::Parse { line: 1, msg: "empty file".into() })??;
    if first.trim() != header {
        return Err(FormatError::Parse { line: 1, msg: format!("expected header `{header}`, found `{}`", first.trim()) });
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != width {
            return Err(FormatError::Parse { line: i + 2, msg: format!("expected {width} fields, found {}", fields.len()) });
        }
        rows.push((i + 2, fields));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, FormatError> {
    s.parse().map_err(|_| FormatError::Parse { line, msg: format!("cannot parse `{s}`") })
}

pub fn write_rotations<W: Write>(w: W, rotations: &[Rotation]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{ROTATIONS_HEADER}")?;
    for (i, r) in rotations.iter().enumerate() {
        let [a, b, c, d] = r.quaternion();
        writeln!(w, "{i},{},{},{},{}", exact(a), exact(b), exact(c), exact(d))?;
    }
    w.flush()?;
    Ok(())
}

/// Rows must be indexed `0, 1, …` and hold unit quaternions to 1e-12.
pub fn read_rotations<R: Read>(r: R) -> Result<Vec<Rotation>, FormatError> {
    let mut out = Vec::new();
    for (line, f) in csv_rows(BufReader::new(r), ROTATIONS_HEADER)? {
        let idx: usize = field(line, &f[0])?;
        if idx != out.len() {
            return Err(FormatError::Parse { line, msg: format!("index {idx} out of sequence, expected {}", out.len()) });
        }
        let q: [f64; 4] = [field(line, &f[1])?, field(line, &f[2])?, field(line, &f[3])?, field(line, &f[4])?];
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-12) {
            return Err(FormatError::Parse { line, msg: format!("quaternion norm {norm} is not 1") });
        }
        out.push(Rotation::from_unit_unchecked(q));
    }
    Ok(out)
}

pub fn write_rotations_file(path: &Path, rotations: &[Rotation]) -> Result<(), FormatError> {
    write_rotations(File::create(path)?, rotations)
}

pub fn read_rotations_file(path: &Path) -> Result<Vec<Rotation>, FormatError> {
    read_rotations(File::open(path)?)
}

/// One row per nonzero weight, images in order.
pub fn write_weights<W: Write>(w: W, weights: &[LiftedWeights]) -> Result<(), FormatError> {
    let mut w = BufWriter::new(w);
    writeln!(w, "{WEIGHTS_HEADER}")?;
    for (i, lw) in weights.iter().enumerate() {
        for &(j, a) in lw.entries() {
            writeln!(w, "{i},{j},{}", exact(a))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `(image_index, sample_index, weight)` triples in file order.
pub fn read_weights<R: Read>(r: R) -> Result<Vec<(usize, usize, f64)>, FormatError> {
    csv_rows(BufReader::new(r), WEIGHTS_HEADER)?
        .into_iter()
        .map(|(line, f)| Ok((field(line, &f[0])?, field(line, &f[1])?, field(line, &f[2])?)))
        .collect()
}

/// Regroups weight triples into per-image measures over `n_total` samples.
pub fn group_weights(rows: &[(usize, usize, f64)], n_images: usize, n_total: usize) -> Result<Vec<LiftedWeights>, FormatError> {
    let mut per: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_images];
    for &(i, j, a) in rows {
        if i >= n_images || j >= n_total {
            return Err(FormatError::Invalid(format!("weight ({i}, {j}) outside {n_images} images × {n_total} samples")));
        }
        per[i].push((j, a));
    }
    per.into_iter()
        .map(|e| LiftedWeights::from_entries(e, n_total).map_err(|err| FormatError::Invalid(err.to_string())))
        .collect()
}

fn metrics_line(m: &IterationMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        m.iter, m.mean_err_deg, m.std_err_deg, m.mean_l0, m.mean_w2_deg, m.mean_gamma, m.objective
    )
}

/// Append-only metrics log: the header on creation, then one flushed row per
/// iteration.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, FormatError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{METRICS_HEADER}")?;
        out.flush()?;
        Ok(MetricsWriter { out })
    }

    pub fn append(&mut self, m: &IterationMetrics) -> Result<(), FormatError> {
        writeln!(self.out, "{}", metrics_line(m))?;
        self.out.flush()?;
        Ok(())
    }
}

/// Parsed rows; `solver_iters` is not stored and reads as 0.
pub fn read_metrics<R: Read>(r: R) -> Result<Vec<IterationMetrics>, FormatError> {
    csv_rows(BufReader::new(r), METRICS_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(IterationMetrics {
                iter: field(line, &f[0])?,
                mean_err_deg: field(line, &f[1])?,
                std_err_deg: field(line, &f[2])?,
                mean_l0: field(line, &f[3])?,
                mean_w2_deg: field(line, &f[4])?,
                mean_gamma: field(line, &f[5])?,
                objective: field(line, &f[6])?,
                solver_iters: 0,
            })
        })
        .collect()
}

/// `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::Parse { line: i + 1, msg: format!("expected key=value, found `{line}`") })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(FormatError::Parse { line: i + 1, msg: "empty key".into() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn write_key_values<W: Write>(mut w: W, pairs: &[(&str, String)]) -> Result<(), FormatError> {
    for (k, v) in pairs {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}
