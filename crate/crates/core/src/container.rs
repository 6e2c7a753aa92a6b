//! MSD: a single-array binary container with a JSON header.
//!
//! ```text
//! MSD 1 <header_len>\n
//! <header_len bytes of JSON>\n
//! <payload>
//! ```
//!
//! The header carries `dims`, `dtype` (`float32`, `float64`, `complex64`,
//! `complex128`), `byte_order` (always `little`), `domain` (`image`,
//! `kspace` or `none`) and a free-form `meta` object. The payload is the
//! row-major array, complex values stored as interleaved `(re, im)`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ForgeError, Result};
use crate::grid::{ComplexImage, Domain, Grid2};
use crate::num::Real;

const MAGIC: &str = "MSD 1 ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdHeader {
    pub dims: Vec<usize>,
    pub dtype: String,
    pub byte_order: String,
    pub domain: String,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

/// Decoded payload.
#[derive(Debug, Clone, PartialEq)]
pub enum MsdData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    C64(Vec<Complex<f32>>),
    C128(Vec<Complex<f64>>),
}

impl MsdData {
    pub fn len(&self) -> usize {
        match self {
            MsdData::F32(v) => v.len(),
            MsdData::F64(v) => v.len(),
            MsdData::C64(v) => v.len(),
            MsdData::C128(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, MsdData::C64(_) | MsdData::C128(_))
    }

    /// Values as `f64` (complex payloads are rejected).
    pub fn to_real<T: Real>(&self) -> Result<Vec<T>> {
        Ok(match self {
            MsdData::F32(v) => v.iter().map(|&x| T::lit(x as f64)).collect(),
            MsdData::F64(v) => v.iter().map(|&x| T::lit(x)).collect(),
            _ => return Err(ForgeError::UnsupportedDtype("complex payload where real expected".into())),
        })
    }

    /// Values as complex; real payloads get a zero imaginary part.
    pub fn to_complex<T: Real>(&self) -> Vec<Complex<T>> {
        let c = |re: f64, im: f64| Complex::new(T::lit(re), T::lit(im));
        match self {
            MsdData::F32(v) => v.iter().map(|&x| c(x as f64, 0.0)).collect(),
            MsdData::F64(v) => v.iter().map(|&x| c(x, 0.0)).collect(),
            MsdData::C64(v) => v.iter().map(|z| c(z.re as f64, z.im as f64)).collect(),
            MsdData::C128(v) => v.iter().map(|z| c(z.re, z.im)).collect(),
        }
    }
}

fn dtype_size(dtype: &str) -> Option<usize> {
    match dtype {
        "float32" => Some(4),
        "float64" => Some(8),
        "complex64" => Some(8),
        "complex128" => Some(16),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsdFile {
    pub header: MsdHeader,
    pub data: MsdData,
}

impl MsdFile {
    pub fn domain(&self) -> Option<Domain> {
        Domain::parse(&self.header.domain)
    }

    /// Last two dims as `(rows, cols)`.
    fn plane(&self) -> Result<(usize, usize)> {
        let d = &self.header.dims;
        if d.len() < 2 {
            return Err(ForgeError::CorruptHeader(format!("expected at least 2 dims, got {d:?}")));
        }
        Ok((d[d.len() - 2], d[d.len() - 1]))
    }

    pub fn to_grid<T: Real>(&self) -> Result<Grid2<T>> {
        if self.header.dims.len() != 2 {
            return Err(ForgeError::CorruptHeader(format!("expected 2 dims, got {:?}", self.header.dims)));
        }
        let (r, c) = self.plane()?;
        Grid2::new(r, c, self.data.to_real()?)
    }

    /// Splits a `[rows, cols]` or `[n, rows, cols]` array into complex planes.
    pub fn to_complex_images<T: Real>(&self) -> Result<Vec<ComplexImage<T>>> {
        let (r, c) = self.plane()?;
        let domain = self.domain().unwrap_or(Domain::Image);
        let all = self.data.to_complex::<T>();
        if r * c == 0 {
            return Err(ForgeError::CorruptHeader("empty plane".into()));
        }
        all.chunks(r * c)
            .map(|ch| ComplexImage::new(r, c, domain, ch.to_vec()))
            .collect()
    }
}

pub type Meta = BTreeMap<String, Value>;

fn encode(dims: Vec<usize>, dtype: &str, domain: &str, meta: &Meta, payload: Vec<u8>) -> Result<Vec<u8>> {
    let header = MsdHeader {
        dims,
        dtype: dtype.into(),
        byte_order: "little".into(),
        domain: domain.into(),
        meta: meta.clone(),
    };
    let json = serde_json::to_string(&header)?;
    let mut out = Vec::with_capacity(json.len() + payload.len() + 32);
    out.extend_from_slice(format!("{MAGIC}{}\n", json.len()).as_bytes());
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

fn push_scalar<T: Real>(out: &mut Vec<u8>, v: T) {
    if std::mem::size_of::<T>() == 4 {
        out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    } else {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

/// Serializes a real array.
pub fn encode_real<T: Real>(dims: &[usize], data: &[T], meta: &Meta) -> Result<Vec<u8>> {
    check_len(dims, data.len())?;
    let mut p = Vec::with_capacity(data.len() * std::mem::size_of::<T>());
    for &v in data {
        push_scalar(&mut p, v);
    }
    encode(dims.to_vec(), T::REAL_DTYPE, "none", meta, p)
}

/// Serializes a complex array.
pub fn encode_complex<T: Real>(dims: &[usize], data: &[Complex<T>], domain: Option<Domain>, meta: &Meta) -> Result<Vec<u8>> {
    check_len(dims, data.len())?;
    let mut p = Vec::with_capacity(data.len() * 2 * std::mem::size_of::<T>());
    for z in data {
        push_scalar(&mut p, z.re);
        push_scalar(&mut p, z.im);
    }
    encode(dims.to_vec(), T::COMPLEX_DTYPE, domain.map_or("none", Domain::as_str), meta, p)
}

fn check_len(dims: &[usize], n: usize) -> Result<()> {
    let expect: usize = dims.iter().product();
    if expect != n || dims.is_empty() {
        return Err(ForgeError::invalid(format!("dims {dims:?} do not match {n} values")));
    }
    Ok(())
}

/// Stacks same-sized complex images into `[n, rows, cols]`.
pub fn encode_images<T: Real>(imgs: &[ComplexImage<T>], meta: &Meta) -> Result<Vec<u8>> {
    let first = imgs.first().ok_or_else(|| ForgeError::invalid("no images to encode"))?;
    let (r, c) = first.dims();
    let mut flat = Vec::with_capacity(imgs.len() * r * c);
    for im in imgs {
        im.ensure_dims((r, c))?;
        flat.extend_from_slice(im.data());
    }
    let dims = if imgs.len() == 1 { vec![r, c] } else { vec![imgs.len(), r, c] };
    encode_complex(&dims, &flat, Some(first.domain()), meta)
}

/// Parses an in-memory container.
pub fn decode(bytes: &[u8]) -> Result<MsdFile> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ForgeError::CorruptHeader("missing first line".into()))?;
    let first = std::str::from_utf8(&bytes[..nl]).map_err(|_| ForgeError::CorruptHeader("first line not UTF-8".into()))?;
    let len: usize = first
        .strip_prefix(MAGIC)
        .ok_or_else(|| ForgeError::CorruptHeader(format!("bad magic '{first}'")))?
        .parse()
        .map_err(|_| ForgeError::CorruptHeader("bad header length".into()))?;
    let start = nl + 1;
    let end = start
        .checked_add(len)
        .filter(|&e| e < bytes.len() + 1 && e <= bytes.len())
        .ok_or_else(|| ForgeError::CorruptHeader("header truncated".into()))?;
    let header: MsdHeader =
        serde_json::from_slice(&bytes[start..end]).map_err(|e| ForgeError::CorruptHeader(e.to_string()))?;
    if bytes.get(end) != Some(&b'\n') {
        return Err(ForgeError::CorruptHeader("missing header terminator".into()));
    }
    if header.byte_order != "little" {
        return Err(ForgeError::CorruptHeader(format!("unsupported byte order '{}'", header.byte_order)));
    }
    let size = dtype_size(&header.dtype).ok_or_else(|| ForgeError::UnsupportedDtype(header.dtype.clone()))?;
    let payload = &bytes[end + 1..];
    let n: usize = header.dims.iter().product();
    let expected = n * size;
    if payload.len() != expected {
        return Err(ForgeError::LengthMismatch {
            expected,
            found: payload.len(),
        });
    }
    let f32s = || payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()));
    let f64s = || payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let data = match header.dtype.as_str() {
        "float32" => MsdData::F32(f32s().collect()),
        "float64" => MsdData::F64(f64s().collect()),
        "complex64" => {
            let v: Vec<f32> = f32s().collect();
            MsdData::C64(v.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect())
        }
        _ => {
            let v: Vec<f64> = f64s().collect();
            MsdData::C128(v.chunks_exact(2).map(|p| Complex::new(p[0], p[1])).collect())
        }
    };
    Ok(MsdFile { header, data })
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| ForgeError::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| ForgeError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| ForgeError::io(&tmp, e))?;
    f.sync_all().map_err(|e| ForgeError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| ForgeError::io(path, e))
}

pub fn read_msd(path: &Path) -> Result<MsdFile> {
    let bytes = fs::read(path).map_err(|e| ForgeError::io(path, e))?;
    decode(&bytes)
}

pub fn write_grid<T: Real>(path: &Path, g: &Grid2<T>, meta: &Meta) -> Result<()> {
    write_atomic(path, &encode_real(&[g.rows(), g.cols()], g.data(), meta)?)
}

pub fn write_images<T: Real>(path: &Path, imgs: &[ComplexImage<T>], meta: &Meta) -> Result<()> {
    write_atomic(path, &encode_images(imgs, meta)?)
}
