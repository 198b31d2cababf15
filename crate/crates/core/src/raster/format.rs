//! MGRD: a minimal little-endian grid container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MGRD"
//! 4       2     version (u16 LE) = 1
//! 6       1     dtype code (0 = u8, 1 = f32, 2 = bool stored as u8)
//! 7       4     width (u32 LE)
//! 11      4     height (u32 LE)
//! 15      ..    row-major payload, little-endian
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{DType, Grid, Pixel};
use crate::error::{Error, Result};

pub const MGRD_MAGIC: &[u8; 4] = b"MGRD";
pub const MGRD_VERSION: u16 = 1;
pub const MGRD_HEADER_LEN: usize = 15;

/// A grid whose dtype is only known after reading the header.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyGrid {
    Intensity(Grid<u8>),
    Elevation(Grid<f32>),
    Mask(Grid<bool>),
}

impl AnyGrid {
    pub fn dtype(&self) -> DType {
        match self {
            AnyGrid::Intensity(_) => DType::Intensity,
            AnyGrid::Elevation(_) => DType::Elevation,
            AnyGrid::Mask(_) => DType::Mask,
        }
    }
}

fn encode<T: Pixel>(grid: &Grid<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(MGRD_HEADER_LEN + grid.len() * T::DTYPE.size());
    out.extend_from_slice(MGRD_MAGIC);
    out.extend_from_slice(&MGRD_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for &v in grid.data() {
        v.put_le(&mut out);
    }
    out
}

/// Serializes `grid` to `path` in MGRD layout.
pub fn grid_write<T: Pixel>(grid: &Grid<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(grid);
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, field: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        field,
        detail: detail.into(),
    }
}

fn decode<T: Pixel>(path: &Path, width: usize, height: usize, payload: &[u8]) -> Result<Grid<T>> {
    let size = T::DTYPE.size();
    let mut data = Vec::with_capacity(width * height);
    for (i, chunk) in payload.chunks_exact(size).enumerate() {
        let v = T::take_le(chunk).ok_or_else(|| {
            format_err(
                path,
                "payload",
                format!("invalid mask byte {} at element {i}", chunk[0]),
            )
        })?;
        data.push(v);
    }
    Grid::new(width, height, data)
}

struct Header {
    dtype: DType,
    width: usize,
    height: usize,
}

fn parse(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 4 || &bytes[..4] != MGRD_MAGIC {
        return Err(format_err(path, "magic", "expected \"MGRD\""));
    }
    if bytes.len() < MGRD_HEADER_LEN {
        return Err(format_err(
            path,
            "header",
            format!(
                "truncated header: {} of {MGRD_HEADER_LEN} bytes",
                bytes.len()
            ),
        ));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MGRD_VERSION {
        return Err(format_err(
            path,
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let dtype = DType::from_code(bytes[6])
        .ok_or_else(|| format_err(path, "dtype", format!("unknown dtype code {}", bytes[6])))?;
    let width = u32::from_le_bytes([bytes[7], bytes[8], bytes[9], bytes[10]]) as usize;
    let height = u32::from_le_bytes([bytes[11], bytes[12], bytes[13], bytes[14]]) as usize;
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| format_err(path, "dimensions", "payload size overflows"))?;
    let payload = bytes.len() - MGRD_HEADER_LEN;
    if payload < expected {
        return Err(format_err(
            path,
            "payload",
            format!("truncated: {payload} of {expected} bytes"),
        ));
    }
    if payload > expected {
        return Err(format_err(
            path,
            "payload",
            format!("{} trailing bytes", payload - expected),
        ));
    }
    Ok(Header {
        dtype,
        width,
        height,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads an MGRD file of any dtype.
pub fn grid_read_any(path: impl AsRef<Path>) -> Result<AnyGrid> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let h = parse(path, &bytes)?;
    let payload = &bytes[MGRD_HEADER_LEN..];
    Ok(match h.dtype {
        DType::Intensity => AnyGrid::Intensity(decode(path, h.width, h.height, payload)?),
        DType::Elevation => AnyGrid::Elevation(decode(path, h.width, h.height, payload)?),
        DType::Mask => AnyGrid::Mask(decode(path, h.width, h.height, payload)?),
    })
}

/// Reads an MGRD file, requiring its dtype to match `T`.
pub fn grid_read<T: Pixel>(path: impl AsRef<Path>) -> Result<Grid<T>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let h = parse(path, &bytes)?;
    if h.dtype != T::DTYPE {
        return Err(format_err(
            path,
            "dtype",
            format!("expected {}, found {}", T::DTYPE, h.dtype),
        ));
    }
    decode(path, h.width, h.height, &bytes[MGRD_HEADER_LEN..])
}
