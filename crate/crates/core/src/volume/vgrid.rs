//! The `.vgrid` container.
//!
//! Line one is a JSON header object terminated by a single `\n`:
//!
//! ```text
//! {"magic":"vgrid1","kind":"scalar","dims":[nx,ny,nz],"spacing":[sx,sy,sz],"dtype":"f32","channels":1}
//! ```
//!
//! The payload follows immediately as raw little-endian values, channel-major
//! then x-fastest. Scalar fields and soft segmentations are `f32`, label
//! fields `u8`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChannelStack, GridDims, LabelField3D, ScalarField3D, SoftSegmentation};
use crate::error::{Error, Result};

pub const MAGIC: &str = "vgrid1";

/// Longest header line accepted before giving up on finding the newline.
const MAX_HEADER_BYTES: usize = 64 * 1024;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    magic: String,
    kind: String,
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VGrid {
    Scalar(ScalarField3D),
    Label(LabelField3D),
    Soft(SoftSegmentation),
}

#[derive(Debug, Clone, Copy)]
pub enum VGridRef<'a> {
    Scalar(&'a ScalarField3D),
    Label(&'a LabelField3D),
    Soft(&'a SoftSegmentation),
}

impl<'a> From<&'a ScalarField3D> for VGridRef<'a> {
    fn from(f: &'a ScalarField3D) -> Self {
        VGridRef::Scalar(f)
    }
}

impl<'a> From<&'a LabelField3D> for VGridRef<'a> {
    fn from(f: &'a LabelField3D) -> Self {
        VGridRef::Label(f)
    }
}

impl<'a> From<&'a SoftSegmentation> for VGridRef<'a> {
    fn from(f: &'a SoftSegmentation) -> Self {
        VGridRef::Soft(f)
    }
}

impl<'a> From<&'a VGrid> for VGridRef<'a> {
    fn from(g: &'a VGrid) -> Self {
        match g {
            VGrid::Scalar(f) => VGridRef::Scalar(f),
            VGrid::Label(f) => VGridRef::Label(f),
            VGrid::Soft(f) => VGridRef::Soft(f),
        }
    }
}

impl VGrid {
    pub fn kind(&self) -> &'static str {
        match self {
            VGrid::Scalar(_) => "scalar",
            VGrid::Label(_) => "label",
            VGrid::Soft(_) => "soft",
        }
    }

    pub fn dims(&self) -> &GridDims {
        match self {
            VGrid::Scalar(f) => f.dims(),
            VGrid::Label(f) => f.dims(),
            VGrid::Soft(f) => f.dims(),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarField3D> {
        match self {
            VGrid::Scalar(f) => Ok(f),
            other => Err(kind_error("scalar", other.kind())),
        }
    }

    pub fn into_labels(self) -> Result<LabelField3D> {
        match self {
            VGrid::Label(f) => Ok(f),
            other => Err(kind_error("label", other.kind())),
        }
    }

    pub fn into_soft(self) -> Result<SoftSegmentation> {
        match self {
            VGrid::Soft(f) => Ok(f),
            other => Err(kind_error("soft", other.kind())),
        }
    }
}

fn kind_error(wanted: &str, found: &str) -> Error {
    Error::InvalidField(format!("expected a {wanted} grid, found {found}"))
}

fn f32_payload(values: &[f64]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for &v in values {
        let v32 = v as f32;
        if !v32.is_finite() {
            return Err(Error::InvalidField(format!("{v} is not representable as f32")));
        }
        out.extend_from_slice(&v32.to_le_bytes());
    }
    Ok(out)
}

/// Serialises a field to `.vgrid` bytes.
pub fn encode<'a>(grid: impl Into<VGridRef<'a>>) -> Result<Vec<u8>> {
    let grid = grid.into();
    let (kind, dims, dtype, channels, payload) = match grid {
        VGridRef::Scalar(f) => ("scalar", f.dims(), "f32", 1, f32_payload(f.values())?),
        VGridRef::Label(f) => ("label", f.dims(), "u8", 1, f.labels().to_vec()),
        VGridRef::Soft(f) => (
            "soft",
            f.dims(),
            "f32",
            f.channels(),
            f32_payload(f.as_stack().data())?,
        ),
    };
    let header = Header {
        magic: MAGIC.to_string(),
        kind: kind.to_string(),
        dims: dims.shape(),
        spacing: dims.spacing(),
        dtype: dtype.to_string(),
        channels,
    };
    let mut out = serde_json::to_vec(&header)
        .map_err(|e| Error::MalformedHeader(format!("cannot serialise header: {e}")))?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses `.vgrid` bytes. Never panics on malformed input.
pub fn decode(bytes: &[u8]) -> Result<VGrid> {
    let scan = &bytes[..bytes.len().min(MAX_HEADER_BYTES)];
    let newline = scan
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if header.magic != MAGIC {
        return Err(Error::MalformedHeader(format!("bad magic {:?}", header.magic)));
    }

    let expected_dtype = match header.kind.as_str() {
        "scalar" | "soft" => "f32",
        "label" => "u8",
        other => return Err(Error::MalformedHeader(format!("unknown kind {other:?}"))),
    };
    let width = match header.dtype.as_str() {
        "f32" => 4,
        "u8" => 1,
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    if header.dtype != expected_dtype {
        return Err(Error::UnsupportedDtype(format!(
            "{} for kind {}",
            header.dtype, header.kind
        )));
    }
    if header.kind != "soft" && header.channels != 1 {
        return Err(Error::MalformedHeader(format!(
            "{} grids have one channel, header says {}",
            header.kind, header.channels
        )));
    }
    if header.channels == 0 {
        return Err(Error::MalformedHeader("zero channels".into()));
    }

    let [nx, ny, nz] = header.dims;
    let dims = GridDims::with_spacing(nx, ny, nz, header.spacing)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let expected = dims
        .len()
        .checked_mul(header.channels)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| Error::MalformedHeader("payload size overflows".into()))?;

    let payload = &bytes[newline + 1..];
    if payload.len() < expected {
        return Err(Error::TruncatedData {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingData {
            extra: payload.len() - expected,
        });
    }

    let floats = || -> Vec<f64> {
        payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect()
    };
    Ok(match header.kind.as_str() {
        "scalar" => VGrid::Scalar(ScalarField3D::new(dims, floats())?),
        "label" => VGrid::Label(LabelField3D::new(dims, payload.to_vec())?),
        _ => VGrid::Soft(SoftSegmentation::new(ChannelStack::new(
            dims,
            header.channels,
            floats(),
        )?)?),
    })
}

pub fn read_vgrid(path: impl AsRef<Path>) -> Result<VGrid> {
    decode(&fs::read(path)?)
}

pub fn write_vgrid<'a>(grid: impl Into<VGridRef<'a>>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(grid)?)?;
    Ok(())
}
