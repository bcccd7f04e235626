//! Volume container: a JSON header next to a raw little-endian payload.
//!
//! `NAME.json` holds origin, spacing, dims and dtype; `NAME.raw` holds the
//! x-fastest payload — 32-bit floats for intensity volumes, bytes for masks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compound::{LabelMask, VoxelGrid};
use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Debug, Serialize, Deserialize)]
struct VolumeHeader {
    origin: [f64; 3],
    spacing: [f64; 3],
    dims: [usize; 3],
    dtype: String,
}

fn raw_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("raw")
}

fn write_header(json_path: &Path, origin: Vec3, spacing: Vec3, dims: (usize, usize, usize), dtype: &str) -> Result<()> {
    let header = VolumeHeader {
        origin: [origin.x, origin.y, origin.z],
        spacing: [spacing.x, spacing.y, spacing.z],
        dims: [dims.0, dims.1, dims.2],
        dtype: dtype.to_string(),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(json_path, text).map_err(|e| Error::io(json_path.display().to_string(), e))
}

fn read_header(json_path: &Path) -> Result<VolumeHeader> {
    let text = fs::read_to_string(json_path).map_err(|e| Error::io(json_path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(json_path.display().to_string(), None, e.to_string()))
}

/// Writes `NAME.json` + `NAME.raw` (dtype `f32le`) for an intensity volume.
pub fn write_volume(grid: &VoxelGrid, json_path: &Path) -> Result<()> {
    write_header(json_path, grid.origin, grid.spacing, grid.dims, "f32le")?;
    let mut bytes = Vec::with_capacity(grid.data().len() * 4);
    for v in grid.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let raw = raw_path(json_path);
    fs::write(&raw, bytes).map_err(|e| Error::io(raw.display().to_string(), e))
}

pub fn read_volume(json_path: &Path) -> Result<VoxelGrid> {
    let header = read_header(json_path)?;
    if header.dtype != "f32le" {
        return Err(Error::format(
            json_path.display().to_string(),
            None,
            format!("expected dtype f32le, got {:?}", header.dtype),
        ));
    }
    let raw = raw_path(json_path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(raw.display().to_string(), e))?;
    let n = header.dims[0] * header.dims[1] * header.dims[2];
    if bytes.len() != n * 4 {
        return Err(Error::format(
            raw.display().to_string(),
            None,
            format!("raw payload has {} bytes, expected {}", bytes.len(), n * 4),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    VoxelGrid::new(
        Vec3::new(header.origin[0], header.origin[1], header.origin[2]),
        Vec3::new(header.spacing[0], header.spacing[1], header.spacing[2]),
        (header.dims[0], header.dims[1], header.dims[2]),
        data,
    )
}

/// Writes `NAME.json` + `NAME.raw` (dtype `u8`) for a label mask.
pub fn write_mask(mask: &LabelMask, json_path: &Path) -> Result<()> {
    write_header(json_path, mask.origin, mask.spacing, mask.dims, "u8")?;
    let raw = raw_path(json_path);
    fs::write(&raw, mask.data()).map_err(|e| Error::io(raw.display().to_string(), e))
}

pub fn read_mask(json_path: &Path) -> Result<LabelMask> {
    let header = read_header(json_path)?;
    if header.dtype != "u8" {
        return Err(Error::format(
            json_path.display().to_string(),
            None,
            format!("expected dtype u8, got {:?}", header.dtype),
        ));
    }
    let raw = raw_path(json_path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(raw.display().to_string(), e))?;
    LabelMask::new(
        Vec3::new(header.origin[0], header.origin[1], header.origin[2]),
        Vec3::new(header.spacing[0], header.spacing[1], header.spacing[2]),
        (header.dims[0], header.dims[1], header.dims[2]),
        bytes,
    )
    .map_err(|e| Error::format(raw.display().to_string(), None, e.to_string()))
}
