//! Model checkpoint: a versioned text header (architecture plus the named
//! parameter/buffer layout) followed by a little-endian f64 blob holding the
//! parameters in registry order and then the batch-norm running buffers.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralseg::net::{ArchitectureSpec, ParamSegment, QuickNatLite};

const MAGIC: &str = "TUSVOL-QNAT";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    magic: String,
    version: u32,
    architecture: ArchitectureSpec,
    /// Seed the parameters were initialized from (provenance only).
    init_seed: u64,
    segments: Vec<ParamSegment>,
    param_count: usize,
    /// Running-statistics doubles appended after the parameters.
    buffer_count: usize,
}

/// Serializes the running statistics in block order:
/// enc1..enc4 (bn1..bn3), bottleneck, dec1..dec4 — mean then var per layer.
fn collect_buffers(net: &QuickNatLite) -> Vec<f64> {
    let mut out = Vec::new();
    net.visit_running_stats(|mean, var| {
        out.extend_from_slice(mean);
        out.extend_from_slice(var);
    });
    out
}

pub fn save(net: &QuickNatLite, init_seed: u64, path: &Path) -> Result<()> {
    let buffers = collect_buffers(net);
    let header = CheckpointHeader {
        magic: MAGIC.to_string(),
        version: VERSION,
        architecture: net.spec,
        init_seed,
        segments: net.segments().to_vec(),
        param_count: net.param_count(),
        buffer_count: buffers.len(),
    };
    let mut bytes = serde_json::to_string(&header).expect("header serializes").into_bytes();
    bytes.push(b'\n');
    for v in net.params().iter().chain(&buffers) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<QuickNatLite> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(&name, None, "missing checkpoint header".to_string()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(&name, None, format!("bad checkpoint header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::format(&name, None, format!("expected magic {MAGIC:?}, got {:?}", header.magic)));
    }
    if header.version != VERSION {
        return Err(Error::format(
            &name,
            None,
            format!("unsupported checkpoint version {}", header.version),
        ));
    }

    let mut net = QuickNatLite::new(header.architecture, header.init_seed)?;
    if header.param_count != net.param_count() {
        return Err(Error::format(
            &name,
            None,
            format!(
                "checkpoint has {} parameters, architecture needs {}",
                header.param_count,
                net.param_count()
            ),
        ));
    }
    let blob = &bytes[newline + 1..];
    let expected = (header.param_count + header.buffer_count) * 8;
    if blob.len() != expected {
        return Err(Error::format(
            &name,
            None,
            format!("blob has {} bytes, expected {expected}", blob.len()),
        ));
    }
    let doubles: Vec<f64> = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    net.set_params(doubles[..header.param_count].to_vec())?;
    let mut cursor = header.param_count;
    net.visit_running_stats_mut(|mean, var| {
        mean.copy_from_slice(&doubles[cursor..cursor + mean.len()]);
        cursor += mean.len();
        var.copy_from_slice(&doubles[cursor..cursor + var.len()]);
        cursor += var.len();
    });
    if cursor != doubles.len() {
        return Err(Error::format(&name, None, "buffer layout mismatch".to_string()));
    }
    Ok(net)
}
