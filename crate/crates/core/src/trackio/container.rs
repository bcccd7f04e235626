//! On-disk sweep container: a directory holding `meta.json`, `poses.csv`,
//! `frames.csv` and one binary 8-bit PGM per frame under `frames/`.
//!
//! All lengths are mm, times are seconds. Decimal text is written with
//! Rust's shortest round-trip formatting, so poses and calibration survive
//! a write/read cycle exactly; pixels are stored raw and are bit-exact.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RigidTransform, UnitQuat, Vec3};
use crate::trackio::{Calibration, Frame, Sweep, SweepMeta, TimedPose};

const POSE_HEADER: &str = "t,qw,qx,qy,qz,px,py,pz";
const FRAME_HEADER: &str = "index,t";

#[derive(Serialize, Deserialize)]
struct MetaFile {
    #[serde(flatten)]
    meta: SweepMeta,
    /// (mm/px along columns, mm/px along rows); shared by all frames.
    pixel_spacing_mm: [f64; 2],
    /// qw, qx, qy, qz, px, py, pz of the image-to-sensor transform.
    calibration: [f64; 7],
}

fn transform_to_seven(t: &RigidTransform) -> [f64; 7] {
    let q = t.rotation;
    let p = t.translation;
    [q.w, q.x, q.y, q.z, p.x, p.y, p.z]
}

fn transform_from_seven(v: [f64; 7], path: &str) -> Result<RigidTransform> {
    let q = UnitQuat::new(v[0], v[1], v[2], v[3])
        .map_err(|e| Error::format(path, None, format!("bad calibration rotation: {e}")))?;
    Ok(RigidTransform::new(q, Vec3::new(v[4], v[5], v[6])))
}

/// Writes a sweep container, creating `dir` if needed.
pub fn write_sweep(sweep: &Sweep, dir: &Path) -> Result<()> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(frames_dir.display().to_string(), e))?;

    let meta_path = dir.join("meta.json");
    let first = &sweep.frames()[0];
    let meta = MetaFile {
        meta: sweep.meta.clone(),
        pixel_spacing_mm: [first.pixel_spacing().0, first.pixel_spacing().1],
        calibration: transform_to_seven(&sweep.calibration().image_to_sensor),
    };
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, json).map_err(|e| Error::io(meta_path.display().to_string(), e))?;

    let poses_path = dir.join("poses.csv");
    {
        let file = fs::File::create(&poses_path).map_err(|e| Error::io(poses_path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(poses_path.display().to_string(), e);
        writeln!(w, "{POSE_HEADER}").map_err(io_err)?;
        for p in sweep.poses() {
            let v = transform_to_seven(&p.pose);
            writeln!(w, "{},{},{},{},{},{},{},{}", p.t, v[0], v[1], v[2], v[3], v[4], v[5], v[6]).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }

    let index_path = dir.join("frames.csv");
    {
        let file = fs::File::create(&index_path).map_err(|e| Error::io(index_path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(index_path.display().to_string(), e);
        writeln!(w, "{FRAME_HEADER}").map_err(io_err)?;
        for (i, f) in sweep.frames().iter().enumerate() {
            writeln!(w, "{i},{}", f.t).map_err(io_err)?;
        }
        w.flush().map_err(io_err)?;
    }

    for (i, f) in sweep.frames().iter().enumerate() {
        let path = frames_dir.join(format!("{i:05}.pgm"));
        write_pgm(&path, f.width(), f.height(), f.raw())?;
    }
    Ok(())
}

/// Reads a sweep container written by [`write_sweep`].
pub fn read_sweep(dir: &Path) -> Result<Sweep> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let meta_file: MetaFile = serde_json::from_str(&meta_text)
        .map_err(|e| Error::format(meta_path.display().to_string(), None, e.to_string()))?;
    let calibration = Calibration {
        image_to_sensor: transform_from_seven(meta_file.calibration, &meta_path.display().to_string())?,
    };
    let spacing = (meta_file.pixel_spacing_mm[0], meta_file.pixel_spacing_mm[1]);

    let poses = read_poses(&dir.join("poses.csv"))?;
    let frame_times = read_frame_index(&dir.join("frames.csv"))?;

    let mut frames = Vec::with_capacity(frame_times.len());
    for (i, t) in frame_times.iter().enumerate() {
        let path = dir.join("frames").join(format!("{i:05}.pgm"));
        let (width, height, data) = read_pgm(&path)?;
        frames.push(
            Frame::new(*t, width, height, spacing, data)
                .map_err(|e| Error::format(path.display().to_string(), None, e.to_string()))?,
        );
    }

    Sweep::new(frames, poses, calibration, meta_file.meta)
        .map_err(|e| Error::format(dir.display().to_string(), None, e.to_string()))
}

fn parse_field(path: &str, line_no: usize, field: &str, raw: Option<&str>) -> Result<f64> {
    let raw = raw.ok_or_else(|| Error::format(path, Some(line_no), format!("missing field '{field}'")))?;
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::format(path, Some(line_no), format!("field '{field}' is not a number: {raw:?}")))
}

fn read_poses(path: &Path) -> Result<Vec<TimedPose>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == POSE_HEADER => {}
        Some((_, h)) => return Err(Error::format(&name, Some(1), format!("expected header {POSE_HEADER:?}, got {h:?}"))),
        None => return Err(Error::format(&name, Some(1), "empty pose file".to_string())),
    }
    const FIELDS: [&str; 8] = ["t", "qw", "qx", "qy", "qz", "px", "py", "pz"];
    let mut poses = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut cols = line.split(',');
        let mut v = [0.0f64; 8];
        for (field, slot) in FIELDS.iter().zip(v.iter_mut()) {
            *slot = parse_field(&name, line_no, field, cols.next())?;
        }
        if cols.next().is_some() {
            return Err(Error::format(&name, Some(line_no), "too many fields".to_string()));
        }
        let q = UnitQuat::new(v[1], v[2], v[3], v[4])
            .map_err(|e| Error::format(&name, Some(line_no), e.to_string()))?;
        if let Some(prev) = poses.last() {
            let prev: &TimedPose = prev;
            if v[0] <= prev.t {
                return Err(Error::format(
                    &name,
                    Some(line_no),
                    format!("pose timestamps must strictly increase ({} after {})", v[0], prev.t),
                ));
            }
        }
        poses.push(TimedPose {
            t: v[0],
            pose: RigidTransform::new(q, Vec3::new(v[5], v[6], v[7])),
        });
    }
    if poses.is_empty() {
        return Err(Error::format(&name, None, "pose file has no samples".to_string()));
    }
    Ok(poses)
}

fn read_frame_index(path: &Path) -> Result<Vec<f64>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == FRAME_HEADER => {}
        Some((_, h)) => return Err(Error::format(&name, Some(1), format!("expected header {FRAME_HEADER:?}, got {h:?}"))),
        None => return Err(Error::format(&name, Some(1), "empty frame index".to_string())),
    }
    let mut times = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let mut cols = line.split(',');
        let index_raw = cols
            .next()
            .ok_or_else(|| Error::format(&name, Some(line_no), "missing field 'index'".to_string()))?;
        let index: usize = index_raw
            .trim()
            .parse()
            .map_err(|_| Error::format(&name, Some(line_no), format!("field 'index' is not an integer: {index_raw:?}")))?;
        if index != times.len() {
            return Err(Error::format(
                &name,
                Some(line_no),
                format!("frame indices must be contiguous from 0, got {index} at row {}", times.len()),
            ));
        }
        times.push(parse_field(&name, line_no, "t", cols.next())?);
    }
    if times.is_empty() {
        return Err(Error::format(&name, None, "frame index has no rows".to_string()));
    }
    Ok(times)
}

pub(crate) fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(data.len() + 32);
    out.extend_from_slice(format!("P5\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| Error::io(&name, e))?;
    // Header: "P5" then width, height, maxval as whitespace-separated tokens.
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(&name, None, "truncated PGM header".to_string()));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            Error::format(&name, None, "PGM header is not ASCII".to_string())
        })?);
    }
    if tokens[0] != "P5" {
        return Err(Error::format(&name, None, format!("expected binary PGM magic P5, got {:?}", tokens[0])));
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| Error::format(&name, None, format!("bad PGM width {:?}", tokens[1])))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| Error::format(&name, None, format!("bad PGM height {:?}", tokens[2])))?;
    if tokens[3] != "255" {
        return Err(Error::format(&name, None, format!("expected maxval 255, got {:?}", tokens[3])));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(&name, None, "PGM dimensions overflow".to_string()))?;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != expected {
        return Err(Error::format(
            &name,
            None,
            format!("PGM raster has {} bytes, expected {expected}", raster.len()),
        ));
    }
    Ok((width, height, raster.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trackio::LobeSide;

    fn sample_sweep() -> Sweep {
        let q = UnitQuat::new(0.9, 0.1, 0.2, 0.3).unwrap();
        let poses = vec![
            TimedPose { t: 0.0, pose: RigidTransform::IDENTITY },
            TimedPose { t: 0.0125, pose: RigidTransform::new(q, Vec3::new(0.1, 0.2, 0.3)) },
            TimedPose { t: 0.025, pose: RigidTransform::new(q, Vec3::new(0.5, -0.25, 1.0 / 3.0)) },
        ];
        let frames = vec![
            Frame::new(0.001, 3, 2, (0.4, 0.5), vec![0, 60, 120, 180, 240, 255]).unwrap(),
            Frame::new(0.02, 3, 2, (0.4, 0.5), vec![5, 4, 3, 2, 1, 0]).unwrap(),
        ];
        let cal = Calibration {
            image_to_sensor: RigidTransform::new(
                UnitQuat::new(0.8, -0.1, 0.05, 0.55).unwrap(),
                Vec3::new(1.25, -2.5, 0.125),
            ),
        };
        let meta = SweepMeta {
            subject_id: "subj-7".into(),
            observer_id: 2,
            repeat_index: 3,
            lobe: LobeSide::Left,
            nominal_frame_rate: 89.0,
            nominal_pose_rate: 80.0,
        };
        Sweep::new(frames, poses, cal, meta).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let sweep = sample_sweep();
        write_sweep(&sweep, dir.path()).unwrap();
        let back = read_sweep(dir.path()).unwrap();
        assert_eq!(back, sweep);
    }

    #[test]
    fn truncated_pose_row_names_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        write_sweep(&sample_sweep(), dir.path()).unwrap();
        let poses = dir.path().join("poses.csv");
        // Drop the last two fields of the second data row.
        let text = fs::read_to_string(&poses).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let truncated = lines[2].rsplitn(3, ',').nth(2).unwrap().to_string();
        lines[2] = &truncated;
        fs::write(&poses, lines.join("\n")).unwrap();

        let err = read_sweep(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("missing field 'py'"), "got: {msg}");
        assert!(msg.contains("poses.csv:3"), "got: {msg}");
    }

    #[test]
    fn non_monotonic_pose_timestamps_rejected_on_ingest() {
        let dir = tempfile::tempdir().unwrap();
        write_sweep(&sample_sweep(), dir.path()).unwrap();
        let poses = dir.path().join("poses.csv");
        let text = fs::read_to_string(&poses).unwrap();
        let swapped: Vec<&str> = {
            let mut lines: Vec<&str> = text.lines().collect();
            lines.swap(2, 3);
            lines
        };
        fs::write(&poses, swapped.join("\n")).unwrap();
        let err = read_sweep(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "got: {err:?}");
        assert!(err.to_string().contains("strictly increase"), "got: {err}");
    }

    #[test]
    fn missing_pose_file_is_io_error_naming_path() {
        let dir = tempfile::tempdir().unwrap();
        write_sweep(&sample_sweep(), dir.path()).unwrap();
        fs::remove_file(dir.path().join("poses.csv")).unwrap();
        let err = read_sweep(dir.path()).unwrap_err();
        assert!(err.to_string().contains("poses.csv"), "got: {err}");
    }
}
