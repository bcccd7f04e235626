//! Reconstruction of a 3D voxel volume from a synchronized sweep by forward
//! (splatting) compounding with weighted averaging.
//!
//! Frames are processed in fixed-size blocks; each block accumulates into its
//! own sub-grid and blocks are merged in index order, so the result is
//! bit-identical for any worker count and invariant (to rounding) under frame
//! permutation.

mod resample;
mod volfile;

pub use resample::{resample_axial, AxialSlices};
pub use volfile::{read_mask, read_volume, write_mask, write_volume};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::trackio::SyncedFrame;

/// Frames per accumulation block; fixed so the reduction tree does not
/// depend on the worker count.
const FRAMES_PER_BLOCK: usize = 16;

/// Axis-aligned scalar volume; values in [0, 1], x-fastest layout.
///
/// `origin` is the world position of the center of voxel (0, 0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: (usize, usize, usize),
    data: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(origin: Vec3, spacing: Vec3, dims: (usize, usize, usize), data: Vec<f32>) -> Result<Self> {
        if spacing.x <= 0.0 || spacing.y <= 0.0 || spacing.z <= 0.0 {
            return Err(Error::Config(format!("voxel spacing must be positive, got {spacing:?}")));
        }
        if dims.0 < 1 || dims.1 < 1 || dims.2 < 1 {
            return Err(Error::Config(format!("grid dims must be at least 1, got {dims:?}")));
        }
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::Shape {
                expected: format!("{} voxels", dims.0 * dims.1 * dims.2),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(VoxelGrid { origin, spacing, dims, data })
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn voxel_count(&self) -> usize {
        self.data.len()
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin
            + Vec3::new(
                x as f64 * self.spacing.x,
                y as f64 * self.spacing.y,
                z as f64 * self.spacing.z,
            )
    }

    /// Volume of a single voxel in mm^3.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.x * self.spacing.y * self.spacing.z
    }
}

/// Per-voxel class labels sharing a grid's geometry. Values are 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: (usize, usize, usize),
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(origin: Vec3, spacing: Vec3, dims: (usize, usize, usize), data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.0 * dims.1 * dims.2 {
            return Err(Error::Shape {
                expected: format!("{} voxels", dims.0 * dims.1 * dims.2),
                actual: format!("{} labels", data.len()),
            });
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("labels must be 0 or 1, found {bad}")));
        }
        Ok(LabelMask { origin, spacing, dims, data })
    }

    /// Thresholds a compounded volume at `threshold`, keeping its geometry.
    pub fn from_threshold(grid: &VoxelGrid, threshold: f32) -> Self {
        let data = grid.data().iter().map(|&v| u8::from(v >= threshold)).collect();
        LabelMask {
            origin: grid.origin,
            spacing: grid.spacing,
            dims: grid.dims,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_geometry(&self, other: &LabelMask) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }
}

/// Splat kernel used to scatter pixel samples into the accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplatKernel {
    Nearest,
    Trilinear,
}

impl std::str::FromStr for SplatKernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(SplatKernel::Nearest),
            "trilinear" => Ok(SplatKernel::Trilinear),
            other => Err(Error::Config(format!("unknown splat kernel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompoundingConfig {
    /// Isotropic voxel edge, mm.
    pub voxel_spacing: f64,
    pub splat_kernel: SplatKernel,
    /// Neighborhood radius (voxels) for the one-pass hole fill.
    pub hole_fill_radius: usize,
    /// Margin added around the sweep bounding box, mm.
    pub padding: f64,
}

impl Default for CompoundingConfig {
    fn default() -> Self {
        CompoundingConfig {
            voxel_spacing: 0.5,
            splat_kernel: SplatKernel::Trilinear,
            hole_fill_radius: 1,
            padding: 2.0,
        }
    }
}

impl CompoundingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_spacing > 0.0) {
            return Err(Error::Config(format!(
                "voxel spacing must be positive, got {}",
                self.voxel_spacing
            )));
        }
        if !(self.padding >= 0.0) {
            return Err(Error::Config(format!("padding must be non-negative, got {}", self.padding)));
        }
        Ok(())
    }
}

/// Weight and weighted-intensity sums on the same geometry as the output grid.
#[derive(Debug, Clone)]
pub struct AccumulatorGrid {
    pub origin: Vec3,
    pub spacing: Vec3,
    pub dims: (usize, usize, usize),
    pub weight_sum: Vec<f64>,
    pub weighted_intensity_sum: Vec<f64>,
}

/// Axis-aligned box containing the four world-space corners of every frame,
/// expanded by `padding` mm on all sides.
pub fn bounding_box(synced: &[SyncedFrame<'_>], padding: f64) -> Result<(Vec3, Vec3)> {
    if synced.is_empty() {
        return Err(Error::EmptyInput("bounding_box requires at least one frame".into()));
    }
    let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in synced {
        let (w, h) = (s.frame.width(), s.frame.height());
        for (row, col) in [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)] {
            let p = s.pixel_world(row, col);
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
    }
    let pad = Vec3::new(padding, padding, padding);
    Ok((lo - pad, hi + pad))
}

struct BlockAccum {
    /// Sub-box offset in grid voxels.
    off: (usize, usize, usize),
    dims: (usize, usize, usize),
    weight: Vec<f64>,
    weighted: Vec<f64>,
}

/// Forward-compounds a synchronized sweep into a voxel grid.
pub fn compound(synced: &[SyncedFrame<'_>], config: &CompoundingConfig) -> Result<VoxelGrid> {
    config.validate()?;
    if synced.is_empty() {
        return Err(Error::EmptyInput("compound requires at least one frame".into()));
    }
    let (lo, hi) = bounding_box(synced, config.padding)?;
    let s = config.voxel_spacing;
    let dims = (
        ((hi.x - lo.x) / s).ceil() as usize + 1,
        ((hi.y - lo.y) / s).ceil() as usize + 1,
        ((hi.z - lo.z) / s).ceil() as usize + 1,
    );
    let spacing = Vec3::new(s, s, s);
    compound_into(synced, config, lo, spacing, dims)
}

/// Compounding onto an explicit grid geometry.
fn compound_into(
    synced: &[SyncedFrame<'_>],
    config: &CompoundingConfig,
    origin: Vec3,
    spacing: Vec3,
    dims: (usize, usize, usize),
) -> Result<VoxelGrid> {
    let blocks: Vec<&[SyncedFrame<'_>]> = synced.chunks(FRAMES_PER_BLOCK).collect();
    let partials: Vec<Option<BlockAccum>> = blocks
        .par_iter()
        .map(|block| accumulate_block(block, config, origin, spacing, dims))
        .collect();

    let n = dims.0 * dims.1 * dims.2;
    let mut acc = AccumulatorGrid {
        origin,
        spacing,
        dims,
        weight_sum: vec![0.0; n],
        weighted_intensity_sum: vec![0.0; n],
    };
    // Merge in block order: the summation tree is fixed by FRAMES_PER_BLOCK,
    // not by the thread count.
    for part in partials.into_iter().flatten() {
        for bz in 0..part.dims.2 {
            for by in 0..part.dims.1 {
                let src_row = part.dims.0 * (by + part.dims.1 * bz);
                let dst_row =
                    part.off.0 + dims.0 * ((part.off.1 + by) + dims.1 * (part.off.2 + bz));
                for bx in 0..part.dims.0 {
                    acc.weight_sum[dst_row + bx] += part.weight[src_row + bx];
                    acc.weighted_intensity_sum[dst_row + bx] += part.weighted[src_row + bx];
                }
            }
        }
    }
    Ok(finalize(&acc, config.hole_fill_radius))
}

fn accumulate_block(
    block: &[SyncedFrame<'_>],
    config: &CompoundingConfig,
    origin: Vec3,
    spacing: Vec3,
    dims: (usize, usize, usize),
) -> Option<BlockAccum> {
    // Sub-box: the block's frame corners in grid coordinates, expanded by the
    // kernel reach, clipped to the grid.
    let mut glo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut ghi = Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in block {
        let (w, h) = (s.frame.width(), s.frame.height());
        for (row, col) in [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)] {
            let p = s.pixel_world(row, col);
            let g = Vec3::new(
                (p.x - origin.x) / spacing.x,
                (p.y - origin.y) / spacing.y,
                (p.z - origin.z) / spacing.z,
            );
            glo = Vec3::new(glo.x.min(g.x), glo.y.min(g.y), glo.z.min(g.z));
            ghi = Vec3::new(ghi.x.max(g.x), ghi.y.max(g.y), ghi.z.max(g.z));
        }
    }
    let clamp_lo = |v: f64, n: usize| (v.floor() as i64 - 1).max(0).min(n as i64 - 1) as usize;
    let clamp_hi = |v: f64, n: usize| (v.ceil() as i64 + 1).max(0).min(n as i64 - 1) as usize;
    let off = (
        clamp_lo(glo.x, dims.0),
        clamp_lo(glo.y, dims.1),
        clamp_lo(glo.z, dims.2),
    );
    let end = (
        clamp_hi(ghi.x, dims.0),
        clamp_hi(ghi.y, dims.1),
        clamp_hi(ghi.z, dims.2),
    );
    let bdims = (end.0 - off.0 + 1, end.1 - off.1 + 1, end.2 - off.2 + 1);
    let n = bdims.0 * bdims.1 * bdims.2;
    let mut part = BlockAccum {
        off,
        dims: bdims,
        weight: vec![0.0; n],
        weighted: vec![0.0; n],
    };

    let bidx = |x: usize, y: usize, z: usize| x + bdims.0 * (y + bdims.1 * z);
    for s in block {
        let frame = s.frame;
        let (sx, sy) = frame.pixel_spacing();
        // Pixel world position is affine in (row, col); precompute the steps.
        let base = s.image_to_world.apply(Vec3::ZERO);
        let col_step = s.image_to_world.rotation.rotate(Vec3::new(sx, 0.0, 0.0));
        let row_step = s.image_to_world.rotation.rotate(Vec3::new(0.0, sy, 0.0));
        let raw = frame.raw();
        for row in 0..frame.height() {
            let row_base = base + row_step.scaled(row as f64);
            for col in 0..frame.width() {
                let p = row_base + col_step.scaled(col as f64);
                let gx = (p.x - origin.x) / spacing.x - off.0 as f64;
                let gy = (p.y - origin.y) / spacing.y - off.1 as f64;
                let gz = (p.z - origin.z) / spacing.z - off.2 as f64;
                let value = raw[row * frame.width() + col] as f64 / 255.0;
                match config.splat_kernel {
                    SplatKernel::Nearest => {
                        let (ix, iy, iz) = (gx.round() as i64, gy.round() as i64, gz.round() as i64);
                        if ix >= 0
                            && iy >= 0
                            && iz >= 0
                            && (ix as usize) < bdims.0
                            && (iy as usize) < bdims.1
                            && (iz as usize) < bdims.2
                        {
                            let i = bidx(ix as usize, iy as usize, iz as usize);
                            part.weight[i] += 1.0;
                            part.weighted[i] += value;
                        }
                    }
                    SplatKernel::Trilinear => {
                        let (x0, y0, z0) = (gx.floor(), gy.floor(), gz.floor());
                        let (fx, fy, fz) = (gx - x0, gy - y0, gz - z0);
                        let (x0, y0, z0) = (x0 as i64, y0 as i64, z0 as i64);
                        let wx = [1.0 - fx, fx];
                        let wy = [1.0 - fy, fy];
                        let wz = [1.0 - fz, fz];
                        for dz in 0..2usize {
                            let z = z0 + dz as i64;
                            if z < 0 || z as usize >= bdims.2 {
                                continue;
                            }
                            for dy in 0..2usize {
                                let y = y0 + dy as i64;
                                if y < 0 || y as usize >= bdims.1 {
                                    continue;
                                }
                                let wzy = wz[dz] * wy[dy];
                                for dx in 0..2usize {
                                    let x = x0 + dx as i64;
                                    if x < 0 || x as usize >= bdims.0 {
                                        continue;
                                    }
                                    let w = wzy * wx[dx];
                                    if w > 0.0 {
                                        let i = bidx(x as usize, y as usize, z as usize);
                                        part.weight[i] += w;
                                        part.weighted[i] += w * value;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Some(part)
}

/// Weight-normalizes the accumulator and fills unfilled voxels near coverage
/// from their filled neighbors (single pass over the pre-fill state).
fn finalize(acc: &AccumulatorGrid, hole_fill_radius: usize) -> VoxelGrid {
    let (nx, ny, nz) = acc.dims;
    let n = nx * ny * nz;
    let mut data = vec![0.0f32; n];
    let filled: Vec<bool> = acc.weight_sum.iter().map(|&w| w > 0.0).collect();
    for i in 0..n {
        if filled[i] {
            data[i] = (acc.weighted_intensity_sum[i] / acc.weight_sum[i]).clamp(0.0, 1.0) as f32;
        }
    }
    if hole_fill_radius > 0 {
        let r = hole_fill_radius as i64;
        // Candidate mask: voxels within the radius of any filled voxel, via
        // three separable 1D dilation passes of the filled bitmap.
        let candidates = dilate(&filled, acc.dims, hole_fill_radius);
        // Parallel over z-slabs; each voxel is written by exactly one task and
        // reads only the pre-fill state.
        let slab = nx * ny;
        let fills: Vec<Vec<(usize, f32)>> = (0..nz)
            .into_par_iter()
            .map(|z| {
                let mut out = Vec::new();
                for y in 0..ny {
                    for x in 0..nx {
                        let i = x + nx * y + slab * z;
                        if filled[i] || !candidates[i] {
                            continue;
                        }
                        let mut wsum = 0.0f64;
                        let mut wisum = 0.0f64;
                        for dz in -r..=r {
                            let zz = z as i64 + dz;
                            if zz < 0 || zz as usize >= nz {
                                continue;
                            }
                            for dy in -r..=r {
                                let yy = y as i64 + dy;
                                if yy < 0 || yy as usize >= ny {
                                    continue;
                                }
                                for dx in -r..=r {
                                    let xx = x as i64 + dx;
                                    if xx < 0 || xx as usize >= nx {
                                        continue;
                                    }
                                    let j = xx as usize + nx * yy as usize + slab * zz as usize;
                                    if filled[j] {
                                        wsum += acc.weight_sum[j];
                                        wisum += acc.weighted_intensity_sum[j];
                                    }
                                }
                            }
                        }
                        if wsum > 0.0 {
                            out.push((i, (wisum / wsum).clamp(0.0, 1.0) as f32));
                        }
                    }
                }
                out
            })
            .collect();
        for slab_fills in fills {
            for (i, v) in slab_fills {
                data[i] = v;
            }
        }
    }
    VoxelGrid {
        origin: acc.origin,
        spacing: acc.spacing,
        dims: acc.dims,
        data,
    }
}

/// Chebyshev dilation of a bitmap by `r` voxels (separable, one axis at a time).
fn dilate(mask: &[bool], dims: (usize, usize, usize), r: usize) -> Vec<bool> {
    let (nx, ny, nz) = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut a = mask.to_vec();
    let mut b = vec![false; mask.len()];
    // x axis
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let lo = x.saturating_sub(r);
                let hi = (x + r).min(nx - 1);
                b[idx(x, y, z)] = a[idx(lo, y, z)..=idx(hi, y, z)].iter().any(|&v| v);
            }
        }
    }
    std::mem::swap(&mut a, &mut b);
    // y axis
    for z in 0..nz {
        for y in 0..ny {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(ny - 1);
            for x in 0..nx {
                b[idx(x, y, z)] = (lo..=hi).any(|yy| a[idx(x, yy, z)]);
            }
        }
    }
    std::mem::swap(&mut a, &mut b);
    // z axis
    for z in 0..nz {
        let lo = z.saturating_sub(r);
        let hi = (z + r).min(nz - 1);
        for y in 0..ny {
            for x in 0..nx {
                b[idx(x, y, z)] = (lo..=hi).any(|zz| a[idx(x, y, zz)]);
            }
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{RigidTransform, UnitQuat};
    use crate::trackio::Frame;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn synced_at<'a>(frame: &'a Frame, pose: RigidTransform) -> SyncedFrame<'a> {
        SyncedFrame { frame, image_to_world: pose }
    }

    #[test]
    fn bounding_box_identity_frame() {
        // 11x11 px at 1 mm spacing: corner pixel centers span 0..10 mm.
        let frame = Frame::new(0.0, 11, 11, (1.0, 1.0), vec![128; 121]).unwrap();
        let synced = [synced_at(&frame, RigidTransform::IDENTITY)];
        let (lo, hi) = bounding_box(&synced, 0.0).unwrap();
        assert_eq!((lo.x, lo.y, lo.z), (0.0, 0.0, 0.0));
        assert_eq!((hi.x, hi.y, hi.z), (10.0, 10.0, 0.0));
    }

    #[test]
    fn bounding_box_translated_frame() {
        let frame = Frame::new(0.0, 11, 11, (1.0, 1.0), vec![128; 121]).unwrap();
        let pose = RigidTransform::new(UnitQuat::IDENTITY, Vec3::new(0.0, 0.0, 5.0));
        let synced = [synced_at(&frame, pose)];
        let (lo, hi) = bounding_box(&synced, 0.0).unwrap();
        assert_eq!((lo.x, lo.y, lo.z), (0.0, 0.0, 5.0));
        assert_eq!((hi.x, hi.y, hi.z), (10.0, 10.0, 5.0));
    }

    #[test]
    fn bounding_box_contains_all_corners_of_random_poses() {
        let mut rng = crate::rng::stream(99, &[1]);
        let frame = Frame::new(0.0, 7, 5, (0.8, 1.1), vec![0; 35]).unwrap();
        let mut synced = Vec::new();
        let mut poses = Vec::new();
        for _ in 0..100 {
            let q = UnitQuat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.1..1.0),
            )
            .unwrap();
            let t = Vec3::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
            );
            poses.push(RigidTransform::new(q, t));
        }
        for pose in &poses {
            synced.push(synced_at(&frame, *pose));
        }
        let (lo, hi) = bounding_box(&synced, 0.0).unwrap();
        // Brute force: every transformed corner must be inside.
        for s in &synced {
            for (row, col) in [(0usize, 0usize), (0, 6), (4, 0), (4, 6)] {
                let p = s.pixel_world(row, col);
                assert!(p.x >= lo.x - 1e-9 && p.x <= hi.x + 1e-9);
                assert!(p.y >= lo.y - 1e-9 && p.y <= hi.y + 1e-9);
                assert!(p.z >= lo.z - 1e-9 && p.z <= hi.z + 1e-9);
            }
        }
        assert!(matches!(bounding_box(&[], 0.0), Err(Error::EmptyInput(_))));
    }

    fn constant_frame(value: f64) -> Frame {
        let v = (value * 255.0).round() as u8;
        Frame::new(0.0, 9, 9, (1.0, 1.0), vec![v; 81]).unwrap()
    }

    #[test]
    fn single_constant_frame_nearest_splat() {
        let frame = constant_frame(0.6);
        let synced = [synced_at(&frame, RigidTransform::IDENTITY)];
        let cfg = CompoundingConfig {
            voxel_spacing: 1.0,
            splat_kernel: SplatKernel::Nearest,
            hole_fill_radius: 0,
            padding: 0.0,
        };
        let grid = compound(&synced, &cfg).unwrap();
        let expect = (0.6f64 * 255.0).round() / 255.0;
        let mut touched = 0;
        for &v in grid.data() {
            if v != 0.0 {
                assert_relative_eq!(v as f64, expect, epsilon = 1e-7);
                touched += 1;
            }
        }
        assert_eq!(touched, 81);
    }

    #[test]
    fn coincident_frames_average() {
        let a = constant_frame(0.2);
        let b = constant_frame(0.6);
        let synced = [synced_at(&a, RigidTransform::IDENTITY), synced_at(&b, RigidTransform::IDENTITY)];
        let cfg = CompoundingConfig {
            voxel_spacing: 1.0,
            splat_kernel: SplatKernel::Nearest,
            hole_fill_radius: 0,
            padding: 0.0,
        };
        let grid = compound(&synced, &cfg).unwrap();
        let ea = (0.2f64 * 255.0).round() / 255.0;
        let eb = (0.6f64 * 255.0).round() / 255.0;
        for &v in grid.data() {
            if v != 0.0 {
                assert_relative_eq!(v as f64, (ea + eb) / 2.0, epsilon = 1e-7);
            }
        }
    }

    fn random_sweep_frames(rng: &mut impl Rng, count: usize) -> Vec<(Frame, RigidTransform)> {
        (0..count)
            .map(|i| {
                let px: Vec<u8> = (0..25).map(|_| rng.random_range(40..230)).collect();
                let frame = Frame::new(i as f64 * 0.01, 5, 5, (1.0, 1.0), px).unwrap();
                let pose = RigidTransform::new(
                    UnitQuat::from_axis_angle(Vec3::new(0.1, 1.0, 0.2), rng.random_range(-0.1..0.1)).unwrap(),
                    Vec3::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        i as f64 * 0.7,
                    ),
                );
                (frame, pose)
            })
            .collect()
    }

    #[test]
    fn values_bounded_by_input_range() {
        let mut rng = crate::rng::stream(7, &[2]);
        let frames = random_sweep_frames(&mut rng, 24);
        let synced: Vec<SyncedFrame> = frames
            .iter()
            .map(|(f, p)| synced_at(f, *p))
            .collect();
        let grid = compound(&synced, &CompoundingConfig::default()).unwrap();
        let lo = 40.0 / 255.0 - 1e-7;
        let hi = 229.0 / 255.0 + 1e-7;
        for &v in grid.data() {
            assert!(v == 0.0 || ((v as f64) >= lo && (v as f64) <= hi), "out of range: {v}");
        }
    }

    #[test]
    fn frame_permutation_invariance() {
        let mut rng = crate::rng::stream(7, &[3]);
        let frames = random_sweep_frames(&mut rng, 20);
        let synced: Vec<SyncedFrame> = frames.iter().map(|(f, p)| synced_at(f, *p)).collect();
        let mut shuffled: Vec<SyncedFrame> = synced.clone();
        shuffled.reverse();
        shuffled.swap(0, 7);
        let a = compound(&synced, &CompoundingConfig::default()).unwrap();
        let b = compound(&shuffled, &CompoundingConfig::default()).unwrap();
        assert_eq!(a.dims, b.dims);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() as f64 <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn adding_frames_never_reduces_coverage() {
        let mut rng = crate::rng::stream(7, &[4]);
        let frames = random_sweep_frames(&mut rng, 12);
        let synced: Vec<SyncedFrame> = frames.iter().map(|(f, p)| synced_at(f, *p)).collect();
        let cfg = CompoundingConfig {
            hole_fill_radius: 0,
            ..CompoundingConfig::default()
        };
        // Fix the grid geometry, then grow the frame set.
        let (lo, hi) = bounding_box(&synced, cfg.padding).unwrap();
        let s = cfg.voxel_spacing;
        let dims = (
            ((hi.x - lo.x) / s).ceil() as usize + 1,
            ((hi.y - lo.y) / s).ceil() as usize + 1,
            ((hi.z - lo.z) / s).ceil() as usize + 1,
        );
        let mut prev = 0usize;
        for k in 1..=synced.len() {
            let grid =
                compound_into(&synced[..k], &cfg, lo, Vec3::new(s, s, s), dims).unwrap();
            let filled = grid.data().iter().filter(|&&v| v != 0.0).count();
            assert!(filled >= prev, "coverage dropped from {prev} to {filled} at k={k}");
            prev = filled;
        }
    }

    #[test]
    fn config_errors() {
        let frame = constant_frame(0.5);
        let synced = [synced_at(&frame, RigidTransform::IDENTITY)];
        let bad = CompoundingConfig {
            voxel_spacing: 0.0,
            ..CompoundingConfig::default()
        };
        assert!(matches!(compound(&synced, &bad), Err(Error::Config(_))));
        assert!(matches!(
            compound(&[], &CompoundingConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn hole_fill_bridges_gap() {
        // Two frames 2 mm apart along z at 1 mm voxels leave a gap slice that
        // one-pass filling must close.
        let a = constant_frame(0.4);
        let mut bf = constant_frame(0.8);
        bf.t = 0.01;
        let b = bf;
        let pose_b = RigidTransform::new(UnitQuat::IDENTITY, Vec3::new(0.0, 0.0, 2.0));
        let synced = [synced_at(&a, RigidTransform::IDENTITY), synced_at(&b, pose_b)];
        let cfg = CompoundingConfig {
            voxel_spacing: 1.0,
            splat_kernel: SplatKernel::Nearest,
            hole_fill_radius: 1,
            padding: 0.0,
        };
        let grid = compound(&synced, &cfg).unwrap();
        // Middle slice z=1 sits between the two frames.
        let mid = grid.value(4, 4, 1) as f64;
        let expect = ((0.4f64 * 255.0).round() + (0.8f64 * 255.0).round()) / 255.0 / 2.0;
        assert_relative_eq!(mid, expect, epsilon = 1e-7);
    }
}
