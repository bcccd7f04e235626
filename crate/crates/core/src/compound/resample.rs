//! Axial slice extraction with isotropic rescaling and centering, plus the
//! bookkeeping needed to invert a volume computation and to map per-slice
//! labels back onto the source grid.

use crate::error::{Error, Result};
use crate::compound::{LabelMask, VoxelGrid};

/// Axial (fixed-z) slices rescaled into a `width x height` canvas.
#[derive(Debug, Clone)]
pub struct AxialSlices {
    pub width: usize,
    pub height: usize,
    /// Isotropic edge length of one output pixel, mm.
    pub pixel_size_mm: f64,
    /// Slice thickness (the grid's z spacing), mm.
    pub thickness_mm: f64,
    /// One row-major `height x width` plane per grid z index.
    pub slices: Vec<Vec<f32>>,
    grid_spacing: (f64, f64),
    pad_x: usize,
    pad_y: usize,
    content_w: usize,
    content_h: usize,
}

impl AxialSlices {
    /// Area covered by one output pixel, mm^2.
    pub fn pixel_area_mm2(&self) -> f64 {
        self.pixel_size_mm * self.pixel_size_mm
    }

    /// Maps per-slice label planes (same canvas size) back onto the source
    /// grid geometry by nearest neighbor.
    pub fn labels_to_grid(&self, labels: &[Vec<u8>], grid: &VoxelGrid) -> Result<LabelMask> {
        let (nx, ny, nz) = grid.dims;
        if labels.len() != nz {
            return Err(Error::Shape {
                expected: format!("{nz} label planes"),
                actual: format!("{}", labels.len()),
            });
        }
        let mut data = vec![0u8; nx * ny * nz];
        for (z, plane) in labels.iter().enumerate() {
            if plane.len() != self.width * self.height {
                return Err(Error::Shape {
                    expected: format!("{}x{} plane", self.width, self.height),
                    actual: format!("{} labels", plane.len()),
                });
            }
            for y in 0..ny {
                let row = self.grid_to_canvas_y(y);
                for x in 0..nx {
                    let col = self.grid_to_canvas_x(x);
                    if let (Some(row), Some(col)) = (row, col) {
                        data[x + nx * (y + ny * z)] = plane[row * self.width + col];
                    }
                }
            }
        }
        LabelMask::new(grid.origin, grid.spacing, grid.dims, data)
    }

    /// World position of a canvas pixel center on slice `z`, or None in the
    /// zero-padding region outside the resampled content.
    pub fn canvas_to_world(&self, grid: &VoxelGrid, col: usize, row: usize, z: usize) -> Option<crate::geom::Vec3> {
        if col < self.pad_x || col >= self.pad_x + self.content_w || row < self.pad_y || row >= self.pad_y + self.content_h {
            return None;
        }
        let gx = ((col - self.pad_x) as f64 + 0.5) * self.pixel_size_mm / grid.spacing.x - 0.5;
        let gy = ((row - self.pad_y) as f64 + 0.5) * self.pixel_size_mm / grid.spacing.y - 0.5;
        Some(
            grid.origin
                + crate::geom::Vec3::new(gx * grid.spacing.x, gy * grid.spacing.y, z as f64 * grid.spacing.z),
        )
    }

    fn grid_to_canvas_x(&self, x: usize) -> Option<usize> {
        let c = ((x as f64 + 0.5) * self.grid_spacing.0 / self.pixel_size_mm - 0.5).round() as i64;
        let c = c.clamp(0, self.content_w as i64 - 1) + self.pad_x as i64;
        ((c as usize) < self.width).then_some(c as usize)
    }

    fn grid_to_canvas_y(&self, y: usize) -> Option<usize> {
        let r = ((y as f64 + 0.5) * self.grid_spacing.1 / self.pixel_size_mm - 0.5).round() as i64;
        let r = r.clamp(0, self.content_h as i64 - 1) + self.pad_y as i64;
        ((r as usize) < self.height).then_some(r as usize)
    }

    #[cfg(test)]
    fn content(&self) -> (usize, usize, usize, usize) {
        (self.pad_x, self.pad_y, self.content_w, self.content_h)
    }
}

/// Extracts axial slices rescaled isotropically (bilinear) to fit the target
/// canvas while preserving aspect ratio, zero-padded and centered.
pub fn resample_axial(grid: &VoxelGrid, target_size: (usize, usize)) -> Result<AxialSlices> {
    let (tw, th) = target_size;
    if tw < 1 || th < 1 {
        return Err(Error::Config(format!("target size must be at least 1x1, got {tw}x{th}")));
    }
    let (nx, ny, nz) = grid.dims;
    let extent_x = nx as f64 * grid.spacing.x;
    let extent_y = ny as f64 * grid.spacing.y;
    // Output pixel edge: smallest isotropic size that fits both extents.
    let pixel_size = (extent_x / tw as f64).max(extent_y / th as f64);
    let content_w = ((extent_x / pixel_size).round() as usize).clamp(1, tw);
    let content_h = ((extent_y / pixel_size).round() as usize).clamp(1, th);
    let pad_x = (tw - content_w) / 2;
    let pad_y = (th - content_h) / 2;

    let scale_x = pixel_size / grid.spacing.x;
    let scale_y = pixel_size / grid.spacing.y;

    let mut slices = Vec::with_capacity(nz);
    for z in 0..nz {
        let mut plane = vec![0.0f32; tw * th];
        for r in 0..content_h {
            let gy = (r as f64 + 0.5) * scale_y - 0.5;
            let y0 = gy.floor();
            let fy = gy - y0;
            let y0 = y0 as i64;
            for c in 0..content_w {
                let gx = (c as f64 + 0.5) * scale_x - 0.5;
                let x0 = gx.floor();
                let fx = gx - x0;
                let x0 = x0 as i64;
                let sample = |xi: i64, yi: i64| -> f64 {
                    let x = xi.clamp(0, nx as i64 - 1) as usize;
                    let y = yi.clamp(0, ny as i64 - 1) as usize;
                    grid.value(x, y, z) as f64
                };
                let v = (1.0 - fy) * ((1.0 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0))
                    + fy * ((1.0 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1));
                plane[(r + pad_y) * tw + (c + pad_x)] = v as f32;
            }
        }
        slices.push(plane);
    }

    Ok(AxialSlices {
        width: tw,
        height: th,
        pixel_size_mm: pixel_size,
        thickness_mm: grid.spacing.z,
        slices,
        grid_spacing: (grid.spacing.x, grid.spacing.y),
        pad_x,
        pad_y,
        content_w,
        content_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use approx::assert_relative_eq;

    fn grid_with(nx: usize, ny: usize, nz: usize, s: f64, f: impl Fn(usize, usize, usize) -> f32) -> VoxelGrid {
        let mut data = vec![0.0f32; nx * ny * nz];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data[x + nx * (y + ny * z)] = f(x, y, z);
                }
            }
        }
        VoxelGrid::new(Vec3::ZERO, Vec3::new(s, s, s), (nx, ny, nz), data).unwrap()
    }

    #[test]
    fn identity_when_already_at_target_size() {
        let grid = grid_with(8, 8, 3, 0.7, |x, y, z| (x * 64 + y * 8 + z) as f32 / 300.0);
        let out = resample_axial(&grid, (8, 8)).unwrap();
        assert_eq!(out.content(), (0, 0, 8, 8));
        for z in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(out.slices[z][y * 8 + x], grid.value(x, y, z));
                }
            }
        }
        assert_relative_eq!(out.pixel_size_mm, 0.7, epsilon = 1e-15);
    }

    #[test]
    fn downscale_of_constant_grid_stays_constant() {
        let grid = grid_with(16, 16, 2, 0.5, |_, _, _| 0.37);
        let out = resample_axial(&grid, (8, 8)).unwrap();
        for z in 0..2 {
            for v in &out.slices[z] {
                assert_relative_eq!(*v as f64, 0.37, epsilon = 1e-6);
            }
        }
        assert_relative_eq!(out.pixel_size_mm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn centered_padding_for_non_square_grid() {
        let grid = grid_with(16, 8, 1, 1.0, |_, _, _| 1.0);
        let out = resample_axial(&grid, (16, 16)).unwrap();
        let (pad_x, pad_y, cw, ch) = out.content();
        assert_eq!((pad_x, cw), (0, 16));
        assert_eq!((pad_y, ch), (4, 8));
        // Padding rows are zero.
        for x in 0..16 {
            assert_eq!(out.slices[0][x], 0.0);
            assert_eq!(out.slices[0][15 * 16 + x], 0.0);
        }
        assert!(out.slices[0][5 * 16 + 3] > 0.9);
    }

    #[test]
    fn volume_bookkeeping_round_trip() {
        // Rasterized ball as a mask-like grid; slice-sum volume must match
        // voxel-count volume within 2%.
        let n = 40;
        let r = 8.5;
        let grid = grid_with(n, n, n, 0.5, |x, y, z| {
            let c = (n / 2) as f64;
            let d2 = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2)).sqrt();
            if d2 <= r {
                1.0
            } else {
                0.0
            }
        });
        let voxel_count_volume =
            grid.data().iter().filter(|&&v| v >= 0.5).count() as f64 * grid.voxel_volume_mm3();

        let out = resample_axial(&grid, (64, 64)).unwrap();
        let mut slice_volume = 0.0;
        for plane in &out.slices {
            let fg = plane.iter().filter(|&&v| v >= 0.5).count() as f64;
            slice_volume += fg * out.pixel_area_mm2() * out.thickness_mm;
        }
        let rel = (slice_volume - voxel_count_volume).abs() / voxel_count_volume;
        assert!(rel <= 0.02, "slice bookkeeping off by {:.3}%", rel * 100.0);
    }

    #[test]
    fn degenerate_target_rejected() {
        let grid = grid_with(4, 4, 1, 1.0, |_, _, _| 0.0);
        assert!(matches!(resample_axial(&grid, (0, 8)), Err(Error::Config(_))));
    }

    #[test]
    fn labels_round_trip_through_canvas() {
        let n = 24;
        let grid = grid_with(n, n, 4, 0.75, |x, y, _| {
            if (x as i64 - 12).abs() < 6 && (y as i64 - 12).abs() < 4 {
                1.0
            } else {
                0.0
            }
        });
        let out = resample_axial(&grid, (48, 48)).unwrap();
        let labels: Vec<Vec<u8>> = out
            .slices
            .iter()
            .map(|plane| plane.iter().map(|&v| u8::from(v >= 0.5)).collect())
            .collect();
        let mask = out.labels_to_grid(&labels, &grid).unwrap();
        let truth = grid.data().iter().filter(|&&v| v >= 0.5).count();
        let got = mask.foreground_count();
        let rel = (got as f64 - truth as f64).abs() / truth as f64;
        assert!(rel <= 0.05, "label round trip changed volume by {:.3}%", rel * 100.0);
        assert_eq!(mask.dims, grid.dims);
    }
}
