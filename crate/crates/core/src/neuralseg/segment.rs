//! Slice-wise volume segmentation: axial resampling to the network canvas,
//! per-slice inference, argmax, and nearest-neighbor mapping back onto the
//! source grid. A fixed-threshold fallback segmenter shares the interface.

use rayon::prelude::*;

use crate::compound::{resample_axial, LabelMask, VoxelGrid};
use crate::error::Result;
use crate::neuralseg::net::QuickNatLite;
use crate::neuralseg::tensor::Tensor4;

/// Segments a compounded volume with the network, slice by slice.
pub fn segment_volume(net: &QuickNatLite, grid: &VoxelGrid) -> Result<LabelMask> {
    let size = net.spec.input_size;
    let slices = resample_axial(grid, (size, size))?;
    let labels: Vec<Result<Vec<u8>>> = slices
        .slices
        .par_iter()
        .map(|plane| {
            let data: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
            let x = Tensor4::from_vec(1, 1, size, size, data)?;
            let probs = net.infer(&x)?;
            let fg = probs.plane(0, 1);
            let bg = probs.plane(0, 0);
            Ok(fg.iter().zip(bg).map(|(f, b)| u8::from(f >= b)).collect())
        })
        .collect();
    let labels: Vec<Vec<u8>> = labels.into_iter().collect::<Result<_>>()?;
    slices.labels_to_grid(&labels, grid)
}

/// How the 3D pipeline turns a compounded volume into a label mask.
#[derive(Debug, Clone, Copy)]
pub enum Segmenter<'a> {
    /// Fixed-threshold fallback (midpoint of the phantom intensity bands).
    Threshold(f32),
    Network(&'a QuickNatLite),
}

impl Segmenter<'_> {
    pub fn apply(&self, grid: &VoxelGrid) -> Result<LabelMask> {
        match self {
            Segmenter::Threshold(t) => Ok(LabelMask::from_threshold(grid, *t)),
            Segmenter::Network(net) => segment_volume(net, grid),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec3;
    use crate::neuralseg::net::ArchitectureSpec;

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
    fn mask_geometry_matches_grid() {
        let net = QuickNatLite::new(
            ArchitectureSpec { channels: 4, input_size: 32, ..ArchitectureSpec::default() },
            5,
        )
        .unwrap();
        let grid = grid_with(20, 24, 3, 0.8, |x, _, _| if x > 10 { 0.8 } else { 0.1 });
        let mask = segment_volume(&net, &grid).unwrap();
        assert_eq!(mask.dims, grid.dims);
        assert_eq!(mask.spacing, grid.spacing);
        assert_eq!(mask.origin, grid.origin);
    }

    #[test]
    fn threshold_segmenter_counts_bright_voxels() {
        let grid = grid_with(10, 10, 2, 1.0, |x, _, _| if x < 3 { 0.9 } else { 0.1 });
        let mask = Segmenter::Threshold(0.5).apply(&grid).unwrap();
        assert_eq!(mask.foreground_count(), 3 * 10 * 2);
    }
}
