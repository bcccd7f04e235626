//! Synthetic training data: slices of compounded phantom sweeps paired with
//! analytic ground-truth masks rasterized on the network canvas.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compound::{compound, resample_axial};
use crate::error::{Error, Result};
use crate::neuralseg::TrainSample;
use crate::phantom::study::{subject_phantom, StudyConfig};
use crate::phantom::PhantomSpec;
use crate::trackio::{synchronize, LobeSide};

/// Absolute floor on foreground pixels for a lobe-bearing slice.
const MIN_FG_PX: usize = 150;
/// A slice must also reach this fraction of its lobe's largest cross-section:
/// near-pole slices sit below the acquisition's resolvable scale (their
/// attainable overlap is bounded by boundary blur over a tiny area) and they
/// carry almost no volume.
const MIN_FG_FRACTION: f64 = 0.5;

fn rasterize_mask(
    spec: &PhantomSpec,
    grid: &crate::compound::VoxelGrid,
    slices: &crate::compound::AxialSlices,
    z: usize,
) -> Vec<u8> {
    let mut mask = vec![0u8; slices.width * slices.height];
    for row in 0..slices.height {
        for col in 0..slices.width {
            if let Some(p) = slices.canvas_to_world(grid, col, row, z) {
                if spec.lobes[0].contains(p) || spec.lobes[1].contains(p) {
                    mask[row * slices.width + col] = 1;
                }
            }
        }
    }
    mask
}

/// Generates `phantoms * 2 * slices_per_lobe` training pairs by sweeping,
/// compounding and slicing each lobe of each phantom under the study
/// protocol (with its noise models active), labeling each slice from the
/// analytic geometry. Slice picks per lobe are spread evenly over the
/// lobe-bearing range, with the first pick swapped for an empty slice so the
/// network sees pure background too.
pub fn training_slices(
    cfg: &StudyConfig,
    phantoms: usize,
    slices_per_lobe: usize,
    input_size: usize,
) -> Result<Vec<TrainSample>> {
    if phantoms == 0 || slices_per_lobe == 0 {
        return Err(Error::Config("need at least one phantom and one slice per lobe".into()));
    }
    let per_phantom: Vec<Result<Vec<TrainSample>>> = (0..phantoms)
        .into_par_iter()
        .map(|s| {
            let spec = subject_phantom(cfg, s);
            let mut samples = Vec::with_capacity(2 * slices_per_lobe);
            for side in [LobeSide::Left, LobeSide::Right] {
                let sim = crate::phantom::study::simulate_subject_sweep(cfg, s, 1, 1, side)?;
                let synced = synchronize(&sim.sweep)?;
                let grid = compound(&synced, &cfg.compounding)?;
                let slices = resample_axial(&grid, (input_size, input_size))?;
                let masks: Vec<Vec<u8>> = (0..grid.dims.2)
                    .map(|z| rasterize_mask(&spec, &grid, &slices, z))
                    .collect();
                let fg_counts: Vec<usize> = masks
                    .iter()
                    .map(|m| m.iter().filter(|&&v| v == 1).count())
                    .collect();
                let max_fg = fg_counts.iter().cloned().max().unwrap_or(0);
                let min_fg = MIN_FG_PX.max((max_fg as f64 * MIN_FG_FRACTION) as usize);
                let bearing: Vec<usize> = (0..grid.dims.2)
                    .filter(|&z| fg_counts[z] >= min_fg)
                    .collect();
                if bearing.is_empty() {
                    return Err(Error::Data(format!(
                        "phantom {s} {side} lobe produced no lobe-bearing slices"
                    )));
                }
                let empty = (0..grid.dims.2).find(|z| !bearing.contains(z));
                let denom = (slices_per_lobe - 1).max(1);
                for i in 0..slices_per_lobe {
                    let z = match empty {
                        Some(e) if i == 0 && slices_per_lobe > 1 => e,
                        _ => bearing[(i * (bearing.len() - 1)) / denom],
                    };
                    let image: Vec<f64> = slices.slices[z].iter().map(|&v| v as f64).collect();
                    samples.push(TrainSample::new(image, masks[z].clone(), input_size, input_size)?);
                }
            }
            Ok(samples)
        })
        .collect();

    let mut out = Vec::with_capacity(phantoms * 2 * slices_per_lobe);
    for item in per_phantom {
        out.extend(item?);
    }
    Ok(out)
}

/// Stratified split: every fifth sample validates, the rest train.
pub fn split_train_val(samples: &[TrainSample]) -> (Vec<TrainSample>, Vec<TrainSample>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        if i % 5 == 4 {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    (train, val)
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    count: usize,
    input_size: usize,
}

/// Writes a dataset directory: `dataset.json` plus `images/NNNNN.pgm` and
/// `masks/NNNNN.pgm` pairs (masks use 0/255).
pub fn save_dataset(samples: &[TrainSample], dir: &Path) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("dataset is empty".into()))?;
    let images = dir.join("images");
    let masks = dir.join("masks");
    fs::create_dir_all(&images).map_err(|e| Error::io(images.display().to_string(), e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(masks.display().to_string(), e))?;
    let header = DatasetHeader { count: samples.len(), input_size: first.w };
    let hp = dir.join("dataset.json");
    fs::write(&hp, serde_json::to_string_pretty(&header).expect("header serializes"))
        .map_err(|e| Error::io(hp.display().to_string(), e))?;
    for (i, s) in samples.iter().enumerate() {
        let img: Vec<u8> = s.image.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let msk: Vec<u8> = s.mask.iter().map(|&v| v * 255).collect();
        crate::trackio::write_pgm(&images.join(format!("{i:05}.pgm")), s.w, s.h, &img)?;
        crate::trackio::write_pgm(&masks.join(format!("{i:05}.pgm")), s.w, s.h, &msk)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<TrainSample>> {
    let hp = dir.join("dataset.json");
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(hp.display().to_string(), e))?;
    let header: DatasetHeader = serde_json::from_str(&text)
        .map_err(|e| Error::format(hp.display().to_string(), None, e.to_string()))?;
    let mut samples = Vec::with_capacity(header.count);
    for i in 0..header.count {
        let ip = dir.join("images").join(format!("{i:05}.pgm"));
        let mp = dir.join("masks").join(format!("{i:05}.pgm"));
        let (w, h, img) = crate::trackio::read_pgm(&ip)?;
        let (mw, mh, msk) = crate::trackio::read_pgm(&mp)?;
        if (w, h) != (mw, mh) {
            return Err(Error::format(
                mp.display().to_string(),
                None,
                format!("mask is {mw}x{mh} but image is {w}x{h}"),
            ));
        }
        let image: Vec<f64> = img.iter().map(|&v| v as f64 / 255.0).collect();
        let mask: Vec<u8> = msk.iter().map(|&v| u8::from(v >= 128)).collect();
        samples.push(TrainSample::new(image, mask, h, w)?);
    }
    Ok(samples)
}
