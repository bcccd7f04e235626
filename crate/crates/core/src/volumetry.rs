//! Volume computation: the 2D caliper ellipsoid formula, 3D voxel counting,
//! and dice overlap scoring.

use serde::{Deserialize, Serialize};

use crate::compound::LabelMask;
use crate::error::{Error, Result};

/// Caliper measurements of one lobe: length, width, depth in cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LobeAxes {
    pub length_cm: f64,
    pub width_cm: f64,
    pub depth_cm: f64,
}

impl LobeAxes {
    pub fn new(length_cm: f64, width_cm: f64, depth_cm: f64) -> Result<Self> {
        for (name, v) in [("length", length_cm), ("width", width_cm), ("depth", depth_cm)] {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive, got {v} cm")));
            }
            if v > 20.0 {
                return Err(Error::Domain(format!("{name} of {v} cm exceeds the 20 cm sanity bound")));
            }
        }
        Ok(LobeAxes { length_cm, width_cm, depth_cm })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumetryConfig {
    /// Dimensionless ellipsoid correction factor.
    pub correction_factor: f64,
}

impl Default for VolumetryConfig {
    fn default() -> Self {
        VolumetryConfig { correction_factor: 0.48 }
    }
}

impl VolumetryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.correction_factor > 0.0 && self.correction_factor <= 1.0) {
            return Err(Error::Config(format!(
                "correction factor must be in (0, 1], got {}",
                self.correction_factor
            )));
        }
        Ok(())
    }
}

/// Lobe volume in ml by the ellipsoid formula: factor * L * W * D (cm^3).
pub fn ellipsoid_volume(axes: &LobeAxes, cfg: &VolumetryConfig) -> Result<f64> {
    cfg.validate()?;
    LobeAxes::new(axes.length_cm, axes.width_cm, axes.depth_cm)?;
    Ok(cfg.correction_factor * axes.length_cm * axes.width_cm * axes.depth_cm)
}

/// Total gland volume: plain sum of the two lobes, no isthmus term.
pub fn total_thyroid_volume(left_ml: f64, right_ml: f64) -> Result<f64> {
    for (name, v) in [("left", left_ml), ("right", right_ml)] {
        if v < 0.0 {
            return Err(Error::Domain(format!("{name} lobe volume must be non-negative, got {v}")));
        }
    }
    Ok(left_ml + right_ml)
}

/// Voxel-count volume of a mask in ml (1 ml = 1000 mm^3).
pub fn mask_volume(mask: &LabelMask) -> f64 {
    let voxel_mm3 = mask.spacing.x * mask.spacing.y * mask.spacing.z;
    mask.foreground_count() as f64 * voxel_mm3 / 1000.0
}

/// Dice overlap 2|A∩B| / (|A| + |B|); two empty masks agree perfectly (1).
pub fn dice_score(a: &LabelMask, b: &LabelMask) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(Error::Shape {
            expected: format!("{:?} @ {:?}", a.dims, a.spacing),
            actual: format!("{:?} @ {:?}", b.dims, b.spacing),
        });
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        total += (x + y) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
