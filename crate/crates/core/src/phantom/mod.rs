//! Analytic two-lobe phantom: a deterministic intensity field with exactly
//! known lobe volumes, plus the virtual-observer models that stand in for
//! human acquisition behavior.

mod dataset;
mod study;
mod sweep;

pub use dataset::{load_dataset, save_dataset, split_train_val, training_slices};
pub use study::{
    run_study, simulate_subject_sweep, subject_phantom, PopulationConfig, StudyConfig,
    StudyOutput, SweepProtocol,
};
pub use sweep::{simulate_sweep, SimulatedSweep, SweepTrajectory};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{UnitQuat, Vec3};
use crate::obstats::dist::ln_gamma;
use crate::volumetry::LobeAxes;

/// Speckle cell edge, mm.
const SPECKLE_CELL_MM: f64 = 0.8;
/// Amplitude of the slow background texture.
const TEXTURE_AMPLITUDE: f64 = 0.04;

/// One lobe as a rotated superellipsoid: |x/a|^n + |y/b|^n + |z/c|^n <= 1 in
/// the local frame. Exponent 2 is a plain ellipsoid. The local x axis is the
/// lobe's long (length) axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LobeShape {
    pub center: Vec3,
    /// Semi-axes (a, b, c), mm.
    pub semi_axes: Vec3,
    /// Local-to-world rotation.
    pub rotation: UnitQuat,
    pub exponent: f64,
}

impl LobeShape {
    pub fn validate(&self) -> Result<()> {
        if !(self.semi_axes.x > 0.0 && self.semi_axes.y > 0.0 && self.semi_axes.z > 0.0) {
            return Err(Error::Config(format!("semi-axes must be positive, got {:?}", self.semi_axes)));
        }
        if !(self.exponent >= 1.0) {
            return Err(Error::Config(format!("superellipsoid exponent must be >= 1, got {}", self.exponent)));
        }
        Ok(())
    }

    /// Implicit level: <= 1 inside.
    pub fn level(&self, p: Vec3) -> f64 {
        let local = self.rotation.conjugate().rotate(p - self.center);
        let n = self.exponent;
        if n == 2.0 {
            let u = local.x / self.semi_axes.x;
            let v = local.y / self.semi_axes.y;
            let w = local.z / self.semi_axes.z;
            u * u + v * v + w * w
        } else {
            (local.x / self.semi_axes.x).abs().powf(n)
                + (local.y / self.semi_axes.y).abs().powf(n)
                + (local.z / self.semi_axes.z).abs().powf(n)
        }
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.level(p) <= 1.0
    }

    /// Norm-equivalence factor for the fast containment shell test:
    /// ||u||_n is within [min(1, f^-1), max(1, f)] of ||u||_2 with
    /// f = 3^|1/n - 1/2|.
    pub(crate) fn shell_factor_sq(&self) -> f64 {
        let n = self.exponent;
        let f = 3f64.powf((1.0 / n - 0.5).abs());
        f * f
    }

    /// Containment decision identical to [`LobeShape::contains`] but taking
    /// the precomputed shell factor; the exact (powf) level evaluation only
    /// runs for points in the thin shell where the 2-norm is inconclusive.
    pub(crate) fn contains_fast(&self, p: Vec3, factor_sq: f64) -> bool {
        let local = self.rotation.conjugate().rotate(p - self.center);
        let u = local.x / self.semi_axes.x;
        let v = local.y / self.semi_axes.y;
        let w = local.z / self.semi_axes.z;
        let q2 = u * u + v * v + w * w;
        let n = self.exponent;
        if n == 2.0 {
            return q2 <= 1.0;
        }
        if n < 2.0 {
            // ||u||_n >= ||u||_2 and ||u||_n <= f ||u||_2.
            if q2 > 1.0 {
                return false;
            }
            if q2 * factor_sq <= 1.0 {
                return true;
            }
        } else {
            // ||u||_n <= ||u||_2 and ||u||_n >= ||u||_2 / f.
            if q2 <= 1.0 {
                return true;
            }
            if q2 > factor_sq {
                return false;
            }
        }
        self.level(p) <= 1.0
    }

    /// Exact volume: 8abc Γ(1+1/n)^3 / Γ(1+3/n); π/6·(2a)(2b)(2c) at n = 2.
    pub fn analytic_volume_mm3(&self) -> f64 {
        let n = self.exponent;
        let (a, b, c) = (self.semi_axes.x, self.semi_axes.y, self.semi_axes.z);
        let ratio = (3.0 * ln_gamma(1.0 + 1.0 / n) - ln_gamma(1.0 + 3.0 / n)).exp();
        8.0 * a * b * c * ratio
    }

    pub fn max_semi_axis(&self) -> f64 {
        self.semi_axes.x.max(self.semi_axes.y).max(self.semi_axes.z)
    }

    /// True principal extents (2a, 2b, 2c) as caliper axes in cm.
    pub fn true_axes_cm(&self) -> LobeAxes {
        LobeAxes {
            length_cm: 2.0 * self.semi_axes.x / 10.0,
            width_cm: 2.0 * self.semi_axes.y / 10.0,
            depth_cm: 2.0 * self.semi_axes.z / 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    /// Index 0 = left lobe, 1 = right lobe.
    pub lobes: [LobeShape; 2],
    /// Intensity step between lobe tissue and background.
    pub contrast: f64,
    pub background_level: f64,
    pub speckle_sd: f64,
    /// Spatial scale of the slow background texture, mm.
    pub background_texture_scale_mm: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for lobe in &self.lobes {
            lobe.validate()?;
        }
        if !(self.contrast > 0.0 && self.contrast <= 1.0) {
            return Err(Error::Config(format!("contrast must be in (0, 1], got {}", self.contrast)));
        }
        if !(self.background_level >= 0.0 && self.background_level + self.contrast <= 1.0) {
            return Err(Error::Config(format!(
                "background {} + contrast {} must stay within [0, 1]",
                self.background_level, self.contrast
            )));
        }
        if self.speckle_sd < 0.0 {
            return Err(Error::Config("speckle sd must be non-negative".into()));
        }
        if !(self.background_texture_scale_mm > 0.0) {
            return Err(Error::Config("texture scale must be positive".into()));
        }
        Ok(())
    }

    /// Exact total volume in ml, independent of all noise parameters.
    pub fn analytic_total_volume_ml(&self) -> f64 {
        self.lobes.iter().map(|l| l.analytic_volume_mm3()).sum::<f64>() / 1000.0
    }

    /// Midpoint between tissue and background intensity: the natural
    /// segmentation threshold for compounded volumes of this phantom.
    pub fn segmentation_threshold(&self) -> f64 {
        self.background_level + self.contrast / 2.0
    }
}

/// Zero-mean unit-variance deviate from a lattice hash (uniform shape).
fn cell_deviate(seed: u64, p: Vec3, cell_mm: f64) -> f64 {
    let ix = (p.x / cell_mm).floor() as i64;
    let iy = (p.y / cell_mm).floor() as i64;
    let iz = (p.z / cell_mm).floor() as i64;
    let u = crate::rng::unit_f64(crate::rng::hash_cell(seed, ix, iy, iz));
    (u - 0.5) * (12.0f64).sqrt()
}

/// Deterministic intensity at a world point: tissue or textured background
/// plus seeded speckle, clamped to [0, 1].
pub fn phantom_field(spec: &PhantomSpec, p: Vec3) -> f64 {
    let inside = spec.lobes[0].contains(p) || spec.lobes[1].contains(p);
    field_intensity(spec, p, inside)
}

pub(crate) fn field_intensity(spec: &PhantomSpec, p: Vec3, inside: bool) -> f64 {
    let base = if inside {
        spec.background_level + spec.contrast
    } else {
        spec.background_level
            + TEXTURE_AMPLITUDE * cell_deviate(spec.seed ^ 0x7465_7874, p, spec.background_texture_scale_mm)
    };
    if spec.speckle_sd == 0.0 {
        return base.clamp(0.0, 1.0);
    }
    let speckle = spec.speckle_sd * cell_deviate(spec.seed ^ 0x7370_6563, p, SPECKLE_CELL_MM);
    (base + speckle).clamp(0.0, 1.0)
}

/// Virtual-observer noise model; the tracking defaults mirror the recording
/// hardware (1.40 mm / 0.50 deg RMS).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverModel {
    /// Per-axis multiplicative caliper error (2D protocol), as a fraction.
    pub axis_noise_sd: f64,
    /// Whole-sweep placement jitter (3D protocol).
    pub trajectory_translation_sd_mm: f64,
    pub trajectory_rotation_sd_deg: f64,
    /// Tracking error magnitudes (3D vector RMS).
    pub pose_position_rms_mm: f64,
    pub pose_angle_rms_deg: f64,
    /// Correlation time of the tracking error process, seconds.
    pub pose_noise_correlation_s: f64,
    pub seed: u64,
}

impl Default for ObserverModel {
    fn default() -> Self {
        ObserverModel {
            axis_noise_sd: 0.08,
            trajectory_translation_sd_mm: 1.5,
            trajectory_rotation_sd_deg: 2.0,
            pose_position_rms_mm: 1.40,
            pose_angle_rms_deg: 0.50,
            pose_noise_correlation_s: 1.5,
            seed: 0,
        }
    }
}

impl ObserverModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.axis_noise_sd,
            self.trajectory_translation_sd_mm,
            self.trajectory_rotation_sd_deg,
            self.pose_position_rms_mm,
            self.pose_angle_rms_deg,
        ];
        if all.iter().any(|v| *v < 0.0) {
            return Err(Error::Config("observer noise magnitudes must be non-negative".into()));
        }
        if !(self.pose_noise_correlation_s > 0.0) {
            return Err(Error::Config("pose noise correlation time must be positive".into()));
        }
        Ok(())
    }
}

/// Caliper measurement of both lobes: true principal extents with per-axis
/// multiplicative noise (truncated so outputs stay positive).
pub fn virtual_observer_2d_with(
    spec: &PhantomSpec,
    observer: &ObserverModel,
    rng: &mut ChaCha8Rng,
) -> Result<[LobeAxes; 2]> {
    spec.validate()?;
    observer.validate()?;
    let mut measure = |lobe: &LobeShape| -> Result<LobeAxes> {
        let truth = lobe.true_axes_cm();
        let mut noisy = |v: f64| {
            let eps = (observer.axis_noise_sd * crate::rng::normal(rng)).max(-0.9);
            v * (1.0 + eps)
        };
        LobeAxes::new(noisy(truth.length_cm), noisy(truth.width_cm), noisy(truth.depth_cm))
    };
    Ok([measure(&spec.lobes[0])?, measure(&spec.lobes[1])?])
}

/// Convenience wrapper drawing from the observer's own seed.
pub fn virtual_observer_2d(spec: &PhantomSpec, observer: &ObserverModel) -> Result<[LobeAxes; 2]> {
    let mut rng = crate::rng::stream(observer.seed, &[0x3264]);
    virtual_observer_2d_with(spec, observer, &mut rng)
}
