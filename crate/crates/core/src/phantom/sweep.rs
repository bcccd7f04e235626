//! Simulated tracked acquisition: frames rendered from the phantom field
//! along a (jittered) linear trajectory at the video rate, poses reported at
//! the tracking rate with temporally correlated measurement noise.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::{RigidTransform, UnitQuat, Vec3};
use crate::phantom::{field_intensity, ObserverModel, PhantomSpec};
use crate::trackio::{Calibration, Frame, Sweep, SweepMeta, TimedPose};

/// Linear probe path: frames are perpendicular to `direction`, their centers
/// moving from `start_center` over `length_mm` in `duration_s`.
#[derive(Debug, Clone, Copy)]
pub struct SweepTrajectory {
    pub start_center: Vec3,
    /// Unit sweep direction (also the image-plane normal).
    pub direction: Vec3,
    pub length_mm: f64,
    pub duration_s: f64,
    pub frame_px: usize,
    pub pixel_spacing_mm: f64,
    /// Image axes to world: ex -> in-plane u, ey -> in-plane v, ez -> direction.
    pub orientation: UnitQuat,
}

impl SweepTrajectory {
    /// Builds a trajectory whose frames face `direction` with an arbitrary
    /// but deterministic in-plane orientation.
    pub fn linear(
        start_center: Vec3,
        direction: Vec3,
        length_mm: f64,
        duration_s: f64,
        frame_px: usize,
        pixel_spacing_mm: f64,
    ) -> Result<Self> {
        let w = direction.normalized()?;
        // In-plane basis: u orthogonal to w, seeded from whichever world axis
        // is least aligned with the sweep.
        let helper = if w.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
        let u = w.cross(helper).normalized()?;
        let v = w.cross(u);
        let orientation = UnitQuat::from_basis(u, v, w)?;
        if !(length_mm > 0.0 && duration_s > 0.0) {
            return Err(Error::Config(format!(
                "sweep length ({length_mm} mm) and duration ({duration_s} s) must be positive"
            )));
        }
        if frame_px < 2 || !(pixel_spacing_mm > 0.0) {
            return Err(Error::Config(format!(
                "frame geometry invalid: {frame_px} px at {pixel_spacing_mm} mm/px"
            )));
        }
        Ok(SweepTrajectory {
            start_center,
            direction: w,
            length_mm,
            duration_s,
            frame_px,
            pixel_spacing_mm,
            orientation,
        })
    }

    fn speed(&self) -> f64 {
        self.length_mm / self.duration_s
    }

    /// Image center offset in image coordinates.
    fn center_offset(&self) -> Vec3 {
        let half = (self.frame_px - 1) as f64 * self.pixel_spacing_mm / 2.0;
        Vec3::new(half, half, 0.0)
    }

    /// Noise-free image-to-world pose at time t.
    fn nominal_pose(&self, t: f64) -> RigidTransform {
        let center = self.start_center + self.direction.scaled(self.speed() * t);
        RigidTransform {
            rotation: self.orientation,
            translation: center - self.orientation.rotate(self.center_offset()),
        }
    }
}

/// A generated sweep plus the noise-free poses for diagnostics.
#[derive(Debug, Clone)]
pub struct SimulatedSweep {
    pub sweep: Sweep,
    pub true_poses: Vec<TimedPose>,
}

/// Small-angle rotation from per-axis radians.
fn small_rotation(rx: f64, ry: f64, rz: f64) -> UnitQuat {
    let qx = UnitQuat::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), rx).expect("unit axis");
    let qy = UnitQuat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), ry).expect("unit axis");
    let qz = UnitQuat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), rz).expect("unit axis");
    qz.mul(qy).mul(qx)
}

/// Ornstein-Uhlenbeck streams for the six tracking error components.
struct TrackingNoise {
    state: [f64; 6],
    sd: [f64; 6],
    tau: f64,
    last_t: f64,
}

impl TrackingNoise {
    fn new(observer: &ObserverModel, rng: &mut ChaCha8Rng) -> Self {
        // Vector RMS split evenly across axes.
        let pos_sd = observer.pose_position_rms_mm / 3.0f64.sqrt();
        let ang_sd = observer.pose_angle_rms_deg.to_radians() / 3.0f64.sqrt();
        let sd = [pos_sd, pos_sd, pos_sd, ang_sd, ang_sd, ang_sd];
        let mut state = [0.0; 6];
        for (s, sigma) in state.iter_mut().zip(&sd) {
            *s = sigma * crate::rng::normal(rng);
        }
        TrackingNoise { state, sd, tau: observer.pose_noise_correlation_s, last_t: 0.0 }
    }

    fn advance(&mut self, t: f64, rng: &mut ChaCha8Rng) -> [f64; 6] {
        let dt = (t - self.last_t).max(0.0);
        self.last_t = t;
        let rho = (-dt / self.tau).exp();
        let mix = (1.0 - rho * rho).sqrt();
        for i in 0..6 {
            self.state[i] = rho * self.state[i] + mix * self.sd[i] * crate::rng::normal(rng);
        }
        self.state
    }
}

/// Renders frames at `frame_rate` fps from the phantom along the jittered
/// trajectory and reports poses at `pose_rate` Hz with tracking noise.
///
/// Frame count is floor(duration * frame_rate) and pose count is
/// floor(duration * pose_rate); the final pose sample is stretched to the end
/// of the video span so the pose stream always covers the frames.
pub fn simulate_sweep(
    spec: &PhantomSpec,
    trajectory: &SweepTrajectory,
    observer: &ObserverModel,
    frame_rate: f64,
    pose_rate: f64,
    meta: SweepMeta,
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedSweep> {
    spec.validate()?;
    observer.validate()?;
    if !(frame_rate > 0.0) || !(pose_rate > 0.0) {
        return Err(Error::Config(format!(
            "frame rate ({frame_rate}) and pose rate ({pose_rate}) must be positive"
        )));
    }
    let n_frames = (trajectory.duration_s * frame_rate).floor() as usize;
    let n_poses = (trajectory.duration_s * pose_rate).floor() as usize;
    if n_frames < 2 || n_poses < 2 {
        return Err(Error::Config(format!(
            "sweep too short: {n_frames} frames / {n_poses} poses"
        )));
    }

    // Whole-sweep placement jitter, pivoting about the trajectory midpoint.
    // Draws are truncated at two sigma: an observer who drifts further
    // re-centers the target in the image.
    let jitter = {
        let mut draw = |sd: f64| (sd * crate::rng::normal(rng)).clamp(-2.0 * sd, 2.0 * sd);
        let t_sd = observer.trajectory_translation_sd_mm;
        let r_sd = observer.trajectory_rotation_sd_deg.to_radians();
        let delta = Vec3::new(draw(t_sd), draw(t_sd), draw(t_sd));
        let rot = small_rotation(draw(r_sd), draw(r_sd), draw(r_sd));
        let pivot = trajectory.start_center + trajectory.direction.scaled(trajectory.length_mm / 2.0);
        RigidTransform {
            rotation: rot,
            translation: pivot - rot.rotate(pivot) + delta,
        }
    };

    let n_px = trajectory.frame_px;
    let spacing = trajectory.pixel_spacing_mm;
    // Fast-path bound per lobe: squared world distance beyond which a pixel
    // cannot be inside, plus the shell factor for the cheap containment test.
    let bounds: Vec<(Vec3, f64, f64)> = spec
        .lobes
        .iter()
        .map(|l| {
            let r = l.max_semi_axis() + 1e-9;
            (l.center, r * r, l.shell_factor_sq())
        })
        .collect();

    let mut frames = Vec::with_capacity(n_frames);
    let mut true_frame_poses = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = i as f64 / frame_rate;
        let pose = jitter.compose(&trajectory.nominal_pose(t));
        let base = pose.apply(Vec3::ZERO);
        let col_step = pose.rotation.rotate(Vec3::new(spacing, 0.0, 0.0));
        let row_step = pose.rotation.rotate(Vec3::new(0.0, spacing, 0.0));
        let mut pixels = vec![0u8; n_px * n_px];
        for row in 0..n_px {
            let row_base = base + row_step.scaled(row as f64);
            for col in 0..n_px {
                let p = row_base + col_step.scaled(col as f64);
                let mut inside = false;
                for (lobe, (center, r2, factor_sq)) in spec.lobes.iter().zip(&bounds) {
                    let d = p - *center;
                    if d.dot(d) <= *r2 && lobe.contains_fast(p, *factor_sq) {
                        inside = true;
                        break;
                    }
                }
                let v = field_intensity(spec, p, inside);
                pixels[row * n_px + col] = (v * 255.0).round() as u8;
            }
        }
        frames.push(Frame::new(t, n_px, n_px, (spacing, spacing), pixels)?);
        true_frame_poses.push(TimedPose { t, pose });
    }
    let last_frame_t = true_frame_poses.last().expect("frames nonempty").t;

    let mut noise = TrackingNoise::new(observer, rng);
    let mut poses = Vec::with_capacity(n_poses);
    let mut true_poses = Vec::with_capacity(n_poses);
    for j in 0..n_poses {
        let t = if j + 1 == n_poses {
            (j as f64 / pose_rate).max(last_frame_t)
        } else {
            j as f64 / pose_rate
        };
        let truth = jitter.compose(&trajectory.nominal_pose(t));
        let e = noise.advance(t, rng);
        let reported = RigidTransform {
            rotation: small_rotation(e[3], e[4], e[5]).mul(truth.rotation),
            translation: truth.translation + Vec3::new(e[0], e[1], e[2]),
        };
        poses.push(TimedPose { t, pose: reported });
        true_poses.push(TimedPose { t, pose: truth });
    }

    let sweep = Sweep::new(frames, poses, Calibration::IDENTITY, meta)?;
    Ok(SimulatedSweep { sweep, true_poses })
}
