//! Data model and I/O for tracked sweeps, plus temporal synchronization of
//! the asynchronous pose stream (nominally 80 Hz) with the frame stream
//! (nominally 89 fps).

mod container;

pub use container::{read_sweep, write_sweep};
pub(crate) use container::{read_pgm, write_pgm};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{RigidTransform, Vec3};

/// One 6-DoF tracking sample on the shared monotonic clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    /// Seconds.
    pub t: f64,
    /// Sensor-to-world transform, translation in mm.
    pub pose: RigidTransform,
}

/// A single grayscale video frame. Pixels are stored as raw 8-bit samples;
/// intensities are `value / 255` and therefore always in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    width: usize,
    height: usize,
    pixel_spacing: (f64, f64),
    data: Vec<u8>,
}

impl Frame {
    pub fn new(t: f64, width: usize, height: usize, pixel_spacing: (f64, f64), data: Vec<u8>) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::Data(format!("frame must be at least 1x1, got {width}x{height}")));
        }
        if pixel_spacing.0 <= 0.0 || pixel_spacing.1 <= 0.0 {
            return Err(Error::Data(format!("pixel spacing must be positive, got {pixel_spacing:?}")));
        }
        if data.len() != width * height {
            return Err(Error::Data(format!(
                "pixel buffer has {} samples for {}x{} frame",
                data.len(),
                width,
                height
            )));
        }
        Ok(Frame { t, width, height, pixel_spacing, data })
    }

    /// Quantizes floating intensities in [0, 1] to 8-bit samples.
    pub fn from_intensities(t: f64, width: usize, height: usize, pixel_spacing: (f64, f64), values: &[f64]) -> Result<Self> {
        let data = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Frame::new(t, width, height, pixel_spacing, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// (mm/px along columns, mm/px along rows).
    pub fn pixel_spacing(&self) -> (f64, f64) {
        self.pixel_spacing
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn intensity(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col] as f64 / 255.0
    }

    /// Image-plane position of a pixel center: x = col * sx, y = row * sy, z = 0.
    pub fn pixel_position(&self, row: usize, col: usize) -> Vec3 {
        Vec3::new(col as f64 * self.pixel_spacing.0, row as f64 * self.pixel_spacing.1, 0.0)
    }

    fn same_geometry(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height && self.pixel_spacing == other.pixel_spacing
    }
}

/// Rigid transform from image-plane coordinates into the tracking sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub image_to_sensor: RigidTransform,
}

impl Calibration {
    pub const IDENTITY: Calibration = Calibration { image_to_sensor: RigidTransform::IDENTITY };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LobeSide {
    Left,
    Right,
}

impl std::fmt::Display for LobeSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LobeSide::Left => write!(f, "left"),
            LobeSide::Right => write!(f, "right"),
        }
    }
}

impl std::str::FromStr for LobeSide {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(LobeSide::Left),
            "right" => Ok(LobeSide::Right),
            other => Err(Error::Data(format!("unknown lobe {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMeta {
    pub subject_id: String,
    pub observer_id: u32,
    pub repeat_index: u32,
    pub lobe: LobeSide,
    pub nominal_frame_rate: f64,
    pub nominal_pose_rate: f64,
}

/// One tracked acquisition: ordered frames, ordered poses, probe calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    frames: Vec<Frame>,
    poses: Vec<TimedPose>,
    calibration: Calibration,
    pub meta: SweepMeta,
}

impl Sweep {
    pub fn new(frames: Vec<Frame>, poses: Vec<TimedPose>, calibration: Calibration, meta: SweepMeta) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Data("sweep has no frames".into()));
        }
        if poses.is_empty() {
            return Err(Error::Data("sweep has no poses".into()));
        }
        if let Some(bad) = frames.windows(2).position(|w| !w[0].same_geometry(&w[1])) {
            return Err(Error::Data(format!(
                "frames {bad} and {} differ in geometry",
                bad + 1
            )));
        }
        if let Some(bad) = poses.windows(2).position(|w| w[0].t >= w[1].t) {
            return Err(Error::Data(format!(
                "pose timestamps must strictly increase (violated at sample {})",
                bad + 1
            )));
        }
        if let Some(bad) = frames.windows(2).position(|w| w[0].t >= w[1].t) {
            return Err(Error::Data(format!(
                "frame timestamps must strictly increase (violated at frame {})",
                bad + 1
            )));
        }
        Ok(Sweep { frames, poses, calibration, meta })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn poses(&self) -> &[TimedPose] {
        &self.poses
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }
}

/// A frame paired with its interpolated image-to-world transform.
#[derive(Debug, Clone, Copy)]
pub struct SyncedFrame<'a> {
    pub frame: &'a Frame,
    pub image_to_world: RigidTransform,
}

impl SyncedFrame<'_> {
    /// World position of a pixel center.
    pub fn pixel_world(&self, row: usize, col: usize) -> Vec3 {
        self.image_to_world.apply(self.frame.pixel_position(row, col))
    }
}

/// Interpolates the pose stream at time `t`.
///
/// Translation is interpolated linearly and rotation spherically (shortest
/// arc) between the bracketing samples; a query that hits a sample timestamp
/// returns that sample bit-exactly.
pub fn interpolate_pose(poses: &[TimedPose], t: f64) -> Result<RigidTransform> {
    if poses.is_empty() {
        return Err(Error::DegenerateStream("pose stream is empty".into()));
    }
    let (start, end) = (poses[0].t, poses[poses.len() - 1].t);
    if t < start || t > end {
        return Err(Error::OutOfRange { t, start, end });
    }
    // First sample with timestamp >= t.
    let idx = poses.partition_point(|p| p.t < t);
    if poses[idx].t == t {
        return Ok(poses[idx].pose);
    }
    let (a, b) = (&poses[idx - 1], &poses[idx]);
    let u = (t - a.t) / (b.t - a.t);
    Ok(RigidTransform {
        rotation: a.pose.rotation.slerp(b.pose.rotation, u),
        translation: a.pose.translation.lerp(b.pose.translation, u),
    })
}

/// Assigns every frame its image-to-world transform:
/// `sensor_to_world(frame.t) ∘ calibration.image_to_sensor`.
///
/// Fails with `OutOfRange` if the pose stream does not cover the frame span.
pub fn synchronize(sweep: &Sweep) -> Result<Vec<SyncedFrame<'_>>> {
    sweep
        .frames
        .iter()
        .map(|frame| {
            let sensor_to_world = interpolate_pose(&sweep.poses, frame.t)?;
            Ok(SyncedFrame {
                frame,
                image_to_world: sensor_to_world.compose(&sweep.calibration.image_to_sensor),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::UnitQuat;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn pose_at(t: f64, translation: Vec3) -> TimedPose {
        TimedPose { t, pose: RigidTransform::new(UnitQuat::IDENTITY, translation) }
    }

    fn meta() -> SweepMeta {
        SweepMeta {
            subject_id: "s0".into(),
            observer_id: 1,
            repeat_index: 1,
            lobe: LobeSide::Right,
            nominal_frame_rate: 89.0,
            nominal_pose_rate: 80.0,
        }
    }

    fn flat_frame(t: f64, value: u8) -> Frame {
        Frame::new(t, 4, 3, (0.5, 0.5), vec![value; 12]).unwrap()
    }

    #[test]
    fn linear_midpoint_translation() {
        let poses = vec![pose_at(0.0, Vec3::ZERO), pose_at(0.010, Vec3::new(1.0, 0.0, 0.0))];
        let p = interpolate_pose(&poses, 0.005).unwrap();
        assert_relative_eq!(p.translation.x, 0.5, epsilon = 1e-15);
        assert_eq!(p.rotation, UnitQuat::IDENTITY);
    }

    #[test]
    fn slerp_symmetry_45_degrees() {
        let quarter = UnitQuat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2).unwrap();
        let poses = vec![
            TimedPose { t: 0.0, pose: RigidTransform::IDENTITY },
            TimedPose { t: 1.0, pose: RigidTransform::new(quarter, Vec3::ZERO) },
        ];
        let p = interpolate_pose(&poses, 0.5).unwrap();
        let expect = UnitQuat::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_4).unwrap();
        assert!(p.rotation.angle_to(expect) < 1e-12);
    }

    #[test]
    fn exact_timestamp_returns_sample_bit_exactly() {
        let q = UnitQuat::new(0.7, 0.1, -0.3, 0.64).unwrap();
        let sample = TimedPose { t: 0.25, pose: RigidTransform::new(q, Vec3::new(1.5, -0.25, 3.75)) };
        let poses = vec![pose_at(0.0, Vec3::ZERO), sample, pose_at(1.0, Vec3::new(5.0, 0.0, 0.0))];
        let p = interpolate_pose(&poses, 0.25).unwrap();
        assert_eq!(p, sample.pose);
    }

    #[test]
    fn out_of_range_and_degenerate_errors() {
        let poses = vec![pose_at(0.0, Vec3::ZERO), pose_at(1.0, Vec3::ZERO)];
        assert!(matches!(interpolate_pose(&poses, -0.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(interpolate_pose(&poses, 1.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(interpolate_pose(&[], 0.0), Err(Error::DegenerateStream(_))));
    }

    #[test]
    fn synchronize_static_stream_gives_constant_pose() {
        let pose = RigidTransform::new(UnitQuat::IDENTITY, Vec3::new(2.0, 3.0, 4.0));
        let poses = vec![
            TimedPose { t: 0.0, pose },
            TimedPose { t: 0.05, pose },
            TimedPose { t: 0.1, pose },
        ];
        let frames = vec![flat_frame(0.0, 10), flat_frame(0.04, 20), flat_frame(0.09, 30)];
        let sweep = Sweep::new(frames, poses, Calibration::IDENTITY, meta()).unwrap();
        let synced = synchronize(&sweep).unwrap();
        assert_eq!(synced.len(), 3);
        for s in &synced {
            assert_relative_eq!(s.image_to_world.translation.x, 2.0, epsilon = 1e-12);
            assert_relative_eq!(s.image_to_world.translation.y, 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn synchronize_uniform_motion() {
        // 100 mm/s along x, frames at 0.00 s and 0.02 s.
        let poses = vec![
            pose_at(0.0, Vec3::ZERO),
            pose_at(0.01, Vec3::new(1.0, 0.0, 0.0)),
            pose_at(0.02, Vec3::new(2.0, 0.0, 0.0)),
        ];
        let frames = vec![flat_frame(0.0, 0), flat_frame(0.02, 0)];
        let sweep = Sweep::new(frames, poses, Calibration::IDENTITY, meta()).unwrap();
        let synced = synchronize(&sweep).unwrap();
        assert_relative_eq!(synced[0].image_to_world.translation.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(synced[1].image_to_world.translation.x, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn synchronize_matches_pointwise_interpolation() {
        let mut rng = crate::rng::stream(1234, &[0]);
        let mut poses = Vec::new();
        let mut t = 0.0;
        for _ in 0..40 {
            let q = UnitQuat::new(
                1.0 + rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            )
            .unwrap();
            let p = Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            poses.push(TimedPose { t, pose: RigidTransform::new(q, p) });
            t += rng.random_range(0.005..0.02);
        }
        let span = poses.last().unwrap().t;
        let frames: Vec<Frame> = (0..30)
            .map(|i| flat_frame(0.001 + span * i as f64 / 31.0, 0))
            .collect();
        let cal = Calibration {
            image_to_sensor: RigidTransform::new(
                UnitQuat::from_axis_angle(Vec3::new(0.3, 1.0, 0.0), 0.2).unwrap(),
                Vec3::new(1.0, 2.0, 3.0),
            ),
        };
        let sweep = Sweep::new(frames, poses.clone(), cal, meta()).unwrap();
        let synced = synchronize(&sweep).unwrap();
        for (s, frame) in synced.iter().zip(sweep.frames()) {
            let expect = interpolate_pose(&poses, frame.t).unwrap().compose(&cal.image_to_sensor);
            assert_eq!(s.image_to_world, expect);
        }
    }

    #[test]
    fn coverage_failure_reported_by_sync() {
        let poses = vec![pose_at(0.01, Vec3::ZERO), pose_at(0.02, Vec3::ZERO)];
        let frames = vec![flat_frame(0.0, 0), flat_frame(0.015, 0)];
        let sweep = Sweep::new(frames, poses, Calibration::IDENTITY, meta()).unwrap();
        assert!(matches!(synchronize(&sweep), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn sweep_rejects_non_monotonic_poses() {
        let poses = vec![pose_at(0.0, Vec3::ZERO), pose_at(0.0, Vec3::ZERO)];
        let err = Sweep::new(vec![flat_frame(0.0, 0)], poses, Calibration::IDENTITY, meta());
        assert!(err.is_err());
    }

    #[test]
    fn continuity_near_sample_boundaries() {
        // |pose(t + eps) - pose(t)| bounded by the stream's own velocity scale.
        let poses = vec![
            pose_at(0.0, Vec3::ZERO),
            pose_at(0.0125, Vec3::new(0.5, 0.2, 0.0)),
            pose_at(0.025, Vec3::new(1.0, 0.0, 0.3)),
        ];
        let eps = 1e-6;
        // Max translation speed between samples, mm/s.
        let lipschitz = 0.5f64.hypot(0.2).max(0.5f64.hypot(0.2f64.hypot(0.3))) / 0.0125;
        for &t in &[0.006, 0.0125 - eps, 0.0125, 0.02, 0.025 - eps] {
            let a = interpolate_pose(&poses, t).unwrap();
            let b = interpolate_pose(&poses, t + eps).unwrap();
            let dt = (b.translation - a.translation).norm();
            assert!(dt <= lipschitz * eps * 1.01 + 1e-12, "jump {dt} at t={t}");
        }
    }

    proptest! {
        #[test]
        fn interpolated_rotations_stay_unit_norm(
            wa in -1.0f64..1.0, xa in -1.0f64..1.0, ya in -1.0f64..1.0, za in 0.1f64..1.0,
            wb in -1.0f64..1.0, xb in -1.0f64..1.0, yb in -1.0f64..1.0, zb in 0.1f64..1.0,
            u in 0.0f64..1.0,
        ) {
            let a = UnitQuat::new(wa, xa, ya, za).unwrap();
            let b = UnitQuat::new(wb, xb, yb, zb).unwrap();
            let q = a.slerp(b, u);
            prop_assert!((q.norm() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn opposite_sign_quaternions_interpolate_along_zero_arc(
            w in 0.2f64..1.0, x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0,
            u in 0.0f64..1.0,
        ) {
            let a = UnitQuat::new(w, x, y, z).unwrap();
            let b = UnitQuat::new(-w, -x, -y, -z).unwrap();
            let q = a.slerp(b, u);
            // Same rotation on both ends: the geodesic must not swing wide.
            prop_assert!(q.angle_to(a) <= std::f64::consts::FRAC_PI_2);
        }
    }
}
