//! Needle pose and action types, axis-angle arithmetic and pose statistics.
//!
//! Orientations are axis-angle 3-vectors (direction = axis, norm = angle in
//! radians). Composition goes through unit quaternions; `exp`/`log` switch to
//! a series expansion for angles below [`SMALL_ANGLE`].

use nalgebra::{Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SMALL_ANGLE: f64 = 1e-8;

/// Unit quaternion of an axis-angle vector.
pub fn quat_from_axis_angle(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let (w, k) = if theta < SMALL_ANGLE {
        // cos(θ/2) ≈ 1 − θ²/8, sin(θ/2)/θ ≈ 1/2 − θ²/48
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion::new_unchecked(Quaternion::new(w, k * v.x, k * v.y, k * v.z))
}

/// Canonical axis-angle vector of a unit quaternion, with angle in `[0, π]`.
pub fn axis_angle_from_quat(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.as_ref();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < SMALL_ANGLE {
        // θ ≈ 2s, so v·θ/s ≈ 2v/w
        v * (2.0 / w)
    } else {
        let theta = 2.0 * s.atan2(w);
        v * (theta / s)
    }
}

pub fn canonicalize_axis_angle(v: &Vector3<f64>) -> Vector3<f64> {
    if v.norm() <= std::f64::consts::PI {
        *v
    } else {
        axis_angle_from_quat(&quat_from_axis_angle(v))
    }
}

/// Axis-angle of `R(a)·R(b)`.
pub fn compose_axis_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> Vector3<f64> {
    axis_angle_from_quat(&(quat_from_axis_angle(a) * quat_from_axis_angle(b)))
}

pub fn rotation_matrix(v: &Vector3<f64>) -> Rotation3<f64> {
    quat_from_axis_angle(v).to_rotation_matrix()
}

/// Needle pose in the camera frame: position (m) and axis-angle orientation (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose6D {
    pub position: Vector3<f64>,
    pub orientation: Vector3<f64>,
}

impl Pose6D {
    pub fn new(position: Vector3<f64>, orientation: Vector3<f64>) -> Self {
        Self {
            position,
            orientation: canonicalize_axis_angle(&orientation),
        }
    }

    pub fn from_arrays(position: [f64; 3], orientation: [f64; 3]) -> Self {
        Self::new(Vector3::from(position), Vector3::from(orientation))
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        rotation_matrix(&self.orientation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        quat_from_axis_angle(&self.orientation)
    }

    /// Maps a needle-frame point into the camera frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.position
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.orientation.iter())
            .all(|v| v.is_finite())
    }
}

/// Per-step needle motion: position increment (m) and orientation increment (axis-angle).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Action {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

impl Action {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(translation: Vector3<f64>, rotation: Vector3<f64>) -> Self {
        let rotation = canonicalize_axis_angle(&rotation);
        Self {
            translation: translation.into(),
            rotation: rotation.into(),
        }
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn rotation(&self) -> Vector3<f64> {
        Vector3::from(self.rotation)
    }

    pub fn is_zero(&self) -> bool {
        self.translation
            .iter()
            .chain(&self.rotation)
            .all(|v| *v == 0.0)
    }
}

/// Applies an action followed by a noise sample `[δb; δq]`, the rotational
/// part composed on the left (camera frame).
pub fn apply_motion(pose: &Pose6D, action: &Action, noise: &[f64; 6]) -> Pose6D {
    let position =
        pose.position + action.translation() + Vector3::new(noise[0], noise[1], noise[2]);
    let noise_rot = Vector3::new(noise[3], noise[4], noise[5]);
    let q = quat_from_axis_angle(&noise_rot)
        * quat_from_axis_angle(&action.rotation())
        * quat_from_axis_angle(&pose.orientation);
    Pose6D {
        position,
        orientation: axis_angle_from_quat(&q),
    }
}

/// Position error (mm) and orientation error (deg) between two poses.
pub fn pose_error(estimate: &Pose6D, truth: &Pose6D) -> (f64, f64) {
    let position_mm = (estimate.position - truth.position).norm() * 1e3;
    let relative = estimate.quaternion() * truth.quaternion().inverse();
    let angle = axis_angle_from_quat(&relative).norm();
    (position_mm, angle.to_degrees())
}

/// Weighted mean pose: arithmetic mean of positions, normalized weighted sum of
/// unit quaternions sign-aligned to the heaviest particle for orientation.
pub fn weighted_mean_pose(poses: &[Pose6D], weights: &[f64]) -> Result<Pose6D> {
    if poses.is_empty() || poses.len() != weights.len() {
        return Err(Error::Precondition(format!(
            "{} poses with {} weights",
            poses.len(),
            weights.len()
        )));
    }
    let heaviest = weights
        .iter()
        .enumerate()
        .fold(0, |best, (i, w)| if *w > weights[best] { i } else { best });
    let reference = poses[heaviest].quaternion();

    let mut position = Vector3::zeros();
    let mut quat_sum = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (pose, &w) in poses.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        position += pose.position * w;
        let q = pose.quaternion();
        let q = if q.as_ref().dot(reference.as_ref()) < 0.0 {
            -q.into_inner()
        } else {
            q.into_inner()
        };
        quat_sum += q * w;
    }
    let norm = quat_sum.norm();
    if norm < 1e-6 {
        return Err(Error::DegenerateOrientationMean);
    }
    let mean = UnitQuaternion::new_unchecked(quat_sum / norm);
    Ok(Pose6D {
        position,
        orientation: axis_angle_from_quat(&mean),
    })
}
