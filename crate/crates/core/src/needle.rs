//! Needle geometry, landmarks and motion-noise covariance.
//!
//! The needle frame puts the circle in the local x-y plane centered at the
//! origin. The tail sits at arc angle 0 and the tip at `arc_extent`.

use std::f64::consts::PI;

use nalgebra::{Matrix6, SymmetricEigen, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::camera::{CameraIntrinsics, PixelPoint};
use crate::error::{Error, Result};
use crate::pose::Pose6D;

pub const TAIL: &str = "tail";
pub const TIP: &str = "tip";
pub const BODY: &str = "body";

#[derive(Debug, Clone, PartialEq)]
pub struct NeedleModel {
    radius: f64,
    arc_extent: f64,
    landmarks: Vec<(String, f64)>,
    body_points: usize,
}

impl NeedleModel {
    /// Needle with tail/tip landmarks and `body_points` evenly registered body landmarks.
    pub fn new(radius: f64, arc_extent: f64, body_points: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "needle.radius".into(),
                reason: "must be positive".into(),
            });
        }
        if !(arc_extent > 0.0 && arc_extent <= 2.0 * PI) {
            return Err(Error::InvalidConfig {
                field: "needle.arc_extent".into(),
                reason: "must lie in (0, 2π]".into(),
            });
        }
        Ok(Self {
            radius,
            arc_extent,
            landmarks: vec![(TAIL.to_string(), 0.0), (TIP.to_string(), arc_extent)],
            body_points,
        })
    }

    /// 5.4 mm semicircular needle with three body points.
    pub fn semicircle(radius: f64) -> Self {
        Self::new(radius, PI, 3).expect("valid default needle")
    }

    /// Adds or replaces a named landmark.
    pub fn with_landmark(mut self, label: &str, angle: f64) -> Result<Self> {
        if !(0.0..=self.arc_extent).contains(&angle) {
            return Err(Error::InvalidConfig {
                field: format!("needle.landmarks.{label}"),
                reason: "angle must lie within the arc".into(),
            });
        }
        match self.landmarks.iter_mut().find(|(l, _)| l == label) {
            Some(entry) => entry.1 = angle,
            None => self.landmarks.push((label.to_string(), angle)),
        }
        Ok(self)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn arc_extent(&self) -> f64 {
        self.arc_extent
    }

    pub fn body_points(&self) -> usize {
        self.body_points
    }

    pub fn landmark_angle(&self, label: &str) -> Result<f64> {
        self.landmarks
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, a)| *a)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Fixed registration of the `i`-th body point: `(i + 1) / (n + 1)` of the arc.
    pub fn body_registration(&self, i: usize) -> f64 {
        self.arc_extent * (i + 1) as f64 / (self.body_points + 1) as f64
    }

    /// Needle-frame point at an arc angle.
    pub fn point_at(&self, angle: f64) -> Vector3<f64> {
        Vector3::new(self.radius * angle.cos(), self.radius * angle.sin(), 0.0)
    }
}

/// Which needle point to project.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LandmarkRef<'a> {
    Label(&'a str),
    Angle(f64),
}

/// Pixel of a needle landmark under `pose`.
pub fn project_landmark(
    pose: &Pose6D,
    model: &NeedleModel,
    landmark: LandmarkRef<'_>,
    camera: &CameraIntrinsics,
) -> Result<PixelPoint> {
    let angle = match landmark {
        LandmarkRef::Label(l) => model.landmark_angle(l)?,
        LandmarkRef::Angle(a) => a,
    };
    camera.project(&pose.transform_point(&model.point_at(angle)))
}

/// Zero-mean Gaussian over `[δb; δq]` with a 6×6 covariance (m², rad²).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionNoise {
    covariance: Matrix6<f64>,
    factor: Matrix6<f64>,
    is_zero: bool,
}

impl MotionNoise {
    /// Accepts any symmetric positive semi-definite matrix.
    pub fn new(covariance: Matrix6<f64>) -> Result<Self> {
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCovariance("non-finite entry".into()));
        }
        let scale = covariance.amax();
        if (covariance - covariance.transpose()).amax() > 1e-12 * scale.max(1e-300) {
            return Err(Error::InvalidCovariance("not symmetric".into()));
        }
        let eig = SymmetricEigen::new(covariance);
        let tolerance = 1e-12 * scale;
        if let Some(l) = eig.eigenvalues.iter().find(|l| **l < -tolerance) {
            return Err(Error::InvalidCovariance(format!(
                "negative eigenvalue {l:e}"
            )));
        }
        let sqrt = Vector6::from_iterator(eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
        let factor = eig.eigenvectors * Matrix6::from_diagonal(&sqrt);
        Ok(Self {
            covariance,
            factor,
            is_zero: scale == 0.0,
        })
    }

    /// Diagonal covariance from standard deviations (m, m, m, rad, rad, rad).
    pub fn from_std(std: [f64; 6]) -> Result<Self> {
        if let Some(s) = std.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::InvalidCovariance(format!("negative std {s}")));
        }
        Self::new(Matrix6::from_diagonal(&Vector6::from_iterator(
            std.iter().map(|s| s * s),
        )))
    }

    pub fn zero() -> Self {
        Self::new(Matrix6::zeros()).expect("zero covariance is valid")
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    pub fn is_zero(&self) -> bool {
        self.is_zero
    }

    /// Draws one sample. Always consumes six normal variates, even when zero.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 6] {
        let z = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let w = self.factor * z;
        [w[0], w[1], w[2], w[3], w[4], w[5]]
    }
}
