//! Pinhole camera model and pixel coordinates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum depth (m) a projected point must have.
pub const Z_MIN: f64 = 1e-3;

/// Pixel coordinate. Detections are not clamped to the image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 800.0,
            fy: 800.0,
            cx: 128.0,
            cy: 128.0,
            width: 256,
            height: 256,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return Err(invalid("camera.fx", "must be positive"));
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return Err(invalid("camera.fy", "must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(invalid("camera.cx", "principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("camera.width", "image size must be positive"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point, failing when it is not in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Result<PixelPoint> {
        if !(p.z > Z_MIN) {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok(PixelPoint::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Viewing ray through a pixel, with unit depth.
    pub fn ray(&self, px: &PixelPoint) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }

    /// True when the point lies inside the image shrunk by `margin` pixels.
    pub fn contains(&self, px: &PixelPoint, margin: f64) -> bool {
        px.x >= margin
            && px.y >= margin
            && px.x <= self.width as f64 - margin
            && px.y <= self.height as f64 - margin
    }
}

fn invalid(field: &str, reason: &str) -> Error {
    Error::InvalidConfig {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}
