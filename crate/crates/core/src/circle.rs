//! Projection of a 3D circle to an image ellipse and the inverse problem.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::camera::{CameraIntrinsics, PixelPoint, Z_MIN};
use crate::conic::{EllipseCoefficients, HomogeneousConic};
use crate::error::{Error, Result};
use crate::pose::{axis_angle_from_quat, pose_error, Pose6D};
use nalgebra::{Rotation3, UnitQuaternion};

/// Anchor projections closer than this cannot tell the two plane solutions apart.
pub const AMBIGUITY_PX: f64 = 0.5;

/// Smallest camera depth over the circle of radius `radius` with center
/// `center` and unit normal `normal`.
pub fn circle_min_depth(center: &Vector3<f64>, normal: &Vector3<f64>, radius: f64) -> f64 {
    center.z - radius * (1.0 - normal.z * normal.z).max(0.0).sqrt()
}

/// Image conic of the circle with given center and unit normal, up to scale.
pub fn circle_cone(
    center: &Vector3<f64>,
    normal: &Vector3<f64>,
    radius: f64,
    camera: &CameraIntrinsics,
) -> Result<HomogeneousConic> {
    let depth = circle_min_depth(center, normal, radius);
    if !(depth > Z_MIN) {
        return Err(Error::BehindCamera { depth });
    }
    // Rays m with m = λ⁻¹X for X on the plane n·X = n·b and |X − b| = r:
    // (n·b)²|m|² − 2(n·b)(n·m)(b·m) + (|b|² − r²)(n·m)² = 0.
    let nb = normal.dot(center);
    let nbt = normal * center.transpose();
    let cone = Matrix3::identity() * (nb * nb) - (nbt + nbt.transpose()) * nb
        + normal * normal.transpose() * (center.norm_squared() - radius * radius);
    let kinv = camera.inverse_matrix();
    Ok(HomogeneousConic(kinv.transpose() * cone * kinv))
}

/// Image ellipse of the needle's full circle under `pose`.
pub fn project_circle(
    pose: &Pose6D,
    radius: f64,
    camera: &CameraIntrinsics,
) -> Result<EllipseCoefficients> {
    let normal = pose.rotation() * Vector3::z();
    let coeffs = circle_cone(&pose.position, &normal, radius, camera)?.normalize()?;
    if !coeffs.is_ellipse() {
        return Err(Error::NotAnEllipse {
            discriminant: coeffs.discriminant(),
        });
    }
    Ok(coeffs)
}

/// One of the two supporting planes of a circle seen as a given ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirclePlane {
    pub center: Vector3<f64>,
    /// Unit normal pointing away from the camera (`normal · center > 0`).
    pub normal: Vector3<f64>,
}

/// The two circle placements (center, normal) consistent with an image ellipse.
pub fn circle_plane_candidates(
    coeffs: &EllipseCoefficients,
    radius: f64,
    camera: &CameraIntrinsics,
) -> Result<[CirclePlane; 2]> {
    if !coeffs.is_ellipse() {
        return Err(Error::NotAnEllipse {
            discriminant: coeffs.discriminant(),
        });
    }
    if !(radius > 0.0) {
        return Err(Error::Precondition("circle radius must be positive".into()));
    }
    let k = camera.matrix();
    let mut cone = k.transpose() * coeffs.to_homogeneous().0 * k;
    let eig = SymmetricEigen::new(cone);
    let positives = eig.eigenvalues.iter().filter(|l| **l > 0.0).count();
    match positives {
        2 => {}
        1 => cone = -cone,
        _ => {
            return Err(Error::NumericalFailure(
                "ellipse has no real viewing cone".into(),
            ))
        }
    }
    let eig = SymmetricEigen::new(cone);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let (l1, l2, l3) = (
        eig.eigenvalues[order[0]],
        eig.eigenvalues[order[1]],
        eig.eigenvalues[order[2]],
    );
    if !(l2 > 0.0 && l3 < 0.0) {
        return Err(Error::NumericalFailure(
            "cone signature is not (+,+,−)".into(),
        ));
    }
    let e1 = eig.eigenvectors.column(order[0]).into_owned();
    let e3 = eig.eigenvectors.column(order[2]).into_owned();
    let along = ((l1 - l2) / (l1 - l3)).max(0.0).sqrt();
    let across = ((l2 - l3) / (l1 - l3)).max(0.0).sqrt();

    let mut out = [CirclePlane {
        center: Vector3::zeros(),
        normal: Vector3::z(),
    }; 2];
    for (slot, sign) in out.iter_mut().zip([1.0, -1.0]) {
        let normal = (e1 * (sign * along) + e3 * across).normalize();
        *slot = plane_section(&cone, &normal, radius)?;
    }
    Ok(out)
}

/// Intersects the cone with planes of normal `normal` and scales the section to `radius`.
fn plane_section(cone: &Matrix3<f64>, normal: &Vector3<f64>, radius: f64) -> Result<CirclePlane> {
    let helper = if normal.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    let basis = Matrix3::from_columns(&[u, v, *normal]);
    // Section of the cone with the plane n·X = 1, in (s, t) coordinates.
    let m = basis.transpose() * cone * basis;
    let k = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    if !(k.abs() > 0.0) {
        return Err(Error::NumericalFailure(
            "plane section is degenerate".into(),
        ));
    }
    let s0 = -m[(0, 2)] / k;
    let t0 = -m[(1, 2)] / k;
    let rho2 = s0 * s0 + t0 * t0 - m[(2, 2)] / k;
    if !(rho2 > 0.0) {
        return Err(Error::NumericalFailure(
            "plane section has no real circle".into(),
        ));
    }
    let scale = radius / rho2.sqrt();
    let mut center = (normal + u * s0 + v * t0) * scale;
    if center.z < 0.0 {
        center = -center;
    }
    let normal = if normal.dot(&center) < 0.0 {
        -normal
    } else {
        *normal
    };
    Ok(CirclePlane { center, normal })
}

/// Builds the needle pose on `plane` whose landmark at `angle` lies in the
/// direction of the pixel `anchor` as seen from the circle center.
pub fn orient_on_plane(
    plane: &CirclePlane,
    camera: &CameraIntrinsics,
    anchor: &PixelPoint,
    angle: f64,
) -> Result<Pose6D> {
    let n = plane.normal;
    let ray = camera.ray(anchor);
    let denom = n.dot(&ray);
    if denom.abs() < 1e-12 {
        return Err(Error::NumericalFailure(
            "anchor ray parallel to circle plane".into(),
        ));
    }
    let hit = ray * (n.dot(&plane.center) / denom);
    let mut dir = hit - plane.center;
    dir -= n * n.dot(&dir);
    let len = dir.norm();
    if len < 1e-15 {
        return Err(Error::NumericalFailure(
            "anchor projects onto the circle center".into(),
        ));
    }
    let dir = dir / len;
    let (s, c) = angle.sin_cos();
    let x_axis = dir * c - n.cross(&dir) * s;
    let y_axis = n.cross(&x_axis);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x_axis, y_axis, n]));
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    Ok(Pose6D {
        position: plane.center,
        orientation: axis_angle_from_quat(&q),
    })
}

/// Result of anchored reconstruction: the chosen pose and the runner-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub pose: Pose6D,
    pub alternative: Pose6D,
    /// Sum of squared anchor reprojection errors (px²) for `pose` and `alternative`.
    pub scores: [f64; 2],
    /// Largest distance (px) between the two candidates' projected anchor landmarks.
    pub separation_px: f64,
}

impl Reconstruction {
    /// True when the candidates are different poses the anchors cannot separate.
    pub fn is_ambiguous(&self) -> bool {
        let (dp, da) = pose_error(&self.pose, &self.alternative);
        let distinct = dp > 0.1 || da > 0.01;
        distinct && self.separation_px < AMBIGUITY_PX
    }
}

/// Reconstructs the needle pose from its image ellipse and labeled anchor
/// pixels `(pixel, arc angle)`. The first anchor fixes the in-plane rotation;
/// all anchors score the two plane candidates.
///
/// The needle frame's z axis is taken to point away from the camera, which
/// fixes the arc direction; a single ellipse cannot distinguish it otherwise.
pub fn reconstruct_from_anchors(
    coeffs: &EllipseCoefficients,
    radius: f64,
    camera: &CameraIntrinsics,
    anchors: &[(PixelPoint, f64)],
) -> Result<Reconstruction> {
    let (first, first_angle) = anchors
        .first()
        .ok_or_else(|| Error::Precondition("at least one anchor is required".into()))?;
    let planes = circle_plane_candidates(coeffs, radius, camera)?;
    let mut scored = Vec::with_capacity(2);
    for plane in &planes {
        let Ok(pose) = orient_on_plane(plane, camera, first, *first_angle) else {
            continue;
        };
        let rot = pose.rotation();
        let mut projected = Vec::with_capacity(anchors.len());
        let mut score = 0.0;
        for (px, angle) in anchors {
            let local = Vector3::new(radius * angle.cos(), radius * angle.sin(), 0.0);
            let p = camera.project(&(rot * local + pose.position))?;
            score += (p.x - px.x).powi(2) + (p.y - px.y).powi(2);
            projected.push(p);
        }
        scored.push((score, pose, projected));
    }
    match scored.len() {
        0 => Err(Error::NumericalFailure(
            "no candidate could be oriented".into(),
        )),
        1 => {
            let (score, pose, _) = scored.remove(0);
            Ok(Reconstruction {
                pose,
                alternative: pose,
                scores: [score, score],
                separation_px: 0.0,
            })
        }
        _ => {
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            let separation_px = scored[0]
                .2
                .iter()
                .zip(&scored[1].2)
                .map(|(a, b)| a.distance(b))
                .fold(0.0, f64::max);
            Ok(Reconstruction {
                pose: scored[0].1,
                alternative: scored[1].1,
                scores: [scored[0].0, scored[1].0],
                separation_px,
            })
        }
    }
}

/// Pose of a circle of known radius from its image ellipse and one landmark pixel.
pub fn reconstruct_circle_pose(
    coeffs: &EllipseCoefficients,
    radius: f64,
    camera: &CameraIntrinsics,
    anchor: &PixelPoint,
    anchor_angle: f64,
) -> Result<Pose6D> {
    let r = reconstruct_from_anchors(coeffs, radius, camera, &[(*anchor, anchor_angle)])?;
    if r.is_ambiguous() {
        return Err(Error::AmbiguityUnresolved {
            margin_px: r.separation_px,
        });
    }
    Ok(r.pose)
}
