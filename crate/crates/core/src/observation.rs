//! Detection features and the observation likelihoods evaluated per particle.
//!
//! Every likelihood returns a natural-log density. Point terms treat a pose
//! whose landmark falls behind the camera as impossible (`-inf`); conic-based
//! terms propagate the geometry error so the filter can zero the particle.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, PixelPoint};
use crate::circle::{circle_cone, reconstruct_from_anchors};
use crate::conic::{
    coeffs_to_params, conic_residual, fit_ellipse, wrap_half_turn, EllipseCoefficients,
    EllipseParams,
};
use crate::error::{Error, Result};
use crate::needle::{NeedleModel, TAIL, TIP};
use crate::pose::{axis_angle_from_quat, Pose6D};

/// Lower bound on the ellipse-matching variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Labeled and unlabeled needle detections of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub frame: usize,
    pub labeled: BTreeMap<String, PixelPoint>,
    /// Unlabeled body points, in detector order.
    pub body: Vec<PixelPoint>,
}

impl DetectionSet {
    pub fn new(frame: usize) -> Self {
        Self {
            frame,
            ..Default::default()
        }
    }

    pub fn with_label(mut self, label: &str, p: PixelPoint) -> Self {
        self.labeled.insert(label.to_string(), p);
        self
    }

    pub fn with_body(mut self, p: PixelPoint) -> Self {
        self.body.push(p);
        self
    }

    pub fn get(&self, label: &str) -> Result<PixelPoint> {
        self.labeled
            .get(label)
            .copied()
            .ok_or_else(|| Error::MissingLabel(label.to_string()))
    }

    /// Total number of detected points `N_f`.
    pub fn len(&self) -> usize {
        self.labeled.len() + self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tail, tip, then body points; other labels follow in label order.
    pub fn all_points(&self) -> Vec<PixelPoint> {
        let mut out = Vec::with_capacity(self.len());
        for label in [TAIL, TIP] {
            if let Some(p) = self.labeled.get(label) {
                out.push(*p);
            }
        }
        out.extend(
            self.labeled
                .iter()
                .filter(|(l, _)| l.as_str() != TAIL && l.as_str() != TIP)
                .map(|(_, p)| *p),
        );
        out.extend(self.body.iter().copied());
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Precondition(format!(
                "frame {} has no detections",
                self.frame
            )));
        }
        if self.all_points().iter().any(|p| !p.is_finite()) {
            return Err(Error::Precondition(format!(
                "frame {} has a non-finite detection",
                self.frame
            )));
        }
        Ok(())
    }
}

/// Multivariate normal log-density with precomputed inverse and normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<const D: usize> {
    inverse: SMatrix<f64, D, D>,
    log_norm: f64,
}

impl<const D: usize> Gaussian<D> {
    pub fn new(cov: SMatrix<f64, D, D>) -> Result<Self> {
        if (cov - cov.transpose()).amax() > 1e-12 * cov.amax() {
            return Err(Error::InvalidCovariance("not symmetric".into()));
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::InvalidCovariance("not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            inverse: chol.inverse(),
            log_norm: -0.5 * (D as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn from_std(std: [f64; D]) -> Result<Self> {
        Self::new(SMatrix::from_diagonal(&SVector::from_iterator(
            std.iter().map(|s| s * s),
        )))
    }

    /// Log-density at its mean.
    pub fn max_log_density(&self) -> f64 {
        self.log_norm
    }

    pub fn log_density(&self, residual: &SVector<f64, D>) -> f64 {
        self.log_norm - 0.5 * residual.dot(&(self.inverse * residual))
    }
}

/// Observation noise settings shared by all variants.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationNoiseConfig {
    /// Per-coordinate detection std σ̄_p (px); drives the ellipse-matching variance.
    pub point_sigma: f64,
    pub point: Gaussian<2>,
    pub ellipse: Gaussian<5>,
    pub pose: Gaussian<6>,
}

impl ObservationNoiseConfig {
    pub const DEFAULT_EP_STD: [f64; 5] = [2.0, 2.0, 4.0, 4.0, 5.0 * PI / 180.0];
    pub const DEFAULT_POSE_STD: [f64; 6] = [
        5e-3,
        5e-3,
        5e-3,
        5.0 * PI / 180.0,
        5.0 * PI / 180.0,
        5.0 * PI / 180.0,
    ];

    /// Isotropic point noise σ̄_p with default ellipse and pose covariances.
    pub fn new(point_sigma: f64) -> Result<Self> {
        Self::with_std(point_sigma, Self::DEFAULT_EP_STD, Self::DEFAULT_POSE_STD)
    }

    pub fn with_std(point_sigma: f64, ep_std: [f64; 5], pose_std: [f64; 6]) -> Result<Self> {
        if !(point_sigma > 0.0 && point_sigma.is_finite()) {
            return Err(Error::InvalidCovariance(format!(
                "point sigma must be positive, got {point_sigma}"
            )));
        }
        if ep_std.iter().chain(&pose_std).any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidCovariance(
                "ellipse and pose std must be positive".into(),
            ));
        }
        Ok(Self {
            point_sigma,
            point: Gaussian::new(Matrix2::identity() * point_sigma * point_sigma)?,
            ellipse: Gaussian::from_std(ep_std)?,
            pose: Gaussian::from_std(pose_std)?,
        })
    }

    /// Replaces the 2×2 point covariance, keeping σ̄_p for ellipse matching.
    pub fn with_point_covariance(mut self, cov: Matrix2<f64>) -> Result<Self> {
        self.point = Gaussian::new(cov)?;
        Ok(self)
    }
}

/// Observation feature sets compared by the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObservationVariant {
    /// Per-frame reconstructed pose.
    Pose,
    /// All detections against fixed landmark registrations.
    #[serde(rename = "FPS")]
    Fps,
    #[serde(rename = "OnePointEP")]
    OnePointEp,
    #[serde(rename = "TwoPointsEP")]
    TwoPointsEp,
    #[serde(rename = "OnePointEM")]
    OnePointEm,
    #[serde(rename = "TwoPointsEM")]
    TwoPointsEm,
}

impl ObservationVariant {
    pub const ALL: [ObservationVariant; 6] = [
        ObservationVariant::Pose,
        ObservationVariant::Fps,
        ObservationVariant::OnePointEp,
        ObservationVariant::TwoPointsEp,
        ObservationVariant::OnePointEm,
        ObservationVariant::TwoPointsEm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Pose => "Pose",
            Self::Fps => "FPS",
            Self::OnePointEp => "OnePointEP",
            Self::TwoPointsEp => "TwoPointsEP",
            Self::OnePointEm => "OnePointEM",
            Self::TwoPointsEm => "TwoPointsEM",
        }
    }

    /// Labels used as point observations.
    pub fn anchor_labels(&self) -> &'static [&'static str] {
        match self {
            Self::OnePointEp | Self::OnePointEm => &[TAIL],
            Self::TwoPointsEp | Self::TwoPointsEm => &[TAIL, TIP],
            Self::Pose | Self::Fps => &[TAIL],
        }
    }
}

impl fmt::Display for ObservationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObservationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .copied()
            .ok_or_else(|| Error::InvalidConfig {
                field: "variant".into(),
                reason: format!("unknown observation variant `{s}`"),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModelSpec {
    pub variant: ObservationVariant,
    pub noise: ObservationNoiseConfig,
}

impl ObservationModelSpec {
    pub fn new(variant: ObservationVariant, noise: ObservationNoiseConfig) -> Self {
        Self { variant, noise }
    }
}

/// Projected needle conic for a pose, given its rotation.
fn needle_conic(
    pose: &Pose6D,
    normal: &Vector3<f64>,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Result<EllipseCoefficients> {
    circle_cone(&pose.position, normal, model.radius(), camera)?.normalize()
}

fn point_term(
    camera: &CameraIntrinsics,
    camera_point: &Vector3<f64>,
    detection: &PixelPoint,
    noise: &ObservationNoiseConfig,
) -> f64 {
    match camera.project(camera_point) {
        Ok(px) => noise.point.log_density(&SVector::<f64, 2>::new(
            detection.x - px.x,
            detection.y - px.y,
        )),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Gaussian log-density of a labeled detection around its projected landmark.
pub fn point_log_likelihood(
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    detection: &PixelPoint,
    label: &str,
    noise: &ObservationNoiseConfig,
) -> Result<f64> {
    let angle = model.landmark_angle(label)?;
    let p = pose.transform_point(&model.point_at(angle));
    Ok(point_term(camera, &p, detection, noise))
}

/// Value of the pose-projected conic at a detected point.
pub fn em_residual(
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    point: &PixelPoint,
) -> Result<f64> {
    let normal = pose.rotation() * Vector3::z();
    let conic = needle_conic(pose, &normal, model, camera)?;
    Ok(conic_residual(&conic, point))
}

/// First-order variance of the matching residual under isotropic pixel noise,
/// evaluated at the detected point and floored at [`VARIANCE_FLOOR`].
pub fn em_variance_for_conic(conic: &EllipseCoefficients, point: &PixelPoint, sigma: f64) -> f64 {
    let (gx, gy) = conic.half_gradient(point);
    (4.0 * (gx * gx + gy * gy) * sigma * sigma).max(VARIANCE_FLOOR)
}

pub fn em_variance(
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    point: &PixelPoint,
    sigma: f64,
) -> Result<f64> {
    let normal = pose.rotation() * Vector3::z();
    let conic = needle_conic(pose, &normal, model, camera)?;
    Ok(em_variance_for_conic(&conic, point, sigma))
}

fn em_terms(conic: &EllipseCoefficients, points: &[PixelPoint], sigma: f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let r = conic_residual(conic, p);
            let var = em_variance_for_conic(conic, p, sigma);
            -0.5 * ((2.0 * PI * var).ln() + r * r / var)
        })
        .sum()
}

/// Sum of per-point ellipse-matching log-densities.
pub fn em_log_likelihood(
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    points: &[PixelPoint],
    sigma: f64,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Precondition(
            "ellipse matching needs at least one point".into(),
        ));
    }
    let normal = pose.rotation() * Vector3::z();
    let conic = needle_conic(pose, &normal, model, camera)?;
    Ok(em_terms(&conic, points, sigma))
}

/// Ellipse parameters fitted to every detected point.
pub fn ep_observation(detections: &DetectionSet) -> Result<EllipseParams> {
    let points = detections.all_points();
    if points.len() < 5 {
        return Err(Error::Precondition(format!(
            "ellipse parameters need at least 5 detections, frame {} has {}",
            detections.frame,
            points.len()
        )));
    }
    coeffs_to_params(&fit_ellipse(&points)?)
}

fn ep_residual(obs: &EllipseParams, projected: &EllipseParams) -> SVector<f64, 5> {
    let o = obs.canonical();
    let p = projected.canonical();
    SVector::<f64, 5>::new(
        o.center.x - p.center.x,
        o.center.y - p.center.y,
        o.width - p.width,
        o.height - p.height,
        wrap_half_turn(o.rotation - p.rotation),
    )
}

fn ep_term(
    conic: &EllipseCoefficients,
    obs: &EllipseParams,
    noise: &ObservationNoiseConfig,
) -> Result<f64> {
    let projected = coeffs_to_params(conic)?;
    Ok(noise.ellipse.log_density(&ep_residual(obs, &projected)))
}

/// Log-density of fitted ellipse parameters around the pose-projected ellipse.
pub fn ep_log_likelihood(
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    obs: &EllipseParams,
    noise: &ObservationNoiseConfig,
) -> Result<f64> {
    let normal = pose.rotation() * Vector3::z();
    let conic = needle_conic(pose, &normal, model, camera)?;
    ep_term(&conic, obs, noise)
}

/// Log-density of a reconstructed pose on `[Δb; Δq]`, with `Δq` the axis-angle
/// of the relative rotation.
pub fn pose_baseline_log_likelihood(
    pose: &Pose6D,
    reconstructed: &Pose6D,
    noise: &ObservationNoiseConfig,
) -> f64 {
    let db = reconstructed.position - pose.position;
    let dq = axis_angle_from_quat(&(reconstructed.quaternion() * pose.quaternion().inverse()));
    let r = SVector::<f64, 6>::new(db.x, db.y, db.z, dq.x, dq.y, dq.z);
    noise.pose.log_density(&r)
}

/// Needle-frame angles assigned to each detection under a fixed registration:
/// labels map to their landmark, body point `i` to `model.body_registration(i)`.
pub fn fps_registration(
    model: &NeedleModel,
    detections: &DetectionSet,
) -> Result<Vec<(PixelPoint, f64)>> {
    let mut out = Vec::with_capacity(detections.len());
    for (label, p) in &detections.labeled {
        out.push((*p, model.landmark_angle(label)?));
    }
    for (i, p) in detections.body.iter().enumerate() {
        out.push((*p, model.body_registration(i)));
    }
    Ok(out)
}

/// Sum of point log-densities under an explicit registration.
pub fn fps_log_likelihood(
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    registration: &[(PixelPoint, f64)],
    noise: &ObservationNoiseConfig,
) -> f64 {
    let rot = pose.rotation();
    registration
        .iter()
        .map(|(p, angle)| {
            let cp = rot * model.point_at(*angle) + pose.position;
            point_term(camera, &cp, p, noise)
        })
        .sum()
}

/// Frame-level features extracted once and evaluated against many poses.
#[derive(Debug, Clone, PartialEq)]
pub enum PreparedObservation {
    /// Point anchors plus ellipse matching over the remaining points.
    EllipseMatching {
        anchors: Vec<(PixelPoint, f64)>,
        points: Vec<PixelPoint>,
    },
    /// Point anchors plus the fitted ellipse parameters.
    EllipseParameters {
        anchors: Vec<(PixelPoint, f64)>,
        fitted: EllipseParams,
    },
    Registered(Vec<(PixelPoint, f64)>),
    Reconstructed(Pose6D),
    /// Feature extraction failed; the frame carries no update.
    Skip(Error),
}

impl PreparedObservation {
    /// Extracts the variant's features. Missing labels are errors; failed
    /// ellipse fits or reconstructions yield [`PreparedObservation::Skip`].
    pub fn new(
        variant: ObservationVariant,
        model: &NeedleModel,
        camera: &CameraIntrinsics,
        detections: &DetectionSet,
    ) -> Result<Self> {
        detections.validate()?;
        let anchors = variant
            .anchor_labels()
            .iter()
            .map(|l| Ok((detections.get(l)?, model.landmark_angle(l)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(match variant {
            ObservationVariant::OnePointEm | ObservationVariant::TwoPointsEm => {
                let used = variant.anchor_labels();
                let mut points: Vec<PixelPoint> = detections
                    .labeled
                    .iter()
                    .filter(|(l, _)| !used.contains(&l.as_str()))
                    .map(|(_, p)| *p)
                    .collect();
                points.extend(detections.body.iter().copied());
                PreparedObservation::EllipseMatching { anchors, points }
            }
            ObservationVariant::OnePointEp | ObservationVariant::TwoPointsEp => {
                match ep_observation(detections) {
                    Ok(fitted) => PreparedObservation::EllipseParameters { anchors, fitted },
                    Err(e @ Error::Precondition(_)) => return Err(e),
                    Err(e) => PreparedObservation::Skip(e),
                }
            }
            ObservationVariant::Fps => {
                PreparedObservation::Registered(fps_registration(model, detections)?)
            }
            ObservationVariant::Pose => {
                let mut anchors = anchors;
                if let (Ok(tip), Ok(angle)) = (detections.get(TIP), model.landmark_angle(TIP)) {
                    anchors.push((tip, angle));
                }
                let reconstructed = fit_ellipse(&detections.all_points()).and_then(|c| {
                    let r = reconstruct_from_anchors(&c, model.radius(), camera, &anchors)?;
                    if r.is_ambiguous() {
                        Err(Error::AmbiguityUnresolved {
                            margin_px: r.separation_px,
                        })
                    } else {
                        Ok(r.pose)
                    }
                });
                match reconstructed {
                    Ok(pose) => PreparedObservation::Reconstructed(pose),
                    Err(e) => PreparedObservation::Skip(e),
                }
            }
        })
    }

    pub fn is_skip(&self) -> bool {
        matches!(self, PreparedObservation::Skip(_))
    }

    /// Log-likelihood of `pose`. A skipped frame is uniform (0).
    pub fn log_likelihood(
        &self,
        pose: &Pose6D,
        model: &NeedleModel,
        camera: &CameraIntrinsics,
        noise: &ObservationNoiseConfig,
    ) -> Result<f64> {
        let anchor_terms = |anchors: &[(PixelPoint, f64)], rot: &nalgebra::Rotation3<f64>| {
            anchors
                .iter()
                .map(|(p, angle)| {
                    let cp = rot * model.point_at(*angle) + pose.position;
                    point_term(camera, &cp, p, noise)
                })
                .sum::<f64>()
        };
        match self {
            PreparedObservation::EllipseMatching { anchors, points } => {
                let rot = pose.rotation();
                let mut total = anchor_terms(anchors, &rot);
                if !points.is_empty() {
                    let normal = rot * Vector3::z();
                    let conic = needle_conic(pose, &normal, model, camera)?;
                    total += em_terms(&conic, points, noise.point_sigma);
                }
                Ok(total)
            }
            PreparedObservation::EllipseParameters { anchors, fitted } => {
                let rot = pose.rotation();
                let normal = rot * Vector3::z();
                let conic = needle_conic(pose, &normal, model, camera)?;
                Ok(anchor_terms(anchors, &rot) + ep_term(&conic, fitted, noise)?)
            }
            PreparedObservation::Registered(reg) => {
                Ok(fps_log_likelihood(pose, model, camera, reg, noise))
            }
            PreparedObservation::Reconstructed(rec) => {
                Ok(pose_baseline_log_likelihood(pose, rec, noise))
            }
            PreparedObservation::Skip(_) => Ok(0.0),
        }
    }
}

/// Sum of the variant's component log-likelihoods for one pose.
pub fn combined_log_likelihood(
    spec: &ObservationModelSpec,
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    detections: &DetectionSet,
) -> Result<f64> {
    match PreparedObservation::new(spec.variant, model, camera, detections)? {
        PreparedObservation::Skip(e) => Err(e),
        prepared => prepared.log_likelihood(pose, model, camera, &spec.noise),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circle::project_circle;
    use crate::needle::{project_landmark, LandmarkRef};

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 128.0, 128.0, 256, 256).unwrap()
    }

    fn frontal() -> (Pose6D, NeedleModel) {
        (
            Pose6D::from_arrays([0.0, 0.0, 0.2], [0.0; 3]),
            NeedleModel::semicircle(0.0054),
        )
    }

    fn noiseless(pose: &Pose6D, model: &NeedleModel, camera: &CameraIntrinsics) -> DetectionSet {
        let mut d = DetectionSet::new(0);
        d = d.with_label(
            TAIL,
            project_landmark(pose, model, LandmarkRef::Label(TAIL), camera).unwrap(),
        );
        d = d.with_label(
            TIP,
            project_landmark(pose, model, LandmarkRef::Label(TIP), camera).unwrap(),
        );
        for f in [0.2, 0.45, 0.8] {
            d = d.with_body(
                project_landmark(
                    pose,
                    model,
                    LandmarkRef::Angle(f * model.arc_extent()),
                    camera,
                )
                .unwrap(),
            );
        }
        d
    }

    #[test]
    fn point_likelihood_at_and_off_the_landmark() {
        let (pose, model) = frontal();
        let noise = ObservationNoiseConfig::new(1.0).unwrap();
        let px = project_landmark(&pose, &model, LandmarkRef::Label(TAIL), &cam()).unwrap();
        let at = point_log_likelihood(&pose, &model, &cam(), &px, TAIL, &noise).unwrap();
        assert!((at + (2.0 * PI).ln()).abs() < 1e-12);
        let off = PixelPoint::new(px.x + 1.0, px.y);
        let l = point_log_likelihood(&pose, &model, &cam(), &off, TAIL, &noise).unwrap();
        assert!((l + (2.0 * PI).ln() + 0.5).abs() < 1e-12);
        assert!(matches!(
            point_log_likelihood(&pose, &model, &cam(), &px, "eye", &noise),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn point_density_integrates_to_one() {
        let (pose, model) = frontal();
        let noise = ObservationNoiseConfig::new(2.0).unwrap();
        let c = project_landmark(&pose, &model, LandmarkRef::Label(TIP), &cam()).unwrap();
        let h = 0.1;
        let mut total = 0.0;
        for i in -200..=200 {
            for j in -200..=200 {
                let p = PixelPoint::new(c.x + i as f64 * h, c.y + j as f64 * h);
                total += point_log_likelihood(&pose, &model, &cam(), &p, TIP, &noise)
                    .unwrap()
                    .exp()
                    * h
                    * h;
            }
        }
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn behind_camera_point_has_zero_density() {
        let model = NeedleModel::semicircle(0.0054);
        let pose = Pose6D::from_arrays([0.0, 0.0, -0.2], [0.0; 3]);
        let noise = ObservationNoiseConfig::new(1.0).unwrap();
        let l = point_log_likelihood(
            &pose,
            &model,
            &cam(),
            &PixelPoint::new(1.0, 1.0),
            TAIL,
            &noise,
        )
        .unwrap();
        assert_eq!(l, f64::NEG_INFINITY);
    }

    #[test]
    fn em_residual_examples() {
        let (pose, model) = frontal();
        for i in 0..10 {
            let px = project_landmark(&pose, &model, LandmarkRef::Angle(i as f64 * 0.3), &cam())
                .unwrap();
            assert!(em_residual(&pose, &model, &cam(), &px).unwrap().abs() < 1e-9);
        }
        // radius 27 px: ((x−128)² + (y−128)² − 27²) / (2·128² − 27²)
        let p = PixelPoint::new(128.0 + 28.08, 128.0);
        let k = 2.0 * 128.0 * 128.0 - 27.0 * 27.0;
        let want = (28.08f64.powi(2) - 27.0f64.powi(2)) / k;
        let got = em_residual(&pose, &model, &cam(), &p).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn em_variance_examples() {
        let circle = EllipseCoefficients::new(-0.01, 0.0, -0.01, 0.0, 0.0);
        let p = PixelPoint::new(10.0, 0.0);
        assert!((em_variance_for_conic(&circle, &p, 1.0) - 0.04).abs() < 1e-15);
        assert_eq!(em_variance_for_conic(&circle, &p, 0.0), VARIANCE_FLOOR);
    }

    #[test]
    fn em_log_likelihood_on_conic_is_the_normalizer() {
        let (pose, model) = frontal();
        let d = noiseless(&pose, &model, &cam());
        let conic = project_circle(&pose, model.radius(), &cam()).unwrap();
        let want: f64 = d
            .body
            .iter()
            .map(|p| -0.5 * (2.0 * PI * em_variance_for_conic(&conic, p, 1.0)).ln())
            .sum();
        let got = em_log_likelihood(&pose, &model, &cam(), &d.body, 1.0).unwrap();
        assert!((got - want).abs() < 1e-9);
        assert!(matches!(
            em_log_likelihood(&pose, &model, &cam(), &[], 1.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn ep_observation_requires_five_points() {
        let (pose, model) = frontal();
        let mut d = noiseless(&pose, &model, &cam());
        d.body.pop();
        assert!(matches!(ep_observation(&d), Err(Error::Precondition(_))));
    }

    #[test]
    fn ep_likelihood_max_and_wrapping() {
        let model = NeedleModel::semicircle(0.0054);
        let pose = Pose6D::from_arrays([0.003, 0.001, 0.18], [0.5, 0.2, 0.0]);
        let noise = ObservationNoiseConfig::new(1.0).unwrap();
        let projected =
            coeffs_to_params(&project_circle(&pose, model.radius(), &cam()).unwrap()).unwrap();
        let l = ep_log_likelihood(&pose, &model, &cam(), &projected, &noise).unwrap();
        assert!((l - noise.ellipse.max_log_density()).abs() < 1e-9);
        let mut turned = projected;
        turned.rotation += PI;
        let l2 = ep_log_likelihood(&pose, &model, &cam(), &turned, &noise).unwrap();
        assert!((l2 - l).abs() < 1e-9);
        let swapped = EllipseParams::new(
            projected.center,
            projected.height,
            projected.width,
            projected.rotation + PI / 2.0,
        );
        let l3 = ep_log_likelihood(&pose, &model, &cam(), &swapped, &noise).unwrap();
        assert!((l3 - l).abs() < 1e-9);
    }

    #[test]
    fn pose_baseline_examples() {
        let noise = ObservationNoiseConfig::new(1.0).unwrap();
        let p = Pose6D::from_arrays([0.0, 0.0, 0.2], [0.1, 0.2, 0.3]);
        let max = pose_baseline_log_likelihood(&p, &p, &noise);
        assert!((max - noise.pose.max_log_density()).abs() < 1e-12);
        let q = Pose6D::from_arrays([0.005, 0.0, 0.2], [0.1, 0.2, 0.3]);
        let off = pose_baseline_log_likelihood(&p, &q, &noise);
        assert!((max - off - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fps_penalizes_misregistered_body_point() {
        let (pose, model) = frontal();
        let noise = ObservationNoiseConfig::new(1.0).unwrap();
        let arc = model.arc_extent();
        let at =
            |f: f64| project_landmark(&pose, &model, LandmarkRef::Angle(f * arc), &cam()).unwrap();
        let correct = fps_log_likelihood(&pose, &model, &cam(), &[(at(0.4), 0.4 * arc)], &noise);
        let wrong = fps_log_likelihood(&pose, &model, &cam(), &[(at(0.4), 0.5 * arc)], &noise);
        assert!(wrong < correct);

        let d = noiseless(&pose, &model, &cam());
        let reg = fps_registration(&model, &d).unwrap();
        let total = fps_log_likelihood(&pose, &model, &cam(), &reg, &noise);
        let mut by_parts = 0.0;
        for (label, p) in &d.labeled {
            by_parts += point_log_likelihood(&pose, &model, &cam(), p, label, &noise).unwrap();
        }
        for (i, p) in d.body.iter().enumerate() {
            by_parts += fps_log_likelihood(
                &pose,
                &model,
                &cam(),
                &[(*p, model.body_registration(i))],
                &noise,
            );
        }
        assert!((total - by_parts).abs() < 1e-9);
    }

    #[test]
    fn two_points_em_is_sum_of_components() {
        let model = NeedleModel::semicircle(0.0054);
        let pose = Pose6D::from_arrays([0.002, -0.003, 0.17], [0.4, -0.3, 0.2]);
        let noise = ObservationNoiseConfig::new(1.0).unwrap();
        let mut d = noiseless(&pose, &model, &cam());
        for p in d.body.iter_mut() {
            p.x += 0.7;
        }
        let spec = ObservationModelSpec::new(ObservationVariant::TwoPointsEm, noise.clone());
        let est = Pose6D::from_arrays([0.0025, -0.003, 0.171], [0.41, -0.3, 0.2]);
        let total = combined_log_likelihood(&spec, &est, &model, &cam(), &d).unwrap();
        let parts = point_log_likelihood(&est, &model, &cam(), &d.get(TAIL).unwrap(), TAIL, &noise)
            .unwrap()
            + point_log_likelihood(&est, &model, &cam(), &d.get(TIP).unwrap(), TIP, &noise)
                .unwrap()
            + em_log_likelihood(&est, &model, &cam(), &d.body, 1.0).unwrap();
        assert!((total - parts).abs() < 1e-9);

        let mut rev = d.clone();
        rev.body.reverse();
        let permuted = combined_log_likelihood(&spec, &est, &model, &cam(), &rev).unwrap();
        assert!((permuted - total).abs() < 1e-9);
    }

    #[test]
    fn missing_tail_is_reported() {
        let (pose, model) = frontal();
        let mut d = noiseless(&pose, &model, &cam());
        d.labeled.remove(TAIL);
        let spec = ObservationModelSpec::new(
            ObservationVariant::OnePointEm,
            ObservationNoiseConfig::new(1.0).unwrap(),
        );
        assert_eq!(
            combined_log_likelihood(&spec, &pose, &model, &cam(), &d),
            Err(Error::MissingLabel(TAIL.into()))
        );
    }

    #[test]
    fn degenerate_fit_skips_ep_frame() {
        let model = NeedleModel::semicircle(0.0054);
        let mut d = DetectionSet::new(4);
        for i in 0..5 {
            let p = PixelPoint::new(100.0 + i as f64, 100.0 + 2.0 * i as f64);
            d = if i == 0 {
                d.with_label(TAIL, p)
            } else if i == 1 {
                d.with_label(TIP, p)
            } else {
                d.with_body(p)
            };
        }
        let prepared =
            PreparedObservation::new(ObservationVariant::TwoPointsEp, &model, &cam(), &d).unwrap();
        assert!(matches!(
            prepared,
            PreparedObservation::Skip(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in ObservationVariant::ALL {
            assert_eq!(v.name().parse::<ObservationVariant>().unwrap(), v);
        }
        assert!("NCCS".parse::<ObservationVariant>().is_err());
    }
}
