//! TOML experiment configuration.
//!
//! Every field has a default, so an empty file is a valid configuration.
//! Lengths are given in metres except where the key says `_mm`; angles in
//! degrees where the key says `_deg`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::filter::{Execution, FilterConfig};
use crate::needle::{MotionNoise, NeedleModel};
use crate::observation::{ObservationModelSpec, ObservationNoiseConfig, ObservationVariant};
use crate::pose::{Action, Pose6D};
use crate::simulator::{Experiment, Initialization, Motion, NoiseSpec, TrajectorySpec};

/// Lower bound on the filter's point std when it follows a zero simulation σ.
pub const MIN_POINT_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        let c = CameraIntrinsics::default();
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeedleConfig {
    pub radius: f64,
    pub arc_extent_deg: f64,
    pub body_points: usize,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        Self {
            radius: 0.0054,
            arc_extent_deg: 180.0,
            body_points: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub steps: usize,
    /// Initial needle position (m).
    pub position: [f64; 3],
    /// Initial orientation, axis-angle (rad).
    pub orientation: [f64; 3],
    pub margin_px: f64,
    /// Moving case: per-step translation direction and length.
    pub direction: [f64; 3],
    pub step_mm: f64,
    /// Moving case: per-step rotation axis (camera frame) and angle.
    pub axis: [f64; 3],
    pub step_deg: f64,
    /// Steps between reversals of the sweep, halved.
    pub half_sweep: usize,
    /// Explicit moving-case actions `[tx, ty, tz, rx, ry, rz]` (m, rad);
    /// when non-empty they replace the sweep and fix `steps`.
    pub actions: Vec<[f64; 6]>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            position: [0.002, -0.001, 0.16],
            orientation: [PI / 4.0, 0.0, 0.0],
            margin_px: 5.0,
            direction: [1.0, 0.5, 0.4],
            step_mm: 0.5,
            axis: [0.3, -0.5, 0.8],
            step_deg: 0.5,
            half_sweep: 20,
            actions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Probability of dropping each body point.
    pub dropout: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { dropout: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitConfig {
    #[default]
    Reconstruct,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub particles: usize,
    /// Resampling threshold as a fraction of `particles`.
    pub neff_fraction: f64,
    pub motion_std_mm: [f64; 3],
    pub motion_std_deg: [f64; 3],
    pub initial_std_mm: [f64; 3],
    pub initial_std_deg: [f64; 3],
    pub init: InitConfig,
    /// Evaluate likelihoods on the rayon pool (needs the `parallel` feature).
    pub parallel: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            particles: 5000,
            neff_fraction: 0.5,
            motion_std_mm: [0.1; 3],
            motion_std_deg: [0.2; 3],
            initial_std_mm: [5.0; 3],
            initial_std_deg: [5.0; 3],
            init: InitConfig::Reconstruct,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    /// Point std σ̄_p (px). Unset: follow the simulated σ, floored at 0.1 px.
    pub point_sigma: Option<f64>,
    /// Ellipse-parameter std: center x, center y, width, height (px).
    pub ep_std_px: [f64; 4],
    pub ep_std_deg: f64,
    pub pose_std_mm: [f64; 3],
    pub pose_std_deg: [f64; 3],
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            point_sigma: None,
            ep_std_px: [2.0, 2.0, 4.0, 4.0],
            ep_std_deg: 5.0,
            pose_std_mm: [5.0; 3],
            pose_std_deg: [5.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub variants: Vec<ObservationVariant>,
    pub motions: Vec<Motion>,
    pub sigmas: Vec<f64>,
    pub output: Option<String>,
    pub camera: CameraConfig,
    pub needle: NeedleConfig,
    pub trajectory: TrajectoryConfig,
    pub noise: NoiseConfig,
    pub filter: FilterSection,
    pub observation: ObservationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 10,
            variants: ObservationVariant::ALL.to_vec(),
            motions: vec![Motion::Static, Motion::Moving],
            sigmas: vec![0.5, 1.0, 1.5],
            output: None,
            camera: CameraConfig::default(),
            needle: NeedleConfig::default(),
            trajectory: TrajectoryConfig::default(),
            noise: NoiseConfig::default(),
            filter: FilterSection::default(),
            observation: ObservationConfig::default(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field: field.into(),
        reason: reason.into(),
    }
}

fn std_vector(mm: [f64; 3], deg: [f64; 3]) -> [f64; 6] {
    [
        mm[0] * 1e-3,
        mm[1] * 1e-3,
        mm[2] * 1e-3,
        deg[0].to_radians(),
        deg[1].to_radians(),
        deg[2].to_radians(),
    ]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig {
            field: "<toml>".into(),
            reason: e.to_string().trim_end().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// Checks every field and reports the first violation by its dotted key.
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if self.variants.is_empty() {
            return Err(invalid("variants", "at least one variant is required"));
        }
        if self.motions.is_empty() {
            return Err(invalid("motions", "at least one motion is required"));
        }
        if self.sigmas.is_empty() {
            return Err(invalid("sigmas", "at least one sigma is required"));
        }
        if let Some(s) = self.sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return Err(invalid(
                "sigmas",
                format!("sigma must be nonnegative, got {s}"),
            ));
        }
        self.camera_intrinsics()?;
        self.needle_model()?;
        let t = &self.trajectory;
        if t.steps == 0 && t.actions.is_empty() {
            return Err(invalid("trajectory.steps", "must be at least 1"));
        }
        if !(t.position[2] > 0.0) {
            return Err(invalid(
                "trajectory.position",
                "needle must be in front of the camera",
            ));
        }
        if !(t.margin_px >= 0.0) {
            return Err(invalid("trajectory.margin_px", "must be nonnegative"));
        }
        if t.actions.is_empty() {
            if Vector3::from(t.direction).norm() == 0.0 {
                return Err(invalid("trajectory.direction", "must be nonzero"));
            }
            if Vector3::from(t.axis).norm() == 0.0 {
                return Err(invalid("trajectory.axis", "must be nonzero"));
            }
            if t.half_sweep == 0 {
                return Err(invalid("trajectory.half_sweep", "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.noise.dropout) {
            return Err(invalid("noise.dropout", "must lie in [0, 1)"));
        }
        let f = &self.filter;
        if f.particles < 2 {
            return Err(invalid("filter.particles", "need at least 2"));
        }
        if !(f.neff_fraction > 0.0 && f.neff_fraction <= 1.0) {
            return Err(invalid("filter.neff_fraction", "must lie in (0, 1]"));
        }
        for (key, v) in [
            ("filter.motion_std_mm", f.motion_std_mm),
            ("filter.motion_std_deg", f.motion_std_deg),
            ("filter.initial_std_mm", f.initial_std_mm),
            ("filter.initial_std_deg", f.initial_std_deg),
        ] {
            if v.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(invalid(key, "std must be nonnegative"));
            }
        }
        let o = &self.observation;
        if let Some(s) = o.point_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("observation.point_sigma", "must be positive"));
            }
        }
        if o.ep_std_px.iter().any(|s| !(*s > 0.0)) || !(o.ep_std_deg > 0.0) {
            return Err(invalid(
                "observation.ep_std_px",
                "ellipse std must be positive",
            ));
        }
        if o.pose_std_mm
            .iter()
            .chain(&o.pose_std_deg)
            .any(|s| !(*s > 0.0))
        {
            return Err(invalid(
                "observation.pose_std_mm",
                "pose std must be positive",
            ));
        }
        Ok(())
    }

    pub fn camera_intrinsics(&self) -> Result<CameraIntrinsics> {
        let c = &self.camera;
        CameraIntrinsics::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height)
    }

    pub fn needle_model(&self) -> Result<NeedleModel> {
        let n = &self.needle;
        NeedleModel::new(n.radius, n.arc_extent_deg.to_radians(), n.body_points)
    }

    pub fn initial_pose(&self) -> Pose6D {
        Pose6D::from_arrays(self.trajectory.position, self.trajectory.orientation)
    }

    pub fn trajectory_spec(&self, motion: Motion) -> TrajectorySpec {
        let t = &self.trajectory;
        let mut spec = match motion {
            Motion::Static => TrajectorySpec::stationary(self.initial_pose(), t.steps),
            Motion::Moving if !t.actions.is_empty() => TrajectorySpec::moving(
                self.initial_pose(),
                t.actions
                    .iter()
                    .map(|a| Action {
                        translation: [a[0], a[1], a[2]],
                        rotation: [a[3], a[4], a[5]],
                    })
                    .collect(),
            ),
            Motion::Moving => TrajectorySpec::sweep(
                self.initial_pose(),
                t.steps,
                Vector3::from(t.direction),
                t.step_mm * 1e-3,
                Vector3::from(t.axis),
                t.step_deg.to_radians(),
                t.half_sweep,
            ),
        };
        spec.margin_px = t.margin_px;
        spec
    }

    pub fn noise_spec(&self, sigma: f64) -> NoiseSpec {
        NoiseSpec {
            sigma,
            seed: self.seed,
            dropout: self.noise.dropout,
        }
    }

    /// Point std used by the filter when detections carry noise `sigma`.
    pub fn point_sigma(&self, sigma: f64) -> f64 {
        self.observation
            .point_sigma
            .unwrap_or(sigma.max(MIN_POINT_SIGMA))
    }

    pub fn observation_spec(
        &self,
        variant: ObservationVariant,
        sigma: f64,
    ) -> Result<ObservationModelSpec> {
        let o = &self.observation;
        let ep = [
            o.ep_std_px[0],
            o.ep_std_px[1],
            o.ep_std_px[2],
            o.ep_std_px[3],
            o.ep_std_deg.to_radians(),
        ];
        let noise = ObservationNoiseConfig::with_std(
            self.point_sigma(sigma),
            ep,
            std_vector(o.pose_std_mm, o.pose_std_deg),
        )?;
        Ok(ObservationModelSpec::new(variant, noise))
    }

    pub fn filter_config(&self, variant: ObservationVariant, sigma: f64) -> Result<FilterConfig> {
        let f = &self.filter;
        let mut config = FilterConfig::new(
            f.particles,
            MotionNoise::from_std(std_vector(f.motion_std_mm, f.motion_std_deg))?,
            MotionNoise::from_std(std_vector(f.initial_std_mm, f.initial_std_deg))?,
            self.observation_spec(variant, sigma)?,
            self.seed,
        );
        config.neff_threshold = f.neff_fraction * f.particles as f64;
        config.execution = if f.parallel {
            Execution::default()
        } else {
            Execution::Sequential
        };
        Ok(config)
    }

    pub fn experiment(
        &self,
        variant: ObservationVariant,
        motion: Motion,
        sigma: f64,
    ) -> Result<Experiment> {
        Ok(Experiment {
            trajectory: self.trajectory_spec(motion),
            noise: self.noise_spec(sigma),
            model: self.needle_model()?,
            camera: self.camera_intrinsics()?,
            filter: self.filter_config(variant, sigma)?,
            trials: self.trials,
            init: match self.filter.init {
                InitConfig::Reconstruct => Initialization::Reconstruct,
                InitConfig::Truth => Initialization::Truth,
            },
            parallel_trials: self.filter.parallel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(
            ExperimentConfig::from_toml_str("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.seed = 99;
        c.variants = vec![ObservationVariant::TwoPointsEm, ObservationVariant::Fps];
        c.observation.point_sigma = Some(0.7);
        c.trajectory.actions = vec![[1e-4, 0.0, 0.0, 0.0, 0.0, 0.01]; 3];
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn negative_sigma_names_the_field() {
        let e = ExperimentConfig::from_toml_str("sigmas = [0.5, -1.0]").unwrap_err();
        assert!(
            matches!(e, Error::InvalidConfig { ref field, .. } if field == "sigmas"),
            "{e}"
        );
    }

    #[test]
    fn bad_nested_value_names_the_field() {
        let e = ExperimentConfig::from_toml_str("[filter]\nparticles = 1\n").unwrap_err();
        assert!(matches!(e, Error::InvalidConfig { ref field, .. } if field == "filter.particles"));
        let e = ExperimentConfig::from_toml_str("[camera]\nfx = -3.0\n").unwrap_err();
        assert!(
            matches!(e, Error::InvalidConfig { ref field, .. } if field.starts_with("camera")),
            "{e}"
        );
    }

    #[test]
    fn syntax_errors_report_the_line() {
        let e = ExperimentConfig::from_toml_str("seed = 1\ntrials = \"ten\"\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = ExperimentConfig::from_toml_str("[filter]\nparticle = 10\n").unwrap_err();
        assert!(e.to_string().contains("particle"), "{e}");
    }

    #[test]
    fn zero_sigma_point_std_is_floored() {
        let c = ExperimentConfig::default();
        assert_eq!(c.point_sigma(0.0), MIN_POINT_SIGMA);
        assert_eq!(c.point_sigma(1.5), 1.5);
    }

    #[test]
    fn default_trajectories_stay_in_view() {
        let c = ExperimentConfig::default();
        let model = c.needle_model().unwrap();
        let camera = c.camera_intrinsics().unwrap();
        for m in [Motion::Static, Motion::Moving] {
            crate::simulator::generate_trajectory(&c.trajectory_spec(m), &model, &camera).unwrap();
        }
    }
}
