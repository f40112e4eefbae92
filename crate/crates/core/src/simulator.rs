//! Synthetic trajectories, noisy detections and the repeated-trial experiment.
//!
//! Seeds: trial `k` of an experiment with base seed `s` simulates with the
//! first `u64` of ChaCha8(`s`, stream `2k`) and filters with the first `u64`
//! of ChaCha8(`s`, stream `2k + 1`). Detections therefore depend only on
//! `(s, k)` and every variant sees the same frames.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::distr::Open01;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::filter::{initial_pose_from_detections, FilterConfig, ParticleFilter};
use crate::needle::{project_landmark, LandmarkRef, NeedleModel, TAIL, TIP};
use crate::observation::{DetectionSet, ObservationVariant};
use crate::pose::{apply_motion, axis_angle_from_quat, pose_error, Action, Pose6D};

/// Arc samples used for the visibility check.
const VISIBILITY_SAMPLES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Static,
    Moving,
}

impl Motion {
    pub fn name(&self) -> &'static str {
        match self {
            Motion::Static => "static",
            Motion::Moving => "moving",
        }
    }
}

/// Ground-truth trajectory. `actions[t]` moves frame `t` to frame `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub motion: Motion,
    pub initial: Pose6D,
    pub actions: Vec<Action>,
    pub steps: usize,
    /// Minimum distance (px) of the projected needle from the image border.
    pub margin_px: f64,
}

impl TrajectorySpec {
    pub fn stationary(initial: Pose6D, steps: usize) -> Self {
        Self {
            motion: Motion::Static,
            initial,
            actions: Vec::new(),
            steps,
            margin_px: 5.0,
        }
    }

    /// Explicit action list; `steps = actions.len() + 1`.
    pub fn moving(initial: Pose6D, actions: Vec<Action>) -> Self {
        Self {
            motion: Motion::Moving,
            initial,
            steps: actions.len() + 1,
            actions,
            margin_px: 5.0,
        }
    }

    /// Back-and-forth motion: each step translates `step_m` along `direction`
    /// and rotates `step_rad` about the camera-frame `axis`, reversing every
    /// `2 · half_sweep` steps so the needle oscillates around `initial`.
    pub fn sweep(
        initial: Pose6D,
        steps: usize,
        direction: Vector3<f64>,
        step_m: f64,
        axis: Vector3<f64>,
        step_rad: f64,
        half_sweep: usize,
    ) -> Self {
        let d = direction.normalize() * step_m;
        let r = axis.normalize() * step_rad;
        let actions = (0..steps.saturating_sub(1))
            .map(|t| {
                let phase = t % (4 * half_sweep);
                let sign = if phase < half_sweep || phase >= 3 * half_sweep {
                    1.0
                } else {
                    -1.0
                };
                Action::new(d * sign, r * sign)
            })
            .collect();
        Self::moving(initial, actions)
    }

    /// 0.5 mm and 0.5° per step along a tilted line and about a skew axis,
    /// reversing every 40 steps (±10 mm, ±10° around the start).
    pub fn default_moving(initial: Pose6D, steps: usize) -> Self {
        Self::sweep(
            initial,
            steps,
            Vector3::new(1.0, 0.5, 0.4),
            5e-4,
            Vector3::new(0.3, -0.5, 0.8),
            0.5 * PI / 180.0,
            20,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig {
                field: "trajectory.steps".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self.motion == Motion::Moving && self.actions.len() + 1 != self.steps {
            return Err(Error::InvalidConfig {
                field: "trajectory.actions".into(),
                reason: format!(
                    "{} actions for {} steps, expected {}",
                    self.actions.len(),
                    self.steps,
                    self.steps - 1
                ),
            });
        }
        if !(self.margin_px >= 0.0) {
            return Err(Error::InvalidConfig {
                field: "trajectory.margin_px".into(),
                reason: "must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

/// Detection noise and the simulation seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Pixel std added to both coordinates of every point.
    pub sigma: f64,
    pub seed: u64,
    /// Probability of dropping each body point.
    #[serde(default)]
    pub dropout: f64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            seed,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig {
                field: "noise.sigma".into(),
                reason: format!("must be a nonnegative number, got {}", self.sigma),
            });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig {
                field: "noise.dropout".into(),
                reason: format!("must lie in [0, 1), got {}", self.dropout),
            });
        }
        Ok(())
    }
}

/// One simulated frame: ground truth, the action that led to it, detections.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub frame: usize,
    pub truth: Pose6D,
    pub action: Action,
    pub detections: DetectionSet,
}

/// True when the whole arc projects inside the image with `margin` px to spare.
pub fn needle_visible(
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    margin: f64,
) -> bool {
    (0..=VISIBILITY_SAMPLES).all(|i| {
        let angle = model.arc_extent() * i as f64 / VISIBILITY_SAMPLES as f64;
        project_landmark(pose, model, LandmarkRef::Angle(angle), camera)
            .map(|px| camera.contains(&px, margin))
            .unwrap_or(false)
    })
}

/// Random pose 0.12–0.22 m in front of the camera, fully visible, with the
/// needle-frame z axis pointing away from the camera and at most ~70° of tilt.
pub fn random_visible_pose<R: Rng + ?Sized>(
    rng: &mut R,
    camera: &CameraIntrinsics,
    model: &NeedleModel,
) -> Pose6D {
    loop {
        let position = Vector3::new(
            rng.random_range(-0.015..0.015),
            rng.random_range(-0.015..0.015),
            rng.random_range(0.12..0.22),
        );
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let w: f64 = rng.sample(StandardNormal);
        let Some(mut q) =
            UnitQuaternion::try_new(nalgebra::Quaternion::new(w, v.x, v.y, v.z), 1e-9)
        else {
            continue;
        };
        if (q * Vector3::z()).dot(&position) < 0.0 {
            q *= UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI);
        }
        let pose = Pose6D::new(position, axis_angle_from_quat(&q));
        let facing = (pose.rotation() * Vector3::z()).dot(&position.normalize());
        if facing > 0.3 && needle_visible(&pose, model, camera, 10.0) {
            return pose;
        }
    }
}

/// Poses and actions along the trajectory; `OutOfView` names the first bad frame.
pub fn generate_trajectory(
    spec: &TrajectorySpec,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Result<Vec<(Pose6D, Action)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.steps);
    let mut pose = spec.initial;
    for t in 0..spec.steps {
        let action = match spec.motion {
            Motion::Static => Action::zero(),
            Motion::Moving if t == 0 => Action::zero(),
            Motion::Moving => spec.actions[t - 1],
        };
        if !action.is_zero() {
            pose = apply_motion(&pose, &action, &[0.0; 6]);
        }
        if !needle_visible(&pose, model, camera, spec.margin_px) {
            return Err(Error::OutOfView { frame: t });
        }
        out.push((pose, action));
    }
    Ok(out)
}

/// Tail, tip and one body point per third of the arc, projected and perturbed.
///
/// Draw order: three `Open01` body fractions, ten normals (tail, tip, body
/// points; x then y), then one uniform per body point when dropout is on.
pub fn render_detections<R: Rng + ?Sized>(
    frame: usize,
    pose: &Pose6D,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<DetectionSet> {
    let arc = model.arc_extent();
    let body_angles: Vec<f64> = (0..3)
        .map(|k| {
            let u: f64 = rng.sample(Open01);
            arc * (k as f64 + u) / 3.0
        })
        .collect();
    let mut angles = vec![model.landmark_angle(TAIL)?, model.landmark_angle(TIP)?];
    angles.extend(&body_angles);

    let mut points = Vec::with_capacity(angles.len());
    for angle in angles {
        let px = project_landmark(pose, model, LandmarkRef::Angle(angle), camera)?;
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        let noisy =
            crate::camera::PixelPoint::new(px.x + noise.sigma * nx, px.y + noise.sigma * ny);
        if !camera.contains(&noisy, 0.0) {
            return Err(Error::OutOfView { frame });
        }
        points.push(noisy);
    }

    let mut det = DetectionSet::new(frame)
        .with_label(TAIL, points[0])
        .with_label(TIP, points[1]);
    for p in &points[2..] {
        let keep = noise.dropout == 0.0 || rng.random::<f64>() >= noise.dropout;
        if keep {
            det = det.with_body(*p);
        }
    }
    Ok(det)
}

/// Full frame stream for one seed.
pub fn simulate(
    spec: &TrajectorySpec,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    noise: &NoiseSpec,
) -> Result<Vec<SimFrame>> {
    noise.validate()?;
    let trajectory = generate_trajectory(spec, model, camera)?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    trajectory
        .into_iter()
        .enumerate()
        .map(|(frame, (truth, action))| {
            Ok(SimFrame {
                frame,
                truth,
                action,
                detections: render_detections(frame, &truth, model, camera, noise, &mut rng)?,
            })
        })
        .collect()
}

/// Derived seed for trial `trial`; `role` 0 simulates, 1 filters.
pub fn trial_seed(base: u64, trial: usize, role: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(2 * trial as u64 + role);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Initialization {
    /// Reconstruct from the first frame whose ellipse fit succeeds.
    #[default]
    Reconstruct,
    /// Start at the ground-truth pose of frame 0.
    Truth,
}

/// Per-trial outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    /// Per-frame `(mm, deg)` errors for frames after initialization.
    pub errors: Vec<(f64, f64)>,
    pub runtime_s_per_frame: f64,
    pub failure: Option<Error>,
}

impl TrialResult {
    pub fn mean_error(&self) -> (f64, f64) {
        let n = self.errors.len().max(1) as f64;
        let (p, o) = self
            .errors
            .iter()
            .fold((0.0, 0.0), |(p, o), (dp, da)| (p + dp, o + da));
        (p / n, o / n)
    }
}

/// One benchmark condition.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
    pub model: NeedleModel,
    pub camera: CameraIntrinsics,
    pub filter: FilterConfig,
    pub trials: usize,
    pub init: Initialization,
    /// Run trials on the rayon pool when the `parallel` feature is on.
    pub parallel_trials: bool,
}

/// Simulates and tracks one trial. Filter divergence ends the trial as a failure.
pub fn run_trial(exp: &Experiment, trial: usize) -> Result<TrialResult> {
    let noise = NoiseSpec {
        seed: trial_seed(exp.noise.seed, trial, 0),
        ..exp.noise
    };
    let frames = simulate(&exp.trajectory, &exp.model, &exp.camera, &noise)?;
    let (start, p0) = match exp.init {
        Initialization::Truth => (0, frames[0].truth),
        Initialization::Reconstruct => frames
            .iter()
            .find_map(|f| {
                initial_pose_from_detections(&f.detections, &exp.model, &exp.camera)
                    .ok()
                    .map(|p| (f.frame, p))
            })
            .ok_or_else(|| {
                Error::DegenerateConfiguration("no frame could be reconstructed".into())
            })?,
    };
    let mut config = exp.filter.clone();
    config.seed = trial_seed(exp.filter.seed, trial, 1);
    let mut filter = ParticleFilter::new(config, exp.model.clone(), exp.camera, &p0)?;

    let mut errors = Vec::with_capacity(frames.len());
    let mut failure = None;
    let started = Instant::now();
    let mut steps = 0usize;
    for f in &frames[start + 1..] {
        steps += 1;
        match filter.step(&f.action, &f.detections) {
            Ok(out) => errors.push(pose_error(&out.estimate, &f.truth)),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    Ok(TrialResult {
        trial,
        errors,
        runtime_s_per_frame: if steps == 0 {
            0.0
        } else {
            elapsed / steps as f64
        },
        failure,
    })
}

/// Mean ± std across trials of per-trial mean errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub variant: ObservationVariant,
    pub motion: Motion,
    pub sigma: f64,
    pub pos_mean_mm: f64,
    pub pos_std_mm: f64,
    pub ori_mean_deg: f64,
    pub ori_std_deg: f64,
    pub runtime_s_per_frame: f64,
    pub failures: usize,
    pub trials: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates finished trials; diverged trials count as failures only.
pub fn summarize(exp: &Experiment, results: &[TrialResult]) -> ErrorSummary {
    let ok: Vec<&TrialResult> = results.iter().filter(|r| r.failure.is_none()).collect();
    let pos: Vec<f64> = ok.iter().map(|r| r.mean_error().0).collect();
    let ori: Vec<f64> = ok.iter().map(|r| r.mean_error().1).collect();
    let (pos_mean_mm, pos_std_mm) = mean_std(&pos);
    let (ori_mean_deg, ori_std_deg) = mean_std(&ori);
    let runtime =
        results.iter().map(|r| r.runtime_s_per_frame).sum::<f64>() / results.len().max(1) as f64;
    ErrorSummary {
        variant: exp.filter.observation.variant,
        motion: exp.trajectory.motion,
        sigma: exp.noise.sigma,
        pos_mean_mm,
        pos_std_mm,
        ori_mean_deg,
        ori_std_deg,
        runtime_s_per_frame: runtime,
        failures: results.len() - ok.len(),
        trials: results.len(),
    }
}

/// Runs every trial and returns per-trial results in trial order.
pub fn run_trials(exp: &Experiment) -> Result<Vec<TrialResult>> {
    if exp.trials == 0 {
        return Err(Error::InvalidConfig {
            field: "trials".into(),
            reason: "must be at least 1".into(),
        });
    }
    #[cfg(feature = "parallel")]
    if exp.parallel_trials {
        use rayon::prelude::*;
        return (0..exp.trials)
            .into_par_iter()
            .map(|k| run_trial(exp, k))
            .collect();
    }
    (0..exp.trials).map(|k| run_trial(exp, k)).collect()
}

pub fn run_experiment(exp: &Experiment) -> Result<ErrorSummary> {
    let results = run_trials(exp)?;
    Ok(summarize(exp, &results))
}
