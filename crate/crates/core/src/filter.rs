//! Sequential Monte-Carlo tracking of the needle pose.
//!
//! The filter owns a single ChaCha8 stream. Per step it draws, in order:
//! `6·N_s` normals for the motion noise (particle-major), then `N_s` uniforms
//! for stratified resampling when it triggers. Likelihoods consume no
//! randomness, so evaluating them in parallel leaves the stream untouched.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraIntrinsics;
use nalgebra::{DMatrix, DVector};

use crate::circle::{project_circle, reconstruct_from_anchors};
use crate::conic::{conic_residual, fit_ellipse};
use crate::error::{Error, Result};
use crate::needle::{MotionNoise, NeedleModel, TAIL, TIP};
use crate::observation::{
    em_variance_for_conic, DetectionSet, ObservationModelSpec, PreparedObservation,
};
use crate::pose::{
    apply_motion, axis_angle_from_quat, pose_error, quat_from_axis_angle, weighted_mean_pose,
    Action, Pose6D,
};

/// How per-particle likelihoods are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

#[allow(clippy::derivable_impls)]
impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub particles: usize,
    pub neff_threshold: f64,
    pub motion_noise: MotionNoise,
    pub initial_noise: MotionNoise,
    pub observation: ObservationModelSpec,
    pub seed: u64,
    pub execution: Execution,
}

impl FilterConfig {
    /// Resampling threshold `N_s / 2`, default execution mode.
    pub fn new(
        particles: usize,
        motion_noise: MotionNoise,
        initial_noise: MotionNoise,
        observation: ObservationModelSpec,
        seed: u64,
    ) -> Self {
        Self {
            particles,
            neff_threshold: particles as f64 / 2.0,
            motion_noise,
            initial_noise,
            observation,
            seed,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(Error::InvalidConfig {
                field: "filter.particles".into(),
                reason: format!("need at least 2, got {}", self.particles),
            });
        }
        if !(self.neff_threshold > 0.0 && self.neff_threshold <= self.particles as f64) {
            return Err(Error::InvalidConfig {
                field: "filter.neff_threshold".into(),
                reason: format!("must lie in (0, {}]", self.particles),
            });
        }
        Ok(())
    }
}

/// Weighted pose hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    poses: Vec<Pose6D>,
    weights: Vec<f64>,
}

impl ParticleSet {
    /// Equal-weight set.
    pub fn uniform(poses: Vec<Pose6D>) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::Precondition(
                "a particle set needs at least 2 particles".into(),
            ));
        }
        let w = 1.0 / poses.len() as f64;
        Ok(Self {
            weights: vec![w; poses.len()],
            poses,
        })
    }

    /// Normalizes the given nonnegative weights.
    pub fn with_weights(poses: Vec<Pose6D>, weights: Vec<f64>) -> Result<Self> {
        if poses.len() != weights.len() || poses.len() < 2 {
            return Err(Error::Precondition(
                "poses and weights must have equal length of at least 2".into(),
            ));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Precondition(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::AllParticlesDegenerate);
        }
        Ok(Self {
            poses,
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[Pose6D] {
        &self.poses
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn effective_count(&self) -> f64 {
        effective_count(&self.weights)
    }

    pub fn estimate(&self) -> Result<Pose6D> {
        weighted_mean_pose(&self.poses, &self.weights)
    }
}

/// `1 / Σ αᵢ²` for normalized weights.
pub fn effective_count(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// `n` particles around `p0`: Gaussian position, left-composed orientation perturbation.
pub fn sample_initial<R: Rng + ?Sized>(
    p0: &Pose6D,
    initial_noise: &MotionNoise,
    n: usize,
    rng: &mut R,
) -> Result<ParticleSet> {
    let zero = Action::zero();
    let poses = (0..n)
        .map(|_| apply_motion(p0, &zero, &initial_noise.sample(rng)))
        .collect();
    ParticleSet::uniform(poses)
}

/// Advances every particle with an independent motion-noise draw.
pub fn predict<R: Rng + ?Sized>(
    particles: &mut ParticleSet,
    action: &Action,
    motion_noise: &MotionNoise,
    rng: &mut R,
) {
    for pose in particles.poses.iter_mut() {
        let w = motion_noise.sample(rng);
        *pose = apply_motion(pose, action, &w);
    }
}

fn log_likelihoods(
    particles: &ParticleSet,
    prepared: &PreparedObservation,
    spec: &ObservationModelSpec,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    execution: Execution,
) -> Vec<f64> {
    let eval = |pose: &Pose6D| match prepared.log_likelihood(pose, model, camera, &spec.noise) {
        Ok(l) if !l.is_nan() => l,
        _ => f64::NEG_INFINITY,
    };
    match execution {
        Execution::Sequential => particles.poses.iter().map(eval).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            particles.poses.par_iter().map(eval).collect()
        }
    }
}

/// Multiplies weights by the frame likelihood in log space with a max-shift
/// and returns the log of the normalizer, `ln Σ w_i p(z | x_i)`. Particles
/// whose likelihood cannot be evaluated get weight 0. On
/// [`Error::AllParticlesDegenerate`] the set is left unchanged.
pub fn update_weights_prepared(
    particles: &mut ParticleSet,
    prepared: &PreparedObservation,
    spec: &ObservationModelSpec,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    execution: Execution,
) -> Result<f64> {
    if prepared.is_skip() {
        return Ok(0.0);
    }
    let ll = log_likelihoods(particles, prepared, spec, model, camera, execution);
    let log_w: Vec<f64> = particles
        .weights
        .iter()
        .zip(&ll)
        .map(|(a, l)| {
            if *a > 0.0 {
                a.ln() + l
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllParticlesDegenerate);
    }
    let unnormalized: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnormalized.iter().sum();
    for (w, u) in particles.weights.iter_mut().zip(unnormalized) {
        *w = u / total;
    }
    Ok(max + total.ln())
}

/// Prepares the frame's features then updates the weights.
pub fn update_weights(
    particles: &mut ParticleSet,
    detections: &DetectionSet,
    spec: &ObservationModelSpec,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
    execution: Execution,
) -> Result<f64> {
    let prepared = PreparedObservation::new(spec.variant, model, camera, detections)?;
    update_weights_prepared(particles, &prepared, spec, model, camera, execution)
}

/// Parent index of each offspring, one uniform draw per stratum `[i/N, (i+1)/N)`.
pub fn stratified_indices<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut j = 0;
    for i in 0..n {
        let u = (i as f64 + rng.random::<f64>()) / n as f64;
        while u > cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

/// Stratified resampling; weights reset to `1 / N_s`.
pub fn stratified_resample<R: Rng + ?Sized>(particles: &mut ParticleSet, rng: &mut R) {
    let idx = stratified_indices(&particles.weights, rng);
    particles.poses = idx.iter().map(|&i| particles.poses[i]).collect();
    let w = 1.0 / particles.len() as f64;
    particles.weights.iter_mut().for_each(|x| *x = w);
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub estimate: Pose6D,
    /// Effective count after the weight update, before any resampling.
    pub effective_count: f64,
    pub resampled: bool,
    /// False when the frame carried no usable measurement.
    pub updated: bool,
    /// `ln p(z_t | z_1:t-1)` under the particle approximation; 0 when not updated.
    pub log_evidence: f64,
}

#[derive(Debug, Clone)]
pub struct ParticleFilter {
    config: FilterConfig,
    model: NeedleModel,
    camera: CameraIntrinsics,
    particles: ParticleSet,
    rng: ChaCha8Rng,
}

impl ParticleFilter {
    /// Seeds the stream from `config.seed` and samples the initial set around `p0`.
    pub fn new(
        config: FilterConfig,
        model: NeedleModel,
        camera: CameraIntrinsics,
        p0: &Pose6D,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let particles = sample_initial(p0, &config.initial_noise, config.particles, &mut rng)?;
        Ok(Self {
            config,
            model,
            camera,
            particles,
            rng,
        })
    }

    /// Resamples the initial distribution around `p0`, continuing the same stream.
    pub fn reinitialize(&mut self, p0: &Pose6D) -> Result<()> {
        self.particles = sample_initial(
            p0,
            &self.config.initial_noise,
            self.config.particles,
            &mut self.rng,
        )?;
        Ok(())
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    pub fn estimate(&self) -> Result<Pose6D> {
        self.particles.estimate()
    }

    /// Predict, update, resample when `N_eff` drops below the threshold, then
    /// return the weighted mean. On error the particles keep their predicted
    /// poses and prior weights.
    pub fn step(&mut self, action: &Action, detections: &DetectionSet) -> Result<StepOutput> {
        predict(
            &mut self.particles,
            action,
            &self.config.motion_noise,
            &mut self.rng,
        );
        let spec = &self.config.observation;
        let prepared =
            PreparedObservation::new(spec.variant, &self.model, &self.camera, detections)?;
        let log_evidence = update_weights_prepared(
            &mut self.particles,
            &prepared,
            spec,
            &self.model,
            &self.camera,
            self.config.execution,
        )?;
        let neff = self.particles.effective_count();
        let resampled = neff < self.config.neff_threshold;
        if resampled {
            stratified_resample(&mut self.particles, &mut self.rng);
        }
        Ok(StepOutput {
            estimate: self.particles.estimate()?,
            effective_count: neff,
            resampled,
            updated: !prepared.is_skip(),
            log_evidence,
        })
    }
}

/// Pixel-scale residuals of `pose` against one frame: `x, y` offsets of every
/// labeled landmark, then each body point's ellipse-matching residual divided
/// by its standard deviation at σ̄ = 1 px. `None` when the needle cannot be
/// projected.
pub fn frame_residuals(
    pose: &Pose6D,
    detections: &DetectionSet,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Option<DVector<f64>> {
    let mut r = Vec::with_capacity(2 * detections.labeled.len() + detections.body.len());
    for (label, p) in &detections.labeled {
        let angle = model.landmark_angle(label).ok()?;
        let px = camera
            .project(&pose.transform_point(&model.point_at(angle)))
            .ok()?;
        r.push(p.x - px.x);
        r.push(p.y - px.y);
    }
    if !detections.body.is_empty() {
        let conic = project_circle(pose, model.radius(), camera).ok()?;
        for p in &detections.body {
            let var = em_variance_for_conic(&conic, p, 1.0);
            r.push(conic_residual(&conic, p) / var.sqrt());
        }
    }
    Some(DVector::from_vec(r))
}

/// Perturbs `pose` by `δ = [δb (mm); δq (rad)]`, rotation composed on the left.
fn perturb(pose: &Pose6D, delta: &DVector<f64>) -> Pose6D {
    let w = [
        delta[0] * 1e-3,
        delta[1] * 1e-3,
        delta[2] * 1e-3,
        delta[3],
        delta[4],
        delta[5],
    ];
    apply_motion(pose, &Action::zero(), &w)
}

/// One frame of an initialization window: the action leading into the frame
/// (ignored for the first) and its detections.
pub type WindowFrame<'a> = (&'a Action, &'a DetectionSet);

/// Residuals of every window frame when the first frame has pose `first` and
/// later poses follow the noise-free actions.
fn window_residuals(
    first: &Pose6D,
    window: &[WindowFrame<'_>],
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Option<DVector<f64>> {
    let mut pose = *first;
    let mut out = Vec::new();
    for (k, (action, det)) in window.iter().enumerate() {
        if k > 0 {
            pose = apply_motion(&pose, action, &[0.0; 6]);
        }
        out.extend(frame_residuals(&pose, det, model, camera)?.iter());
    }
    Some(DVector::from_vec(out))
}

/// Levenberg–Marquardt on the window residuals over the first frame's pose,
/// with a forward-difference Jacobian. Returns the refined first-frame pose
/// and its squared residual norm.
pub fn refine_pose(
    start: &Pose6D,
    window: &[WindowFrame<'_>],
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Option<(Pose6D, f64)> {
    const H: f64 = 1e-6;
    let mut pose = *start;
    let mut r = window_residuals(&pose, window, model, camera)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..100 {
        let mut jac = DMatrix::zeros(r.len(), 6);
        for k in 0..6 {
            let mut d = DVector::zeros(6);
            d[k] = H;
            let rk = window_residuals(&perturb(&pose, &d), window, model, camera)?;
            jac.set_column(k, &((rk - &r) / H));
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut improved = false;
        while lambda < 1e10 {
            let mut a = jtj.clone();
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-9);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = perturb(&pose, &step);
            match window_residuals(&candidate, window, model, camera) {
                Some(rc) if rc.norm_squared() < cost => {
                    let gain = cost - rc.norm_squared();
                    pose = candidate;
                    r = rc;
                    cost = r.norm_squared();
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = gain > 1e-12 * cost.max(1.0);
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !improved {
            break;
        }
    }
    Some((pose, cost))
}

/// Both plane candidates of one frame's reconstruction, oriented with the tail
/// (the tip, when present, ranks them).
pub fn reconstruction_candidates(
    detections: &DetectionSet,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Result<[Pose6D; 2]> {
    let coeffs = fit_ellipse(&detections.all_points())?;
    let mut anchors = vec![(detections.get(TAIL)?, model.landmark_angle(TAIL)?)];
    if let (Ok(tip), Ok(angle)) = (detections.get(TIP), model.landmark_angle(TIP)) {
        anchors.push((tip, angle));
    }
    let rec = reconstruct_from_anchors(&coeffs, model.radius(), camera, &anchors)?;
    Ok([rec.pose, rec.alternative])
}

/// Undoes a noise-free [`apply_motion`].
fn unapply_motion(pose: &Pose6D, action: &Action) -> Pose6D {
    let q = quat_from_axis_angle(&action.rotation()).inverse() * pose.quaternion();
    Pose6D::new(
        pose.position - action.translation(),
        axis_angle_from_quat(&q),
    )
}

/// Distinct pose hypotheses for the last window frame, best first, with their
/// squared residual norms. Every frame's two reconstruction candidates are
/// carried back to the first frame through the actions and refined against
/// the whole window; refinements that land within 1 mm and 1° of a better one
/// are dropped.
pub fn initial_hypotheses_from_window(
    window: &[WindowFrame<'_>],
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Result<Vec<(Pose6D, f64)>> {
    if window.is_empty() {
        return Err(Error::Precondition("empty initialization window".into()));
    }
    let mut starts = Vec::with_capacity(2 * window.len());
    let mut first_error = None;
    for (k, (_, det)) in window.iter().enumerate() {
        match reconstruction_candidates(det, model, camera) {
            Ok(candidates) => starts.extend(candidates.iter().map(|p| {
                window[1..=k]
                    .iter()
                    .rev()
                    .fold(*p, |p, (a, _)| unapply_motion(&p, a))
            })),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    if starts.is_empty() {
        return Err(first_error.expect("no candidates implies an error"));
    }
    let mut refined: Vec<(Pose6D, f64)> = starts
        .iter()
        .filter_map(|p| refine_pose(p, window, model, camera))
        .collect();
    refined.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut distinct: Vec<(Pose6D, f64)> = Vec::new();
    for (p, cost) in refined {
        if distinct.iter().all(|(q, _)| {
            let (dp, da) = pose_error(&p, q);
            dp > 1.0 || da > 1.0
        }) {
            distinct.push((p, cost));
        }
    }
    if distinct.is_empty() {
        return Err(Error::NumericalFailure("pose refinement failed".into()));
    }
    Ok(distinct
        .into_iter()
        .map(|(p, cost)| {
            let last = window[1..]
                .iter()
                .fold(p, |p, (a, _)| apply_motion(&p, a, &[0.0; 6]));
            (last, cost)
        })
        .collect())
}

/// Lowest-residual hypothesis of [`initial_hypotheses_from_window`].
pub fn initial_pose_from_window(
    window: &[WindowFrame<'_>],
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Result<Pose6D> {
    Ok(initial_hypotheses_from_window(window, model, camera)?[0].0)
}

/// Single-frame [`initial_pose_from_window`].
pub fn initial_pose_from_detections(
    detections: &DetectionSet,
    model: &NeedleModel,
    camera: &CameraIntrinsics,
) -> Result<Pose6D> {
    let zero = Action::zero();
    initial_pose_from_window(&[(&zero, detections)], model, camera)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{ObservationNoiseConfig, ObservationVariant};
    use nalgebra::Vector3;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn poses(n: usize) -> Vec<Pose6D> {
        (0..n)
            .map(|i| Pose6D::from_arrays([i as f64, 0.0, 0.2], [0.0; 3]))
            .collect()
    }

    #[test]
    fn effective_count_examples() {
        assert!((effective_count(&[0.25; 4]) - 4.0).abs() < 1e-12);
        assert_eq!(effective_count(&[1.0, 0.0, 0.0]), 1.0);
        assert!((effective_count(&[0.5, 0.5, 0.0, 0.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_initial_noise_copies_p0() {
        let p0 = Pose6D::from_arrays([0.01, 0.0, 0.2], [0.1, 0.2, 0.3]);
        let set = sample_initial(&p0, &MotionNoise::zero(), 10, &mut rng(1)).unwrap();
        assert!(set.poses().iter().all(|p| *p == p0));
        assert!(set.weights().iter().all(|w| *w == 0.1));
    }

    #[test]
    fn initial_position_mean_within_clt_bound() {
        let p0 = Pose6D::from_arrays([0.01, -0.02, 0.2], [0.1, 0.2, 0.3]);
        let s = 0.002;
        let noise = MotionNoise::from_std([s, s, s, 0.05, 0.05, 0.05]).unwrap();
        let n = 5000;
        let set = sample_initial(&p0, &noise, n, &mut rng(2)).unwrap();
        let mean = set.poses().iter().map(|p| p.position).sum::<Vector3<f64>>() / n as f64;
        let bound = 4.0 * s / (n as f64).sqrt();
        for k in 0..3 {
            assert!((mean[k] - p0.position[k]).abs() < bound);
        }
    }

    #[test]
    fn predict_without_noise() {
        let mut set = ParticleSet::uniform(poses(4)).unwrap();
        let before = set.clone();
        predict(&mut set, &Action::zero(), &MotionNoise::zero(), &mut rng(3));
        assert_eq!(set, before);
        let a = Action::new(Vector3::new(0.001, 0.0, -0.002), Vector3::zeros());
        predict(&mut set, &a, &MotionNoise::zero(), &mut rng(3));
        for (p, q) in set.poses().iter().zip(before.poses()) {
            assert!((p.position - q.position - a.translation()).norm() < 1e-15);
        }
    }

    #[test]
    fn predict_adds_motion_covariance() {
        let n = 5000;
        let mut set =
            ParticleSet::uniform(vec![Pose6D::from_arrays([0.0, 0.0, 0.2], [0.0; 3]); n]).unwrap();
        let std = [0.001, 0.002, 0.0015, 0.01, 0.01, 0.01];
        predict(
            &mut set,
            &Action::zero(),
            &MotionNoise::from_std(std).unwrap(),
            &mut rng(4),
        );
        for k in 0..3 {
            let xs: Vec<f64> = set.poses().iter().map(|p| p.position[k]).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            let want = std[k] * std[k];
            assert!((var / want - 1.0).abs() < 0.15, "axis {k}: {var} vs {want}");
        }
    }

    #[test]
    fn stratified_examples() {
        let idx = stratified_indices(&[0.25; 4], &mut rng(5));
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let idx = stratified_indices(&[1.0, 0.0, 0.0, 0.0], &mut rng(5));
        assert_eq!(idx, vec![0; 4]);
        let mut w = vec![0.7 / 9.0; 10];
        w[3] = 0.3;
        for seed in 0..500 {
            let idx = stratified_indices(&w, &mut rng(seed));
            let count = idx.iter().filter(|&&i| i == 3).count();
            assert!((2..=4).contains(&count), "count {count}");
        }
    }

    #[test]
    fn resample_resets_weights() {
        let mut set = ParticleSet::with_weights(poses(4), vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        stratified_resample(&mut set, &mut rng(6));
        assert!(set.weights().iter().all(|w| *w == 0.25));
    }

    #[test]
    fn all_behind_camera_is_degenerate() {
        let model = NeedleModel::semicircle(0.0054);
        let camera = CameraIntrinsics::default();
        let behind: Vec<Pose6D> = (0..5)
            .map(|i| Pose6D::from_arrays([0.0, 0.0, -0.1 - i as f64 * 0.01], [0.0; 3]))
            .collect();
        let mut set = ParticleSet::uniform(behind).unwrap();
        let det = DetectionSet::new(0)
            .with_label(TAIL, crate::camera::PixelPoint::new(100.0, 100.0))
            .with_label(TIP, crate::camera::PixelPoint::new(120.0, 100.0))
            .with_body(crate::camera::PixelPoint::new(110.0, 90.0));
        let spec = ObservationModelSpec::new(
            ObservationVariant::TwoPointsEm,
            ObservationNoiseConfig::new(1.0).unwrap(),
        );
        let before = set.clone();
        let r = update_weights(
            &mut set,
            &det,
            &spec,
            &model,
            &camera,
            Execution::Sequential,
        );
        assert_eq!(r, Err(Error::AllParticlesDegenerate));
        assert_eq!(set, before);
    }

    #[test]
    fn config_validation() {
        let spec = ObservationModelSpec::new(
            ObservationVariant::TwoPointsEm,
            ObservationNoiseConfig::new(1.0).unwrap(),
        );
        let mut c = FilterConfig::new(1, MotionNoise::zero(), MotionNoise::zero(), spec, 0);
        assert!(c.validate().is_err());
        c.particles = 100;
        c.neff_threshold = 150.0;
        assert!(c.validate().is_err());
        c.neff_threshold = 50.0;
        assert!(c.validate().is_ok());
    }
}
