use needle_track::camera::CameraIntrinsics;
use needle_track::needle::NeedleModel;
use needle_track::observation::{
    combined_log_likelihood, em_log_likelihood, ObservationModelSpec, ObservationNoiseConfig,
    ObservationVariant,
};
use needle_track::pose::Pose6D;
use needle_track::simulator::{random_visible_pose, render_detections, NoiseSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn true_pose_outscores_depth_displacement() {
    let camera = CameraIntrinsics::default();
    let model = NeedleModel::semicircle(0.0054);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = NoiseSpec::new(0.0, 0);
    for _ in 0..100 {
        let pose = random_visible_pose(&mut rng, &camera, &model);
        let det = render_detections(0, &pose, &model, &camera, &noise, &mut rng).unwrap();
        let ray = pose.position.normalize();
        let moved = Pose6D::new(pose.position + ray * 0.005, pose.orientation);
        let points = det.all_points();
        let at_truth = em_log_likelihood(&pose, &model, &camera, &points, 1.0).unwrap();
        let displaced = em_log_likelihood(&moved, &model, &camera, &points, 1.0).unwrap();
        assert!(at_truth >= displaced, "{at_truth} < {displaced}");
        // FPS registers body points at fixed arc fractions, so the truth is
        // not its optimum when body points fall elsewhere on the arc.
        for variant in [
            ObservationVariant::OnePointEp,
            ObservationVariant::TwoPointsEp,
            ObservationVariant::OnePointEm,
            ObservationVariant::TwoPointsEm,
        ] {
            let spec =
                ObservationModelSpec::new(variant, ObservationNoiseConfig::new(1.0).unwrap());
            let a = combined_log_likelihood(&spec, &pose, &model, &camera, &det).unwrap();
            let b = combined_log_likelihood(&spec, &moved, &model, &camera, &det).unwrap();
            assert!(a >= b, "{variant}: {a} < {b}");
        }
    }
}
