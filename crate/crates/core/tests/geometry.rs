use nalgebra::Vector3;
use needle_track::camera::CameraIntrinsics;
use needle_track::circle::{project_circle, reconstruct_from_anchors};
use needle_track::conic::conic_residual;
use needle_track::needle::{project_landmark, LandmarkRef, NeedleModel, TAIL, TIP};
use needle_track::pose::pose_error;
use needle_track::simulator::random_visible_pose;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn reconstruct_inverts_project_over_random_poses() {
    let camera = CameraIntrinsics::default();
    let model = NeedleModel::semicircle(0.0054);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let pose = random_visible_pose(&mut rng, &camera, &model);
        let conic = project_circle(&pose, model.radius(), &camera).unwrap();
        let tail = project_landmark(&pose, &model, LandmarkRef::Label(TAIL), &camera).unwrap();
        let tip = project_landmark(&pose, &model, LandmarkRef::Label(TIP), &camera).unwrap();
        let rec = reconstruct_from_anchors(
            &conic,
            model.radius(),
            &camera,
            &[(tail, 0.0), (tip, model.arc_extent())],
        )
        .unwrap();
        let (dp, da) = pose_error(&rec.pose, &pose);
        worst = (worst.0.max(dp), worst.1.max(da));
    }
    assert!(worst.0 < 0.1, "position error {} mm", worst.0);
    assert!(worst.1 < 0.01, "orientation error {} deg", worst.1);
}

#[test]
fn projected_arc_points_lie_on_the_conic() {
    let camera = CameraIntrinsics::default();
    let model = NeedleModel::semicircle(0.0054);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let pose = random_visible_pose(&mut rng, &camera, &model);
        let conic = project_circle(&pose, model.radius(), &camera).unwrap();
        for i in 0..=16 {
            let angle = model.arc_extent() * i as f64 / 16.0;
            let px = project_landmark(&pose, &model, LandmarkRef::Angle(angle), &camera).unwrap();
            assert!(conic_residual(&conic, &px).abs() < 1e-9);
        }
    }
}

#[test]
fn random_poses_face_away_from_camera() {
    let camera = CameraIntrinsics::default();
    let model = NeedleModel::semicircle(0.0054);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let pose = random_visible_pose(&mut rng, &camera, &model);
        let normal = pose.rotation() * Vector3::z();
        assert!(normal.dot(&pose.position) > 0.0);
    }
}
