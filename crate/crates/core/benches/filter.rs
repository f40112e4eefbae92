use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use needle_track::config::ExperimentConfig;
use needle_track::filter::{Execution, ParticleFilter};
use needle_track::observation::ObservationVariant;
use needle_track::simulator::{simulate, Motion, NoiseSpec};

fn step(c: &mut Criterion) {
    let mut config = ExperimentConfig::default();
    config.trajectory.steps = 2;
    let model = config.needle_model().unwrap();
    let camera = config.camera_intrinsics().unwrap();
    let frames = simulate(
        &config.trajectory_spec(Motion::Static),
        &model,
        &camera,
        &NoiseSpec::new(1.0, 1),
    )
    .unwrap();

    #[allow(unused_mut)]
    let mut modes = vec![("sequential", Execution::Sequential)];
    #[cfg(feature = "parallel")]
    modes.push(("parallel", Execution::Parallel));

    let mut group = c.benchmark_group("step_5000");
    for variant in [
        ObservationVariant::TwoPointsEm,
        ObservationVariant::TwoPointsEp,
    ] {
        for &(name, execution) in &modes {
            let mut fc = config.filter_config(variant, 1.0).unwrap();
            fc.execution = execution;
            let mut filter =
                ParticleFilter::new(fc, model.clone(), camera, &frames[0].truth).unwrap();
            group.bench_function(BenchmarkId::new(variant.name(), name), |b| {
                b.iter(|| {
                    filter
                        .step(&frames[1].action, &frames[1].detections)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

criterion_group!(benches, step);
criterion_main!(benches);
