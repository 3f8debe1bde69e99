use criterion::{black_box, criterion_group, criterion_main, Criterion};
use dishscan::cnn::{Architecture, CnnModel, Tensor};
use dishscan::ellipses::fit_ellipse;
use dishscan::pipeline::{detect, PipelineConfig};
use dishscan::synth::{random_spec, render, Palette, SceneRanges};
use dishscan::{Ellipse, Point};

fn detection(c: &mut Criterion) {
    let palette = Palette::default();
    let truth = render(&random_spec(1, &SceneRanges::default(), &palette), &palette).unwrap();
    let cfg = PipelineConfig::default();
    let mut group = c.benchmark_group("detect");
    group.sample_size(20);
    group.bench_function("synthetic tower", |b| b.iter(|| detect(black_box(&truth.image), &cfg, 1).unwrap()));
    group.finish();
}

fn fitting(c: &mut Criterion) {
    let e = Ellipse::new(400.0, 300.0, 150.0, 50.0, 0.05);
    let pts: Vec<Point> = (0..200).map(|i| e.point_at(i as f64 * 0.02)).collect();
    c.bench_function("fit 200 points", |b| b.iter(|| fit_ellipse(black_box(&pts)).unwrap()));
}

fn classification(c: &mut Criterion) {
    let model = CnnModel::new(&Architecture::default(), 1).unwrap();
    let x = Tensor::zeros(model.input_shape());
    c.bench_function("cnn forward", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));
}

criterion_group!(benches, detection, fitting, classification);
criterion_main!(benches);
