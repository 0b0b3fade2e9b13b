use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use emg_core::dataset::PipelineInput;
use emg_core::metrics::EvalReport;
use emg_core::segmenter::extract_scored;
use emg_core::sgfilter::{derive_kernel, smooth};
use emg_core::synth::{generate, ScenarioConfig};
use emg_core::{run_pipeline, EdgeMode, RunConfig, ScoreTrack, SquashMode};

fn wavy_track(n: usize) -> ScoreTrack {
    let scores = (0..n).map(|t| 0.5 + 0.4 * (t as f64 * 0.05).sin() + 0.1 * (t as f64 * 1.7).cos()).collect();
    ScoreTrack::new(scores, 1.0)
}

fn bench_kernel(c: &mut Criterion) {
    let mut g = c.benchmark_group("sg_kernel");
    for k in [5usize, 25, 100] {
        g.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| b.iter(|| derive_kernel(black_box(k), 2)));
    }
    g.finish();
}

fn bench_smooth(c: &mut Criterion) {
    let kernel = derive_kernel(5, 2).unwrap();
    let mut g = c.benchmark_group("smooth");
    for n in [1_000usize, 100_000] {
        let track = wavy_track(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &track, |b, t| {
            b.iter(|| smooth(black_box(t), &kernel, EdgeMode::Mirror))
        });
    }
    g.finish();
}

fn bench_extract(c: &mut Criterion) {
    let track = wavy_track(100_000);
    let cfg = RunConfig { sigma: 0.6, ..RunConfig::default() }.extraction();
    c.bench_function("extract_100k", |b| b.iter(|| extract_scored(black_box(&track), &cfg)));
}

fn inputs(n: usize) -> Vec<PipelineInput> {
    let sc = ScenarioConfig { num_videos: n, ..ScenarioConfig::boundary_distractors(7) };
    generate(&sc).unwrap().iter().map(PipelineInput::from_synthetic).collect()
}

fn bench_pipeline(c: &mut Criterion) {
    let inputs = inputs(200);
    let cfg = RunConfig { sigma: 0.35, squash: SquashMode::None, ..RunConfig::default() };
    c.bench_function("pipeline_200_videos", |b| b.iter(|| run_pipeline(black_box(&inputs), &cfg, None).unwrap()));

    let out = run_pipeline(&inputs, &cfg, None).unwrap();
    let opts = cfg.metric_options();
    c.bench_function("metrics_200_records", |b| b.iter(|| EvalReport::compute(black_box(&out.records), &opts)));
}

criterion_group!(benches, bench_kernel, bench_smooth, bench_extract, bench_pipeline);
criterion_main!(benches);
