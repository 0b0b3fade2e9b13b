use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emg_core::config::SmoothingKind;
use emg_core::dataset::{ingest, load_inputs, write_synthetic, PipelineInput};
use emg_core::featfile::{decode_features, encode_features, read_features};
use emg_core::matcher::{aggregate_layers, project, Activation, Aggregation, FeatureStack, FrameMatrix, Projector, ScoreTrack, SquashMode};
use emg_core::metrics::EvalReport;
use emg_core::pipeline::{run_boundary_baseline, run_pipeline, sweep, sweep_csv, train_on_inputs, SweepAxis};
use emg_core::segmenter::{extract, ExtractionConfig, Fallback};
use emg_core::sgfilter::{smooth, EdgeMode, SgKernel};
use emg_core::synth::{generate, ScenarioConfig};
use emg_core::trainer::matching_loss;
use emg_core::{LabelVector, RunConfig};

fn random_stack(rng: &mut ChaCha8Rng, l: usize, t: usize, d: usize) -> FeatureStack {
    let data = (0..l * t * d).map(|_| rng.random_range(-4.0f32..4.0)).collect();
    FeatureStack::new(l, t, d, data, 2.0).unwrap()
}

#[test]
fn feature_file_round_trip_against_independent_writer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let stack = random_stack(&mut rng, 2, 5, 3);
    let mut bytes = b"EMG-FEAT v1 2 5 3\n".to_vec();
    for l in 0..2 {
        for t in 0..5 {
            for d in 0..3 {
                let bits = stack.get(l, t, d).to_bits();
                bytes.extend_from_slice(&[bits as u8, (bits >> 8) as u8, (bits >> 16) as u8, (bits >> 24) as u8]);
            }
        }
    }
    assert_eq!(encode_features(&stack), bytes);
    let back = decode_features(&bytes, 2.0, std::path::Path::new("mem")).unwrap();
    assert_eq!(back, stack);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.emgf");
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(read_features(&path, 2.0).unwrap(), stack);
}

#[test]
fn aggregation_matches_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for l in 1..=4 {
        let stack = random_stack(&mut rng, l, 6, 5);
        let avg = aggregate_layers(&stack, Aggregation::Average);
        let max = aggregate_layers(&stack, Aggregation::Max);
        let med = aggregate_layers(&stack, Aggregation::Median);
        for t in 0..6 {
            for d in 0..5 {
                let mut col: Vec<f64> = (0..l).map(|i| stack.get(i, t, d) as f64).collect();
                let mean = col.iter().sum::<f64>() / l as f64;
                assert!((avg.row(t)[d] - mean).abs() <= 1e-12);
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                assert_eq!(max.row(t)[d], col[l - 1]);
                let m = if l % 2 == 1 { col[l / 2] } else { (col[l / 2 - 1] + col[l / 2]) / 2.0 };
                assert_eq!(med.row(t)[d], m);
            }
        }
    }
}

#[test]
fn single_layer_aggregations_tie() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let stack = random_stack(&mut rng, 1, 7, 4);
    let a = aggregate_layers(&stack, Aggregation::Average);
    assert_eq!(a, aggregate_layers(&stack, Aggregation::Max));
    assert_eq!(a, aggregate_layers(&stack, Aggregation::Median));
}

#[test]
fn projector_matches_matmul_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 4;
    let mut p = Projector::identity(d, Activation::Tanh);
    for w in p.w1.iter_mut().chain(p.w2.iter_mut()).chain(p.b1.iter_mut()).chain(p.b2.iter_mut()) {
        *w = rng.random_range(-1.0..1.0);
    }
    let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let out = project(&FrameMatrix::from_rows(&rows).unwrap(), &p).unwrap();
    for (r, x) in rows.iter().enumerate() {
        let h: Vec<f64> = (0..d)
            .map(|i| ((0..d).map(|j| p.w1[i * d + j] * x[j]).sum::<f64>() + p.b1[i]).tanh())
            .collect();
        for i in 0..d {
            let y = (0..d).map(|j| p.w2[i * d + j] * h[j]).sum::<f64>() + p.b2[i];
            assert!((out.row(r)[i] - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn loss_is_non_negative_for_squashed_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let t = rng.random_range(1..20);
        let scores = (0..t).map(|_| rng.random_range(1e-6..=1.0)).collect();
        let labels = LabelVector {
            values: (0..t).map(|_| rng.random_range(0.0..=1.0)).collect(),
            fps: 1.0,
            alpha: 2.0,
        };
        assert!(matching_loss(&ScoreTrack::new(scores, 1.0), &labels).unwrap() >= 0.0);
    }
}

fn inputs(cfg: &ScenarioConfig) -> Vec<PipelineInput> {
    generate(cfg).unwrap().iter().map(PipelineInput::from_synthetic).collect()
}

fn raw_cfg(sigma: f64) -> RunConfig {
    RunConfig {
        squash: SquashMode::None,
        sigma,
        ..RunConfig::default()
    }
}

#[test]
fn separable_scenario_is_solved_by_both_methods() {
    let scenario = ScenarioConfig {
        boundary_strength: 1.5,
        ..ScenarioConfig::clean(9)
    };
    let ins = inputs(&scenario);
    let cfg = RunConfig {
        smoothing: SmoothingKind::None,
        ..raw_cfg(0.5)
    };
    let out = run_pipeline(&ins, &cfg, None).unwrap();
    assert_eq!(out.report.miou, 1.0);
    let base = run_boundary_baseline(&ins, &cfg).unwrap();
    assert_eq!(EvalReport::compute(&base, &cfg.metric_options()).miou, 1.0);
}

#[test]
fn distractors_hurt_the_baseline_more() {
    let full = ScenarioConfig::boundary_distractors(20240607);
    let plain = ScenarioConfig {
        distractor_spacing: 0,
        ..full.clone()
    };
    let cfg = raw_cfg(0.35);
    let score = |s: &ScenarioConfig| {
        let ins = inputs(s);
        let em = run_pipeline(&ins, &cfg, None).unwrap().report.miou;
        let base = run_boundary_baseline(&ins, &cfg).unwrap();
        (em, EvalReport::compute(&base, &cfg.metric_options()).miou)
    };
    let (em_plain, base_plain) = score(&plain);
    let (em_full, base_full) = score(&full);
    assert!(
        em_plain - em_full < base_plain - base_full,
        "matching {em_plain} -> {em_full}, baseline {base_plain} -> {base_full}"
    );
}

#[test]
fn files_round_trip_and_runs_are_deterministic() {
    let scenario = ScenarioConfig {
        num_videos: 12,
        ..ScenarioConfig::boundary_distractors(4)
    };
    let videos = generate(&scenario).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = write_synthetic(dir.path(), &videos).unwrap();
    let records = ingest(&path).unwrap();
    let loaded = load_inputs(records.clone(), dir.path()).unwrap();
    let direct = inputs(&scenario);
    for (a, b) in loaded.iter().zip(&direct) {
        assert_eq!(a.record, b.record);
        assert_eq!(a.features, b.features);
    }
    let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);

    let mut cfg = raw_cfg(0.35);
    cfg.train.epochs = 5;
    let t1 = train_on_inputs(&loaded, &cfg).unwrap();
    let t2 = train_on_inputs(&loaded, &cfg).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(t1.loss_curve.len(), 6);
    let r1 = run_pipeline(&loaded, &cfg, Some(&t1.model)).unwrap();
    let r2 = run_pipeline(&loaded, &cfg, Some(&t2.model)).unwrap();
    assert_eq!(r1.report.to_json(), r2.report.to_json());
    assert_eq!(r1.predictions_jsonl(), r2.predictions_jsonl());
}

#[test]
fn unsmoothed_raw_pipeline_is_plain_extraction() {
    let ins = inputs(&ScenarioConfig {
        noise_scale: 0.5,
        num_videos: 10,
        ..ScenarioConfig::clean(5)
    });
    let cfg = RunConfig {
        smoothing: SmoothingKind::None,
        ..raw_cfg(0.4)
    };
    let out = run_pipeline(&ins, &cfg, None).unwrap();
    for (input, pred) in ins.iter().zip(&out.predictions) {
        let stack = input.features.as_ref().unwrap();
        let frames = aggregate_layers(stack, Aggregation::Average);
        let track = emg_core::matcher::cosine_track(input.record.event_embedding.as_ref().unwrap(), &frames, stack.fps()).unwrap();
        let direct = extract(&track, &cfg.extraction());
        let got: Vec<_> = pred.segments.iter().map(|s| s.segment).collect();
        assert_eq!(got, direct.as_slice());
    }
}

#[test]
fn smoothing_a_polynomial_track_keeps_interior_segments() {
    // quadratic bump, above σ well away from both ends
    let n = 60;
    let scores: Vec<f64> = (0..n)
        .map(|t| {
            let u = (t as f64 - 30.0) / 10.0;
            0.9 - 0.2 * u * u
        })
        .collect();
    let track = ScoreTrack::new(scores, 1.0);
    let cfg = ExtractionConfig {
        sigma: 0.44,
        fallback: Fallback::None,
        ..ExtractionConfig::default()
    };
    let smoothed = smooth(&track, &SgKernel::new(5, 2).unwrap(), EdgeMode::Mirror);
    assert_eq!(extract(&smoothed, &cfg), extract(&track, &cfg));
}

#[test]
fn sigma_sweep_over_seven_values() {
    let ins = inputs(&ScenarioConfig {
        num_videos: 30,
        ..ScenarioConfig::noisy(2)
    });
    let values: Vec<String> = ["1e-4", "8e-5", "5e-5", "3e-5", "1e-5", "8e-6", "5e-6"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let cfg = RunConfig {
        squash: SquashMode::Softmax,
        ..RunConfig::default()
    };
    let rows = sweep(&ins, &cfg, SweepAxis::Sigma, &values, None).unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(sweep_csv(&rows).lines().count(), 8);

    // coverage only grows as σ falls
    let mut last = 0.0;
    let mut sigmas: Vec<f64> = values.iter().map(|v| v.parse().unwrap()).collect();
    sigmas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let tracks = emg_core::pipeline::raw_tracks(&ins, &cfg, None).unwrap();
    for s in sigmas {
        let ex = ExtractionConfig {
            sigma: s,
            fallback: Fallback::None,
            ..ExtractionConfig::default()
        };
        let total: f64 = tracks
            .iter()
            .map(|t| extract(&cfg.smoother().apply(t).unwrap(), &ex).total_duration())
            .sum();
        assert!(total >= last);
        last = total;
    }
}

#[test]
fn alpha_sweep_retrains() {
    let ins = inputs(&ScenarioConfig {
        num_videos: 6,
        ..ScenarioConfig::boundary_distractors(8)
    });
    let mut cfg = raw_cfg(0.35);
    cfg.train.epochs = 3;
    let rows = sweep(&ins, &cfg, SweepAxis::Alpha, &["1".into(), "2".into()], None).unwrap();
    assert_eq!(rows.len(), 2);
    let mut seen = BTreeMap::new();
    for r in &rows {
        seen.insert(r.value.clone(), r.report.miou);
    }
    assert_eq!(seen.len(), 2);
}
