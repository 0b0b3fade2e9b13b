use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::json;

use emg_core::analysis::{
    ablation_csv, aggregation_ablation, buckets_csv, length_bucketed_miou, smoothing_ablation, taxonomy_report,
};
use emg_core::dataset::{ingest, load_inputs, write_synthetic};
use emg_core::pipeline::{run_boundary_baseline, sweep, sweep_csv, train_on_inputs};
use emg_core::segmenter::{best_segment, extract_scored};
use emg_core::sgfilter::derive_kernel;
use emg_core::synth::{generate, ScenarioConfig};
use emg_core::{
    run_pipeline, Aggregation, PipelineInput, RunConfig, ScoreTrack, Smoother, ToyModel,
};

use crate::args::*;
use crate::InputError;

/// Defaults, then the config file, then flags; validated at the end.
pub fn resolve_config(path: Option<&Path>, flags: &RunFlags) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            RunConfig::from_toml_str(&text).with_context(|| format!("config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    flags.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

pub fn sg_kernel(half_window: usize, order: usize) -> anyhow::Result<()> {
    let kernel = derive_kernel(half_window, order)?;
    let mut out = io::stdout().lock();
    for c in kernel.coefficients() {
        writeln!(out, "{c:.16e}")?;
    }
    Ok(())
}

pub fn gen_synth(a: &GenSynthArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let seed = match (a.seed, config) {
        (Some(s), _) => s,
        (None, Some(_)) => resolve_config(config, &RunFlags::default())?.seed,
        (None, None) => 0,
    };
    let mut sc = match a.scenario {
        Scenario::Clean => ScenarioConfig::clean(seed),
        Scenario::BoundaryDistractors => ScenarioConfig::boundary_distractors(seed),
        Scenario::Noisy => ScenarioConfig::noisy(seed),
    };
    if let Some(n) = a.num_videos {
        sc.num_videos = n;
    }
    if let Some(l) = a.layers {
        sc.layers = l;
    }
    if let Some(d) = a.dim {
        sc.dim = d;
    }
    if let Some(f) = a.fps {
        sc.fps = f;
    }
    if let Some(s) = a.noise_scale {
        sc.noise_scale = s;
    }
    let videos = generate(&sc)?;
    let path = write_synthetic(&a.out, &videos)?;
    eprintln!("wrote {} records to {}", videos.len(), path.display());
    Ok(())
}

fn load_dataset(path: &Path) -> anyhow::Result<Vec<PipelineInput>> {
    let records = ingest(path)?;
    if records.is_empty() {
        bail!(InputError::new(format!("{}: no records", path.display())));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(load_inputs(records, base)?)
}

fn load_model(path: Option<&PathBuf>) -> anyhow::Result<Option<ToyModel>> {
    let Some(p) = path else { return Ok(None) };
    let text = fs::read_to_string(p).with_context(|| format!("reading params {}", p.display()))?;
    let model: ToyModel = serde_json::from_str(&text).with_context(|| format!("params {}", p.display()))?;
    model.validate().with_context(|| format!("params {}", p.display()))?;
    Ok(Some(model))
}

fn write_file(path: &Path, content: &str) -> anyhow::Result<()> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

pub fn train_toy(a: &TrainArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let mut cfg = resolve_config(config, &a.run)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(n) = a.init_noise {
        cfg.train.init_noise = n;
    }
    if let Some(act) = a.activation {
        cfg.train.activation = act.into();
    }
    if let Some(s) = a.train_squash {
        cfg.train.squash = s;
    }
    if let Some(t) = a.train_temperature {
        cfg.train.temperature = t;
    }
    cfg.validate()?;
    let inputs = load_dataset(&a.dataset)?;
    let outcome = train_on_inputs(&inputs, &cfg)?;
    let params = serde_json::to_string_pretty(&outcome.model)?;
    write_file(&a.out, &params)?;
    if let Some(p) = &a.loss_curve {
        write_file(p, &outcome.loss_curve_csv())?;
    }
    if let (Some(first), Some(last)) = (outcome.loss_curve.first(), outcome.loss_curve.last()) {
        eprintln!("loss {first:.6} -> {last:.6} after {} epochs", cfg.train.epochs);
    }
    Ok(())
}

fn read_scores(path: &Path) -> anyhow::Result<Vec<f64>> {
    let text = if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        s
    } else {
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?
    };
    let mut scores = Vec::new();
    for tok in text.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
        let v: f64 = tok
            .parse()
            .map_err(|_| InputError::new(format!("{}: `{tok}` is not a number", path.display())))?;
        if !v.is_finite() {
            bail!(InputError::new(format!("{}: non-finite score `{tok}`", path.display())));
        }
        scores.push(v);
    }
    if scores.is_empty() {
        bail!(InputError::new(format!("{}: no scores", path.display())));
    }
    Ok(scores)
}

fn check_fps(fps: f64) -> anyhow::Result<()> {
    if !(fps.is_finite() && fps > 0.0) {
        bail!(InputError::new(format!("fps must be positive, got {fps}")));
    }
    Ok(())
}

fn emit(out: Option<&PathBuf>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => write_file(p, content),
        None => Ok(io::stdout().lock().write_all(content.as_bytes())?),
    }
}

pub fn smooth(a: &TrackArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg = resolve_config(config, &a.run)?;
    check_fps(a.fps)?;
    let track = ScoreTrack::new(read_scores(&a.scores)?, a.fps);
    let smoothed = cfg.smoother().apply(&track)?;
    let text: String = smoothed.scores().iter().map(|v| format!("{v:.16e}\n")).collect();
    emit(a.out.as_ref(), &text)
}

pub fn extract(a: &ExtractArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let t = &a.track;
    let cfg = resolve_config(config, &t.run)?;
    check_fps(t.fps)?;
    let mut track = ScoreTrack::new(read_scores(&t.scores)?, t.fps);
    if a.smooth {
        track = cfg.smoother().apply(&track)?;
    }
    let segments = extract_scored(&track, &cfg.extraction());
    let doc = json!({
        "segments": segments,
        "best": best_segment(&segments),
    });
    emit(t.out.as_ref(), &format!("{}\n", serde_json::to_string_pretty(&doc)?))
}

pub fn eval(a: &EvalArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg = resolve_config(config, &a.run)?;
    let inputs = load_dataset(&a.data.dataset)?;
    let model = load_model(a.data.params.as_ref())?;
    let out = run_pipeline(&inputs, &cfg, model.as_ref())?;
    let json = out.report.to_json();
    if let Some(p) = &a.report {
        write_file(p, &json)?;
    }
    if let Some(p) = &a.predictions {
        write_file(p, &out.predictions_jsonl())?;
    }
    match a.format {
        OutputFormat::Table => print!("{}", out.report.to_table()),
        OutputFormat::Json => println!("{json}"),
    }
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg = resolve_config(config, &a.run)?;
    let inputs = load_dataset(&a.data.dataset)?;
    let model = load_model(a.data.params.as_ref())?;

    if let Some(kind) = a.ablation {
        let rows = match kind {
            Ablation::Smoothing => {
                let strategies: Vec<Smoother> = if a.strategies.is_empty() {
                    vec![
                        Smoother::None,
                        Smoother::MovingAverage { window: 5 },
                        Smoother::Exponential { window: 5 },
                        cfg.smoother(),
                    ]
                } else {
                    a.strategies
                        .iter()
                        .map(|s| s.parse().map_err(|e| InputError::new(format!("{e}"))))
                        .collect::<Result<_, _>>()?
                };
                smoothing_ablation(&inputs, &strategies, &cfg, model.as_ref())?
            }
            Ablation::Aggregation => {
                let strategies: Vec<Aggregation> = if a.strategies.is_empty() {
                    Aggregation::ALL.to_vec()
                } else {
                    a.strategies
                        .iter()
                        .map(|s| s.parse().map_err(|e| InputError::new(format!("{e}"))))
                        .collect::<Result<_, _>>()?
                };
                aggregation_ablation(&inputs, &strategies, &cfg, model.as_ref())?
            }
        };
        let csv = ablation_csv(&rows);
        match &a.ablation_out {
            Some(p) => write_file(p, &csv)?,
            None => print!("{csv}"),
        }
        return Ok(());
    }

    let records = if a.baseline {
        run_boundary_baseline(&inputs, &cfg)?
    } else {
        run_pipeline(&inputs, &cfg, model.as_ref())?.records
    };
    let taxonomy = taxonomy_report(&records).to_csv();
    let buckets = buckets_csv(&length_bucketed_miou(&records, &a.bucket_edges)?);
    if let Some(p) = &a.taxonomy_out {
        write_file(p, &taxonomy)?;
    }
    if let Some(p) = &a.buckets_out {
        write_file(p, &buckets)?;
    }
    print!("{taxonomy}\n{buckets}");
    Ok(())
}

pub fn run_sweep(a: &SweepArgs, config: Option<&Path>) -> anyhow::Result<()> {
    let cfg = resolve_config(config, &a.run)?;
    let inputs = load_dataset(&a.data.dataset)?;
    let model = load_model(a.data.params.as_ref())?;
    let rows = sweep(&inputs, &cfg, a.axis.into(), &a.values, model.as_ref())?;
    emit(a.out.as_ref(), &sweep_csv(&rows))
}
