//! End-to-end runs: score tracks, smooth, extract, evaluate.
//!
//! Every per-record stage is a rayon map collected in input order, so the
//! results do not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::Smoother;
use crate::config::{RunConfig, SmoothingKind};
use crate::dataset::PipelineInput;
use crate::error::{Error, Result};
use crate::labels::{build_labels_from_seconds, Segment};
use crate::matcher::{aggregate_layers, aggregate_layers_masked, cosine_track, squash_track, FrameMatrix, ScoreTrack};
use crate::metrics::{EvalRecord, EvalReport};
use crate::segmenter::{extract_scored, highlight_peaks, Highlight, ScoredSegment};
use crate::trainer::{boundary_baseline, train, ToyModel, TrainOutcome, TrainingExample};

/// Pipeline output for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPrediction {
    pub query_id: String,
    pub video_id: String,
    pub segments: Vec<ScoredSegment>,
    pub best: Option<Segment>,
    pub highlights: Vec<Highlight>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub report: EvalReport,
    pub predictions: Vec<QueryPrediction>,
    pub records: Vec<EvalRecord>,
}

impl PipelineOutput {
    /// Predictions as JSON Lines, one query per line.
    pub fn predictions_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.predictions {
            out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
            out.push('\n');
        }
        out
    }
}

fn frames_of(input: &PipelineInput, cfg: &RunConfig) -> Result<Option<FrameMatrix>> {
    let Some(stack) = &input.features else {
        return Ok(None);
    };
    Ok(Some(match &cfg.layer_mask {
        Some(mask) => aggregate_layers_masked(stack, cfg.aggregation, mask)?,
        None => aggregate_layers(stack, cfg.aggregation),
    }))
}

/// Squashed, unsmoothed score track of one record.
///
/// Inline scores are used as they are. Feature records are aggregated
/// over layers and matched against the query's event embedding, through
/// the model's projectors when a model is given.
pub fn score_track(input: &PipelineInput, cfg: &RunConfig, model: Option<&ToyModel>) -> Result<ScoreTrack> {
    let rec = &input.record;
    let raw = match frames_of(input, cfg)? {
        None => {
            let scores = rec
                .scores
                .clone()
                .ok_or_else(|| Error::Config("record has neither scores nor features".into()))?;
            ScoreTrack::new(scores, rec.fps)
        }
        Some(frames) => {
            let trained = model.and_then(|m| m.event_embeddings.get(&rec.query_id));
            let event = trained
                .or(rec.event_embedding.as_ref())
                .ok_or_else(|| Error::Config("feature record needs an event_embedding".into()))?;
            match model {
                Some(m) => m.cosine_track(event, &frames, rec.fps)?,
                None => cosine_track(event, &frames, rec.fps)?,
            }
        }
    };
    Ok(squash_track(&raw, cfg.squash, cfg.temperature))
}

/// [`score_track`] for every input, in order.
pub fn raw_tracks(inputs: &[PipelineInput], cfg: &RunConfig, model: Option<&ToyModel>) -> Result<Vec<ScoreTrack>> {
    inputs
        .par_iter()
        .map(|i| score_track(i, cfg, model).map_err(|e| e.in_query(&i.record.query_id)))
        .collect()
}

/// Smooths the given tracks, extracts segments and computes metrics.
pub fn evaluate_tracks(
    inputs: &[PipelineInput],
    tracks: &[ScoreTrack],
    smoother: &Smoother,
    cfg: &RunConfig,
) -> Result<PipelineOutput> {
    if inputs.len() != tracks.len() {
        return Err(Error::Shape {
            expected: inputs.len(),
            actual: tracks.len(),
            context: "score tracks vs inputs",
        });
    }
    let extraction = cfg.extraction();
    extraction.validate()?;
    let per: Vec<(EvalRecord, QueryPrediction)> = inputs
        .par_iter()
        .zip(tracks)
        .map(|(input, track)| {
            let rec = &input.record;
            let wrap = |e: Error| e.in_query(&rec.query_id);
            let smoothed = smoother.apply(track).map_err(wrap)?;
            if let Some(v) = smoothed.scores().iter().find(|v| !v.is_finite()) {
                return Err(wrap(Error::NonFinite {
                    value: *v,
                    context: "smoothed score".into(),
                }));
            }
            let segments = extract_scored(&smoothed, &extraction);
            let mut eval = EvalRecord::new(rec.query_id.clone(), segments.clone(), rec.gt_set().map_err(wrap)?);
            if let Some(s) = &rec.saliency {
                eval.saliency = Some(s.iter().map(|&v| v as f64).collect());
                eval.clip_scores = Some(smoothed.scores().to_vec());
            }
            let pred = QueryPrediction {
                query_id: rec.query_id.clone(),
                video_id: rec.video_id.clone(),
                best: eval.best_prediction(),
                segments,
                highlights: highlight_peaks(&smoothed, cfg.highlight_count),
            };
            Ok((eval, pred))
        })
        .collect::<Result<_>>()?;
    let (records, predictions): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(PipelineOutput {
        report: EvalReport::compute(&records, &cfg.metric_options()),
        predictions,
        records,
    })
}

/// aggregate → project → cosine → squash → smooth → extract → metrics.
pub fn run_pipeline(inputs: &[PipelineInput], cfg: &RunConfig, model: Option<&ToyModel>) -> Result<PipelineOutput> {
    cfg.validate()?;
    let tracks = raw_tracks(inputs, cfg, model)?;
    evaluate_tracks(inputs, &tracks, &cfg.smoother(), cfg)
}

/// Two-token boundary matching on every record. Records need features
/// plus start and end embeddings.
pub fn run_boundary_baseline(inputs: &[PipelineInput], cfg: &RunConfig) -> Result<Vec<EvalRecord>> {
    inputs
        .par_iter()
        .map(|input| {
            let rec = &input.record;
            let wrap = |e: Error| e.in_query(&rec.query_id);
            let frames = frames_of(input, cfg)
                .map_err(wrap)?
                .ok_or_else(|| wrap(Error::Config("boundary baseline needs features".into())))?;
            let (Some(s), Some(e)) = (&rec.start_embedding, &rec.end_embedding) else {
                return Err(wrap(Error::Config(
                    "boundary baseline needs start_embedding and end_embedding".into(),
                )));
            };
            let seg = boundary_baseline(s, e, &frames, rec.fps).map_err(wrap)?;
            let pred = ScoredSegment {
                segment: seg,
                confidence: 1.0,
            };
            Ok(EvalRecord::new(rec.query_id.clone(), vec![pred], rec.gt_set().map_err(wrap)?))
        })
        .collect()
}

/// Training examples from feature records, with labels from the
/// ground-truth segments, plus the initial event embeddings.
pub fn training_examples(
    inputs: &[PipelineInput],
    cfg: &RunConfig,
) -> Result<(Vec<TrainingExample>, BTreeMap<String, Vec<f64>>)> {
    let labels = cfg.label_config();
    let built: Vec<(TrainingExample, Vec<f64>)> = inputs
        .par_iter()
        .map(|input| {
            let rec = &input.record;
            let wrap = |e: Error| e.in_query(&rec.query_id);
            let frames = frames_of(input, cfg)
                .map_err(wrap)?
                .ok_or_else(|| wrap(Error::Config("training needs feature records".into())))?;
            let emb = rec
                .event_embedding
                .clone()
                .ok_or_else(|| wrap(Error::Config("training needs an event_embedding".into())))?;
            let gt = rec.gt_set().map_err(wrap)?;
            let y = build_labels_from_seconds(gt.as_slice(), rec.num_frames, rec.fps, labels).map_err(wrap)?;
            Ok((
                TrainingExample {
                    query_id: rec.query_id.clone(),
                    frames,
                    labels: y,
                },
                emb,
            ))
        })
        .collect::<Result<_>>()?;
    let mut embeddings = BTreeMap::new();
    let mut examples = Vec::with_capacity(built.len());
    for (ex, emb) in built {
        embeddings.insert(ex.query_id.clone(), emb);
        examples.push(ex);
    }
    Ok((examples, embeddings))
}

/// Initializes a toy model from the inputs and trains it.
pub fn train_on_inputs(inputs: &[PipelineInput], cfg: &RunConfig) -> Result<TrainOutcome> {
    let tc = cfg.train_config();
    let (examples, embeddings) = training_examples(inputs, cfg)?;
    let dim = examples
        .first()
        .map(|e| e.frames.cols())
        .ok_or_else(|| Error::Config("no training records".into()))?;
    let model = ToyModel::init(dim, embeddings, tc.activation, tc.init_noise, tc.seed)?;
    train(model, &examples, &tc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Sigma,
    Alpha,
    K,
    Smoothing,
    Aggregation,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Sigma => "sigma",
            SweepAxis::Alpha => "alpha",
            SweepAxis::K => "k",
            SweepAxis::Smoothing => "smoothing",
            SweepAxis::Aggregation => "aggregation",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepAxis::Sigma),
            "alpha" => Ok(SweepAxis::Alpha),
            "k" => Ok(SweepAxis::K),
            "smoothing" => Ok(SweepAxis::Smoothing),
            "aggregation" => Ok(SweepAxis::Aggregation),
            other => Err(Error::Config(format!(
                "unknown sweep axis `{other}` (expected sigma, alpha, k, smoothing or aggregation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub report: EvalReport,
}

fn parse_num<T: FromStr>(axis: SweepAxis, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("sweep {axis}: bad value `{v}`")))
}

/// One pipeline run per value of `axis`, everything else fixed.
///
/// Sweeping `alpha` retrains the toy model for every value, since the
/// label shape only matters through training. Other axes reuse `model`.
pub fn sweep(
    inputs: &[PipelineInput],
    cfg: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    model: Option<&ToyModel>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let mut c = cfg.clone();
        let out = match axis {
            SweepAxis::Sigma => {
                c.sigma = parse_num(axis, v)?;
                run_pipeline(inputs, &c, model)?
            }
            SweepAxis::Alpha => {
                c.alpha = parse_num(axis, v)?;
                c.validate()?;
                let trained = train_on_inputs(inputs, &c)?;
                run_pipeline(inputs, &c, Some(&trained.model))?
            }
            SweepAxis::K => {
                c.sg_half_window = parse_num(axis, v)?;
                c.smoothing = SmoothingKind::SavitzkyGolay;
                run_pipeline(inputs, &c, model)?
            }
            SweepAxis::Smoothing => {
                let s: Smoother = v.parse()?;
                c.validate()?;
                let tracks = raw_tracks(inputs, &c, model)?;
                evaluate_tracks(inputs, &tracks, &s, &c)?
            }
            SweepAxis::Aggregation => {
                c.aggregation = v.parse()?;
                run_pipeline(inputs, &c, model)?
            }
        };
        rows.push(SweepRow {
            axis,
            value: v.trim().to_owned(),
            report: out.report,
        });
    }
    Ok(rows)
}

/// `axis,value,r_at_0.5,miou,f1`; recall is empty when undefined.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("axis,value,r_at_0.5,miou,f1\n");
    for r in rows {
        let r05 = r.report.recall.as_ref().map_or(String::new(), |x| x.r05.to_string());
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.axis, r.value, r05, r.report.miou, r.report.f1
        ));
    }
    out
}
