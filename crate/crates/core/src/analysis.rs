//! Diagnostics: error taxonomy, length-bucketed mIoU, and smoothing /
//! aggregation ablations.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::PipelineInput;
use crate::error::{Error, Result};
use crate::labels::Segment;
use crate::matcher::{Aggregation, ScoreTrack};
use crate::metrics::{stable_mean, temporal_iou, EvalRecord, EvalReport};
use crate::pipeline::{evaluate_tracks, raw_tracks};
use crate::sgfilter::{smooth, EdgeMode, SgKernel};
use crate::trainer::ToyModel;

const EXACT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    NoOverlap,
    PredInsideGT,
    GTInsidePred,
    PartialOverlap,
    Exact,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::NoOverlap,
        ErrorCategory::PredInsideGT,
        ErrorCategory::GTInsidePred,
        ErrorCategory::PartialOverlap,
        ErrorCategory::Exact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::NoOverlap => "no_overlap",
            ErrorCategory::PredInsideGT => "pred_inside_gt",
            ErrorCategory::GTInsidePred => "gt_inside_pred",
            ErrorCategory::PartialOverlap => "partial_overlap",
            ErrorCategory::Exact => "exact",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn classify_error(pred: &Segment, gt: &Segment) -> ErrorCategory {
    let iou = temporal_iou(pred, gt);
    if iou <= 0.0 {
        return ErrorCategory::NoOverlap;
    }
    if iou >= 1.0 - EXACT_TOL {
        return ErrorCategory::Exact;
    }
    let pred_in = pred.start() >= gt.start() && pred.end() <= gt.end();
    let gt_in = gt.start() >= pred.start() && gt.end() <= pred.end();
    match (pred_in, gt_in) {
        (true, false) => ErrorCategory::PredInsideGT,
        (false, true) => ErrorCategory::GTInsidePred,
        _ => ErrorCategory::PartialOverlap,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub category: ErrorCategory,
    pub count: usize,
    /// `None` when the category is empty.
    pub miou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyReport {
    pub total: usize,
    pub categories: Vec<CategoryStat>,
}

impl TaxonomyReport {
    pub fn count(&self, c: ErrorCategory) -> usize {
        self.categories[c.index()].count
    }

    pub fn miou(&self, c: ErrorCategory) -> Option<f64> {
        self.categories[c.index()].miou
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,count,miou\n");
        for s in &self.categories {
            out.push_str(&format!("{},{},{}\n", s.category, s.count, fmt_opt(s.miou)));
        }
        out
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

/// The ground truth the best prediction is judged against: the interval
/// GT with the highest IoU (first on ties).
fn matched_pair(r: &EvalRecord) -> Option<(Option<Segment>, Segment)> {
    let gts = r.interval_gt();
    let first = *gts.first()?;
    let Some(pred) = r.best_prediction() else {
        return Some((None, first));
    };
    let mut best = first;
    let mut best_iou = temporal_iou(&pred, &first);
    for g in &gts[1..] {
        let iou = temporal_iou(&pred, g);
        if iou > best_iou {
            best = *g;
            best_iou = iou;
        }
    }
    Some((Some(pred), best))
}

/// Classifies the best prediction of every record with interval ground
/// truth. A record without any prediction counts as `NoOverlap`.
pub fn taxonomy_report(records: &[EvalRecord]) -> TaxonomyReport {
    let mut ious: Vec<Vec<f64>> = vec![Vec::new(); ErrorCategory::ALL.len()];
    let mut total = 0;
    for r in records {
        let Some((pred, gt)) = matched_pair(r) else {
            continue;
        };
        total += 1;
        let (cat, iou) = match pred {
            None => (ErrorCategory::NoOverlap, 0.0),
            Some(p) => {
                let c = classify_error(&p, &gt);
                let iou = if c == ErrorCategory::NoOverlap {
                    0.0
                } else {
                    temporal_iou(&p, &gt)
                };
                (c, iou)
            }
        };
        ious[cat.index()].push(iou);
    }
    let categories = ErrorCategory::ALL
        .iter()
        .map(|&category| {
            let v = &ious[category.index()];
            CategoryStat {
                category,
                count: v.len(),
                miou: (!v.is_empty()).then(|| stable_mean(v)),
            }
        })
        .collect();
    TaxonomyReport { total, categories }
}

pub fn default_bucket_edges() -> Vec<f64> {
    vec![0.0, 5.0, 10.0, 20.0, 40.0, f64::INFINITY]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub low: f64,
    pub high: f64,
    pub count: usize,
    /// `None` for an empty bucket.
    pub miou: Option<f64>,
}

/// Groups records by ground-truth duration into half-open buckets
/// `[edges[i], edges[i+1])` and reports the mean IoU of each. Records
/// outside every bucket are ignored.
pub fn length_bucketed_miou(records: &[EvalRecord], edges: &[f64]) -> Result<Vec<BucketStat>> {
    if edges.len() < 2 {
        return Err(Error::Config("need at least two bucket edges".into()));
    }
    if edges.iter().any(|e| e.is_nan()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("bucket edges must be strictly increasing: {edges:?}")));
    }
    let mut ious: Vec<Vec<f64>> = vec![Vec::new(); edges.len() - 1];
    for r in records {
        let Some((pred, gt)) = matched_pair(r) else {
            continue;
        };
        let d = gt.duration();
        if let Some(b) = edges.windows(2).position(|w| d >= w[0] && d < w[1]) {
            ious[b].push(pred.map_or(0.0, |p| temporal_iou(&p, &gt)));
        }
    }
    Ok(edges
        .windows(2)
        .zip(&ious)
        .map(|(w, v)| BucketStat {
            low: w[0],
            high: w[1],
            count: v.len(),
            miou: (!v.is_empty()).then(|| stable_mean(v)),
        })
        .collect())
}

pub fn buckets_csv(buckets: &[BucketStat]) -> String {
    let mut out = String::from("bucket_low,bucket_high,count,miou\n");
    for b in buckets {
        out.push_str(&format!("{},{},{},{}\n", b.low, b.high, b.count, fmt_opt(b.miou)));
    }
    out
}

/// A score-track smoothing strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoother {
    None,
    /// Centred uniform window of `window` frames, shrunk at the edges.
    MovingAverage { window: usize },
    /// `y[t] = a·x[t] + (1-a)·y[t-1]`, `a = 2/(window+1)`, `y[0] = x[0]`.
    Exponential { window: usize },
    SavitzkyGolay {
        half_window: usize,
        order: usize,
        edge_mode: EdgeMode,
    },
}

impl Smoother {
    pub fn apply(&self, track: &ScoreTrack) -> Result<ScoreTrack> {
        let x = track.scores();
        Ok(match *self {
            Smoother::None => track.clone(),
            Smoother::MovingAverage { window } => track.with_scores(moving_average(x, window)?),
            Smoother::Exponential { window } => track.with_scores(exponential(x, window)?),
            Smoother::SavitzkyGolay {
                half_window,
                order,
                edge_mode,
            } => smooth(track, &SgKernel::new(half_window, order)?, edge_mode),
        })
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Smoother {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoother::None => write!(f, "none"),
            Smoother::MovingAverage { window } => write!(f, "ma:{window}"),
            Smoother::Exponential { window } => write!(f, "ema:{window}"),
            Smoother::SavitzkyGolay {
                half_window,
                order,
                edge_mode: EdgeMode::Mirror,
            } => write!(f, "sg:{half_window}:{order}"),
            Smoother::SavitzkyGolay {
                half_window,
                order,
                edge_mode,
            } => write!(f, "sg:{half_window}:{order}:{}", edge_mode.name()),
        }
    }
}

/// Parses `none`, `ma:W`, `ema:W`, `sg:K:P` or `sg:K:P:EDGE`.
impl FromStr for Smoother {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown smoother `{s}` (expected none, ma:W, ema:W or sg:K:P[:edge])"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |p: &str| p.parse::<usize>().map_err(|_| bad());
        let sm = match parts.as_slice() {
            ["none"] => Smoother::None,
            ["ma", w] => Smoother::MovingAverage { window: num(w)? },
            ["ema", w] => Smoother::Exponential { window: num(w)? },
            ["sg", k, p] => Smoother::SavitzkyGolay {
                half_window: num(k)?,
                order: num(p)?,
                edge_mode: EdgeMode::Mirror,
            },
            ["sg", k, p, e] => Smoother::SavitzkyGolay {
                half_window: num(k)?,
                order: num(p)?,
                edge_mode: e.parse()?,
            },
            _ => return Err(bad()),
        };
        if let Smoother::MovingAverage { window: 0 } | Smoother::Exponential { window: 0 } = sm {
            return Err(Error::Config(format!("smoother `{s}`: window must be >= 1")));
        }
        if let Smoother::SavitzkyGolay { half_window, order, .. } = sm {
            SgKernel::new(half_window, order)?;
        }
        Ok(sm)
    }
}

pub fn moving_average(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("moving-average window must be >= 1".into()));
    }
    let before = (window - 1) / 2;
    let after = window / 2;
    let n = x.len();
    Ok((0..n)
        .map(|t| {
            let lo = t.saturating_sub(before);
            let hi = (t + after).min(n - 1);
            x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect())
}

pub fn exponential(x: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Config("exponential window must be >= 1".into()));
    }
    let a = 2.0 / (window as f64 + 1.0);
    let mut out = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for (t, &v) in x.iter().enumerate() {
        prev = if t == 0 { v } else { a * v + (1.0 - a) * prev };
        out.push(prev);
    }
    Ok(out)
}

/// One labelled result of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: String,
    pub report: EvalReport,
}

/// Runs extraction and metrics once per smoothing strategy over the same
/// raw tracks.
pub fn smoothing_ablation(
    inputs: &[PipelineInput],
    strategies: &[Smoother],
    cfg: &RunConfig,
    model: Option<&ToyModel>,
) -> Result<Vec<AblationRow>> {
    let tracks = raw_tracks(inputs, cfg, model)?;
    strategies
        .par_iter()
        .map(|s| {
            let out = evaluate_tracks(inputs, &tracks, s, cfg)?;
            Ok(AblationRow {
                strategy: s.label(),
                report: out.report,
            })
        })
        .collect()
}

/// Runs the full pipeline once per layer-aggregation strategy.
pub fn aggregation_ablation(
    inputs: &[PipelineInput],
    strategies: &[Aggregation],
    cfg: &RunConfig,
    model: Option<&ToyModel>,
) -> Result<Vec<AblationRow>> {
    strategies
        .par_iter()
        .map(|&a| {
            let c = RunConfig {
                aggregation: a,
                ..cfg.clone()
            };
            let tracks = raw_tracks(inputs, &c, model)?;
            let out = evaluate_tracks(inputs, &tracks, &c.smoother(), &c)?;
            Ok(AblationRow {
                strategy: a.name().to_owned(),
                report: out.report,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("strategy,r_at_0.5,miou,f1,map\n");
    for r in rows {
        let r05 = r.report.recall.as_ref().map(|x| x.r05);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.strategy,
            fmt_opt(r05),
            r.report.miou,
            r.report.f1,
            r.report.map
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenter::{ScoredSegment, SegmentSet};

    fn seg(a: f64, b: f64) -> Segment {
        Segment::new(a, b).unwrap()
    }

    fn record(pred: Option<(f64, f64)>, gt: (f64, f64)) -> EvalRecord {
        let preds = pred
            .map(|(a, b)| {
                vec![ScoredSegment {
                    segment: seg(a, b),
                    confidence: 1.0,
                }]
            })
            .unwrap_or_default();
        EvalRecord::new("q", preds, SegmentSet::single(seg(gt.0, gt.1)))
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_error(&seg(2.0, 4.0), &seg(6.0, 9.0)), ErrorCategory::NoOverlap);
        assert_eq!(classify_error(&seg(6.0, 8.0), &seg(5.0, 10.0)), ErrorCategory::PredInsideGT);
        assert_eq!(classify_error(&seg(4.0, 8.0), &seg(6.0, 10.0)), ErrorCategory::PartialOverlap);
        assert_eq!(classify_error(&seg(5.0, 10.0), &seg(6.0, 8.0)), ErrorCategory::GTInsidePred);
        assert_eq!(classify_error(&seg(5.0, 10.0), &seg(5.0, 10.0)), ErrorCategory::Exact);
        // touching endpoints share no length
        assert_eq!(classify_error(&seg(2.0, 4.0), &seg(4.0, 9.0)), ErrorCategory::NoOverlap);
        // shared start, shorter prediction
        assert_eq!(classify_error(&seg(5.0, 8.0), &seg(5.0, 10.0)), ErrorCategory::PredInsideGT);
    }

    #[test]
    fn hand_built_taxonomy() {
        let recs = vec![
            record(Some((2.0, 4.0)), (6.0, 9.0)),
            record(Some((6.0, 8.0)), (5.0, 10.0)),
            record(Some((4.0, 8.0)), (6.0, 10.0)),
            record(Some((0.0, 10.0)), (2.0, 3.0)),
            record(Some((1.0, 2.0)), (1.0, 2.0)),
            record(None, (1.0, 2.0)),
        ];
        let t = taxonomy_report(&recs);
        assert_eq!(t.total, 6);
        assert_eq!(t.count(ErrorCategory::NoOverlap), 2);
        assert_eq!(t.count(ErrorCategory::PredInsideGT), 1);
        assert_eq!(t.count(ErrorCategory::PartialOverlap), 1);
        assert_eq!(t.count(ErrorCategory::GTInsidePred), 1);
        assert_eq!(t.count(ErrorCategory::Exact), 1);
        assert_eq!(t.miou(ErrorCategory::NoOverlap), Some(0.0));
        assert_eq!(t.miou(ErrorCategory::PredInsideGT), Some(0.4));
        assert_eq!(t.miou(ErrorCategory::GTInsidePred), Some(0.1));
        assert!(t.to_csv().starts_with("category,count,miou\nno_overlap,2,0\n"));
    }

    #[test]
    fn all_exact() {
        let recs: Vec<_> = (0..4).map(|i| record(Some((i as f64, 5.0 + i as f64)), (i as f64, 5.0 + i as f64))).collect();
        let t = taxonomy_report(&recs);
        assert_eq!(t.count(ErrorCategory::Exact), 4);
        assert_eq!(t.categories.iter().map(|c| c.count).sum::<usize>(), 4);
        assert_eq!(t.miou(ErrorCategory::NoOverlap), None);
    }

    #[test]
    fn buckets() {
        let recs = vec![
            record(Some((0.0, 2.0)), (0.0, 4.0)),
            record(Some((0.0, 6.0)), (0.0, 6.0)),
            record(Some((0.0, 30.0)), (0.0, 15.0)),
        ];
        let b = length_bucketed_miou(&recs, &[0.0, f64::INFINITY]).unwrap();
        assert_eq!(b[0].count, 3);
        assert_eq!(b[0].miou, Some(stable_mean(&[0.5, 1.0, 0.5])));

        let b = length_bucketed_miou(&recs, &default_bucket_edges()).unwrap();
        let counts: Vec<_> = b.iter().map(|s| s.count).collect();
        assert_eq!(counts, vec![1, 1, 1, 0, 0]);
        assert_eq!(b[3].miou, None);
        let csv = buckets_csv(&b);
        assert!(csv.contains("20,40,0,NA\n") && csv.contains("40,inf,0,NA\n"), "{csv}");

        assert!(length_bucketed_miou(&recs, &[0.0, 5.0, 5.0]).is_err());
        assert!(length_bucketed_miou(&recs, &[0.0]).is_err());
    }

    #[test]
    fn smoother_parsing() {
        for s in ["none", "ma:5", "ema:3", "sg:5:2", "sg:2:2:shrink"] {
            assert_eq!(s.parse::<Smoother>().unwrap().label(), s);
        }
        for s in ["", "ma", "ma:0", "sg:1:3", "box:3", "sg:2:2:wrap"] {
            assert!(s.parse::<Smoother>().is_err(), "{s}");
        }
    }

    #[test]
    fn window_one_is_identity() {
        let x = [0.3, 0.9, 0.1, 0.7];
        assert_eq!(moving_average(&x, 1).unwrap(), x);
        assert_eq!(exponential(&x, 1).unwrap(), x);
    }

    #[test]
    fn moving_average_and_exponential_values() {
        let x = [3.0, 0.0, 0.0, 6.0];
        assert_eq!(moving_average(&x, 3).unwrap(), vec![1.5, 1.0, 2.0, 3.0]);
        // a = 0.5
        assert_eq!(exponential(&x, 3).unwrap(), vec![3.0, 1.5, 0.75, 3.375]);
        // even window leans forward by one frame
        assert_eq!(moving_average(&x, 2).unwrap(), vec![1.5, 0.0, 3.0, 6.0]);
    }
}
