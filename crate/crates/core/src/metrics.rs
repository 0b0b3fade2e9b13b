//! Grounding metrics: temporal IoU, R@τ, mIoU, segment F1, mAP, HIT@1.
//!
//! Zero-length ground truths (highlight timestamps) do not take part in
//! IoU-based metrics; they are scored through [`hit_at_1`] only.
//!
//! Aggregates add their terms in sorted order so results do not depend on
//! record order, bit for bit.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Segment;
use crate::matcher::argmax;
use crate::segmenter::{best_index, ScoredSegment, SegmentSet};

/// Version tag written into every serialized report.
pub const REPORT_FORMAT: &str = "emg-report v1";

pub const RECALL_THRESHOLDS: [f64; 3] = [0.3, 0.5, 0.7];

/// `0.5, 0.55, …, 0.95`.
pub fn default_map_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Length of intersection over length of union.
///
/// Two identical points score 1; a point against anything else scores 0.
pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    if a.is_point() || b.is_point() {
        return if a == b { 1.0 } else { 0.0 };
    }
    let inter = (a.end().min(b.end()) - a.start().max(b.start())).max(0.0);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.duration() + b.duration() - inter;
    (inter / union).min(1.0)
}

/// Order-independent mean: terms are summed in ascending order.
pub(crate) fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Predictions and ground truth for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub predictions: Vec<ScoredSegment>,
    pub ground_truth: SegmentSet,
    /// Predicted per-clip saliency, typically the smoothed track.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_scores: Option<Vec<f64>>,
    /// Annotated per-clip saliency.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<Vec<f64>>,
}

impl EvalRecord {
    pub fn new(query_id: impl Into<String>, predictions: Vec<ScoredSegment>, ground_truth: SegmentSet) -> Self {
        EvalRecord {
            query_id: query_id.into(),
            predictions,
            ground_truth,
            clip_scores: None,
            saliency: None,
        }
    }

    /// Highest-confidence prediction (ties: earlier start, then longer).
    pub fn best_prediction(&self) -> Option<Segment> {
        best_index(&self.predictions).map(|i| self.predictions[i].segment)
    }

    /// Ground-truth intervals of non-zero length.
    pub fn interval_gt(&self) -> Vec<Segment> {
        self.ground_truth.iter().filter(|s| !s.is_point()).copied().collect()
    }

    /// IoU of the best prediction against the closest interval ground
    /// truth; `None` when the record has no interval ground truth, `0`
    /// when it has no prediction.
    pub fn best_iou(&self) -> Option<f64> {
        let gts = self.interval_gt();
        if gts.is_empty() {
            return None;
        }
        let Some(pred) = self.best_prediction() else {
            return Some(0.0);
        };
        Some(gts.iter().map(|g| temporal_iou(&pred, g)).fold(0.0, f64::max))
    }
}

/// Fraction of records whose best prediction reaches `threshold` IoU with
/// the record's single ground truth.
pub fn recall_at(records: &[EvalRecord], threshold: f64) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for r in records {
        let gts = r.interval_gt();
        if gts.len() > 1 {
            return Err(Error::Metric(format!(
                "record {} has {} ground-truth segments; R@τ needs exactly one",
                r.query_id,
                gts.len()
            )));
        }
        if let Some(iou) = r.best_iou() {
            total += 1;
            if iou >= threshold {
                hits += 1;
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// Mean best-prediction IoU; records without a prediction count as 0.
pub fn mean_iou(records: &[EvalRecord]) -> f64 {
    let ious: Vec<f64> = records.iter().filter_map(EvalRecord::best_iou).collect();
    stable_mean(&ious)
}

/// One-to-one greedy matching: pairs in descending IoU order, each side
/// used once, only pairs reaching `threshold`. Returns the match count.
pub fn greedy_match_count(preds: &[Segment], gts: &[Segment], threshold: f64) -> usize {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let iou = temporal_iou(p, g);
            if iou >= threshold && iou > 0.0 {
                pairs.push((iou, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut matches = 0;
    for (_, i, j) in pairs {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            matches += 1;
        }
    }
    matches
}

/// F1 of one record under greedy matching.
pub fn record_f1(preds: &[Segment], gts: &[Segment], threshold: f64) -> f64 {
    let m = greedy_match_count(preds, gts, threshold);
    if m == 0 {
        return 0.0;
    }
    let precision = m as f64 / preds.len() as f64;
    let recall = m as f64 / gts.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Mean per-record F1 over records with interval ground truth.
pub fn segment_f1(records: &[EvalRecord], iou_threshold: f64) -> f64 {
    let f1s: Vec<f64> = records
        .iter()
        .filter_map(|r| {
            let gts = r.interval_gt();
            if gts.is_empty() {
                return None;
            }
            let preds: Vec<Segment> = r.predictions.iter().map(|p| p.segment).collect();
            Some(record_f1(&preds, &gts, iou_threshold))
        })
        .collect();
    stable_mean(&f1s)
}

/// Detection AP of one record's predictions at one IoU threshold, with the
/// all-point interpolated precision envelope.
pub fn average_precision(preds: &[ScoredSegment], gts: &[Segment], threshold: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .confidence
            .total_cmp(&preds[a].confidence)
            .then(preds[a].segment.start().total_cmp(&preds[b].segment.start()))
            .then(a.cmp(&b))
    });

    let mut gt_used = vec![false; gts.len()];
    let mut is_tp = Vec::with_capacity(order.len());
    for &i in &order {
        let p = &preds[i].segment;
        let best = gts
            .iter()
            .enumerate()
            .filter(|(j, _)| !gt_used[*j])
            .map(|(j, g)| (j, temporal_iou(p, g)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        match best {
            Some((j, iou)) if iou >= threshold && iou > 0.0 => {
                gt_used[j] = true;
                is_tp.push(true);
            }
            _ => is_tp.push(false),
        }
    }

    let mut precision = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (k, &hit) in is_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let n_gt = gts.len() as f64;
    is_tp
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p / n_gt)
        .sum()
}

/// AP averaged over records, then over IoU thresholds.
pub fn map_over_thresholds(records: &[EvalRecord], thresholds: &[f64]) -> f64 {
    let eligible: Vec<(&EvalRecord, Vec<Segment>)> = records
        .iter()
        .map(|r| (r, r.interval_gt()))
        .filter(|(_, g)| !g.is_empty())
        .collect();
    let per_threshold: Vec<f64> = thresholds
        .iter()
        .map(|&t| {
            let aps: Vec<f64> = eligible
                .iter()
                .map(|(r, g)| average_precision(&r.predictions, g, t))
                .collect();
            stable_mean(&aps)
        })
        .collect();
    // thresholds are few and ordered by the caller; plain mean keeps the
    // result independent of record order
    if per_threshold.is_empty() {
        0.0
    } else {
        per_threshold.iter().sum::<f64>() / per_threshold.len() as f64
    }
}

/// Fraction of records whose top-scored clip has annotated saliency of at
/// least `saliency_threshold`.
pub fn hit_at_1(records: &[EvalRecord], saliency_threshold: f64) -> Result<f64> {
    if records.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for r in records {
        let (Some(pred), Some(gt)) = (&r.clip_scores, &r.saliency) else {
            return Err(Error::Metric(format!(
                "record {} lacks clip scores or saliency labels",
                r.query_id
            )));
        };
        if pred.len() != gt.len() {
            return Err(Error::Metric(format!(
                "record {}: {} clip scores vs {} saliency labels",
                r.query_id,
                pred.len(),
                gt.len()
            )));
        }
        if let Some(top) = argmax(pred) {
            if gt[top] >= saliency_threshold {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / records.len() as f64)
}

/// Settings shared by every metric in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub f1_iou_threshold: f64,
    pub map_thresholds: Vec<f64>,
    pub saliency_threshold: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            f1_iou_threshold: 0.5,
            map_thresholds: default_map_thresholds(),
            saliency_threshold: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    #[serde(rename = "R@0.3")]
    pub r03: f64,
    #[serde(rename = "R@0.5")]
    pub r05: f64,
    #[serde(rename = "R@0.7")]
    pub r07: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordIou {
    pub query_id: String,
    pub iou: f64,
}

/// All metrics for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub num_records: usize,
    /// Records with interval ground truth.
    pub iou_records: usize,
    /// Records with at least one prediction.
    pub with_prediction: usize,
    /// Absent when some record has several ground-truth segments.
    pub recall: Option<RecallReport>,
    pub miou: f64,
    pub f1: f64,
    pub f1_iou_threshold: f64,
    pub map: f64,
    pub hit_at_1: Option<f64>,
    pub per_record_iou: Vec<RecordIou>,
}

impl EvalReport {
    pub fn compute(records: &[EvalRecord], opts: &MetricOptions) -> Self {
        let recall = match (
            recall_at(records, RECALL_THRESHOLDS[0]),
            recall_at(records, RECALL_THRESHOLDS[1]),
            recall_at(records, RECALL_THRESHOLDS[2]),
        ) {
            (Ok(r03), Ok(r05), Ok(r07)) => Some(RecallReport { r03, r05, r07 }),
            _ => None,
        };
        let salient: Vec<EvalRecord> = records
            .iter()
            .filter(|r| r.saliency.is_some() && r.clip_scores.is_some())
            .cloned()
            .collect();
        let hit = if salient.is_empty() {
            None
        } else {
            hit_at_1(&salient, opts.saliency_threshold).ok()
        };
        let per_record_iou = records
            .iter()
            .filter_map(|r| {
                r.best_iou().map(|iou| RecordIou {
                    query_id: r.query_id.clone(),
                    iou,
                })
            })
            .collect::<Vec<_>>();
        EvalReport {
            format: REPORT_FORMAT.to_owned(),
            num_records: records.len(),
            iou_records: per_record_iou.len(),
            with_prediction: records.iter().filter(|r| !r.predictions.is_empty()).count(),
            recall,
            miou: mean_iou(records),
            f1: segment_f1(records, opts.f1_iou_threshold),
            f1_iou_threshold: opts.f1_iou_threshold,
            map: map_over_thresholds(records, &opts.map_thresholds),
            hit_at_1: hit,
            per_record_iou,
        }
    }

    /// Machine-readable form: pretty-printed JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned two-column table of the headline numbers.
    pub fn to_table(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let mut rows: Vec<(&str, String)> = vec![
            ("records", self.num_records.to_string()),
            ("iou records", self.iou_records.to_string()),
            ("with prediction", self.with_prediction.to_string()),
        ];
        match &self.recall {
            Some(r) => {
                rows.push(("R@0.3", pct(r.r03)));
                rows.push(("R@0.5", pct(r.r05)));
                rows.push(("R@0.7", pct(r.r07)));
            }
            None => rows.push(("R@τ", "n/a (multi-segment)".into())),
        }
        rows.push(("mIoU", pct(self.miou)));
        rows.push(("F1", pct(self.f1)));
        rows.push(("mAP", pct(self.map)));
        rows.push((
            "HIT@1",
            self.hit_at_1.map_or_else(|| "n/a".into(), pct),
        ));
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let mut out = format!("# {}\n", self.format);
        for (k, v) in rows {
            let pad = width - k.chars().count();
            let _ = writeln!(out, "{k}{}  {v:>8}", " ".repeat(pad));
        }
        out
    }
}
