//! Threshold segment extraction from score tracks.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{frames_to_seconds, seconds_to_frames, FrameSpan, Segment};
use crate::matcher::ScoreTrack;

/// Sorted, pairwise non-overlapping segments. Touching endpoints are
/// allowed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct SegmentSet(Vec<Segment>);

impl SegmentSet {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for w in segments.windows(2) {
            if w[1].start() < w[0].start() {
                return Err(Error::SegmentSet("segments not sorted by start".into()));
            }
            if w[1].start() < w[0].end() {
                return Err(Error::SegmentSet(format!(
                    "segments ({}, {}) and ({}, {}) overlap",
                    w[0].start(),
                    w[0].end(),
                    w[1].start(),
                    w[1].end()
                )));
            }
        }
        Ok(SegmentSet(segments))
    }

    /// Sorts first, then validates.
    pub fn from_unsorted(mut segments: Vec<Segment>) -> Result<Self> {
        segments.sort_by(|a, b| a.start().total_cmp(&b.start()).then(a.end().total_cmp(&b.end())));
        SegmentSet::new(segments)
    }

    pub fn empty() -> Self {
        SegmentSet(Vec::new())
    }

    pub fn single(seg: Segment) -> Self {
        SegmentSet(vec![seg])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Segment> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[Segment] {
        &self.0
    }

    pub fn total_duration(&self) -> f64 {
        self.0.iter().map(Segment::duration).sum()
    }
}

impl TryFrom<Vec<Segment>> for SegmentSet {
    type Error = Error;

    fn try_from(v: Vec<Segment>) -> Result<Self> {
        SegmentSet::new(v)
    }
}

impl From<SegmentSet> for Vec<Segment> {
    fn from(s: SegmentSet) -> Self {
        s.0
    }
}

impl<'a> IntoIterator for &'a SegmentSet {
    type Item = &'a Segment;
    type IntoIter = std::slice::Iter<'a, Segment>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// What to emit when no frame clears the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fallback {
    /// One frame at the track's argmax.
    #[default]
    Peak,
    /// Nothing ("strict" mode).
    None,
}

impl std::str::FromStr for Fallback {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "peak" => Ok(Fallback::Peak),
            "none" | "strict" => Ok(Fallback::None),
            other => Err(Error::Config(format!("unknown fallback `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Frames with score strictly above this belong to a segment.
    pub sigma: f64,
    /// Segments shorter than this many seconds are dropped.
    pub min_duration: f64,
    pub fallback: Fallback,
    /// Runs separated by at most this many sub-threshold frames are merged.
    pub merge_gap: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            sigma: 1e-5,
            min_duration: 0.0,
            fallback: Fallback::Peak,
            merge_gap: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be finite, got {}", self.sigma)));
        }
        if !(self.min_duration >= 0.0) {
            return Err(Error::Config(format!(
                "min_duration must be >= 0, got {}",
                self.min_duration
            )));
        }
        Ok(())
    }
}

/// A predicted segment with its mean track score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub segment: Segment,
    pub confidence: f64,
}

/// Frame spans selected by the threshold rule, before conversion to
/// seconds.
pub fn extract_spans(track: &ScoreTrack, cfg: &ExtractionConfig) -> Vec<FrameSpan> {
    let scores = track.scores();
    let mut runs: Vec<FrameSpan> = Vec::new();
    let mut open: Option<usize> = None;
    for (t, &s) in scores.iter().enumerate() {
        match (s > cfg.sigma, open) {
            (true, None) => open = Some(t),
            (false, Some(a)) => {
                runs.push(FrameSpan::new(a, t - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(a) = open {
        runs.push(FrameSpan::new(a, scores.len() - 1));
    }

    let mut merged: Vec<FrameSpan> = Vec::with_capacity(runs.len());
    for run in runs {
        match merged.last_mut() {
            Some(prev) if run.start - prev.end - 1 <= cfg.merge_gap => prev.end = run.end,
            _ => merged.push(run),
        }
    }

    let fps = track.fps();
    merged.retain(|span| frames_to_seconds(span.start, span.end, fps).duration() >= cfg.min_duration);

    if merged.is_empty() && cfg.fallback == Fallback::Peak {
        if let Some(peak) = track.argmax() {
            merged.push(FrameSpan::new(peak, peak));
        }
    }
    merged
}

/// Maximal runs of frames scoring above `sigma`, as segments in seconds.
pub fn extract(track: &ScoreTrack, cfg: &ExtractionConfig) -> SegmentSet {
    let segments = extract_spans(track, cfg)
        .into_iter()
        .map(|s| frames_to_seconds(s.start, s.end, track.fps()))
        .collect();
    SegmentSet(segments)
}

/// [`extract`] plus each segment's mean score as confidence.
pub fn extract_scored(track: &ScoreTrack, cfg: &ExtractionConfig) -> Vec<ScoredSegment> {
    extract_spans(track, cfg)
        .into_iter()
        .map(|s| ScoredSegment {
            segment: frames_to_seconds(s.start, s.end, track.fps()),
            confidence: span_mean(track.scores(), s),
        })
        .collect()
}

fn span_mean(scores: &[f64], span: FrameSpan) -> f64 {
    scores[span.start..=span.end].iter().sum::<f64>() / span.len() as f64
}

/// Mean track score over the frames a segment covers.
pub fn segment_score(seg: &Segment, track: &ScoreTrack) -> f64 {
    if track.is_empty() {
        return 0.0;
    }
    span_mean(track.scores(), seconds_to_frames(*seg, track.fps(), track.len()))
}

/// Ordering used to pick one segment: higher confidence, then earlier
/// start, then longer duration. `Greater` means `a` wins.
pub(crate) fn rank(a: &ScoredSegment, b: &ScoredSegment) -> Ordering {
    a.confidence
        .total_cmp(&b.confidence)
        .then_with(|| b.segment.start().total_cmp(&a.segment.start()))
        .then_with(|| a.segment.duration().total_cmp(&b.segment.duration()))
}

/// Index of the winning candidate under [`rank`]; first one on full ties.
pub(crate) fn best_index(candidates: &[ScoredSegment]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        match best {
            Some(b) if rank(c, &candidates[b]) != Ordering::Greater => {}
            _ => best = Some(i),
        }
    }
    best
}

/// The winning candidate: highest confidence, then earliest start, then
/// longest.
pub fn best_segment(candidates: &[ScoredSegment]) -> Option<Segment> {
    best_index(candidates).map(|i| candidates[i].segment)
}

/// The segment with the highest mean score over its frames.
pub fn top_segment(set: &SegmentSet, track: &ScoreTrack) -> Result<Segment> {
    let candidates: Vec<ScoredSegment> = set
        .iter()
        .map(|s| ScoredSegment {
            segment: *s,
            confidence: segment_score(s, track),
        })
        .collect();
    best_index(&candidates)
        .map(|i| candidates[i].segment)
        .ok_or(Error::EmptySegmentSet)
}

/// A highlight timestamp at the center of a peak frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub time: f64,
    pub score: f64,
}

/// Local maxima of the track, best first, at most `max_count` of them.
///
/// A frame is a local maximum when it is strictly above its left
/// neighbour and not below its right one (missing neighbours always
/// qualify), so a plateau yields its first frame.
pub fn highlight_peaks(track: &ScoreTrack, max_count: usize) -> Vec<Highlight> {
    let s = track.scores();
    let mut peaks: Vec<usize> = (0..s.len())
        .filter(|&t| (t == 0 || s[t] > s[t - 1]) && (t + 1 == s.len() || s[t] >= s[t + 1]))
        .collect();
    peaks.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    peaks
        .into_iter()
        .take(max_count)
        .map(|t| Highlight {
            time: (t as f64 + 0.5) / track.fps(),
            score: s[t],
        })
        .collect()
}
