//! Ground-truth label vectors and the seconds <-> frame-index convention.
//!
//! Frame `i` covers the half-open time interval `[i/fps, (i+1)/fps)`. Every
//! conversion between seconds and frame indices in the crate goes through
//! [`seconds_to_frames`] and [`frames_to_seconds`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed time interval in seconds. `start == end` marks a highlight
/// timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Segment {
    start: f64,
    end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::Labels(format!("non-finite segment ({start}, {end})")));
        }
        if start < 0.0 {
            return Err(Error::Labels(format!("segment starts before 0: {start}")));
        }
        if start > end {
            return Err(Error::Labels(format!("segment start {start} after end {end}")));
        }
        Ok(Segment { start, end })
    }

    pub fn point(t: f64) -> Result<Self> {
        Segment::new(t, t)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_point(&self) -> bool {
        self.start == self.end
    }
}

impl TryFrom<[f64; 2]> for Segment {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Segment::new(v[0], v[1])
    }
}

impl From<Segment> for [f64; 2] {
    fn from(s: Segment) -> Self {
        [s.start, s.end]
    }
}

/// Inclusive range of frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameSpan {
    pub start: usize,
    pub end: usize,
}

impl FrameSpan {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        FrameSpan { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Maps a segment in seconds onto frame indices of a `num_frames`-frame
/// video: start = ⌊start·fps⌋, end = ⌈end·fps⌉ − 1, both clamped to the
/// video. Point segments map to the single frame `round(t·fps)`.
///
/// `num_frames` must be at least 1.
pub fn seconds_to_frames(seg: Segment, fps: f64, num_frames: usize) -> FrameSpan {
    let last = num_frames.saturating_sub(1) as f64;
    let clamp = |v: f64| v.max(0.0).min(last) as usize;
    if seg.is_point() {
        let f = clamp((seg.start * fps).round());
        return FrameSpan::new(f, f);
    }
    let start = clamp((seg.start * fps).floor());
    let end = clamp((seg.end * fps).ceil() - 1.0).max(start);
    FrameSpan::new(start, end)
}

/// Inverse of [`seconds_to_frames`]: the segment covering frames
/// `start_idx..=end_idx` completely.
pub fn frames_to_seconds(start_idx: usize, end_idx: usize, fps: f64) -> Segment {
    debug_assert!(start_idx <= end_idx);
    Segment {
        start: start_idx as f64 / fps,
        end: (end_idx + 1) as f64 / fps,
    }
}

/// Parameters of the smoothed binary target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    /// Decay base: a frame `d` frames outside the span gets `alpha^-d`.
    pub alpha: f64,
    /// Frames within this distance of a span get the decayed value.
    pub halo: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig { alpha: 2.0, halo: 3 }
    }
}

/// Per-frame target values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub values: Vec<f64>,
    pub fps: f64,
    pub alpha: f64,
}

impl LabelVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Builds the smoothed binary label over frame-index spans.
///
/// Frames inside a span get 1; frames at distance `1..=halo` from the
/// nearest span endpoint get `alpha^-d`; everything else 0. Several spans
/// combine by element-wise maximum.
pub fn build_labels(
    spans: &[FrameSpan],
    num_frames: usize,
    fps: f64,
    cfg: LabelConfig,
) -> Result<LabelVector> {
    if !(cfg.alpha >= 1.0) {
        return Err(Error::Labels(format!("alpha must be >= 1, got {}", cfg.alpha)));
    }
    for span in spans {
        if span.start > span.end {
            return Err(Error::Labels(format!(
                "span start {} after end {}",
                span.start, span.end
            )));
        }
        if span.start >= num_frames {
            return Err(Error::Labels(format!(
                "span {}..={} lies outside a {num_frames}-frame video",
                span.start, span.end
            )));
        }
    }
    let values = (0..num_frames)
        .map(|t| {
            spans
                .iter()
                .map(|span| {
                    if span.contains(t) {
                        return 1.0;
                    }
                    let d = t.abs_diff(span.start).min(t.abs_diff(span.end));
                    if d <= cfg.halo {
                        cfg.alpha.powi(-(d as i32))
                    } else {
                        0.0
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    Ok(LabelVector {
        values,
        fps,
        alpha: cfg.alpha,
    })
}

/// [`build_labels`] for segments given in seconds.
///
/// Rejects segments that start at or after the end of the video.
pub fn build_labels_from_seconds(
    gt: &[Segment],
    num_frames: usize,
    fps: f64,
    cfg: LabelConfig,
) -> Result<LabelVector> {
    if !(fps > 0.0) {
        return Err(Error::Labels(format!("fps must be positive, got {fps}")));
    }
    let duration = num_frames as f64 / fps;
    let spans = gt
        .iter()
        .map(|seg| {
            let outside = if seg.is_point() {
                (seg.start() * fps).round() >= num_frames as f64
            } else {
                seg.start() >= duration
            };
            if outside || num_frames == 0 {
                Err(Error::Labels(format!(
                    "segment ({}, {}) lies outside a {duration}s video",
                    seg.start(),
                    seg.end()
                )))
            } else {
                Ok(seconds_to_frames(*seg, fps, num_frames))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    build_labels(&spans, num_frames, fps, cfg)
}
