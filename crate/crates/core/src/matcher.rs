//! Token-to-frame matching: layer aggregation, projection, cosine scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-video features, `layers × frames × dim`, stored layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    layers: usize,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
    fps: f64,
}

impl FeatureStack {
    pub fn new(layers: usize, frames: usize, dim: usize, data: Vec<f32>, fps: f64) -> Result<Self> {
        if layers == 0 || frames == 0 || dim == 0 {
            return Err(Error::Config(format!(
                "feature stack needs positive shape, got {layers}x{frames}x{dim}"
            )));
        }
        let expected = layers * frames * dim;
        if data.len() != expected {
            return Err(Error::Shape {
                expected,
                actual: data.len(),
                context: "feature stack payload",
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                value: data[i] as f64,
                context: format!("feature element {i}"),
            });
        }
        Ok(FeatureStack {
            layers,
            frames,
            dim,
            data,
            fps,
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, layer: usize, frame: usize, d: usize) -> f32 {
        self.data[(layer * self.frames + frame) * self.dim + d]
    }

    /// One layer as a `frames × dim` slice.
    pub fn layer(&self, layer: usize) -> &[f32] {
        let n = self.frames * self.dim;
        &self.data[layer * n..(layer + 1) * n]
    }
}

/// Dense row-major matrix, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                expected: rows * cols,
                actual: data.len(),
                context: "frame matrix",
            });
        }
        Ok(FrameMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    expected: cols,
                    actual: r.len(),
                    context: "frame matrix row",
                });
            }
            data.extend_from_slice(r);
        }
        Ok(FrameMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// How per-layer features are merged into one feature per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Average,
    Max,
    Median,
}

impl Aggregation {
    pub const ALL: [Aggregation; 3] = [Aggregation::Average, Aggregation::Max, Aggregation::Median];

    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Average => "average",
            Aggregation::Max => "max",
            Aggregation::Median => "median",
        }
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" | "mean" => Ok(Aggregation::Average),
            "max" => Ok(Aggregation::Max),
            "median" => Ok(Aggregation::Median),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// Aggregates all layers of `stack` into a `frames × dim` matrix.
pub fn aggregate_layers(stack: &FeatureStack, strategy: Aggregation) -> FrameMatrix {
    let all: Vec<usize> = (0..stack.layers).collect();
    aggregate_selected(stack, strategy, &all)
}

/// Like [`aggregate_layers`] but over a subset of layer indices.
pub fn aggregate_layers_masked(
    stack: &FeatureStack,
    strategy: Aggregation,
    layers: &[usize],
) -> Result<FrameMatrix> {
    if layers.is_empty() {
        return Err(Error::Config("layer mask selects no layers".into()));
    }
    if let Some(&bad) = layers.iter().find(|&&l| l >= stack.layers) {
        return Err(Error::Config(format!(
            "layer mask index {bad} out of range for {} layers",
            stack.layers
        )));
    }
    Ok(aggregate_selected(stack, strategy, layers))
}

fn aggregate_selected(stack: &FeatureStack, strategy: Aggregation, layers: &[usize]) -> FrameMatrix {
    let n = stack.frames * stack.dim;
    let mut out = Vec::with_capacity(n);
    let mut column = Vec::with_capacity(layers.len());
    for i in 0..n {
        column.clear();
        column.extend(layers.iter().map(|&l| stack.layer(l)[i] as f64));
        let v = match strategy {
            Aggregation::Average => column.iter().sum::<f64>() / column.len() as f64,
            Aggregation::Max => column.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregation::Median => {
                column.sort_by(f64::total_cmp);
                let m = column.len() / 2;
                if column.len() % 2 == 1 {
                    column[m]
                } else {
                    0.5 * (column[m - 1] + column[m])
                }
            }
        };
        out.push(v);
    }
    FrameMatrix {
        rows: stack.frames,
        cols: stack.dim,
        data: out,
    }
}

/// Elementwise nonlinearity between the two projector layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Two-layer map `D → D`: `W2 · act(W1 · x + b1) + b2`. Weights are
/// row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector {
    pub dim: usize,
    pub activation: Activation,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Intermediate values of one projector forward pass.
#[derive(Debug, Clone)]
pub struct ProjectorPass {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl Projector {
    /// Identity weights, zero biases.
    pub fn identity(dim: usize, activation: Activation) -> Self {
        let mut eye = vec![0.0; dim * dim];
        for i in 0..dim {
            eye[i * dim + i] = 1.0;
        }
        Projector {
            dim,
            activation,
            w1: eye.clone(),
            b1: vec![0.0; dim],
            w2: eye,
            b2: vec![0.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        for (len, want, ctx) in [
            (self.w1.len(), d * d, "projector w1"),
            (self.b1.len(), d, "projector b1"),
            (self.w2.len(), d * d, "projector w2"),
            (self.b2.len(), d, "projector b2"),
        ] {
            if len != want {
                return Err(Error::Shape {
                    expected: want,
                    actual: len,
                    context: ctx,
                });
            }
        }
        let all = self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2);
        if let Some(v) = all.copied().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                value: v,
                context: "projector parameters".into(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> ProjectorPass {
        let d = self.dim;
        let hidden: Vec<f64> = (0..d)
            .map(|i| {
                let z = self.b1[i] + dot(&self.w1[i * d..(i + 1) * d], x);
                self.activation.apply(z)
            })
            .collect();
        let output = (0..d)
            .map(|i| self.b2[i] + dot(&self.w2[i * d..(i + 1) * d], &hidden))
            .collect();
        ProjectorPass { hidden, output }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                actual: x.len(),
                context: "projector input",
            });
        }
        Ok(self.forward(x).output)
    }

    pub fn num_params(&self) -> usize {
        2 * self.dim * self.dim + 2 * self.dim
    }
}

/// Applies `projector` to every row.
pub fn project(features: &FrameMatrix, projector: &Projector) -> Result<FrameMatrix> {
    if features.cols != projector.dim {
        return Err(Error::Shape {
            expected: projector.dim,
            actual: features.cols,
            context: "projected feature width",
        });
    }
    let data = features
        .iter_rows()
        .flat_map(|r| projector.forward(r).output)
        .collect();
    Ok(FrameMatrix {
        rows: features.rows,
        cols: features.cols,
        data,
    })
}

/// The event token's feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EventEmbedding(Vec<f64>);

impl EventEmbedding {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        if let Some(x) = v.iter().copied().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                value: x,
                context: "event embedding".into(),
            });
        }
        if norm(&v) == 0.0 {
            return Err(Error::ZeroNorm("event embedding"));
        }
        Ok(EventEmbedding(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for EventEmbedding {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        EventEmbedding::new(v)
    }
}

impl From<EventEmbedding> for Vec<f64> {
    fn from(e: EventEmbedding) -> Self {
        e.0
    }
}

/// Transform applied on top of raw cosine scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SquashMode {
    #[default]
    None,
    /// `exp(s/τ) / Σ exp(s/τ)` over the frames of one track.
    Softmax,
    /// `(s + 1) / 2`, floored at machine epsilon.
    Shifted,
}

impl std::str::FromStr for SquashMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SquashMode::None),
            "softmax" => Ok(SquashMode::Softmax),
            "shifted" => Ok(SquashMode::Shifted),
            other => Err(Error::Config(format!("unknown squash mode `{other}`"))),
        }
    }
}

/// Lower bound for shifted scores so that `ln` stays finite.
pub const SCORE_FLOOR: f64 = f64::EPSILON;

/// Per-frame similarity scores for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrack {
    scores: Vec<f64>,
    fps: f64,
    squash: SquashMode,
}

impl ScoreTrack {
    pub fn new(scores: Vec<f64>, fps: f64) -> Self {
        ScoreTrack {
            scores,
            fps,
            squash: SquashMode::None,
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn squash(&self) -> SquashMode {
        self.squash
    }

    /// Whether a squashing transform produced these scores.
    pub fn is_normalized(&self) -> bool {
        self.squash != SquashMode::None
    }

    /// Same metadata, new scores.
    pub fn with_scores(&self, scores: Vec<f64>) -> Self {
        ScoreTrack {
            scores,
            fps: self.fps,
            squash: self.squash,
        }
    }

    /// First frame holding the maximum score.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.scores)
    }
}

pub(crate) fn argmax(xs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        match best {
            Some(b) if xs[b] >= x => {}
            _ => best = Some(i),
        }
    }
    best
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; zero when either side has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Cosine similarity between the event vector and every frame row.
/// Frames with zero norm score 0.
pub fn cosine_track(event: &[f64], frames: &FrameMatrix, fps: f64) -> Result<ScoreTrack> {
    if event.len() != frames.cols {
        return Err(Error::Shape {
            expected: frames.cols,
            actual: event.len(),
            context: "event embedding width",
        });
    }
    if norm(event) == 0.0 {
        return Err(Error::ZeroNorm("event embedding"));
    }
    let scores = frames.iter_rows().map(|r| cosine(event, r)).collect();
    Ok(ScoreTrack::new(scores, fps))
}

/// Applies `mode` to a track. `temperature` only matters for softmax.
pub fn squash_track(track: &ScoreTrack, mode: SquashMode, temperature: f64) -> ScoreTrack {
    let scores = squash_values(track.scores(), mode, temperature);
    ScoreTrack {
        scores,
        fps: track.fps,
        squash: mode,
    }
}

pub(crate) fn squash_values(scores: &[f64], mode: SquashMode, temperature: f64) -> Vec<f64> {
    match mode {
        SquashMode::None => scores.to_vec(),
        SquashMode::Shifted => scores
            .iter()
            .map(|s| ((s + 1.0) / 2.0).max(SCORE_FLOOR))
            .collect(),
        SquashMode::Softmax => {
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores
                .iter()
                .map(|s| ((s - max) / temperature).exp())
                .collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        }
    }
}
