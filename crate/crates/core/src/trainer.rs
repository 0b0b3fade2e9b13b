//! Toy training of the matching head against the matching loss.
//!
//! Trainable parameters are the two projectors (event side and frame side)
//! and one free event embedding per query. Gradients are derived by hand
//! through squash, cosine and both projectors.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{frames_to_seconds, LabelConfig, LabelVector, Segment};
use crate::matcher::{
    argmax, cosine, dot, norm, squash_values, Activation, FrameMatrix, Projector, ProjectorPass,
    ScoreTrack, SquashMode, SCORE_FLOOR,
};

/// Version tag of the parameter file.
pub const PARAMS_FORMAT: &str = "emg-params v1";

/// `-(1/T) Σ y_t ln s_t`.
pub fn matching_loss(track: &ScoreTrack, labels: &LabelVector) -> Result<f64> {
    loss_values(track.scores(), &labels.values)
}

fn loss_values(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            expected: labels.len(),
            actual: scores.len(),
            context: "score track vs labels",
        });
    }
    if let Some((frame, &score)) = scores.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::NonPositiveScore { frame, score });
    }
    let t = scores.len() as f64;
    let sum: f64 = scores
        .iter()
        .zip(labels)
        .filter(|(_, y)| **y != 0.0)
        .map(|(s, y)| y * s.ln())
        .sum();
    Ok(-sum / t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub squash: SquashMode,
    pub temperature: f64,
    pub labels: LabelConfig,
    pub activation: Activation,
    /// Std of the Gaussian perturbation added to identity projector weights.
    pub init_noise: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 100,
            squash: SquashMode::Softmax,
            temperature: 0.1,
            labels: LabelConfig::default(),
            activation: Activation::Tanh,
            init_noise: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.squash == SquashMode::Softmax && !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "softmax temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.labels.alpha >= 1.0) {
            return Err(Error::Config(format!("alpha must be >= 1, got {}", self.labels.alpha)));
        }
        Ok(())
    }
}

/// Projectors plus per-query event embeddings. Also used, with the same
/// layout, to hold gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub format: String,
    pub dim: usize,
    pub event_projector: Projector,
    pub frame_projector: Projector,
    pub event_embeddings: BTreeMap<String, Vec<f64>>,
}

impl ToyModel {
    /// Near-identity projectors with seeded Gaussian weight noise.
    pub fn init(
        dim: usize,
        embeddings: BTreeMap<String, Vec<f64>>,
        activation: Activation,
        init_noise: f64,
        seed: u64,
    ) -> Result<Self> {
        for (q, e) in &embeddings {
            if e.len() != dim {
                return Err(Error::Shape {
                    expected: dim,
                    actual: e.len(),
                    context: "initial event embedding",
                }
                .in_query(q));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perturbed = |p: &mut Projector| {
            if init_noise > 0.0 {
                let normal = Normal::new(0.0, init_noise).expect("finite std");
                for w in p.w1.iter_mut().chain(p.w2.iter_mut()) {
                    *w += normal.sample(&mut rng);
                }
            }
        };
        let mut event_projector = Projector::identity(dim, activation);
        let mut frame_projector = Projector::identity(dim, activation);
        perturbed(&mut event_projector);
        perturbed(&mut frame_projector);
        Ok(ToyModel {
            format: PARAMS_FORMAT.to_owned(),
            dim,
            event_projector,
            frame_projector,
            event_embeddings: embeddings,
        })
    }

    fn zeros_like(&self) -> Self {
        let zero = |p: &Projector| Projector {
            dim: p.dim,
            activation: p.activation,
            w1: vec![0.0; p.w1.len()],
            b1: vec![0.0; p.b1.len()],
            w2: vec![0.0; p.w2.len()],
            b2: vec![0.0; p.b2.len()],
        };
        ToyModel {
            format: self.format.clone(),
            dim: self.dim,
            event_projector: zero(&self.event_projector),
            frame_projector: zero(&self.frame_projector),
            event_embeddings: self
                .event_embeddings
                .iter()
                .map(|(k, v)| (k.clone(), vec![0.0; v.len()]))
                .collect(),
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        let ep = &mut self.event_projector;
        let fp = &mut self.frame_projector;
        ep.w1
            .iter_mut()
            .chain(ep.b1.iter_mut())
            .chain(ep.w2.iter_mut())
            .chain(ep.b2.iter_mut())
            .chain(fp.w1.iter_mut())
            .chain(fp.b1.iter_mut())
            .chain(fp.w2.iter_mut())
            .chain(fp.b2.iter_mut())
            .chain(self.event_embeddings.values_mut().flat_map(|v| v.iter_mut()))
    }

    /// All parameters in a fixed order: event projector (w1, b1, w2, b2),
    /// frame projector, then embeddings by query id.
    pub fn flatten(&self) -> Vec<f64> {
        let mut copy = self.clone();
        copy.params_mut().map(|p| *p).collect()
    }

    /// Inverse of [`ToyModel::flatten`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        let n = self.flatten().len();
        if values.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: values.len(),
                context: "flat parameter vector",
            });
        }
        for (p, v) in self.params_mut().zip(values) {
            *p = *v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != PARAMS_FORMAT {
            return Err(Error::Config(format!(
                "unsupported parameter format `{}` (expected `{PARAMS_FORMAT}`)",
                self.format
            )));
        }
        self.event_projector.validate()?;
        self.frame_projector.validate()?;
        if self.event_projector.dim != self.dim || self.frame_projector.dim != self.dim {
            return Err(Error::Config("projector width differs from model dim".into()));
        }
        for (q, e) in &self.event_embeddings {
            if e.len() != self.dim {
                return Err(Error::Shape {
                    expected: self.dim,
                    actual: e.len(),
                    context: "event embedding",
                }
                .in_query(q));
            }
        }
        Ok(())
    }

    /// Raw cosine track of one query against aggregated frame features.
    pub fn cosine_track(&self, event: &[f64], frames: &FrameMatrix, fps: f64) -> Result<ScoreTrack> {
        let m_evt = self.event_projector.apply(event)?;
        let m_v = crate::matcher::project(frames, &self.frame_projector)?;
        crate::matcher::cosine_track(&m_evt, &m_v, fps)
    }
}

/// One training video: aggregated frames and target labels for a query.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub query_id: String,
    pub frames: FrameMatrix,
    pub labels: LabelVector,
}

struct ForwardCache {
    event_pass: ProjectorPass,
    frame_passes: Vec<ProjectorPass>,
    cosines: Vec<f64>,
    squashed: Vec<f64>,
}

fn forward(
    model: &ToyModel,
    ex: &TrainingExample,
    squash: SquashMode,
    temperature: f64,
) -> Result<ForwardCache> {
    let event = model
        .event_embeddings
        .get(&ex.query_id)
        .ok_or_else(|| Error::Config(format!("no event embedding for query {}", ex.query_id)))?;
    if ex.frames.cols() != model.dim || event.len() != model.dim {
        return Err(Error::Shape {
            expected: model.dim,
            actual: ex.frames.cols(),
            context: "training frame width",
        });
    }
    if ex.frames.rows() != ex.labels.len() {
        return Err(Error::Shape {
            expected: ex.frames.rows(),
            actual: ex.labels.len(),
            context: "labels vs frames",
        });
    }
    let event_pass = model.event_projector.forward(event);
    if norm(&event_pass.output) == 0.0 {
        return Err(Error::ZeroNorm("projected event embedding"));
    }
    let frame_passes: Vec<ProjectorPass> = ex
        .frames
        .iter_rows()
        .map(|r| model.frame_projector.forward(r))
        .collect();
    let cosines: Vec<f64> = frame_passes
        .iter()
        .map(|p| cosine(&event_pass.output, &p.output))
        .collect();
    let squashed = squash_values(&cosines, squash, temperature);
    Ok(ForwardCache {
        event_pass,
        frame_passes,
        cosines,
        squashed,
    })
}

/// Loss of one example under the current model.
pub fn example_loss(
    model: &ToyModel,
    ex: &TrainingExample,
    squash: SquashMode,
    temperature: f64,
) -> Result<f64> {
    let fw = forward(model, ex, squash, temperature)?;
    loss_values(&fw.squashed, &ex.labels.values)
}

/// Accumulates `∂loss/∂input`-side gradients of one projector pass and
/// returns the gradient with respect to the projector input.
fn projector_backward(
    p: &Projector,
    x: &[f64],
    pass: &ProjectorPass,
    g_out: &[f64],
    grad: &mut Projector,
) -> Vec<f64> {
    let d = p.dim;
    for i in 0..d {
        grad.b2[i] += g_out[i];
        let row = &mut grad.w2[i * d..(i + 1) * d];
        for (w, h) in row.iter_mut().zip(&pass.hidden) {
            *w += g_out[i] * h;
        }
    }
    let g_z: Vec<f64> = (0..d)
        .map(|j| {
            let g_h: f64 = (0..d).map(|i| p.w2[i * d + j] * g_out[i]).sum();
            g_h * p.activation.derivative_from_output(pass.hidden[j])
        })
        .collect();
    let mut g_x = vec![0.0; d];
    for j in 0..d {
        grad.b1[j] += g_z[j];
        let w_row = &p.w1[j * d..(j + 1) * d];
        let g_row = &mut grad.w1[j * d..(j + 1) * d];
        for k in 0..d {
            g_row[k] += g_z[j] * x[k];
            g_x[k] += w_row[k] * g_z[j];
        }
    }
    g_x
}

fn example_gradient(
    model: &ToyModel,
    ex: &TrainingExample,
    squash: SquashMode,
    temperature: f64,
    grad: &mut ToyModel,
) -> Result<f64> {
    let fw = forward(model, ex, squash, temperature)?;
    let y = &ex.labels.values;
    let loss = loss_values(&fw.squashed, y)?;
    let t_len = y.len() as f64;

    // ∂loss/∂cosine
    let g_s: Vec<f64> = match squash {
        SquashMode::None => y.iter().zip(&fw.squashed).map(|(y, s)| -y / (t_len * s)).collect(),
        SquashMode::Shifted => y
            .iter()
            .zip(&fw.squashed)
            .zip(&fw.cosines)
            .map(|((y, q), c)| {
                if (c + 1.0) / 2.0 <= SCORE_FLOOR {
                    0.0
                } else {
                    -0.5 * y / (t_len * q)
                }
            })
            .collect(),
        SquashMode::Softmax => {
            let y_sum: f64 = y.iter().sum();
            y.iter()
                .zip(&fw.squashed)
                .map(|(y, q)| (q * y_sum - y) / (temperature * t_len))
                .collect()
        }
    };

    let a = &fw.event_pass.output;
    let na = norm(a);
    let mut g_a = vec![0.0; a.len()];
    for (t, pass) in fw.frame_passes.iter().enumerate() {
        let b = &pass.output;
        let nb = norm(b);
        if nb == 0.0 || g_s[t] == 0.0 {
            continue;
        }
        let s = dot(a, b) / (na * nb);
        let g_b: Vec<f64> = a
            .iter()
            .zip(b)
            .map(|(ai, bi)| g_s[t] * (ai / (na * nb) - s * bi / (nb * nb)))
            .collect();
        for (ga, (ai, bi)) in g_a.iter_mut().zip(a.iter().zip(b)) {
            *ga += g_s[t] * (bi / (na * nb) - s * ai / (na * na));
        }
        projector_backward(
            &model.frame_projector,
            ex.frames.row(t),
            pass,
            &g_b,
            &mut grad.frame_projector,
        );
    }
    let event = &model.event_embeddings[&ex.query_id];
    let g_event = projector_backward(
        &model.event_projector,
        event,
        &fw.event_pass,
        &g_a,
        &mut grad.event_projector,
    );
    let slot = grad
        .event_embeddings
        .get_mut(&ex.query_id)
        .expect("gradient has the model's queries");
    for (g, v) in slot.iter_mut().zip(g_event) {
        *g += v;
    }
    Ok(loss)
}

/// Summed loss and summed gradient over a batch.
pub fn loss_gradient(
    model: &ToyModel,
    batch: &[TrainingExample],
    squash: SquashMode,
    temperature: f64,
) -> Result<(f64, ToyModel)> {
    let mut grad = model.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        total += example_gradient(model, ex, squash, temperature, &mut grad)
            .map_err(|e| e.in_query(&ex.query_id))?;
    }
    Ok((total, grad))
}

/// Summed loss over a batch.
pub fn batch_loss(
    model: &ToyModel,
    batch: &[TrainingExample],
    squash: SquashMode,
    temperature: f64,
) -> Result<f64> {
    batch
        .iter()
        .map(|ex| example_loss(model, ex, squash, temperature).map_err(|e| e.in_query(&ex.query_id)))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Mean loss before each epoch's update, then the final mean loss:
    /// `epochs + 1` values.
    pub loss_curve: Vec<f64>,
}

impl TrainOutcome {
    /// `epoch,loss` CSV with a header row.
    pub fn loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            out.push_str(&format!("{i},{l:.17e}\n"));
        }
        out
    }
}

/// Full-batch gradient descent on the mean matching loss.
pub fn train(model: ToyModel, batch: &[TrainingExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::Config("training batch is empty".into()));
    }
    let mut model = model;
    let n = batch.len() as f64;
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (total, grad) = loss_gradient(&model, batch, cfg.squash, cfg.temperature)?;
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        curve.push(loss);
        if cfg.learning_rate == 0.0 {
            continue;
        }
        let step = cfg.learning_rate / n;
        let flat_grad = grad.flatten();
        if let Some(g) = flat_grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, loss: *g });
        }
        for (p, g) in model.params_mut().zip(&flat_grad) {
            *p -= step * g;
        }
    }
    let final_loss = batch_loss(&model, batch, cfg.squash, cfg.temperature)? / n;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }
    curve.push(final_loss);
    Ok(TrainOutcome {
        model,
        loss_curve: curve,
    })
}

/// Two-token boundary matching: the start token and the end token are each
/// matched to their best frame independently.
pub fn boundary_baseline(
    start_emb: &[f64],
    end_emb: &[f64],
    frames: &FrameMatrix,
    fps: f64,
) -> Result<Segment> {
    if norm(start_emb) == 0.0 {
        return Err(Error::ZeroNorm("start embedding"));
    }
    if norm(end_emb) == 0.0 {
        return Err(Error::ZeroNorm("end embedding"));
    }
    let start = crate::matcher::cosine_track(start_emb, frames, fps)?;
    let end = crate::matcher::cosine_track(end_emb, frames, fps)?;
    let (Some(mut s), Some(mut e)) = (argmax(start.scores()), argmax(end.scores())) else {
        return Err(Error::Config("boundary baseline on an empty video".into()));
    };
    if s > e {
        std::mem::swap(&mut s, &mut e);
    }
    Ok(frames_to_seconds(s, e, fps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::{build_labels, FrameSpan};

    fn labels(v: Vec<f64>) -> LabelVector {
        LabelVector {
            values: v,
            fps: 1.0,
            alpha: 2.0,
        }
    }

    #[test]
    fn loss_examples() {
        let t = ScoreTrack::new(vec![0.3, 0.9, 0.01], 1.0);
        assert_eq!(matching_loss(&t, &labels(vec![0.0; 3])).unwrap(), 0.0);

        let t = ScoreTrack::new(vec![(-1.0f64).exp(), 0.5], 1.0);
        let l = matching_loss(&t, &labels(vec![1.0, 0.0])).unwrap();
        assert!((l - 0.5).abs() < 1e-15);

        let t = ScoreTrack::new(vec![1.0; 4], 1.0);
        assert_eq!(matching_loss(&t, &labels(vec![1.0; 4])).unwrap(), 0.0);
    }

    #[test]
    fn loss_rejects_non_positive_scores() {
        let t = ScoreTrack::new(vec![0.5, 0.0], 1.0);
        let err = matching_loss(&t, &labels(vec![1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::NonPositiveScore { frame: 1, .. }));
        let t = ScoreTrack::new(vec![0.5], 1.0);
        assert!(matching_loss(&t, &labels(vec![1.0, 0.0])).is_err());
    }

    fn tiny_example(query: &str) -> TrainingExample {
        let frames = FrameMatrix::from_rows(&[
            vec![1.0, 0.1, 0.0],
            vec![0.2, 1.0, 0.3],
            vec![0.1, 0.9, 0.2],
            vec![0.9, 0.0, 0.4],
        ])
        .unwrap();
        let labels = build_labels(&[FrameSpan::new(1, 2)], 4, 1.0, LabelConfig::default()).unwrap();
        TrainingExample {
            query_id: query.into(),
            frames,
            labels,
        }
    }

    fn tiny_model(queries: &[&str]) -> ToyModel {
        let emb = queries
            .iter()
            .map(|q| (q.to_string(), vec![0.1, 1.0, 0.2]))
            .collect();
        ToyModel::init(3, emb, Activation::Tanh, 0.2, 7).unwrap()
    }

    #[test]
    fn zero_labels_give_zero_gradient() {
        let model = tiny_model(&["q"]);
        let mut ex = tiny_example("q");
        ex.labels.values = vec![0.0; 4];
        for mode in [SquashMode::Softmax, SquashMode::Shifted] {
            let (loss, g) = loss_gradient(&model, &[ex.clone()], mode, 0.1).unwrap();
            assert_eq!(loss, 0.0);
            assert!(g.flatten().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn duplicated_example_doubles_gradient() {
        let model = tiny_model(&["q"]);
        let ex = tiny_example("q");
        let (_, g1) = loss_gradient(&model, &[ex.clone()], SquashMode::Softmax, 0.1).unwrap();
        let (_, g2) = loss_gradient(&model, &[ex.clone(), ex], SquashMode::Softmax, 0.1).unwrap();
        for (a, b) in g2.flatten().iter().zip(g1.flatten()) {
            assert!((a - 2.0 * b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut model = tiny_model(&["a", "b"]);
        let flat: Vec<f64> = (0..model.flatten().len()).map(|i| i as f64).collect();
        model.set_flat(&flat).unwrap();
        assert_eq!(model.flatten(), flat);
        assert!(model.set_flat(&flat[1..]).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let model = tiny_model(&["q"]);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 5,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &[tiny_example("q")], &cfg).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.loss_curve.len(), 6);
        assert!(out.loss_curve.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn training_reduces_loss() {
        let model = tiny_model(&["q"]);
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let out = train(model, &[tiny_example("q")], &cfg).unwrap();
        assert!(out.loss_curve.last().unwrap() < out.loss_curve.first().unwrap());
        assert!(out.loss_curve_csv().starts_with("epoch,loss\n0,"));
    }

    #[test]
    fn divergence_is_reported() {
        let model = tiny_model(&["q"]);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 5,
            ..TrainConfig::default()
        };
        let err = train(model, &[tiny_example("q")], &cfg).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn baseline_recovers_clean_boundaries() {
        let frames = FrameMatrix::from_rows(&[
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.2],
            vec![0.5, 0.5, 0.2],
            vec![0.0, 1.0, 0.2],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        let seg = boundary_baseline(frames.row(1), frames.row(3), &frames, 1.0).unwrap();
        assert_eq!(seg, Segment::new(1.0, 4.0).unwrap());
        // swapped tokens still give an ordered segment
        let seg = boundary_baseline(frames.row(3), frames.row(1), &frames, 1.0).unwrap();
        assert_eq!(seg, Segment::new(1.0, 4.0).unwrap());
        assert!(boundary_baseline(&[0.0; 3], frames.row(3), &frames, 1.0).is_err());
    }

    #[test]
    fn baseline_picks_global_argmax_look_alike() {
        // the start token resembles frame 2 (true start) and frame 8
        // (a distant look-alike that matches slightly better)
        let mut rows = vec![vec![0.0, 0.0, 1.0]; 10];
        rows[2] = vec![1.0, 0.0, 0.3];
        rows[8] = vec![1.0, 0.0, 0.05];
        rows[4] = vec![0.0, 1.0, 0.3];
        let frames = FrameMatrix::from_rows(&rows).unwrap();
        let start_tok = [1.0, 0.0, 0.0];
        let end_tok = [0.0, 1.0, 0.3];
        // brute-force argmax
        let best = (0..10)
            .max_by(|&a, &b| cosine(&start_tok, frames.row(a)).total_cmp(&cosine(&start_tok, frames.row(b))))
            .unwrap();
        assert_eq!(best, 8);
        let seg = boundary_baseline(&start_tok, &end_tok, &frames, 1.0).unwrap();
        assert_eq!(seg, Segment::new(4.0, 9.0).unwrap());
    }
}
