//! Run configuration: every tunable of the pipeline in one place.
//!
//! Loaded from TOML; missing keys take their defaults. The CLI applies
//! flag overrides on top, so precedence is flags > file > defaults.

use serde::{Deserialize, Serialize};

use crate::analysis::Smoother;
use crate::error::{Error, Result};
use crate::labels::LabelConfig;
use crate::matcher::{Aggregation, SquashMode};
use crate::metrics::{default_map_thresholds, MetricOptions};
use crate::segmenter::{ExtractionConfig, Fallback};
use crate::sgfilter::{EdgeMode, MAX_POLY_ORDER};
use crate::trainer::TrainConfig;

/// How `sg_half_window` is read: as the half-window `k` of a `2k+1`
/// window, or as the full window length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowConvention {
    #[default]
    Half,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingKind {
    None,
    #[default]
    SavitzkyGolay,
    MovingAverage,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sigma: f64,
    pub alpha: f64,
    pub halo_width: usize,
    pub smoothing: SmoothingKind,
    pub sg_half_window: usize,
    pub sg_order: usize,
    pub window_convention: WindowConvention,
    pub edge_mode: EdgeMode,
    /// Window of the moving-average and exponential smoothers.
    pub smoothing_window: usize,
    pub squash: SquashMode,
    pub temperature: f64,
    pub aggregation: Aggregation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_mask: Option<Vec<usize>>,
    pub merge_gap: usize,
    pub min_duration: f64,
    pub fallback: Fallback,
    pub f1_iou_threshold: f64,
    pub map_thresholds: Vec<f64>,
    pub saliency_threshold: f64,
    pub highlight_count: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sigma: 1e-5,
            alpha: 2.0,
            halo_width: 3,
            smoothing: SmoothingKind::SavitzkyGolay,
            sg_half_window: 5,
            sg_order: 2,
            window_convention: WindowConvention::Half,
            edge_mode: EdgeMode::Mirror,
            smoothing_window: 5,
            squash: SquashMode::Shifted,
            temperature: 0.1,
            aggregation: Aggregation::Average,
            layer_mask: None,
            merge_gap: 0,
            min_duration: 0.0,
            fallback: Fallback::Peak,
            f1_iou_threshold: 0.5,
            map_thresholds: default_map_thresholds(),
            saliency_threshold: 4.0,
            highlight_count: 5,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Half-window `k` after applying [`WindowConvention`].
    pub fn sg_half_window_effective(&self) -> usize {
        match self.window_convention {
            WindowConvention::Half => self.sg_half_window,
            WindowConvention::Full => self.sg_half_window.saturating_sub(1) / 2,
        }
    }

    pub fn smoother(&self) -> Smoother {
        match self.smoothing {
            SmoothingKind::None => Smoother::None,
            SmoothingKind::SavitzkyGolay => Smoother::SavitzkyGolay {
                half_window: self.sg_half_window_effective(),
                order: self.sg_order,
                edge_mode: self.edge_mode,
            },
            SmoothingKind::MovingAverage => Smoother::MovingAverage {
                window: self.smoothing_window,
            },
            SmoothingKind::Exponential => Smoother::Exponential {
                window: self.smoothing_window,
            },
        }
    }

    pub fn extraction(&self) -> ExtractionConfig {
        ExtractionConfig {
            sigma: self.sigma,
            min_duration: self.min_duration,
            fallback: self.fallback,
            merge_gap: self.merge_gap,
        }
    }

    pub fn label_config(&self) -> LabelConfig {
        LabelConfig {
            alpha: self.alpha,
            halo: self.halo_width,
        }
    }

    /// Training settings, with labels taken from the top-level
    /// `alpha`/`halo_width` and the seed from `seed`.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            labels: self.label_config(),
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn metric_options(&self) -> MetricOptions {
        MetricOptions {
            f1_iou_threshold: self.f1_iou_threshold,
            map_thresholds: self.map_thresholds.clone(),
            saliency_threshold: self.saliency_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.extraction().validate()?;
        if !(self.alpha >= 1.0) {
            return bad(format!("alpha must be >= 1, got {}", self.alpha));
        }
        if self.smoothing == SmoothingKind::SavitzkyGolay {
            let k = self.sg_half_window_effective();
            if self.sg_order > 2 * k || self.sg_order > MAX_POLY_ORDER {
                return bad(format!(
                    "sg_order {} invalid for half-window {k} (needs order <= 2k and <= {MAX_POLY_ORDER})",
                    self.sg_order
                ));
            }
        }
        if matches!(self.smoothing, SmoothingKind::MovingAverage | SmoothingKind::Exponential)
            && self.smoothing_window == 0
        {
            return bad("smoothing_window must be >= 1".into());
        }
        if self.squash == SquashMode::Softmax && !(self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.f1_iou_threshold) {
            return bad(format!("f1_iou_threshold out of [0,1]: {}", self.f1_iou_threshold));
        }
        if self.map_thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("map_thresholds must lie in [0,1]".into());
        }
        if self.highlight_count == 0 {
            return bad("highlight_count must be >= 1".into());
        }
        self.train_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reported_settings() {
        let c = RunConfig::default();
        assert_eq!(c.sigma, 1e-5);
        assert_eq!(c.alpha, 2.0);
        assert_eq!(c.sg_half_window, 5);
        assert_eq!(c.halo_width, 3);
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml()).unwrap(), c);

        let partial = RunConfig::from_toml_str("sigma = 0.5\nedge_mode = \"shrink\"\n[train]\nepochs = 7\n").unwrap();
        assert_eq!(partial.sigma, 0.5);
        assert_eq!(partial.edge_mode, EdgeMode::Shrink);
        assert_eq!(partial.train.epochs, 7);
        assert_eq!(partial.alpha, 2.0);
    }

    #[test]
    fn rejects_invalid() {
        assert!(RunConfig::from_toml_str("alpha = 0.5").is_err());
        assert!(RunConfig::from_toml_str("sg_half_window = 1\nsg_order = 3").is_err());
        assert!(RunConfig::from_toml_str("nonsense = 1").is_err());
        assert!(RunConfig::from_toml_str("min_duration = -1.0").is_err());
    }

    #[test]
    fn full_window_convention() {
        let c = RunConfig {
            window_convention: WindowConvention::Full,
            sg_half_window: 5,
            ..RunConfig::default()
        };
        assert_eq!(c.sg_half_window_effective(), 2);
        assert_eq!(
            c.smoother(),
            Smoother::SavitzkyGolay {
                half_window: 2,
                order: 2,
                edge_mode: EdgeMode::Mirror
            }
        );
    }
}
