//! Event-matching temporal grounding.
//!
//! Score tracks come from cosine matching between an event embedding and
//! per-frame features, get smoothed with a Savitzky-Golay filter, and are
//! thresholded into segments. Around that core sit the label builder and
//! toy trainer, the metric suite, the diagnostic analyses, and the file
//! formats used by the `emg` command-line tool.

pub mod analysis;
pub mod config;
pub mod dataset;
pub mod error;
pub mod featfile;
pub mod labels;
pub mod matcher;
pub mod metrics;
pub mod pipeline;
pub mod segmenter;
pub mod sgfilter;
pub mod synth;
pub mod trainer;

pub use analysis::{classify_error, taxonomy_report, ErrorCategory, Smoother, TaxonomyReport};
pub use config::RunConfig;
pub use dataset::{DatasetRecord, PipelineInput};
pub use error::{Error, Result};
pub use featfile::{FEATURE_MAGIC, FEATURE_VERSION};
pub use labels::{FrameSpan, LabelConfig, LabelVector, Segment};
pub use matcher::{Aggregation, FeatureStack, FrameMatrix, ScoreTrack, SquashMode};
pub use metrics::{EvalRecord, EvalReport, MetricOptions, REPORT_FORMAT};
pub use pipeline::{run_pipeline, PipelineOutput, SweepAxis};
pub use segmenter::{ExtractionConfig, Fallback, ScoredSegment, SegmentSet};
pub use sgfilter::{EdgeMode, SgKernel};
pub use trainer::{ToyModel, TrainConfig, PARAMS_FORMAT};
