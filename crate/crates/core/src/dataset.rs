//! JSON Lines datasets: one query record per line.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featfile::{read_features, write_features};
use crate::labels::Segment;
use crate::matcher::FeatureStack;
use crate::segmenter::SegmentSet;
use crate::synth::SyntheticVideo;

/// Version tag of the JSONL dataset layout below.
pub const DATASET_FORMAT: &str = "emg-dataset v1";

/// One query against one video.
///
/// Exactly one of `scores` (an inline per-frame track) and
/// `features_ref` (path of an `EMG-FEAT` file, relative to the dataset
/// file) must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub video_id: String,
    pub query_id: String,
    pub fps: f64,
    pub num_frames: usize,
    pub gt_segments: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saliency: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_embedding: Option<Vec<f64>>,
}

impl DatasetRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(format!("field `fps`: must be positive, got {}", self.fps));
        }
        if self.num_frames == 0 {
            return Err("field `num_frames`: must be at least 1".into());
        }
        if self.gt_segments.is_empty() {
            return Err("field `gt_segments`: must not be empty".into());
        }
        let duration = self.num_frames as f64 / self.fps;
        for (i, g) in self.gt_segments.iter().enumerate() {
            let seg = Segment::new(g[0], g[1]).map_err(|e| format!("field `gt_segments[{i}]`: {e}"))?;
            if seg.start() > duration {
                return Err(format!(
                    "field `gt_segments[{i}]`: starts at {} beyond the {duration}s video",
                    seg.start()
                ));
            }
        }
        self.gt_set().map_err(|e| format!("field `gt_segments`: {e}"))?;
        match (&self.scores, &self.features_ref) {
            (Some(_), Some(_)) => return Err("fields `scores` and `features_ref` are mutually exclusive".into()),
            (None, None) => return Err("one of `scores` or `features_ref` is required".into()),
            _ => {}
        }
        if let Some(s) = &self.scores {
            if s.len() != self.num_frames {
                return Err(format!(
                    "field `scores`: length {} does not match num_frames {}",
                    s.len(),
                    self.num_frames
                ));
            }
            if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                return Err(format!("field `scores[{i}]`: non-finite value"));
            }
        }
        if let Some(s) = &self.saliency {
            if s.len() != self.num_frames {
                return Err(format!(
                    "field `saliency`: length {} does not match num_frames {}",
                    s.len(),
                    self.num_frames
                ));
            }
        }
        for (name, emb) in [
            ("event_embedding", &self.event_embedding),
            ("start_embedding", &self.start_embedding),
            ("end_embedding", &self.end_embedding),
        ] {
            if let Some(e) = emb {
                if e.iter().any(|v| !v.is_finite()) {
                    return Err(format!("field `{name}`: non-finite value"));
                }
                if e.iter().all(|&v| v == 0.0) {
                    return Err(format!("field `{name}`: zero vector"));
                }
            }
        }
        Ok(())
    }

    /// Ground truth as a sorted segment set.
    pub fn gt_set(&self) -> Result<SegmentSet> {
        let segs = self
            .gt_segments
            .iter()
            .map(|g| Segment::new(g[0], g[1]))
            .collect::<Result<Vec<_>>>()?;
        SegmentSet::from_unsorted(segs)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Reads and validates a JSONL dataset. Blank lines are skipped; errors
/// name the 1-based line number.
pub fn ingest(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::Dataset {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    parse_lines(BufReader::new(file), &path.display().to_string())
}

/// [`ingest`] over any reader; `name` appears in error messages.
pub fn parse_lines(reader: impl BufRead, name: &str) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let fail = |message: String| Error::Dataset {
            path: name.to_owned(),
            line: lineno,
            message,
        };
        let line = line.map_err(|e| fail(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        rec.validate().map_err(fail)?;
        if !seen.insert(rec.query_id.clone()) {
            return Err(fail(format!("duplicate query_id `{}`", rec.query_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(f, "{}", r.to_json_line())?;
    }
    f.flush()?;
    Ok(())
}

/// A record together with its loaded features, ready for the pipeline.
#[derive(Debug, Clone)]
pub struct PipelineInput {
    pub record: DatasetRecord,
    pub features: Option<FeatureStack>,
}

/// Loads every referenced feature file, resolving paths against
/// `base_dir`.
pub fn load_inputs(records: Vec<DatasetRecord>, base_dir: &Path) -> Result<Vec<PipelineInput>> {
    records
        .into_iter()
        .map(|record| {
            let features = match &record.features_ref {
                Some(r) => {
                    let stack = read_features(base_dir.join(r), record.fps)
                        .map_err(|e| e.in_query(&record.query_id))?;
                    if stack.frames() != record.num_frames {
                        return Err(Error::Shape {
                            expected: record.num_frames,
                            actual: stack.frames(),
                            context: "feature frames vs num_frames",
                        }
                        .in_query(&record.query_id));
                    }
                    Some(stack)
                }
                None => None,
            };
            Ok(PipelineInput { record, features })
        })
        .collect()
}

impl PipelineInput {
    /// In-memory input for a generated video.
    pub fn from_synthetic(v: &SyntheticVideo) -> Self {
        PipelineInput {
            record: synthetic_record(v, None),
            features: Some(v.stack.clone()),
        }
    }
}

fn synthetic_record(v: &SyntheticVideo, features_ref: Option<String>) -> DatasetRecord {
    let gt = crate::labels::frames_to_seconds(v.span.start, v.span.end, v.fps());
    DatasetRecord {
        video_id: v.video_id.clone(),
        query_id: v.query_id.clone(),
        fps: v.fps(),
        num_frames: v.num_frames(),
        gt_segments: vec![[gt.start(), gt.end()]],
        scores: None,
        features_ref: Some(features_ref.unwrap_or_else(|| format!("features/{}.emgf", v.video_id))),
        saliency: Some(v.saliency.clone()),
        event_embedding: Some(v.event_embedding.clone()),
        start_embedding: Some(v.start_embedding.clone()),
        end_embedding: Some(v.end_embedding.clone()),
    }
}

/// Writes `dataset.jsonl` and one feature file per video under `dir`.
/// Returns the dataset path.
pub fn write_synthetic(dir: &Path, videos: &[SyntheticVideo]) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir)?;
    let mut records = Vec::with_capacity(videos.len());
    for v in videos {
        let rel = format!("features/{}.emgf", v.video_id);
        write_features(dir.join(&rel), &v.stack)?;
        records.push(synthetic_record(v, Some(rel)));
    }
    let path = dir.join("dataset.jsonl");
    write_jsonl(&path, &records)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<DatasetRecord>> {
        parse_lines(text.as_bytes(), "test.jsonl")
    }

    const GOOD: &str = r#"{"video_id":"v1","query_id":"q1","fps":1.0,"num_frames":4,"gt_segments":[[1.0,3.0]],"scores":[0.0,0.9,0.8,0.1]}"#;

    #[test]
    fn empty_input() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn one_valid_line_round_trips() {
        let recs = parse(GOOD).unwrap();
        assert_eq!(recs.len(), 1);
        let again = parse(&recs[0].to_json_line()).unwrap();
        assert_eq!(again, recs);
        assert_eq!(recs[0].to_json_line(), GOOD);
    }

    #[test]
    fn length_mismatch_names_line_and_lengths() {
        let bad = GOOD.replace("[0.0,0.9,0.8,0.1]", "[0.0,0.9,0.8]");
        let text = format!("{GOOD}\n\n{}\n", bad.replace("q1", "q2"));
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("test.jsonl:3"), "{msg}");
        assert!(msg.contains("length 3") && msg.contains("num_frames 4"), "{msg}");
    }

    #[test]
    fn malformed_lines() {
        assert!(parse("{not json}").is_err());
        let missing = GOOD.replace(r#""fps":1.0,"#, "");
        assert!(parse(&missing).unwrap_err().to_string().contains("fps"));
        let both = GOOD.replace(r#""scores""#, r#""features_ref":"f.emgf","scores""#);
        assert!(parse(&both).is_err());
        let no_gt = GOOD.replace("[[1.0,3.0]]", "[]");
        assert!(parse(&no_gt).is_err());
        let reversed = GOOD.replace("[[1.0,3.0]]", "[[3.0,1.0]]");
        assert!(parse(&reversed).is_err());
        let unknown = GOOD.replace(r#""fps""#, r#""bogus":1,"fps""#);
        assert!(parse(&unknown).is_err());
        let dup = format!("{GOOD}\n{GOOD}");
        assert!(parse(&dup).unwrap_err().to_string().contains("duplicate"));
    }
}
