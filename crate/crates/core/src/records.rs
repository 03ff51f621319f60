//! Line-delimited JSON stream files: detections, transcripts, comments and
//! focus output. One record per line; blank lines are skipped.
//!
//! ```text
//! {"frame_index":0,"timestamp_ms":0,"bbox":[10,20,32,48],"node_scores":{"root":1.0,"bag":0.9},"appearance":[0.6,0.8]}
//! {"start_ms":1000,"end_ms":2500,"text":"this tote is leather"}
//! {"timestamp_ms":3100,"text":"love the tote"}
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::marker::PhantomData;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{InlinePatch, PatchError};
use crate::features::{Embedding, FeatureError, Modality, VisualProvider};
use crate::ids::NodeId;
use crate::tracker::{BBox, Detection};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: box must have positive finite extent")]
    InvalidBox { line: usize },
    #[error("line {line}: {source}")]
    Patch { line: usize, source: PatchError },
    #[error("line {line}: detection has neither appearance nor patch")]
    NoAppearance { line: usize },
    #[error("line {line}: {source}")]
    Feature { line: usize, source: FeatureError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Iterator over records of a JSONL source, yielding `(line_number, record)`.
pub struct JsonlRecords<R, B> {
    lines: std::io::Lines<B>,
    line_no: usize,
    _marker: PhantomData<R>,
}

impl<R: DeserializeOwned, B: BufRead> Iterator for JsonlRecords<R, B> {
    type Item = Result<(usize, R), RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(
                serde_json::from_str(&line)
                    .map(|r| (self.line_no, r))
                    .map_err(|e| RecordError::Malformed {
                        line: self.line_no,
                        reason: e.to_string(),
                    }),
            );
        }
    }
}

pub fn jsonl_records<R: DeserializeOwned, B: BufRead>(reader: B) -> JsonlRecords<R, B> {
    JsonlRecords {
        lines: reader.lines(),
        line_no: 0,
        _marker: PhantomData,
    }
}

pub fn read_jsonl<R: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<R>, RecordError> {
    jsonl_records(reader).map(|r| r.map(|(_, v)| v)).collect()
}

pub fn write_jsonl<'a, R: Serialize + 'a>(mut w: impl Write, items: impl IntoIterator<Item = &'a R>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Detection as stored on disk. Either `appearance` or `patch` must be set;
/// a patch is embedded with the configured visual provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    pub node_scores: BTreeMap<NodeId, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appearance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<InlinePatch>,
}

impl DetectionRecord {
    pub fn from_detection(d: &Detection) -> Self {
        Self {
            frame_index: d.frame_index,
            timestamp_ms: d.timestamp_ms,
            bbox: [d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h],
            node_scores: d.node_scores.clone(),
            appearance: d.appearance.as_ref().map(|a| a.values().to_vec()),
            patch: d.patch.as_ref().map(InlinePatch::from),
        }
    }

    /// Converts to a tracker detection. `line` is used for error reporting.
    pub fn to_detection(&self, provider: &dyn VisualProvider<f64>, line: usize) -> Result<Detection, RecordError> {
        let [x, y, w, h] = self.bbox;
        let bbox = BBox::new(x, y, w, h).ok_or(RecordError::InvalidBox { line })?;
        let patch = self
            .patch
            .as_ref()
            .map(|p| p.to_patch())
            .transpose()
            .map_err(|source| RecordError::Patch { line, source })?;
        let appearance = match (&self.appearance, &patch) {
            (Some(a), _) => Embedding::normalized(a.clone(), Modality::Visual),
            (None, Some(p)) => provider
                .embed_patch(p)
                .map_err(|source| RecordError::Feature { line, source })?,
            (None, None) => return Err(RecordError::NoAppearance { line }),
        };
        Ok(Detection {
            frame_index: self.frame_index,
            timestamp_ms: self.timestamp_ms,
            bbox,
            node_scores: self.node_scores.clone(),
            appearance: Some(appearance),
            patch,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Comment, HistogramProvider, TranscriptSegment};

    #[test]
    fn reads_streams_and_reports_lines() {
        let text = "{\"start_ms\":0,\"end_ms\":5,\"text\":\"a\"}\n\n{\"start_ms\":1}\n";
        let err = read_jsonl::<TranscriptSegment>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, RecordError::Malformed { line: 3, .. }));
        let ok: Vec<Comment> = read_jsonl("{\"timestamp_ms\":4,\"text\":\"hi\"}\n".as_bytes()).unwrap();
        assert_eq!(ok[0].timestamp_ms, 4);
    }

    #[test]
    fn detection_from_patch_uses_provider() {
        let line = r#"{"frame_index":2,"timestamp_ms":400,"bbox":[0,0,4,4],"node_scores":{"bag":0.7},"patch":{"width":1,"height":1,"rgb":"ff0000"}}"#;
        let rec: DetectionRecord = serde_json::from_str(line).unwrap();
        let d = rec.to_detection(&HistogramProvider::default(), 1).unwrap();
        let app = d.appearance.unwrap();
        assert_eq!(app.dim(), 64);
        assert_eq!(app.values()[48], 1.0);
    }

    #[test]
    fn detection_errors() {
        let mut rec = DetectionRecord {
            frame_index: 0,
            timestamp_ms: 0,
            bbox: [0.0, 0.0, 0.0, 1.0],
            node_scores: BTreeMap::new(),
            appearance: Some(vec![1.0]),
            patch: None,
        };
        let p = HistogramProvider::default();
        assert!(matches!(rec.to_detection(&p, 7), Err(RecordError::InvalidBox { line: 7 })));
        rec.bbox = [0.0, 0.0, 1.0, 1.0];
        rec.appearance = None;
        assert!(matches!(rec.to_detection(&p, 7), Err(RecordError::NoAppearance { line: 7 })));
    }
}
