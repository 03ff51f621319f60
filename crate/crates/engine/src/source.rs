//! Time-ordered record sources for one livestream.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use shopfocus_core::features::{Comment, TranscriptSegment};
use shopfocus_core::records::{jsonl_records, DetectionRecord, RecordError};

pub type Records<R> = Box<dyn Iterator<Item = Result<(usize, R), RecordError>> + Send>;

/// Detection, transcript and comment streams of one livestream. Each
/// stream must be non-decreasing in time; the pipeline rejects violations.
pub struct StreamSource {
    pub stream_id: String,
    pub detections: Records<DetectionRecord>,
    pub transcripts: Records<TranscriptSegment>,
    pub comments: Records<Comment>,
}

fn numbered<R: Send + 'static>(items: Vec<R>) -> Records<R> {
    Box::new(items.into_iter().enumerate().map(|(i, r)| Ok((i + 1, r))))
}

fn from_file<R: serde::de::DeserializeOwned + Send + 'static>(path: Option<&Path>) -> std::io::Result<Records<R>> {
    match path {
        Some(p) => Ok(Box::new(jsonl_records(BufReader::new(File::open(p)?)))),
        None => Ok(Box::new(std::iter::empty())),
    }
}

impl StreamSource {
    pub fn from_records(
        stream_id: impl Into<String>,
        detections: Vec<DetectionRecord>,
        transcripts: Vec<TranscriptSegment>,
        comments: Vec<Comment>,
    ) -> Self {
        Self {
            stream_id: stream_id.into(),
            detections: numbered(detections),
            transcripts: numbered(transcripts),
            comments: numbered(comments),
        }
    }

    /// Opens JSONL files; missing transcript or comment files mean empty streams.
    pub fn from_files(
        stream_id: impl Into<String>,
        detections: &Path,
        transcripts: Option<&Path>,
        comments: Option<&Path>,
    ) -> std::io::Result<Self> {
        Ok(Self {
            stream_id: stream_id.into(),
            detections: from_file(Some(detections))?,
            transcripts: from_file(transcripts)?,
            comments: from_file(comments)?,
        })
    }

    pub fn empty(stream_id: impl Into<String>) -> Self {
        Self::from_records(stream_id, Vec::new(), Vec::new(), Vec::new())
    }
}
