//! Decoding of raw records into tracker frames and text items, merged across
//! the three input streams in event-time order.

use std::iter::Peekable;
use std::sync::Arc;

use shopfocus_core::features::{Comment, TranscriptSegment, VisualProvider};
use shopfocus_core::records::DetectionRecord;
use shopfocus_core::tracker::Detection;

use crate::error::{EngineError, StreamKind};
use crate::source::{Records, StreamSource};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ingested {
    Frame(Frame),
    Transcript(TranscriptSegment),
    Comment(Comment),
}

impl Ingested {
    /// Event time used for merging: frame timestamp, transcript start,
    /// comment timestamp.
    pub fn key(&self) -> u64 {
        match self {
            Self::Frame(f) => f.timestamp_ms,
            Self::Transcript(t) => t.start_ms,
            Self::Comment(c) => c.timestamp_ms,
        }
    }
}

/// Groups consecutive detection records sharing a frame index.
pub struct FrameReader {
    records: Peekable<Records<DetectionRecord>>,
    visual: Arc<dyn VisualProvider<f64>>,
    last: Option<(u64, u64)>,
    failed: bool,
}

impl FrameReader {
    pub fn new(records: Records<DetectionRecord>, visual: Arc<dyn VisualProvider<f64>>) -> Self {
        Self {
            records: records.peekable(),
            visual,
            last: None,
            failed: false,
        }
    }

    fn next_frame(&mut self) -> Result<Option<Frame>, EngineError> {
        let mut frame: Option<Frame> = None;
        loop {
            let same_frame = match (self.records.peek(), &frame) {
                (None, _) => break,
                (Some(Ok((_, r))), Some(f)) => r.frame_index == f.frame_index,
                (Some(_), None) => true,
                (Some(Err(_)), Some(_)) => false,
            };
            if !same_frame {
                break;
            }
            let (line, rec) = self
                .records
                .next()
                .expect("peeked")
                .map_err(|source| EngineError::Record {
                    stream: StreamKind::Detections,
                    source,
                })?;
            if let Some((last_frame, last_ts)) = self.last {
                if rec.frame_index < last_frame || (rec.frame_index == last_frame && frame.is_none()) {
                    return Err(EngineError::Ordering {
                        stream: StreamKind::Detections,
                        line,
                        previous: last_frame,
                        found: rec.frame_index,
                    });
                }
                if rec.timestamp_ms < last_ts {
                    return Err(EngineError::Ordering {
                        stream: StreamKind::Detections,
                        line,
                        previous: last_ts,
                        found: rec.timestamp_ms,
                    });
                }
            }
            let det = rec.to_detection(self.visual.as_ref(), line).map_err(|source| EngineError::Record {
                stream: StreamKind::Detections,
                source,
            })?;
            self.last = Some((det.frame_index, det.timestamp_ms));
            let f = frame.get_or_insert_with(|| Frame {
                frame_index: det.frame_index,
                timestamp_ms: det.timestamp_ms,
                detections: Vec::new(),
            });
            f.timestamp_ms = f.timestamp_ms.max(det.timestamp_ms);
            f.detections.push(det);
        }
        Ok(frame)
    }
}

impl Iterator for FrameReader {
    type Item = Result<Frame, EngineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let r = self.next_frame().transpose();
        if matches!(r, Some(Err(_))) {
            self.failed = true;
        }
        r
    }
}

/// Validates that a text stream is non-decreasing in its key.
struct Ordered<R> {
    records: Records<R>,
    kind: StreamKind,
    key: fn(&R) -> u64,
    last: Option<u64>,
    failed: bool,
}

impl<R> Iterator for Ordered<R> {
    type Item = Result<R, EngineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let r = match self.records.next()? {
            Err(source) => Err(EngineError::Record {
                stream: self.kind,
                source,
            }),
            Ok((line, rec)) => {
                let k = (self.key)(&rec);
                match self.last {
                    Some(prev) if k < prev => Err(EngineError::Ordering {
                        stream: self.kind,
                        line,
                        previous: prev,
                        found: k,
                    }),
                    _ => {
                        self.last = Some(k);
                        Ok(rec)
                    }
                }
            }
        };
        self.failed = r.is_err();
        Some(r)
    }
}

/// Merges frames, transcripts and comments by event time. Ties go to frames,
/// then transcripts, then comments.
pub struct Merged {
    frames: Peekable<FrameReader>,
    transcripts: Peekable<Ordered<TranscriptSegment>>,
    comments: Peekable<Ordered<Comment>>,
    failed: bool,
}

impl Merged {
    pub fn new(source: StreamSource, visual: Arc<dyn VisualProvider<f64>>) -> Self {
        Self {
            frames: FrameReader::new(source.detections, visual).peekable(),
            transcripts: Ordered {
                records: source.transcripts,
                kind: StreamKind::Transcripts,
                key: |t| t.start_ms,
                last: None,
                failed: false,
            }
            .peekable(),
            comments: Ordered {
                records: source.comments,
                kind: StreamKind::Comments,
                key: |c| c.timestamp_ms,
                last: None,
                failed: false,
            }
            .peekable(),
            failed: false,
        }
    }
}

fn head_key<T>(it: &mut Peekable<impl Iterator<Item = Result<T, EngineError>>>, key: impl Fn(&T) -> u64) -> Option<u64> {
    match it.peek()? {
        Ok(v) => Some(key(v)),
        // surface errors immediately
        Err(_) => Some(0),
    }
}

impl Iterator for Merged {
    type Item = Result<Ingested, EngineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let f = head_key(&mut self.frames, |f| f.timestamp_ms);
        let t = head_key(&mut self.transcripts, |t| t.start_ms);
        let c = head_key(&mut self.comments, |c| c.timestamp_ms);
        let best = [f, t, c]
            .iter()
            .enumerate()
            .filter_map(|(i, k)| k.map(|k| (k, i)))
            .min()?
            .1;
        let item = match best {
            0 => self.frames.next()?.map(Ingested::Frame),
            1 => self.transcripts.next()?.map(Ingested::Transcript),
            _ => self.comments.next()?.map(Ingested::Comment),
        };
        self.failed = item.is_err();
        Some(item)
    }
}
