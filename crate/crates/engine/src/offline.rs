//! Whole-stream composition of the module operations without queues or
//! watermarks: track every frame, cut every tracklet into windows, attach
//! text, fuse, query, vote and merge. Produces the same segments as the
//! streaming pipeline.

use shopfocus_core::focus::{segments, FocusSegment, MatchVote};
use shopfocus_core::tracker::Tracker;

use crate::error::EngineError;
use crate::ingest::{Ingested, Merged};
use crate::pipeline::PipelineContext;
use crate::source::StreamSource;
use crate::windows::{build_window, embed_window, match_window, window_index, window_text};

pub fn run_offline(source: StreamSource, ctx: &PipelineContext) -> Result<Vec<FocusSegment>, EngineError> {
    let config = &ctx.config;
    let mut frames = Vec::new();
    let mut transcripts = Vec::new();
    let mut comments = Vec::new();
    for item in Merged::new(source, ctx.visual.clone()) {
        match item? {
            Ingested::Frame(f) => frames.push(f),
            Ingested::Transcript(t) => transcripts.push(t),
            Ingested::Comment(c) => comments.push(c),
        }
    }

    let mut tracker = Tracker::new(config.tracker.to_tracker_config(), ctx.taxonomy.clone());
    for f in &frames {
        tracker
            .step(f.frame_index, &f.detections)
            .map_err(|source| EngineError::Tracker {
                frame_index: f.frame_index,
                source,
            })?;
    }
    tracker.finish();

    let hop = config.retrieval.window_hop_ms;
    let mode = config.retrieval.mode;
    let snapshot = ctx.snapshots.load();
    let mut votes: Vec<MatchVote> = Vec::new();
    for t in tracker.all_tracklets().into_iter().filter(|t| t.ever_confirmed()) {
        let t0 = t.first_timestamp();
        let mut ks: Vec<u64> = t
            .observations()
            .iter()
            .map(|o| window_index(o.timestamp_ms, t0, hop))
            .collect();
        ks.dedup();
        for k in ks {
            let task = build_window(t.id(), t.category_path(), t.observations(), k, k, hop, mode)
                .expect("window holds an observation");
            let bag = window_text(&task, mode, &transcripts, &comments, config.features.text_window());
            let pair = embed_window(&task, &bag, mode, ctx.text.as_ref())?;
            votes.extend(match_window(&task, &pair, &snapshot, config)?.votes);
        }
    }
    Ok(segments(&votes, &config.focus.segment_params()))
}
