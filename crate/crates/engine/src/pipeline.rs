//! Staged streaming pipeline: ingest → track → align → embed → retrieve →
//! focus, each stage on its own thread, connected by bounded queues.
//!
//! Stages pass watermarks in-band. A watermark is a lower bound on the span
//! start of every window a stage may still emit, which lets the focus stage
//! close a segment as soon as no later vote can extend it.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use shopfocus_core::catalog::Taxonomy;
use shopfocus_core::features::{Comment, TextProvider, TranscriptSegment, VisualProvider};
use shopfocus_core::focus::{group_votes, sort_segments, MatchVote, VoteGroup};
use shopfocus_core::fusion::ModalPair;
use shopfocus_core::tracker::{TrackEventKind, Tracker, Tracklet};
use shopfocus_core::{TokenBag, TrackletId};

use crate::config::EngineConfig;
use crate::error::EngineError;
use crate::events::{LatencyStats, LifecycleUpdate, PipelineEvent, PipelineSummary, TrackletSummary};
use crate::ingest::{Ingested, Merged};
use crate::queue::{queue, QueueMeter, QueueRx, QueueTx};
use crate::snapshot::SnapshotHolder;
use crate::source::StreamSource;
use crate::windows::{build_window, embed_window, match_window, window_index, window_text, WindowMatch, WindowTask};

/// Shared, read-only inputs of a pipeline run.
#[derive(Clone)]
pub struct PipelineContext {
    pub config: EngineConfig,
    pub taxonomy: Arc<Taxonomy>,
    pub visual: Arc<dyn VisualProvider<f64>>,
    pub text: Arc<dyn TextProvider<f64>>,
    pub snapshots: Arc<SnapshotHolder>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Watermark {
    /// Latest event time ingested.
    input_time: u64,
    /// No window emitted later starts before this.
    floor: u64,
    /// No window emitted later needs text from before this.
    text_horizon: u64,
}

struct Released {
    task: WindowTask,
    at: Instant,
}

enum TrackOut {
    Transcript(TranscriptSegment),
    Comment(Comment),
    Window(Released),
    Lifecycle(LifecycleUpdate),
    Mark(Watermark),
}

enum Flow<T> {
    Item(T),
    Lifecycle(LifecycleUpdate),
    Mark(u64),
}

struct Matched {
    task: WindowTask,
    pair: ModalPair,
    matched: WindowMatch,
}

#[derive(Default)]
struct IngestStats {
    frames: u64,
    detections: u64,
    transcripts: u64,
    comments: u64,
}

#[derive(Default)]
struct TrackStats {
    created: u64,
    confirmed: u64,
    released: u64,
    merged: u64,
    dropped: u64,
}

#[derive(Default)]
struct RetrieveStats {
    queried: u64,
    degenerate: u64,
    latency: LatencyStats,
}

/// Runs one stream to completion, calling `sink` (on the calling thread) for
/// every lifecycle event, matched window and closed focus segment.
pub fn run_pipeline(
    source: StreamSource,
    ctx: &PipelineContext,
    mut sink: impl FnMut(PipelineEvent),
) -> Result<PipelineSummary, EngineError> {
    ctx.config.validate()?;
    let started = Instant::now();
    let q = &ctx.config.queues;
    let stream_id = source.stream_id.clone();
    let (ingest_tx, track_rx) = queue::<Ingested>("track", q.track);
    let (track_tx, align_rx) = queue::<TrackOut>("align", q.align);
    let (align_tx, embed_rx) = queue::<Flow<(Released, TokenBag)>>("embed", q.embed);
    let (embed_tx, retrieve_rx) = queue::<Flow<(Released, ModalPair)>>("retrieve", q.retrieve);
    let (retrieve_tx, focus_rx) = queue::<Flow<Matched>>("focus", q.focus);
    let meters: Vec<Arc<QueueMeter>> = vec![
        ingest_tx.meter().clone(),
        track_tx.meter().clone(),
        align_tx.meter().clone(),
        embed_tx.meter().clone(),
        retrieve_tx.meter().clone(),
    ];
    let pressure = [align_tx.meter().clone(), embed_tx.meter().clone()];

    let (results, focus_result) = thread::scope(|s| {
        let ingest = s.spawn(|| ingest_stage(source, ctx, ingest_tx));
        let track = s.spawn(|| track_stage(ctx, track_rx, track_tx, pressure));
        let align = s.spawn(|| align_stage(ctx, align_rx, align_tx));
        let embed = s.spawn(|| embed_stage(ctx, embed_rx, embed_tx));
        let retrieve = s.spawn(|| retrieve_stage(ctx, retrieve_rx, retrieve_tx));
        let focus_result = focus_stage(ctx, focus_rx, &mut sink);
        (
            (
                join(ingest, "ingest"),
                join(track, "track"),
                join(align, "align"),
                join(embed, "embed"),
                join(retrieve, "retrieve"),
            ),
            focus_result,
        )
    });
    let (ingest, track, align, embed, retrieve) = results;
    let ingest = ingest?;
    let track = track?;
    align?;
    embed?;
    let retrieve = retrieve?;
    let segments = focus_result?;

    Ok(PipelineSummary {
        stream_id,
        frames: ingest.frames,
        detections: ingest.detections,
        transcripts: ingest.transcripts,
        comments: ingest.comments,
        tracklets_created: track.created,
        tracklets_confirmed: track.confirmed,
        windows_released: track.released,
        windows_merged: track.merged,
        windows_dropped: track.dropped,
        windows_queried: retrieve.queried,
        windows_degenerate: retrieve.degenerate,
        segments,
        queues: meters.iter().map(|m| m.report()).collect(),
        window_latency: retrieve.latency,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

fn join<T>(h: thread::ScopedJoinHandle<'_, Result<T, EngineError>>, stage: &'static str) -> Result<T, EngineError> {
    h.join().unwrap_or(Err(EngineError::StagePanic(stage)))
}

fn ingest_stage(source: StreamSource, ctx: &PipelineContext, out: QueueTx<Ingested>) -> Result<IngestStats, EngineError> {
    let mut stats = IngestStats::default();
    let pace = ctx.config.realtime.then(|| (Instant::now(), ctx.config.realtime_speed));
    let mut first_key = None;
    for item in Merged::new(source, ctx.visual.clone()) {
        let item = item?;
        if let Some((start, speed)) = pace {
            let t0 = *first_key.get_or_insert(item.key());
            let due = start + Duration::from_secs_f64((item.key() - t0) as f64 / 1000.0 / speed);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        match &item {
            Ingested::Frame(f) => {
                stats.frames += 1;
                stats.detections += f.detections.len() as u64;
            }
            Ingested::Transcript(_) => stats.transcripts += 1,
            Ingested::Comment(_) => stats.comments += 1,
        }
        if out.send(item).is_err() {
            break;
        }
    }
    Ok(stats)
}

/// Per-tracklet window bookkeeping in the track stage.
struct TrackWindows<'a> {
    ctx: &'a PipelineContext,
    /// Ever-confirmed live tracklets → first window not yet released.
    open: BTreeMap<TrackletId, u64>,
    pressure: [Arc<QueueMeter>; 2],
    stats: TrackStats,
}

impl TrackWindows<'_> {
    fn hop(&self) -> u64 {
        self.ctx.config.retrieval.window_hop_ms
    }

    fn fill(&self) -> f64 {
        if !self.ctx.config.realtime {
            return 0.0;
        }
        self.pressure.iter().map(|m| m.fill()).fold(0.0, f64::max)
    }

    /// Releases complete windows `[from, to)`; returns the new first open
    /// window. `last` forces release of everything (tracklet ended).
    fn release(&mut self, t: &Tracklet, from: u64, to: u64, last: bool, out: &QueueTx<TrackOut>) -> Result<u64, ()> {
        if to <= from {
            return Ok(from);
        }
        let hop = self.hop();
        let mode = self.ctx.config.retrieval.mode;
        let build = |a, b| build_window(t.id(), t.category_path(), t.observations(), a, b, hop, mode);
        let fill = self.fill();
        let degrade = &self.ctx.config.degrade;
        if fill >= degrade.drop_at {
            self.stats.dropped += (from..to).filter(|&k| build(k, k).is_some()).count() as u64;
            return Ok(to);
        }
        if fill >= degrade.widen_at {
            if to - from < 2 && !last {
                return Ok(from);
            }
            let parts = (from..to).filter(|&k| build(k, k).is_some()).count() as u64;
            if let Some(task) = build(from, to - 1) {
                self.stats.merged += parts.saturating_sub(1);
                self.stats.released += 1;
                send_window(out, task)?;
            }
            return Ok(to);
        }
        for k in from..to {
            if let Some(task) = build(k, k) {
                self.stats.released += 1;
                send_window(out, task)?;
            }
        }
        Ok(to)
    }
}

fn send_window(out: &QueueTx<TrackOut>, task: WindowTask) -> Result<(), ()> {
    out.send(TrackOut::Window(Released { task, at: Instant::now() }))
        .map_err(|_| ())
}

fn track_stage(
    ctx: &PipelineContext,
    input: QueueRx<Ingested>,
    out: QueueTx<TrackOut>,
    pressure: [Arc<QueueMeter>; 2],
) -> Result<TrackStats, EngineError> {
    let mut tracker = Tracker::new(ctx.config.tracker.to_tracker_config(), ctx.taxonomy.clone());
    let mut w = TrackWindows {
        ctx,
        open: BTreeMap::new(),
        pressure,
        stats: TrackStats::default(),
    };
    let hop = w.hop();
    let mut input_time = 0u64;
    let mut last_mark: Option<Watermark> = None;

    // Returns Err(()) when downstream hung up; the downstream error wins.
    let process = |item: Option<Ingested>, tracker: &mut Tracker, w: &mut TrackWindows, input_time: &mut u64| -> Result<Result<(), ()>, EngineError> {
        let events = match item {
            Some(Ingested::Frame(f)) => {
                *input_time = (*input_time).max(f.timestamp_ms);
                tracker
                    .step(f.frame_index, &f.detections)
                    .map_err(|source| EngineError::Tracker {
                        frame_index: f.frame_index,
                        source,
                    })?
                    .events
            }
            Some(Ingested::Transcript(t)) => {
                *input_time = (*input_time).max(t.start_ms);
                if out.send(TrackOut::Transcript(t)).is_err() {
                    return Ok(Err(()));
                }
                Vec::new()
            }
            Some(Ingested::Comment(c)) => {
                *input_time = (*input_time).max(c.timestamp_ms);
                if out.send(TrackOut::Comment(c)).is_err() {
                    return Ok(Err(()));
                }
                Vec::new()
            }
            None => tracker.finish(),
        };
        for ev in events {
            let summary = tracker
                .live()
                .iter()
                .chain(tracker.finished())
                .find(|t| t.id() == ev.tracklet_id)
                .map(TrackletSummary::of)
                .expect("event refers to a known tracklet");
            match ev.kind {
                TrackEventKind::Created => w.stats.created += 1,
                TrackEventKind::Confirmed if !w.open.contains_key(&ev.tracklet_id) => {
                    w.stats.confirmed += 1;
                    w.open.insert(ev.tracklet_id, 0);
                }
                _ => {}
            }
            if out.send(TrackOut::Lifecycle(LifecycleUpdate { event: ev, summary })).is_err() {
                return Ok(Err(()));
            }
        }
        for t in tracker.take_finished() {
            if let Some(from) = w.open.remove(&t.id()) {
                let last_k = window_index(t.last_timestamp(), t.first_timestamp(), hop);
                if w.release(&t, from, last_k + 1, true, &out).is_err() {
                    return Ok(Err(()));
                }
            }
        }
        for t in tracker.live() {
            if let Some(&from) = w.open.get(&t.id()) {
                let current = window_index(*input_time, t.first_timestamp(), hop);
                match w.release(t, from, current, false, &out) {
                    Ok(next) => {
                        w.open.insert(t.id(), next);
                    }
                    Err(()) => return Ok(Err(())),
                }
            }
        }
        Ok(Ok(()))
    };

    while let Ok(item) = input.recv() {
        if process(Some(item), &mut tracker, &mut w, &mut input_time)?.is_err() {
            return Ok(w.stats);
        }
        let mut floor = input_time;
        let mut horizon = input_time;
        for t in tracker.live() {
            let t0 = t.first_timestamp();
            horizon = horizon.min(t0);
            floor = floor.min(match w.open.get(&t.id()) {
                Some(&from) => t0 + from * hop,
                None => t0,
            });
        }
        let mark = Watermark {
            input_time,
            floor,
            text_horizon: horizon,
        };
        if last_mark != Some(mark) {
            last_mark = Some(mark);
            if out.send(TrackOut::Mark(mark)).is_err() {
                return Ok(w.stats);
            }
        }
    }
    let _ = process(None, &mut tracker, &mut w, &mut input_time)?;
    Ok(w.stats)
}

fn align_stage(ctx: &PipelineContext, input: QueueRx<TrackOut>, out: QueueTx<Flow<(Released, TokenBag)>>) -> Result<(), EngineError> {
    let mode = ctx.config.retrieval.mode;
    let params = ctx.config.features.text_window();
    let mut transcripts: VecDeque<TranscriptSegment> = VecDeque::new();
    let mut comments: VecDeque<Comment> = VecDeque::new();
    let mut pending: VecDeque<Released> = VecDeque::new();

    let bag_for = |r: &Released, transcripts: &mut VecDeque<TranscriptSegment>, comments: &mut VecDeque<Comment>| {
        window_text(&r.task, mode, transcripts.make_contiguous(), comments.make_contiguous(), params)
    };

    while let Ok(msg) = input.recv() {
        let sent = match msg {
            TrackOut::Transcript(t) => {
                if mode.uses_text() {
                    transcripts.push_back(t);
                }
                Ok(())
            }
            TrackOut::Comment(c) => {
                if mode.uses_text() {
                    comments.push_back(c);
                }
                Ok(())
            }
            TrackOut::Window(r) => {
                if mode.uses_text() {
                    pending.push_back(r);
                    Ok(())
                } else {
                    out.send(Flow::Item((r, TokenBag::new()))).map_err(|_| ())
                }
            }
            TrackOut::Lifecycle(l) => out.send(Flow::Lifecycle(l)).map_err(|_| ()),
            TrackOut::Mark(m) => {
                let mut result = Ok(());
                let mut keep = VecDeque::with_capacity(pending.len());
                while let Some(r) = pending.pop_front() {
                    if params.settle_time(r.task.span.1) < m.input_time && result.is_ok() {
                        let bag = bag_for(&r, &mut transcripts, &mut comments);
                        result = out.send(Flow::Item((r, bag))).map_err(|_| ());
                    } else {
                        keep.push_back(r);
                    }
                }
                pending = keep;
                let mut horizon = m.text_horizon;
                let mut floor = m.floor;
                for r in &pending {
                    horizon = horizon.min(r.task.t0);
                    floor = floor.min(r.task.span.0);
                }
                let cut = horizon.saturating_sub(params.pad_ms);
                while transcripts.front().is_some_and(|t| t.start_ms < cut) {
                    transcripts.pop_front();
                }
                while comments.front().is_some_and(|c| c.timestamp_ms < horizon) {
                    comments.pop_front();
                }
                result.and_then(|()| out.send(Flow::Mark(floor)).map_err(|_| ()))
            }
        };
        if sent.is_err() {
            return Ok(());
        }
    }
    while let Some(r) = pending.pop_front() {
        let bag = bag_for(&r, &mut transcripts, &mut comments);
        if out.send(Flow::Item((r, bag))).is_err() {
            break;
        }
    }
    Ok(())
}

fn embed_stage(
    ctx: &PipelineContext,
    input: QueueRx<Flow<(Released, TokenBag)>>,
    out: QueueTx<Flow<(Released, ModalPair)>>,
) -> Result<(), EngineError> {
    let mode = ctx.config.retrieval.mode;
    while let Ok(msg) = input.recv() {
        let next = match msg {
            Flow::Item((r, bag)) => {
                let pair = embed_window(&r.task, &bag, mode, ctx.text.as_ref())?;
                Flow::Item((r, pair))
            }
            Flow::Lifecycle(l) => Flow::Lifecycle(l),
            Flow::Mark(m) => Flow::Mark(m),
        };
        if out.send(next).is_err() {
            break;
        }
    }
    Ok(())
}

fn retrieve_stage(
    ctx: &PipelineContext,
    input: QueueRx<Flow<(Released, ModalPair)>>,
    out: QueueTx<Flow<Matched>>,
) -> Result<RetrieveStats, EngineError> {
    let mut stats = RetrieveStats::default();
    while let Ok(msg) = input.recv() {
        let next = match msg {
            Flow::Item((r, pair)) => {
                let snapshot = ctx.snapshots.load();
                let matched = match_window(&r.task, &pair, &snapshot, &ctx.config)?;
                stats.queried += 1;
                if matched.degenerate {
                    stats.degenerate += 1;
                }
                stats.latency.record(r.at.elapsed().as_micros() as u64);
                Flow::Item(Matched {
                    task: r.task,
                    pair,
                    matched,
                })
            }
            Flow::Lifecycle(l) => Flow::Lifecycle(l),
            Flow::Mark(m) => Flow::Mark(m),
        };
        if out.send(next).is_err() {
            break;
        }
    }
    Ok(stats)
}

fn focus_stage(ctx: &PipelineContext, input: QueueRx<Flow<Matched>>, sink: &mut impl FnMut(PipelineEvent)) -> Result<u64, EngineError> {
    let params = ctx.config.focus.segment_params();
    let mut pending: Vec<MatchVote> = Vec::new();
    let mut emitted = 0u64;
    let mut dirty = false;

    let mut close = |pending: &mut Vec<MatchVote>, closed: &dyn Fn(&VoteGroup) -> bool, sink: &mut dyn FnMut(PipelineEvent)| {
        let groups = group_votes(pending, params.tau, params.max_gap_ms);
        let (done, open): (Vec<VoteGroup>, Vec<VoteGroup>) = groups.into_iter().partition(|g| closed(g));
        let mut segs: Vec<_> = done.iter().filter_map(|g| g.to_segment(params.min_len_ms)).collect();
        sort_segments(&mut segs);
        *pending = open.into_iter().flat_map(|g| g.votes).collect();
        for s in segs {
            emitted += 1;
            sink(PipelineEvent::Focus(s));
        }
    };

    while let Ok(msg) = input.recv() {
        match msg {
            Flow::Item(m) => {
                pending.extend(m.matched.votes.iter().filter(|v| v.similarity >= params.tau).cloned());
                dirty |= !m.matched.votes.is_empty();
                sink(PipelineEvent::Window {
                    tracklet_id: m.task.tracklet_id,
                    span: m.task.span,
                    pair: m.pair,
                    result: m.matched.result,
                });
            }
            Flow::Lifecycle(l) => sink(PipelineEvent::Lifecycle(l)),
            Flow::Mark(floor) => {
                if dirty && !pending.is_empty() {
                    let gap = params.max_gap_ms;
                    close(&mut pending, &|g| g.end_ms.saturating_add(gap) < floor, sink);
                }
                dirty = !pending.is_empty();
            }
        }
    }
    close(&mut pending, &|_| true, sink);
    Ok(emitted)
}
