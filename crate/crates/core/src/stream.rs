//! Soft real-time engagement estimation over a frame stream.
//!
//! The last `w` frame features are kept in a ring buffer; once it is full,
//! every incoming frame yields one score for the window ending at it.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{Backbone, BackboneError, FeatureVector};
use crate::dataset::preprocess::{preprocess_frame_with, PreprocessError, RawFrame, ResizePolicy};
use crate::model::{forward, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("model not loaded")]
    ModelNotLoaded,
    #[error("no pushes recorded yet")]
    EmptyStats,
    #[error("window length must be positive")]
    ZeroWindow,
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngagementScore {
    #[serde(rename = "frame")]
    pub frame_index: u64,
    #[serde(rename = "engagement")]
    pub value: f64,
    #[serde(rename = "latency_ms")]
    pub wall_latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub count: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub throughput_fps: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LatencyStats {
    samples_ms: Vec<f64>,
    total_ms: f64,
    max_ms: f64,
}

impl LatencyStats {
    pub fn record(&mut self, ms: f64) {
        self.samples_ms.push(ms);
        self.total_ms += ms;
        self.max_ms = self.max_ms.max(ms);
    }

    pub fn report(&self) -> Result<LatencyReport, StreamError> {
        if self.samples_ms.is_empty() {
            return Err(StreamError::EmptyStats);
        }
        let mut sorted = self.samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let rank = |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        let throughput = if self.total_ms > 0.0 {
            sorted.len() as f64 * 1000.0 / self.total_ms
        } else {
            f64::INFINITY
        };
        Ok(LatencyReport {
            count: sorted.len(),
            p50_ms: rank(0.5),
            p95_ms: rank(0.95),
            max_ms: self.max_ms,
            throughput_fps: throughput,
        })
    }
}

pub struct StreamState {
    w: usize,
    window: VecDeque<FeatureVector>,
    frames_seen: u64,
    model: Option<Arc<ModelParams<f64>>>,
    backbone: Option<Arc<Backbone>>,
    resize: ResizePolicy,
    video_id: String,
    stats: Arc<Mutex<LatencyStats>>,
}

impl StreamState {
    pub fn new(w: usize, model: Option<Arc<ModelParams<f64>>>, backbone: Option<Arc<Backbone>>) -> Result<Self, StreamError> {
        if w == 0 {
            return Err(StreamError::ZeroWindow);
        }
        Ok(StreamState {
            w,
            window: VecDeque::with_capacity(w),
            frames_seen: 0,
            model,
            backbone,
            resize: ResizePolicy::Stretch,
            video_id: "stream".to_string(),
            stats: Arc::new(Mutex::new(LatencyStats::default())),
        })
    }

    pub fn with_resize(mut self, resize: ResizePolicy) -> Self {
        self.resize = resize;
        self
    }

    pub fn with_video_id(mut self, video_id: impl Into<String>) -> Self {
        self.video_id = video_id.into();
        self
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Frame indices currently buffered, oldest first.
    pub fn buffered_indices(&self) -> Vec<u64> {
        self.window.iter().map(|f| f.frame_index).collect()
    }

    /// Handle for reading latency statistics from another thread.
    pub fn stats_handle(&self) -> Arc<Mutex<LatencyStats>> {
        self.stats.clone()
    }

    pub fn push_frame(&mut self, frame: &RawFrame) -> Result<Option<EngagementScore>, StreamError> {
        self.push_frame_at(self.frames_seen, frame)
    }

    /// Pushes a frame with an explicit index (frames may have been dropped).
    pub fn push_frame_at(&mut self, frame_index: u64, frame: &RawFrame) -> Result<Option<EngagementScore>, StreamError> {
        let start = Instant::now();
        let model = self.model.clone().ok_or(StreamError::ModelNotLoaded)?;
        let backbone = self.backbone.as_deref().ok_or(BackboneError::BackboneNotLoaded)?;
        let pre = preprocess_frame_with(frame, self.resize)?;
        let fv = backbone.features_for_frame(&pre, &self.video_id, frame_index)?;
        self.advance(&model, fv, start)
    }

    /// Pushes an already-computed feature vector.
    pub fn push_features(&mut self, fv: FeatureVector) -> Result<Option<EngagementScore>, StreamError> {
        let start = Instant::now();
        let model = self.model.clone().ok_or(StreamError::ModelNotLoaded)?;
        self.advance(&model, fv, start)
    }

    fn advance(&mut self, model: &ModelParams<f64>, fv: FeatureVector, start: Instant) -> Result<Option<EngagementScore>, StreamError> {
        let frame_index = fv.frame_index;
        if self.window.len() == self.w {
            self.window.pop_front();
        }
        self.window.push_back(fv);
        self.frames_seen += 1;
        let value = if self.window.len() == self.w {
            let frames: Vec<&[f32]> = self.window.iter().map(|f| &*f.values).collect();
            Some(forward(model, &frames)?.0)
        } else {
            None
        };
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        self.stats.lock().expect("stats lock").record(ms);
        Ok(value.map(|value| EngagementScore { frame_index, value, wall_latency_ms: ms }))
    }

    pub fn latency_report(&self) -> Result<LatencyReport, StreamError> {
        self.stats.lock().expect("stats lock").report()
    }
}

/// Offline counterpart of the stream: one `(frame_index, score)` per window
/// of `w` consecutive features, indexed by the window's last frame.
pub fn batch_scores(model: &ModelParams<f64>, features: &[FeatureVector], w: usize) -> Result<Vec<(u64, f64)>, StreamError> {
    use rayon::prelude::*;
    if w == 0 {
        return Err(StreamError::ZeroWindow);
    }
    (0..crate::dataset::window_count(features.len(), w))
        .into_par_iter()
        .map(|i| {
            let frames: Vec<&[f32]> = features[i..i + w].iter().map(|f| &*f.values).collect();
            Ok((features[i + w - 1].frame_index, forward(model, &frames)?.0))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverloadPolicy {
    /// Evict the oldest queued frame when the queue is full.
    #[default]
    DropOldest,
    /// Make the producer wait for space.
    Block,
}

struct QueueInner {
    buf: VecDeque<(u64, RawFrame)>,
    closed: bool,
}

/// Bounded single-producer single-consumer frame queue.
pub struct FrameQueue {
    inner: Mutex<QueueInner>,
    not_empty: Condvar,
    not_full: Condvar,
    capacity: usize,
    policy: OverloadPolicy,
    dropped: AtomicU64,
}

impl FrameQueue {
    pub fn new(capacity: usize, policy: OverloadPolicy) -> Self {
        FrameQueue {
            inner: Mutex::new(QueueInner { buf: VecDeque::with_capacity(capacity.max(1)), closed: false }),
            not_empty: Condvar::new(),
            not_full: Condvar::new(),
            capacity: capacity.max(1),
            policy,
            dropped: AtomicU64::new(0),
        }
    }

    pub fn push(&self, index: u64, frame: RawFrame) {
        let mut g = self.inner.lock().expect("queue lock");
        while g.buf.len() >= self.capacity {
            match self.policy {
                OverloadPolicy::DropOldest => {
                    g.buf.pop_front();
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                }
                OverloadPolicy::Block => g = self.not_full.wait(g).expect("queue lock"),
            }
        }
        g.buf.push_back((index, frame));
        self.not_empty.notify_one();
    }

    pub fn close(&self) {
        self.inner.lock().expect("queue lock").closed = true;
        self.not_empty.notify_all();
    }

    /// Blocks until a frame is available; `None` once closed and drained.
    pub fn pop(&self) -> Option<(u64, RawFrame)> {
        let mut g = self.inner.lock().expect("queue lock");
        loop {
            if let Some(item) = g.buf.pop_front() {
                self.not_full.notify_one();
                return Some(item);
            }
            if g.closed {
                return None;
            }
            g = self.not_empty.wait(g).expect("queue lock");
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSummary {
    pub pushed: u64,
    pub dropped: u64,
    pub scores: u64,
}

/// Runs a producer thread feeding `frames` through a bounded queue into the
/// stream; `on_score` is called on the consumer side for every score.
pub fn run_stream<I>(
    state: &mut StreamState,
    frames: I,
    capacity: usize,
    policy: OverloadPolicy,
    mut on_score: impl FnMut(EngagementScore),
) -> Result<StreamSummary, StreamError>
where
    I: IntoIterator<Item = RawFrame>,
    I::IntoIter: Send,
{
    let queue = FrameQueue::new(capacity, policy);
    let frames = frames.into_iter();
    let mut pushed = 0;
    let mut scores = 0;
    let result = std::thread::scope(|s| {
        let q = &queue;
        s.spawn(move || {
            for (i, f) in frames.enumerate() {
                q.push(i as u64, f);
            }
            q.close();
        });
        while let Some((idx, frame)) = queue.pop() {
            pushed += 1;
            match state.push_frame_at(idx, &frame) {
                Ok(Some(score)) => {
                    scores += 1;
                    on_score(score);
                }
                Ok(None) => {}
                Err(e) => {
                    // drain so the producer can finish
                    while queue.pop().is_some() {}
                    return Err(e);
                }
            }
        }
        Ok(())
    });
    result?;
    Ok(StreamSummary { pushed, dropped: queue.dropped(), scores })
}
