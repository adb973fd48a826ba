mod common;

use std::sync::Arc;

use engage_core::annotation::AnnotationTrack;
use engage_core::backbone::{Backbone, BackboneDescriptor, FeatureVector};
use engage_core::dataset::preprocess::preprocess_frame;
use engage_core::dataset::{extract_windows, VideoRecord};
use engage_core::model::{forward, ModelParams};
use engage_core::stream::{batch_scores, run_stream, FrameQueue, OverloadPolicy, StreamError, StreamState};

#[test]
fn stream_equals_batch_bitwise() {
    let mut r = common::rng(11);
    let backbone = Arc::new(Backbone::load(&BackboneDescriptor::Mock { seed: 4, output_dim: 8 }).unwrap());
    let model = Arc::new(ModelParams::<f64>::init(8, 5, 2));
    let frames: Vec<_> = (0..25).map(|_| common::random_frame(&mut r, 20, 16)).collect();
    let w = 6;
    let mut st = StreamState::new(w, Some(model.clone()), Some(backbone.clone())).unwrap();
    let scores: Vec<_> = frames.iter().filter_map(|f| st.push_frame(f).unwrap()).collect();
    assert_eq!(scores.len(), frames.len() - w + 1);

    let feats: Vec<FeatureVector> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| backbone.features_for_frame(&preprocess_frame(f).unwrap(), "stream", i as u64).unwrap())
        .collect();
    let labels = AnnotationTrack::new("stream", "c", 10.0, vec![0.5; feats.len()], 0.0).unwrap();
    let video = VideoRecord::new("stream", 10.0, feats.clone(), labels).unwrap();
    for (s, win) in scores.iter().zip(extract_windows(&video, w)) {
        assert_eq!(s.value.to_bits(), forward(&model, &win.features).unwrap().0.to_bits());
        assert_eq!(s.frame_index as usize, win.start_index + w - 1);
    }
    let batch = batch_scores(&model, &feats, w).unwrap();
    assert_eq!(batch.len(), scores.len());
    assert!(batch.iter().zip(&scores).all(|(b, s)| b.0 == s.frame_index && b.1.to_bits() == s.value.to_bits()));
}

#[test]
fn warm_up_and_missing_model() {
    let mut st = StreamState::new(3, None, None).unwrap();
    assert!(matches!(st.push_features(FeatureVector::new("s", 0, vec![0.0])), Err(StreamError::ModelNotLoaded)));
    assert!(matches!(StreamState::new(0, None, None), Err(StreamError::ZeroWindow)));
    let model = Arc::new(ModelParams::<f64>::zeros(1, 1));
    let mut st = StreamState::new(3, Some(model), None).unwrap();
    assert!(st.push_features(FeatureVector::new("s", 0, vec![0.0])).unwrap().is_none());
    assert!(st.push_features(FeatureVector::new("s", 1, vec![0.0])).unwrap().is_none());
    let s = st.push_features(FeatureVector::new("s", 2, vec![0.0])).unwrap().unwrap();
    assert_eq!((s.frame_index, s.value), (2, 0.5));
    assert_eq!(st.buffered_indices(), vec![0, 1, 2]);
    st.push_features(FeatureVector::new("s", 3, vec![0.0])).unwrap();
    assert_eq!(st.buffered_indices(), vec![1, 2, 3]);
    let rep = st.latency_report().unwrap();
    assert_eq!(rep.count, 4);
}

#[test]
fn drop_oldest_queue_counts_drops() {
    let q = FrameQueue::new(2, OverloadPolicy::DropOldest);
    for i in 0..5 {
        q.push(i, engage_core::dataset::preprocess::RawFrame::filled(1, 1, [0, 0, 0]));
    }
    q.close();
    assert_eq!(q.dropped(), 3);
    assert_eq!(q.pop().map(|p| p.0), Some(3));
    assert_eq!(q.pop().map(|p| p.0), Some(4));
    assert!(q.pop().is_none());
}

#[test]
fn blocking_policy_scores_every_frame() {
    let mut r = common::rng(12);
    let backbone = Arc::new(Backbone::load(&BackboneDescriptor::Mock { seed: 0, output_dim: 4 }).unwrap());
    let model = Arc::new(ModelParams::<f64>::init(4, 3, 1));
    let frames: Vec<_> = (0..40).map(|_| common::random_frame(&mut r, 8, 8)).collect();
    let mut st = StreamState::new(4, Some(model), Some(backbone)).unwrap();
    let mut seen = Vec::new();
    let summary = run_stream(&mut st, frames, 1, OverloadPolicy::Block, |s| seen.push(s.frame_index)).unwrap();
    assert_eq!(summary.dropped, 0);
    assert_eq!(summary.pushed, 40);
    assert_eq!(summary.scores, 37);
    assert_eq!(seen, (3..40).collect::<Vec<u64>>());
}

#[test]
fn drop_policy_keeps_frame_indices_honest() {
    let mut r = common::rng(13);
    let backbone = Arc::new(Backbone::load(&BackboneDescriptor::Mock { seed: 0, output_dim: 4 }).unwrap());
    let model = Arc::new(ModelParams::<f64>::init(4, 3, 1));
    let frames: Vec<_> = (0..200).map(|_| common::random_frame(&mut r, 64, 48)).collect();
    let mut st = StreamState::new(2, Some(model), Some(backbone)).unwrap();
    let mut seen = Vec::new();
    let summary = run_stream(&mut st, frames, 1, OverloadPolicy::DropOldest, |s| seen.push(s.frame_index)).unwrap();
    assert_eq!(summary.pushed + summary.dropped, 200);
    assert!(seen.windows(2).all(|w| w[0] < w[1]));
}
