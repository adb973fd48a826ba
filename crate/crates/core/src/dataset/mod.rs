//! Window-sample datasets built from per-video features and annotation tracks.

pub mod preprocess;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::{AnnotationError, AnnotationTrack};
use crate::backbone::{read_feature_file, BackboneError, FeatureVector};

pub const SPLIT_PROBABILITIES: (f64, f64, f64) = (0.5, 0.3, 0.2);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate video id {0}")]
    DuplicateId(String),
    #[error("video list is empty")]
    EmptyVideoList,
    #[error("video {video_id}: {frames} frames but {labels} labels")]
    LengthMismatch { video_id: String, frames: usize, labels: usize },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("label sidecar {path} line {line}: {reason}")]
    Sidecar { path: String, line: usize, reason: String },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A video's frame features with one label per frame.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub video_id: String,
    pub rate_hz: f64,
    pub features: Vec<FeatureVector>,
    pub labels: AnnotationTrack,
}

impl VideoRecord {
    pub fn new(video_id: impl Into<String>, rate_hz: f64, features: Vec<FeatureVector>, labels: AnnotationTrack) -> Result<Self, DatasetError> {
        let video_id = video_id.into();
        if features.len() != labels.values.len() {
            return Err(DatasetError::LengthMismatch {
                video_id,
                frames: features.len(),
                labels: labels.values.len(),
            });
        }
        Ok(VideoRecord { video_id, rate_hz, features, labels })
    }

    pub fn frame_count(&self) -> usize {
        self.features.len()
    }
}

/// Pairs each annotation sample with the nearest video frame. Videos recorded
/// at a different rate are thereby resampled onto the annotation grid.
pub fn align_video(features: &[FeatureVector], video_rate_hz: f64, track: &AnnotationTrack) -> Result<VideoRecord, DatasetError> {
    let mut frames = Vec::new();
    let mut values = Vec::new();
    for (i, &v) in track.values.iter().enumerate() {
        let j = (track.time_of(i) * video_rate_hz).round() as usize;
        if j >= features.len() {
            break;
        }
        frames.push(features[j].clone());
        values.push(v);
    }
    let labels = AnnotationTrack {
        values,
        ..track.clone()
    };
    VideoRecord::new(track.video_id.clone(), track.rate_hz, frames, labels)
}

/// `w` consecutive frame features labelled with the value at the last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub video_id: Arc<str>,
    pub start_index: usize,
    pub features: Vec<Arc<[f32]>>,
    pub label: f64,
}

impl WindowSample {
    pub fn window_len(&self) -> usize {
        self.features.len()
    }
}

/// Number of windows a video of `frames` frames yields.
pub fn window_count(frames: usize, w: usize) -> usize {
    if w == 0 {
        0
    } else {
        (frames + 1).saturating_sub(w)
    }
}

/// All windows of length `w`, ordered by start index. Videos shorter than
/// `w` yield nothing.
pub fn extract_windows(video: &VideoRecord, w: usize) -> Vec<WindowSample> {
    let video_id: Arc<str> = Arc::from(video.video_id.as_str());
    (0..window_count(video.frame_count(), w))
        .map(|i| WindowSample {
            video_id: video_id.clone(),
            start_index: i,
            features: video.features[i..i + w].iter().map(|f| f.values.clone()).collect(),
            label: video.labels.values[i + w - 1],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Test,
    Validation,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::Test => "test",
            Partition::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub validation: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn partition_of(&self, video_id: &str) -> Option<Partition> {
        let has = |v: &Vec<String>| v.binary_search_by(|x| x.as_str().cmp(video_id)).is_ok();
        if has(&self.train) {
            Some(Partition::Train)
        } else if has(&self.test) {
            Some(Partition::Test)
        } else if has(&self.validation) {
            Some(Partition::Validation)
        } else {
            None
        }
    }
}

/// Uniform draw in `[0,1)` from SHA-256 of the seed and a key.
pub fn keyed_uniform(seed: u64, key: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().unwrap());
    (x >> 11) as f64 / (1u64 << 53) as f64
}

pub fn assign_partition(seed: u64, video_id: &str) -> Partition {
    let u = keyed_uniform(seed, video_id);
    let (p_train, p_test, _) = SPLIT_PROBABILITIES;
    if u < p_train {
        Partition::Train
    } else if u < p_train + p_test {
        Partition::Test
    } else {
        Partition::Validation
    }
}

/// Assigns each video independently; the result depends only on the seed
/// and the set of ids. Partition lists are sorted.
pub fn split_videos<S: AsRef<str>>(video_ids: &[S], seed: u64) -> Result<DatasetSplit, DatasetError> {
    if video_ids.is_empty() {
        return Err(DatasetError::EmptyVideoList);
    }
    let mut seen = HashSet::new();
    let mut split = DatasetSplit { train: vec![], test: vec![], validation: vec![], seed };
    for id in video_ids {
        let id = id.as_ref();
        if !seen.insert(id) {
            return Err(DatasetError::DuplicateId(id.to_string()));
        }
        match assign_partition(seed, id) {
            Partition::Train => split.train.push(id.to_string()),
            Partition::Test => split.test.push(id.to_string()),
            Partition::Validation => split.validation.push(id.to_string()),
        }
    }
    split.train.sort();
    split.test.sort();
    split.validation.sort();
    Ok(split)
}

/// Picks one coder's track per video, seeded per video id.
pub fn choose_annotations(tracks: &[AnnotationTrack], seed: u64) -> BTreeMap<String, AnnotationTrack> {
    let mut by_video: BTreeMap<&str, Vec<&AnnotationTrack>> = BTreeMap::new();
    for t in tracks {
        by_video.entry(t.video_id.as_str()).or_default().push(t);
    }
    by_video
        .into_iter()
        .map(|(video, mut candidates)| {
            candidates.sort_by(|a, b| a.coder_id.cmp(&b.coder_id));
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (keyed_uniform(seed, video).to_bits()));
            let chosen = *candidates.choose(&mut rng).expect("at least one track");
            (video.to_string(), chosen.clone())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVideo {
    pub video_id: String,
    pub coder_id: String,
    pub split: Partition,
    pub frame_count: usize,
    pub start_offset_s: f64,
    pub samples: usize,
    pub feature_file: PathBuf,
}

/// Reproducibility record for a built dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub w: usize,
    pub rate_hz: f64,
    pub video_rate_hz: f64,
    pub videos: Vec<ManifestVideo>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| DatasetError::Manifest(e.to_string()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))
    }
}

/// Windows grouped by partition.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub validation: Vec<WindowSample>,
}

impl Dataset {
    pub fn part(&self, p: Partition) -> &[WindowSample] {
        match p {
            Partition::Train => &self.train,
            Partition::Test => &self.test,
            Partition::Validation => &self.validation,
        }
    }

    fn part_mut(&mut self, p: Partition) -> &mut Vec<WindowSample> {
        match p {
            Partition::Train => &mut self.train,
            Partition::Test => &mut self.test,
            Partition::Validation => &mut self.validation,
        }
    }
}

/// Splits videos, selects one annotation per video, aligns and windows.
pub fn build_dataset(
    videos: &[(String, Vec<FeatureVector>)],
    tracks: &[AnnotationTrack],
    video_rate_hz: f64,
    w: usize,
    seed: u64,
) -> Result<(DatasetManifest, Dataset), DatasetError> {
    let chosen = choose_annotations(tracks, seed);
    let usable: Vec<&(String, Vec<FeatureVector>)> = videos.iter().filter(|(id, _)| chosen.contains_key(id)).collect();
    for (id, _) in videos.iter().filter(|(id, _)| !chosen.contains_key(id)) {
        log::warn!("video {id} has no annotation track; skipped");
    }
    let ids: Vec<&str> = usable.iter().map(|(id, _)| id.as_str()).collect();
    let split = split_videos(&ids, seed)?;
    let mut manifest = DatasetManifest { seed, w, rate_hz: 0.0, video_rate_hz, videos: vec![] };
    let mut data = Dataset::default();
    let mut ordered = usable;
    ordered.sort_by(|a, b| a.0.cmp(&b.0));
    for (id, feats) in ordered {
        let track = &chosen[id];
        manifest.rate_hz = track.rate_hz;
        let record = align_video(feats, video_rate_hz, track)?;
        let windows = extract_windows(&record, w);
        let part = split.partition_of(id).expect("split covers every id");
        manifest.videos.push(ManifestVideo {
            video_id: id.clone(),
            coder_id: track.coder_id.clone(),
            split: part,
            frame_count: record.frame_count(),
            start_offset_s: track.start_offset_s,
            samples: windows.len(),
            feature_file: PathBuf::from(format!("{id}.egft")),
        });
        data.part_mut(part).extend(windows);
    }
    Ok((manifest, data))
}

/// `video_id,start_index,label` rows for a set of windows.
pub fn label_sidecar_csv(samples: &[WindowSample]) -> String {
    let mut out = String::from("video_id,start_index,label\n");
    for s in samples {
        let _ = writeln!(out, "{},{},{}", s.video_id, s.start_index, s.label);
    }
    out
}

pub fn sidecar_path(dir: &Path, part: Partition) -> PathBuf {
    dir.join(format!("{}_labels.csv", part.name()))
}

/// Writes the manifest and one label sidecar per partition into `dir`.
pub fn save_dataset(manifest: &DatasetManifest, data: &Dataset, dir: &Path) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    manifest.save(&dir.join("manifest.json"))?;
    for p in [Partition::Train, Partition::Test, Partition::Validation] {
        fs::write(sidecar_path(dir, p), label_sidecar_csv(data.part(p)))?;
    }
    Ok(())
}

fn parse_sidecar(path: &Path) -> Result<Vec<(String, usize, f64)>, DatasetError> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, reason: &str| DatasetError::Sidecar {
        path: path.display().to_string(),
        line,
        reason: reason.to_string(),
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let mut f = line.split(',');
        let (Some(v), Some(s), Some(l)) = (f.next(), f.next(), f.next()) else {
            return Err(err(i + 1, "expected 3 fields"));
        };
        let start: usize = s.parse().map_err(|_| err(i + 1, "bad start_index"))?;
        let label: f64 = l.parse().map_err(|_| err(i + 1, "bad label"))?;
        rows.push((v.to_string(), start, label));
    }
    Ok(rows)
}

/// Rebuilds windows from a saved dataset directory and a feature directory.
pub fn load_dataset(dir: &Path, features_dir: &Path) -> Result<(DatasetManifest, Dataset), DatasetError> {
    let manifest = DatasetManifest::load(&dir.join("manifest.json"))?;
    let mut feats: BTreeMap<String, Vec<FeatureVector>> = BTreeMap::new();
    for v in &manifest.videos {
        feats.insert(v.video_id.clone(), read_feature_file(&features_dir.join(&v.feature_file))?);
    }
    let mut data = Dataset::default();
    for p in [Partition::Train, Partition::Test, Partition::Validation] {
        let path = sidecar_path(dir, p);
        for (line, (video, start, label)) in parse_sidecar(&path)?.into_iter().enumerate() {
            let bad = |reason: &str| DatasetError::Sidecar {
                path: path.display().to_string(),
                line: line + 2,
                reason: reason.to_string(),
            };
            let Some(frames) = feats.get(&video) else {
                return Err(bad("video not in manifest"));
            };
            let meta = manifest.videos.iter().find(|m| m.video_id == video).expect("present");
            if start + manifest.w > meta.frame_count {
                return Err(bad("window exceeds video"));
            }
            let features = (start..start + manifest.w)
                .map(|i| {
                    let t = meta.start_offset_s + i as f64 / manifest.rate_hz;
                    let j = (t * manifest.video_rate_hz).round() as usize;
                    frames.get(j).map(|f| f.values.clone())
                })
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("frame index beyond feature file"))?;
            data.part_mut(p).push(WindowSample { video_id: Arc::from(video.as_str()), start_index: start, features, label });
        }
    }
    Ok((manifest, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(n: usize, w_labels: impl Fn(usize) -> f64) -> VideoRecord {
        let feats = (0..n).map(|i| FeatureVector::new("v", i as u64, vec![i as f32])).collect();
        let labels = AnnotationTrack::new("v", "c", 10.0, (0..n).map(w_labels).collect(), 0.0).unwrap();
        VideoRecord::new("v", 10.0, feats, labels).unwrap()
    }

    #[test]
    fn twelve_frames_ten_window() {
        let ws = extract_windows(&video(12, |_| 0.5), 10);
        assert_eq!(ws.iter().map(|s| s.start_index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(ws.iter().all(|s| s.window_len() == 10));
    }

    #[test]
    fn short_video_yields_nothing() {
        assert!(extract_windows(&video(9, |_| 0.5), 10).is_empty());
    }

    #[test]
    fn label_is_last_frame() {
        let ws = extract_windows(&video(5, |i| 0.1 * (i + 1) as f64), 2);
        assert_eq!(ws[0].label, 0.2);
        assert_eq!(&*ws[0].features[1], &[1.0f32][..]);
        assert_eq!(ws[1].features[0], ws[0].features[1]);
    }

    #[test]
    fn mismatched_record_rejected() {
        let labels = AnnotationTrack::new("v", "c", 10.0, vec![0.5; 3], 0.0).unwrap();
        assert!(matches!(VideoRecord::new("v", 10.0, vec![], labels), Err(DatasetError::LengthMismatch { .. })));
    }

    #[test]
    fn single_video_one_partition() {
        let s = split_videos(&["only"], 1).unwrap();
        assert_eq!(s.train.len() + s.test.len() + s.validation.len(), 1);
    }

    #[test]
    fn split_is_deterministic_and_order_free() {
        let ids: Vec<String> = (0..50).map(|i| format!("v{i}")).collect();
        let mut rev = ids.clone();
        rev.reverse();
        assert_eq!(split_videos(&ids, 9).unwrap(), split_videos(&ids, 9).unwrap());
        assert_eq!(split_videos(&ids, 9).unwrap(), split_videos(&rev, 9).unwrap());
        assert_ne!(split_videos(&ids, 9).unwrap(), split_videos(&ids, 10).unwrap());
    }

    #[test]
    fn duplicate_ids_rejected() {
        assert!(matches!(split_videos(&["a", "a"], 0), Err(DatasetError::DuplicateId(_))));
    }

    #[test]
    fn align_resamples_faster_video() {
        let feats: Vec<_> = (0..40).map(|i| FeatureVector::new("v", i, vec![i as f32])).collect();
        let track = AnnotationTrack::new("v", "c", 10.0, vec![0.5; 20], 0.0).unwrap();
        let rec = align_video(&feats, 20.0, &track).unwrap();
        assert_eq!(rec.frame_count(), 20);
        assert_eq!(rec.features[3].frame_index, 6);
    }

    #[test]
    fn annotation_choice_is_seeded() {
        let tracks: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|c| AnnotationTrack::new("v", *c, 10.0, vec![0.5], 0.0).unwrap())
            .collect();
        let x = choose_annotations(&tracks, 4);
        let mut rev = tracks.clone();
        rev.reverse();
        assert_eq!(x, choose_annotations(&rev, 4));
    }
}
