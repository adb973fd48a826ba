//! Per-frame feature providers.
//!
//! The convolutional feature extractor is frozen, so it is modelled as a
//! pure function from a preprocessed frame to a fixed-size vector. Three
//! providers exist: stored vectors, a deterministic mock, and an ONNX model.

mod feature_file;
mod mock;
#[cfg(feature = "onnx")]
mod onnx;

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::preprocess::PreprocessedFrame;

pub use feature_file::{
    decode_features, read_feature_file, read_feature_file_expect, write_feature_file, write_feature_file_with_dim,
    FEATURE_HEADER_LEN, FEATURE_MAGIC, FEATURE_VERSION,
};
pub use mock::{mock_features, pooled_grid, MockBackbone, GRID_SIZE};

/// Output width of the reference feature extractor.
pub const DEFAULT_FEATURE_DIM: usize = 2048;
/// Environment variable overriding the ONNX model path.
pub const BACKBONE_ENV: &str = "ENGAGE_BACKBONE";

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("backbone not loaded")]
    BackboneNotLoaded,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("feature file magic bytes are wrong")]
    BadMagic,
    #[error("feature file is truncated")]
    TruncatedFile,
    #[error("feature file dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("unsupported feature file version {0}")]
    UnsupportedVersion(u32),
    #[error("no stored feature for video {video_id} frame {frame_index}")]
    MissingFeature { video_id: String, frame_index: u64 },
    #[error("non-finite feature component")]
    NonFinite,
    #[error("invalid backbone descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A frame embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub video_id: Arc<str>,
    pub frame_index: u64,
    pub values: Arc<[f32]>,
}

impl FeatureVector {
    pub fn new(video_id: &str, frame_index: u64, values: Vec<f32>) -> Self {
        FeatureVector { video_id: Arc::from(video_id), frame_index, values: values.into() }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneDescriptor {
    /// Feature files `<video_id>.egft` in a directory.
    Precomputed { dir: PathBuf, output_dim: usize },
    /// An ONNX model with input 1x3x224x224 and output 1xdim.
    ModelFile { path: PathBuf, output_dim: usize },
    /// Seeded pooled-grid hash.
    Mock { seed: u64, output_dim: usize },
}

impl Default for BackboneDescriptor {
    fn default() -> Self {
        BackboneDescriptor::Mock { seed: 0, output_dim: DEFAULT_FEATURE_DIM }
    }
}

impl BackboneDescriptor {
    pub fn output_dim(&self) -> usize {
        match self {
            BackboneDescriptor::Precomputed { output_dim, .. }
            | BackboneDescriptor::ModelFile { output_dim, .. }
            | BackboneDescriptor::Mock { output_dim, .. } => *output_dim,
        }
    }

    pub fn validate(&self) -> Result<(), BackboneError> {
        if self.output_dim() == 0 {
            return Err(BackboneError::InvalidDescriptor("output_dim must be at least 1".into()));
        }
        match self {
            BackboneDescriptor::Precomputed { dir, .. } if !dir.is_dir() => {
                Err(BackboneError::InvalidDescriptor(format!("{} is not a directory", dir.display())))
            }
            BackboneDescriptor::ModelFile { path, .. } if !model_path(path).is_file() => Err(
                BackboneError::InvalidDescriptor(format!("{} is not a file", model_path(path).display())),
            ),
            _ => Ok(()),
        }
    }
}

fn model_path(configured: &std::path::Path) -> PathBuf {
    std::env::var_os(BACKBONE_ENV).map(PathBuf::from).unwrap_or_else(|| configured.to_path_buf())
}

/// Stored vectors keyed by video and frame index.
#[derive(Debug, Default)]
pub struct PrecomputedStore {
    dim: usize,
    videos: HashMap<String, HashMap<u64, FeatureVector>>,
}

impl PrecomputedStore {
    pub fn load(dir: &std::path::Path, dim: usize) -> Result<Self, BackboneError> {
        let mut store = PrecomputedStore { dim, videos: HashMap::new() };
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "egft"))
            .collect();
        paths.sort();
        for p in paths {
            store.insert(read_feature_file_expect(&p, dim)?);
        }
        Ok(store)
    }

    pub fn insert(&mut self, vectors: Vec<FeatureVector>) {
        for v in vectors {
            self.videos.entry(v.video_id.to_string()).or_default().insert(v.frame_index, v);
        }
    }

    pub fn get(&self, video_id: &str, frame_index: u64) -> Option<&FeatureVector> {
        self.videos.get(video_id)?.get(&frame_index)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// A loaded feature provider. Read-only after construction.
pub enum Backbone {
    Precomputed(PrecomputedStore),
    Mock(MockBackbone),
    #[cfg(feature = "onnx")]
    Onnx(onnx::OnnxBackbone),
}

impl std::fmt::Debug for Backbone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backbone::Precomputed(s) => write!(f, "Backbone::Precomputed(dim={})", s.dim()),
            Backbone::Mock(m) => write!(f, "Backbone::Mock({m:?})"),
            #[cfg(feature = "onnx")]
            Backbone::Onnx(m) => write!(f, "Backbone::Onnx(dim={})", m.output_dim()),
        }
    }
}

impl Backbone {
    pub fn load(desc: &BackboneDescriptor) -> Result<Self, BackboneError> {
        desc.validate()?;
        match desc {
            BackboneDescriptor::Mock { seed, output_dim } => Ok(Backbone::Mock(MockBackbone::new(*seed, *output_dim))),
            BackboneDescriptor::Precomputed { dir, output_dim } => {
                Ok(Backbone::Precomputed(PrecomputedStore::load(dir, *output_dim)?))
            }
            #[cfg(feature = "onnx")]
            BackboneDescriptor::ModelFile { path, output_dim } => {
                Ok(Backbone::Onnx(onnx::OnnxBackbone::load(&model_path(path), *output_dim)?))
            }
            #[cfg(not(feature = "onnx"))]
            BackboneDescriptor::ModelFile { .. } => {
                Err(BackboneError::Model("built without the `onnx` feature".into()))
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Backbone::Precomputed(s) => s.dim(),
            Backbone::Mock(m) => m.output_dim(),
            #[cfg(feature = "onnx")]
            Backbone::Onnx(m) => m.output_dim(),
        }
    }

    /// Embeds one preprocessed frame. Stored features ignore the pixels and
    /// are looked up by `(video_id, frame_index)`.
    pub fn features_for_frame(
        &self,
        frame: &PreprocessedFrame,
        video_id: &str,
        frame_index: u64,
    ) -> Result<FeatureVector, BackboneError> {
        let values = match self {
            Backbone::Precomputed(store) => {
                return store.get(video_id, frame_index).cloned().ok_or_else(|| BackboneError::MissingFeature {
                    video_id: video_id.to_string(),
                    frame_index,
                })
            }
            Backbone::Mock(m) => m.embed(frame),
            #[cfg(feature = "onnx")]
            Backbone::Onnx(m) => m.embed(frame)?,
        };
        if values.len() != self.output_dim() {
            return Err(BackboneError::DimensionMismatch { expected: self.output_dim(), actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BackboneError::NonFinite);
        }
        Ok(FeatureVector::new(video_id, frame_index, values))
    }
}

/// Free-function form that accepts a possibly missing backbone.
pub fn features_for_frame(
    backbone: Option<&Backbone>,
    frame: &PreprocessedFrame,
    video_id: &str,
    frame_index: u64,
) -> Result<FeatureVector, BackboneError> {
    backbone.ok_or(BackboneError::BackboneNotLoaded)?.features_for_frame(frame, video_id, frame_index)
}
