//! Frame resizing and ImageNet normalization.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_SIZE: usize = 224;
pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("expected 3 channels, got {0}")]
    BadChannelCount(usize),
    #[error("frame has zero size ({width}x{height})")]
    EmptyFrame { width: usize, height: usize },
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("cannot decode image {path}: {reason}")]
    Decode { path: String, reason: String },
}

/// An 8-bit interleaved (HxWxC) image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self, PreprocessError> {
        if data.len() != width * height * channels {
            return Err(PreprocessError::BufferSize { expected: width * height * channels, actual: data.len() });
        }
        Ok(RawFrame { width, height, channels, data })
    }

    pub fn rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self, PreprocessError> {
        Self::new(width, height, 3, data)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        RawFrame { width, height, channels: 3, data }
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Decodes a PNG or JPEG file into RGB.
    pub fn open(path: &Path) -> Result<Self, PreprocessError> {
        let img = image::open(path).map_err(|e| PreprocessError::Decode {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Ok(RawFrame { width: w as usize, height: h as usize, channels: 3, data: rgb.into_raw() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResizePolicy {
    /// Bilinear resize straight to 224x224, ignoring aspect ratio.
    #[default]
    Stretch,
    /// Aspect-preserving resize, centered, padded with black.
    Letterbox,
}

/// A normalized 3x224x224 frame in channel-major (CHW) order.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedFrame {
    pub data: Vec<f32>,
}

impl PreprocessedFrame {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * FRAME_SIZE + y) * FRAME_SIZE + x]
    }
}

pub fn normalize(c: usize, pixel: f64) -> f64 {
    (pixel / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]
}

pub fn preprocess_frame(raw: &RawFrame) -> Result<PreprocessedFrame, PreprocessError> {
    preprocess_frame_with(raw, ResizePolicy::Stretch)
}

pub fn preprocess_frame_with(raw: &RawFrame, policy: ResizePolicy) -> Result<PreprocessedFrame, PreprocessError> {
    if raw.channels != 3 {
        return Err(PreprocessError::BadChannelCount(raw.channels));
    }
    if raw.width == 0 || raw.height == 0 {
        return Err(PreprocessError::EmptyFrame { width: raw.width, height: raw.height });
    }
    if raw.data.len() != raw.width * raw.height * 3 {
        return Err(PreprocessError::BufferSize { expected: raw.width * raw.height * 3, actual: raw.data.len() });
    }
    let (out_w, out_h, off_x, off_y) = match policy {
        ResizePolicy::Stretch => (FRAME_SIZE, FRAME_SIZE, 0, 0),
        ResizePolicy::Letterbox => {
            let scale = (FRAME_SIZE as f64 / raw.width as f64).min(FRAME_SIZE as f64 / raw.height as f64);
            let w = ((raw.width as f64 * scale).round() as usize).clamp(1, FRAME_SIZE);
            let h = ((raw.height as f64 * scale).round() as usize).clamp(1, FRAME_SIZE);
            (w, h, (FRAME_SIZE - w) / 2, (FRAME_SIZE - h) / 2)
        }
    };
    let mut data = vec![0f32; 3 * FRAME_SIZE * FRAME_SIZE];
    for c in 0..3 {
        let pad = normalize(c, 0.0) as f32;
        data[c * FRAME_SIZE * FRAME_SIZE..(c + 1) * FRAME_SIZE * FRAME_SIZE].fill(pad);
    }
    let xs: Vec<(usize, usize, f64)> = (0..out_w).map(|x| source_coord(x, out_w, raw.width)).collect();
    let ys: Vec<(usize, usize, f64)> = (0..out_h).map(|y| source_coord(y, out_h, raw.height)).collect();
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let p00 = raw.pixel(x0, y0, c) as f64;
                let p01 = raw.pixel(x1, y0, c) as f64;
                let p10 = raw.pixel(x0, y1, c) as f64;
                let p11 = raw.pixel(x1, y1, c) as f64;
                let top = p00 + (p01 - p00) * fx;
                let bottom = p10 + (p11 - p10) * fx;
                let v = top + (bottom - top) * fy;
                data[(c * FRAME_SIZE + oy + off_y) * FRAME_SIZE + ox + off_x] = normalize(c, v) as f32;
            }
        }
    }
    Ok(PreprocessedFrame { data })
}

/// Half-pixel-centre bilinear source coordinate for output index `i`.
fn source_coord(i: usize, out_len: usize, in_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}
