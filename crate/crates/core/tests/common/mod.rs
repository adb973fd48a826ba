#![allow(dead_code)]

use engage_core::agreement::ema_alpha;
use engage_core::annotation::AnnotationTrack;
use engage_core::backbone::{FeatureVector, MockBackbone};
use engage_core::dataset::preprocess::{preprocess_frame, RawFrame};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RATE_HZ: f64 = 10.0;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random RGB frame.
pub fn random_frame(r: &mut impl Rng, width: usize, height: usize) -> RawFrame {
    let data = (0..width * height * 3).map(|_| r.gen()).collect();
    RawFrame::rgb(width, height, data).unwrap()
}

/// Mock-backbone features for `frames` random frames.
pub fn mock_video(id: &str, frames: usize, dim: usize, seed: u64) -> Vec<FeatureVector> {
    let backbone = MockBackbone::new(seed, dim);
    let mut r = rng(seed ^ fxhash(id));
    (0..frames)
        .map(|i| {
            let f = random_frame(&mut r, 16, 12);
            FeatureVector::new(id, i as u64, backbone.embed(&preprocess_frame(&f).unwrap()))
        })
        .collect()
}

fn fxhash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Engagement = 0.5 + EMA(S) of `coef . x`, clipped to [0, 1].
pub fn ema_labels(features: &[FeatureVector], coef: &[f64], s: f64) -> Vec<f64> {
    let alpha = ema_alpha(s, RATE_HZ);
    let mut state = 0.0;
    features
        .iter()
        .map(|f| {
            let drive: f64 = f.values.iter().zip(coef).map(|(&x, c)| x as f64 * c).sum();
            state += alpha * (drive - state);
            (0.5 + state).clamp(0.0, 1.0)
        })
        .collect()
}

pub struct Corpus {
    pub videos: Vec<(String, Vec<FeatureVector>)>,
    pub tracks: Vec<AnnotationTrack>,
}

/// Videos with mock features and one EMA-label track each.
pub fn synthetic_corpus(n: usize, dim: usize, frames: (usize, usize), seed: u64) -> Corpus {
    let mut r = rng(seed);
    // sum of squares 2.4 puts the label std near 0.2
    let raw: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    let coef: Vec<f64> = raw.iter().map(|c| c / norm * 2.4f64.sqrt()).collect();
    let mut videos = Vec::new();
    let mut tracks = Vec::new();
    for v in 0..n {
        let id = format!("vid{v:04}");
        let len = r.gen_range(frames.0..=frames.1);
        let feats = mock_video(&id, len, dim, seed);
        let labels = ema_labels(&feats, &coef, 1.0);
        tracks.push(AnnotationTrack::new(&id, "c0", RATE_HZ, labels, 0.0).unwrap());
        videos.push((id, feats));
    }
    Corpus { videos, tracks }
}

/// Slowly varying latent in [0.15, 0.85] built from a few sinusoids.
pub fn smooth_latent(r: &mut impl Rng, len: usize) -> Vec<f64> {
    let comps: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (r.gen_range(0.05..0.12), r.gen_range(1.0 / 900.0..1.0 / 180.0), r.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    (0..len)
        .map(|i| {
            let t = i as f64 / RATE_HZ;
            let v: f64 = comps.iter().map(|(a, f, p)| a * (std::f64::consts::TAU * f * t + p).sin()).sum();
            (0.5 + v).clamp(0.15, 0.85)
        })
        .collect()
}

/// Box-Muller normal sample.
pub fn normal(r: &mut impl Rng) -> f64 {
    let u1: f64 = r.gen_range(f64::EPSILON..1.0);
    let u2: f64 = r.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Coders sharing a latent per video, each adding N(0, sigma) noise.
pub fn noisy_coders(videos: usize, coders: usize, len: (usize, usize), sigma: f64, seed: u64) -> Vec<AnnotationTrack> {
    let mut r = rng(seed);
    let mut tracks = Vec::new();
    for v in 0..videos {
        let n = r.gen_range(len.0..=len.1);
        let latent = smooth_latent(&mut r, n);
        for c in 0..coders {
            let values = latent.iter().map(|&x| (x + sigma * normal(&mut r)).clamp(0.0, 1.0)).collect();
            tracks.push(AnnotationTrack::new(format!("v{v}"), format!("coder{c}"), RATE_HZ, values, 0.0).unwrap());
        }
    }
    tracks
}
