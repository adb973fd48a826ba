//! Deterministic stand-in for the convolutional feature extractor.
//!
//! The frame is mean-pooled to a 16x16 grid per channel (14x14 pixel blocks,
//! channel-major, each mean accumulated in `f64` row by row and stored as
//! `f32`). The grid is folded into a 64-bit digest:
//! `h = splitmix64(seed)`, then `h = splitmix64(h ^ bits(cell))` for every
//! cell in order. Component `k` is `splitmix64(h ^ splitmix64(k))` mapped to
//! `[-1, 1)` through its top 53 bits.

use crate::dataset::preprocess::{PreprocessedFrame, FRAME_SIZE};

pub const GRID_SIZE: usize = 16;
const BLOCK: usize = FRAME_SIZE / GRID_SIZE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockBackbone {
    seed: u64,
    output_dim: usize,
}

impl MockBackbone {
    pub fn new(seed: u64, output_dim: usize) -> Self {
        MockBackbone { seed, output_dim }
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn embed(&self, frame: &PreprocessedFrame) -> Vec<f32> {
        mock_features(self.seed, self.output_dim, &pooled_grid(frame))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Channel-major 3x16x16 block means.
pub fn pooled_grid(frame: &PreprocessedFrame) -> Vec<f32> {
    let mut grid = Vec::with_capacity(3 * GRID_SIZE * GRID_SIZE);
    for c in 0..3 {
        for gy in 0..GRID_SIZE {
            for gx in 0..GRID_SIZE {
                let mut sum = 0.0f64;
                for y in gy * BLOCK..(gy + 1) * BLOCK {
                    let row = (c * FRAME_SIZE + y) * FRAME_SIZE;
                    for x in gx * BLOCK..(gx + 1) * BLOCK {
                        sum += frame.data[row + x] as f64;
                    }
                }
                grid.push((sum / (BLOCK * BLOCK) as f64) as f32);
            }
        }
    }
    grid
}

pub fn mock_features(seed: u64, dim: usize, grid: &[f32]) -> Vec<f32> {
    let mut h = splitmix64(seed);
    for cell in grid {
        h = splitmix64(h ^ cell.to_bits() as u64);
    }
    (0..dim as u64)
        .map(|k| {
            let u = splitmix64(h ^ splitmix64(k));
            ((u >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) as f32
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::preprocess::{preprocess_frame, RawFrame};

    #[test]
    fn identical_frames_identical_vectors() {
        let bb = MockBackbone::new(3, 32);
        let f = preprocess_frame(&RawFrame::filled(64, 48, [10, 200, 30])).unwrap();
        assert_eq!(bb.embed(&f), bb.embed(&f.clone()));
        assert!(bb.embed(&f).iter().all(|v| (-1.0..1.0).contains(v)));
    }

    #[test]
    fn seed_changes_output() {
        let f = preprocess_frame(&RawFrame::filled(8, 8, [1, 2, 3])).unwrap();
        assert_ne!(MockBackbone::new(1, 8).embed(&f), MockBackbone::new(2, 8).embed(&f));
    }
}
