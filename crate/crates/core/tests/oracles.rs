//! Independent reference computations checked against the library.

mod common;

use engage_core::agreement::{ema_alpha, smooth_track, spearman_rho};
use engage_core::annotation::AnnotationTrack;
use engage_core::backbone::{write_feature_file, FeatureVector, MockBackbone, FEATURE_HEADER_LEN};
use engage_core::dataset::preprocess::{preprocess_frame, RawFrame, FRAME_SIZE};
use engage_core::dataset::{window_count, WindowSample};
use engage_core::eval::{derive_ground_truth, roc_auc, test_mse, InteractionLabelTrack, InteractionTag, Interval};
use engage_core::model::{forward, loss_and_gradients, ModelParams};
use engage_core::optim::{adagrad_step, OptimizerState};
use rand::Rng;
use std::sync::Arc;

fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spearman_matches_explicit_rank_oracle() {
    let mut r = common::rng(1);
    let mut checked = 0;
    while checked < 300 {
        let a: Vec<f64> = (0..12).map(|_| r.gen_range(0..6) as f64).collect();
        let b: Vec<f64> = (0..12).map(|_| r.gen_range(0..5) as f64 * 0.5).collect();
        let Ok(got) = spearman_rho(&a, &b) else { continue };
        let want = pearson(&brute_ranks(&a), &brute_ranks(&b));
        assert!((got.rho - want).abs() < 1e-12, "{} vs {want}", got.rho);
        let sym = spearman_rho(&b, &a).unwrap();
        assert!((sym.rho - got.rho).abs() < 1e-15);
        let cubed: Vec<f64> = a.iter().map(|x| x * x * x).collect();
        assert!((spearman_rho(&cubed, &b).unwrap().rho - got.rho).abs() < 1e-12);
        checked += 1;
    }
}

#[test]
fn ema_step_response() {
    let t = AnnotationTrack::new("v", "c", 10.0, vec![0.0, 0.0, 1.0, 1.0, 1.0], 0.0).unwrap();
    let z = smooth_track(&t, 1.0).unwrap().values;
    let a = 1.0 - (-0.1f64).exp();
    assert!((a - 0.09516).abs() < 1e-5);
    assert!((ema_alpha(1.0, 10.0) - a).abs() < 1e-15);
    let mut oracle = vec![0.0];
    for &y in &t.values[1..] {
        let prev = *oracle.last().unwrap();
        oracle.push(a * y + (1.0 - a) * prev);
    }
    for (x, y) in z.iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-15);
    }
    assert!((z[2] - a).abs() < 1e-15);
    assert!((z[3] - (a + (1.0 - a) * a)).abs() < 1e-15);
}

#[test]
fn smoothing_limit_and_shift_equivariance() {
    let mut r = common::rng(2);
    let values: Vec<f64> = (0..50).map(|_| r.gen()).collect();
    let t = AnnotationTrack::new("v", "c", 10.0, values.clone(), 0.0).unwrap();
    let fast = smooth_track(&t, 1e-4).unwrap();
    assert!(fast.values.iter().zip(&values).all(|(a, b)| (a - b).abs() < 1e-6));
    let shifted = AnnotationTrack { start_offset_s: 3.0, ..t.clone() };
    let a = smooth_track(&shifted, 5.0).unwrap();
    let b = smooth_track(&t, 5.0).unwrap();
    assert_eq!(a.values, b.values);
    assert_eq!(a.start_offset_s, 3.0);
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Recomputes the mock embedding from the preprocessed frame buffer.
fn mock_oracle(seed: u64, dim: usize, chw: &[f32]) -> Vec<f32> {
    let mut cells = Vec::new();
    for c in 0..3 {
        for by in 0..16 {
            for bx in 0..16 {
                let mut s = 0.0f64;
                for y in 0..14 {
                    for x in 0..14 {
                        s += chw[c * 224 * 224 + (by * 14 + y) * 224 + bx * 14 + x] as f64;
                    }
                }
                cells.push((s / 196.0) as f32);
            }
        }
    }
    let h = cells.iter().fold(splitmix(seed), |h, v| splitmix(h ^ v.to_bits() as u64));
    (0..dim)
        .map(|k| {
            let bits = splitmix(h ^ splitmix(k as u64)) >> 11;
            (2.0 * (bits as f64 / 9007199254740992.0) - 1.0) as f32
        })
        .collect()
}

#[test]
fn mock_backbone_matches_recomputed_hash() {
    let mut r = common::rng(3);
    let b = MockBackbone::new(77, 32);
    for _ in 0..5 {
        let f = common::random_frame(&mut r, 40, 30);
        let pre = preprocess_frame(&f).unwrap();
        let got = b.embed(&pre);
        assert_eq!(got, mock_oracle(77, 32, &pre.data));
        assert!(got.iter().all(|v| (-1.0..1.0).contains(v)));
    }
    // one differing pixel block changes the vector
    let a = RawFrame::filled(224, 224, [10, 20, 30]);
    let mut c = a.clone();
    for y in 0..14 {
        for x in 0..14 {
            c.data[(y * 224 + x) * 3] = 200;
        }
    }
    let ea = b.embed(&preprocess_frame(&a).unwrap());
    let ec = b.embed(&preprocess_frame(&c).unwrap());
    assert_ne!(ea, ec);
    assert_ne!(MockBackbone::new(78, 32).embed(&preprocess_frame(&a).unwrap()), ea);
}

#[test]
fn preprocessing_constants_and_downsample() {
    let white = preprocess_frame(&RawFrame::filled(224, 224, [255, 255, 255])).unwrap();
    let want = [(1.0 - 0.485) / 0.229, (1.0 - 0.456) / 0.224, (1.0 - 0.406) / 0.225];
    for (c, w) in want.iter().enumerate() {
        assert!((white.at(c, 100, 7) as f64 - w).abs() < 1e-6);
    }
    assert!(want[0] > 2.2489 && want[0] < 2.249);
    assert!(want[1] > 2.4285 && want[1] < 2.4286);
    assert!((want[2] - 2.64).abs() < 1e-12);

    let mut r = common::rng(4);
    let small = common::random_frame(&mut r, FRAME_SIZE, FRAME_SIZE);
    let mut big = vec![0u8; 448 * 448 * 3];
    for y in 0..448 {
        for x in 0..448 {
            for c in 0..3 {
                big[(y * 448 + x) * 3 + c] = small.pixel(x / 2, y / 2, c);
            }
        }
    }
    let a = preprocess_frame(&small).unwrap();
    let b = preprocess_frame(&RawFrame::rgb(448, 448, big).unwrap()).unwrap();
    let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn feature_file_size_follows_layout() {
    let dir = tempfile::tempdir().unwrap();
    let vecs: Vec<FeatureVector> = (0..3).map(|i| FeatureVector::new("v", i, vec![0.5; 4])).collect();
    let p = dir.path().join("v.egft");
    write_feature_file(&vecs, &p).unwrap();
    // header, 3x4 f32 values, 3 u64 frame indices
    assert_eq!(std::fs::metadata(&p).unwrap().len() as usize, FEATURE_HEADER_LEN + 3 * 4 * 4 + 3 * 8);
    assert_eq!(FEATURE_HEADER_LEN, 20);
}

fn sample(frames: Vec<Vec<f32>>, label: f64) -> WindowSample {
    WindowSample {
        video_id: Arc::from("v"),
        start_index: 0,
        features: frames.into_iter().map(Arc::from).collect(),
        label,
    }
}

fn random_params(r: &mut impl Rng, d: usize, h: usize, scale: f64) -> ModelParams<f64> {
    let data = (0..engage_core::model::param_count(d, h)).map(|_| r.gen_range(-scale..scale)).collect();
    ModelParams::from_vec(d, h, data).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    let mut r = common::rng(5);
    let (d, h, w) = (3, 4, 5);
    let p = random_params(&mut r, d, h, 0.5);
    let batch: Vec<WindowSample> = (0..3)
        .map(|_| sample((0..w).map(|_| (0..d).map(|_| r.gen_range(-1.0f32..1.0)).collect()).collect(), r.gen()))
        .collect();
    let (_, g) = loss_and_gradients(&p, &batch).unwrap();
    let eps = 1e-5;
    let loss = |q: &ModelParams<f64>| -> f64 {
        batch.iter().map(|s| (forward(q, &s.features).unwrap().0 - s.label).powi(2)).sum::<f64>() / batch.len() as f64
    };
    for i in 0..p.len() {
        let mut plus = p.clone();
        plus.as_mut_slice()[i] += eps;
        let mut minus = p.clone();
        minus.as_mut_slice()[i] -= eps;
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        let analytic = g.as_slice()[i];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-7);
        assert!(rel < 1e-4, "param {i}: {analytic} vs {numeric}");
    }
}

#[test]
fn adagrad_first_step() {
    let mut p = ModelParams::<f64>::zeros(1, 1);
    let mut g = ModelParams::<f64>::zeros(1, 1);
    g.as_mut_slice().fill(1.0);
    let mut st = OptimizerState::new(&p, 1e-4, 1e-8);
    adagrad_step(&mut p, &g, &mut st).unwrap();
    for v in p.as_slice() {
        assert_eq!(*v, -1e-4 / (1.0 + 1e-8));
        assert!((v + 9.9999999e-5).abs() < 1e-17);
    }
}

#[test]
fn test_mse_matches_two_pass_sum() {
    let mut r = common::rng(6);
    let p = random_params(&mut r, 2, 3, 0.8);
    let set: Vec<WindowSample> = (0..100)
        .map(|_| sample((0..4).map(|_| vec![r.gen_range(-1.0f32..1.0), r.gen_range(-1.0f32..1.0)]).collect(), r.gen()))
        .collect();
    let preds: Vec<f64> = set.iter().map(|s| forward(&p, &s.features).unwrap().0).collect();
    let sq: Vec<f64> = preds.iter().zip(&set).map(|(y, s)| (y - s.label) * (y - s.label)).collect();
    let mut total = 0.0;
    for v in &sq {
        total += v;
    }
    let oracle = total / sq.len() as f64;
    assert!((test_mse(&p, &set).unwrap() - oracle).abs() < 1e-12);
}

fn pair_count_auc(preds: &[f64], truths: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (p, _) in preds.iter().zip(truths).filter(|(_, t)| **t) {
        for (n, _) in preds.iter().zip(truths).filter(|(_, t)| !**t) {
            num += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            pairs += 1.0;
        }
    }
    num / pairs
}

#[test]
fn auc_matches_pair_counting() {
    let mut r = common::rng(7);
    let mut done = 0;
    while done < 200 {
        let preds: Vec<f64> = (0..30).map(|_| (r.gen_range(0..8) as f64) / 8.0).collect();
        let truths: Vec<bool> = (0..30).map(|_| r.gen_bool(0.4)).collect();
        let Ok(roc) = roc_auc(&preds, &truths) else { continue };
        assert!((roc.auc - pair_count_auc(&preds, &truths)).abs() < 1e-9);
        let squared: Vec<f64> = preds.iter().map(|p| p * p).collect();
        assert!((roc_auc(&squared, &truths).unwrap().auc - roc.auc).abs() < 1e-12);
        let flipped: Vec<bool> = truths.iter().map(|t| !t).collect();
        assert!((roc_auc(&preds, &flipped).unwrap().auc - (1.0 - roc.auc)).abs() < 1e-12);
        assert!(roc.points.windows(2).all(|w| w[0].thr <= w[1].thr && w[0].tpr >= w[1].tpr && w[0].fpr >= w[1].fpr));
        done += 1;
    }
}

#[test]
fn breakdowns_exclude_engagement() {
    let track = InteractionLabelTrack {
        video_id: "v".into(),
        intervals: vec![
            Interval { start_s: 0.0, end_s: 10.0, tag: InteractionTag::Mono },
            Interval { start_s: 4.0, end_s: 6.0, tag: InteractionTag::TD },
        ],
    };
    assert_eq!(derive_ground_truth(&track, &[2.0, 5.0, 8.0, 12.0]), vec![true, false, true, false]);
}

#[test]
fn window_count_law() {
    for frames in 0..30 {
        for w in 1..12 {
            assert_eq!(window_count(frames, w), (frames + 1).saturating_sub(w));
            assert_eq!(window_count(frames, w), if frames >= w { frames - w + 1 } else { 0 });
        }
    }
}
