//! Smoothing and inter-rater agreement over continuous annotation tracks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::annotation::{format_decimal, AnnotationError, AnnotationTrack};

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 values, got {0}")]
    TooShort(usize),
    #[error("a sequence is constant; rank correlation is undefined")]
    ZeroVariance,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("coders {0} and {1} share videos but no aligned frames")]
    NoOverlap(String, String),
    #[error("no pair of coders shares a video")]
    NoSharedVideos,
    #[error("video {video_id}: rates {a} Hz and {b} Hz differ and resampling is disabled")]
    RateMismatch { video_id: String, a: f64, b: f64 },
    #[error("coder {coder_id} has more than one track for video {video_id}")]
    DuplicateTrack { video_id: String, coder_id: String },
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKind {
    /// Causal exponential moving average with time constant `S`.
    #[default]
    Ema,
    /// Causal moving average over the last `round(S * rate)` samples.
    Boxcar,
}

/// EMA weight for time constant `s` at `rate_hz`.
pub fn ema_alpha(s: f64, rate_hz: f64) -> f64 {
    1.0 - (-1.0 / (s * rate_hz)).exp()
}

pub fn smooth_track(track: &AnnotationTrack, s: f64) -> Result<AnnotationTrack, AgreementError> {
    smooth_track_with(track, s, SmoothingKind::Ema)
}

pub fn smooth_track_with(track: &AnnotationTrack, s: f64, kind: SmoothingKind) -> Result<AnnotationTrack, AgreementError> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(AnnotationError::NonPositiveS(s).into());
    }
    let values = match kind {
        SmoothingKind::Ema => ema(&track.values, ema_alpha(s, track.rate_hz)),
        SmoothingKind::Boxcar => boxcar(&track.values, ((s * track.rate_hz).round() as usize).max(1)),
    };
    Ok(AnnotationTrack { values, ..track.clone() })
}

fn ema(values: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut z = match values.first() {
        Some(&v) => v,
        None => return out,
    };
    out.push(z);
    for &y in &values[1..] {
        z = alpha * y + (1.0 - alpha) * z;
        // keeps the convex combination inside [0,1] despite rounding
        out.push(z.clamp(0.0, 1.0));
    }
    out
}

fn boxcar(values: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= width {
            sum -= values[i - width];
        }
        let n = (i + 1).min(width);
        out.push((sum / n as f64).clamp(0.0, 1.0));
    }
    out
}

/// Average ranks (1-based); tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation with a two-sided t-approximation p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankCorrelation {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<RankCorrelation, AgreementError> {
    if a.len() != b.len() {
        return Err(AgreementError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(AgreementError::TooShort(n));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(AgreementError::NonFinite);
    }
    let constant = |s: &[f64]| s.iter().all(|&v| v == s[0]);
    if constant(a) || constant(b) {
        return Err(AgreementError::ZeroVariance);
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let rho = pearson(&ra, &rb).clamp(-1.0, 1.0);
    Ok(RankCorrelation { rho, p_value: t_test_p(rho, n), n })
}

fn t_test_p(rho: f64, n: usize) -> f64 {
    if rho.abs() >= 1.0 || n <= 2 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub coder_pair: (String, String),
    pub smoothing_constant_s: f64,
    pub rho: f64,
    pub p_value: f64,
    /// Number of aligned frames compared.
    pub n: usize,
    pub overlap_s: f64,
    pub shared_videos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAgreement {
    pub smoothing_constant_s: f64,
    pub rho: f64,
    pub n: usize,
    pub total_overlap_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub reports: Vec<AgreementReport>,
    pub averages: Vec<WeightedAgreement>,
}

#[derive(Debug, Clone, Copy)]
pub struct AgreementOptions {
    pub smoothing: SmoothingKind,
    /// Resample the higher-rate track of a pair down to the lower rate.
    pub resample: bool,
}

impl Default for AgreementOptions {
    fn default() -> Self {
        AgreementOptions { smoothing: SmoothingKind::Ema, resample: true }
    }
}

struct AlignedVideo {
    a: AnnotationTrack,
    b: AnnotationTrack,
    pairs: Vec<(usize, usize)>,
}

fn align(a: &AnnotationTrack, b: &AnnotationTrack) -> Vec<(usize, usize)> {
    (0..a.len())
        .filter_map(|i| b.index_at(a.time_of(i)).map(|j| (i, j)))
        .collect()
}

fn prepare_video(
    a: &AnnotationTrack,
    b: &AnnotationTrack,
    opts: &AgreementOptions,
) -> Result<AlignedVideo, AgreementError> {
    let (a, b) = if a.rate_hz == b.rate_hz {
        (a.clone(), b.clone())
    } else if !opts.resample {
        return Err(AgreementError::RateMismatch {
            video_id: a.video_id.clone(),
            a: a.rate_hz,
            b: b.rate_hz,
        });
    } else if a.rate_hz > b.rate_hz {
        (a.resample_nearest(b.rate_hz)?, b.clone())
    } else {
        (a.clone(), b.resample_nearest(a.rate_hz)?)
    };
    let pairs = align(&a, &b);
    Ok(AlignedVideo { a, b, pairs })
}

/// Pairwise Spearman agreement for every coder pair sharing videos, at each
/// smoothing constant, plus the overlap-weighted average across pairs.
pub fn pairwise_agreement(
    tracks: &[AnnotationTrack],
    s_values: &[f64],
    opts: AgreementOptions,
) -> Result<AgreementSummary, AgreementError> {
    for &s in s_values {
        if !(s > 0.0 && s.is_finite()) {
            return Err(AnnotationError::NonPositiveS(s).into());
        }
    }
    let mut by_coder: BTreeMap<&str, BTreeMap<&str, &AnnotationTrack>> = BTreeMap::new();
    for t in tracks {
        let videos = by_coder.entry(t.coder_id.as_str()).or_default();
        if videos.insert(t.video_id.as_str(), t).is_some() {
            return Err(AgreementError::DuplicateTrack {
                video_id: t.video_id.clone(),
                coder_id: t.coder_id.clone(),
            });
        }
    }
    let coders: Vec<&str> = by_coder.keys().copied().collect();

    let mut reports = Vec::new();
    for (ia, &ca) in coders.iter().enumerate() {
        for &cb in &coders[ia + 1..] {
            let va = &by_coder[ca];
            let vb = &by_coder[cb];
            let shared: Vec<&str> = va.keys().filter(|v| vb.contains_key(*v)).copied().collect();
            if shared.is_empty() {
                continue;
            }
            let videos = shared
                .iter()
                .map(|v| prepare_video(va[v], vb[v], &opts))
                .collect::<Result<Vec<_>, _>>()?;
            let n: usize = videos.iter().map(|v| v.pairs.len()).sum();
            if n == 0 {
                return Err(AgreementError::NoOverlap(ca.to_string(), cb.to_string()));
            }
            let overlap_s: f64 = videos.iter().map(|v| v.pairs.len() as f64 / v.a.rate_hz).sum();
            for &s in s_values {
                let mut xs = Vec::with_capacity(n);
                let mut ys = Vec::with_capacity(n);
                for v in &videos {
                    let sa = smooth_track_with(&v.a, s, opts.smoothing)?;
                    let sb = smooth_track_with(&v.b, s, opts.smoothing)?;
                    for &(i, j) in &v.pairs {
                        xs.push(sa.values[i]);
                        ys.push(sb.values[j]);
                    }
                }
                let corr = spearman_rho(&xs, &ys)?;
                reports.push(AgreementReport {
                    coder_pair: (ca.to_string(), cb.to_string()),
                    smoothing_constant_s: s,
                    rho: corr.rho,
                    p_value: corr.p_value,
                    n: corr.n,
                    overlap_s,
                    shared_videos: videos.len(),
                });
            }
        }
    }
    if reports.is_empty() {
        return Err(AgreementError::NoSharedVideos);
    }
    let averages = s_values
        .iter()
        .map(|&s| {
            let rows: Vec<&AgreementReport> = reports.iter().filter(|r| r.smoothing_constant_s == s).collect();
            let total: f64 = rows.iter().map(|r| r.overlap_s).sum();
            let rho = rows.iter().map(|r| r.rho * r.overlap_s / total).sum::<f64>();
            WeightedAgreement {
                smoothing_constant_s: s,
                rho,
                n: rows.iter().map(|r| r.n).sum(),
                total_overlap_s: total,
            }
        })
        .collect();
    Ok(AgreementSummary { reports, averages })
}

/// Renders the report as CSV: one row per pair and S, then one
/// `average` row per S.
pub fn agreement_csv(summary: &AgreementSummary) -> String {
    let mut out = String::from("pair,S_s,rho,p,n,overlap_s\n");
    for r in &summary.reports {
        let _ = writeln!(
            out,
            "{}:{},{},{},{:e},{},{}",
            r.coder_pair.0,
            r.coder_pair.1,
            format_decimal(r.smoothing_constant_s),
            format_decimal(r.rho),
            r.p_value,
            r.n,
            format_decimal(r.overlap_s)
        );
    }
    for a in &summary.averages {
        let _ = writeln!(
            out,
            "average,{},{},,{},{}",
            format_decimal(a.smoothing_constant_s),
            format_decimal(a.rho),
            a.n,
            format_decimal(a.total_overlap_s)
        );
    }
    out
}
