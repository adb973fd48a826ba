//! Offline evaluation: test MSE, interaction ground truth, ROC and AUC.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::format_decimal;
use crate::dataset::WindowSample;
use crate::model::{mse, ModelError, ModelParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("ROC needs both classes present")]
    SingleClass,
    #[error("predictions and truths differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite prediction")]
    NonFinite,
    #[error("{path} line {line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub fn test_mse(model: &ModelParams<f64>, samples: &[WindowSample]) -> Result<f64, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptySet);
    }
    Ok(mse(model, samples)?)
}

/// Interaction coding tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InteractionTag {
    Mono,
    Multi,
    /// Engagement breakdown.
    BD,
    /// Temporary disengagement.
    TD,
    /// Sign of engagement decrease.
    SED,
    /// Early sign of future breakdown.
    EBD,
}

impl FromStr for InteractionTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "Mono" => InteractionTag::Mono,
            "Multi" => InteractionTag::Multi,
            "BD" => InteractionTag::BD,
            "TD" => InteractionTag::TD,
            "SED" => InteractionTag::SED,
            "EBD" => InteractionTag::EBD,
            other => return Err(format!("unknown tag {other:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
    pub tag: InteractionTag,
}

impl Interval {
    /// Closed interval membership.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start_s && t <= self.end_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionLabelTrack {
    pub video_id: String,
    pub intervals: Vec<Interval>,
}

impl InteractionLabelTrack {
    /// Loads `start_s,end_s,tag` rows; the video id is the file stem.
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = fs::read_to_string(path)?;
        let err = |line: usize, reason: String| EvalError::Parse { path: path.display().to_string(), line, reason };
        let mut intervals = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() || (i == 0 && line.trim() == "start_s,end_s,tag") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(err(line_no, "expected start_s,end_s,tag".into()));
            }
            let start_s: f64 = f[0].trim().parse().map_err(|_| err(line_no, "bad start_s".into()))?;
            let end_s: f64 = f[1].trim().parse().map_err(|_| err(line_no, "bad end_s".into()))?;
            let tag: InteractionTag = f[2].parse().map_err(|e| err(line_no, e))?;
            if !(start_s < end_s) {
                return Err(err(line_no, "start_s must be before end_s".into()));
            }
            intervals.push(Interval { start_s, end_s, tag });
        }
        let video_id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        Ok(InteractionLabelTrack { video_id, intervals })
    }
}

/// True while a Mono or Multi interaction is annotated and no BD or TD is.
pub fn derive_ground_truth(track: &InteractionLabelTrack, times: &[f64]) -> Vec<bool> {
    times
        .iter()
        .map(|&t| {
            let active = |tags: &[InteractionTag]| track.intervals.iter().any(|iv| tags.contains(&iv.tag) && iv.contains(t));
            active(&[InteractionTag::Mono, InteractionTag::Multi]) && !active(&[InteractionTag::BD, InteractionTag::TD])
        })
        .collect()
}

/// `y' >= thr` is positive.
pub fn binarize(predictions: &[f64], thr: f64) -> Vec<bool> {
    predictions.iter().map(|&p| p >= thr).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub thr: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Sorted by ascending threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Threshold sweep over the unique predictions plus 0 and 1, with the
/// trapezoidal area under the resulting curve.
pub fn roc_auc(predictions: &[f64], truths: &[bool]) -> Result<RocResult, EvalError> {
    if predictions.len() != truths.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), truths.len()));
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let pos = truths.iter().filter(|&&t| t).count();
    let neg = truths.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    // descending by score so thresholds can be swept from high to low
    let mut scored: Vec<(f64, bool)> = predictions.iter().copied().zip(truths.iter().copied()).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut thresholds: Vec<f64> = predictions.to_vec();
    thresholds.extend([0.0, 1.0]);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    if thresholds[0] <= scored[0].0 {
        thresholds.insert(0, f64::INFINITY);
    }

    let mut points = Vec::with_capacity(thresholds.len());
    let (mut tp, mut fp, mut k) = (0usize, 0usize, 0usize);
    for &thr in &thresholds {
        while k < scored.len() && scored[k].0 >= thr {
            if scored[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        points.push(RocPoint { thr, fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64 });
    }
    let auc = points.windows(2).map(|p| (p[1].fpr - p[0].fpr) * (p[1].tpr + p[0].tpr) / 2.0).sum();
    points.reverse();
    Ok(RocResult { points, auc })
}

/// `thr,fpr,tpr` rows followed by `auc=<value>`.
pub fn roc_csv(roc: &RocResult) -> String {
    let mut out = String::from("thr,fpr,tpr\n");
    for p in &roc.points {
        let thr = if p.thr.is_infinite() { "inf".to_string() } else { format!("{}", p.thr) };
        let _ = writeln!(out, "{thr},{},{}", p.fpr, p.tpr);
    }
    let _ = writeln!(out, "{}", auc_line(roc.auc));
    out
}

pub fn auc_line(auc: f64) -> String {
    format!("auc={auc:?}")
}

/// Two whitespace-separated columns `fpr tpr`, ordered along the curve.
pub fn roc_gnuplot(roc: &RocResult) -> String {
    let mut out = String::from("# fpr tpr\n");
    for p in roc.points.iter().rev() {
        let _ = writeln!(out, "{} {}", format_decimal(p.fpr), format_decimal(p.tpr));
    }
    out
}

/// Prediction series `t_s,engagement` (extra columns are ignored).
pub fn load_prediction_csv(path: &Path) -> Result<Vec<(f64, f64)>, EvalError> {
    let text = fs::read_to_string(path)?;
    let err = |line: usize, reason: &str| EvalError::Parse { path: path.display().to_string(), line, reason: reason.into() };
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, h)| h.trim().to_string()).unwrap_or_default();
    let cols: Vec<&str> = header.split(',').collect();
    let t_col = cols.iter().position(|c| *c == "t_s").ok_or_else(|| err(1, "missing t_s column"))?;
    let v_col = cols.iter().position(|c| *c == "engagement").ok_or_else(|| err(1, "missing engagement column"))?;
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let get = |c: usize| f.get(c).and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| err(i + 1, "bad number"));
        rows.push((get(t_col)?, get(v_col)?));
    }
    Ok(rows)
}
