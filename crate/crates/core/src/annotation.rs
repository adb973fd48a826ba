//! Continuous per-frame engagement annotations.
//!
//! A track is a uniformly sampled sequence of values in `[0, 1]` produced by
//! one coder for one video. Tracks are stored either as a two-column CSV
//! (`t_s,value`) or as JSONL with a leading metadata object.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rate used when a CSV track has a single row and no rate can be inferred.
pub const DEFAULT_RATE_HZ: f64 = 10.0;

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("value out of range [0,1] at line {line}: {value}")]
    ValueOutOfRange { line: usize, value: f64 },
    #[error("track has no values")]
    EmptyTrack,
    #[error("rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("start offset must be non-negative and finite, got {0}")]
    BadOffset(f64),
    #[error("smoothing constant must be positive, got {0}")]
    NonPositiveS(f64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackFormat {
    Csv,
    Jsonl,
}

impl TrackFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(TrackFormat::Csv),
            "jsonl" => Some(TrackFormat::Jsonl),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            TrackFormat::Csv => "csv",
            TrackFormat::Jsonl => "jsonl",
        }
    }
}

/// One coder's engagement values for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTrack {
    pub video_id: String,
    pub coder_id: String,
    pub rate_hz: f64,
    pub values: Vec<f64>,
    pub start_offset_s: f64,
}

impl AnnotationTrack {
    pub fn new(
        video_id: impl Into<String>,
        coder_id: impl Into<String>,
        rate_hz: f64,
        values: Vec<f64>,
        start_offset_s: f64,
    ) -> Result<Self, AnnotationError> {
        let track = AnnotationTrack {
            video_id: video_id.into(),
            coder_id: coder_id.into(),
            rate_hz,
            values,
            start_offset_s,
        };
        track.validate()?;
        Ok(track)
    }

    /// Checks every invariant. Row numbers in errors are 1-based value indices.
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(AnnotationError::BadRate(self.rate_hz));
        }
        if !(self.start_offset_s.is_finite() && self.start_offset_s >= 0.0) {
            return Err(AnnotationError::BadOffset(self.start_offset_s));
        }
        if self.values.is_empty() {
            return Err(AnnotationError::EmptyTrack);
        }
        for (i, &v) in self.values.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(AnnotationError::ValueOutOfRange { line: i + 1, value: v });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.rate_hz
    }

    pub fn period_s(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// Timestamp of sample `i` in seconds from the start of the video.
    pub fn time_of(&self, i: usize) -> f64 {
        self.start_offset_s + i as f64 / self.rate_hz
    }

    /// Index of the sample nearest to `t`, if `t` lies within half a period
    /// of some sample.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let pos = ((t - self.start_offset_s) * self.rate_hz).round();
        if pos < 0.0 || pos >= self.values.len() as f64 {
            return None;
        }
        let i = pos as usize;
        if (self.time_of(i) - t).abs() <= 0.5 * self.period_s() + 1e-9 {
            Some(i)
        } else {
            None
        }
    }

    /// Resamples to a lower (or equal) rate by nearest-timestamp selection.
    pub fn resample_nearest(&self, rate_hz: f64) -> Result<AnnotationTrack, AnnotationError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(AnnotationError::BadRate(rate_hz));
        }
        let count = ((self.duration_s() * rate_hz) + 1e-9).floor().max(1.0) as usize;
        let values = (0..count)
            .map(|k| {
                let t = k as f64 / rate_hz;
                let j = (t * self.rate_hz).round() as usize;
                self.values[j.min(self.values.len() - 1)]
            })
            .collect();
        Ok(AnnotationTrack {
            video_id: self.video_id.clone(),
            coder_id: self.coder_id.clone(),
            rate_hz,
            values,
            start_offset_s: self.start_offset_s,
        })
    }
}

/// Formats a number with at most six decimal places and no trailing zeros.
pub fn format_decimal(v: f64) -> String {
    let mut s = format!("{v:.6}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

/// Splits a `<video_id>__<coder_id>` file stem. Without the separator the
/// whole stem is the video id and the coder is `"unknown"`.
pub fn ids_from_stem(stem: &str) -> (String, String) {
    match stem.split_once("__") {
        Some((video, coder)) => (video.to_string(), coder.to_string()),
        None => (stem.to_string(), "unknown".to_string()),
    }
}

/// Canonical file name for a track.
pub fn track_file_name(track: &AnnotationTrack, format: TrackFormat) -> String {
    format!("{}__{}.{}", track.video_id, track.coder_id, format.extension())
}

pub fn load_annotation_track(path: &Path, format: TrackFormat) -> Result<AnnotationTrack, AnnotationError> {
    if !path.is_file() {
        return Err(AnnotationError::MissingFile(path.display().to_string()));
    }
    let text = fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let (video_id, coder_id) = ids_from_stem(stem);
    match format {
        TrackFormat::Csv => parse_csv(&text, video_id, coder_id),
        TrackFormat::Jsonl => parse_jsonl(&text),
    }
}

pub fn write_annotation_track(track: &AnnotationTrack, path: &Path, format: TrackFormat) -> Result<(), AnnotationError> {
    let text = match format {
        TrackFormat::Csv => to_csv(track),
        TrackFormat::Jsonl => to_jsonl(track),
    };
    fs::write(path, text)?;
    Ok(())
}

pub fn to_csv(track: &AnnotationTrack) -> String {
    let mut out = String::from("t_s,value\n");
    for (i, v) in track.values.iter().enumerate() {
        let _ = writeln!(out, "{},{}", format_decimal(track.time_of(i)), format_decimal(*v));
    }
    out
}

pub fn to_jsonl(track: &AnnotationTrack) -> String {
    let meta = serde_json::json!({
        "video_id": track.video_id,
        "coder_id": track.coder_id,
        "rate_hz": track.rate_hz,
    });
    let mut out = meta.to_string();
    out.push('\n');
    for (i, v) in track.values.iter().enumerate() {
        let _ = writeln!(out, "{{\"t\":{},\"v\":{}}}", format_decimal(track.time_of(i)), format_decimal(*v));
    }
    out
}

/// Rates are snapped to the nearest millihertz when inferred from rounded
/// timestamps.
fn snap_rate(rate: f64) -> f64 {
    (rate * 1000.0).round() / 1000.0
}

fn parse_f64(field: &str, line: usize) -> Result<f64, AnnotationError> {
    let v: f64 = field.trim().parse().map_err(|_| AnnotationError::MalformedRow {
        line,
        reason: format!("not a number: {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(AnnotationError::MalformedRow { line, reason: "non-finite number".into() });
    }
    Ok(v)
}

fn check_value(v: f64, line: usize) -> Result<f64, AnnotationError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(AnnotationError::ValueOutOfRange { line, value: v })
    }
}

/// Rebuilds rate and offset from per-row timestamps and checks that each
/// timestamp lies within a quarter period of its grid position.
fn grid_from_times(times: &[(usize, f64)], fallback_rate: Option<f64>) -> Result<(f64, f64), AnnotationError> {
    let offset = times[0].1;
    let rate = if times.len() >= 2 {
        let (_, last) = times[times.len() - 1];
        let span = last - offset;
        if span <= 0.0 {
            return Err(AnnotationError::MalformedRow {
                line: times[times.len() - 1].0,
                reason: "timestamps must increase".into(),
            });
        }
        let inferred = snap_rate((times.len() - 1) as f64 / span);
        if let Some(declared) = fallback_rate {
            declared
        } else {
            inferred
        }
    } else {
        fallback_rate.unwrap_or(DEFAULT_RATE_HZ)
    };
    if !(rate.is_finite() && rate > 0.0) {
        return Err(AnnotationError::BadRate(rate));
    }
    if !(offset.is_finite() && offset >= 0.0) {
        return Err(AnnotationError::BadOffset(offset));
    }
    for (k, &(line, t)) in times.iter().enumerate() {
        let expected = offset + k as f64 / rate;
        if (t - expected).abs() > 0.25 / rate {
            return Err(AnnotationError::MalformedRow {
                line,
                reason: format!("timestamp {t} is off the {rate} Hz grid"),
            });
        }
    }
    Ok((rate, offset))
}

fn parse_csv(text: &str, video_id: String, coder_id: String) -> Result<AnnotationTrack, AnnotationError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "t_s,value" => {}
        Some((_, header)) => {
            return Err(AnnotationError::MalformedRow {
                line: 1,
                reason: format!("expected header `t_s,value`, got {header:?}"),
            })
        }
        None => return Err(AnnotationError::EmptyTrack),
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut fields = raw.split(',');
        let (Some(t), Some(v), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(AnnotationError::MalformedRow { line, reason: "expected two fields".into() });
        };
        let t = parse_f64(t, line)?;
        let v = check_value(parse_f64(v, line)?, line)?;
        times.push((line, t));
        values.push(v);
    }
    if values.is_empty() {
        return Err(AnnotationError::EmptyTrack);
    }
    let (rate_hz, start_offset_s) = grid_from_times(&times, None)?;
    Ok(AnnotationTrack { video_id, coder_id, rate_hz, values, start_offset_s })
}

#[derive(Deserialize)]
struct JsonlMeta {
    video_id: String,
    coder_id: String,
    rate_hz: f64,
}

#[derive(Deserialize)]
struct JsonlRow {
    t: f64,
    v: f64,
}

/// Parses a JSONL body (also used for uploads).
pub fn parse_jsonl(text: &str) -> Result<AnnotationTrack, AnnotationError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((idx, first)) = lines.next() else {
        return Err(AnnotationError::EmptyTrack);
    };
    let meta: JsonlMeta = serde_json::from_str(first).map_err(|e| AnnotationError::MalformedRow {
        line: idx + 1,
        reason: format!("bad metadata: {e}"),
    })?;
    if !(meta.rate_hz.is_finite() && meta.rate_hz > 0.0) {
        return Err(AnnotationError::BadRate(meta.rate_hz));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row: JsonlRow = serde_json::from_str(raw)
            .map_err(|e| AnnotationError::MalformedRow { line, reason: e.to_string() })?;
        times.push((line, row.t));
        values.push(check_value(row.v, line)?);
    }
    if values.is_empty() {
        return Err(AnnotationError::EmptyTrack);
    }
    let (rate_hz, start_offset_s) = grid_from_times(&times, Some(meta.rate_hz))?;
    Ok(AnnotationTrack {
        video_id: meta.video_id,
        coder_id: meta.coder_id,
        rate_hz,
        values,
        start_offset_s,
    })
}

/// Loads every `.csv` / `.jsonl` track in a directory, sorted by file name.
pub fn load_track_dir(dir: &Path) -> Result<Vec<AnnotationTrack>, AnnotationError> {
    if !dir.is_dir() {
        return Err(AnnotationError::MissingFile(dir.display().to_string()));
    }
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| TrackFormat::from_path(p).is_some())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| load_annotation_track(p, TrackFormat::from_path(p).unwrap()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_row_csv() {
        let t = parse_csv("t_s,value\n0.0,0.5\n0.1,0.6\n", "v".into(), "c".into()).unwrap();
        assert_eq!(t.values, vec![0.5, 0.6]);
        assert_eq!(t.rate_hz, 10.0);
        assert_eq!(t.start_offset_s, 0.0);
    }

    #[test]
    fn rejects_out_of_range_value() {
        let err = parse_csv("t_s,value\n0.0,0.5\n0.1,1.3\n", "v".into(), "c".into()).unwrap_err();
        assert!(matches!(err, AnnotationError::ValueOutOfRange { line: 3, .. }));
    }

    #[test]
    fn rejects_malformed_and_empty() {
        let err = parse_csv("t_s,value\n0.0,abc\n", "v".into(), "c".into()).unwrap_err();
        assert!(matches!(err, AnnotationError::MalformedRow { line: 2, .. }));
        let err = parse_csv("t_s,value\n", "v".into(), "c".into()).unwrap_err();
        assert!(matches!(err, AnnotationError::EmptyTrack));
        let err = parse_csv("t_s,value\n0.0,0.1\n0.1,0.2\n0.35,0.2\n", "v".into(), "c".into()).unwrap_err();
        assert!(matches!(err, AnnotationError::MalformedRow { .. }));
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_annotation_track(Path::new("/nonexistent/x.csv"), TrackFormat::Csv).unwrap_err();
        assert!(matches!(err, AnnotationError::MissingFile(_)));
    }

    #[test]
    fn jsonl_round_trip_text() {
        let track = AnnotationTrack::new("vid", "a", 10.0, vec![0.25, 1.0, 0.0], 1.5).unwrap();
        let text = to_jsonl(&track);
        let back = parse_jsonl(&text).unwrap();
        assert_eq!(back, track);
        assert_eq!(to_jsonl(&back), text);
    }

    #[test]
    fn format_decimal_trims() {
        assert_eq!(format_decimal(0.5), "0.5");
        assert_eq!(format_decimal(1.0), "1");
        assert_eq!(format_decimal(0.1234567), "0.123457");
        assert_eq!(format_decimal(0.0), "0");
    }

    #[test]
    fn stem_ids() {
        assert_eq!(ids_from_stem("v1__alice"), ("v1".to_string(), "alice".to_string()));
        assert_eq!(ids_from_stem("v1"), ("v1".to_string(), "unknown".to_string()));
    }

    #[test]
    fn resample_halves_rate() {
        let t = AnnotationTrack::new("v", "c", 20.0, (0..20).map(|i| i as f64 / 20.0).collect(), 0.0).unwrap();
        let r = t.resample_nearest(10.0).unwrap();
        assert_eq!(r.len(), 10);
        assert_eq!(r.values[3], t.values[6]);
    }
}
