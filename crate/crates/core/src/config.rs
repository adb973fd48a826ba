//! Pipeline configuration: a JSON file plus `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backbone::BackboneDescriptor;
use crate::dataset::preprocess::ResizePolicy;
use crate::stream::OverloadPolicy;
use crate::train::TrainConfig;

/// Base directory for relative paths when set.
pub const DATA_DIR_ENV: &str = "ENGAGE_DATA_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Invalid { path: String, line: usize, message: String },
    #[error("bad override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("{0}")]
    Validation(String),
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub videos: PathBuf,
    pub annotations: PathBuf,
    pub features: PathBuf,
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            videos: "videos".into(),
            annotations: "annotations".into(),
            features: "features".into(),
            dataset: "dataset".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.videos,
            &mut self.annotations,
            &mut self.features,
            &mut self.dataset,
            &mut self.checkpoints,
            &mut self.reports,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamOptions {
    pub queue_capacity: usize,
    pub overload: OverloadPolicy,
    pub resize: ResizePolicy,
}

impl Default for StreamOptions {
    fn default() -> Self {
        StreamOptions { queue_capacity: 4, overload: OverloadPolicy::DropOldest, resize: ResizePolicy::Stretch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub w: usize,
    pub split_seed: u64,
    /// Frame rate of the source videos / feature files.
    pub video_rate_hz: f64,
    pub backbone: BackboneDescriptor,
    pub train: TrainConfig,
    pub stream: StreamOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            w: 10,
            split_seed: 0,
            video_rate_hz: 10.0,
            backbone: BackboneDescriptor::default(),
            train: TrainConfig::default(),
            stream: StreamOptions::default(),
        }
    }
}

/// Applies `a.b.c=value` to a JSON tree. Values that parse as JSON are
/// used as such, anything else becomes a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| ConfigError::BadOverride(assignment.to_string()))?;
    if key.is_empty() {
        return Err(ConfigError::BadOverride(assignment.to_string()));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            *node = Value::Object(Default::default());
        }
        let map = node.as_object_mut().expect("object");
        if i == parts.len() - 1 {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl PipelineConfig {
    /// Loads a config file (or defaults) and applies overrides. Relative
    /// paths resolve against `ENGAGE_DATA_DIR`, else the config's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let (mut tree, label, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Io { path: p.display().to_string(), source })?;
                let tree: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Invalid {
                    path: p.display().to_string(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (tree, p.display().to_string(), base)
            }
            None => (Value::Object(Default::default()), "<defaults>".to_string(), PathBuf::from(".")),
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        // re-render so deserialization errors point at a line of the merged tree
        let merged = serde_json::to_string_pretty(&tree).expect("json");
        let mut cfg: PipelineConfig = serde_json::from_str(&merged).map_err(|e| ConfigError::Invalid {
            path: label.clone(),
            line: if overrides.is_empty() { line_in_original(path, &e) } else { e.line() },
            message: e.to_string(),
        })?;
        let base = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or(base);
        cfg.paths.resolve(&base);
        if let BackboneDescriptor::Precomputed { dir, .. } | BackboneDescriptor::ModelFile { path: dir, .. } = &mut cfg.backbone {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&mut self) -> Result<(), ConfigError> {
        if self.w == 0 {
            return Err(ConfigError::Validation("w must be at least 1".into()));
        }
        if !(self.video_rate_hz > 0.0 && self.video_rate_hz.is_finite()) {
            return Err(ConfigError::Validation("video_rate_hz must be positive".into()));
        }
        if self.backbone.output_dim() == 0 {
            return Err(ConfigError::Validation("backbone.output_dim must be at least 1".into()));
        }
        self.train.w = self.w;
        self.train.validate().map_err(|e| ConfigError::Validation(e.to_string()))?;
        Ok(())
    }
}

/// Deserialization errors on the original file map back to its own lines.
fn line_in_original(path: Option<&Path>, merged_err: &serde_json::Error) -> usize {
    let Some(p) = path else { return merged_err.line() };
    let Ok(text) = fs::read_to_string(p) else { return merged_err.line() };
    match serde_json::from_str::<PipelineConfig>(&text) {
        Err(e) => e.line(),
        Ok(_) => merged_err.line(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_mirror_training_setup() {
        let c = PipelineConfig::load(None, &[]).unwrap();
        assert_eq!(c.w, 10);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.epoch_fraction, 0.2);
    }

    #[test]
    fn overrides_apply() {
        let c = PipelineConfig::load(None, &["w=5".into(), "train.hidden_dim=8".into(), "paths.reports=/tmp/r".into()]).unwrap();
        assert_eq!(c.w, 5);
        assert_eq!(c.train.w, 5);
        assert_eq!(c.train.hidden_dim, 8);
        assert_eq!(c.paths.reports, PathBuf::from("/tmp/r"));
        assert!(matches!(PipelineConfig::load(None, &["novalue".into()]), Err(ConfigError::BadOverride(_))));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "{{\n  \"w\": 10,\n  \"bogus\": 1\n}}\n").unwrap();
        match PipelineConfig::load(Some(f.path()), &[]) {
            Err(ConfigError::Invalid { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let mut g = tempfile::NamedTempFile::new().unwrap();
        write!(g, "{{\n  \"w\": 10,\n  oops\n}}\n").unwrap();
        match PipelineConfig::load(Some(g.path()), &[]) {
            Err(ConfigError::Invalid { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_window_rejected() {
        assert!(matches!(PipelineConfig::load(None, &["w=0".into()]), Err(ConfigError::Validation(_))));
    }
}
