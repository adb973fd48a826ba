//! Local HTTP service for the annotation UI.
//!
//! - `GET /videos`: JSON list of media files
//! - `GET /videos/{id}`: media bytes, honouring single `Range` requests
//! - `POST /annotations`: JSONL track upload, persisted as `<video>__<coder>.jsonl`
//! - `GET /predictions/{id}`: model series over the video's feature file
//! - anything else under `GET /`: static UI assets

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, Cursor, Read, Seek, SeekFrom};
use std::net::{SocketAddr, TcpListener};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use tiny_http::{Header, Method, Request, Response, Server, StatusCode};

use crate::annotation::{parse_jsonl, to_jsonl, track_file_name, TrackFormat};
use crate::backbone::read_feature_file_expect;
use crate::model::ModelParams;
use crate::stream::batch_scores;

/// Largest accepted upload body.
pub const MAX_UPLOAD_BYTES: u64 = 32 << 20;

const VIDEO_EXTENSIONS: [(&str, &str); 6] = [
    ("mp4", "video/mp4"),
    ("webm", "video/webm"),
    ("ogv", "video/ogg"),
    ("mkv", "video/x-matroska"),
    ("mov", "video/quicktime"),
    ("avi", "video/x-msvideo"),
];

const FALLBACK_INDEX: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>engage annotator</title></head>\n<body><h1>engage annotator</h1><p>No UI assets configured. API: <code>GET /videos</code>, <code>GET /videos/{id}</code>, <code>POST /annotations</code>, <code>GET /predictions/{id}</code>.</p></body></html>\n";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("cannot start server: {0}")]
    Start(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub videos_dir: PathBuf,
    pub annotations_dir: PathBuf,
    pub features_dir: PathBuf,
    pub ui_dir: Option<PathBuf>,
    /// Shared read-only model for the predictions endpoint.
    pub model: Option<Arc<ModelParams<f64>>>,
    pub w: usize,
    pub video_rate_hz: f64,
}

struct State {
    cfg: ServiceConfig,
    video_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

pub struct AnnotatorService {
    server: Arc<Server>,
    state: Arc<State>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

/// Stops a service started with [`AnnotatorService::spawn`].
pub struct ServiceHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    server: Arc<Server>,
    threads: Vec<std::thread::JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for _ in &self.threads {
            self.server.unblock();
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl AnnotatorService {
    /// Binds `bind:port`; port 0 picks a free port.
    pub fn bind(bind: &str, port: u16, cfg: ServiceConfig) -> Result<Self, ServiceError> {
        let listener = TcpListener::bind((bind, port)).map_err(|e| match e.kind() {
            io::ErrorKind::AddrInUse => ServiceError::PortInUse(port),
            _ => ServiceError::Io(e),
        })?;
        let addr = listener.local_addr()?;
        let server = Server::from_listener(listener, None).map_err(|e| ServiceError::Start(e.to_string()))?;
        Ok(AnnotatorService {
            server: Arc::new(server),
            state: Arc::new(State { cfg, video_locks: Mutex::new(HashMap::new()) }),
            addr,
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Serves on `workers` threads until the process ends.
    pub fn run(self, workers: usize) {
        let handle = self.spawn(workers);
        for t in handle.threads {
            let _ = t.join();
        }
    }

    pub fn spawn(self, workers: usize) -> ServiceHandle {
        let threads = (0..workers.max(1))
            .map(|_| {
                let server = self.server.clone();
                let state = self.state.clone();
                let stop = self.stop.clone();
                std::thread::spawn(move || {
                    while !stop.load(Ordering::SeqCst) {
                        match server.recv_timeout(Duration::from_millis(200)) {
                            Ok(Some(req)) => handle(&state, req),
                            Ok(None) => {}
                            Err(e) => log::warn!("accept failed: {e}"),
                        }
                    }
                })
            })
            .collect();
        ServiceHandle { addr: self.addr, stop: self.stop, server: self.server, threads }
    }
}

type Reply = Response<Box<dyn Read + Send>>;

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("valid header")
}

fn bytes_reply(status: u16, content_type: &str, body: Vec<u8>) -> Reply {
    let len = body.len();
    Response::new(
        StatusCode(status),
        vec![header("Content-Type", content_type)],
        Box::new(Cursor::new(body)) as Box<dyn Read + Send>,
        Some(len),
        None,
    )
}

fn json_reply<T: Serialize>(status: u16, value: &T) -> Reply {
    bytes_reply(status, "application/json", serde_json::to_vec(value).expect("json"))
}

fn error_reply(status: u16, error: &str, detail: impl Into<String>) -> Reply {
    json_reply(status, &json!({ "error": error, "detail": detail.into() }))
}

fn handle(state: &State, mut req: Request) {
    let url = req.url().to_string();
    let path = url.split('?').next().unwrap_or("").to_string();
    let segments: Vec<&str> = path.trim_start_matches('/').split('/').collect();
    let reply = match (req.method(), segments.as_slice()) {
        (Method::Get, ["videos"]) => list_videos(state),
        (Method::Get, ["videos", id]) => serve_video(state, id, range_header(&req)),
        (Method::Post, ["annotations"]) => post_annotation(state, &mut req),
        (Method::Get, ["predictions", id]) => predictions(state, id),
        (Method::Get | Method::Head, _) => static_asset(state, &path),
        (_, ["videos" | "annotations" | "predictions", ..]) => error_reply(405, "MethodNotAllowed", req.method().to_string()),
        _ => error_reply(404, "NotFound", path.clone()),
    };
    if let Err(e) = req.respond(reply) {
        log::debug!("client went away: {e}");
    }
}

fn range_header(req: &Request) -> Option<String> {
    req.headers()
        .iter()
        .find(|h| h.field.equiv("Range"))
        .map(|h| h.value.as_str().to_string())
}

/// Ids are used as file names.
fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.contains("__")
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

fn video_files(dir: &Path) -> io::Result<Vec<(String, PathBuf, &'static str)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let Some(mime) = VIDEO_EXTENSIONS.iter().find(|(e, _)| Some(*e) == ext.as_deref()).map(|(_, m)| *m) else {
            continue;
        };
        if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
            out.push((stem.to_string(), p.clone(), mime));
        }
    }
    out.sort();
    Ok(out)
}

fn list_videos(state: &State) -> Reply {
    match video_files(&state.cfg.videos_dir) {
        Ok(files) => {
            let list: Vec<_> = files
                .iter()
                .map(|(id, p, mime)| {
                    let bytes = fs::metadata(p).map(|m| m.len()).unwrap_or(0);
                    json!({ "id": id, "url": format!("/videos/{id}"), "content_type": mime, "bytes": bytes })
                })
                .collect();
            json_reply(200, &list)
        }
        Err(e) => error_reply(500, "Io", e.to_string()),
    }
}

/// Parses a single `bytes=` range against a file of `len` bytes into an
/// inclusive `(start, end)`. `Err(())` means unsatisfiable.
pub fn parse_range(value: &str, len: u64) -> Option<Result<(u64, u64), ()>> {
    let spec = value.trim().strip_prefix("bytes=")?;
    if spec.contains(',') {
        return None;
    }
    let (a, b) = spec.split_once('-')?;
    let (a, b) = (a.trim(), b.trim());
    let range = if a.is_empty() {
        let n: u64 = b.parse().ok()?;
        if n == 0 || len == 0 {
            return Some(Err(()));
        }
        (len.saturating_sub(n), len - 1)
    } else {
        let start: u64 = a.parse().ok()?;
        let end = if b.is_empty() { len.saturating_sub(1) } else { b.parse::<u64>().ok()?.min(len.saturating_sub(1)) };
        if start >= len || start > end {
            return Some(Err(()));
        }
        (start, end)
    };
    Some(Ok(range))
}

fn serve_video(state: &State, id: &str, range: Option<String>) -> Reply {
    let files = match video_files(&state.cfg.videos_dir) {
        Ok(f) => f,
        Err(e) => return error_reply(500, "Io", e.to_string()),
    };
    let Some((_, path, mime)) = files.into_iter().find(|(v, _, _)| v == id) else {
        return error_reply(404, "NotFound", format!("video {id}"));
    };
    let open = || -> io::Result<(File, u64)> {
        let f = File::open(&path)?;
        let len = f.metadata()?.len();
        Ok((f, len))
    };
    let (mut file, len) = match open() {
        Ok(v) => v,
        Err(e) => return error_reply(500, "Io", e.to_string()),
    };
    let base = vec![header("Content-Type", mime), header("Accept-Ranges", "bytes")];
    match range.and_then(|r| parse_range(&r, len)) {
        None => Response::new(StatusCode(200), base, Box::new(file) as Box<dyn Read + Send>, Some(len as usize), None),
        Some(Err(())) => {
            error_reply(416, "RangeNotSatisfiable", format!("file has {len} bytes")).with_header(header("Content-Range", &format!("bytes */{len}")))
        }
        Some(Ok((start, end))) => {
            if let Err(e) = file.seek(SeekFrom::Start(start)) {
                return error_reply(500, "Io", e.to_string());
            }
            let n = end - start + 1;
            let mut headers = base;
            headers.push(header("Content-Range", &format!("bytes {start}-{end}/{len}")));
            Response::new(StatusCode(206), headers, Box::new(file.take(n)) as Box<dyn Read + Send>, Some(n as usize), None)
        }
    }
}

fn post_annotation(state: &State, req: &mut Request) -> Reply {
    let mut body = String::new();
    if let Err(e) = req.as_reader().take(MAX_UPLOAD_BYTES + 1).read_to_string(&mut body) {
        return error_reply(400, "ValidationError", format!("unreadable body: {e}"));
    }
    if body.len() as u64 > MAX_UPLOAD_BYTES {
        return error_reply(413, "PayloadTooLarge", format!("limit is {MAX_UPLOAD_BYTES} bytes"));
    }
    let track = match parse_jsonl(&body) {
        Ok(t) => t,
        Err(e) => return error_reply(400, "ValidationError", e.to_string()),
    };
    for (what, id) in [("video_id", &track.video_id), ("coder_id", &track.coder_id)] {
        if !safe_id(id) {
            return error_reply(400, "ValidationError", format!("{what} {id:?} must be non-empty [A-Za-z0-9._-] without '__'"));
        }
    }
    let lock = state
        .video_locks
        .lock()
        .expect("lock table")
        .entry(track.video_id.clone())
        .or_default()
        .clone();
    let _guard = lock.lock().expect("video lock");
    let name = track_file_name(&track, TrackFormat::Jsonl);
    let dest = state.cfg.annotations_dir.join(&name);
    let tmp = state.cfg.annotations_dir.join(format!(".{name}.tmp"));
    let written = fs::create_dir_all(&state.cfg.annotations_dir)
        .and_then(|_| fs::write(&tmp, to_jsonl(&track)))
        .and_then(|_| fs::rename(&tmp, &dest));
    match written {
        Ok(()) => json_reply(
            201,
            &json!({ "video_id": track.video_id, "coder_id": track.coder_id, "file": name, "samples": track.len() }),
        ),
        Err(e) => error_reply(500, "Io", e.to_string()),
    }
}

#[derive(Serialize)]
struct PredictionPoint {
    frame: u64,
    t: f64,
    engagement: f64,
}

fn predictions(state: &State, id: &str) -> Reply {
    let Some(model) = &state.cfg.model else {
        return error_reply(404, "NoModel", "service started without a checkpoint");
    };
    if !safe_id(id) {
        return error_reply(404, "NotFound", format!("video {id}"));
    }
    let path = state.cfg.features_dir.join(format!("{id}.egft"));
    if !path.is_file() {
        return error_reply(404, "NotFound", format!("no features for video {id}"));
    }
    let features = match read_feature_file_expect(&path, model.input_dim()) {
        Ok(f) => f,
        Err(e) => return error_reply(500, "Features", e.to_string()),
    };
    match batch_scores(model, &features, state.cfg.w) {
        Ok(scores) => {
            let series: Vec<PredictionPoint> = scores
                .into_iter()
                .map(|(frame, engagement)| PredictionPoint { frame, t: frame as f64 / state.cfg.video_rate_hz, engagement })
                .collect();
            json_reply(
                200,
                &json!({
                    "video_id": id,
                    "w": state.cfg.w,
                    "rate_hz": state.cfg.video_rate_hz,
                    "frame_count": features.len(),
                    "series": series,
                }),
            )
        }
        Err(e) => error_reply(500, "Model", e.to_string()),
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        _ => "application/octet-stream",
    }
}

fn static_asset(state: &State, url_path: &str) -> Reply {
    let rel = url_path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let Some(dir) = &state.cfg.ui_dir else {
        return if rel == "index.html" {
            bytes_reply(200, "text/html; charset=utf-8", FALLBACK_INDEX.as_bytes().to_vec())
        } else {
            error_reply(404, "NotFound", url_path)
        };
    };
    let rel_path = Path::new(rel);
    if !rel_path.components().all(|c| matches!(c, Component::Normal(_))) {
        return error_reply(404, "NotFound", url_path);
    }
    let full = dir.join(rel_path);
    match fs::read(&full) {
        Ok(bytes) => bytes_reply(200, content_type(&full), bytes),
        Err(_) => error_reply(404, "NotFound", url_path),
    }
}
