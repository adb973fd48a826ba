//! The `engage` command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::agreement::{agreement_csv, pairwise_agreement, AgreementOptions, SmoothingKind};
use crate::annotation::{format_decimal, load_track_dir};
use crate::backbone::{read_feature_file, write_feature_file_with_dim, Backbone, BackboneDescriptor, FeatureVector};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::PipelineConfig;
use crate::dataset::preprocess::preprocess_frame_with;
use crate::dataset::{align_video, build_dataset, load_dataset, save_dataset};
use crate::eval::{auc_line, derive_ground_truth, load_prediction_csv, roc_auc, roc_csv, roc_gnuplot, test_mse, InteractionLabelTrack};
use crate::service::{AnnotatorService, ServiceConfig};
use crate::source::{until_error, FrameSource};
use crate::stream::{batch_scores, run_stream, OverloadPolicy, StreamState};
use crate::train::{resume, train, Checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const CHECKPOINT_FILE: &str = "model.egck";

#[derive(Parser, Debug)]
#[command(name = "engage", version, about = "Continuous engagement estimation toolkit")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.hidden_dim=64`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pairwise inter-coder Spearman agreement over smoothing constants.
    Agreement(AgreementArgs),
    /// Split videos, pick one annotation per video and write windowed samples.
    BuildDataset(BuildDatasetArgs),
    /// Run the backbone over frames and write a feature file per video.
    ExtractFeatures(ExtractArgs),
    /// Train the regressor on a built dataset.
    Train(TrainArgs),
    /// Test-set MSE, prediction series and optional ROC.
    Evaluate(EvaluateArgs),
    /// ROC curve and AUC for one prediction series.
    Roc(RocArgs),
    /// Score a live frame source, writing NDJSON to stdout.
    Stream(StreamArgs),
    /// Emit a `t_s,annotation,prediction` series for one video.
    Plot(PlotArgs),
    /// Serve the annotation UI and its HTTP API.
    ServeAnnotator(ServeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Smoothing {
    Ema,
    Boxcar,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Policy {
    DropOldest,
    Block,
}

#[derive(Args, Debug)]
struct AgreementArgs {
    /// Directory of annotation tracks (`<video>__<coder>.csv|jsonl`).
    #[arg(long)]
    tracks: PathBuf,
    /// Smoothing time constants in seconds.
    #[arg(long = "S", value_delimiter = ',', default_value = "1,5,10,26")]
    s: Vec<f64>,
    #[arg(long, value_enum, default_value = "ema")]
    smoothing: Smoothing,
    /// Fail on rate mismatches instead of resampling.
    #[arg(long)]
    no_resample: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BuildDatasetArgs {
    /// Split seed (overrides `split_seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Frame directories, image globs, video files or `tcp://host:port`.
    #[arg(required = true)]
    inputs: Vec<String>,
    /// Video id (single input only; defaults to the file or directory name).
    #[arg(long)]
    video_id: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of interaction label files `<video>.csv` for ROC.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RocArgs {
    /// Prediction CSV with `t_s` and `engagement` columns.
    #[arg(long)]
    pred: PathBuf,
    /// Interaction label CSV `start_s,end_s,tag`.
    #[arg(long)]
    labels: PathBuf,
    /// Write the `thr,fpr,tpr` table here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a two-column `fpr tpr` file here.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StreamArgs {
    /// Image directory or glob, video file, or `tcp://host:port`.
    #[arg(long)]
    source: String,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    capacity: Option<usize>,
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    #[arg(long, default_value = "stream")]
    video_id: String,
}

#[derive(Args, Debug)]
struct PlotArgs {
    #[arg(long)]
    video: String,
    /// Coder whose track is plotted (default: first by name).
    #[arg(long)]
    coder: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Checkpoint for the predictions endpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of static UI assets.
    #[arg(long)]
    ui: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

/// A failed command: message plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure { code: EXIT_DOMAIN, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_USAGE, message: message.into() }
}

fn domain(message: impl Into<String>) -> Failure {
    Failure { code: EXIT_DOMAIN, message: message.into() }
}

type CmdResult = Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<S: AsRef<str>>(argv: &[S]) -> i32 {
    let cli = match Cli::try_parse_from(argv.iter().map(|s| s.as_ref())) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.set).map_err(|e| match e {
        crate::config::ConfigError::BadOverride(_) => usage(e.to_string()),
        other => domain(other.to_string()),
    })?;
    match cli.command {
        Command::Agreement(a) => cmd_agreement(a),
        Command::BuildDataset(a) => cmd_build_dataset(&cfg, a),
        Command::ExtractFeatures(a) => cmd_extract(&cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(&cfg, a),
        Command::Roc(a) => cmd_roc(a),
        Command::Stream(a) => cmd_stream(&cfg, a),
        Command::Plot(a) => cmd_plot(&cfg, a),
        Command::ServeAnnotator(a) => cmd_serve(&cfg, a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn cmd_agreement(a: AgreementArgs) -> CmdResult {
    if a.s.is_empty() {
        return Err(usage("--S needs at least one value"));
    }
    let tracks = load_track_dir(&a.tracks)?;
    let opts = AgreementOptions {
        smoothing: match a.smoothing {
            Smoothing::Ema => SmoothingKind::Ema,
            Smoothing::Boxcar => SmoothingKind::Boxcar,
        },
        resample: !a.no_resample,
    };
    let summary = pairwise_agreement(&tracks, &a.s, opts)?;
    emit(a.out.as_deref(), &agreement_csv(&summary))
}

fn feature_files(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| domain(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "egft"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn cmd_build_dataset(cfg: &PipelineConfig, a: BuildDatasetArgs) -> CmdResult {
    let features_dir = a.features.unwrap_or_else(|| cfg.paths.features.clone());
    let annotations_dir = a.annotations.unwrap_or_else(|| cfg.paths.annotations.clone());
    let out = a.out.unwrap_or_else(|| cfg.paths.dataset.clone());
    let seed = a.seed.unwrap_or(cfg.split_seed);
    let mut videos = Vec::new();
    for p in feature_files(&features_dir)? {
        let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        videos.push((id, read_feature_file(&p)?));
    }
    if videos.is_empty() {
        return Err(domain(format!("no feature files in {}", features_dir.display())));
    }
    let tracks = load_track_dir(&annotations_dir)?;
    let (manifest, data) = build_dataset(&videos, &tracks, cfg.video_rate_hz, cfg.w, seed)?;
    save_dataset(&manifest, &data, &out)?;
    println!(
        "videos={} train={} test={} validation={} out={}",
        manifest.videos.len(),
        data.train.len(),
        data.test.len(),
        data.validation.len(),
        out.display()
    );
    Ok(())
}

fn input_id(input: &str) -> String {
    let trimmed = input.trim_end_matches('/');
    Path::new(trimmed)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("video")
        .to_string()
}

fn cmd_extract(cfg: &PipelineConfig, a: ExtractArgs) -> CmdResult {
    if a.video_id.is_some() && a.inputs.len() != 1 {
        return Err(usage("--video-id requires exactly one input"));
    }
    if matches!(cfg.backbone, BackboneDescriptor::Precomputed { .. }) {
        return Err(usage("extract-features needs a mock or model_file backbone"));
    }
    let backbone = Backbone::load(&cfg.backbone)?;
    let dim = backbone.output_dim();
    let out_dir = a.out.unwrap_or_else(|| cfg.paths.features.clone());
    fs::create_dir_all(&out_dir)?;
    for input in &a.inputs {
        let id = a.video_id.clone().unwrap_or_else(|| input_id(input));
        let source = FrameSource::open(input, cfg.video_rate_hz)?;
        let mut vectors: Vec<FeatureVector> = Vec::new();
        let mut chunk = Vec::with_capacity(64);
        let mut frames = source.peekable();
        while frames.peek().is_some() {
            chunk.clear();
            for r in frames.by_ref().take(64) {
                chunk.push(r?);
            }
            let base = vectors.len() as u64;
            let computed: Result<Vec<FeatureVector>, Failure> = chunk
                .par_iter()
                .enumerate()
                .map(|(k, f)| {
                    let pre = preprocess_frame_with(f, cfg.stream.resize)?;
                    Ok(backbone.features_for_frame(&pre, &id, base + k as u64)?)
                })
                .collect();
            vectors.extend(computed?);
        }
        let path = out_dir.join(format!("{id}.egft"));
        write_feature_file_with_dim(&vectors, dim, &path)?;
        println!("{id}: {} frames -> {}", vectors.len(), path.display());
    }
    Ok(())
}

fn checkpoint_path(cfg: &PipelineConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| cfg.paths.checkpoints.join(CHECKPOINT_FILE))
}

fn load_model(cfg: &PipelineConfig, explicit: Option<PathBuf>) -> Result<Checkpoint, Failure> {
    let path = checkpoint_path(cfg, explicit);
    load_checkpoint(&path).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn cmd_train(mut cfg: PipelineConfig, a: TrainArgs) -> CmdResult {
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(m) = a.max_epochs {
        cfg.train.max_epochs = m;
    }
    let (manifest, data) = load_dataset(&cfg.paths.dataset, &cfg.paths.features)?;
    if manifest.w != cfg.w {
        return Err(domain(format!("dataset was built with w={} but config has w={}", manifest.w, cfg.w)));
    }
    let ck = match a.resume {
        Some(p) => {
            let ck = load_checkpoint(&p).map_err(|e| domain(format!("{}: {e}", p.display())))?;
            let max = a.max_epochs.unwrap_or(ck.config.max_epochs);
            resume(ck, &data.train, &data.validation, max)?
        }
        None => train(&data.train, &data.validation, &cfg.train)?,
    };
    let out = checkpoint_path(&cfg, a.out);
    if let Some(parent) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(&ck, &out)?;
    println!(
        "epochs={} best_epoch={} best_val_mse={} stopped_early={} checkpoint={}",
        ck.epoch,
        ck.best_epoch().map_or("-".into(), |e| e.to_string()),
        ck.best_val_mse().map_or("-".into(), |v| v.to_string()),
        ck.stopped_early,
        out.display()
    );
    Ok(())
}

fn prediction_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("t_s,engagement\n");
    for (t, v) in rows {
        let _ = writeln!(out, "{},{}", format_decimal(*t), v);
    }
    out
}

fn cmd_evaluate(cfg: &PipelineConfig, a: EvaluateArgs) -> CmdResult {
    let ck = load_model(cfg, a.checkpoint)?;
    let model = ck.model();
    let (manifest, data) = load_dataset(&cfg.paths.dataset, &cfg.paths.features)?;
    let reports = a.out.unwrap_or_else(|| cfg.paths.reports.clone());
    fs::create_dir_all(reports.join("predictions"))?;
    let mse = test_mse(model, &data.test)?;

    // per-video prediction series on the annotation grid, stamped at each
    // window's last frame
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &data.test {
        let meta = manifest.videos.iter().find(|v| *v.video_id == *s.video_id).expect("manifest video");
        let t = meta.start_offset_s + (s.start_index + manifest.w - 1) as f64 / manifest.rate_hz;
        let y = crate::model::predict(model, s)?;
        series.entry(s.video_id.to_string()).or_default().push((t, y));
    }
    for (id, rows) in &mut series {
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        fs::write(reports.join("predictions").join(format!("{id}.csv")), prediction_csv(rows))?;
    }
    let mut summary = format!("test_mse={mse}\ntest_samples={}\n", data.test.len());
    if let Some(dir) = a.labels {
        let (mut preds, mut truths) = (Vec::new(), Vec::new());
        for (id, rows) in &series {
            let path = dir.join(format!("{id}.csv"));
            if !path.is_file() {
                log::warn!("no interaction labels for {id}");
                continue;
            }
            let track = InteractionLabelTrack::load(&path)?;
            let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
            truths.extend(derive_ground_truth(&track, &times));
            preds.extend(rows.iter().map(|r| r.1));
        }
        let roc = roc_auc(&preds, &truths)?;
        fs::write(reports.join("roc.csv"), roc_csv(&roc))?;
        fs::write(reports.join("roc.dat"), roc_gnuplot(&roc))?;
        let _ = writeln!(summary, "{}", auc_line(roc.auc));
    }
    fs::write(reports.join("evaluation.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_roc(a: RocArgs) -> CmdResult {
    let rows = load_prediction_csv(&a.pred)?;
    let track = InteractionLabelTrack::load(&a.labels)?;
    let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let preds: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let truths = derive_ground_truth(&track, &times);
    let roc = roc_auc(&preds, &truths)?;
    if let Some(p) = &a.out {
        emit(Some(p), &roc_csv(&roc))?;
    }
    if let Some(p) = &a.gnuplot {
        emit(Some(p), &roc_gnuplot(&roc))?;
    }
    println!("{}", auc_line(roc.auc));
    Ok(())
}

fn check_dims(ck: &Checkpoint, backbone_dim: usize) -> CmdResult {
    if ck.model().input_dim() != backbone_dim {
        return Err(domain(format!(
            "checkpoint expects {}-dim features but the backbone produces {backbone_dim}",
            ck.model().input_dim()
        )));
    }
    Ok(())
}

fn cmd_stream(cfg: &PipelineConfig, a: StreamArgs) -> CmdResult {
    let ck = load_model(cfg, a.checkpoint)?;
    let backbone = Backbone::load(&cfg.backbone)?;
    check_dims(&ck, backbone.output_dim())?;
    let model = Arc::new(ck.model().clone());
    let mut state = StreamState::new(cfg.w, Some(model), Some(Arc::new(backbone)))?
        .with_resize(cfg.stream.resize)
        .with_video_id(a.video_id);
    let policy = match a.policy {
        Some(Policy::DropOldest) => OverloadPolicy::DropOldest,
        Some(Policy::Block) => OverloadPolicy::Block,
        None => cfg.stream.overload,
    };
    let capacity = a.capacity.unwrap_or(cfg.stream.queue_capacity);
    let (frames, err) = until_error(FrameSource::open(&a.source, cfg.video_rate_hz)?);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut write_err = None;
    let summary = run_stream(&mut state, frames, capacity, policy, |score| {
        if write_err.is_none() {
            let line = serde_json::to_string(&score).expect("score serializes");
            if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                write_err = Some(e);
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    if let Some(e) = err.lock().expect("error slot").take() {
        return Err(e.into());
    }
    let report = state.latency_report().ok();
    eprintln!(
        "{}",
        serde_json::json!({
            "pushed": summary.pushed,
            "dropped": summary.dropped,
            "scores": summary.scores,
            "latency": report,
        })
    );
    Ok(())
}

fn cmd_plot(cfg: &PipelineConfig, a: PlotArgs) -> CmdResult {
    let ck = load_model(cfg, a.checkpoint)?;
    let mut tracks: Vec<_> = load_track_dir(&cfg.paths.annotations)?
        .into_iter()
        .filter(|t| t.video_id == a.video && a.coder.as_ref().is_none_or(|c| *c == t.coder_id))
        .collect();
    tracks.sort_by(|x, y| x.coder_id.cmp(&y.coder_id));
    let Some(track) = tracks.into_iter().next() else {
        return Err(domain(format!("no annotation track for video {}", a.video)));
    };
    let features = read_feature_file(&cfg.paths.features.join(format!("{}.egft", a.video)))?;
    let record = align_video(&features, cfg.video_rate_hz, &track)?;
    let aligned: Vec<FeatureVector> = record
        .features
        .iter()
        .enumerate()
        .map(|(i, f)| FeatureVector { frame_index: i as u64, ..f.clone() })
        .collect();
    let scores: BTreeMap<u64, f64> = batch_scores(ck.model(), &aligned, cfg.w)?.into_iter().collect();
    let mut text = String::from("t_s,annotation,prediction\n");
    for (i, v) in track.values.iter().enumerate() {
        let pred = scores.get(&(i as u64)).map_or(String::new(), |p| p.to_string());
        let _ = writeln!(text, "{},{},{pred}", format_decimal(track.time_of(i)), format_decimal(*v));
    }
    emit(a.out.as_deref(), &text)
}

fn cmd_serve(cfg: &PipelineConfig, a: ServeArgs) -> CmdResult {
    let model = match a.checkpoint {
        Some(p) => Some(Arc::new(load_model(cfg, Some(p))?.model().clone())),
        None => None,
    };
    fs::create_dir_all(&cfg.paths.annotations)?;
    let service = AnnotatorService::bind(
        &a.bind,
        a.port,
        ServiceConfig {
            videos_dir: cfg.paths.videos.clone(),
            annotations_dir: cfg.paths.annotations.clone(),
            features_dir: cfg.paths.features.clone(),
            ui_dir: a.ui,
            model,
            w: cfg.w,
            video_rate_hz: cfg.video_rate_hz,
        },
    )?;
    eprintln!("listening on http://{}", service.local_addr());
    service.run(a.workers.max(1));
    Ok(())
}
