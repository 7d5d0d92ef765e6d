//! Stage wiring, transport, throughput statistics and export.
//!
//! Every stage runs on its own thread and talks to its neighbours only through
//! bounded queues. Frames move downstream by value. When the input runs out a
//! flush token travels down the chain and each stage drains what it still
//! holds before passing the token on.

pub mod export;
pub mod ingest;
pub mod queue;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::densify::{groundtruth_densifier, BlockMatchDensifier, DensifyConfig, DensifyStage, Densifier};
use crate::error::{Error, Result};
use crate::geo::{CameraModel, Frame, PoseSource};
use crate::mosaic::{BlendConfig, GlobalMap};
use crate::pose::{NoPoseProvider, PoseProvider, PoseStage, StagePoseConfig};
use crate::rectify;
use crate::surface::{self, SurfaceConfig};
use crate::synth::{load_truth, SyntheticPoseProvider};

use export::{export_snapshot, Snapshot};
use ingest::{ingest_frame, read_camera, scan_directory, FrameSource, CAMERA_FILE};
use queue::{BoundedQueue, Message, QueuePolicy};
use stats::{Clock, Direction, ScaledClock, StageStats, StatsSample};

pub const REPORT_FILE: &str = "report.json";

pub const INGEST: &str = "ingest";
pub const POSE: &str = "pose";
pub const DENSIFY: &str = "densify";
pub const SURFACE: &str = "surface";
pub const RECTIFY: &str = "rectify";
pub const MOSAIC: &str = "mosaic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// GNSS/heading poses, planar surface, no densification.
    GnssOnly,
    /// Visual poses, planar surface.
    VisualStitch,
    /// Visual poses and the full densify/surface chain.
    Elevation,
}

impl Mode {
    /// Stages spawned for this mode, in flow order.
    pub fn stages(self) -> &'static [&'static str] {
        match self {
            Mode::Elevation => &[INGEST, POSE, DENSIFY, SURFACE, RECTIFY, MOSAIC],
            _ => &[INGEST, POSE, SURFACE, RECTIFY, MOSAIC],
        }
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gnss" => Ok(Mode::GnssOnly),
            "visual" => Ok(Mode::VisualStitch),
            "elevation" => Ok(Mode::Elevation),
            other => Err(Error::Config(format!("unknown mode `{other}` (gnss, visual, elevation)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::GnssOnly => "gnss",
            Mode::VisualStitch => "visual",
            Mode::Elevation => "elevation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoseProviderKind {
    /// Truth poses seen through the degraded visual frame of a synthetic dataset.
    Synthetic,
    #[default]
    None,
}

impl FromStr for PoseProviderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(Self::Synthetic),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown pose provider `{other}` (synthetic, none)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensifierKind {
    GroundTruth,
    BlockMatch,
    #[default]
    None,
}

impl FromStr for DensifierKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "groundtruth" => Ok(Self::GroundTruth),
            "blockmatch" => Ok(Self::BlockMatch),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!(
                "unknown densifier `{other}` (groundtruth, blockmatch, none)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Directory of images, sidecars and `camera.toml`.
    pub input: PathBuf,
    pub output: PathBuf,
    /// Output cell size in metres; `None` uses each frame's native resolution.
    pub gsd: Option<f64>,
    /// Export a snapshot every this many fused frames; 0 exports only at the end.
    pub snapshot_every: usize,
    pub pose: StagePoseConfig,
    pub densify: DensifyConfig,
    pub surface: SurfaceConfig,
    pub blend: BlendConfig,
    pub pose_provider: PoseProviderKind,
    pub densifier: DensifierKind,
    /// Truth directory of a synthetic dataset; defaults to `<input>/../truth`.
    pub truth: Option<PathBuf>,
    pub queue_capacity: usize,
    pub queue_policy: QueuePolicy,
    /// Releases frames at this rate (Hz) instead of as fast as they load.
    pub input_rate: Option<f64>,
    /// Minimum seconds each stage spends per frame.
    pub stage_delay: BTreeMap<String, f64>,
    /// Seconds.
    pub stats_window: f64,
    /// Seconds between stats samples.
    pub stats_interval: f64,
    pub export_cloud: bool,
}

impl PipelineConfig {
    pub fn new(mode: Mode, input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            mode,
            input: input.into(),
            output: output.into(),
            gsd: None,
            snapshot_every: 0,
            pose: StagePoseConfig::default(),
            densify: DensifyConfig::default(),
            surface: SurfaceConfig::default(),
            blend: BlendConfig::default(),
            pose_provider: PoseProviderKind::None,
            densifier: DensifierKind::None,
            truth: None,
            queue_capacity: 8,
            queue_policy: QueuePolicy::Block,
            input_rate: None,
            stage_delay: BTreeMap::new(),
            stats_window: stats::DEFAULT_WINDOW,
            stats_interval: 1.0,
            export_cloud: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if let Some(g) = self.gsd {
            if !(g > 0.0 && g.is_finite()) {
                return bad(format!("gsd must be positive, got {g}"));
            }
        }
        self.blend.validate()?;
        if self.queue_capacity == 0 {
            return bad("queue capacity must be at least 1".into());
        }
        if let Some(r) = self.input_rate {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("input rate must be positive, got {r}"));
            }
        }
        for (stage, d) in &self.stage_delay {
            if !self.mode.stages().contains(&stage.as_str()) {
                return bad(format!("no stage `{stage}` in {} mode", self.mode));
            }
            if !(*d >= 0.0 && d.is_finite()) {
                return bad(format!("delay for `{stage}` must be non-negative"));
            }
        }
        if !(self.stats_window > 0.0 && self.stats_interval > 0.0) {
            return bad("stats window and interval must be positive".into());
        }
        if self.mode == Mode::GnssOnly && self.pose_provider != PoseProviderKind::None {
            return bad("gnss mode takes no pose provider".into());
        }
        if self.mode != Mode::Elevation && self.densifier != DensifierKind::None {
            return bad(format!("{} mode takes no densifier", self.mode));
        }
        Ok(())
    }

    pub fn truth_dir(&self) -> PathBuf {
        self.truth
            .clone()
            .unwrap_or_else(|| self.input.join("..").join(crate::synth::TRUTH_DIR))
    }
}

/// Pose of one fused frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub id: u64,
    pub timestamp: f64,
    pub source: PoseSource,
    /// Row-major 3x4 camera-to-world matrix.
    pub pose: [f64; 12],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub frames_in: u64,
    pub frames_out: u64,
    /// Frames discarded by a full inbox.
    pub dropped: u64,
    pub queue_high_water: usize,
    /// Ids published downstream, in order.
    pub published: Vec<u64>,
    pub history: Vec<StatsSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub frames_found: usize,
    pub frames_skipped: usize,
    pub frames_fused: usize,
    pub frames: Vec<FrameRecord>,
    pub stages: Vec<StageReport>,
    pub outputs: Vec<PathBuf>,
    /// Set when a stage failed and the run stopped early.
    pub aborted: Option<String>,
    /// Seconds on the pipeline clock.
    pub elapsed: f64,
}

impl RunReport {
    fn empty(mode: Mode) -> Self {
        Self {
            mode,
            frames_found: 0,
            frames_skipped: 0,
            frames_fused: 0,
            frames: Vec::new(),
            stages: Vec::new(),
            outputs: Vec::new(),
            aborted: None,
            elapsed: 0.0,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            what: "report",
            reason: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            what: "report",
            reason: e.to_string(),
        })
    }
}

/// Per-frame work of an intermediate stage.
trait StageWorker: Send {
    fn process(&mut self, frame: Frame) -> Vec<Frame>;
    fn flush(&mut self) -> Vec<Frame> {
        Vec::new()
    }
}

impl StageWorker for PoseStage {
    fn process(&mut self, frame: Frame) -> Vec<Frame> {
        self.process_frame(frame)
    }
    fn flush(&mut self) -> Vec<Frame> {
        PoseStage::flush(self)
    }
}

impl StageWorker for DensifyStage {
    fn process(&mut self, frame: Frame) -> Vec<Frame> {
        self.process_frame(frame)
    }
    fn flush(&mut self) -> Vec<Frame> {
        DensifyStage::flush(self)
    }
}

struct SurfaceWorker(SurfaceConfig);

impl StageWorker for SurfaceWorker {
    fn process(&mut self, frame: Frame) -> Vec<Frame> {
        let id = frame.id;
        match surface::process_frame(frame, &self.0) {
            Ok(f) => vec![f],
            Err(e) => {
                warn!("surface: skipping frame {id}: {e}");
                Vec::new()
            }
        }
    }
}

struct RectifyWorker {
    gsd: Option<f64>,
    keep_cloud: bool,
}

impl StageWorker for RectifyWorker {
    fn process(&mut self, mut frame: Frame) -> Vec<Frame> {
        let gsd = match self.gsd.map_or_else(|| rectify::default_target_gsd(&frame), Ok) {
            Ok(g) => g,
            Err(e) => {
                warn!("rectify: skipping frame {}: {e}", frame.id);
                return Vec::new();
            }
        };
        match rectify::rectify(&frame, gsd) {
            Ok(grid) => {
                frame.ortho = Some(grid);
                frame.surface = None;
                if !self.keep_cloud {
                    frame.sparse_cloud = None;
                    frame.dense_cloud = None;
                }
                vec![frame]
            }
            Err(e) => {
                warn!("rectify: skipping frame {}: {e}", frame.id);
                Vec::new()
            }
        }
    }
}

/// Counters and published ids of one stage.
struct Monitor {
    stats: StageStats,
    published: Vec<u64>,
}

type SharedMonitor = Arc<Mutex<Monitor>>;

/// The inbox of a stage together with that stage's monitor, so producers can
/// count what they deliver.
#[derive(Clone)]
struct Link {
    queue: Arc<BoundedQueue<Frame>>,
    monitor: SharedMonitor,
}

/// Shared run state every worker sees.
struct Shared {
    clock: Arc<dyn Clock>,
    abort: Mutex<Option<String>>,
}

impl Shared {
    fn fail(&self, stage: &str, reason: String) {
        let mut a = self.abort.lock().expect("abort lock");
        if a.is_none() {
            *a = Some(format!("{stage}: {reason}"));
        }
    }
}

/// Closes a worker's queues when it exits, and records a panic as an abort.
struct Guard {
    stage: &'static str,
    shared: Arc<Shared>,
    queues: Vec<Arc<BoundedQueue<Frame>>>,
}

impl Drop for Guard {
    fn drop(&mut self) {
        if thread::panicking() {
            self.shared.fail(self.stage, "worker panicked".into());
        }
        for q in &self.queues {
            q.close();
        }
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "worker panicked".into())
}

/// Counts `frame` out of `own` and into `next`, then hands it over. Returns
/// false once the downstream side is gone.
fn publish(frame: Frame, own: &SharedMonitor, next: &Link, clock: &dyn Clock) -> bool {
    let id = frame.id;
    let t = clock.now();
    {
        let mut m = own.lock().expect("monitor lock");
        m.stats.record_message(Direction::Out, t);
        m.published.push(id);
    }
    next.monitor.lock().expect("monitor lock").stats.record_message(Direction::In, t);
    next.queue.push(Message::Item(frame)).is_ok()
}

fn run_worker(
    stage: &'static str,
    mut worker: Box<dyn StageWorker>,
    inbox: Link,
    next: Link,
    delay: f64,
    shared: Arc<Shared>,
) {
    let _guard = Guard {
        stage,
        shared: shared.clone(),
        queues: vec![inbox.queue.clone(), next.queue.clone()],
    };
    let clock = shared.clock.as_ref();
    loop {
        match inbox.queue.pop() {
            Some(Message::Item(frame)) => {
                let start = clock.now();
                let out = worker.process(frame);
                clock.sleep_until(start + delay);
                for f in out {
                    if !publish(f, &inbox.monitor, &next, clock) {
                        return;
                    }
                }
            }
            Some(Message::Flush) => {
                for f in worker.flush() {
                    if !publish(f, &inbox.monitor, &next, clock) {
                        return;
                    }
                }
                let _ = next.queue.push(Message::Flush);
                return;
            }
            None => {
                shared.fail(stage, "upstream closed without flushing".into());
                return;
            }
        }
    }
}

/// A configured pipeline ready to run. Providers and clock can be replaced
/// before `run`.
pub struct Pipeline {
    config: PipelineConfig,
    clock: Arc<dyn Clock>,
    provider: Box<dyn PoseProvider>,
    densifier: Option<Box<dyn Densifier>>,
}

impl Pipeline {
    /// Validates the configuration and builds the named providers.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let provider: Box<dyn PoseProvider> = match config.pose_provider {
            PoseProviderKind::None => Box::new(NoPoseProvider),
            PoseProviderKind::Synthetic => Box::new(
                SyntheticPoseProvider::from_truth_dir(&config.truth_dir())
                    .map_err(|e| Error::Config(format!("synthetic pose provider: {e}")))?,
            ),
        };
        let densifier: Option<Box<dyn Densifier>> = match config.densifier {
            DensifierKind::None => None,
            DensifierKind::BlockMatch => Some(Box::new(BlockMatchDensifier::default())),
            DensifierKind::GroundTruth => {
                let (scene, _) = load_truth(&config.truth_dir())
                    .map_err(|e| Error::Config(format!("ground-truth densifier: {e}")))?;
                Some(Box::new(groundtruth_densifier(Arc::new(scene))))
            }
        };
        Ok(Self {
            config,
            clock: Arc::new(ScaledClock::realtime()),
            provider,
            densifier,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_pose_provider(mut self, provider: Box<dyn PoseProvider>) -> Self {
        self.provider = provider;
        self
    }

    pub fn with_densifier(mut self, densifier: Option<Box<dyn Densifier>>) -> Self {
        self.densifier = densifier;
        self
    }

    /// Runs to completion. The report is also written to the output directory
    /// unless the input was empty.
    pub fn run(self) -> Result<RunReport> {
        let Pipeline {
            config,
            clock,
            provider,
            densifier,
        } = self;
        let camera = read_camera(&config.input.join(CAMERA_FILE))?;
        let sources = scan_directory(&config.input)?;
        let mode = config.mode;
        if sources.is_empty() {
            info!("no frames in {}", config.input.display());
            return Ok(RunReport::empty(mode));
        }
        std::fs::create_dir_all(&config.output).map_err(|e| Error::io(&config.output, e))?;
        info!("{} mode: {} frames from {}", mode, sources.len(), config.input.display());

        let shared = Arc::new(Shared {
            clock: clock.clone(),
            abort: Mutex::new(None),
        });
        let names = mode.stages();
        let links: Vec<Link> = names
            .iter()
            .map(|n| Link {
                queue: Arc::new(BoundedQueue::new(config.queue_capacity, config.queue_policy)),
                monitor: Arc::new(Mutex::new(Monitor {
                    stats: StageStats::new(*n, config.stats_window),
                    published: Vec::new(),
                })),
            })
            .collect();
        let link = |name: &str| -> Link {
            links[names.iter().position(|n| *n == name).expect("stage in mode")].clone()
        };
        let delay = |name: &str| config.stage_delay.get(name).copied().unwrap_or(0.0);

        let mut surface_cfg = config.surface.clone();
        surface_cfg.force_planar |= mode != Mode::Elevation;
        let mut workers: Vec<(&'static str, Box<dyn StageWorker>)> =
            vec![(POSE, Box::new(PoseStage::new(config.pose.clone(), provider)))];
        if mode == Mode::Elevation {
            workers.push((DENSIFY, Box::new(DensifyStage::new(config.densify, densifier))));
        }
        workers.push((SURFACE, Box::new(SurfaceWorker(surface_cfg))));
        workers.push((
            RECTIFY,
            Box::new(RectifyWorker {
                gsd: config.gsd,
                keep_cloud: config.export_cloud,
            }),
        ));

        let exports: Arc<BoundedQueue<Snapshot>> = Arc::new(BoundedQueue::new(2, QueuePolicy::Block));
        let finished = Arc::new(AtomicBool::new(false));
        let skipped = Arc::new(Mutex::new(0usize));
        let mut handles = Vec::new();

        // ingest
        {
            let own = link(INGEST);
            let next = link(POSE);
            let shared = shared.clone();
            let skipped = skipped.clone();
            let rate = config.input_rate;
            let d = delay(INGEST);
            handles.push((
                INGEST,
                thread::Builder::new()
                    .name(INGEST.into())
                    .spawn(move || ingest_worker(sources, camera, own, next, rate, d, skipped, shared))
                    .map_err(|e| Error::Stage { stage: INGEST.into(), reason: e.to_string() })?,
            ));
        }
        for (name, worker) in workers {
            let inbox = link(name);
            let next = link(names[names.iter().position(|n| *n == name).expect("stage") + 1]);
            let shared = shared.clone();
            let d = delay(name);
            let h = thread::Builder::new()
                .name(name.into())
                .spawn(move || run_worker(name, worker, inbox, next, d, shared))
                .map_err(|e| Error::Stage { stage: name.into(), reason: e.to_string() })?;
            handles.push((name, h));
        }
        let fused_frames = Arc::new(Mutex::new(Vec::new()));
        let mosaic_handle = {
            let inbox = link(MOSAIC);
            let shared = shared.clone();
            let exports = exports.clone();
            let frames = fused_frames.clone();
            let cfg = MosaicSettings {
                blend: config.blend,
                snapshot_every: config.snapshot_every,
                keep_cloud: config.export_cloud,
                delay: delay(MOSAIC),
            };
            thread::Builder::new()
                .name(MOSAIC.into())
                .spawn(move || mosaic_worker(inbox, exports, cfg, frames, shared))
                .map_err(|e| Error::Stage { stage: MOSAIC.into(), reason: e.to_string() })?
        };
        let exporter = {
            let exports = exports.clone();
            let dir = config.output.clone();
            thread::spawn(move || exporter_worker(&exports, &dir))
        };
        let sampler = {
            let monitors: Vec<SharedMonitor> = links.iter().map(|l| l.monitor.clone()).collect();
            let clock = clock.clone();
            let finished = finished.clone();
            let interval = config.stats_interval;
            thread::spawn(move || {
                let mut history: Vec<Vec<StatsSample>> = vec![Vec::new(); monitors.len()];
                let mut next = clock.now() + interval;
                while !finished.load(Ordering::Acquire) {
                    clock.sleep_until(next);
                    let now = clock.now();
                    for (h, m) in history.iter_mut().zip(&monitors) {
                        h.push(m.lock().expect("monitor lock").stats.sample(now));
                    }
                    next += interval;
                }
                history
            })
        };

        for (name, h) in handles {
            if let Err(p) = h.join() {
                shared.fail(name, panic_message(p.as_ref()));
            }
        }
        let fused = match mosaic_handle.join() {
            Ok(n) => n,
            Err(p) => {
                shared.fail(MOSAIC, panic_message(p.as_ref()));
                exports.close();
                0
            }
        };
        let outputs = exporter.join().unwrap_or_default();
        finished.store(true, Ordering::Release);
        let history = sampler.join().unwrap_or_default();
        let elapsed = clock.now();

        let stages = names
            .iter()
            .zip(&links)
            .zip(history.into_iter().chain(std::iter::repeat_with(Vec::new)))
            .map(|((name, l), history)| {
                let m = l.monitor.lock().expect("monitor lock");
                StageReport {
                    stage: (*name).into(),
                    frames_in: m.stats.total_in(),
                    frames_out: m.stats.total_out(),
                    dropped: l.queue.dropped(),
                    queue_high_water: l.queue.high_water(),
                    published: m.published.clone(),
                    history,
                }
            })
            .collect();
        let aborted = shared.abort.lock().expect("abort lock").clone();
        if let Some(a) = &aborted {
            warn!("pipeline aborted: {a}");
        }
        let frames = std::mem::take(&mut *fused_frames.lock().expect("frames lock"));
        let skipped = *skipped.lock().expect("skip lock");
        let report = RunReport {
            mode,
            frames_found: links[0].monitor.lock().expect("monitor lock").stats.total_in() as usize,
            frames_skipped: skipped,
            frames_fused: fused,
            frames,
            stages,
            outputs,
            aborted,
            elapsed,
        };
        let path = config.output.join(REPORT_FILE);
        if let Err(e) = report.write(&path) {
            warn!("cannot write report: {e}");
        }
        Ok(report)
    }
}

/// Validates `config`, builds its providers and runs it on the wall clock.
pub fn run(config: PipelineConfig) -> Result<RunReport> {
    Pipeline::new(config)?.run()
}

#[allow(clippy::too_many_arguments)]
fn ingest_worker(
    sources: Vec<FrameSource>,
    camera: CameraModel,
    own: Link,
    next: Link,
    rate: Option<f64>,
    delay: f64,
    skipped: Arc<Mutex<usize>>,
    shared: Arc<Shared>,
) {
    let _guard = Guard {
        stage: INGEST,
        shared: shared.clone(),
        queues: vec![next.queue.clone()],
    };
    let clock = shared.clock.as_ref();
    let t0 = clock.now();
    for (i, src) in sources.iter().enumerate() {
        if let Some(r) = rate {
            clock.sleep_until(t0 + i as f64 / r);
        }
        let start = clock.now();
        own.monitor.lock().expect("monitor lock").stats.record_message(Direction::In, start);
        let frame = match ingest_frame(src, &camera) {
            Ok(f) => f,
            Err(e) => {
                warn!("ingest: skipping {}: {e}", src.image.display());
                *skipped.lock().expect("skip lock") += 1;
                continue;
            }
        };
        clock.sleep_until(start + delay);
        if !publish(frame, &own.monitor, &next, clock) {
            return;
        }
    }
    let _ = next.queue.push(Message::Flush);
}

struct MosaicSettings {
    blend: BlendConfig,
    snapshot_every: usize,
    keep_cloud: bool,
    delay: f64,
}

fn snapshot(map: &GlobalMap, cloud: &Option<Vec<crate::geo::CloudPoint>>) -> Option<Snapshot> {
    map.grid().map(|g| Snapshot {
        fused: map.fused(),
        map: g.clone(),
        cloud: cloud.clone(),
    })
}

/// Owns the global map. Returns the number of fused frames.
fn mosaic_worker(
    inbox: Link,
    exports: Arc<BoundedQueue<Snapshot>>,
    cfg: MosaicSettings,
    records: Arc<Mutex<Vec<FrameRecord>>>,
    shared: Arc<Shared>,
) -> usize {
    let _guard = Guard {
        stage: MOSAIC,
        shared: shared.clone(),
        queues: vec![inbox.queue.clone()],
    };
    let clock = shared.clock.as_ref();
    let mut map = GlobalMap::new(cfg.blend);
    let mut cloud = cfg.keep_cloud.then(Vec::new);
    loop {
        let frame = match inbox.queue.pop() {
            Some(Message::Item(f)) => f,
            Some(Message::Flush) => break,
            None => {
                shared.fail(MOSAIC, "upstream closed without flushing".into());
                break;
            }
        };
        let start = clock.now();
        let (Some(ortho), Some(pose)) = (frame.ortho.as_ref(), frame.pose.as_ref()) else {
            warn!("mosaic: frame {} arrived without rectified grid", frame.id);
            continue;
        };
        if let Err(e) = map.fuse(ortho) {
            warn!("mosaic: cannot fuse frame {}: {e}", frame.id);
            continue;
        }
        if let Some(c) = cloud.as_mut() {
            c.extend(frame.dense_cloud.iter().chain(frame.sparse_cloud.iter()).flatten().cloned());
        }
        let m = pose.matrix();
        let mut flat = [0.0; 12];
        for r in 0..3 {
            for c in 0..4 {
                flat[r * 4 + c] = m[(r, c)];
            }
        }
        records.lock().expect("records lock").push(FrameRecord {
            id: frame.id,
            timestamp: frame.timestamp,
            source: pose.source,
            pose: flat,
        });
        clock.sleep_until(start + cfg.delay);
        {
            let mut m = inbox.monitor.lock().expect("monitor lock");
            m.stats.record_message(Direction::Out, clock.now());
            m.published.push(frame.id);
        }
        if cfg.snapshot_every > 0 && map.fused().is_multiple_of(cfg.snapshot_every) {
            if let Some(s) = snapshot(&map, &cloud) {
                let _ = exports.push(Message::Item(s));
            }
        }
    }
    if let Some(s) = snapshot(&map, &cloud) {
        let _ = exports.push(Message::Item(s));
    }
    let _ = exports.push(Message::Flush);
    map.fused()
}

fn exporter_worker(exports: &BoundedQueue<Snapshot>, dir: &Path) -> Vec<PathBuf> {
    let mut last = Vec::new();
    while let Some(Message::Item(s)) = exports.pop() {
        match export_snapshot(&s, dir) {
            Ok(files) => {
                info!("snapshot after {} frames written to {}", s.fused, dir.display());
                last = files;
            }
            Err(e) => warn!("snapshot export failed: {e}"),
        }
    }
    last
}
