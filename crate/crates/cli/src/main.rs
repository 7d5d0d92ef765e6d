use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aeromap::mosaic::BlendConfig;
use aeromap::pipeline::stats::steady_state_delta;
use aeromap::pipeline::{self, DensifierKind, Mode, PipelineConfig, PoseProviderKind, RunReport};
use aeromap::synth::{self, SceneSpec};
use aeromap::Error;
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_ABORT: u8 = 3;

/// Incremental orthophoto and elevation mapping from geotagged aerial frames.
#[derive(Parser, Debug)]
#[command(name = "map", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Process a directory of frames into a mosaic and elevation model.
    Run(RunArgs),
    /// Render a synthetic survey with ground truth.
    Synth {
        /// Scene description (TOML); the built-in default scene if omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the throughput history of a run report.
    Stats {
        report: PathBuf,
        /// Seconds of warm-up excluded from the steady-state mean.
        #[arg(long, default_value_t = 30.0)]
        warmup: f64,
        /// Print every sample, not only the summary.
        #[arg(long)]
        history: bool,
    },
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// gnss, visual or elevation.
    #[arg(long)]
    mode: String,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Output cell size in metres; native image resolution if omitted.
    #[arg(long)]
    gsd: Option<f64>,
    /// Square metres.
    #[arg(long, default_value_t = BlendConfig::default().variance_threshold)]
    variance_threshold: f64,
    /// Export a snapshot every N fused frames (0: final only).
    #[arg(long, default_value_t = 0)]
    snapshot_every: usize,
    /// synthetic or none.
    #[arg(long, default_value = "none")]
    pose_provider: String,
    /// groundtruth, blockmatch or none.
    #[arg(long, default_value = "none")]
    densifier: String,
    /// Truth directory of a synthetic dataset (default: INPUT/../truth).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    queue_capacity: usize,
    /// Also export the accumulated point cloud as PLY.
    #[arg(long)]
    cloud: bool,
}

fn config_from(args: RunArgs) -> Result<PipelineConfig, Error> {
    let mode: Mode = args.mode.parse()?;
    let mut cfg = PipelineConfig::new(mode, args.input, args.output);
    cfg.gsd = args.gsd;
    cfg.blend.variance_threshold = args.variance_threshold;
    cfg.snapshot_every = args.snapshot_every;
    cfg.pose_provider = args.pose_provider.parse::<PoseProviderKind>()?;
    cfg.densifier = args.densifier.parse::<DensifierKind>()?;
    cfg.truth = args.truth;
    cfg.queue_capacity = args.queue_capacity;
    cfg.export_cloud = args.cloud;
    Ok(cfg)
}

fn run(args: RunArgs) -> ExitCode {
    let cfg = match config_from(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = cfg.output.clone();
    match pipeline::run(cfg) {
        Ok(report) => {
            println!(
                "{} frames found, {} skipped, {} fused",
                report.frames_found, report.frames_skipped, report.frames_fused
            );
            for p in &report.outputs {
                println!("wrote {}", p.display());
            }
            if report.frames_found > 0 {
                println!("report {}", out.join(pipeline::REPORT_FILE).display());
            }
            match report.aborted {
                Some(reason) => {
                    eprintln!("aborted: {reason}");
                    ExitCode::from(EXIT_ABORT)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn synth(spec: Option<&Path>, out: &Path) -> ExitCode {
    let spec = match spec {
        None => SceneSpec::default(),
        Some(p) => match std::fs::read_to_string(p)
            .map_err(|e| e.to_string())
            .and_then(|t| SceneSpec::from_toml(&t).map_err(|e| e.to_string()))
        {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {}: {e}", p.display());
                return ExitCode::from(EXIT_CONFIG);
            }
        },
    };
    match synth::generate(&spec, out) {
        Ok(d) => {
            println!("{} frames in {}", d.frames, d.images.display());
            println!("truth in {}", d.truth.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn fmt_delta(d: Option<f64>) -> String {
    d.map_or_else(|| "-".into(), |d| format!("{d:.3}"))
}

fn print_stats(report: &RunReport, warmup: f64, history: bool) {
    println!(
        "mode {}, {} frames fused in {:.1} s{}",
        report.mode,
        report.frames_fused,
        report.elapsed,
        report.aborted.as_ref().map_or(String::new(), |a| format!(" (aborted: {a})"))
    );
    println!(
        "{:<10} {:>7} {:>7} {:>7} {:>6} {:>8} {:>8} {:>8}",
        "stage", "in", "out", "dropped", "queue", "f_in", "f_out", "delta"
    );
    for s in &report.stages {
        let last = s.history.last();
        println!(
            "{:<10} {:>7} {:>7} {:>7} {:>6} {:>8.3} {:>8.3} {:>8}",
            s.stage,
            s.frames_in,
            s.frames_out,
            s.dropped,
            s.queue_high_water,
            last.map_or(0.0, |h| h.f_in),
            last.map_or(0.0, |h| h.f_out),
            fmt_delta(steady_state_delta(&s.history, warmup, f64::INFINITY)),
        );
    }
    if history {
        for s in &report.stages {
            println!("\n{}", s.stage);
            println!("{:>8} {:>8} {:>8} {:>8}", "t", "f_in", "f_out", "delta");
            for h in &s.history {
                println!("{:>8.1} {:>8.3} {:>8.3} {:>8}", h.t, h.f_in, h.f_out, fmt_delta(h.delta_perf));
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => run(args),
        Command::Synth { spec, out } => synth(spec.as_deref(), &out),
        Command::Stats { report, warmup, history } => match RunReport::read(&report) {
            Ok(r) => {
                print_stats(&r, warmup, history);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}
