use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use child_core::bridge::{BridgeOptions, DEFAULT_ASSETS_PORT, DEFAULT_CONSOLE_PORT};
use child_core::config::{validate_mapping, DeviceConfig};
use child_core::follower_sim::scenario::{build_source, load_scenario, run_scenario};
use child_core::leader_source::{read_trace, record, Hold, LeaderSource, Replay, SineSweep};
use child_core::node::{LeaderFeed, Node, NodeOptions, MAX_RATE_HZ, MIN_RATE_HZ};
use child_core::transport::{latency_probe, publish_loop, PublishOptions, DEFAULT_PROBE_PORT, DEFAULT_STATE_PORT};

const USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "child", version, about = "Joint-level whole-body teleoperation node and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a leader/follower config pair and print the joint mapping.
    Validate {
        leader: PathBuf,
        follower: PathBuf,
    },
    /// Run a live teleoperation node until interrupted.
    Run(RunArgs),
    /// Measure one-way frame latency over loopback UDP.
    BenchLatency {
        /// Seconds to measure.
        #[arg(long, default_value_t = 10.0, value_parser = positive)]
        duration: f64,
        /// Frames per second.
        #[arg(long, default_value_t = 100.0, value_parser = positive)]
        rate: f64,
        /// Address the probe receiver binds.
        #[arg(long, env = "CHILD_PROBE_ENDPOINT", default_value_t = format!("127.0.0.1:{DEFAULT_PROBE_PORT}"))]
        endpoint: String,
        /// Machine-readable report.
        #[arg(long, default_value = "latency_report.json")]
        report: PathBuf,
    },
    /// Run a scenario script through the full stack offline; exit 1 if any
    /// assertion fails.
    Scenario {
        script: PathBuf,
        /// Write `<name>.events` and `<name>.trajectory` here.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Record a synthetic leader source to a trace file.
    Record {
        #[arg(long)]
        leader: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        source: SynthArgs,
        /// Seconds to record; defaults to the source's own length.
        #[arg(long, value_parser = positive)]
        duration: Option<f64>,
        #[arg(long, default_value_t = 100.0, value_parser = rate_hz)]
        rate: f64,
    },
    /// Play a recorded trace through a live node and print the outcome.
    Replay {
        trace: PathBuf,
        #[arg(long)]
        leader: PathBuf,
        #[arg(long)]
        follower: PathBuf,
        #[arg(long, default_value_t = 1.0, value_parser = positive)]
        speed: f64,
        #[arg(long, default_value_t = 100.0, value_parser = rate_hz)]
        rate: f64,
        #[arg(long, env = "CHILD_STATE_ENDPOINT", default_value_t = format!("127.0.0.1:{DEFAULT_STATE_PORT}"))]
        state_endpoint: String,
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Use the leader source of this scenario script.
    #[arg(long, conflicts_with = "sine")]
    script: Option<PathBuf>,
    /// Sine sweep `amplitude,frequency` over every leader joint.
    #[arg(long, value_parser = sine_spec)]
    sine: Option<(f64, f64)>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceKind {
    /// Scripted or synthetic leader (`--script`, `--sine`, or a still home pose).
    Synth,
    /// Replay `--trace`.
    Replay,
    /// Leader input from the browser console; implies `--console`.
    Console,
    /// No local leader; frames come from another process.
    None,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Leader and follower in this process.
    Combined,
    /// Follower only: listen on the state endpoint.
    Follower,
    /// Leader only: publish the source to the state endpoint.
    Leader,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    leader: PathBuf,
    /// Not needed with `--mode leader`.
    #[arg(long)]
    follower: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Combined)]
    mode: Mode,
    /// Defaults to `console` with `--console`, otherwise `synth`.
    #[arg(long, value_enum)]
    source: Option<SourceKind>,
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    speed: f64,
    /// Control and publish rate, 10 to 1000 Hz.
    #[arg(long, default_value_t = 100.0, value_parser = rate_hz)]
    rate: f64,
    #[arg(long, env = "CHILD_STATE_ENDPOINT", default_value_t = format!("127.0.0.1:{DEFAULT_STATE_PORT}"))]
    state_endpoint: String,
    /// Serve the console bridge and its static assets.
    #[arg(long)]
    console: bool,
    #[arg(long, env = "CHILD_CONSOLE_ENDPOINT", default_value_t = format!("127.0.0.1:{DEFAULT_CONSOLE_PORT}"))]
    console_endpoint: String,
    #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_ASSETS_PORT}"))]
    assets_endpoint: String,
    /// Built console directory; a placeholder page is served without it.
    #[arg(long, default_value = "console/dist")]
    assets_dir: PathBuf,
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Record the leader frames the follower receives to this trace.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Stop after this many seconds instead of waiting for Ctrl-C.
    #[arg(long, value_parser = positive)]
    duration: Option<f64>,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

fn rate_hz(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (MIN_RATE_HZ..=MAX_RATE_HZ).contains(&v) {
        Ok(v)
    } else {
        Err(format!("must be in [{MIN_RATE_HZ}, {MAX_RATE_HZ}], got {v}"))
    }
}

fn sine_spec(s: &str) -> Result<(f64, f64), String> {
    let (a, f) = s.split_once(',').ok_or("expected `amplitude,frequency`")?;
    Ok((positive(a.trim())?, positive(f.trim())?))
}

fn load(path: &Path) -> Result<DeviceConfig> {
    DeviceConfig::load(path).with_context(|| format!("config {}", path.display()))
}

fn synth_source(args: &SynthArgs, leader: &DeviceConfig) -> Result<Box<dyn LeaderSource>> {
    if let Some(script) = &args.script {
        let (spec, base) = load_scenario(script)?;
        return Ok(build_source(&spec, &base, leader)?);
    }
    if let Some((amplitude, frequency)) = args.sine {
        return Ok(Box::new(SineSweep::new(leader, amplitude, frequency, None)?));
    }
    Ok(Box::new(Hold::home(leader)))
}

fn replay_source(trace: &Path, speed: f64, leader: &DeviceConfig) -> Result<Replay> {
    let trace = read_trace(trace).with_context(|| format!("trace {}", trace.display()))?;
    trace.header.check_schema(leader)?;
    Ok(Replay::new(trace, speed)?)
}

/// Blocks until Ctrl-C or `duration` elapses.
fn wait(duration: Option<f64>) -> Result<()> {
    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed)).context("installing the signal handler")?;
    }
    let deadline = duration.map(|d| Instant::now() + Duration::from_secs_f64(d));
    while !stop.load(Ordering::Relaxed) && deadline.map_or(true, |d| Instant::now() < d) {
        std::thread::sleep(Duration::from_millis(20));
    }
    Ok(())
}

fn cmd_validate(leader: &Path, follower: &Path) -> Result<()> {
    let report = validate_mapping(&load(leader)?, &load(follower)?)?;
    print!("{report}");
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let leader = load(&args.leader)?;
    let source_kind = args.source.unwrap_or(if args.console { SourceKind::Console } else { SourceKind::Synth });
    let local_source = |leader: &DeviceConfig| -> Result<Option<Box<dyn LeaderSource>>> {
        Ok(match source_kind {
            SourceKind::Synth => Some(synth_source(&args.synth, leader)?),
            SourceKind::Replay => {
                let Some(trace) = &args.trace else { bail!("--source replay needs --trace") };
                Some(Box::new(replay_source(trace, args.speed, leader)?))
            }
            SourceKind::Console | SourceKind::None => None,
        })
    };

    if args.mode == Mode::Leader {
        if args.console || source_kind == SourceKind::Console {
            bail!("the console bridge runs on the follower; use --mode combined or follower");
        }
        let Some(source) = local_source(&leader)? else { bail!("--mode leader needs a local source") };
        let publisher = publish_loop(source, &args.state_endpoint, PublishOptions::new(args.rate))
            .with_context(|| format!("publishing to {}", args.state_endpoint))?;
        info!("publishing leader frames to udp://{}", args.state_endpoint);
        wait(args.duration)?;
        let stats = publisher.stop();
        println!("sent {} frames, {} dropped", stats.sent, stats.dropped);
        return Ok(());
    }

    let Some(follower_path) = &args.follower else { bail!("--follower is required") };
    let mut options = NodeOptions::new(leader, load(follower_path)?);
    options.rate_hz = args.rate;
    options.state_endpoint = args.state_endpoint.clone();
    options.log_dir = args.log_dir.clone();
    options.record = args.record.clone();
    options.feed = match (args.mode, source_kind) {
        (Mode::Follower, SourceKind::Console) => LeaderFeed::Console,
        (Mode::Follower, _) => LeaderFeed::External,
        (_, SourceKind::Console) => LeaderFeed::Console,
        (_, SourceKind::None) => LeaderFeed::External,
        _ => LeaderFeed::Source(local_source(&options.leader)?.expect("local source")),
    };
    if args.console || source_kind == SourceKind::Console {
        options.console = Some(BridgeOptions {
            endpoint: args.console_endpoint.clone(),
            assets_endpoint: Some(args.assets_endpoint.clone()),
            assets_dir: Some(args.assets_dir.clone()),
            ..Default::default()
        });
    }
    let node = Node::start(options)?;
    if let Some(addr) = node.assets_addr() {
        println!("console: http://{addr}/");
    }
    wait(args.duration)?;
    let status = node.stop();
    println!(
        "{} ticks ({} overruns), phase {}, base x={:.3} y={:.3} heading={:.3}, {} frames, {} stale ticks",
        status.ticks,
        status.overruns,
        status.phase,
        status.base_pose.x,
        status.base_pose.y,
        status.base_pose.heading,
        status.cell.accepted,
        status.stale_ticks
    );
    for e in &status.events {
        println!("{e}");
    }
    Ok(())
}

fn cmd_bench(duration: f64, rate: f64, endpoint: &str, report_path: &Path) -> Result<()> {
    let report = latency_probe(endpoint, Duration::from_secs_f64(duration), rate)?;
    println!("{report}");
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(report_path, json + "\n").with_context(|| format!("writing {}", report_path.display()))?;
    println!("report: {}", report_path.display());
    Ok(())
}

fn cmd_scenario(script: &Path, log_dir: Option<&Path>) -> Result<bool> {
    let report = run_scenario(script)?;
    println!("{report}");
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir)?;
        let (events, trajectory) = report.write_logs(dir)?;
        println!("logs: {} {}", events.display(), trajectory.display());
    }
    Ok(report.passed())
}

fn cmd_record(leader: &Path, out: &Path, synth: &SynthArgs, duration: Option<f64>, rate: f64) -> Result<()> {
    let leader = load(leader)?;
    let mut source = synth_source(synth, &leader)?;
    let Some(duration) = duration.or(source.duration_ns().map(|ns| ns as f64 * 1e-9)) else {
        bail!("this source has no natural length; pass --duration");
    };
    let frames = record(source.as_mut(), &leader, out, rate, duration)?;
    println!("recorded {frames} frames to {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_replay(
    trace: &Path,
    leader: &Path,
    follower: &Path,
    speed: f64,
    rate: f64,
    state_endpoint: &str,
    log_dir: Option<PathBuf>,
) -> Result<()> {
    let leader = load(leader)?;
    let source = replay_source(trace, speed, &leader)?;
    let length = source.duration_ns().unwrap_or(0) as f64 * 1e-9;
    let mut options = NodeOptions::new(leader, load(follower)?);
    options.rate_hz = rate;
    options.state_endpoint = state_endpoint.to_string();
    options.log_dir = log_dir;
    options.feed = LeaderFeed::Source(Box::new(source));
    let node = Node::start(options)?;
    // a few extra ticks so the last frame is consumed
    wait(Some(length + 0.1))?;
    let status = node.stop();
    println!(
        "replayed {length:.2} s: {} frames, phase {}, base x={:.3} y={:.3}",
        status.cell.accepted, status.phase, status.base_pose.x, status.base_pose.y
    );
    for e in &status.events {
        println!("{e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { leader, follower } => cmd_validate(&leader, &follower),
        Command::Run(args) => cmd_run(args),
        Command::BenchLatency { duration, rate, endpoint, report } => cmd_bench(duration, rate, &endpoint, &report),
        Command::Scenario { script, log_dir } => {
            if !script.is_file() {
                eprintln!("error: no scenario script at {}", script.display());
                return ExitCode::from(USAGE);
            }
            match cmd_scenario(&script, log_dir.as_deref()) {
                Ok(true) => Ok(()),
                Ok(false) => return ExitCode::FAILURE,
                Err(e) => Err(e),
            }
        }
        Command::Record { leader, out, source, duration, rate } => cmd_record(&leader, &out, &source, duration, rate),
        Command::Replay { trace, leader, follower, speed, rate, state_endpoint, log_dir } => {
            cmd_replay(&trace, &leader, &follower, speed, rate, &state_endpoint, log_dir)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
