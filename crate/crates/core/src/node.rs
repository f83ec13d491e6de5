//! Live teleoperation node: UDP subscriber, fixed-rate control loop over the
//! session and the kinematic follower, an optional in-process leader
//! publisher and an optional console bridge.
//!
//! Threads talk only through the latest-value cell, the console hub and the
//! status snapshot. [`Node::stop`] joins every thread and releases every
//! socket, so a node can be started again on the same ports right away.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{info, warn};
use thiserror::Error;

use crate::bridge::{start_bridge, Bridge, BridgeOptions, ConsoleHub, ConsoleState, LinkView, STATE_RATE_HZ};
use crate::clock::now_ns;
use crate::config::{DeviceConfig, MappingError, Rig};
use crate::follower_sim::{step_follower, BasePose, FollowerState, TrackingParams};
use crate::leader_source::{LeaderSource, SourceError, TraceHeader, TraceWriter};
use crate::session::{step, GestureEvent, SessionState};
use crate::transport::{publish_loop, subscribe_latest, CellStats, PublishOptions, Publisher, Subscriber, DEFAULT_STATE_PORT};

pub const MIN_RATE_HZ: f64 = 10.0;
pub const MAX_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("rate_hz must be in [{MIN_RATE_HZ}, {MAX_RATE_HZ}], got {0}")]
    Rate(f64),
    #[error("mapping: {0}")]
    Mapping(#[from] MappingError),
    #[error("source has {found} joints, leader config has {expected}")]
    SourceSchema { expected: usize, found: usize },
    #[error("transport: {0}")]
    Transport(io::Error),
    #[error("console bridge: {0}")]
    Bridge(io::Error),
    #[error("logs: {0}")]
    Logs(io::Error),
    #[error("recording: {0}")]
    Record(#[from] SourceError),
    #[error("thread spawn: {0}")]
    Spawn(io::Error),
}

/// Where leader frames come from.
pub enum LeaderFeed {
    /// Frames arrive from another process on the state endpoint.
    External,
    /// Publish this source to the state endpoint from inside the node.
    Source(Box<dyn LeaderSource>),
    /// Publish whatever the console bridge receives. Requires `console`.
    Console,
}

pub struct NodeOptions {
    pub leader: DeviceConfig,
    pub follower: DeviceConfig,
    pub rate_hz: f64,
    /// UDP address the follower listens on for leader frames.
    pub state_endpoint: String,
    pub feed: LeaderFeed,
    pub console: Option<BridgeOptions>,
    /// Directory for `events.log`; created if missing.
    pub log_dir: Option<PathBuf>,
    /// Write every new leader frame the follower receives to this trace.
    pub record: Option<PathBuf>,
}

impl NodeOptions {
    pub fn new(leader: DeviceConfig, follower: DeviceConfig) -> Self {
        NodeOptions {
            leader,
            follower,
            rate_hz: 100.0,
            state_endpoint: format!("127.0.0.1:{DEFAULT_STATE_PORT}"),
            feed: LeaderFeed::External,
            console: None,
            log_dir: None,
            record: None,
        }
    }
}

/// Read-only view of the control loop, refreshed every tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeStatus {
    pub ticks: u64,
    /// Ticks that started later than one period behind schedule.
    pub overruns: u64,
    pub phase: &'static str,
    pub arm_active: [bool; 2],
    pub leg_joystick: [bool; 2],
    pub base_pose: BasePose,
    pub events: Vec<GestureEvent>,
    pub stale_ticks: u64,
    pub cell: CellStats,
}

pub struct Node {
    state_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    status: Arc<Mutex<NodeStatus>>,
    control: Option<JoinHandle<()>>,
    publisher: Option<Publisher>,
    bridge: Option<Bridge>,
    subscriber: Option<Subscriber>,
    hub: Option<Arc<ConsoleHub>>,
}

impl Node {
    pub fn start(options: NodeOptions) -> Result<Node, NodeError> {
        if !(MIN_RATE_HZ..=MAX_RATE_HZ).contains(&options.rate_hz) {
            return Err(NodeError::Rate(options.rate_hz));
        }
        let rig = Rig::new(options.leader, options.follower)?;
        if let LeaderFeed::Source(source) = &options.feed {
            if source.joint_count() != rig.leader_joint_count() {
                return Err(NodeError::SourceSchema {
                    expected: rig.leader_joint_count(),
                    found: source.joint_count(),
                });
            }
        }
        let mut log = match &options.log_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(NodeError::Logs)?;
                let file = File::create(dir.join("events.log")).map_err(NodeError::Logs)?;
                Some(BufWriter::new(file))
            }
            None => None,
        };

        let mut recorder = match &options.record {
            Some(path) => Some(TraceWriter::create(path, TraceHeader::for_config(&rig.leader, options.rate_hz))?),
            None => None,
        };

        let subscriber = subscribe_latest(&options.state_endpoint, rig.follower.session.staleness_timeout_ns())
            .map_err(NodeError::Transport)?;
        let state_addr = subscriber.local_addr();

        let hub = options.console.as_ref().map(|_| ConsoleHub::new(&rig.leader, &rig.follower));
        let bridge = match (&options.console, &hub) {
            (Some(bridge_options), Some(hub)) => {
                Some(start_bridge(hub.clone(), bridge_options).map_err(NodeError::Bridge)?)
            }
            _ => None,
        };

        let source: Option<Box<dyn LeaderSource>> = match options.feed {
            LeaderFeed::External => None,
            LeaderFeed::Source(source) => Some(source),
            LeaderFeed::Console => match &hub {
                Some(hub) => Some(Box::new(hub.source())),
                None => {
                    return Err(NodeError::Bridge(io::Error::new(
                        io::ErrorKind::InvalidInput,
                        "console feed needs the console bridge enabled",
                    )))
                }
            },
        };
        let publisher = match source {
            Some(source) => Some(
                publish_loop(source, &loopback_target(state_addr).to_string(), PublishOptions::new(options.rate_hz))
                    .map_err(NodeError::Transport)?,
            ),
            None => None,
        };

        let stop = Arc::new(AtomicBool::new(false));
        let status = Arc::new(Mutex::new(NodeStatus { phase: "idle", ..Default::default() }));
        let control = {
            let stop = stop.clone();
            let status = status.clone();
            let cell = subscriber.cell();
            let hub = hub.clone();
            let rate_hz = options.rate_hz;
            thread::Builder::new()
                .name("control".into())
                .spawn(move || {
                    let period_ns = (1e9 / rate_hz).round() as u64;
                    let period = Duration::from_nanos(period_ns);
                    let publish_every = ((rate_hz / STATE_RATE_HZ).round() as u64).max(1);
                    let params = TrackingParams::from_config(&rig.follower);
                    let tau_max = rig.leader.gains.tau_max;
                    let mut session = SessionState::new(&rig);
                    let mut follower = FollowerState::at_home(&rig.follower);
                    let mut events = Vec::new();
                    let start = now_ns();
                    let mut overruns = 0;
                    let mut recorded_seq = 0;
                    for tick in 0u64.. {
                        if stop.load(Ordering::Relaxed) {
                            break;
                        }
                        let deadline = start + tick * period_ns;
                        crate::transport::sleep_until(deadline);
                        let now = now_ns();
                        if now > deadline + period_ns {
                            overruns += 1;
                        }
                        let snapshot = cell.snapshot(now);
                        if let (Some(w), Some(frame)) = (recorder.as_mut(), snapshot.fresh()) {
                            if frame.seq != recorded_seq {
                                recorded_seq = frame.seq;
                                if let Err(e) = w.append(frame, now - start) {
                                    warn!("trace recording stopped: {e}");
                                    recorder = None;
                                }
                            }
                        }
                        let out = step(&mut session, snapshot.fresh(), &follower, period, &rig);
                        follower = step_follower(&follower, &out.commands, period, &params);

                        for e in &out.events {
                            info!("session event: {e}");
                            if let Some(w) = log.as_mut() {
                                if let Err(err) = writeln!(w, "{e}").and_then(|_| w.flush()) {
                                    warn!("event log write failed: {err}");
                                }
                            }
                        }
                        events.extend_from_slice(&out.events);
                        if let Some(hub) = &hub {
                            hub.record_events(&out.events);
                            if tick % publish_every == 0 {
                                let stats = cell.stats();
                                let link = LinkView {
                                    stale: snapshot.stale,
                                    age_ms: snapshot.age_ns.map(|a| a as f64 * 1e-6),
                                    latency_ms: snapshot
                                        .received
                                        .as_ref()
                                        .map(|r| r.recv_ns.saturating_sub(r.frame.stamp_ns) as f64 * 1e-6),
                                    malformed: stats.malformed,
                                    gaps: stats.gaps,
                                };
                                hub.publish(&ConsoleState::capture(
                                    &session,
                                    &follower,
                                    out.commands.velocity,
                                    &out.commands.feedback_torques,
                                    tau_max,
                                    link,
                                    hub.event_feed(),
                                ));
                            }
                        }

                        let mut s = status.lock().unwrap();
                        s.ticks = tick + 1;
                        s.overruns = overruns;
                        s.phase = session.phase.name();
                        s.arm_active = session.arm_active;
                        s.leg_joystick = session.leg_joystick;
                        s.base_pose = follower.base_pose;
                        s.stale_ticks = session.stale_ticks;
                        s.cell = cell.stats();
                        if !out.events.is_empty() {
                            s.events = events.clone();
                        }
                    }
                    if let Some(w) = recorder {
                        match w.finish() {
                            Ok(n) => info!("recorded {n} leader frames"),
                            Err(e) => warn!("trace recording failed: {e}"),
                        }
                    }
                })
                .map_err(NodeError::Spawn)?
        };

        info!("node running at {} Hz, leader frames on udp://{state_addr}", options.rate_hz);
        Ok(Node {
            state_addr,
            stop,
            status,
            control: Some(control),
            publisher,
            bridge,
            subscriber: Some(subscriber),
            hub,
        })
    }

    pub fn state_addr(&self) -> SocketAddr {
        self.state_addr
    }

    pub fn console_addr(&self) -> Option<SocketAddr> {
        self.bridge.as_ref().map(Bridge::local_addr)
    }

    pub fn assets_addr(&self) -> Option<SocketAddr> {
        self.bridge.as_ref().and_then(Bridge::assets_addr)
    }

    pub fn hub(&self) -> Option<&Arc<ConsoleHub>> {
        self.hub.as_ref()
    }

    pub fn status(&self) -> NodeStatus {
        self.status.lock().unwrap().clone()
    }

    /// Stop all threads and release every socket; returns the final status.
    pub fn stop(mut self) -> NodeStatus {
        self.shutdown();
        self.status()
    }

    fn shutdown(&mut self) {
        // Leader side first so the follower does not log a burst of stale ticks.
        if let Some(p) = self.publisher.take() {
            p.stop();
        }
        self.stop.store(true, Ordering::Relaxed);
        if let Some(c) = self.control.take() {
            if c.join().is_err() {
                warn!("control thread panicked");
            }
        }
        if let Some(b) = self.bridge.take() {
            b.stop();
        }
        if let Some(s) = self.subscriber.take() {
            s.stop();
        }
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Send to loopback when the subscriber listens on a wildcard address.
fn loopback_target(addr: SocketAddr) -> SocketAddr {
    match addr.ip() {
        IpAddr::V4(ip) if ip.is_unspecified() => SocketAddr::new(Ipv4Addr::LOCALHOST.into(), addr.port()),
        IpAddr::V6(ip) if ip.is_unspecified() => SocketAddr::new(Ipv6Addr::LOCALHOST.into(), addr.port()),
        _ => addr,
    }
}
