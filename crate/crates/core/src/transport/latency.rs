//! One-way latency measurement over the real codec and socket path.

use std::io;
use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::codec::{decode_frame, encode_frame, encode_into, StateFrame};
use super::net::{bind_for, resolve_endpoint, sleep_until};
use crate::clock::now_ns;

/// Probe frames carry a full-size leader state (29 joints, 2 grippers).
const PROBE_JOINTS: usize = 29;
const PROBE_GRIPPERS: usize = 2;
/// Time the receiver keeps listening after the last send.
const DRAIN_NS: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub seq: u64,
    pub send_ns: u64,
    pub recv_ns: u64,
    pub one_way_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub mode: String,
    pub rate_hz: f64,
    pub duration_s: f64,
    pub sent: u64,
    pub received: u64,
    pub loss_fraction: f64,
    pub mean_ns: f64,
    pub median_ns: u64,
    pub p99_ns: u64,
    pub min_ns: u64,
    pub max_ns: u64,
}

impl LatencyReport {
    pub fn mean_ms(&self) -> f64 {
        self.mean_ns / 1e6
    }
}

impl std::fmt::Display for LatencyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "latency ({}) {:.1} s @ {} Hz: sent {}, received {}, loss {:.3}%",
            self.mode,
            self.duration_s,
            self.rate_hz,
            self.sent,
            self.received,
            self.loss_fraction * 100.0
        )?;
        write!(
            f,
            "  one-way mean {:.3} ms, median {:.3} ms, p99 {:.3} ms, min {:.3} ms, max {:.3} ms",
            self.mean_ns / 1e6,
            self.median_ns as f64 / 1e6,
            self.p99_ns as f64 / 1e6,
            self.min_ns as f64 / 1e6,
            self.max_ns as f64 / 1e6
        )
    }
}

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("insufficient samples: {received} of {sent} frames arrived")]
    InsufficientSamples { sent: u64, received: u64 },
    #[error("rate must be positive, got {0}")]
    InvalidRate(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn probe_frame() -> StateFrame {
    StateFrame::new(
        (0..PROBE_JOINTS).map(|i| i as f32 * 0.01).collect(),
        vec![0.0; PROBE_JOINTS],
        vec![0.0; PROBE_GRIPPERS],
        [1.0, 0.0, 0.0, 0.0],
    )
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[u64], p: f64) -> u64 {
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(
    mode: &str,
    rate_hz: f64,
    duration: Duration,
    sent: u64,
    mut one_way: Vec<u64>,
) -> Result<LatencyReport, LatencyError> {
    let received = one_way.len() as u64;
    if sent == 0 || received * 2 < sent {
        return Err(LatencyError::InsufficientSamples { sent, received });
    }
    one_way.sort_unstable();
    let mean_ns = one_way.iter().map(|&v| v as f64).sum::<f64>() / received as f64;
    Ok(LatencyReport {
        mode: mode.to_string(),
        rate_hz,
        duration_s: duration.as_secs_f64(),
        sent,
        received,
        loss_fraction: 1.0 - received as f64 / sent as f64,
        mean_ns,
        median_ns: percentile(&one_way, 0.5),
        p99_ns: percentile(&one_way, 0.99),
        min_ns: one_way[0],
        max_ns: one_way[one_way.len() - 1],
    })
}

fn check_rate(rate_hz: f64) -> Result<u64, LatencyError> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(LatencyError::InvalidRate(rate_hz));
    }
    Ok((1e9 / rate_hz).round() as u64)
}

fn tick_count(duration: Duration, rate_hz: f64) -> u64 {
    (duration.as_secs_f64() * rate_hz).round() as u64
}

/// Send frames from this process to a receiver bound at `receiver_bind`, both
/// on the host clock, and measure one-way delay.
pub fn latency_probe(
    receiver_bind: &str,
    duration: Duration,
    rate_hz: f64,
) -> Result<LatencyReport, LatencyError> {
    let period = check_rate(rate_hz)?;
    let receiver = UdpSocket::bind(resolve_endpoint(receiver_bind)?)?;
    receiver.set_read_timeout(Some(Duration::from_millis(20)))?;
    let target = receiver.local_addr()?;
    let sender = bind_for(&target)?;
    let ticks = tick_count(duration, rate_hz);
    let done = Arc::new(AtomicBool::new(false));

    let rx_thread: JoinHandle<Vec<LatencySample>> = {
        let done = done.clone();
        thread::spawn(move || {
            let mut samples = Vec::with_capacity(ticks as usize);
            let mut buf = vec![0u8; 2048];
            loop {
                match receiver.recv_from(&mut buf) {
                    Ok((len, _)) => {
                        let recv_ns = now_ns();
                        if let Ok(frame) = decode_frame(&buf[..len]) {
                            samples.push(LatencySample {
                                seq: frame.seq,
                                send_ns: frame.stamp_ns,
                                recv_ns,
                                one_way_ns: recv_ns.saturating_sub(frame.stamp_ns),
                            });
                        }
                    }
                    Err(_) if done.load(Ordering::Relaxed) => break,
                    Err(_) => {}
                }
            }
            samples
        })
    };

    let mut frame = probe_frame();
    let mut buf = Vec::new();
    let start = now_ns();
    let mut sent = 0;
    for tick in 0..ticks {
        sleep_until(start + tick * period);
        frame.seq = tick + 1;
        frame.stamp_ns = now_ns();
        encode_into(&frame, &mut buf).expect("probe frame is valid");
        if sender.send_to(&buf, target).is_ok() {
            sent += 1;
        }
    }
    sleep_until(now_ns() + DRAIN_NS);
    done.store(true, Ordering::Relaxed);
    let samples = rx_thread.join().expect("probe receiver panicked");
    let mut seen = std::collections::HashSet::new();
    let one_way = samples
        .into_iter()
        .filter(|s| seen.insert(s.seq))
        .map(|s| s.one_way_ns)
        .collect();
    summarize("udp-loopback", rate_hz, duration, ticks.max(sent), one_way)
}

/// Same measurement over an in-process channel (codec cost plus thread
/// hand-off, no socket).
pub fn latency_probe_in_memory(
    duration: Duration,
    rate_hz: f64,
) -> Result<LatencyReport, LatencyError> {
    let period = check_rate(rate_hz)?;
    let ticks = tick_count(duration, rate_hz);
    let (tx, rx) = mpsc::channel::<Vec<u8>>();
    let rx_thread = thread::spawn(move || {
        rx.iter()
            .filter_map(|bytes| {
                let recv_ns = now_ns();
                decode_frame(&bytes)
                    .ok()
                    .map(|f| recv_ns.saturating_sub(f.stamp_ns))
            })
            .collect::<Vec<u64>>()
    });
    let mut frame = probe_frame();
    let start = now_ns();
    for tick in 0..ticks {
        sleep_until(start + tick * period);
        frame.seq = tick + 1;
        frame.stamp_ns = now_ns();
        let bytes = encode_frame(&frame).expect("probe frame is valid");
        if tx.send(bytes).is_err() {
            break;
        }
    }
    drop(tx);
    let one_way = rx_thread.join().expect("probe receiver panicked");
    summarize("in-memory", rate_hz, duration, ticks, one_way)
}

/// Datagram echo for round-trip probes against a remote host.
pub struct EchoServer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl EchoServer {
    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.addr
    }
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn serve_echo(bind: &str) -> io::Result<EchoServer> {
    let socket = UdpSocket::bind(resolve_endpoint(bind)?)?;
    socket.set_read_timeout(Some(Duration::from_millis(20)))?;
    let addr = socket.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let thread = {
        let stop = stop.clone();
        thread::spawn(move || {
            let mut buf = vec![0u8; 2048];
            while !stop.load(Ordering::Relaxed) {
                if let Ok((len, from)) = socket.recv_from(&mut buf) {
                    let _ = socket.send_to(&buf[..len], from);
                }
            }
        })
    };
    Ok(EchoServer {
        addr,
        stop,
        thread: Some(thread),
    })
}

/// Round-trip probe against an echo server; one-way is half the round trip,
/// which needs no clock agreement between hosts.
pub fn latency_probe_echo(
    echo: &str,
    duration: Duration,
    rate_hz: f64,
) -> Result<LatencyReport, LatencyError> {
    let period = check_rate(rate_hz)?;
    let target = resolve_endpoint(echo)?;
    let socket = bind_for(&target)?;
    socket.connect(target)?;
    let ticks = tick_count(duration, rate_hz);
    let recv_socket = socket.try_clone()?;
    recv_socket.set_read_timeout(Some(Duration::from_millis(20)))?;
    let done = Arc::new(AtomicBool::new(false));
    let rx_thread = {
        let done = done.clone();
        thread::spawn(move || {
            let mut out = Vec::new();
            let mut seen = std::collections::HashSet::new();
            let mut buf = vec![0u8; 2048];
            loop {
                match recv_socket.recv(&mut buf) {
                    Ok(len) => {
                        let recv_ns = now_ns();
                        if let Ok(frame) = decode_frame(&buf[..len]) {
                            if seen.insert(frame.seq) {
                                out.push(recv_ns.saturating_sub(frame.stamp_ns) / 2);
                            }
                        }
                    }
                    Err(_) if done.load(Ordering::Relaxed) => break,
                    Err(_) => {}
                }
            }
            out
        })
    };
    let mut frame = probe_frame();
    let mut buf = Vec::new();
    let start = now_ns();
    for tick in 0..ticks {
        sleep_until(start + tick * period);
        frame.seq = tick + 1;
        frame.stamp_ns = now_ns();
        encode_into(&frame, &mut buf).expect("probe frame is valid");
        let _ = socket.send(&buf);
    }
    sleep_until(now_ns() + DRAIN_NS);
    done.store(true, Ordering::Relaxed);
    let one_way = rx_thread.join().expect("echo receiver panicked");
    summarize("udp-echo-rtt/2", rate_hz, duration, ticks, one_way)
}
