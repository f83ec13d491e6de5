use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::cell::LatestCell;
use super::codec::{decode_frame, encode_into, MAX_JOINTS};
use crate::clock::now_ns;
use crate::leader_source::LeaderSource;

const RECV_POLL: Duration = Duration::from_millis(20);

/// First socket address for `host:port`.
pub fn resolve_endpoint(endpoint: &str) -> io::Result<SocketAddr> {
    endpoint.to_socket_addrs()?.next().ok_or_else(|| {
        io::Error::new(io::ErrorKind::InvalidInput, format!("no address for `{endpoint}`"))
    })
}

pub(crate) fn bind_for(target: &SocketAddr) -> io::Result<UdpSocket> {
    let local: SocketAddr = if target.is_ipv4() {
        "0.0.0.0:0".parse().expect("literal")
    } else {
        "[::]:0".parse().expect("literal")
    };
    UdpSocket::bind(local)
}

/// Sleep until the host clock reaches `deadline_ns`.
pub(crate) fn sleep_until(deadline_ns: u64) {
    loop {
        let now = now_ns();
        if now >= deadline_ns {
            return;
        }
        let remaining = deadline_ns - now;
        if remaining > 200_000 {
            thread::sleep(Duration::from_nanos(remaining - 100_000));
        } else {
            thread::yield_now();
        }
    }
}

/// Deviation of inter-send intervals from the nominal period.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JitterStats {
    pub intervals: u64,
    pub mean_abs_ns: f64,
    pub max_abs_ns: u64,
}

impl JitterStats {
    fn record(&mut self, deviation_ns: u64) {
        self.intervals += 1;
        self.mean_abs_ns += (deviation_ns as f64 - self.mean_abs_ns) / self.intervals as f64;
        self.max_abs_ns = self.max_abs_ns.max(deviation_ns);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PublishStats {
    pub sent: u64,
    /// Frames not delivered: socket errors plus injected drops.
    pub dropped: u64,
    pub send_errors: u64,
    pub last_seq: u64,
    pub jitter: JitterStats,
}

type DropHook = Box<dyn FnMut(u64) -> bool + Send>;

pub struct PublishOptions {
    pub rate_hz: f64,
    /// Stop once a finite source has been exhausted.
    pub stop_at_end: bool,
    /// Test hook: return true to drop the frame with this seq instead of
    /// sending it. Counted as a network drop.
    pub drop_hook: Option<DropHook>,
}

impl PublishOptions {
    pub fn new(rate_hz: f64) -> Self {
        PublishOptions {
            rate_hz,
            stop_at_end: false,
            drop_hook: None,
        }
    }
}

/// Running publisher thread; stops and joins on drop.
pub struct Publisher {
    stop: Arc<AtomicBool>,
    sent: Arc<AtomicU64>,
    thread: Option<JoinHandle<PublishStats>>,
}

impl Publisher {
    pub fn sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn is_finished(&self) -> bool {
        self.thread.as_ref().map_or(true, |t| t.is_finished())
    }

    pub fn stop(mut self) -> PublishStats {
        self.shutdown()
    }

    /// Wait for a finite source to run out.
    pub fn join(mut self) -> PublishStats {
        self.thread
            .take()
            .map(|t| t.join().expect("publisher thread panicked"))
            .unwrap_or_default()
    }

    fn shutdown(&mut self) -> PublishStats {
        self.stop.store(true, Ordering::Relaxed);
        self.thread
            .take()
            .map(|t| t.join().expect("publisher thread panicked"))
            .unwrap_or_default()
    }
}

impl Drop for Publisher {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Send one frame per tick from `source` to `endpoint` until stopped.
///
/// Sequence numbers start at 1 and increase by one per tick, including
/// ticks whose frame was lost, so receivers can count gaps.
pub fn publish_loop(
    mut source: Box<dyn LeaderSource>,
    endpoint: &str,
    mut options: PublishOptions,
) -> io::Result<Publisher> {
    if !(options.rate_hz > 0.0 && options.rate_hz.is_finite()) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("rate must be positive, got {}", options.rate_hz),
        ));
    }
    if source.joint_count() > MAX_JOINTS {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "too many joints"));
    }
    let target = resolve_endpoint(endpoint)?;
    let socket = bind_for(&target)?;
    let period_ns = (1e9 / options.rate_hz).round() as u64;
    let stop = Arc::new(AtomicBool::new(false));
    let sent = Arc::new(AtomicU64::new(0));

    let thread = {
        let stop = stop.clone();
        let sent = sent.clone();
        thread::Builder::new()
            .name("leader-publish".into())
            .spawn(move || {
                let mut stats = PublishStats::default();
                let mut buf = Vec::new();
                let start = now_ns();
                let mut last_send: Option<u64> = None;
                let end = source.duration_ns();
                for tick in 0u64.. {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    let elapsed = tick * period_ns;
                    if options.stop_at_end && end.is_some_and(|end| elapsed > end) {
                        break;
                    }
                    sleep_until(start + elapsed);
                    let seq = tick + 1;
                    let mut frame = source.frame_at(elapsed);
                    frame.seq = seq;
                    frame.stamp_ns = now_ns();
                    stats.last_seq = seq;
                    if let Err(e) = encode_into(&frame, &mut buf) {
                        warn!("dropping unencodable frame {seq}: {e}");
                        stats.dropped += 1;
                        continue;
                    }
                    if let Some(prev) = last_send {
                        stats
                            .jitter
                            .record(frame.stamp_ns.saturating_sub(prev).abs_diff(period_ns));
                    }
                    last_send = Some(frame.stamp_ns);
                    if options.drop_hook.as_mut().is_some_and(|drop| drop(seq)) {
                        stats.dropped += 1;
                        continue;
                    }
                    match socket.send_to(&buf, target) {
                        Ok(_) => {
                            stats.sent += 1;
                            sent.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(e) => {
                            stats.send_errors += 1;
                            stats.dropped += 1;
                            debug!("send of frame {seq} failed: {e}");
                        }
                    }
                }
                stats
            })?
    };
    Ok(Publisher {
        stop,
        sent,
        thread: Some(thread),
    })
}

/// Receiver thread feeding a latest-value cell; stops and joins on drop.
pub struct Subscriber {
    cell: Arc<LatestCell>,
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Subscriber {
    pub fn cell(&self) -> Arc<LatestCell> {
        self.cell.clone()
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            t.join().expect("subscriber thread panicked");
        }
    }
}

impl Drop for Subscriber {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Bind `endpoint` and keep the newest valid frame in a shared cell.
pub fn subscribe_latest(endpoint: &str, staleness_timeout_ns: u64) -> io::Result<Subscriber> {
    let addr = resolve_endpoint(endpoint)?;
    let socket = UdpSocket::bind(addr)?;
    socket.set_read_timeout(Some(RECV_POLL))?;
    let local_addr = socket.local_addr()?;
    let cell = Arc::new(LatestCell::new(staleness_timeout_ns));
    let stop = Arc::new(AtomicBool::new(false));
    let thread = {
        let cell = cell.clone();
        let stop = stop.clone();
        thread::Builder::new()
            .name("leader-subscribe".into())
            .spawn(move || {
                let mut buf = vec![0u8; 65_536 * 8 + 1024];
                while !stop.load(Ordering::Relaxed) {
                    match socket.recv_from(&mut buf) {
                        Ok((len, _)) => {
                            let recv_ns = now_ns();
                            match decode_frame(&buf[..len]) {
                                Ok(frame) => {
                                    cell.offer(frame, recv_ns);
                                }
                                Err(e) => {
                                    debug!("malformed datagram: {e}");
                                    cell.note_malformed();
                                }
                            }
                        }
                        Err(e)
                            if matches!(
                                e.kind(),
                                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                            ) => {}
                        Err(e) => {
                            warn!("receive failed: {e}");
                            thread::sleep(RECV_POLL);
                        }
                    }
                }
            })?
    };
    Ok(Subscriber {
        cell,
        local_addr,
        stop,
        thread: Some(thread),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::StateFrame;

    struct Ramp;

    impl LeaderSource for Ramp {
        fn joint_count(&self) -> usize {
            2
        }
        fn gripper_count(&self) -> usize {
            1
        }
        fn frame_at(&mut self, elapsed_ns: u64) -> StateFrame {
            let t = elapsed_ns as f32 * 1e-9;
            StateFrame::new(vec![t, -t], vec![1.0, -1.0], vec![0.0], [1.0, 0.0, 0.0, 0.0])
        }
        fn duration_ns(&self) -> Option<u64> {
            Some(300_000_000)
        }
    }

    fn wait_for(mut cond: impl FnMut() -> bool) {
        for _ in 0..200 {
            if cond() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
    }

    #[test]
    fn loopback_delivers_increasing_seq() {
        let sub = subscribe_latest("127.0.0.1:0", 200_000_000).unwrap();
        let target = sub.local_addr().to_string();
        let mut opts = PublishOptions::new(200.0);
        opts.stop_at_end = true;
        let stats = publish_loop(Box::new(Ramp), &target, opts).unwrap().join();
        assert_eq!(stats.dropped, 0);
        assert_eq!(stats.sent, stats.last_seq);
        let cell = sub.cell();
        wait_for(|| cell.latest_seq() == Some(stats.last_seq));
        let latest = cell.latest().unwrap();
        assert_eq!(latest.frame.seq, stats.last_seq);
        assert_eq!(latest.frame.joint_count(), 2);
        assert_eq!(cell.stats().malformed, 0);
        assert!(stats.jitter.intervals + 1 >= stats.sent);
    }

    #[test]
    fn receiver_gaps_equal_counted_drops() {
        let sub = subscribe_latest("127.0.0.1:0", 200_000_000).unwrap();
        let target = sub.local_addr().to_string();
        let mut opts = PublishOptions::new(200.0);
        opts.stop_at_end = true;
        // drop every fifth frame, but never the last one
        opts.drop_hook = Some(Box::new(|seq| seq % 5 == 0 && seq < 55));
        let stats = publish_loop(Box::new(Ramp), &target, opts).unwrap().join();
        let cell = sub.cell();
        wait_for(|| cell.latest_seq() == Some(stats.last_seq));
        assert!(stats.dropped > 0);
        assert_eq!(cell.stats().gaps, stats.dropped);
        assert_eq!(cell.stats().accepted, stats.sent);
    }

    #[test]
    fn garbage_counted_as_malformed() {
        let sub = subscribe_latest("127.0.0.1:0", 200_000_000).unwrap();
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.send_to(b"definitely not a frame, long enough to pass the length gate", sub.local_addr())
            .unwrap();
        let cell = sub.cell();
        wait_for(|| cell.stats().malformed == 1);
        assert_eq!(cell.stats().malformed, 1);
        assert!(cell.latest().is_none());
    }

    #[test]
    fn zero_rate_rejected() {
        assert!(publish_loop(Box::new(Ramp), "127.0.0.1:9", PublishOptions::new(0.0)).is_err());
    }

    #[test]
    fn subscriber_releases_port() {
        let sub = subscribe_latest("127.0.0.1:0", 1).unwrap();
        let addr = sub.local_addr();
        drop(sub);
        let again = subscribe_latest(&addr.to_string(), 1).unwrap();
        assert_eq!(again.local_addr(), addr);
    }
}
