use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwapOption;

use super::codec::StateFrame;

pub const DEFAULT_STALENESS_TIMEOUT_NS: u64 = 200_000_000;

/// A frame as stored in the cell, with its local arrival time.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub frame: StateFrame,
    pub recv_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub received: Option<Arc<Received>>,
    /// Time since the newest frame arrived (local clock); `None` before the
    /// first frame.
    pub age_ns: Option<u64>,
    pub stale: bool,
}

impl Snapshot {
    pub fn frame(&self) -> Option<&StateFrame> {
        self.received.as_deref().map(|r| &r.frame)
    }

    /// The frame if the link is fresh.
    pub fn fresh(&self) -> Option<&StateFrame> {
        if self.stale {
            None
        } else {
            self.frame()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Offer {
    Accepted,
    /// Sequence number not newer than the stored one.
    Dropped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CellStats {
    pub accepted: u64,
    pub dropped: u64,
    pub malformed: u64,
    /// Sequence numbers skipped between accepted frames (counting from 1).
    pub gaps: u64,
}

/// Single-writer, multi-reader holder of the newest leader frame.
///
/// Replacement is a pointer swap: readers never block the writer and never
/// see a partially written frame.
#[derive(Debug)]
pub struct LatestCell {
    slot: ArcSwapOption<Received>,
    staleness_timeout_ns: u64,
    accepted: AtomicU64,
    dropped: AtomicU64,
    malformed: AtomicU64,
    gaps: AtomicU64,
}

impl Default for LatestCell {
    fn default() -> Self {
        LatestCell::new(DEFAULT_STALENESS_TIMEOUT_NS)
    }
}

impl LatestCell {
    pub fn new(staleness_timeout_ns: u64) -> Self {
        LatestCell {
            slot: ArcSwapOption::empty(),
            staleness_timeout_ns,
            accepted: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
            malformed: AtomicU64::new(0),
            gaps: AtomicU64::new(0),
        }
    }

    pub fn staleness_timeout_ns(&self) -> u64 {
        self.staleness_timeout_ns
    }

    /// Store `frame` if its seq is newer than the current one. Must only be
    /// called from the single writer.
    pub fn offer(&self, frame: StateFrame, recv_ns: u64) -> Offer {
        let previous = self.slot.load().as_deref().map(|r| r.frame.seq);
        if let Some(current) = previous {
            if frame.seq <= current {
                self.dropped.fetch_add(1, Ordering::Relaxed);
                return Offer::Dropped;
            }
        }
        let skipped = frame.seq.saturating_sub(previous.unwrap_or(0)).saturating_sub(1);
        self.gaps.fetch_add(skipped, Ordering::Relaxed);
        self.slot.store(Some(Arc::new(Received { frame, recv_ns })));
        self.accepted.fetch_add(1, Ordering::Relaxed);
        Offer::Accepted
    }

    pub fn note_malformed(&self) {
        self.malformed.fetch_add(1, Ordering::Relaxed);
    }

    pub fn latest(&self) -> Option<Arc<Received>> {
        self.slot.load_full()
    }

    pub fn latest_seq(&self) -> Option<u64> {
        self.slot.load().as_deref().map(|r| r.frame.seq)
    }

    pub fn snapshot(&self, now_ns: u64) -> Snapshot {
        let received = self.latest();
        let age_ns = received
            .as_deref()
            .map(|r| now_ns.saturating_sub(r.recv_ns));
        let stale = age_ns.map_or(true, |age| age > self.staleness_timeout_ns);
        Snapshot {
            received,
            age_ns,
            stale,
        }
    }

    pub fn stats(&self) -> CellStats {
        CellStats {
            accepted: self.accepted.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
            malformed: self.malformed.load(Ordering::Relaxed),
            gaps: self.gaps.load(Ordering::Relaxed),
        }
    }
}
