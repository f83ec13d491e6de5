//! Leader state transport: frame codec, latest-value cell, UDP publisher and
//! subscriber, and the latency probe.

mod cell;
mod codec;
mod latency;
mod net;

pub use cell::{CellStats, LatestCell, Offer, Received, Snapshot, DEFAULT_STALENESS_TIMEOUT_NS};
pub use codec::{
    decode_frame, encode_frame, encode_into, frame_len, DecodeError, EncodeError, StateFrame,
    MAGIC, MAX_GRIPPERS, MAX_JOINTS, MIN_FRAME_LEN, VERSION,
};
pub use latency::{
    latency_probe, latency_probe_echo, latency_probe_in_memory, serve_echo, EchoServer,
    LatencyError, LatencyReport, LatencySample,
};
pub use net::{
    publish_loop, resolve_endpoint, subscribe_latest, JitterStats, PublishOptions, PublishStats, Publisher,
    Subscriber,
};

pub const DEFAULT_STATE_PORT: u16 = 47555;
pub const DEFAULT_PROBE_PORT: u16 = 47556;
pub(crate) use net::sleep_until;
