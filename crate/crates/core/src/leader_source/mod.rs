//! Leader state providers: synthetic generators, trace replay and (in the
//! bridge module) the live console. A hardware driver for a physical leader
//! would implement [`LeaderSource`] as well.

mod synth;
mod trace;

use thiserror::Error;

use crate::transport::StateFrame;

pub use synth::{GestureScript, GripTarget, Hold, ScriptEvent, SineSweep};
pub use trace::{read_trace, record, Replay, Trace, TraceHeader, TraceWriter, TRACE_FORMAT};

/// A single-producer stream of leader frames indexed by elapsed time.
pub trait LeaderSource: Send {
    fn joint_count(&self) -> usize;
    fn gripper_count(&self) -> usize;
    /// Frame for `elapsed_ns` since the stream started. Calls arrive with
    /// non-decreasing `elapsed_ns`; `seq` and `stamp_ns` are set by the
    /// caller.
    fn frame_at(&mut self, elapsed_ns: u64) -> StateFrame;
    /// Natural length of the stream, if it has one.
    fn duration_ns(&self) -> Option<u64> {
        None
    }
}

impl<S: LeaderSource + ?Sized> LeaderSource for Box<S> {
    fn joint_count(&self) -> usize {
        (**self).joint_count()
    }
    fn gripper_count(&self) -> usize {
        (**self).gripper_count()
    }
    fn frame_at(&mut self, elapsed_ns: u64) -> StateFrame {
        (**self).frame_at(elapsed_ns)
    }
    fn duration_ns(&self) -> Option<u64> {
        (**self).duration_ns()
    }
}

#[derive(Debug, Error)]
pub enum SourceError {
    #[error("joint `{joint}` value {value} outside [{min}, {max}]")]
    LimitViolation {
        joint: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("invalid trace: {0}")]
    BadTrace(String),
    #[error("invalid script: {0}")]
    Script(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
