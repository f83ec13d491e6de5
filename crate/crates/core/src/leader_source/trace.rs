//! `.chtrace` files: one JSON header line, then encoded frames back to back.
//! Each frame's `stamp_ns` is its sample time from the start of the trace.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LeaderSource, SourceError};
use crate::config::{schema_fingerprint, DeviceConfig};
use crate::transport::{decode_frame, encode_frame, frame_len, StateFrame};

pub const TRACE_FORMAT: &str = "chtrace/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format: String,
    pub fingerprint: String,
    pub rate_hz: f64,
    pub joints: Vec<String>,
    pub grippers: usize,
}

impl TraceHeader {
    pub fn for_config(leader: &DeviceConfig, rate_hz: f64) -> Self {
        TraceHeader {
            format: TRACE_FORMAT.into(),
            fingerprint: schema_fingerprint(leader),
            rate_hz,
            joints: leader.joint_names(),
            grippers: leader.gripper_count(),
        }
    }

    /// Error unless this trace was recorded against `leader`'s schema.
    pub fn check_schema(&self, leader: &DeviceConfig) -> Result<(), SourceError> {
        let expected = schema_fingerprint(leader);
        if self.fingerprint != expected {
            return Err(SourceError::SchemaMismatch {
                expected: format!("fingerprint {expected}"),
                found: format!("fingerprint {}", self.fingerprint),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    /// `stamp_ns` holds the sample time; strictly increasing.
    pub samples: Vec<StateFrame>,
}

/// Streams frames into a trace file.
pub struct TraceWriter {
    out: BufWriter<File>,
    header: TraceHeader,
    last_t: Option<u64>,
    written: u64,
}

impl TraceWriter {
    pub fn create(path: impl AsRef<Path>, header: TraceHeader) -> Result<Self, SourceError> {
        let mut out = BufWriter::new(File::create(path)?);
        let line = serde_json::to_string(&header).expect("header serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
        Ok(TraceWriter {
            out,
            header,
            last_t: None,
            written: 0,
        })
    }

    /// Append one sample taken at `t_ns` from the start of the recording.
    pub fn append(&mut self, frame: &StateFrame, t_ns: u64) -> Result<(), SourceError> {
        let (n, g) = (self.header.joints.len(), self.header.grippers);
        if frame.joint_positions.len() != n || frame.gripper_triggers.len() != g {
            return Err(SourceError::SchemaMismatch {
                expected: format!("{n} joints, {g} grippers"),
                found: format!(
                    "{} joints, {} grippers",
                    frame.joint_positions.len(),
                    frame.gripper_triggers.len()
                ),
            });
        }
        if self.last_t.is_some_and(|last| t_ns <= last) {
            return Err(SourceError::BadTrace(format!("sample time {t_ns} not increasing")));
        }
        self.written += 1;
        let sample = StateFrame {
            seq: self.written,
            stamp_ns: t_ns,
            ..frame.clone()
        };
        let bytes = encode_frame(&sample).map_err(|e| SourceError::BadTrace(e.to_string()))?;
        self.out.write_all(&bytes)?;
        self.last_t = Some(t_ns);
        Ok(())
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<u64, SourceError> {
        self.out.flush()?;
        Ok(self.written)
    }
}

/// Sample `source` at `rate_hz` for `duration_s` into a trace at `path`.
/// The source must match `leader`; this is checked before the file is
/// created.
pub fn record(
    source: &mut dyn LeaderSource,
    leader: &DeviceConfig,
    path: impl AsRef<Path>,
    rate_hz: f64,
    duration_s: f64,
) -> Result<u64, SourceError> {
    if source.joint_count() != leader.joint_count() || source.gripper_count() != leader.gripper_count() {
        return Err(SourceError::SchemaMismatch {
            expected: format!("{} joints, {} grippers", leader.joint_count(), leader.gripper_count()),
            found: format!("{} joints, {} grippers", source.joint_count(), source.gripper_count()),
        });
    }
    if !(rate_hz > 0.0 && rate_hz.is_finite() && duration_s >= 0.0) {
        return Err(SourceError::Script(format!(
            "bad recording parameters: rate {rate_hz} Hz, duration {duration_s} s"
        )));
    }
    let period_ns = (1e9 / rate_hz).round() as u64;
    let end_ns = (duration_s * 1e9).round() as u64;
    let mut writer = TraceWriter::create(path, TraceHeader::for_config(leader, rate_hz))?;
    let mut t = 0;
    while t <= end_ns {
        writer.append(&source.frame_at(t), t)?;
        t += period_ns;
    }
    writer.finish()
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace, SourceError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(SourceError::BadTrace("missing header line".into()));
    }
    let header: TraceHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| SourceError::BadTrace(format!("header: {e}")))?;
    if header.format != TRACE_FORMAT {
        return Err(SourceError::BadTrace(format!("unsupported format `{}`", header.format)));
    }
    let mut body = Vec::new();
    reader.read_to_end(&mut body)?;
    let len = frame_len(header.joints.len(), header.grippers);
    if body.len() % len != 0 {
        return Err(SourceError::BadTrace(format!(
            "{} trailing bytes after the last frame",
            body.len() % len
        )));
    }
    let mut samples: Vec<StateFrame> = Vec::with_capacity(body.len() / len);
    for (i, chunk) in body.chunks(len).enumerate() {
        let frame = decode_frame(chunk).map_err(|e| SourceError::BadTrace(format!("frame {i}: {e}")))?;
        if frame.joint_positions.len() != header.joints.len() || frame.gripper_triggers.len() != header.grippers {
            return Err(SourceError::BadTrace(format!("frame {i} does not match the header schema")));
        }
        if samples.last().is_some_and(|p| frame.stamp_ns <= p.stamp_ns) {
            return Err(SourceError::BadTrace(format!("frame {i} time not increasing")));
        }
        samples.push(frame);
    }
    Ok(Trace { header, samples })
}

/// Plays a trace back at `speed` times real time.
#[derive(Debug, Clone)]
pub struct Replay {
    samples: Vec<StateFrame>,
    speed: f64,
    joints: usize,
    grippers: usize,
}

impl Replay {
    pub fn new(trace: Trace, speed: f64) -> Result<Self, SourceError> {
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(SourceError::Script(format!("replay speed must be positive, got {speed}")));
        }
        if trace.samples.is_empty() {
            return Err(SourceError::EmptyTrace);
        }
        let t0 = trace.samples[0].stamp_ns;
        let samples = trace
            .samples
            .into_iter()
            .map(|mut s| {
                s.stamp_ns -= t0;
                s
            })
            .collect();
        Ok(Replay {
            samples,
            speed,
            joints: trace.header.joints.len(),
            grippers: trace.header.grippers,
        })
    }

    /// Recorded samples with times relative to the first one.
    pub fn samples(&self) -> &[StateFrame] {
        &self.samples
    }

    fn velocities(&self, i: usize) -> Vec<f32> {
        let (a, b) = match (i.checked_sub(1), self.samples.get(i + 1)) {
            (Some(prev), _) => (&self.samples[prev], &self.samples[i]),
            (None, Some(next)) => (&self.samples[i], next),
            (None, None) => return vec![0.0; self.joints],
        };
        let dt = (b.stamp_ns - a.stamp_ns) as f64 * 1e-9;
        a.joint_positions
            .iter()
            .zip(&b.joint_positions)
            .map(|(&p, &q)| ((f64::from(q) - f64::from(p)) / dt) as f32)
            .collect()
    }
}

impl LeaderSource for Replay {
    fn joint_count(&self) -> usize {
        self.joints
    }
    fn gripper_count(&self) -> usize {
        self.grippers
    }
    fn frame_at(&mut self, elapsed_ns: u64) -> StateFrame {
        let t = (elapsed_ns as f64 * self.speed).round() as u64;
        let i = self.samples.partition_point(|s| s.stamp_ns <= t).max(1) - 1;
        let sample = &self.samples[i];
        StateFrame::new(
            sample.joint_positions.clone(),
            self.velocities(i),
            sample.gripper_triggers.clone(),
            sample.orientation,
        )
    }
    fn duration_ns(&self) -> Option<u64> {
        let last = self.samples.last().expect("non-empty").stamp_ns;
        Some((last as f64 / self.speed).round() as u64)
    }
}
