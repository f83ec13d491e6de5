//! Fixed-layout little-endian frame codec.
//!
//! ```text
//! offset  size  field
//!      0     2  magic            0x43 0x48 ("CH")
//!      2     1  version          1
//!      3     1  flags            0 on encode, ignored on decode
//!      4     8  seq              u64
//!     12     8  stamp_ns         u64
//!     20     2  n_joints         u16
//!     22     1  n_grippers       u8
//!     23   4n   positions        f32 x n
//!      .   4n   velocities       f32 x n
//!      .   4g   triggers         f32 x g
//!      .    16  orientation      f32 x 4 (w, x, y, z)
//!      .     4  crc32            IEEE, over every preceding byte
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x43, 0x48];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 23;
pub const QUAT_LEN: usize = 16;
pub const CRC_LEN: usize = 4;
/// Size of a frame with no joints and no grippers.
pub const MIN_FRAME_LEN: usize = HEADER_LEN + QUAT_LEN + CRC_LEN;
pub const MAX_JOINTS: usize = u16::MAX as usize;
pub const MAX_GRIPPERS: usize = u8::MAX as usize;
pub const QUAT_NORM_TOLERANCE: f64 = 1e-6;

/// One leader state snapshot: the unit of wire traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    pub seq: u64,
    pub stamp_ns: u64,
    pub joint_positions: Vec<f32>,
    pub joint_velocities: Vec<f32>,
    pub gripper_triggers: Vec<f32>,
    /// Unit quaternion, (w, x, y, z).
    pub orientation: [f32; 4],
}

impl StateFrame {
    pub fn new(
        positions: Vec<f32>,
        velocities: Vec<f32>,
        triggers: Vec<f32>,
        orientation: [f32; 4],
    ) -> Self {
        StateFrame {
            seq: 0,
            stamp_ns: 0,
            joint_positions: positions,
            joint_velocities: velocities,
            gripper_triggers: triggers,
            orientation,
        }
    }

    pub fn joint_count(&self) -> usize {
        self.joint_positions.len()
    }

    pub fn orientation_f64(&self) -> [f64; 4] {
        self.orientation.map(f64::from)
    }

    /// Check the frame-level invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.joint_positions.len() != self.joint_velocities.len() {
            return Err(format!(
                "{} positions but {} velocities",
                self.joint_positions.len(),
                self.joint_velocities.len()
            ));
        }
        if let Some(v) = self
            .joint_positions
            .iter()
            .chain(&self.joint_velocities)
            .find(|v| !v.is_finite())
        {
            return Err(format!("non-finite joint value {v}"));
        }
        if let Some(t) = self
            .gripper_triggers
            .iter()
            .find(|t| !(0.0..=1.0).contains(*t))
        {
            return Err(format!("gripper trigger {t} outside [0, 1]"));
        }
        let norm = self
            .orientation
            .iter()
            .map(|&c| f64::from(c) * f64::from(c))
            .sum::<f64>()
            .sqrt();
        if !((norm - 1.0).abs() < QUAT_NORM_TOLERANCE) {
            return Err(format!("orientation norm {norm} is not 1"));
        }
        Ok(())
    }
}

/// Encoded size of a frame with `joints` joints and `grippers` grippers.
pub const fn frame_len(joints: usize, grippers: usize) -> usize {
    HEADER_LEN + 8 * joints + 4 * grippers + QUAT_LEN + CRC_LEN
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("{0} joints exceeds the wire limit of 65535")]
    TooManyJoints(usize),
    #[error("{0} grippers exceeds the wire limit of 255")]
    TooManyGrippers(usize),
    #[error("invalid frame: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 2]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("crc mismatch: computed {computed:08x}, trailer {trailer:08x}")]
    BadCrc { computed: u32, trailer: u32 },
    #[error("frame is {actual} bytes, expected {expected}")]
    BadLength { expected: usize, actual: usize },
    #[error("invalid frame: {0}")]
    Invariant(String),
}

pub fn encode_frame(frame: &StateFrame) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(frame_len(
        frame.joint_positions.len(),
        frame.gripper_triggers.len(),
    ));
    encode_into(frame, &mut out)?;
    Ok(out)
}

/// Encode into a reusable buffer (cleared first).
pub fn encode_into(frame: &StateFrame, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    let n = frame.joint_positions.len();
    let g = frame.gripper_triggers.len();
    if n > MAX_JOINTS {
        return Err(EncodeError::TooManyJoints(n));
    }
    if g > MAX_GRIPPERS {
        return Err(EncodeError::TooManyGrippers(g));
    }
    frame.check().map_err(EncodeError::Invariant)?;

    out.clear();
    out.reserve(frame_len(n, g));
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(0);
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.stamp_ns.to_le_bytes());
    out.extend_from_slice(&(n as u16).to_le_bytes());
    out.push(g as u8);
    for v in frame
        .joint_positions
        .iter()
        .chain(&frame.joint_velocities)
        .chain(&frame.gripper_triggers)
        .chain(&frame.orientation)
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(())
}

fn declared_len(bytes: &[u8]) -> (usize, usize) {
    let n = u16::from_le_bytes([bytes[20], bytes[21]]) as usize;
    let g = bytes[22] as usize;
    (n, g)
}

/// Whether `actual` is the length a single flipped bit in the count fields
/// would produce.
fn explained_by_count_flip(n: usize, g: usize, actual: usize) -> bool {
    (0..16).any(|b| frame_len(n ^ (1 << b), g) == actual)
        || (0..8).any(|b| frame_len(n, g ^ (1 << b)) == actual)
}

pub fn decode_frame(bytes: &[u8]) -> Result<StateFrame, DecodeError> {
    if bytes.len() < MIN_FRAME_LEN {
        return Err(DecodeError::BadLength {
            expected: MIN_FRAME_LEN,
            actual: bytes.len(),
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CRC_LEN);
    let trailer = u32::from_le_bytes(trailer.try_into().expect("4-byte trailer"));
    let computed = crc32fast::hash(body);
    let (n, g) = declared_len(bytes);
    let expected = frame_len(n, g);
    if computed != trailer {
        // A buffer whose size disagrees with its header was cut short or
        // padded; unless one corrupted count bit accounts for the size, report
        // the length rather than the checksum.
        if expected != bytes.len() && !explained_by_count_flip(n, g, bytes.len()) {
            return Err(DecodeError::BadLength {
                expected,
                actual: bytes.len(),
            });
        }
        return Err(DecodeError::BadCrc { computed, trailer });
    }
    if bytes[0..2] != MAGIC {
        return Err(DecodeError::BadMagic([bytes[0], bytes[1]]));
    }
    if bytes[2] != VERSION {
        return Err(DecodeError::BadVersion(bytes[2]));
    }
    if expected != bytes.len() {
        return Err(DecodeError::BadLength {
            expected,
            actual: bytes.len(),
        });
    }

    let seq = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
    let stamp_ns = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let mut floats = body[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    let joint_positions: Vec<f32> = floats.by_ref().take(n).collect();
    let joint_velocities: Vec<f32> = floats.by_ref().take(n).collect();
    let gripper_triggers: Vec<f32> = floats.by_ref().take(g).collect();
    let mut orientation = [0f32; 4];
    for c in orientation.iter_mut() {
        *c = floats.next().expect("length checked");
    }
    let frame = StateFrame {
        seq,
        stamp_ns,
        joint_positions,
        joint_velocities,
        gripper_triggers,
        orientation,
    };
    frame.check().map_err(DecodeError::Invariant)?;
    Ok(frame)
}
