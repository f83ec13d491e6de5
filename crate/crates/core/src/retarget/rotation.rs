//! Quaternion and Z-Y-X (yaw-pitch-roll, intrinsic) Euler angle conversions.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pitch band around +-pi/2 treated as gimbal lock.
pub const GIMBAL_MARGIN: f64 = 1e-3;
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Quaternion as (w, x, y, z).
pub type Quat = [f64; 4];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("quaternion norm {0} is not 1")]
pub struct NonUnitQuaternion(pub f64);

/// R = Rz(yaw) * Ry(pitch) * Rx(roll). Pitch in [-pi/2, pi/2], roll and yaw
/// in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        EulerAngles { roll, pitch, yaw }
    }
}

pub fn quat_norm(q: &Quat) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn check_unit(q: &Quat) -> Result<Quat, NonUnitQuaternion> {
    let n = quat_norm(q);
    if (n - 1.0).abs() < UNIT_TOLERANCE {
        Ok(q.map(|c| c / n))
    } else {
        Err(NonUnitQuaternion(n))
    }
}

fn wrap(angle: f64) -> f64 {
    if angle <= -PI {
        angle + 2.0 * PI
    } else {
        angle
    }
}

pub fn quat_to_euler(q: &Quat) -> Result<EulerAngles, NonUnitQuaternion> {
    let [w, x, y, z] = check_unit(q)?;
    let r00 = 1.0 - 2.0 * (y * y + z * z);
    let r10 = 2.0 * (x * y + w * z);
    let r20 = 2.0 * (x * z - w * y);
    let r21 = 2.0 * (y * z + w * x);
    let r22 = 1.0 - 2.0 * (x * x + y * y);
    let pitch = (-r20).atan2(r00.hypot(r10));
    if pitch.abs() > FRAC_PI_2 - GIMBAL_MARGIN {
        // roll and yaw share an axis; put the whole twist in yaw
        let r01 = 2.0 * (x * y - w * z);
        let r11 = 1.0 - 2.0 * (x * x + z * z);
        return Ok(EulerAngles {
            roll: 0.0,
            pitch,
            yaw: wrap((-r01).atan2(r11)),
        });
    }
    Ok(EulerAngles {
        roll: wrap(r21.atan2(r22)),
        pitch,
        yaw: wrap(r10.atan2(r00)),
    })
}

pub fn euler_to_quat(e: &EulerAngles) -> Quat {
    let (sr, cr) = (e.roll * 0.5).sin_cos();
    let (sp, cp) = (e.pitch * 0.5).sin_cos();
    let (sy, cy) = (e.yaw * 0.5).sin_cos();
    [
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    ]
}
