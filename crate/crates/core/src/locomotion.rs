//! Locomotion controller: a joystick-engaged leader leg's hip angles become
//! planar base velocity commands (roll -> lateral, pitch -> forward,
//! yaw -> turn rate).

use serde::{Deserialize, Serialize};

/// Hip deflection axes, in the order roll, pitch, yaw.
pub type HipAngles = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JoystickCalibration {
    /// Radians of deflection ignored around neutral.
    pub deadband: f64,
    /// (m/s)/rad, hip roll to lateral velocity.
    pub roll_gain: f64,
    /// (m/s)/rad, hip pitch to forward velocity.
    pub pitch_gain: f64,
    /// (rad/s)/rad, hip yaw to turn rate.
    pub yaw_gain: f64,
    pub vx_max: f64,
    pub vy_max: f64,
    pub wz_max: f64,
    /// Hip pose captured at engagement; not part of the config file.
    #[serde(skip)]
    pub neutral: HipAngles,
}

impl Default for JoystickCalibration {
    fn default() -> Self {
        JoystickCalibration {
            deadband: 0.05,
            roll_gain: 1.0,
            pitch_gain: 1.0,
            yaw_gain: 1.0,
            vx_max: 0.6,
            vy_max: 0.4,
            wz_max: 1.0,
            neutral: [0.0; 3],
        }
    }
}

impl JoystickCalibration {
    pub(crate) fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.deadband.is_finite() && self.deadband >= 0.0) {
            return Err(("deadband", "must be finite and non-negative".into()));
        }
        for (name, gain) in [
            ("roll_gain", self.roll_gain),
            ("pitch_gain", self.pitch_gain),
            ("yaw_gain", self.yaw_gain),
        ] {
            if !gain.is_finite() {
                return Err((name, "must be finite".into()));
            }
        }
        for (name, max) in [
            ("vx_max", self.vx_max),
            ("vy_max", self.vy_max),
            ("wz_max", self.wz_max),
        ] {
            if !(max.is_finite() && max > 0.0) {
                return Err((name, "must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn with_neutral(&self, neutral: HipAngles) -> Self {
        JoystickCalibration {
            neutral,
            ..self.clone()
        }
    }
}

/// Planar base velocity in the robot's heading frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    /// Forward, m/s.
    pub vx: f64,
    /// Left, m/s.
    pub vy: f64,
    /// Counter-clockwise, rad/s.
    pub wz: f64,
    pub stamp_ns: u64,
}

impl VelocityCommand {
    pub fn zero(stamp_ns: u64) -> Self {
        VelocityCommand {
            stamp_ns,
            ..Default::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.vx == 0.0 && self.vy == 0.0 && self.wz == 0.0
    }
}

/// Piecewise-linear deadband: zero inside, slope `gain` outside, continuous
/// at the edge, then saturated.
fn axis(error: f64, deadband: f64, gain: f64, max: f64) -> f64 {
    if error.abs() <= deadband {
        return 0.0;
    }
    let shifted = error - deadband.copysign(error);
    (gain * shifted).clamp(-max, max)
}

pub fn hip_to_velocity(
    hips: HipAngles,
    cal: &JoystickCalibration,
    engaged: bool,
    stamp_ns: u64,
) -> VelocityCommand {
    if !engaged {
        return VelocityCommand::zero(stamp_ns);
    }
    let [roll, pitch, yaw] = hips;
    let [n_roll, n_pitch, n_yaw] = cal.neutral;
    VelocityCommand {
        vx: axis(pitch - n_pitch, cal.deadband, cal.pitch_gain, cal.vx_max),
        vy: axis(roll - n_roll, cal.deadband, cal.roll_gain, cal.vy_max),
        wz: axis(yaw - n_yaw, cal.deadband, cal.yaw_gain, cal.wz_max),
        stamp_ns,
    }
}

/// Hip (roll, pitch, yaw) read from a leader joint vector.
pub fn capture_neutral(positions: &[f32], hip_indices: [usize; 3]) -> HipAngles {
    hip_indices.map(|i| f64::from(positions[i]))
}
