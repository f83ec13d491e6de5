//! Adaptive force feedback for the leader device.
//!
//! Every leader joint carries a virtual spring toward a base pose. The
//! spring is scaled by a multiplier that depends on the session phase of
//! the limb: a deactivated arm (its leg is driving the base) pulls back
//! harder so the operator can find the pose it was left in.
//!
//! The module outputs the *restoring* torque `-m * k * (q - q_base)`, i.e.
//! the bias `k * (q - q_base)` with the sign the servo must apply.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{stiffness_vector, DeviceConfig, LimbKind};
use crate::session::{Phase, SessionState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeedbackError {
    #[error("joint vector has {found} entries, schema expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("unknown limb `{0}`")]
    UnknownLimb(String),
    #[error("joint `{joint}` base {value} outside [{min}, {max}]")]
    LimitViolation {
        joint: String,
        value: f64,
        min: f64,
        max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackPhase {
    Idle,
    Synchronizing,
    NormalActive,
    DeactivatedArm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseMultipliers {
    pub idle: f64,
    pub synchronizing: f64,
    pub normal_active: f64,
    pub deactivated_arm: f64,
}

impl Default for PhaseMultipliers {
    fn default() -> Self {
        PhaseMultipliers {
            idle: 0.0,
            synchronizing: 0.5,
            normal_active: 1.0,
            deactivated_arm: 3.0,
        }
    }
}

/// Spring stiffness and phase scaling for a leader device (`[gains]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainSchedule {
    pub phase: PhaseMultipliers,
    /// Per-joint torque clamp, N·m.
    pub tau_max: f64,
    /// Default spring constant, N·m/rad.
    pub stiffness: f64,
    /// Per-joint stiffness overrides by leader joint name.
    pub joint_stiffness: BTreeMap<String, f64>,
    /// After a joystick release, return the arm's base pose to the
    /// configured default instead of keeping the pose frozen at engagement.
    pub revert_base_on_release: bool,
}

impl Default for GainSchedule {
    fn default() -> Self {
        GainSchedule {
            phase: PhaseMultipliers::default(),
            tau_max: 1.5,
            stiffness: 0.5,
            joint_stiffness: BTreeMap::new(),
            revert_base_on_release: true,
        }
    }
}

impl GainSchedule {
    pub fn multiplier(&self, phase: FeedbackPhase) -> f64 {
        match phase {
            FeedbackPhase::Idle => self.phase.idle,
            FeedbackPhase::Synchronizing => self.phase.synchronizing,
            FeedbackPhase::NormalActive => self.phase.normal_active,
            FeedbackPhase::DeactivatedArm => self.phase.deactivated_arm,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), (String, String)> {
        let m = &self.phase;
        for (name, v) in [
            ("idle", m.idle),
            ("synchronizing", m.synchronizing),
            ("normal_active", m.normal_active),
            ("deactivated_arm", m.deactivated_arm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err((format!("phase.{name}"), "must be finite and >= 0".into()));
            }
        }
        if m.deactivated_arm < m.normal_active {
            return Err((
                "phase.deactivated_arm".into(),
                format!(
                    "must be at least normal_active ({}), got {}",
                    m.normal_active, m.deactivated_arm
                ),
            ));
        }
        if !(self.tau_max.is_finite() && self.tau_max > 0.0) {
            return Err(("tau_max".into(), "must be positive".into()));
        }
        if !(self.stiffness.is_finite() && self.stiffness >= 0.0) {
            return Err(("stiffness".into(), "must be finite and >= 0".into()));
        }
        for (name, &k) in &self.joint_stiffness {
            if !(k.is_finite() && k >= 0.0) {
                return Err((format!("joint_stiffness.{name}"), "must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Spring constants and base pose over the leader joint schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SpringParams {
    pub k: Vec<f64>,
    pub q_base: Vec<f64>,
    default_base: Vec<f64>,
}

impl SpringParams {
    pub fn new(k: Vec<f64>, q_base: Vec<f64>) -> Result<Self, FeedbackError> {
        if k.len() != q_base.len() {
            return Err(FeedbackError::SchemaMismatch {
                expected: k.len(),
                found: q_base.len(),
            });
        }
        assert!(k.iter().all(|&k| k >= 0.0), "spring constants must be non-negative");
        Ok(SpringParams {
            k,
            default_base: q_base.clone(),
            q_base,
        })
    }

    /// Springs from a leader config: stiffness from `[gains]`, base = home.
    pub fn from_config(leader: &DeviceConfig) -> Self {
        let home = leader.home_positions();
        SpringParams {
            k: stiffness_vector(leader),
            default_base: home.clone(),
            q_base: home,
        }
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    pub fn default_base(&self) -> &[f64] {
        &self.default_base
    }
}

fn restoring(k: f64, displacement: f64, multiplier: f64, tau_max: f64) -> f64 {
    (-(multiplier * (k * displacement))).clamp(-tau_max, tau_max)
}

/// Restoring torque for every joint at one feedback phase.
pub fn bias_torque(
    q: &[f64],
    params: &SpringParams,
    phase: FeedbackPhase,
    schedule: &GainSchedule,
) -> Result<Vec<f64>, FeedbackError> {
    if q.len() != params.len() {
        return Err(FeedbackError::SchemaMismatch {
            expected: params.len(),
            found: q.len(),
        });
    }
    let m = schedule.multiplier(phase);
    Ok(q.iter()
        .zip(&params.k)
        .zip(&params.q_base)
        .map(|((&q, &k), &base)| restoring(k, q - base, m, schedule.tau_max))
        .collect())
}

/// Restoring torques over a joint range, written into `out`.
pub(crate) fn bias_torque_range(
    q: &[f64],
    params: &SpringParams,
    range: Range<usize>,
    multiplier: f64,
    tau_max: f64,
    out: &mut [f64],
) {
    for i in range {
        out[i] = restoring(params.k[i], q[i] - params.q_base[i], multiplier, tau_max);
    }
}

/// Feedback phase of a leader limb given the session state.
pub fn phase_of(
    state: &SessionState,
    limb: &str,
    leader: &DeviceConfig,
) -> Result<FeedbackPhase, FeedbackError> {
    let spec = leader
        .limbs
        .iter()
        .find(|l| l.name == limb)
        .ok_or_else(|| FeedbackError::UnknownLimb(limb.to_string()))?;
    Ok(match state.phase {
        Phase::Idle | Phase::Arming { .. } => FeedbackPhase::Idle,
        Phase::Synchronizing { .. } => FeedbackPhase::Synchronizing,
        Phase::Active => {
            let deactivated = spec.kind == LimbKind::Arm
                && spec
                    .mount
                    .side()
                    .is_some_and(|side| !state.arm_active(side));
            if deactivated {
                FeedbackPhase::DeactivatedArm
            } else {
                FeedbackPhase::NormalActive
            }
        }
    })
}

fn limb_range(leader: &DeviceConfig, limb: &str) -> Result<Range<usize>, FeedbackError> {
    let li = leader
        .limb_index(limb)
        .ok_or_else(|| FeedbackError::UnknownLimb(limb.to_string()))?;
    let start = leader.limb_offsets()[li];
    Ok(start..start + leader.limbs[li].joints.len())
}

/// Replace the base pose of one limb, e.g. freezing an arm where it was
/// when its leg took over as a joystick.
pub fn set_base_pose(
    params: &mut SpringParams,
    leader: &DeviceConfig,
    limb: &str,
    q: &[f64],
) -> Result<(), FeedbackError> {
    let range = limb_range(leader, limb)?;
    if q.len() != range.len() {
        return Err(FeedbackError::SchemaMismatch {
            expected: range.len(),
            found: q.len(),
        });
    }
    let li = leader.limb_index(limb).expect("range resolved");
    for (joint, &v) in leader.limbs[li].joints.iter().zip(q) {
        if !joint.contains(v) {
            return Err(FeedbackError::LimitViolation {
                joint: joint.name.clone(),
                value: v,
                min: joint.position_min,
                max: joint.position_max,
            });
        }
    }
    params.q_base[range].copy_from_slice(q);
    Ok(())
}

/// Put one limb's base pose back to its configured default.
pub fn reset_base_pose(
    params: &mut SpringParams,
    leader: &DeviceConfig,
    limb: &str,
) -> Result<(), FeedbackError> {
    let range = limb_range(leader, limb)?;
    let default: Vec<f64> = params.default_base[range.clone()].to_vec();
    params.q_base[range].copy_from_slice(&default);
    Ok(())
}
