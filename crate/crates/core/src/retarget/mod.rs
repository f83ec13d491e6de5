//! Direct joint controller: leader joint positions become follower joint
//! targets (sign, offset, clamp), and the leader IMU becomes either torso
//! joint commands or a world-frame base orientation.

mod rotation;

use serde::Serialize;
use thiserror::Error;

use crate::config::{ImuMode, Rig};
use crate::transport::StateFrame;

pub use rotation::{
    check_unit, euler_to_quat, quat_norm, quat_to_euler, EulerAngles, NonUnitQuaternion, Quat,
    GIMBAL_MARGIN, IDENTITY,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetargetError {
    #[error("frame has {found} joints, leader schema has {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error(transparent)]
    NonUnitQuaternion(#[from] NonUnitQuaternion),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetargetOutput {
    /// Follower schema order, always within joint limits.
    pub follower_targets: Vec<f64>,
    /// Only with velocity feed-forward enabled.
    pub follower_velocities: Option<Vec<f64>>,
    pub torso_command: Option<EulerAngles>,
    pub base_orientation: Option<Quat>,
    pub clamped_joints: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ImuCommand {
    Torso(EulerAngles),
    Base(Quat),
}

/// Interpret a leader orientation under an IMU mode. `None` when disabled.
pub fn imu_to_command(
    orientation: &Quat,
    mode: ImuMode,
) -> Result<Option<ImuCommand>, NonUnitQuaternion> {
    let q = check_unit(orientation)?;
    Ok(match mode {
        ImuMode::TorsoJoints => Some(ImuCommand::Torso(quat_to_euler(&q)?)),
        ImuMode::FloatingBase => Some(ImuCommand::Base(q)),
        ImuMode::Disabled => None,
    })
}

pub fn map_joints(frame: &StateFrame, rig: &Rig) -> Result<RetargetOutput, RetargetError> {
    let expected = rig.leader_joint_count();
    if frame.joint_positions.len() != expected || frame.joint_velocities.len() != expected {
        return Err(RetargetError::SchemaMismatch {
            expected,
            found: frame.joint_positions.len(),
        });
    }
    let follower = &rig.follower;
    let specs: Vec<_> = follower.joints().collect();
    let mut targets = follower.home_positions();
    let mut clamped = Vec::new();
    let mut clamp_into = |index: usize, value: f64, targets: &mut Vec<f64>| {
        let spec = specs[index];
        let bounded = spec.clamp(value);
        if bounded != value {
            clamped.push(spec.name.clone());
        }
        targets[index] = bounded;
    };

    for pair in &rig.pairs {
        let q = f64::from(frame.joint_positions[pair.leader]);
        clamp_into(pair.follower, pair.sign * q + pair.offset, &mut targets);
    }

    let mut torso_command = None;
    let mut base_orientation = None;
    match imu_to_command(&frame.orientation_f64(), rig.mapping.imu_mode)? {
        Some(ImuCommand::Torso(euler)) => {
            if let Some(torso) = rig.torso {
                let angles = [euler.yaw, euler.roll, euler.pitch];
                for ((&index, angle), sign) in torso.iter().zip(angles).zip(rig.mapping.torso_signs) {
                    clamp_into(index, sign.value() * angle, &mut targets);
                }
            }
            torso_command = Some(euler);
        }
        // torso joints keep their home targets
        Some(ImuCommand::Base(q)) => base_orientation = Some(q),
        None => {}
    }

    let follower_velocities = rig.mapping.velocity_feedforward.then(|| {
        let mut v = vec![0.0; targets.len()];
        for pair in &rig.pairs {
            let limit = specs[pair.follower].velocity_max;
            v[pair.follower] =
                (pair.sign * f64::from(frame.joint_velocities[pair.leader])).clamp(-limit, limit);
        }
        v
    });

    Ok(RetargetOutput {
        follower_targets: targets,
        follower_velocities,
        torso_command,
        base_orientation,
        clamped_joints: clamped,
    })
}
