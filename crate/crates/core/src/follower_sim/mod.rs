//! Kinematic follower: first-order joint tracking with rate caps, direct
//! gripper actuation and planar base integration in the heading frame.

pub mod scenario;

use std::f64::consts::PI;
use std::time::Duration;

use serde::Serialize;

use crate::config::DeviceConfig;
use crate::retarget::{Quat, IDENTITY};
use crate::session::CommandSet;

pub const DEFAULT_TIME_CONSTANT: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FollowerState {
    pub joints: Vec<f64>,
    pub grippers: Vec<f64>,
    pub base_pose: BasePose,
    pub base_orientation: Quat,
    pub time_ns: u64,
}

impl FollowerState {
    pub fn at_home(follower: &DeviceConfig) -> Self {
        FollowerState {
            joints: follower.home_positions(),
            grippers: vec![0.0; follower.gripper_count()],
            base_pose: BasePose::default(),
            base_orientation: IDENTITY,
            time_ns: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingParams {
    pub time_constants: Vec<f64>,
    pub velocity_caps: Vec<f64>,
    pub position_min: Vec<f64>,
    pub position_max: Vec<f64>,
}

impl TrackingParams {
    /// Default time constant on every joint, caps from `vel_max`.
    pub fn from_config(follower: &DeviceConfig) -> Self {
        let joints: Vec<_> = follower.joints().collect();
        TrackingParams {
            time_constants: vec![DEFAULT_TIME_CONSTANT; joints.len()],
            velocity_caps: joints.iter().map(|j| j.velocity_max).collect(),
            position_min: joints.iter().map(|j| j.position_min).collect(),
            position_max: joints.iter().map(|j| j.position_max).collect(),
        }
    }

    pub fn with_time_constant(mut self, tau: f64) -> Self {
        assert!(tau > 0.0, "time constant must be positive");
        self.time_constants.fill(tau);
        self
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Advance the follower by `dt` under `cmd`.
///
/// Joints follow the exact solution of `dq/dt = (target - q) / tau` over the
/// step, capped at `vel_cap * dt` and clamped to limits. The base integrates
/// body-frame velocities at the mid-step heading.
pub fn step_follower(
    state: &FollowerState,
    cmd: &CommandSet,
    dt: Duration,
    params: &TrackingParams,
) -> FollowerState {
    let h = dt.as_secs_f64();
    let mut next = state.clone();
    next.time_ns += dt.as_nanos() as u64;

    if let Some(targets) = &cmd.joint_targets {
        for (i, q) in next.joints.iter_mut().enumerate() {
            let alpha = 1.0 - (-h / params.time_constants[i]).exp();
            let cap = params.velocity_caps[i] * h;
            let delta = ((targets[i] - *q) * alpha).clamp(-cap, cap);
            *q = (*q + delta).clamp(params.position_min[i], params.position_max[i]);
        }
    }
    if let Some(grippers) = &cmd.gripper_targets {
        for (g, &target) in next.grippers.iter_mut().zip(grippers) {
            *g = target.clamp(0.0, 1.0);
        }
    }
    if let Some(q) = cmd.base_orientation {
        next.base_orientation = q;
    }

    let v = &cmd.velocity;
    let pose = &mut next.base_pose;
    let mid = pose.heading + 0.5 * v.wz * h;
    let (s, c) = mid.sin_cos();
    pose.x += (v.vx * c - v.vy * s) * h;
    pose.y += (v.vx * s + v.vy * c) * h;
    pose.heading = wrap_angle(pose.heading + v.wz * h);
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locomotion::VelocityCommand;

    fn params(n: usize) -> TrackingParams {
        TrackingParams {
            time_constants: vec![0.05; n],
            velocity_caps: vec![100.0; n],
            position_min: vec![-1.0; n],
            position_max: vec![1.0; n],
        }
    }

    fn state(joints: Vec<f64>) -> FollowerState {
        FollowerState {
            joints,
            grippers: vec![0.0],
            base_pose: BasePose::default(),
            base_orientation: IDENTITY,
            time_ns: 0,
        }
    }

    fn command(targets: Option<Vec<f64>>, vx: f64, vy: f64, wz: f64) -> CommandSet {
        CommandSet {
            stamp_ns: 0,
            joint_targets: targets,
            joint_velocities: None,
            gripper_targets: None,
            velocity: VelocityCommand { vx, vy, wz, stamp_ns: 0 },
            torso_command: None,
            base_orientation: None,
            clamped_joints: Vec::new(),
            feedback_torques: Vec::new(),
        }
    }

    #[test]
    fn fixed_point() {
        let s = state(vec![0.2, -0.3]);
        let next = step_follower(&s, &command(Some(vec![0.2, -0.3]), 0.0, 0.0, 0.0), Duration::from_millis(10), &params(2));
        assert_eq!(next.joints, s.joints);
        assert_eq!(next.base_pose, s.base_pose);
        assert_eq!(next.time_ns, 10_000_000);
    }

    #[test]
    fn forward_step() {
        let next = step_follower(&state(vec![]), &command(None, 0.5, 0.0, 0.0), Duration::from_millis(100), &params(0));
        assert!((next.base_pose.x - 0.05).abs() < 1e-15);
        assert_eq!(next.base_pose.y, 0.0);
    }

    #[test]
    fn pure_rotation_half_turn() {
        let mut s = state(vec![]);
        let cmd = command(None, 0.0, 0.0, 1.0);
        let steps = 40;
        let dt = Duration::from_secs_f64(PI / steps as f64);
        for _ in 0..steps {
            s = step_follower(&s, &cmd, dt, &params(0));
        }
        assert!((s.base_pose.heading.abs() - PI).abs() < 1e-7, "{:?}", s.base_pose);
        assert_eq!((s.base_pose.x, s.base_pose.y), (0.0, 0.0));
    }

    #[test]
    fn first_order_response() {
        let mut s = state(vec![0.0]);
        let cmd = command(Some(vec![0.5]), 0.0, 0.0, 0.0);
        for _ in 0..10 {
            s = step_follower(&s, &cmd, Duration::from_millis(5), &params(1));
        }
        let expected = 0.5 * (1.0 - (-0.05f64 / 0.05).exp());
        assert!((s.joints[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn velocity_cap_and_limits() {
        let mut p = params(1);
        p.velocity_caps[0] = 1.0;
        let s = step_follower(&state(vec![0.0]), &command(Some(vec![0.9]), 0.0, 0.0, 0.0), Duration::from_millis(100), &p);
        assert!((s.joints[0] - 0.1).abs() < 1e-12);
        let s = step_follower(&state(vec![0.99]), &command(Some(vec![5.0]), 0.0, 0.0, 0.0), Duration::from_millis(100), &params(1));
        assert_eq!(s.joints[0], 1.0);
    }

    #[test]
    fn no_target_holds() {
        let s = step_follower(&state(vec![0.4]), &command(None, 0.0, 0.0, 0.0), Duration::from_millis(10), &params(1));
        assert_eq!(s.joints, vec![0.4]);
    }

    #[test]
    fn wrap() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(wrap_angle(0.25), 0.25);
    }
}
