//! Teleoperation session state machine.
//!
//! Idle -> (both grippers held) Arming -> Synchronizing -> Active. While
//! Active with joystick legs, holding one gripper toggles that side between
//! arm teleoperation and leg-as-joystick locomotion.
//!
//! All hold timers are integer nanoseconds so thresholds are exact at any
//! control rate.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{LegMode, Rig, Side};
use crate::feedback::{self, bias_torque_range, FeedbackPhase, SpringParams};
use crate::follower_sim::FollowerState;
use crate::locomotion::{capture_neutral, hip_to_velocity, HipAngles, VelocityCommand};
use crate::retarget::{map_joints, EulerAngles, Quat, RetargetOutput};
use crate::transport::StateFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionParams {
    /// Trigger value at which a gripper counts as closed.
    pub close_threshold: f64,
    /// A closed gripper opens again only below this value.
    pub release_threshold: f64,
    /// Seconds both grippers must be held to start a session.
    pub activation_hold: f64,
    /// Seconds one gripper must be held to toggle joystick mode.
    pub toggle_hold: f64,
    /// Max joint error (rad) that ends synchronization.
    pub sync_epsilon: f64,
    /// Synchronization speed as a fraction of each joint's velocity limit.
    pub sync_velocity_fraction: f64,
    pub staleness_timeout_ms: u64,
}

impl Default for SessionParams {
    fn default() -> Self {
        SessionParams {
            close_threshold: 0.8,
            release_threshold: 0.6,
            activation_hold: 3.0,
            toggle_hold: 1.0,
            sync_epsilon: 0.02,
            sync_velocity_fraction: 0.25,
            staleness_timeout_ms: 200,
        }
    }
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

impl SessionParams {
    pub fn activation_hold_ns(&self) -> u64 {
        secs_to_ns(self.activation_hold)
    }

    pub fn toggle_hold_ns(&self) -> u64 {
        secs_to_ns(self.toggle_hold)
    }

    pub fn staleness_timeout_ns(&self) -> u64 {
        self.staleness_timeout_ms * 1_000_000
    }

    pub(crate) fn validate(&self) -> Result<(), (String, String)> {
        let unit = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        if !unit(self.close_threshold) {
            return Err(("close_threshold".into(), "must be in (0, 1]".into()));
        }
        if !(self.release_threshold.is_finite()
            && self.release_threshold >= 0.0
            && self.release_threshold <= self.close_threshold)
        {
            return Err((
                "release_threshold".into(),
                "must be in [0, close_threshold]".into(),
            ));
        }
        for (name, v) in [
            ("activation_hold", self.activation_hold),
            ("toggle_hold", self.toggle_hold),
            ("sync_epsilon", self.sync_epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err((name.into(), "must be positive".into()));
            }
        }
        if !unit(self.sync_velocity_fraction) {
            return Err(("sync_velocity_fraction".into(), "must be in (0, 1]".into()));
        }
        if self.staleness_timeout_ms == 0 {
            return Err(("staleness_timeout_ms".into(), "must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Phase {
    Idle,
    /// Both grippers closed, held for `held_ns` so far.
    Arming { held_ns: u64 },
    /// Fraction of the initial joint error already closed.
    Synchronizing { progress: f64 },
    Active,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Arming { .. } => "arming",
            Phase::Synchronizing { .. } => "synchronizing",
            Phase::Active => "active",
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, Phase::Idle | Phase::Arming { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "side", rename_all = "snake_case")]
pub enum GestureKind {
    SessionActivated,
    SyncComplete,
    JoystickEngaged(Side),
    JoystickReleased(Side),
}

impl GestureKind {
    pub fn name(&self) -> &'static str {
        match self {
            GestureKind::SessionActivated => "session_activated",
            GestureKind::SyncComplete => "sync_complete",
            GestureKind::JoystickEngaged(_) => "joystick_engaged",
            GestureKind::JoystickReleased(_) => "joystick_released",
        }
    }

    pub fn side(&self) -> Option<Side> {
        match self {
            GestureKind::JoystickEngaged(s) | GestureKind::JoystickReleased(s) => Some(*s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GestureEvent {
    pub kind: GestureKind,
    pub stamp_ns: u64,
}

/// Event log line: `<stamp_ns> <kind> <side|->`.
impl fmt::Display for GestureEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind.side() {
            Some(side) => write!(f, "{} {} {}", self.stamp_ns, self.kind.name(), side),
            None => write!(f, "{} {} -", self.stamp_ns, self.kind.name()),
        }
    }
}

/// Everything the follower (and the leader's feedback drive) receives for
/// one tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandSet {
    pub stamp_ns: u64,
    /// Follower joint position targets; `None` means no command (Idle).
    pub joint_targets: Option<Vec<f64>>,
    pub joint_velocities: Option<Vec<f64>>,
    /// Follower gripper apertures in [0, 1]; `None` leaves them alone.
    pub gripper_targets: Option<Vec<f64>>,
    pub velocity: VelocityCommand,
    pub torso_command: Option<EulerAngles>,
    pub base_orientation: Option<Quat>,
    pub clamped_joints: Vec<String>,
    /// Restoring torque per leader joint.
    pub feedback_torques: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("joint vectors differ in length: {from} vs {to} (limits {limits})")]
    SchemaMismatch { from: usize, to: usize, limits: usize },
}

/// One rate-limited step from `from` toward `to`: each joint moves at most
/// `vel_limits[i] * dt`.
pub fn sync_trajectory(
    from: &[f64],
    to: &[f64],
    vel_limits: &[f64],
    dt: Duration,
) -> Result<Vec<f64>, SessionError> {
    if from.len() != to.len() || from.len() != vel_limits.len() {
        return Err(SessionError::SchemaMismatch {
            from: from.len(),
            to: to.len(),
            limits: vel_limits.len(),
        });
    }
    let dt = dt.as_secs_f64();
    Ok(from
        .iter()
        .zip(to)
        .zip(vel_limits)
        .map(|((&a, &b), &v)| {
            let step = v * dt;
            a + (b - a).clamp(-step, step)
        })
        .collect())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Per-gripper hold tracking with hysteresis.
#[derive(Debug, Clone, Default, PartialEq)]
struct Grip {
    closed: bool,
    held_ns: u64,
    /// Set after a gesture fires; the gripper must open before it can
    /// trigger anything again.
    spent: bool,
}

impl Grip {
    fn sample(&mut self, trigger: f64, dt_ns: u64, params: &SessionParams) {
        if self.closed {
            if trigger < params.release_threshold {
                *self = Grip::default();
            } else {
                self.held_ns += dt_ns;
            }
        } else if trigger >= params.close_threshold {
            self.closed = true;
            self.held_ns = dt_ns;
        }
    }

    fn armed_for(&self, hold_ns: u64) -> bool {
        self.closed && !self.spent && self.held_ns >= hold_ns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub phase: Phase,
    /// Indexed by `Side::index()`.
    pub leg_joystick: [bool; 2],
    pub arm_active: [bool; 2],
    grips: Vec<Grip>,
    neutral: [Option<HipAngles>; 2],
    /// Last emitted joint targets (held when stale or for a parked arm).
    last_targets: Option<Vec<f64>>,
    last_grippers: Option<Vec<f64>>,
    sync_initial_error: f64,
    pub springs: SpringParams,
    pub time_ns: u64,
    /// Fresh frames that did not fit the leader schema.
    pub malformed: u64,
    /// Ticks spent without a fresh frame.
    pub stale_ticks: u64,
}

impl SessionState {
    pub fn new(rig: &Rig) -> Self {
        SessionState {
            phase: Phase::Idle,
            leg_joystick: [false; 2],
            arm_active: [true; 2],
            grips: vec![Grip::default(); rig.leader_gripper_count()],
            neutral: [None; 2],
            last_targets: None,
            last_grippers: None,
            sync_initial_error: 0.0,
            springs: SpringParams::from_config(&rig.leader),
            time_ns: 0,
            malformed: 0,
            stale_ticks: 0,
        }
    }

    pub fn arm_active(&self, side: Side) -> bool {
        self.arm_active[side.index()]
    }

    pub fn leg_joystick(&self, side: Side) -> bool {
        self.leg_joystick[side.index()]
    }

    pub fn engaged_side(&self) -> Option<Side> {
        Side::BOTH.into_iter().find(|s| self.leg_joystick(*s))
    }

    /// Hold time of each leader gripper in seconds.
    pub fn hold_timers(&self) -> Vec<f64> {
        self.grips.iter().map(|g| g.held_ns as f64 * 1e-9).collect()
    }

    pub fn hold_timers_ns(&self) -> Vec<u64> {
        self.grips.iter().map(|g| g.held_ns).collect()
    }

    pub fn last_targets(&self) -> Option<&[f64]> {
        self.last_targets.as_deref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub events: Vec<GestureEvent>,
    pub commands: CommandSet,
}

fn frame_fits(frame: &StateFrame, rig: &Rig) -> bool {
    frame.joint_positions.len() == rig.leader_joint_count()
        && frame.joint_velocities.len() == rig.leader_joint_count()
        && frame.gripper_triggers.len() == rig.leader_gripper_count()
}

/// Advance the session by `dt`. `frame` is the newest leader frame, or
/// `None` when the link is stale; stale ticks hold every output and freeze
/// all timers.
pub fn step(
    state: &mut SessionState,
    frame: Option<&StateFrame>,
    follower: &FollowerState,
    dt: Duration,
    rig: &Rig,
) -> StepOutput {
    let dt_ns = dt.as_nanos() as u64;
    assert!(dt_ns > 0, "session step needs dt > 0");
    state.time_ns += dt_ns;
    let now = state.time_ns;

    let fresh = frame.and_then(|f| {
        if !frame_fits(f, rig) {
            state.malformed += 1;
            return None;
        }
        match map_joints(f, rig) {
            Ok(out) => Some((f, out)),
            Err(_) => {
                state.malformed += 1;
                None
            }
        }
    });
    let Some((frame, mapped)) = fresh else {
        state.stale_ticks += 1;
        return StepOutput {
            events: Vec::new(),
            commands: hold(state, rig, now),
        };
    };

    let params = &rig.follower.session;
    for (grip, &trigger) in state.grips.iter_mut().zip(&frame.gripper_triggers) {
        grip.sample(f64::from(trigger), dt_ns, params);
    }

    let mut events = Vec::new();
    let mut just_activated = false;
    if state.phase.is_idle() {
        state.phase = arming(state);
        if matches!(state.phase, Phase::Arming { held_ns } if held_ns >= params.activation_hold_ns()) {
            events.push(GestureEvent {
                kind: GestureKind::SessionActivated,
                stamp_ns: now,
            });
            for grip in &mut state.grips {
                grip.spent = true;
            }
            state.last_targets = Some(follower.joints.clone());
            state.last_grippers = Some(follower.grippers.clone());
            state.sync_initial_error = max_abs_diff(&follower.joints, &mapped.follower_targets);
            state.phase = Phase::Synchronizing { progress: 0.0 };
            just_activated = true;
        }
    }

    let q: Vec<f64> = frame.joint_positions.iter().map(|&p| f64::from(p)).collect();
    let commands = match state.phase {
        Phase::Idle | Phase::Arming { .. } => {
            // no command of any kind before activation
            state.last_targets = None;
            state.last_grippers = None;
            idle_commands(state, rig, &q, now)
        }
        // synchronization starts moving on the next tick
        Phase::Synchronizing { .. } if just_activated => {
            let mut hold = hold(state, rig, now);
            hold.feedback_torques = feedback_torques(state, rig, &q);
            hold
        }
        Phase::Synchronizing { .. } => synchronize(state, rig, mapped, &q, dt, now, &mut events),
        Phase::Active => {
            if rig.mapping.leg_mode == LegMode::Joystick {
                toggles(state, rig, frame, &q, now, &mut events);
            }
            active(state, rig, frame, mapped, &q, now)
        }
    };
    StepOutput { events, commands }
}

fn arming(state: &SessionState) -> Phase {
    let all_closed = !state.grips.is_empty() && state.grips.iter().all(|g| g.closed && !g.spent);
    if all_closed {
        let held_ns = state.grips.iter().map(|g| g.held_ns).min().unwrap_or(0);
        Phase::Arming { held_ns }
    } else {
        Phase::Idle
    }
}

fn hold(state: &SessionState, rig: &Rig, now: u64) -> CommandSet {
    CommandSet {
        stamp_ns: now,
        joint_targets: state.last_targets.clone(),
        joint_velocities: None,
        gripper_targets: state.last_grippers.clone(),
        velocity: VelocityCommand::zero(now),
        torso_command: None,
        base_orientation: None,
        clamped_joints: Vec::new(),
        feedback_torques: vec![0.0; rig.leader_joint_count()],
    }
}

fn feedback_torques(state: &SessionState, rig: &Rig, q: &[f64]) -> Vec<f64> {
    let schedule = &rig.leader.gains;
    let mut out = vec![0.0; q.len()];
    let offsets = rig.leader.limb_offsets();
    for (li, limb) in rig.leader.limbs.iter().enumerate() {
        let phase = feedback::phase_of(state, &limb.name, &rig.leader).unwrap_or(FeedbackPhase::Idle);
        let range = offsets[li]..offsets[li] + limb.joints.len();
        bias_torque_range(q, &state.springs, range, schedule.multiplier(phase), schedule.tau_max, &mut out);
    }
    out
}

fn idle_commands(state: &SessionState, rig: &Rig, q: &[f64], now: u64) -> CommandSet {
    CommandSet {
        stamp_ns: now,
        joint_targets: None,
        joint_velocities: None,
        gripper_targets: None,
        velocity: VelocityCommand::zero(now),
        torso_command: None,
        base_orientation: None,
        clamped_joints: Vec::new(),
        feedback_torques: feedback_torques(state, rig, q),
    }
}

fn synchronize(
    state: &mut SessionState,
    rig: &Rig,
    mapped: RetargetOutput,
    q: &[f64],
    dt: Duration,
    now: u64,
    events: &mut Vec<GestureEvent>,
) -> CommandSet {
    let params = &rig.follower.session;
    let limits: Vec<f64> = rig
        .follower
        .joints()
        .map(|j| j.velocity_max * params.sync_velocity_fraction)
        .collect();
    let from = state
        .last_targets
        .take()
        .unwrap_or_else(|| rig.follower.home_positions());
    let next = sync_trajectory(&from, &mapped.follower_targets, &limits, dt)
        .expect("follower schema lengths agree");
    let error = max_abs_diff(&next, &mapped.follower_targets);
    if error < params.sync_epsilon {
        state.phase = Phase::Active;
        events.push(GestureEvent {
            kind: GestureKind::SyncComplete,
            stamp_ns: now,
        });
    } else {
        let initial = state.sync_initial_error;
        let progress = if initial > 0.0 { (1.0 - error / initial).clamp(0.0, 1.0) } else { 1.0 };
        state.phase = Phase::Synchronizing { progress };
    }
    state.last_targets = Some(next.clone());
    CommandSet {
        stamp_ns: now,
        joint_targets: Some(next),
        joint_velocities: None,
        gripper_targets: state.last_grippers.clone(),
        velocity: VelocityCommand::zero(now),
        torso_command: None,
        base_orientation: None,
        clamped_joints: mapped.clamped_joints,
        feedback_torques: feedback_torques(state, rig, q),
    }
}

/// Fire at most one joystick toggle per tick. If both sides are armed the
/// one held longer wins, left on a tie.
fn toggles(
    state: &mut SessionState,
    rig: &Rig,
    frame: &StateFrame,
    q: &[f64],
    now: u64,
    events: &mut Vec<GestureEvent>,
) {
    let hold_ns = rig.follower.session.toggle_hold_ns();
    let mut winner: Option<(Side, u64)> = None;
    for side in Side::BOTH {
        let layout = rig.side(side);
        if !layout.joystick_capable() {
            continue;
        }
        let grip = &state.grips[layout.leader_gripper.expect("capable side has a gripper")];
        if !grip.armed_for(hold_ns) {
            continue;
        }
        if winner.map_or(true, |(_, held)| grip.held_ns > held) {
            winner = Some((side, grip.held_ns));
        }
    }
    let Some((side, _)) = winner else { return };
    for grip in &mut state.grips {
        if grip.closed {
            grip.spent = true;
        }
    }

    let layout = rig.side(side);
    let s = side.index();
    if state.leg_joystick[s] {
        state.leg_joystick[s] = false;
        state.arm_active[s] = true;
        state.neutral[s] = None;
        if rig.leader.gains.revert_base_on_release {
            if let Some(arm) = layout.leader_arm_limb {
                let name = &rig.leader.limbs[arm].name;
                feedback::reset_base_pose(&mut state.springs, &rig.leader, name)
                    .expect("arm limb exists");
            }
        }
        events.push(GestureEvent {
            kind: GestureKind::JoystickReleased(side),
            stamp_ns: now,
        });
    } else if state.engaged_side().is_none() {
        let hips = layout.leader_hips.expect("capable side has hips");
        state.leg_joystick[s] = true;
        state.arm_active[s] = false;
        state.neutral[s] = Some(capture_neutral(&frame.joint_positions, hips));
        if let Some(arm) = layout.leader_arm_limb {
            let limb = &rig.leader.limbs[arm];
            let pose: Vec<f64> = limb
                .joints
                .iter()
                .zip(&q[layout.leader_arm_joints.clone()])
                .map(|(j, &v)| j.clamp(v))
                .collect();
            feedback::set_base_pose(&mut state.springs, &rig.leader, &limb.name, &pose)
                .expect("clamped pose is within limits");
        }
        events.push(GestureEvent {
            kind: GestureKind::JoystickEngaged(side),
            stamp_ns: now,
        });
    }
    // the other leg is already a joystick: one driving leg at a time, the
    // gesture is spent without effect
}

fn active(
    state: &mut SessionState,
    rig: &Rig,
    frame: &StateFrame,
    mapped: RetargetOutput,
    q: &[f64],
    now: u64,
) -> CommandSet {
    let mut targets = mapped.follower_targets;
    let mut velocities = mapped.follower_velocities;
    let previous = state.last_targets.take();
    let sources = rig.gripper_sources();
    let mut grippers: Vec<f64> = sources
        .iter()
        .map(|src| src.map_or(0.0, |g| f64::from(frame.gripper_triggers[g]).clamp(0.0, 1.0)))
        .collect();
    let previous_grippers = state.last_grippers.take();

    for side in Side::BOTH {
        if state.arm_active(side) {
            continue;
        }
        let layout = rig.side(side);
        if let Some(prev) = &previous {
            for &j in &layout.follower_arm_joints {
                targets[j] = prev[j];
            }
        }
        if let Some(v) = velocities.as_mut() {
            for &j in &layout.follower_arm_joints {
                v[j] = 0.0;
            }
        }
        if let (Some(g), Some(prev)) = (layout.follower_gripper, &previous_grippers) {
            grippers[g] = prev[g];
        }
    }

    let velocity = match state.engaged_side() {
        Some(side) => {
            let hips = rig.side(side).leader_hips.expect("engaged side has hips");
            let angles = hips.map(|i| q[i]);
            let cal = rig
                .follower
                .locomotion
                .with_neutral(state.neutral[side.index()].unwrap_or(angles));
            hip_to_velocity(angles, &cal, true, now)
        }
        None => VelocityCommand::zero(now),
    };

    state.last_targets = Some(targets.clone());
    state.last_grippers = Some(grippers.clone());
    CommandSet {
        stamp_ns: now,
        joint_targets: Some(targets),
        joint_velocities: velocities,
        gripper_targets: Some(grippers),
        velocity,
        torso_command: mapped.torso_command,
        base_orientation: mapped.base_orientation,
        clamped_joints: mapped.clamped_joints,
        feedback_torques: feedback_torques(state, rig, q),
    }
}
