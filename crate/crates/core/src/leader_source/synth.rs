use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LeaderSource, SourceError};
use crate::config::{DeviceConfig, JointSpec, Side};
use crate::retarget::{euler_to_quat, EulerAngles};
use crate::transport::StateFrame;

fn check_limit(joint: &JointSpec, value: f64) -> Result<(), SourceError> {
    if joint.contains(value) {
        Ok(())
    } else {
        Err(SourceError::LimitViolation {
            joint: joint.name.clone(),
            value,
            min: joint.position_min,
            max: joint.position_max,
        })
    }
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

const IDENTITY_F32: [f32; 4] = [1.0, 0.0, 0.0, 0.0];

/// Constant frames at one pose.
#[derive(Debug, Clone)]
pub struct Hold {
    frame: StateFrame,
}

impl Hold {
    pub fn new(leader: &DeviceConfig, pose: &[f64], triggers: &[f64]) -> Result<Self, SourceError> {
        if pose.len() != leader.joint_count() || triggers.len() != leader.gripper_count() {
            return Err(SourceError::SchemaMismatch {
                expected: format!("{} joints, {} grippers", leader.joint_count(), leader.gripper_count()),
                found: format!("{} joints, {} grippers", pose.len(), triggers.len()),
            });
        }
        for (joint, &q) in leader.joints().zip(pose) {
            check_limit(joint, q)?;
        }
        if let Some(&t) = triggers.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(SourceError::Script(format!("trigger {t} outside [0, 1]")));
        }
        let n = pose.len();
        Ok(Hold {
            frame: StateFrame::new(to_f32(pose), vec![0.0; n], to_f32(triggers), IDENTITY_F32),
        })
    }

    pub fn home(leader: &DeviceConfig) -> Self {
        Hold::new(leader, &leader.home_positions(), &vec![0.0; leader.gripper_count()])
            .expect("home pose is within limits")
    }
}

impl LeaderSource for Hold {
    fn joint_count(&self) -> usize {
        self.frame.joint_positions.len()
    }
    fn gripper_count(&self) -> usize {
        self.frame.gripper_triggers.len()
    }
    fn frame_at(&mut self, _elapsed_ns: u64) -> StateFrame {
        self.frame.clone()
    }
}

/// `home + amplitude * sin(2 pi f t)` on selected joints, home elsewhere.
#[derive(Debug, Clone)]
pub struct SineSweep {
    home: Vec<f64>,
    swept: Vec<bool>,
    amplitude: f64,
    frequency_hz: f64,
    grippers: usize,
    duration_ns: Option<u64>,
}

impl SineSweep {
    /// Sweep `joints` (all joints when `None`).
    pub fn new(
        leader: &DeviceConfig,
        amplitude: f64,
        frequency_hz: f64,
        joints: Option<&[String]>,
    ) -> Result<Self, SourceError> {
        if !(frequency_hz.is_finite() && frequency_hz >= 0.0 && amplitude.is_finite()) {
            return Err(SourceError::Script("sine needs finite amplitude and frequency >= 0".into()));
        }
        let mut swept = vec![joints.is_none(); leader.joint_count()];
        for name in joints.unwrap_or_default() {
            let r = leader
                .joint_ref(name)
                .ok_or_else(|| SourceError::Script(format!("unknown joint `{name}`")))?;
            swept[r.index] = true;
        }
        for (joint, _) in leader.joints().zip(&swept).filter(|(_, s)| **s) {
            check_limit(joint, joint.home_position + amplitude.abs())?;
            check_limit(joint, joint.home_position - amplitude.abs())?;
        }
        Ok(SineSweep {
            home: leader.home_positions(),
            swept,
            amplitude,
            frequency_hz,
            grippers: leader.gripper_count(),
            duration_ns: None,
        })
    }

    pub fn with_duration(mut self, seconds: f64) -> Self {
        self.duration_ns = Some((seconds * 1e9).round() as u64);
        self
    }
}

impl LeaderSource for SineSweep {
    fn joint_count(&self) -> usize {
        self.home.len()
    }
    fn gripper_count(&self) -> usize {
        self.grippers
    }
    fn frame_at(&mut self, elapsed_ns: u64) -> StateFrame {
        let t = elapsed_ns as f64 * 1e-9;
        let w = TAU * self.frequency_hz;
        let (s, c) = (w * t).sin_cos();
        let mut q = Vec::with_capacity(self.home.len());
        let mut v = Vec::with_capacity(self.home.len());
        for (&home, &swept) in self.home.iter().zip(&self.swept) {
            if swept {
                q.push((home + self.amplitude * s) as f32);
                v.push((self.amplitude * w * c) as f32);
            } else {
                q.push(home as f32);
                v.push(0.0);
            }
        }
        StateFrame::new(q, v, vec![0.0; self.grippers], IDENTITY_F32)
    }
    fn duration_ns(&self) -> Option<u64> {
        self.duration_ns
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GripTarget {
    Left,
    Right,
    Both,
}

/// One timed change in a gesture script. Exactly one of `grip`, `joint` or
/// `orientation` is set. The channel moves linearly from its previous value
/// to the new one over `over` seconds (a step when 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEvent {
    /// Seconds from the start.
    pub at: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grip: Option<GripTarget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<String>,
    /// Torso (roll, pitch, yaw), radians.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orientation: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default)]
    pub over: f64,
}

impl ScriptEvent {
    pub fn grip(at: f64, grip: GripTarget, value: f64) -> Self {
        ScriptEvent { at, grip: Some(grip), joint: None, orientation: None, value: Some(value), over: 0.0 }
    }

    pub fn joint(at: f64, name: &str, value: f64, over: f64) -> Self {
        ScriptEvent { at, grip: None, joint: Some(name.into()), orientation: None, value: Some(value), over }
    }

    pub fn orientation(at: f64, rpy: [f64; 3], over: f64) -> Self {
        ScriptEvent { at, grip: None, joint: None, orientation: Some(rpy), value: None, over }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment {
    at_ns: u64,
    over_ns: u64,
    start: f64,
    end: f64,
}

/// Piecewise-linear scalar channel.
#[derive(Debug, Clone, Default, PartialEq)]
struct Channel {
    initial: f64,
    segments: Vec<Segment>,
}

impl Channel {
    fn new(initial: f64) -> Self {
        Channel { initial, segments: Vec::new() }
    }

    fn last_value(&self) -> f64 {
        self.segments.last().map_or(self.initial, |s| s.end)
    }

    fn push(&mut self, at_ns: u64, over_ns: u64, end: f64) -> Result<(), String> {
        if let Some(prev) = self.segments.last() {
            if at_ns < prev.at_ns + prev.over_ns {
                return Err(format!(
                    "event at {}s starts before the previous change on the same channel ends",
                    at_ns as f64 * 1e-9
                ));
            }
        }
        let start = self.last_value();
        self.segments.push(Segment { at_ns, over_ns, start, end });
        Ok(())
    }

    /// Value and slope (per second) at `t_ns`.
    fn eval(&self, t_ns: u64) -> (f64, f64) {
        let idx = self.segments.partition_point(|s| s.at_ns <= t_ns);
        let Some(seg) = idx.checked_sub(1).map(|i| self.segments[i]) else {
            return (self.initial, 0.0);
        };
        let into = t_ns - seg.at_ns;
        if into >= seg.over_ns {
            return (seg.end, 0.0);
        }
        let span = seg.over_ns as f64;
        let frac = into as f64 / span;
        (seg.start + (seg.end - seg.start) * frac, (seg.end - seg.start) / (span * 1e-9))
    }
}

/// Deterministic timeline of gripper, joint and torso changes.
#[derive(Debug, Clone)]
pub struct GestureScript {
    joints: Vec<Channel>,
    limits: Vec<(f64, f64)>,
    triggers: Vec<Channel>,
    orientation: [Channel; 3],
    duration_ns: u64,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

fn secs_to_ns(s: f64, what: &str) -> Result<u64, SourceError> {
    if s.is_finite() && s >= 0.0 {
        Ok((s * 1e9).round() as u64)
    } else {
        Err(SourceError::Script(format!("{what} must be a non-negative number of seconds, got {s}")))
    }
}

impl GestureScript {
    /// Events may come in any order; ties keep their listed order.
    pub fn new(
        leader: &DeviceConfig,
        events: &[ScriptEvent],
        duration: Option<f64>,
    ) -> Result<Self, SourceError> {
        let specs: Vec<&JointSpec> = leader.joints().collect();
        let mut joints: Vec<Channel> = specs.iter().map(|j| Channel::new(j.home_position)).collect();
        let mut triggers = vec![Channel::new(0.0); leader.gripper_count()];
        let mut orientation = [Channel::new(0.0), Channel::new(0.0), Channel::new(0.0)];
        let gripper_sides: Vec<Option<Side>> = leader
            .gripper_limbs()
            .into_iter()
            .map(|l| leader.limbs[l].mount.side())
            .collect();

        let mut order: Vec<&ScriptEvent> = events.iter().collect();
        order.sort_by(|a, b| a.at.total_cmp(&b.at));
        let mut end_ns = 0u64;
        for ev in order {
            let at = secs_to_ns(ev.at, "at")?;
            let over = secs_to_ns(ev.over, "over")?;
            end_ns = end_ns.max(at + over);
            let err = SourceError::Script;
            match (&ev.grip, &ev.joint, &ev.orientation) {
                (Some(grip), None, None) => {
                    let value = ev.value.ok_or_else(|| err("grip event needs `value`".into()))?;
                    if !(0.0..=1.0).contains(&value) {
                        return Err(err(format!("grip value {value} outside [0, 1]")));
                    }
                    let mut hit = false;
                    for (g, side) in gripper_sides.iter().enumerate() {
                        let wanted = match grip {
                            GripTarget::Both => true,
                            GripTarget::Left => *side == Some(Side::Left),
                            GripTarget::Right => *side == Some(Side::Right),
                        };
                        if wanted {
                            triggers[g].push(at, over, value).map_err(err)?;
                            hit = true;
                        }
                    }
                    if !hit {
                        return Err(err(format!("no {grip:?} gripper on the leader")));
                    }
                }
                (None, Some(name), None) => {
                    let value = ev.value.ok_or_else(|| err(format!("joint event `{name}` needs `value`")))?;
                    let r = leader
                        .joint_ref(name)
                        .ok_or_else(|| err(format!("unknown leader joint `{name}`")))?;
                    check_limit(specs[r.index], value)?;
                    joints[r.index].push(at, over, value).map_err(err)?;
                }
                (None, None, Some(rpy)) => {
                    if ev.value.is_some() {
                        return Err(err("orientation events take no `value`".into()));
                    }
                    for (channel, &angle) in orientation.iter_mut().zip(rpy) {
                        channel.push(at, over, angle).map_err(err)?;
                    }
                }
                _ => {
                    return Err(err(format!(
                        "event at {}s must set exactly one of grip, joint, orientation",
                        ev.at
                    )))
                }
            }
        }
        let duration_ns = match duration {
            Some(d) => secs_to_ns(d, "duration")?,
            None => end_ns,
        };
        Ok(GestureScript {
            joints,
            limits: specs.iter().map(|j| (j.position_min, j.position_max)).collect(),
            triggers,
            orientation,
            duration_ns,
            noise: None,
        })
    }

    /// Add seeded Gaussian noise to every joint position sample.
    pub fn with_noise(mut self, std_dev: f64, seed: u64) -> Result<Self, SourceError> {
        if std_dev > 0.0 {
            let normal = Normal::new(0.0, std_dev)
                .map_err(|e| SourceError::Script(format!("noise: {e}")))?;
            self.noise = Some((normal, ChaCha8Rng::seed_from_u64(seed)));
        }
        Ok(self)
    }
}

impl LeaderSource for GestureScript {
    fn joint_count(&self) -> usize {
        self.joints.len()
    }
    fn gripper_count(&self) -> usize {
        self.triggers.len()
    }
    fn frame_at(&mut self, elapsed_ns: u64) -> StateFrame {
        let mut q = Vec::with_capacity(self.joints.len());
        let mut v = Vec::with_capacity(self.joints.len());
        for (channel, &(min, max)) in self.joints.iter().zip(&self.limits) {
            let (mut pos, vel) = channel.eval(elapsed_ns);
            if let Some((normal, rng)) = self.noise.as_mut() {
                pos = (pos + normal.sample(rng)).clamp(min, max);
            }
            q.push(pos as f32);
            v.push(vel as f32);
        }
        let triggers = self.triggers.iter().map(|c| c.eval(elapsed_ns).0 as f32).collect();
        let [roll, pitch, yaw] = [0, 1, 2].map(|i| self.orientation[i].eval(elapsed_ns).0);
        let quat = euler_to_quat(&EulerAngles::new(roll, pitch, yaw)).map(|c| c as f32);
        StateFrame::new(q, v, triggers, quat)
    }
    fn duration_ns(&self) -> Option<u64> {
        Some(self.duration_ns)
    }
}
