//! Scenario scripts: drive a leader source through the codec, the latest
//! value cell, the session and the follower simulator on a virtual clock,
//! then check assertions against the run.
//!
//! ```toml
//! name = "example"
//! leader = "../configs/g1_leader.toml"     # relative to this file
//! follower = "../configs/g1_follower.toml"
//! rate_hz = 100
//! duration = 10.0
//! seed = 7
//!
//! [source]
//! kind = "script"            # script | hold | sine | trace
//! noise = 0.001
//! events = [{ at = 0.5, grip = "both", value = 1.0 }]
//!
//! [[outages]]                # frames lost on the link
//! start = 6.0
//! end = 6.5
//!
//! [[assert]]
//! kind = "event_sequence"
//! events = ["session_activated", "sync_complete"]
//! ```

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use super::{step_follower, FollowerState, TrackingParams};
use crate::config::{ConfigError, DeviceConfig, MappingError, Rig};
use crate::leader_source::{
    read_trace, GestureScript, Hold, LeaderSource, Replay, ScriptEvent, SineSweep, SourceError,
};
use crate::retarget::quat_to_euler;
use crate::session::{step, GestureEvent, Phase, SessionState};
use crate::transport::{decode_frame, encode_frame, LatestCell};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Script(String),
    #[error("config {path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

fn default_rate() -> f64 {
    100.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub leader: PathBuf,
    pub follower: PathBuf,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    pub source: SourceSpec,
    #[serde(default)]
    pub outages: Vec<Outage>,
    #[serde(default, rename = "assert")]
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Script {
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        events: Vec<ScriptEvent>,
    },
    Hold,
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        joints: Option<Vec<String>>,
    },
    Trace {
        path: PathBuf,
        #[serde(default = "one")]
        speed: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseName {
    Idle,
    Arming,
    Synchronizing,
    Active,
}

impl PhaseName {
    fn matches(self, phase: &Phase) -> bool {
        phase.name() == self.as_str()
    }

    fn as_str(self) -> &'static str {
        match self {
            PhaseName::Idle => "idle",
            PhaseName::Arming => "arming",
            PhaseName::Synchronizing => "synchronizing",
            PhaseName::Active => "active",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseAxis {
    X,
    Y,
    Distance,
    Heading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EulerAxis {
    Roll,
    Pitch,
    Yaw,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// Gesture events in order, as `kind` or `kind side`.
    EventSequence { events: Vec<String> },
    /// Joints never leave home; defaults to every joint the mapping holds.
    JointsAtHome {
        #[serde(default)]
        joints: Option<Vec<String>>,
    },
    /// Final base pose component within [min, max].
    BaseDisplacement { axis: BaseAxis, min: f64, max: f64 },
    /// Final base orientation Euler angle within [min, max].
    BaseOrientation { axis: EulerAxis, min: f64, max: f64 },
    FinalPhase { phase: PhaseName },
    /// Whether any follower joint moves while the session is in `phase`.
    MovesDuringPhase { phase: PhaseName, expect: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssertionResult {
    pub description: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub name: String,
    pub ticks: u64,
    pub events: Vec<GestureEvent>,
    /// One line per gesture event.
    pub event_log: String,
    /// Header line then one record per tick.
    pub trajectory_log: String,
    pub final_state: FollowerState,
    pub final_phase: Phase,
    /// Ticks with a follower joint outside its limits (always checked).
    pub limit_violations: u64,
    /// Ticks where a command was emitted before activation (always checked).
    pub idle_commands: u64,
    pub stale_ticks: u64,
    pub assertions: Vec<AssertionResult>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.limit_violations == 0 && self.idle_commands == 0 && self.assertions.iter().all(|a| a.passed)
    }

    /// Write `<name>.events` and `<name>.trajectory` into `dir`.
    pub fn write_logs(&self, dir: impl AsRef<Path>) -> std::io::Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let events = dir.join(format!("{}.events", self.name));
        let trajectory = dir.join(format!("{}.trajectory", self.name));
        std::fs::write(&events, &self.event_log)?;
        std::fs::write(&trajectory, &self.trajectory_log)?;
        Ok((events, trajectory))
    }
}

impl fmt::Display for ScenarioReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {}: {} ticks, final phase {}", self.name, self.ticks, self.final_phase.name())?;
        for e in &self.events {
            writeln!(f, "  event {e}")?;
        }
        let b = &self.final_state.base_pose;
        writeln!(f, "  base x={:.4} y={:.4} heading={:.4}", b.x, b.y, b.heading)?;
        writeln!(f, "  limit violations: {}, idle commands: {}, stale ticks: {}", self.limit_violations, self.idle_commands, self.stale_ticks)?;
        for a in &self.assertions {
            let mark = if a.passed { "ok  " } else { "FAIL" };
            writeln!(f, "  {mark} {}: {}", a.description, a.detail)?;
        }
        write!(f, "{}", if self.passed() { "PASSED" } else { "FAILED" })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<(ScenarioSpec, PathBuf), ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let spec: ScenarioSpec = toml::from_str(&text).map_err(|e| ScenarioError::Script(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((spec, base))
}

pub fn run_scenario(path: impl AsRef<Path>) -> Result<ScenarioReport, ScenarioError> {
    let (spec, base) = load_scenario(path)?;
    run_spec(&spec, &base)
}

fn load_config(base: &Path, rel: &Path) -> Result<DeviceConfig, ScenarioError> {
    let path = base.join(rel);
    DeviceConfig::load(&path).map_err(|source| ScenarioError::Config { path, source })
}

/// The leader source a scenario describes, checked against `leader`.
pub fn build_source(
    spec: &ScenarioSpec,
    base: &Path,
    leader: &DeviceConfig,
) -> Result<Box<dyn LeaderSource>, ScenarioError> {
    Ok(match &spec.source {
        SourceSpec::Script { noise, events } => Box::new(
            GestureScript::new(leader, events, Some(spec.duration))?.with_noise(*noise, spec.seed)?,
        ),
        SourceSpec::Hold => Box::new(Hold::home(leader)),
        SourceSpec::Sine { amplitude, frequency, joints } => {
            Box::new(SineSweep::new(leader, *amplitude, *frequency, joints.as_deref())?)
        }
        SourceSpec::Trace { path, speed } => {
            let trace = read_trace(base.join(path))?;
            trace.header.check_schema(leader)?;
            Box::new(Replay::new(trace, *speed)?)
        }
    })
}

fn secs_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

pub fn run_spec(spec: &ScenarioSpec, base: &Path) -> Result<ScenarioReport, ScenarioError> {
    if !(spec.rate_hz > 0.0 && spec.rate_hz.is_finite()) {
        return Err(ScenarioError::Script(format!("rate_hz must be positive, got {}", spec.rate_hz)));
    }
    if !(spec.duration >= 0.0 && spec.duration.is_finite()) {
        return Err(ScenarioError::Script(format!("duration must be >= 0, got {}", spec.duration)));
    }
    let leader = load_config(base, &spec.leader)?;
    let follower = load_config(base, &spec.follower)?;
    let rig = Rig::new(leader, follower)?;
    let mut source = build_source(spec, base, &rig.leader)?;
    if source.joint_count() != rig.leader_joint_count() {
        return Err(ScenarioError::Script("source does not match the leader schema".into()));
    }

    let home_checks = resolve_home_checks(spec, &rig)?;
    let period = Duration::from_nanos((1e9 / spec.rate_hz).round() as u64);
    let period_ns = period.as_nanos() as u64;
    let ticks = (spec.duration * spec.rate_hz).round() as u64;
    let outages: Vec<(u64, u64)> = spec.outages.iter().map(|o| (secs_ns(o.start), secs_ns(o.end))).collect();

    let cell = LatestCell::new(rig.follower.session.staleness_timeout_ns());
    let params = TrackingParams::from_config(&rig.follower);
    let mut session = SessionState::new(&rig);
    let mut state = FollowerState::at_home(&rig.follower);
    let limits: Vec<(f64, f64)> = rig.follower.joints().map(|j| (j.position_min, j.position_max)).collect();

    let mut events = Vec::new();
    let mut limit_violations = 0;
    let mut idle_commands = 0;
    let mut moved_in = Vec::new();
    let mut homes_ok = vec![true; home_checks.len()];
    let mut trajectory = String::new();
    write!(trajectory, "# time_ns phase x y heading vx vy wz").unwrap();
    for name in rig.follower.joint_names() {
        write!(trajectory, " {name}").unwrap();
    }
    trajectory.push('\n');

    for k in 0..ticks {
        let t = k * period_ns;
        let mut frame = source.frame_at(t);
        frame.seq = k + 1;
        frame.stamp_ns = t;
        let lost = outages.iter().any(|&(a, b)| t >= a && t < b);
        if !lost {
            match encode_frame(&frame).map_err(|e| e.to_string()).and_then(|bytes| {
                decode_frame(&bytes).map_err(|e| e.to_string())
            }) {
                Ok(decoded) => {
                    cell.offer(decoded, t);
                }
                Err(_) => cell.note_malformed(),
            }
        }
        let snapshot = cell.snapshot(t);
        let out = step(&mut session, snapshot.fresh(), &state, period, &rig);
        if session.phase.is_idle()
            && (out.commands.joint_targets.is_some() || !out.commands.velocity.is_zero())
        {
            idle_commands += 1;
        }
        let next = step_follower(&state, &out.commands, period, &params);
        if next.joints.iter().zip(&limits).any(|(&q, &(lo, hi))| q < lo || q > hi) {
            limit_violations += 1;
        }
        if next.joints != state.joints {
            moved_in.push(session.phase.name());
        }
        for ((index, home), ok) in home_checks.iter().zip(homes_ok.iter_mut()) {
            if next.joints[*index] != *home {
                *ok = false;
            }
        }
        let v = out.commands.velocity;
        write!(
            trajectory,
            "{} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            next.time_ns, session.phase.name(), next.base_pose.x, next.base_pose.y,
            next.base_pose.heading, v.vx, v.vy, v.wz
        )
        .unwrap();
        for q in &next.joints {
            write!(trajectory, " {q:.6}").unwrap();
        }
        trajectory.push('\n');
        events.extend(out.events);
        state = next;
    }

    let mut event_log = String::new();
    for e in &events {
        writeln!(event_log, "{e}").unwrap();
    }

    let names = rig.follower.joint_names();
    let mut results = Vec::new();
    for assertion in &spec.assertions {
        results.push(match assertion {
            Assertion::EventSequence { events: expected } => {
                let got: Vec<String> = events
                    .iter()
                    .map(|e| match e.kind.side() {
                        Some(side) => format!("{} {side}", e.kind.name()),
                        None => e.kind.name().to_string(),
                    })
                    .collect();
                AssertionResult {
                    description: "event sequence".into(),
                    passed: &got == expected,
                    detail: format!("got [{}]", got.join(", ")),
                }
            }
            Assertion::JointsAtHome { .. } => {
                let moved: Vec<&str> = home_checks
                    .iter()
                    .zip(&homes_ok)
                    .filter(|(_, ok)| !**ok)
                    .map(|((i, _), _)| names[*i].as_str())
                    .collect();
                AssertionResult {
                    description: format!("{} joints stay at home", home_checks.len()),
                    passed: moved.is_empty(),
                    detail: if moved.is_empty() { "all held".into() } else { format!("moved: {}", moved.join(", ")) },
                }
            }
            Assertion::BaseDisplacement { axis, min, max } => {
                let b = &state.base_pose;
                let value = match axis {
                    BaseAxis::X => b.x,
                    BaseAxis::Y => b.y,
                    BaseAxis::Distance => b.x.hypot(b.y),
                    BaseAxis::Heading => b.heading,
                };
                range_result(format!("base {axis:?}"), value, *min, *max)
            }
            Assertion::BaseOrientation { axis, min, max } => {
                let e = quat_to_euler(&state.base_orientation)
                    .map_err(|e| ScenarioError::Script(format!("base orientation: {e}")))?;
                let value = match axis {
                    EulerAxis::Roll => e.roll,
                    EulerAxis::Pitch => e.pitch,
                    EulerAxis::Yaw => e.yaw,
                };
                range_result(format!("base {axis:?}"), value, *min, *max)
            }
            Assertion::FinalPhase { phase } => AssertionResult {
                description: format!("final phase {}", phase.as_str()),
                passed: phase.matches(&session.phase),
                detail: format!("got {}", session.phase.name()),
            },
            Assertion::MovesDuringPhase { phase, expect } => {
                let moved = moved_in.iter().any(|p| *p == phase.as_str());
                AssertionResult {
                    description: format!("follower {} during {}", if *expect { "moves" } else { "still" }, phase.as_str()),
                    passed: moved == *expect,
                    detail: format!("moved: {moved}"),
                }
            }
        });
    }

    Ok(ScenarioReport {
        name: spec.name.clone(),
        ticks,
        events,
        event_log,
        trajectory_log: trajectory,
        final_state: state,
        final_phase: session.phase,
        limit_violations,
        idle_commands,
        stale_ticks: session.stale_ticks,
        assertions: results,
    })
}

fn range_result(description: String, value: f64, min: f64, max: f64) -> AssertionResult {
    AssertionResult {
        description: format!("{description} in [{min}, {max}]"),
        passed: (min..=max).contains(&value),
        detail: format!("got {value:.6}"),
    }
}

/// Joints named by any `joints_at_home` assertion, or those the mapping
/// leaves at home when no list is given.
fn resolve_home_checks(spec: &ScenarioSpec, rig: &Rig) -> Result<Vec<(usize, f64)>, ScenarioError> {
    let mut names: Vec<String> = Vec::new();
    for a in &spec.assertions {
        if let Assertion::JointsAtHome { joints } = a {
            match joints {
                Some(list) => names.extend(list.iter().cloned()),
                None => names.extend(rig.report.unmapped.iter().map(|u| u.name.clone())),
            }
        }
    }
    names.dedup();
    names
        .iter()
        .map(|name| {
            let r = rig
                .follower
                .joint_ref(name)
                .ok_or_else(|| ScenarioError::Script(format!("unknown follower joint `{name}`")))?;
            Ok((r.index, rig.follower.limbs[r.limb].joints[r.joint].home_position))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> ScenarioSpec {
        toml::from_str(text).unwrap()
    }

    fn configs() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
    }

    #[test]
    fn empty_hold_stays_idle() {
        let s = spec(
            r#"
name = "idle"
leader = "g1_leader.toml"
follower = "g1_follower.toml"
duration = 2.0
[source]
kind = "hold"
[[assert]]
kind = "final_phase"
phase = "idle"
[[assert]]
kind = "moves_during_phase"
phase = "idle"
expect = false
"#,
        );
        let report = run_spec(&s, &configs()).unwrap();
        assert!(report.events.is_empty());
        assert!(report.event_log.is_empty());
        assert!(report.passed(), "{report}");
        assert_eq!(report.ticks, 200);
    }

    #[test]
    fn failing_assertion_reported() {
        let s = spec(
            r#"
name = "idle_motion"
leader = "g1_leader.toml"
follower = "g1_follower.toml"
duration = 1.0
[source]
kind = "hold"
[[assert]]
kind = "moves_during_phase"
phase = "idle"
expect = true
"#,
        );
        let report = run_spec(&s, &configs()).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = r#"
name = "x"
leader = "a"
follower = "b"
duration = 1.0
bogus = 1
[source]
kind = "hold"
"#;
        assert!(toml::from_str::<ScenarioSpec>(bad).is_err());
    }

    #[test]
    fn outage_makes_link_stale() {
        let s = spec(
            r#"
name = "outage"
leader = "g1_leader.toml"
follower = "g1_follower.toml"
duration = 2.0
[source]
kind = "script"
events = [{ at = 0.0, grip = "both", value = 1.0 }]
[[outages]]
start = 0.5
end = 1.5
"#,
        );
        let report = run_spec(&s, &configs()).unwrap();
        // 0.2 s of the outage is inside the staleness timeout
        assert_eq!(report.stale_ticks, 80);
        assert!(report.events.is_empty());
        assert!(matches!(report.final_phase, Phase::Arming { held_ns } if held_ns == 1_200_000_000));
    }
}
