//! Device and mapping configuration.
//!
//! A config file describes one device (leader or follower): its limbs, the
//! mount each limb sits on, per-joint limits, and on the follower side the
//! leader-to-follower joint mapping. Files are TOML; see `configs/` for the
//! shipped fixtures and `docs/config-format.md` for the grammar.

mod mapping;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::GainSchedule;
use crate::locomotion::JoystickCalibration;
use crate::session::SessionParams;

pub use mapping::{
    validate_mapping, MappedPair, MappingError, MappingReport, MountNote, Rig, SideLayout,
    UnmappedJoint,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("invalid value at `{path}`: {message}")]
    Invariant { path: String, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn invariant(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invariant {
            path: path.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// The seven limb mounts on the leader torso.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MountId {
    LegLeft,
    LegRight,
    ArmFlatLeft,
    ArmFlatRight,
    ArmInclinedLeft,
    ArmInclinedRight,
    Top,
}

impl MountId {
    pub const ALL: [MountId; 7] = [
        MountId::LegLeft,
        MountId::LegRight,
        MountId::ArmFlatLeft,
        MountId::ArmFlatRight,
        MountId::ArmInclinedLeft,
        MountId::ArmInclinedRight,
        MountId::Top,
    ];

    pub fn side(self) -> Option<Side> {
        match self {
            MountId::LegLeft | MountId::ArmFlatLeft | MountId::ArmInclinedLeft => Some(Side::Left),
            MountId::LegRight | MountId::ArmFlatRight | MountId::ArmInclinedRight => {
                Some(Side::Right)
            }
            MountId::Top => None,
        }
    }

    pub fn is_arm(self) -> bool {
        matches!(
            self,
            MountId::ArmFlatLeft
                | MountId::ArmFlatRight
                | MountId::ArmInclinedLeft
                | MountId::ArmInclinedRight
        )
    }

    pub fn is_inclined(self) -> bool {
        matches!(self, MountId::ArmInclinedLeft | MountId::ArmInclinedRight)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MountId::LegLeft => "leg_left",
            MountId::LegRight => "leg_right",
            MountId::ArmFlatLeft => "arm_flat_left",
            MountId::ArmFlatRight => "arm_flat_right",
            MountId::ArmInclinedLeft => "arm_inclined_left",
            MountId::ArmInclinedRight => "arm_inclined_right",
            MountId::Top => "top",
        }
    }
}

impl fmt::Display for MountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimbKind {
    Arm,
    Leg,
    Neck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    #[serde(rename = "min")]
    pub position_min: f64,
    #[serde(rename = "max")]
    pub position_max: f64,
    #[serde(rename = "vel_max")]
    pub velocity_max: f64,
    #[serde(rename = "home", default)]
    pub home_position: f64,
}

impl JointSpec {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.position_min, self.position_max)
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.position_min && q <= self.position_max
    }
}

/// Names of the three hip joints a leg uses as a joystick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HipJoints {
    pub roll: String,
    pub pitch: String,
    pub yaw: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimbSpec {
    pub name: String,
    pub kind: LimbKind,
    pub mount: MountId,
    pub joints: Vec<JointSpec>,
    #[serde(default)]
    pub gripper: bool,
    /// Explicit hip joint names; when absent, joints whose names end in
    /// `hip_roll`, `hip_pitch` and `hip_yaw` are used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hip: Option<HipJoints>,
}

impl LimbSpec {
    /// Indices (within this limb) of the hip roll, pitch and yaw joints.
    pub fn hip_indices(&self) -> Option<[usize; 3]> {
        let find = |explicit: Option<&str>, suffix: &str| -> Option<usize> {
            match explicit {
                Some(name) => self.joints.iter().position(|j| j.name == name),
                None => self.joints.iter().position(|j| j.name.ends_with(suffix)),
            }
        };
        let hip = self.hip.as_ref();
        Some([
            find(hip.map(|h| h.roll.as_str()), "hip_roll")?,
            find(hip.map(|h| h.pitch.as_str()), "hip_pitch")?,
            find(hip.map(|h| h.yaw.as_str()), "hip_yaw")?,
        ])
    }
}

/// Joint sign multiplier, written as `1` or `-1` in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Sign {
    #[default]
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl Serialize for Sign {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_i64(match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        })
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match i64::deserialize(deserializer)? {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(de::Error::custom(format!("sign must be 1 or -1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointPair {
    pub leader: String,
    pub follower: String,
    #[serde(default)]
    pub sign: Sign,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImuMode {
    TorsoJoints,
    FloatingBase,
    #[default]
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LegMode {
    #[default]
    DirectJoint,
    Joystick,
}

fn default_alpha() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingSpec {
    #[serde(default)]
    pub pairs: Vec<JointPair>,
    /// Leader link-length scale. Joint angles are scale invariant, so this
    /// never enters the angle mapping.
    #[serde(default = "default_alpha")]
    pub scale_alpha: f64,
    #[serde(default)]
    pub imu_mode: ImuMode,
    #[serde(default)]
    pub leg_mode: LegMode,
    /// Follower torso joints driven by the IMU, in (yaw, roll, pitch) order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torso_joints: Option<[String; 3]>,
    #[serde(default)]
    pub torso_signs: [Sign; 3],
    /// Forward leader joint velocities alongside position targets.
    #[serde(default)]
    pub velocity_feedforward: bool,
}

impl Default for MappingSpec {
    fn default() -> Self {
        MappingSpec {
            pairs: Vec::new(),
            scale_alpha: 1.0,
            imu_mode: ImuMode::Disabled,
            leg_mode: LegMode::DirectJoint,
            torso_joints: None,
            torso_signs: [Sign::Plus; 3],
            velocity_feedforward: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub role: Role,
    pub limbs: Vec<LimbSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingSpec>,
    #[serde(default)]
    pub gains: GainSchedule,
    #[serde(default)]
    pub locomotion: JoystickCalibration,
    #[serde(default)]
    pub session: SessionParams,
}

/// Location of a joint inside a device's flattened joint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointRef {
    pub limb: usize,
    pub joint: usize,
    /// Position in the flattened joint vector.
    pub index: usize,
}

impl DeviceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_config(&text)
    }

    /// All joints in schema order (limb order, then joint order).
    pub fn joints(&self) -> impl Iterator<Item = &JointSpec> + '_ {
        self.limbs.iter().flat_map(|l| l.joints.iter())
    }

    pub fn joint_count(&self) -> usize {
        self.limbs.iter().map(|l| l.joints.len()).sum()
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints().map(|j| j.name.clone()).collect()
    }

    pub fn home_positions(&self) -> Vec<f64> {
        self.joints().map(|j| j.home_position).collect()
    }

    pub fn joint_ref(&self, name: &str) -> Option<JointRef> {
        let mut index = 0;
        for (li, limb) in self.limbs.iter().enumerate() {
            for (ji, joint) in limb.joints.iter().enumerate() {
                if joint.name == name {
                    return Some(JointRef {
                        limb: li,
                        joint: ji,
                        index,
                    });
                }
                index += 1;
            }
        }
        None
    }

    pub fn joint(&self, index: usize) -> Option<&JointSpec> {
        self.joints().nth(index)
    }

    /// Flattened index of the first joint of each limb.
    pub fn limb_offsets(&self) -> Vec<usize> {
        self.limbs
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.joints.len();
                Some(start)
            })
            .collect()
    }

    pub fn limb_index(&self, name: &str) -> Option<usize> {
        self.limbs.iter().position(|l| l.name == name)
    }

    /// Limbs carrying a gripper trigger, in gripper order.
    pub fn gripper_limbs(&self) -> Vec<usize> {
        self.limbs
            .iter()
            .enumerate()
            .filter(|(_, l)| l.gripper)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn gripper_count(&self) -> usize {
        self.limbs.iter().filter(|l| l.gripper).count()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.limbs.is_empty() {
            return Err(ConfigError::invariant("limbs", "at least one limb is required"));
        }
        let mut limb_names: HashMap<&str, usize> = HashMap::new();
        let mut mounts: HashMap<MountId, usize> = HashMap::new();
        let mut all_joints: HashMap<&str, String> = HashMap::new();
        for (li, limb) in self.limbs.iter().enumerate() {
            let lp = format!("limbs[{li}]");
            if let Some(prev) = limb_names.insert(&limb.name, li) {
                return Err(ConfigError::invariant(
                    format!("{lp}.name"),
                    format!("limb name `{}` already used by limbs[{prev}]", limb.name),
                ));
            }
            if let Some(prev) = mounts.insert(limb.mount, li) {
                return Err(ConfigError::invariant(
                    format!("{lp}.mount"),
                    format!(
                        "mount `{}` is used by both `{}` and `{}`",
                        limb.mount, self.limbs[prev].name, limb.name
                    ),
                ));
            }
            if limb.joints.is_empty() {
                return Err(ConfigError::invariant(
                    format!("{lp}.joints"),
                    "a limb needs at least one joint",
                ));
            }
            let mut local: HashSet<&str> = HashSet::new();
            for (ji, joint) in limb.joints.iter().enumerate() {
                let jp = format!("{lp}.joints[{ji}]");
                validate_joint(joint, &jp)?;
                if !local.insert(&joint.name) {
                    return Err(ConfigError::invariant(
                        format!("{jp}.name"),
                        format!("joint `{}` appears twice in limb `{}`", joint.name, limb.name),
                    ));
                }
                if let Some(other) = all_joints.insert(&joint.name, limb.name.clone()) {
                    return Err(ConfigError::invariant(
                        format!("{jp}.name"),
                        format!("joint `{}` also defined in limb `{other}`", joint.name),
                    ));
                }
            }
            if limb.kind == LimbKind::Leg {
                if limb.joints.len() < 3 {
                    return Err(ConfigError::invariant(
                        format!("{lp}.joints"),
                        format!("leg `{}` needs at least 3 joints", limb.name),
                    ));
                }
                if limb.hip_indices().is_none() {
                    return Err(ConfigError::invariant(
                        format!("{lp}.hip"),
                        format!(
                            "cannot identify hip roll/pitch/yaw joints of leg `{}`",
                            limb.name
                        ),
                    ));
                }
            } else if limb.hip.is_some() {
                return Err(ConfigError::invariant(
                    format!("{lp}.hip"),
                    "hip joints may only be given for leg limbs",
                ));
            }
        }

        if let Some(mapping) = &self.mapping {
            if self.role != Role::Follower {
                return Err(ConfigError::invariant(
                    "mapping",
                    "only follower configs carry a mapping",
                ));
            }
            validate_mapping_spec(mapping, self)?;
        }
        self.gains.validate().map_err(|(p, m)| ConfigError::invariant(format!("gains.{p}"), m))?;
        for name in self.gains.joint_stiffness.keys() {
            if self.joint_ref(name).is_none() {
                return Err(ConfigError::invariant(
                    format!("gains.joint_stiffness.{name}"),
                    format!("unknown joint `{name}`"),
                ));
            }
        }
        self.locomotion
            .validate()
            .map_err(|(p, m)| ConfigError::invariant(format!("locomotion.{p}"), m))?;
        self.session
            .validate()
            .map_err(|(p, m)| ConfigError::invariant(format!("session.{p}"), m))?;
        Ok(())
    }
}

fn validate_joint(joint: &JointSpec, path: &str) -> Result<(), ConfigError> {
    let finite = [
        ("min", joint.position_min),
        ("max", joint.position_max),
        ("vel_max", joint.velocity_max),
        ("home", joint.home_position),
    ];
    for (field, v) in finite {
        if !v.is_finite() {
            return Err(ConfigError::invariant(format!("{path}.{field}"), "must be finite"));
        }
    }
    if joint.position_min >= joint.position_max {
        return Err(ConfigError::invariant(
            format!("{path}.min"),
            format!(
                "min ({}) must be below max ({})",
                joint.position_min, joint.position_max
            ),
        ));
    }
    if !joint.contains(joint.home_position) {
        return Err(ConfigError::invariant(
            format!("{path}.home"),
            format!(
                "home {} outside [{}, {}]",
                joint.home_position, joint.position_min, joint.position_max
            ),
        ));
    }
    if joint.velocity_max <= 0.0 {
        return Err(ConfigError::invariant(
            format!("{path}.vel_max"),
            "must be positive",
        ));
    }
    Ok(())
}

fn validate_mapping_spec(mapping: &MappingSpec, cfg: &DeviceConfig) -> Result<(), ConfigError> {
    if !(mapping.scale_alpha > 0.0 && mapping.scale_alpha <= 1.0) {
        return Err(ConfigError::invariant(
            "mapping.scale_alpha",
            format!("must be in (0, 1], got {}", mapping.scale_alpha),
        ));
    }
    let mut followers: HashMap<&str, usize> = HashMap::new();
    for (i, pair) in mapping.pairs.iter().enumerate() {
        if !pair.offset.is_finite() {
            return Err(ConfigError::invariant(
                format!("mapping.pairs[{i}].offset"),
                "must be finite",
            ));
        }
        if let Some(prev) = followers.insert(&pair.follower, i) {
            return Err(ConfigError::invariant(
                format!("mapping.pairs[{i}].follower"),
                format!(
                    "follower joint `{}` already mapped by pairs[{prev}]",
                    pair.follower
                ),
            ));
        }
    }
    match (&mapping.torso_joints, mapping.imu_mode) {
        (None, ImuMode::TorsoJoints) => {
            return Err(ConfigError::invariant(
                "mapping.torso_joints",
                "imu_mode torso_joints requires three torso joints",
            ))
        }
        (Some(torso), _) => {
            for (i, name) in torso.iter().enumerate() {
                if cfg.joint_ref(name).is_none() {
                    return Err(ConfigError::invariant(
                        format!("mapping.torso_joints[{i}]"),
                        format!("unknown follower joint `{name}`"),
                    ));
                }
                if followers.contains_key(name.as_str()) {
                    return Err(ConfigError::invariant(
                        format!("mapping.torso_joints[{i}]"),
                        format!("torso joint `{name}` is also the target of a joint pair"),
                    ));
                }
                if torso[..i].contains(name) {
                    return Err(ConfigError::invariant(
                        format!("mapping.torso_joints[{i}]"),
                        format!("torso joint `{name}` listed twice"),
                    ));
                }
            }
        }
        (None, _) => {}
    }
    Ok(())
}

/// Parse and validate a config document, filling defaults.
pub fn parse_config(text: &str) -> Result<DeviceConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(text, span.start))
            .unwrap_or((0, 0));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let cfg: DeviceConfig =
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::Schema {
                path: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().message().to_string(),
            }
        })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Render a config back to its file format.
pub fn serialize_config(cfg: &DeviceConfig) -> String {
    toml::to_string(cfg).expect("config types always serialize to TOML")
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

/// Stable short fingerprint of a device's joint schema.
pub fn schema_fingerprint(cfg: &DeviceConfig) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for name in cfg.joint_names() {
        hasher.update(name.as_bytes());
        hasher.update([0]);
    }
    hasher.update((cfg.gripper_count() as u32).to_le_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// Per-joint stiffness for a leader config, schema order.
pub fn stiffness_vector(cfg: &DeviceConfig) -> Vec<f64> {
    let overrides: &BTreeMap<String, f64> = &cfg.gains.joint_stiffness;
    cfg.joints()
        .map(|j| overrides.get(&j.name).copied().unwrap_or(cfg.gains.stiffness))
        .collect()
}
