use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;

use serde::Serialize;
use thiserror::Error;

use super::{DeviceConfig, ImuMode, LegMode, LimbKind, MappingSpec, MountId, Role, Side};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("follower config has no mapping section")]
    NoMapping,
    #[error("expected a {expected:?} config, got {found:?}")]
    WrongRole { expected: Role, found: Role },
    #[error("unknown leader joint `{0}`")]
    UnknownLeaderJoint(String),
    #[error("unknown follower joint `{0}`")]
    UnknownFollowerJoint(String),
    #[error("leader joint `{leader}` maps to both `{first}` and `{second}`")]
    DuplicateLeader {
        leader: String,
        first: String,
        second: String,
    },
}

impl MappingError {
    /// The joint name the error is about, if any.
    pub fn joint(&self) -> Option<&str> {
        match self {
            MappingError::UnknownLeaderJoint(j) | MappingError::UnknownFollowerJoint(j) => Some(j),
            MappingError::DuplicateLeader { leader, .. } => Some(leader),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappedPair {
    pub leader: String,
    pub follower: String,
    pub sign: f64,
    pub offset: f64,
    pub leader_limb: String,
    pub follower_limb: String,
    pub leader_limits: (f64, f64),
    pub follower_limits: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldReason {
    /// No pair targets the joint.
    Unmapped,
    /// Leg joint while the legs act as joysticks.
    JoystickLeg,
    /// Torso joint frozen while the IMU drives the floating base.
    FloatingBaseTorso,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnmappedJoint {
    pub name: String,
    pub limb: String,
    pub home: f64,
    pub reason: HoldReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MountNote {
    pub leader_limb: String,
    pub follower_limb: String,
    pub leader_mount: MountId,
    pub follower_mount: MountId,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingReport {
    pub mapped: Vec<MappedPair>,
    /// Follower joints commanded to their home position.
    pub unmapped: Vec<UnmappedJoint>,
    /// Follower torso joints driven from the IMU.
    pub imu_driven: Vec<String>,
    pub notes: Vec<MountNote>,
}

impl MappingReport {
    /// Number of mapped pairs per follower limb, in follower limb order.
    pub fn mapped_per_limb(&self, follower: &DeviceConfig) -> Vec<(String, usize)> {
        follower
            .limbs
            .iter()
            .map(|l| {
                let n = self.mapped.iter().filter(|p| p.follower_limb == l.name).count();
                (l.name.clone(), n)
            })
            .collect()
    }
}

impl fmt::Display for MappingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut per_limb: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &self.mapped {
            *per_limb.entry(&p.follower_limb).or_default() += 1;
        }
        writeln!(f, "mapped pairs: {}", self.mapped.len())?;
        for (limb, n) in &per_limb {
            writeln!(f, "  {limb}: {n} mapped")?;
        }
        for p in &self.mapped {
            writeln!(
                f,
                "  {} -> {} (sign {:+}, offset {:.4}) follower limits [{:.4}, {:.4}]",
                p.leader, p.follower, p.sign, p.offset, p.follower_limits.0, p.follower_limits.1
            )?;
        }
        if !self.imu_driven.is_empty() {
            writeln!(f, "imu-driven torso joints: {}", self.imu_driven.join(", "))?;
        }
        writeln!(f, "unmapped (hold home): {}", self.unmapped.len())?;
        for u in &self.unmapped {
            writeln!(f, "  {} [{}] home {:.4} ({:?})", u.name, u.limb, u.home, u.reason)?;
        }
        for n in &self.notes {
            writeln!(f, "warning: {}", n.message)?;
        }
        Ok(())
    }
}

/// Check a leader/follower pair and describe how every follower joint is driven.
pub fn validate_mapping(
    leader: &DeviceConfig,
    follower: &DeviceConfig,
) -> Result<MappingReport, MappingError> {
    Ok(resolve(leader, follower)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ResolvedPair {
    pub leader: usize,
    pub follower: usize,
    pub sign: f64,
    pub offset: f64,
}

/// Per-side resolved indices used by the session and controllers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SideLayout {
    /// Index into the leader frame's gripper triggers.
    pub leader_gripper: Option<usize>,
    pub leader_arm_limb: Option<usize>,
    /// Flattened leader joint range of the arm.
    pub leader_arm_joints: Range<usize>,
    pub leader_leg_limb: Option<usize>,
    /// Flattened leader indices of hip roll, pitch and yaw.
    pub leader_hips: Option<[usize; 3]>,
    /// Follower joints driven from this side's leader arm.
    pub follower_arm_joints: Vec<usize>,
    /// Follower gripper driven from this side's leader gripper.
    pub follower_gripper: Option<usize>,
}

impl SideLayout {
    /// Whether this side can act as a joystick leg.
    pub fn joystick_capable(&self) -> bool {
        self.leader_hips.is_some() && self.leader_gripper.is_some()
    }
}

/// A validated leader/follower pairing with all names resolved to indices.
#[derive(Debug, Clone)]
pub struct Rig {
    pub leader: DeviceConfig,
    pub follower: DeviceConfig,
    pub mapping: MappingSpec,
    pub report: MappingReport,
    pub(crate) pairs: Vec<ResolvedPair>,
    /// Follower indices of the torso (yaw, roll, pitch) joints.
    pub(crate) torso: Option<[usize; 3]>,
    pub(crate) sides: [SideLayout; 2],
    /// For each follower gripper, the leader gripper driving it.
    pub(crate) gripper_sources: Vec<Option<usize>>,
}

impl Rig {
    pub fn new(leader: DeviceConfig, follower: DeviceConfig) -> Result<Self, MappingError> {
        let (report, parts) = resolve(&leader, &follower)?;
        let mapping = follower.mapping.clone().ok_or(MappingError::NoMapping)?;
        Ok(Rig {
            leader,
            follower,
            mapping,
            report,
            pairs: parts.pairs,
            torso: parts.torso,
            sides: parts.sides,
            gripper_sources: parts.gripper_sources,
        })
    }

    pub fn side(&self, side: Side) -> &SideLayout {
        &self.sides[side.index()]
    }

    pub fn leader_joint_count(&self) -> usize {
        self.leader.joint_count()
    }

    pub fn follower_joint_count(&self) -> usize {
        self.follower.joint_count()
    }

    pub fn leader_gripper_count(&self) -> usize {
        self.leader.gripper_count()
    }

    pub fn follower_gripper_count(&self) -> usize {
        self.follower.gripper_count()
    }

    pub fn torso_joints(&self) -> Option<[usize; 3]> {
        self.torso
    }

    pub fn gripper_sources(&self) -> &[Option<usize>] {
        &self.gripper_sources
    }
}

struct Parts {
    pairs: Vec<ResolvedPair>,
    torso: Option<[usize; 3]>,
    sides: [SideLayout; 2],
    gripper_sources: Vec<Option<usize>>,
}

fn resolve(
    leader: &DeviceConfig,
    follower: &DeviceConfig,
) -> Result<(MappingReport, Parts), MappingError> {
    if leader.role != Role::Leader {
        return Err(MappingError::WrongRole {
            expected: Role::Leader,
            found: leader.role,
        });
    }
    if follower.role != Role::Follower {
        return Err(MappingError::WrongRole {
            expected: Role::Follower,
            found: follower.role,
        });
    }
    let mapping = follower.mapping.as_ref().ok_or(MappingError::NoMapping)?;

    let mut by_leader: HashMap<&str, &str> = HashMap::new();
    let mut resolved = Vec::with_capacity(mapping.pairs.len());
    for pair in &mapping.pairs {
        let l = leader
            .joint_ref(&pair.leader)
            .ok_or_else(|| MappingError::UnknownLeaderJoint(pair.leader.clone()))?;
        let f = follower
            .joint_ref(&pair.follower)
            .ok_or_else(|| MappingError::UnknownFollowerJoint(pair.follower.clone()))?;
        if let Some(first) = by_leader.insert(&pair.leader, &pair.follower) {
            return Err(MappingError::DuplicateLeader {
                leader: pair.leader.clone(),
                first: first.to_string(),
                second: pair.follower.clone(),
            });
        }
        resolved.push((pair, l, f));
    }

    let torso = match &mapping.torso_joints {
        Some(names) => {
            let mut idx = [0usize; 3];
            for (slot, name) in idx.iter_mut().zip(names) {
                *slot = follower
                    .joint_ref(name)
                    .ok_or_else(|| MappingError::UnknownFollowerJoint(name.clone()))?
                    .index;
            }
            Some(idx)
        }
        None => None,
    };

    let joystick_legs = mapping.leg_mode == LegMode::Joystick;
    let mut report = MappingReport {
        mapped: Vec::new(),
        unmapped: Vec::new(),
        imu_driven: Vec::new(),
        notes: Vec::new(),
    };
    let mut pairs = Vec::new();
    let mut driven = vec![false; follower.joint_count()];
    let mut limb_links: BTreeMap<(usize, usize), usize> = BTreeMap::new();

    for (pair, l, f) in &resolved {
        let leader_limb = &leader.limbs[l.limb];
        let follower_limb = &follower.limbs[f.limb];
        if joystick_legs && leader_limb.kind == LimbKind::Leg {
            // leader legs are joysticks in this mode; the follower leg is left to
            // the walking controller and held at home here
            continue;
        }
        let lj = &leader_limb.joints[l.joint];
        let fj = &follower_limb.joints[f.joint];
        driven[f.index] = true;
        *limb_links.entry((l.limb, f.limb)).or_default() += 1;
        pairs.push(ResolvedPair {
            leader: l.index,
            follower: f.index,
            sign: pair.sign.value(),
            offset: pair.offset,
        });
        report.mapped.push(MappedPair {
            leader: pair.leader.clone(),
            follower: pair.follower.clone(),
            sign: pair.sign.value(),
            offset: pair.offset,
            leader_limb: leader_limb.name.clone(),
            follower_limb: follower_limb.name.clone(),
            leader_limits: (lj.position_min, lj.position_max),
            follower_limits: (fj.position_min, fj.position_max),
        });
    }

    let torso_set: Vec<usize> = torso.map(|t| t.to_vec()).unwrap_or_default();
    let offsets = follower.limb_offsets();
    for (li, limb) in follower.limbs.iter().enumerate() {
        for (ji, joint) in limb.joints.iter().enumerate() {
            let index = offsets[li] + ji;
            if driven[index] {
                continue;
            }
            let is_torso = torso_set.contains(&index);
            let reason = match (is_torso, mapping.imu_mode) {
                (true, ImuMode::TorsoJoints) => {
                    report.imu_driven.push(joint.name.clone());
                    continue;
                }
                (true, ImuMode::FloatingBase) => HoldReason::FloatingBaseTorso,
                _ if joystick_legs && limb.kind == LimbKind::Leg => HoldReason::JoystickLeg,
                _ => HoldReason::Unmapped,
            };
            report.unmapped.push(UnmappedJoint {
                name: joint.name.clone(),
                limb: limb.name.clone(),
                home: joint.home_position,
                reason,
            });
        }
    }

    for &(ll, fl) in limb_links.keys() {
        if let Some(note) = mount_note(leader, follower, ll, fl) {
            report.notes.push(note);
        }
    }

    // dominant leader limb for each follower limb
    let mut source_limb: HashMap<usize, (usize, usize)> = HashMap::new();
    for (&(ll, fl), &n) in &limb_links {
        let entry = source_limb.entry(fl).or_insert((ll, n));
        if n > entry.1 {
            *entry = (ll, n);
        }
    }

    let leader_grippers = leader.gripper_limbs();
    let leader_gripper_of = |limb: usize| leader_grippers.iter().position(|&g| g == limb);
    let leader_offsets = leader.limb_offsets();

    let mut sides: [SideLayout; 2] = Default::default();
    for side in Side::BOTH {
        let layout = &mut sides[side.index()];
        if let Some(arm) = leader
            .limbs
            .iter()
            .position(|l| l.kind == LimbKind::Arm && l.mount.side() == Some(side))
        {
            layout.leader_arm_limb = Some(arm);
            layout.leader_gripper = leader_gripper_of(arm);
            let start = leader_offsets[arm];
            layout.leader_arm_joints = start..start + leader.limbs[arm].joints.len();
            layout.follower_arm_joints = pairs
                .iter()
                .filter(|p| layout.leader_arm_joints.contains(&p.leader))
                .map(|p| p.follower)
                .collect();
        }
        if let Some(leg) = leader
            .limbs
            .iter()
            .position(|l| l.kind == LimbKind::Leg && l.mount.side() == Some(side))
        {
            layout.leader_leg_limb = Some(leg);
            layout.leader_hips = leader.limbs[leg]
                .hip_indices()
                .map(|h| h.map(|i| leader_offsets[leg] + i));
        }
    }

    let follower_grippers = follower.gripper_limbs();
    let mut gripper_sources = Vec::with_capacity(follower_grippers.len());
    for (gi, &fl) in follower_grippers.iter().enumerate() {
        let mut source = source_limb.get(&fl).and_then(|&(ll, _)| leader_gripper_of(ll));
        if source.is_none() {
            if let Some(side) = follower.limbs[fl].mount.side() {
                source = sides[side.index()].leader_gripper;
            }
        }
        if let Some(src) = source {
            for layout in sides.iter_mut() {
                if layout.leader_gripper == Some(src) {
                    layout.follower_gripper = Some(gi);
                }
            }
        }
        gripper_sources.push(source);
    }

    Ok((
        report,
        Parts {
            pairs,
            torso,
            sides,
            gripper_sources,
        },
    ))
}

fn mount_note(
    leader: &DeviceConfig,
    follower: &DeviceConfig,
    ll: usize,
    fl: usize,
) -> Option<MountNote> {
    let l = &leader.limbs[ll];
    let f = &follower.limbs[fl];
    if l.mount == f.mount {
        return None;
    }
    let message = if l.mount.is_arm() && f.mount.is_arm() && l.mount.side() == f.mount.side() {
        format!(
            "approximation: leader limb `{}` on {} stands in for follower limb `{}` on {} (closest matching mount)",
            l.name, l.mount, f.name, f.mount
        )
    } else {
        format!(
            "mount mismatch: leader limb `{}` on {} drives follower limb `{}` on {}",
            l.name, l.mount, f.name, f.mount
        )
    };
    Some(MountNote {
        leader_limb: l.name.clone(),
        follower_limb: f.name.clone(),
        leader_mount: l.mount,
        follower_mount: f.mount,
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, JointPair, JointSpec, LimbSpec, Sign};

    fn arm(name: &str, mount: MountId, prefix: &str, n: usize) -> LimbSpec {
        LimbSpec {
            name: name.into(),
            kind: LimbKind::Arm,
            mount,
            joints: (0..n)
                .map(|i| JointSpec {
                    name: format!("{prefix}{i}"),
                    position_min: -2.0,
                    position_max: 2.0,
                    velocity_max: 3.0,
                    home_position: 0.0,
                })
                .collect(),
            gripper: true,
            hip: None,
        }
    }

    fn device(role: Role, limbs: Vec<LimbSpec>, pairs: Option<Vec<JointPair>>) -> DeviceConfig {
        DeviceConfig {
            role,
            limbs,
            mapping: pairs.map(|pairs| MappingSpec {
                pairs,
                ..MappingSpec::default()
            }),
            gains: Default::default(),
            locomotion: Default::default(),
            session: Default::default(),
        }
    }

    fn pair(l: &str, f: &str) -> JointPair {
        JointPair {
            leader: l.into(),
            follower: f.into(),
            sign: Sign::Plus,
            offset: 0.0,
        }
    }

    #[test]
    fn full_bijection_seven_joints() {
        let leader = device(Role::Leader, vec![arm("l", MountId::ArmFlatLeft, "la", 7)], None);
        let pairs = (0..7).map(|i| pair(&format!("la{i}"), &format!("fa{i}"))).collect();
        let follower = device(
            Role::Follower,
            vec![arm("f", MountId::ArmFlatLeft, "fa", 7)],
            Some(pairs),
        );
        let report = validate_mapping(&leader, &follower).unwrap();
        assert_eq!(report.mapped.len(), 7);
        assert!(report.unmapped.is_empty());
        assert!(report.notes.is_empty());
    }

    #[test]
    fn dangling_follower_joint_named() {
        let leader = device(Role::Leader, vec![arm("l", MountId::ArmFlatLeft, "elbow_", 2)], None);
        let follower = device(
            Role::Follower,
            vec![arm("f", MountId::ArmFlatLeft, "fe", 2)],
            Some(vec![pair("elbow_0", "fe0"), pair("elbow_1", "elbow_2")]),
        );
        let err = validate_mapping(&leader, &follower).unwrap_err();
        assert_eq!(err, MappingError::UnknownFollowerJoint("elbow_2".into()));
        assert!(err.to_string().contains("elbow_2"));
    }

    #[test]
    fn leader_mapped_twice() {
        let leader = device(Role::Leader, vec![arm("l", MountId::ArmFlatLeft, "a", 1)], None);
        let follower = device(
            Role::Follower,
            vec![arm("f", MountId::ArmFlatLeft, "b", 2)],
            Some(vec![pair("a0", "b0"), pair("a0", "b1")]),
        );
        assert!(matches!(
            validate_mapping(&leader, &follower),
            Err(MappingError::DuplicateLeader { .. })
        ));
    }

    #[test]
    fn flat_to_inclined_is_a_note() {
        let leader = device(Role::Leader, vec![arm("l", MountId::ArmFlatLeft, "a", 2)], None);
        let follower = device(
            Role::Follower,
            vec![arm("f", MountId::ArmInclinedLeft, "b", 2)],
            Some(vec![pair("a0", "b0"), pair("a1", "b1")]),
        );
        let report = validate_mapping(&leader, &follower).unwrap();
        assert_eq!(report.notes.len(), 1);
        assert!(report.notes[0].message.starts_with("approximation"));
    }

    #[test]
    fn unmapped_follower_joints_listed() {
        let leader = device(Role::Leader, vec![arm("l", MountId::ArmFlatLeft, "a", 2)], None);
        let follower = device(
            Role::Follower,
            vec![arm("f", MountId::ArmFlatLeft, "b", 3)],
            Some(vec![pair("a0", "b0")]),
        );
        let report = validate_mapping(&leader, &follower).unwrap();
        let names: Vec<_> = report.unmapped.iter().map(|u| u.name.as_str()).collect();
        assert_eq!(names, ["b1", "b2"]);
        assert!(report.unmapped.iter().all(|u| u.reason == HoldReason::Unmapped));
    }

    #[test]
    fn roles_checked() {
        let a = device(Role::Leader, vec![arm("l", MountId::ArmFlatLeft, "a", 1)], None);
        assert!(matches!(
            validate_mapping(&a, &a),
            Err(MappingError::WrongRole { .. })
        ));
        let f = device(Role::Follower, vec![arm("f", MountId::ArmFlatLeft, "b", 1)], None);
        assert_eq!(validate_mapping(&a, &f), Err(MappingError::NoMapping));
    }

    #[test]
    fn g1_full_body_neglects_ankles() {
        let leader = parse_config(include_str!("../../../../configs/g1_leader.toml")).unwrap();
        let follower =
            parse_config(include_str!("../../../../configs/g1_follower_full_body.toml")).unwrap();
        let report = validate_mapping(&leader, &follower).unwrap();
        let ankles: Vec<_> = report
            .unmapped
            .iter()
            .filter(|u| u.name.contains("ankle"))
            .collect();
        assert_eq!(ankles.len(), 4);
        assert!(ankles.iter().all(|u| u.reason == HoldReason::Unmapped));
        let rig = Rig::new(leader, follower).unwrap();
        assert!(rig.side(Side::Left).leader_hips.is_some());
        assert_eq!(rig.side(Side::Left).follower_arm_joints.len(), 7);
    }

    #[test]
    fn g1_loco_rig_layout() {
        let leader = parse_config(include_str!("../../../../configs/g1_leader.toml")).unwrap();
        let follower = parse_config(include_str!("../../../../configs/g1_follower.toml")).unwrap();
        let rig = Rig::new(leader, follower).unwrap();
        for side in Side::BOTH {
            let layout = rig.side(side);
            assert!(layout.joystick_capable());
            assert_eq!(layout.follower_arm_joints.len(), 7);
            assert!(layout.follower_gripper.is_some());
        }
        assert_eq!(rig.gripper_sources(), &[Some(0), Some(1)]);
        let per_limb = rig.report.mapped_per_limb(&rig.follower);
        assert!(per_limb.iter().any(|(l, n)| l == "left_arm" && *n == 7));
        assert!(per_limb.iter().any(|(l, n)| l == "right_arm" && *n == 7));
        assert_eq!(rig.report.imu_driven.len(), 3);
    }
}
