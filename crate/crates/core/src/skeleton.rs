//! Canonical 21-joint skeleton, pose vectors and retargeting of BVH clips.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

use crate::bvh::{BvhClip, BvhError};
use crate::geom::{Mat3, Vec3};

pub const JOINT_COUNT: usize = 21;
pub const BONE_COUNT: usize = JOINT_COUNT - 1;
pub const POSE_DIM: usize = JOINT_COUNT * 3;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "Hips",
    "Spine",
    "Spine1",
    "Neck",
    "Head",
    "LeftShoulder",
    "LeftArm",
    "LeftForeArm",
    "LeftHand",
    "RightShoulder",
    "RightArm",
    "RightForeArm",
    "RightHand",
    "LeftUpLeg",
    "LeftLeg",
    "LeftFoot",
    "LeftToeBase",
    "RightUpLeg",
    "RightLeg",
    "RightFoot",
    "RightToeBase",
];

const PARENTS: [i32; JOINT_COUNT] = [
    -1, 0, 1, 2, 3, // trunk and head
    2, 5, 6, 7, // left arm
    2, 9, 10, 11, // right arm
    0, 13, 14, 15, // left leg
    0, 17, 18, 19, // right leg
];

/// Rest pose in meters: Y up, character facing +Z, left side on +X.
const REFERENCE_POSE: [[f32; 3]; JOINT_COUNT] = [
    [0.0, 0.95, 0.0],
    [0.0, 1.05, 0.0],
    [0.0, 1.25, 0.0],
    [0.0, 1.50, 0.0],
    [0.0, 1.65, 0.0],
    [0.15, 1.45, 0.0],
    [0.30, 1.45, 0.0],
    [0.58, 1.45, 0.0],
    [0.83, 1.45, 0.0],
    [-0.15, 1.45, 0.0],
    [-0.30, 1.45, 0.0],
    [-0.58, 1.45, 0.0],
    [-0.83, 1.45, 0.0],
    [0.10, 0.90, 0.0],
    [0.10, 0.48, 0.0],
    [0.10, 0.08, 0.0],
    [0.10, 0.02, 0.14],
    [-0.10, 0.90, 0.0],
    [-0.10, 0.48, 0.0],
    [-0.10, 0.08, 0.0],
    [-0.10, 0.02, 0.14],
];

/// Canonical joint indices used throughout the crate.
pub mod joint {
    pub const HIPS: usize = 0;
    pub const SPINE: usize = 1;
    pub const SPINE1: usize = 2;
    pub const NECK: usize = 3;
    pub const HEAD: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const LEFT_HAND: usize = 8;
    pub const RIGHT_SHOULDER: usize = 9;
    pub const RIGHT_HAND: usize = 12;
    pub const LEFT_UP_LEG: usize = 13;
    pub const LEFT_FOOT: usize = 15;
    pub const LEFT_TOE: usize = 16;
    pub const RIGHT_UP_LEG: usize = 17;
    pub const RIGHT_FOOT: usize = 19;
    pub const RIGHT_TOE: usize = 20;
}

#[derive(Debug, Error, PartialEq)]
pub enum SkeletonError {
    #[error("pose must have {POSE_DIM} values, got {0}")]
    WrongLength(usize),
    #[error("pose contains non-finite values")]
    NonFinite,
    #[error("mapping is missing canonical joints: {}", .0.join(", "))]
    MissingMapping(Vec<String>),
    #[error("mapped source joint `{0}` not found in clip")]
    SourceJointNotFound(String),
    #[error("unknown canonical joint `{0}` in mapping")]
    UnknownCanonicalJoint(String),
    #[error("mapping line {line}: {message}")]
    MappingSyntax { line: usize, message: String },
    #[error(transparent)]
    Bvh(#[from] BvhError),
}

/// Immutable description of the canonical skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    pub joint_names: Vec<String>,
    /// Parent index per joint, `-1` for the root.
    pub parent: Vec<i32>,
    pub reference_pose: Pose,
    pub reference_bone_lengths: [f64; BONE_COUNT],
}

impl SkeletonTopology {
    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        usize::try_from(self.parent[joint]).ok()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// `(child, parent)` pairs in canonical edge order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (1..JOINT_COUNT).map(|c| (c, self.parent[c] as usize))
    }
}

/// Returns the shared canonical topology.
pub fn canonical_topology() -> &'static SkeletonTopology {
    static TOPO: OnceLock<SkeletonTopology> = OnceLock::new();
    TOPO.get_or_init(|| {
        let reference_pose = Pose::from_joints(&REFERENCE_POSE);
        let mut topo = SkeletonTopology {
            joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
            parent: PARENTS.to_vec(),
            reference_pose,
            reference_bone_lengths: [0.0; BONE_COUNT],
        };
        topo.reference_bone_lengths = bone_lengths(&topo.reference_pose, &topo);
        topo
    })
}

/// 63 root-relative joint coordinates in canonical joint order, meters.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose(pub [f32; POSE_DIM]);

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.chunks(3)).finish()
    }
}

impl Pose {
    pub fn from_slice(values: &[f32]) -> Result<Self, SkeletonError> {
        let arr: [f32; POSE_DIM] = values
            .try_into()
            .map_err(|_| SkeletonError::WrongLength(values.len()))?;
        if arr.iter().any(|v| !v.is_finite()) {
            return Err(SkeletonError::NonFinite);
        }
        Ok(Self(arr))
    }

    pub fn from_joints(joints: &[[f32; 3]; JOINT_COUNT]) -> Self {
        let mut out = [0.0; POSE_DIM];
        for (dst, src) in out.chunks_exact_mut(3).zip(joints) {
            dst.copy_from_slice(src);
        }
        Self(out)
    }

    pub fn from_positions(positions: &[Vec3]) -> Self {
        let mut out = [0.0; POSE_DIM];
        for (dst, p) in out.chunks_exact_mut(3).zip(positions) {
            dst.copy_from_slice(&p.to_f32());
        }
        Self(out)
    }

    #[inline]
    pub fn joint(&self, i: usize) -> Vec3 {
        Vec3::new(
            self.0[3 * i] as f64,
            self.0[3 * i + 1] as f64,
            self.0[3 * i + 2] as f64,
        )
    }

    #[inline]
    pub fn set_joint(&mut self, i: usize, p: Vec3) {
        self.0[3 * i..3 * i + 3].copy_from_slice(&p.to_f32());
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..JOINT_COUNT).map(|i| self.joint(i)).collect()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Mean Euclidean distance between corresponding joints.
    pub fn mean_joint_distance(&self, other: &Pose) -> f64 {
        (0..JOINT_COUNT)
            .map(|i| self.joint(i).distance(other.joint(i)))
            .sum::<f64>()
            / JOINT_COUNT as f64
    }
}

/// Euclidean length of each bone, in canonical edge order.
pub fn bone_lengths(pose: &Pose, topo: &SkeletonTopology) -> [f64; BONE_COUNT] {
    let mut out = [0.0; BONE_COUNT];
    for (k, (child, parent)) in topo.edges().enumerate() {
        out[k] = pose.joint(child).distance(pose.joint(parent));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpAxis {
    #[default]
    Y,
    Z,
}

impl FromStr for UpAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "Y" | "y" => Ok(Self::Y),
            "Z" | "z" => Ok(Self::Z),
            other => Err(format!("up axis must be Y or Z, got `{other}`")),
        }
    }
}

/// Expresses world positions relative to the pelvis projected on the floor.
///
/// Only the horizontal (X, Z) components of the hips are subtracted, so the
/// vertical coordinate of every joint is preserved. Positions are expected
/// Y-up; `UpAxis::Z` input is rotated to Y-up first.
pub fn to_root_relative(world: &[Vec3], up_axis: UpAxis) -> Result<Pose, SkeletonError> {
    if world.len() != JOINT_COUNT {
        return Err(SkeletonError::WrongLength(world.len() * 3));
    }
    if world.iter().any(|p| !p.is_finite()) {
        return Err(SkeletonError::NonFinite);
    }
    let rotated: Vec<Vec3> = match up_axis {
        UpAxis::Y => world.to_vec(),
        UpAxis::Z => world.iter().map(|p| Vec3::new(p.x, p.z, -p.y)).collect(),
    };
    let hips = rotated[joint::HIPS];
    let floor = Vec3::new(hips.x, 0.0, hips.z);
    let rel: Vec<Vec3> = rotated.iter().map(|&p| p - floor).collect();
    let pose = Pose::from_positions(&rel);
    if !pose.is_finite() {
        return Err(SkeletonError::NonFinite);
    }
    Ok(pose)
}

/// Rotates a pose about the vertical axis so the character faces +Z.
///
/// Facing is derived from the hip line (right hip to left hip) crossed with up.
pub fn remove_heading(pose: &Pose) -> Pose {
    let hip_line = pose.joint(joint::LEFT_UP_LEG) - pose.joint(joint::RIGHT_UP_LEG);
    let facing = hip_line.cross(Vec3::new(0.0, 1.0, 0.0));
    if facing.x.hypot(facing.z) < 1e-9 {
        return *pose;
    }
    let heading = facing.x.atan2(facing.z).to_degrees();
    let rot = Mat3::rot_y(-heading);
    let positions: Vec<Vec3> = pose
        .positions()
        .into_iter()
        .map(|p| rot.transform(p))
        .collect();
    Pose::from_positions(&positions)
}

/// Canonical-to-source joint name table plus per-source unit handling.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMapping {
    /// Canonical joint name -> source joint name.
    pub source_names: HashMap<String, String>,
    pub unit_scale: f64,
    pub up_axis: UpAxis,
}

impl JointMapping {
    /// Maps every canonical joint to a source joint of the same name.
    pub fn identity() -> Self {
        Self {
            source_names: JOINT_NAMES
                .iter()
                .map(|n| (n.to_string(), n.to_string()))
                .collect(),
            unit_scale: 1.0,
            up_axis: UpAxis::Y,
        }
    }

    /// Parses the `canonical_name = source_name` mapping format.
    ///
    /// Blank lines and lines starting with `#` are ignored. The reserved keys
    /// `unit_scale` and `up_axis` configure scaling and orientation.
    pub fn parse(text: &str) -> Result<Self, SkeletonError> {
        let mut mapping = Self {
            source_names: HashMap::new(),
            unit_scale: 1.0,
            up_axis: UpAxis::Y,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: String| SkeletonError::MappingSyntax {
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "unit_scale" => {
                    let scale: f64 = value
                        .parse()
                        .map_err(|_| syntax(format!("invalid unit_scale `{value}`")))?;
                    if !(scale > 0.0 && scale.is_finite()) {
                        return Err(syntax("unit_scale must be positive".into()));
                    }
                    mapping.unit_scale = scale;
                }
                "up_axis" => mapping.up_axis = value.parse().map_err(syntax)?,
                _ => {
                    if !JOINT_NAMES.contains(&key) {
                        return Err(SkeletonError::UnknownCanonicalJoint(key.to_string()));
                    }
                    if value.is_empty() {
                        return Err(syntax(format!("empty source name for `{key}`")));
                    }
                    mapping
                        .source_names
                        .insert(key.to_string(), value.to_string());
                }
            }
        }
        Ok(mapping)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RetargetOptions {
    /// Rotate every pose to face +Z. Off by default: heading is kept.
    pub remove_heading: bool,
}

/// A clip re-expressed on the canonical skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalClip {
    pub poses: Vec<Pose>,
    pub source_id: String,
    pub frame_time: f64,
}

/// Retargets a parsed clip onto the canonical skeleton by joint-name mapping.
pub fn retarget(
    clip: &BvhClip,
    mapping: &JointMapping,
    source_id: &str,
    options: RetargetOptions,
) -> Result<CanonicalClip, SkeletonError> {
    let missing: Vec<String> = JOINT_NAMES
        .iter()
        .filter(|n| !mapping.source_names.contains_key(**n))
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(SkeletonError::MissingMapping(missing));
    }
    let mut source_index = [0usize; JOINT_COUNT];
    for (slot, name) in source_index.iter_mut().zip(JOINT_NAMES) {
        let src = &mapping.source_names[name];
        *slot = clip
            .joints
            .iter()
            .position(|j| !j.end_site && &j.name == src)
            .ok_or_else(|| SkeletonError::SourceJointNotFound(src.clone()))?;
    }

    let mut poses = Vec::with_capacity(clip.frame_count());
    for frame in 0..clip.frame_count() {
        let world = clip.forward_kinematics(frame)?;
        let mapped: Vec<Vec3> = source_index
            .iter()
            .map(|&s| world[s] * mapping.unit_scale)
            .collect();
        let pose = to_root_relative(&mapped, mapping.up_axis)?;
        poses.push(if options.remove_heading {
            remove_heading(&pose)
        } else {
            pose
        });
    }
    Ok(CanonicalClip {
        poses,
        source_id: source_id.to_string(),
        frame_time: clip.frame_time,
    })
}
