//! FABRIK inverse kinematics and the bone-length restoring backward pass.
//!
//! All arithmetic is done in `f64`; poses are rounded back to `f32` only on
//! output.

use thiserror::Error;

use crate::geom::Vec3;
use crate::skeleton::{joint, Pose, SkeletonTopology, BONE_COUNT, JOINT_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum FabrikError {
    #[error("a chain needs at least two joints, got {0}")]
    TooShort(usize),
    #[error("segment {0} has non-positive or non-finite length")]
    BadSegment(usize),
    #[error("{joints} joints need {expected} segment lengths, got {found}")]
    LengthCount {
        joints: usize,
        expected: usize,
        found: usize,
    },
    #[error("joint {0} is not an end effector of the full-body solver")]
    UnsupportedJoint(usize),
    #[error("joint {0} has more than one target")]
    DuplicateTarget(usize),
    #[error("target for joint {0} is not finite")]
    NonFiniteTarget(usize),
    #[error("tolerance must be positive and max_iterations at least 1")]
    BadConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FabrikConfig {
    /// End-effector distance (meters) at which iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FabrikConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 20,
        }
    }
}

impl FabrikConfig {
    fn validate(&self) -> Result<(), FabrikError> {
        if self.tolerance > 0.0 && self.max_iterations >= 1 {
            Ok(())
        } else {
            Err(FabrikError::BadConfig)
        }
    }
}

/// Joint positions from base to end effector with fixed segment lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub joints: Vec<Vec3>,
    pub lengths: Vec<f64>,
}

impl KinematicChain {
    /// Chain whose segment lengths are the current inter-joint distances.
    pub fn new(joints: Vec<Vec3>) -> Result<Self, FabrikError> {
        let lengths = joints.windows(2).map(|w| w[0].distance(w[1])).collect();
        Self::with_lengths(joints, lengths)
    }

    pub fn with_lengths(joints: Vec<Vec3>, lengths: Vec<f64>) -> Result<Self, FabrikError> {
        if joints.len() < 2 {
            return Err(FabrikError::TooShort(joints.len()));
        }
        if lengths.len() != joints.len() - 1 {
            return Err(FabrikError::LengthCount {
                joints: joints.len(),
                expected: joints.len() - 1,
                found: lengths.len(),
            });
        }
        if let Some(i) = lengths.iter().position(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(FabrikError::BadSegment(i));
        }
        Ok(Self { joints, lengths })
    }

    pub fn base(&self) -> Vec3 {
        self.joints[0]
    }

    pub fn end_effector(&self) -> Vec3 {
        *self.joints.last().expect("chain has at least two joints")
    }

    pub fn reach(&self) -> f64 {
        self.lengths.iter().sum()
    }

    /// Largest absolute difference between current and nominal segment lengths.
    pub fn length_drift(&self) -> f64 {
        self.joints
            .windows(2)
            .zip(&self.lengths)
            .map(|(w, l)| (w[0].distance(w[1]) - l).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSolution {
    pub chain: KinematicChain,
    pub iterations: usize,
    /// Whether the target was within reach.
    pub reachable: bool,
}

/// Places `child` at distance `len` from `anchor` along the anchor→child
/// direction, or along `fallback` when the two coincide.
#[inline]
fn place(anchor: Vec3, child: Vec3, len: f64, fallback: Vec3) -> Vec3 {
    let dir = (child - anchor)
        .try_normalize()
        .or_else(|| fallback.try_normalize())
        .unwrap_or(Vec3::new(0.0, 1.0, 0.0));
    anchor + dir * len
}

fn forward_reach(joints: &mut [Vec3], lengths: &[f64], target: Vec3) {
    let n = joints.len();
    joints[n - 1] = target;
    for i in (0..n - 1).rev() {
        let fallback = joints[i] - joints[i + 1];
        joints[i] = place(joints[i + 1], joints[i], lengths[i], fallback);
    }
}

fn backward_reach(joints: &mut [Vec3], lengths: &[f64], base: Vec3) {
    joints[0] = base;
    for i in 0..joints.len() - 1 {
        let fallback = joints[i + 1] - joints[i];
        joints[i + 1] = place(joints[i], joints[i + 1], lengths[i], fallback);
    }
}

/// Solves a single chain toward `target` with the base held fixed.
///
/// An unreachable target stretches the chain straight toward it.
pub fn fabrik_solve_chain(
    chain: &KinematicChain,
    target: Vec3,
    config: &FabrikConfig,
) -> Result<ChainSolution, FabrikError> {
    config.validate()?;
    let mut out = chain.clone();
    let base = chain.base();
    if base.distance(target) > chain.reach() {
        let dir = (target - base)
            .try_normalize()
            .expect("distance exceeds a positive reach");
        let mut p = base;
        for (i, len) in chain.lengths.iter().enumerate() {
            p = p + dir * *len;
            out.joints[i + 1] = p;
        }
        return Ok(ChainSolution {
            chain: out,
            iterations: 1,
            reachable: false,
        });
    }
    let mut iterations = 0;
    while out.end_effector().distance(target) > config.tolerance
        && iterations < config.max_iterations
    {
        forward_reach(&mut out.joints, &chain.lengths, target);
        backward_reach(&mut out.joints, &chain.lengths, base);
        iterations += 1;
    }
    Ok(ChainSolution {
        chain: out,
        iterations,
        reachable: true,
    })
}

/// Joint indices from Spine1 to each upper-body effector.
const UPPER_BRANCHES: [&[usize]; 3] = [
    &[joint::SPINE1, joint::NECK, joint::HEAD],
    &[joint::SPINE1, joint::LEFT_SHOULDER, 6, 7, joint::LEFT_HAND],
    &[
        joint::SPINE1,
        joint::RIGHT_SHOULDER,
        10,
        11,
        joint::RIGHT_HAND,
    ],
];
const TRUNK: [usize; 3] = [joint::HIPS, joint::SPINE, joint::SPINE1];
/// Hip to foot; the toe rides along with its foot.
const LEGS: [(&[usize], usize); 2] = [
    (
        &[joint::HIPS, joint::LEFT_UP_LEG, 14, joint::LEFT_FOOT],
        joint::LEFT_TOE,
    ),
    (
        &[joint::HIPS, joint::RIGHT_UP_LEG, 18, joint::RIGHT_FOOT],
        joint::RIGHT_TOE,
    ),
];

/// Joints that may carry a full-body target.
pub const FULLBODY_EFFECTORS: [usize; 5] = [
    joint::HEAD,
    joint::LEFT_HAND,
    joint::RIGHT_HAND,
    joint::LEFT_FOOT,
    joint::RIGHT_FOOT,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullBodySolution {
    pub pose: Pose,
    pub iterations: usize,
    /// Largest remaining effector-to-target distance.
    pub max_error: f64,
}

struct Branch<'a> {
    path: &'a [usize],
    lengths: [f64; 5],
    target: Option<Vec3>,
}

fn branch_lengths(p: &[Vec3; JOINT_COUNT], path: &[usize]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (k, w) in path.windows(2).enumerate() {
        out[k] = p[w[0]].distance(p[w[1]]);
    }
    out
}

fn gather(p: &[Vec3; JOINT_COUNT], path: &[usize], buf: &mut [Vec3; 5]) {
    for (k, &j) in path.iter().enumerate() {
        buf[k] = p[j];
    }
}

fn scatter(p: &mut [Vec3; JOINT_COUNT], path: &[usize], buf: &[Vec3; 5]) {
    for (k, &j) in path.iter().enumerate() {
        p[j] = buf[k];
    }
}

/// Multi-effector FABRIK over the canonical skeleton.
///
/// The body is split into a trunk (Hips→Spine→Spine1), three branches from
/// Spine1 (head, each arm) and two legs from the hips. In the forward stage
/// each targeted branch proposes a Spine1 position and the sub-base takes their
/// centroid; the backward stage then runs root outward with the hips fixed.
/// Branches without a target move rigidly with their sub-base.
pub fn fabrik_solve_fullbody(
    pose: &Pose,
    targets: &[(usize, Vec3)],
    config: &FabrikConfig,
) -> Result<FullBodySolution, FabrikError> {
    config.validate()?;
    let mut slot: [Option<Vec3>; JOINT_COUNT] = [None; JOINT_COUNT];
    for &(j, t) in targets {
        if !FULLBODY_EFFECTORS.contains(&j) {
            return Err(FabrikError::UnsupportedJoint(j));
        }
        if !t.is_finite() {
            return Err(FabrikError::NonFiniteTarget(j));
        }
        if slot[j].replace(t).is_some() {
            return Err(FabrikError::DuplicateTarget(j));
        }
    }

    let mut p: [Vec3; JOINT_COUNT] = std::array::from_fn(|i| pose.joint(i));
    let hips = p[joint::HIPS];
    let trunk_len = branch_lengths(&p, &TRUNK);
    let branches: Vec<Branch> = UPPER_BRANCHES
        .iter()
        .map(|path| Branch {
            path,
            lengths: branch_lengths(&p, path),
            target: slot[*path.last().unwrap()],
        })
        .collect();
    let legs: Vec<Branch> = LEGS
        .iter()
        .map(|(path, _)| Branch {
            path,
            lengths: branch_lengths(&p, path),
            target: slot[*path.last().unwrap()],
        })
        .collect();
    let upper_targeted = branches.iter().any(|b| b.target.is_some());

    let max_error = |p: &[Vec3; JOINT_COUNT]| {
        targets
            .iter()
            .map(|&(j, t)| p[j].distance(t))
            .fold(0.0, f64::max)
    };

    let mut buf = [Vec3::default(); 5];
    let mut iterations = 0;
    while max_error(&p) > config.tolerance && iterations < config.max_iterations {
        // Forward stage: effectors toward the sub-bases.
        let start_spine1 = p[joint::SPINE1];
        if upper_targeted {
            let mut centroid = Vec3::default();
            let mut count = 0.0;
            for b in branches.iter().filter(|b| b.target.is_some()) {
                let n = b.path.len();
                gather(&p, b.path, &mut buf);
                forward_reach(&mut buf[..n], &b.lengths[..n - 1], b.target.unwrap());
                for k in 1..n {
                    p[b.path[k]] = buf[k];
                }
                centroid += buf[0];
                count += 1.0;
            }
            let sub_base = centroid / count;
            gather(&p, &TRUNK, &mut buf);
            forward_reach(&mut buf[..3], &trunk_len[..2], sub_base);
            p[joint::SPINE] = buf[1];
            p[joint::SPINE1] = sub_base;
        }
        for leg in legs.iter().filter(|l| l.target.is_some()) {
            let n = leg.path.len();
            gather(&p, leg.path, &mut buf);
            forward_reach(&mut buf[..n], &leg.lengths[..n - 1], leg.target.unwrap());
            p[leg.path[1]] = buf[1];
            p[leg.path[2]] = buf[2];
        }

        // Backward stage: hips fixed, outward to the effectors.
        if upper_targeted {
            gather(&p, &TRUNK, &mut buf);
            backward_reach(&mut buf[..3], &trunk_len[..2], hips);
            p[joint::SPINE] = buf[1];
            p[joint::SPINE1] = buf[2];
            let shift = p[joint::SPINE1] - start_spine1;
            for b in &branches {
                let n = b.path.len();
                if b.target.is_some() {
                    gather(&p, b.path, &mut buf);
                    backward_reach(&mut buf[..n], &b.lengths[..n - 1], p[joint::SPINE1]);
                    scatter(&mut p, b.path, &buf);
                } else {
                    for &j in &b.path[1..] {
                        p[j] += shift;
                    }
                }
            }
        }
        for (leg, (_, toe)) in legs.iter().zip(LEGS) {
            if leg.target.is_none() {
                continue;
            }
            let n = leg.path.len();
            let foot = leg.path[n - 1];
            let old_foot = p[foot];
            gather(&p, leg.path, &mut buf);
            backward_reach(&mut buf[..n], &leg.lengths[..n - 1], hips);
            scatter(&mut p, leg.path, &buf);
            p[toe] += p[foot] - old_foot;
        }
        iterations += 1;
    }
    Ok(FullBodySolution {
        pose: Pose::from_positions(&p),
        iterations,
        max_error: max_error(&p),
    })
}

/// Restores bone lengths with one root-outward FABRIK backward pass.
///
/// Each joint is placed at `reference_lengths` from its already placed parent,
/// along the direction to its generated position. Coincident joints fall back
/// to the reference pose's bone direction.
pub fn bone_length_postprocess(
    generated: &Pose,
    reference_lengths: &[f64; BONE_COUNT],
    topo: &SkeletonTopology,
) -> Pose {
    let mut placed = [Vec3::default(); JOINT_COUNT];
    placed[0] = generated.joint(0);
    for (k, (child, parent)) in topo.edges().enumerate() {
        let fallback = topo.reference_pose.joint(child) - topo.reference_pose.joint(parent);
        placed[child] = place(
            placed[parent],
            generated.joint(child),
            reference_lengths[k],
            fallback,
        );
    }
    Pose::from_positions(&placed)
}
