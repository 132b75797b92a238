//! Procedural motion clips in the CMU BVH layout.
//!
//! The generator writes BVH text with the CMU joint naming and channel layout
//! (root `Xposition Yposition Zposition Zrotation Yrotation Xrotation`, other
//! joints `Zrotation Yrotation Xrotation`) in CMU file units, so clips go
//! through exactly the same parse/retarget path as downloaded CMU files.
//! Motions are built from coupled joint-angle oscillators per action type.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Meters per CMU file unit.
pub const CMU_UNIT_SCALE: f64 = 0.056444;

/// Mapping from the canonical skeleton onto CMU joint names.
pub const CMU_MAPPING: &str = "\
# canonical = CMU source joint
unit_scale = 0.056444
up_axis = Y
Hips = Hips
Spine = Spine
Spine1 = Spine1
Neck = Neck
Head = Head
LeftShoulder = LeftShoulder
LeftArm = LeftArm
LeftForeArm = LeftForeArm
LeftHand = LeftHand
RightShoulder = RightShoulder
RightArm = RightArm
RightForeArm = RightForeArm
RightHand = RightHand
LeftUpLeg = LeftUpLeg
LeftLeg = LeftLeg
LeftFoot = LeftFoot
LeftToeBase = LeftToeBase
RightUpLeg = RightUpLeg
RightLeg = RightLeg
RightFoot = RightFoot
RightToeBase = RightToeBase
";

struct SynJoint {
    name: &'static str,
    parent: Option<usize>,
    /// Offset in meters; converted to file units on output.
    offset: [f64; 3],
    channels: usize,
    end_site: Option<[f64; 3]>,
}

const fn j(
    name: &'static str,
    parent: usize,
    offset: [f64; 3],
    end_site: Option<[f64; 3]>,
) -> SynJoint {
    SynJoint {
        name,
        parent: Some(parent),
        offset,
        channels: 3,
        end_site,
    }
}

// Joint order is depth-first so the hierarchy prints in one pass.
const HIPS: usize = 0;
const L_HIP_JOINT: usize = 1;
const L_UP_LEG: usize = 2;
const L_LEG: usize = 3;
const L_FOOT: usize = 4;
const R_HIP_JOINT: usize = 6;
const R_UP_LEG: usize = 7;
const R_LEG: usize = 8;
const R_FOOT: usize = 9;
const LOWER_BACK: usize = 11;
const SPINE: usize = 12;
const SPINE1: usize = 13;
const NECK: usize = 14;
const NECK1: usize = 15;
const HEAD: usize = 16;
const L_SHOULDER: usize = 17;
const L_ARM: usize = 18;
const L_FORE_ARM: usize = 19;
const L_HAND: usize = 20;
const R_SHOULDER: usize = 23;
const R_ARM: usize = 24;
const R_FORE_ARM: usize = 25;
const R_HAND: usize = 26;
const N_JOINTS: usize = 29;

const SKELETON: [SynJoint; N_JOINTS] = [
    SynJoint {
        name: "Hips",
        parent: None,
        offset: [0.0, 0.0, 0.0],
        channels: 6,
        end_site: None,
    },
    j("LHipJoint", HIPS, [0.0, 0.0, 0.0], None),
    j("LeftUpLeg", L_HIP_JOINT, [0.10, -0.05, 0.0], None),
    j("LeftLeg", L_UP_LEG, [0.0, -0.42, 0.0], None),
    j("LeftFoot", L_LEG, [0.0, -0.40, 0.0], None),
    j(
        "LeftToeBase",
        L_FOOT,
        [0.0, -0.06, 0.14],
        Some([0.0, 0.0, 0.05]),
    ),
    j("RHipJoint", HIPS, [0.0, 0.0, 0.0], None),
    j("RightUpLeg", R_HIP_JOINT, [-0.10, -0.05, 0.0], None),
    j("RightLeg", R_UP_LEG, [0.0, -0.42, 0.0], None),
    j("RightFoot", R_LEG, [0.0, -0.40, 0.0], None),
    j(
        "RightToeBase",
        R_FOOT,
        [0.0, -0.06, 0.14],
        Some([0.0, 0.0, 0.05]),
    ),
    j("LowerBack", HIPS, [0.0, 0.0, 0.0], None),
    j("Spine", LOWER_BACK, [0.0, 0.10, 0.0], None),
    j("Spine1", SPINE, [0.0, 0.20, 0.0], None),
    j("Neck", SPINE1, [0.0, 0.25, 0.0], None),
    j("Neck1", NECK, [0.0, 0.07, 0.0], None),
    j("Head", NECK1, [0.0, 0.08, 0.0], Some([0.0, 0.10, 0.0])),
    j("LeftShoulder", SPINE1, [0.15, 0.20, 0.0], None),
    j("LeftArm", L_SHOULDER, [0.15, 0.0, 0.0], None),
    j("LeftForeArm", L_ARM, [0.28, 0.0, 0.0], None),
    j("LeftHand", L_FORE_ARM, [0.25, 0.0, 0.0], None),
    j(
        "LeftFingerBase",
        L_HAND,
        [0.05, 0.0, 0.0],
        Some([0.04, 0.0, 0.0]),
    ),
    j("LThumb", L_HAND, [0.02, 0.0, 0.03], Some([0.0, 0.0, 0.03])),
    j("RightShoulder", SPINE1, [-0.15, 0.20, 0.0], None),
    j("RightArm", R_SHOULDER, [-0.15, 0.0, 0.0], None),
    j("RightForeArm", R_ARM, [-0.28, 0.0, 0.0], None),
    j("RightHand", R_FORE_ARM, [-0.25, 0.0, 0.0], None),
    j(
        "RightFingerBase",
        R_HAND,
        [-0.05, 0.0, 0.0],
        Some([-0.04, 0.0, 0.0]),
    ),
    j("RThumb", R_HAND, [-0.02, 0.0, 0.03], Some([0.0, 0.0, 0.03])),
];

const HIP_HEIGHT: f64 = 0.95;

/// Motion families the generator can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Walk,
    Reach,
    Squat,
    Wave,
    Twist,
    Kick,
    JumpingJack,
    Stretch,
}

impl Action {
    pub const ALL: [Action; 8] = [
        Action::Walk,
        Action::Reach,
        Action::Squat,
        Action::Wave,
        Action::Twist,
        Action::Kick,
        Action::JumpingJack,
        Action::Stretch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Walk => "walk",
            Action::Reach => "reach",
            Action::Squat => "squat",
            Action::Wave => "wave",
            Action::Twist => "twist",
            Action::Kick => "kick",
            Action::JumpingJack => "jumpingjack",
            Action::Stretch => "stretch",
        }
    }
}

/// A sinusoid with random frequency and phase, used for secondary motion.
#[derive(Clone, Copy)]
struct Osc {
    amp: f64,
    freq: f64,
    phase: f64,
}

impl Osc {
    fn random(rng: &mut impl Rng, amp: f64) -> Self {
        Self {
            amp: amp * rng.random_range(0.3..1.0),
            freq: rng.random_range(0.1..0.6),
            phase: rng.random_range(0.0..TAU),
        }
    }

    fn at(&self, t: f64) -> f64 {
        self.amp * (TAU * self.freq * t + self.phase).sin()
    }
}

/// Per-frame channel values: root translation (meters) and per-joint
/// Euler angles in degrees, stored as (Z, Y, X) to match channel order.
struct FrameState {
    root: [f64; 3],
    angles: [[f64; 3]; N_JOINTS],
}

const Z: usize = 0;
const Y: usize = 1;
const X: usize = 2;

struct ClipParams {
    action: Action,
    freq: f64,
    amp: f64,
    side: f64,
    heading: f64,
    turn_rate: f64,
    arm_rest: f64,
    reach_a: (Osc, Osc, Osc),
    reach_b: (Osc, Osc, Osc),
    noise: Vec<(usize, usize, Osc)>,
}

impl ClipParams {
    fn random(action: Action, rng: &mut impl Rng) -> Self {
        let mut noise = Vec::new();
        for joint in [
            SPINE, SPINE1, NECK, HEAD, L_ARM, R_ARM, L_FORE_ARM, R_FORE_ARM, L_UP_LEG, R_UP_LEG,
        ] {
            for axis in [Z, Y, X] {
                noise.push((joint, axis, Osc::random(rng, 6.0)));
            }
        }
        let reach = |rng: &mut ChaCha8Rng| {
            (
                Osc::random(rng, 55.0),
                Osc::random(rng, 50.0),
                Osc::random(rng, 45.0),
            )
        };
        let mut local = ChaCha8Rng::seed_from_u64(rng.random());
        Self {
            action,
            freq: rng.random_range(0.5..1.2),
            amp: rng.random_range(0.6..1.0),
            side: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            heading: rng.random_range(-45.0..45.0),
            turn_rate: rng.random_range(-8.0..8.0),
            arm_rest: rng.random_range(60.0..80.0),
            reach_a: reach(&mut local),
            reach_b: reach(&mut local),
            noise,
        }
    }
}

fn frame_state(p: &ClipParams, t: f64) -> FrameState {
    let mut a = [[0.0; 3]; N_JOINTS];
    let w = TAU * p.freq * t;
    let s = w.sin();
    let c = w.cos();
    let amp = p.amp;
    let mut root = [0.0, HIP_HEIGHT, 0.0];
    let mut root_rot = [0.0, p.heading + p.turn_rate * t, 0.0];

    // Arms hang at the sides unless the action says otherwise.
    a[L_ARM][Z] = -p.arm_rest;
    a[R_ARM][Z] = p.arm_rest;
    a[L_FORE_ARM][Y] = 10.0;
    a[R_FORE_ARM][Y] = -10.0;

    match p.action {
        Action::Walk => {
            a[L_UP_LEG][X] = -28.0 * amp * s;
            a[R_UP_LEG][X] = 28.0 * amp * s;
            a[L_LEG][X] = 35.0 * amp * (0.5 + 0.5 * (w - 1.2).sin()).powi(2);
            a[R_LEG][X] = 35.0 * amp * (0.5 - 0.5 * (w - 1.2).sin()).powi(2);
            a[L_FOOT][X] = -10.0 * amp * c;
            a[R_FOOT][X] = 10.0 * amp * c;
            a[L_ARM][Y] = -25.0 * amp * s;
            a[R_ARM][Y] = -25.0 * amp * s;
            a[L_FORE_ARM][Y] = 15.0 + 12.0 * amp * (1.0 - s);
            a[R_FORE_ARM][Y] = -15.0 - 12.0 * amp * (1.0 + s);
            a[SPINE][Y] = 6.0 * amp * s;
            root[1] -= 0.025 * amp * (2.0 * w).cos().abs();
            root[2] = 1.2 * p.freq * t;
        }
        Action::Reach => {
            let (az, ay, ax) = &p.reach_a;
            let (bz, by, bx) = &p.reach_b;
            a[L_ARM][Z] = -p.arm_rest + 70.0 + az.at(t);
            a[L_ARM][Y] = -30.0 + ay.at(t);
            a[L_FORE_ARM][Y] = 35.0 + ax.at(t).abs();
            a[R_ARM][Z] = p.arm_rest - 70.0 + bz.at(t);
            a[R_ARM][Y] = 30.0 + by.at(t);
            a[R_FORE_ARM][Y] = -35.0 - bx.at(t).abs();
            a[SPINE][X] = 12.0 * (ax.at(t) + bx.at(t)) / 45.0;
            a[SPINE1][Y] = 0.3 * (ay.at(t) - by.at(t));
            a[SPINE][Z] = 0.15 * (bz.at(t) - az.at(t));
        }
        Action::Squat => {
            let depth = amp * (0.5 - 0.5 * c);
            a[L_UP_LEG][X] = -85.0 * depth;
            a[R_UP_LEG][X] = -85.0 * depth;
            a[L_LEG][X] = 120.0 * depth;
            a[R_LEG][X] = 120.0 * depth;
            a[L_FOOT][X] = -35.0 * depth;
            a[R_FOOT][X] = -35.0 * depth;
            a[SPINE][X] = 25.0 * depth;
            a[L_ARM][Y] = -75.0 * depth;
            a[R_ARM][Y] = 75.0 * depth;
            a[L_ARM][Z] = -p.arm_rest * (1.0 - depth);
            a[R_ARM][Z] = p.arm_rest * (1.0 - depth);
            // Keep the feet on the floor: thigh and shin project to height.
            let thigh = 0.42 * (85.0 * depth).to_radians().cos();
            let shin = 0.40 * (35.0 * depth).to_radians().cos();
            root[1] = 0.05 + thigh + shin + 0.08;
            root[2] = -0.15 * depth;
        }
        Action::Wave => {
            let arm = if p.side > 0.0 { L_ARM } else { R_ARM };
            let fore = if p.side > 0.0 { L_FORE_ARM } else { R_FORE_ARM };
            a[arm][Z] = p.side * (60.0 + 15.0 * amp * (0.3 * w).sin());
            a[arm][Y] = -p.side * 15.0;
            a[fore][Z] = p.side * (50.0 + 35.0 * amp * (2.0 * w).sin());
            a[SPINE1][Z] = -p.side * 5.0 * amp;
            a[HEAD][Y] = p.side * 15.0;
        }
        Action::Twist => {
            a[SPINE][Y] = 30.0 * amp * s;
            a[SPINE1][Y] = 25.0 * amp * s;
            a[SPINE][X] = 20.0 * amp * (0.5 * w).sin().max(0.0);
            a[SPINE1][Z] = 15.0 * amp * c;
            a[NECK][Y] = -10.0 * amp * s;
            a[L_ARM][Z] = -p.arm_rest + 40.0 * amp;
            a[R_ARM][Z] = p.arm_rest - 40.0 * amp;
            a[L_ARM][Y] = -20.0 * amp * s;
            a[R_ARM][Y] = -20.0 * amp * s;
            a[L_UP_LEG][Z] = -8.0;
            a[R_UP_LEG][Z] = 8.0;
        }
        Action::Kick => {
            let (up, leg, foot) = if p.side > 0.0 {
                (L_UP_LEG, L_LEG, L_FOOT)
            } else {
                (R_UP_LEG, R_LEG, R_FOOT)
            };
            let lift = amp * (0.5 - 0.5 * c).powf(1.5);
            a[up][X] = -80.0 * lift;
            a[leg][X] = 70.0 * lift * (1.0 - (0.5 - 0.5 * (2.0 * w).cos()));
            a[foot][X] = 20.0 * lift;
            a[SPINE][X] = -10.0 * lift;
            a[L_ARM][Z] = -p.arm_rest + 45.0 * lift;
            a[R_ARM][Z] = p.arm_rest - 45.0 * lift;
            root_rot[2] = -p.side * 4.0 * lift;
        }
        Action::JumpingJack => {
            let open = amp * (0.5 - 0.5 * c);
            a[L_ARM][Z] = -p.arm_rest + (p.arm_rest + 70.0) * open;
            a[R_ARM][Z] = p.arm_rest - (p.arm_rest + 70.0) * open;
            a[L_UP_LEG][Z] = 20.0 * open;
            a[R_UP_LEG][Z] = -20.0 * open;
            a[L_FOOT][Z] = -20.0 * open;
            a[R_FOOT][Z] = 20.0 * open;
            root[1] = HIP_HEIGHT - 0.82 * (1.0 - (20.0 * open).to_radians().cos())
                + 0.06 * (2.0 * w).sin().max(0.0);
        }
        Action::Stretch => {
            let up = amp * (0.5 - 0.5 * c);
            let lean = (0.5 * w).sin();
            a[L_ARM][Z] = -p.arm_rest + (p.arm_rest + 80.0) * up;
            a[R_ARM][Z] = p.arm_rest - (p.arm_rest + 80.0) * up;
            a[L_FORE_ARM][Y] = 10.0 * (1.0 - up);
            a[R_FORE_ARM][Y] = -10.0 * (1.0 - up);
            a[SPINE][Z] = 18.0 * amp * lean * up;
            a[SPINE1][Z] = 12.0 * amp * lean * up;
            a[SPINE][X] = -8.0 * up + 30.0 * amp * (1.0 - up) * (0.5 + 0.5 * lean);
            a[HEAD][X] = -15.0 * up;
        }
    }

    for (joint, axis, osc) in &p.noise {
        a[*joint][*axis] += osc.at(t);
    }
    a[HIPS] = root_rot;
    FrameState { root, angles: a }
}

/// Options for one generated clip.
#[derive(Debug, Clone, Copy)]
pub struct ClipOptions {
    pub frames: usize,
    pub frame_time: f64,
    /// Inject single-frame teleport spikes (for exercising the jitter filter).
    pub jitter: bool,
}

impl Default for ClipOptions {
    fn default() -> Self {
        Self {
            frames: 240,
            frame_time: 1.0 / 30.0,
            jitter: false,
        }
    }
}

/// Hierarchy section of the CMU-style skeleton.
pub fn cmu_hierarchy() -> String {
    let mut out = String::from("HIERARCHY\n");
    write_joint(&mut out, HIPS, 0);
    out
}

fn write_joint(out: &mut String, index: usize, depth: usize) {
    let joint = &SKELETON[index];
    let pad = "\t".repeat(depth);
    let units = |v: [f64; 3]| {
        format!(
            "{:.6} {:.6} {:.6}",
            v[0] / CMU_UNIT_SCALE,
            v[1] / CMU_UNIT_SCALE,
            v[2] / CMU_UNIT_SCALE
        )
    };
    let kw = if joint.parent.is_none() {
        "ROOT"
    } else {
        "JOINT"
    };
    let _ = writeln!(out, "{pad}{kw} {}", joint.name);
    let _ = writeln!(out, "{pad}{{");
    let _ = writeln!(out, "{pad}\tOFFSET {}", units(joint.offset));
    if joint.channels == 6 {
        let _ = writeln!(
            out,
            "{pad}\tCHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation"
        );
    } else {
        let _ = writeln!(out, "{pad}\tCHANNELS 3 Zrotation Yrotation Xrotation");
    }
    for child in (0..N_JOINTS).filter(|&c| SKELETON[c].parent == Some(index)) {
        write_joint(out, child, depth + 1);
    }
    if let Some(end) = joint.end_site {
        let _ = writeln!(
            out,
            "{pad}\tEnd Site\n{pad}\t{{\n{pad}\t\tOFFSET {}\n{pad}\t}}",
            units(end)
        );
    }
    let _ = writeln!(out, "{pad}}}");
}

/// Generates one clip of `action` as a complete BVH document.
pub fn generate_clip(action: Action, options: ClipOptions, rng: &mut impl Rng) -> String {
    let params = ClipParams::random(action, rng);
    let mut out = cmu_hierarchy();
    let _ = writeln!(
        out,
        "MOTION\nFrames: {}\nFrame Time: {:.7}",
        options.frames, options.frame_time
    );
    let t0 = rng.random_range(0.0..10.0);
    for f in 0..options.frames {
        let t = t0 + f as f64 * options.frame_time;
        let mut state = frame_state(&params, t);
        if options.jitter && f % 37 == 19 {
            state.root[1] += 0.6;
            state.angles[L_ARM][Z] += 120.0;
        }
        let mut row: Vec<String> = Vec::with_capacity(3 + 3 * N_JOINTS);
        for v in state.root {
            row.push(format!("{:.6}", v / CMU_UNIT_SCALE));
        }
        for angles in &state.angles {
            for v in angles {
                row.push(format!("{v:.5}"));
            }
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Writes `count` clips cycling through every action, plus the mapping file.
///
/// Returns the written clip paths in creation order. Output is a pure function
/// of `seed`, `count` and `options`.
pub fn write_corpus(
    dir: &Path,
    count: usize,
    options: ClipOptions,
    seed: u64,
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let action = Action::ALL[i % Action::ALL.len()];
        let text = generate_clip(action, options, &mut rng);
        let path = dir.join(format!("{:03}_{}.bvh", i, action.name()));
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    std::fs::write(dir.join("cmu.map"), CMU_MAPPING)?;
    Ok(paths)
}
