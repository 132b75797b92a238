//! Text pose files: one `JointName x y z` line per canonical joint.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use posekit::skeleton::{Pose, JOINT_COUNT, JOINT_NAMES, POSE_DIM};

pub fn format_pose(pose: &Pose) -> String {
    let mut out = String::from("# joint x y z (meters, Y-up, root-relative)\n");
    for (j, name) in JOINT_NAMES.iter().enumerate() {
        let p = &pose.0[3 * j..3 * j + 3];
        let _ = writeln!(out, "{name} {} {} {}", p[0], p[1], p[2]);
    }
    out
}

/// Accepts the output of [`format_pose`] or 63 bare numbers separated by
/// whitespace or commas.
pub fn parse_pose(text: &str) -> Result<Pose> {
    let mut values = Vec::with_capacity(POSE_DIM);
    let mut named = 0;
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .peekable();
        if let Some(first) = tokens.peek() {
            if first.parse::<f32>().is_err() {
                let name = tokens.next().unwrap_or_default();
                if named >= JOINT_COUNT || JOINT_NAMES[named] != name {
                    bail!(
                        "expected joint `{}`, found `{name}`",
                        JOINT_NAMES.get(named).unwrap_or(&"<end>")
                    );
                }
                named += 1;
            }
        }
        for t in tokens {
            values.push(
                t.parse::<f32>()
                    .map_err(|_| anyhow::anyhow!("not a number: `{t}`"))?,
            );
        }
    }
    if values.len() != POSE_DIM {
        bail!("expected {POSE_DIM} coordinates, found {}", values.len());
    }
    let pose = Pose::from_slice(&values)?;
    if !pose.is_finite() {
        bail!("pose contains non-finite values");
    }
    Ok(pose)
}
