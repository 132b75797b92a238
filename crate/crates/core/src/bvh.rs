//! BioVision hierarchy (BVH) parsing and forward kinematics.
//!
//! A BVH document has a `HIERARCHY` section describing a joint tree (offsets
//! and channel layouts) and a `MOTION` section holding one row of channel
//! values per frame. Rotations are Euler angles in degrees, applied in the
//! order the channels are declared for each joint.

use std::fmt;

use thiserror::Error;

use crate::geom::{Mat3, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum BvhError {
    #[error("malformed BVH at line {line}, column {column}: {message}")]
    Malformed {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown channel name `{name}` at line {line}, column {column}")]
    UnknownChannel {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("motion row {row} has {found} values, hierarchy declares {expected} channels")]
    ChannelCountMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("frame {frame} out of range ({frames} frames)")]
    FrameOutOfRange { frame: usize, frames: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Xposition" => Self::Xposition,
            "Yposition" => Self::Yposition,
            "Zposition" => Self::Zposition,
            "Xrotation" => Self::Xrotation,
            "Yrotation" => Self::Yrotation,
            "Zrotation" => Self::Zrotation,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Xposition => "Xposition",
            Self::Yposition => "Yposition",
            Self::Zposition => "Zposition",
            Self::Xrotation => "Xrotation",
            Self::Yrotation => "Yrotation",
            Self::Zrotation => "Zrotation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhJoint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint, in file units.
    pub offset: Vec3,
    pub channels: Vec<Channel>,
    /// True for `End Site` leaves.
    pub end_site: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BvhClip {
    pub joints: Vec<BvhJoint>,
    /// Seconds per frame.
    pub frame_time: f64,
    /// Row-major frame matrix: `frames.len() == frame_count * channel_count`.
    frames: Vec<f64>,
    channel_count: usize,
    /// Column of each joint's first channel in a frame row.
    channel_offsets: Vec<usize>,
}

impl BvhClip {
    pub fn frame_count(&self) -> usize {
        if self.channel_count == 0 {
            0
        } else {
            self.frames.len() / self.channel_count
        }
    }

    pub fn channel_count(&self) -> usize {
        self.channel_count
    }

    pub fn frame(&self, index: usize) -> Option<&[f64]> {
        let start = index.checked_mul(self.channel_count)?;
        self.frames.get(start..start + self.channel_count)
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// World-space position of every joint (End Sites included) at `frame`.
    pub fn forward_kinematics(&self, frame: usize) -> Result<Vec<Vec3>, BvhError> {
        let row = self.frame(frame).ok_or(BvhError::FrameOutOfRange {
            frame,
            frames: self.frame_count(),
        })?;
        let mut rotations: Vec<Mat3> = Vec::with_capacity(self.joints.len());
        let mut positions: Vec<Vec3> = Vec::with_capacity(self.joints.len());
        for (joint, &col) in self.joints.iter().zip(&self.channel_offsets) {
            let mut translation = joint.offset;
            let mut local = Mat3::IDENTITY;
            for (k, channel) in joint.channels.iter().enumerate() {
                let v = row[col + k];
                match channel {
                    Channel::Xposition => translation.x += v,
                    Channel::Yposition => translation.y += v,
                    Channel::Zposition => translation.z += v,
                    Channel::Xrotation => local = local * Mat3::rot_x(v),
                    Channel::Yrotation => local = local * Mat3::rot_y(v),
                    Channel::Zrotation => local = local * Mat3::rot_z(v),
                }
            }
            match joint.parent {
                None => {
                    positions.push(translation);
                    rotations.push(local);
                }
                Some(p) => {
                    let parent_rot = rotations[p];
                    positions.push(positions[p] + parent_rot.transform(translation));
                    rotations.push(parent_rot * local);
                }
            }
        }
        Ok(positions)
    }

    /// Renders the joint tree in BVH `HIERARCHY` syntax (no motion block).
    pub fn hierarchy_string(&self) -> String {
        let mut out = String::from("HIERARCHY\n");
        if !self.joints.is_empty() {
            self.write_joint(&mut out, 0, 0);
        }
        out
    }

    fn write_joint(&self, out: &mut String, index: usize, depth: usize) {
        let pad = "  ".repeat(depth);
        let joint = &self.joints[index];
        let o = joint.offset;
        if joint.end_site {
            out.push_str(&format!("{pad}End Site\n{pad}{{\n"));
            out.push_str(&format!("{pad}  OFFSET {} {} {}\n{pad}}}\n", o.x, o.y, o.z));
            return;
        }
        let kw = if joint.parent.is_none() {
            "ROOT"
        } else {
            "JOINT"
        };
        out.push_str(&format!("{pad}{kw} {}\n{pad}{{\n", joint.name));
        out.push_str(&format!("{pad}  OFFSET {} {} {}\n", o.x, o.y, o.z));
        let names: Vec<&str> = joint.channels.iter().map(|c| c.name()).collect();
        out.push_str(&format!("{pad}  CHANNELS {}", names.len()));
        for n in names {
            out.push(' ');
            out.push_str(n);
        }
        out.push('\n');
        for (child, _) in self
            .joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.parent == Some(index))
        {
            self.write_joint(out, child, depth + 1);
        }
        out.push_str(&format!("{pad}}}\n"));
    }
}

impl fmt::Display for BvhClip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hierarchy_string())
    }
}

#[derive(Debug, Clone, Copy)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

struct Tokens<'a> {
    items: Vec<Token<'a>>,
    pos: usize,
    end: (usize, usize),
}

impl<'a> Tokens<'a> {
    fn new(source: &'a str) -> Self {
        let mut items = Vec::new();
        let mut last_line = 1;
        for (i, line) in source.lines().enumerate() {
            last_line = i + 1;
            let mut rest = line;
            let mut consumed = 0;
            while let Some(start) = rest.find(|c: char| !c.is_whitespace()) {
                let tail = &rest[start..];
                let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
                items.push(Token {
                    text: &tail[..len],
                    line: i + 1,
                    column: consumed + start + 1,
                });
                consumed += start + len;
                rest = &tail[len..];
            }
        }
        Self {
            items,
            pos: 0,
            end: (last_line, 1),
        }
    }

    fn peek(&self) -> Option<Token<'a>> {
        self.items.get(self.pos).copied()
    }

    fn next(&mut self) -> Result<Token<'a>, BvhError> {
        let tok = self.peek().ok_or_else(|| BvhError::Malformed {
            line: self.end.0,
            column: self.end.1,
            message: "unexpected end of input".into(),
        })?;
        self.pos += 1;
        Ok(tok)
    }

    fn expect(&mut self, word: &str) -> Result<Token<'a>, BvhError> {
        let tok = self.next()?;
        if tok.text == word {
            Ok(tok)
        } else {
            Err(malformed(
                tok,
                format!("expected `{word}`, found `{}`", tok.text),
            ))
        }
    }

    fn number(&mut self) -> Result<f64, BvhError> {
        let tok = self.next()?;
        tok.text
            .parse::<f64>()
            .map_err(|_| malformed(tok, format!("expected a number, found `{}`", tok.text)))
    }
}

fn malformed(tok: Token<'_>, message: String) -> BvhError {
    BvhError::Malformed {
        line: tok.line,
        column: tok.column,
        message,
    }
}

/// Parses a complete BVH document. LF and CRLF line endings are accepted.
pub fn parse_bvh(source: &str) -> Result<BvhClip, BvhError> {
    let mut toks = Tokens::new(source);
    toks.expect("HIERARCHY")?;
    let root = toks.expect("ROOT")?;
    let mut joints = Vec::new();
    parse_joint(&mut toks, &mut joints, None, root)?;

    let motion = toks.next()?;
    if motion.text != "MOTION" {
        return Err(malformed(
            motion,
            format!(
                "expected `MOTION` after the hierarchy, found `{}`",
                motion.text
            ),
        ));
    }
    toks.expect("Frames:")?;
    let frames_tok = toks.next()?;
    let frame_count: usize = frames_tok.text.parse().map_err(|_| {
        malformed(
            frames_tok,
            "frame count must be a non-negative integer".into(),
        )
    })?;
    toks.expect("Frame")?;
    let time_tok = toks.expect("Time:")?;
    let frame_time = toks.number()?;
    if !(frame_time > 0.0 && frame_time.is_finite()) {
        return Err(malformed(time_tok, "frame time must be positive".into()));
    }
    if frame_count == 0 {
        return Err(malformed(
            frames_tok,
            "clip must contain at least one frame".into(),
        ));
    }

    let mut channel_offsets = Vec::with_capacity(joints.len());
    let mut channel_count = 0;
    for j in &joints {
        channel_offsets.push(channel_count);
        channel_count += j.channels.len();
    }

    // Motion rows are line-delimited; group remaining tokens by line.
    let mut frames = Vec::with_capacity(frame_count * channel_count);
    let mut rows = 0;
    while let Some(first) = toks.peek() {
        let line = first.line;
        let mut found = 0;
        while let Some(tok) = toks.peek() {
            if tok.line != line {
                break;
            }
            toks.pos += 1;
            let v: f64 = tok
                .text
                .parse()
                .map_err(|_| malformed(tok, format!("expected a number, found `{}`", tok.text)))?;
            if found < channel_count {
                frames.push(v);
            }
            found += 1;
        }
        if found != channel_count {
            return Err(BvhError::ChannelCountMismatch {
                row: rows,
                expected: channel_count,
                found,
            });
        }
        rows += 1;
    }
    if rows != frame_count {
        return Err(BvhError::Malformed {
            line: toks.end.0,
            column: 1,
            message: format!("header declares {frame_count} frames, found {rows} motion rows"),
        });
    }

    Ok(BvhClip {
        joints,
        frame_time,
        frames,
        channel_count,
        channel_offsets,
    })
}

fn parse_joint<'a>(
    toks: &mut Tokens<'a>,
    joints: &mut Vec<BvhJoint>,
    parent: Option<usize>,
    keyword: Token<'a>,
) -> Result<(), BvhError> {
    let name = toks.next()?;
    if name.text == "{" {
        return Err(malformed(
            name,
            format!("`{}` is missing a joint name", keyword.text),
        ));
    }
    toks.expect("{")?;
    toks.expect("OFFSET")?;
    let offset = Vec3::new(toks.number()?, toks.number()?, toks.number()?);
    let count_tok = toks.expect("CHANNELS").and_then(|_| toks.next())?;
    let count: usize = count_tok
        .text
        .parse()
        .map_err(|_| malformed(count_tok, "channel count must be an integer".into()))?;
    if !matches!(count, 0 | 3 | 6) {
        return Err(malformed(
            count_tok,
            format!("channel count must be 0, 3 or 6, got {count}"),
        ));
    }
    let mut channels = Vec::with_capacity(count);
    for _ in 0..count {
        let tok = toks.next()?;
        let ch = Channel::parse(tok.text).ok_or_else(|| BvhError::UnknownChannel {
            name: tok.text.to_string(),
            line: tok.line,
            column: tok.column,
        })?;
        channels.push(ch);
    }
    let index = joints.len();
    joints.push(BvhJoint {
        name: name.text.to_string(),
        parent,
        offset,
        channels,
        end_site: false,
    });

    loop {
        let tok = toks.next()?;
        match tok.text {
            "JOINT" => parse_joint(toks, joints, Some(index), tok)?,
            "End" => {
                toks.expect("Site")?;
                toks.expect("{")?;
                toks.expect("OFFSET")?;
                let offset = Vec3::new(toks.number()?, toks.number()?, toks.number()?);
                toks.expect("}")?;
                let leaf_name = format!("{}_End", joints[index].name);
                joints.push(BvhJoint {
                    name: leaf_name,
                    parent: Some(index),
                    offset,
                    channels: Vec::new(),
                    end_site: true,
                });
            }
            "}" => return Ok(()),
            other => {
                return Err(malformed(
                    tok,
                    format!("expected `JOINT`, `End Site` or `}}`, found `{other}`"),
                ))
            }
        }
    }
}
