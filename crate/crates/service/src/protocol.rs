//! JSON messages exchanged over the socket.
//!
//! Every message is an object with a `type` field. Poses are flat arrays of
//! 63 numbers (21 joints x XYZ, canonical order, meters, Y-up, root-relative).

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Neural,
    Fabrik,
    Both,
}

/// A joint given either by canonical index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JointRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireTargetSpec {
    pub joints: Vec<JointRef>,
    pub positions: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        correlation_id: String,
    },
    CreateSession {
        #[serde(default)]
        correlation_id: String,
        #[serde(default)]
        pose: Option<Vec<f32>>,
        #[serde(default)]
        mode: Option<Mode>,
        #[serde(default)]
        post_process: Option<bool>,
    },
    Solve {
        #[serde(default)]
        correlation_id: String,
        session_id: String,
        #[serde(default)]
        specs: Vec<WireTargetSpec>,
        #[serde(default)]
        mode: Option<Mode>,
        #[serde(default)]
        post_process: Option<bool>,
    },
    Commit {
        #[serde(default)]
        correlation_id: String,
        session_id: String,
        pose: Vec<f32>,
    },
    Undo {
        #[serde(default)]
        correlation_id: String,
        session_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub joints: Vec<usize>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub joint_names: Vec<String>,
    pub parents: Vec<i32>,
    pub reference_pose: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub joint: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedPose {
    /// `"neural"` or `"fabrik"`.
    pub method: String,
    pub pose: Vec<f32>,
    pub residuals: Vec<Residual>,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        correlation_id: String,
        protocol_version: u32,
        topology: Topology,
        solvers: Vec<CatalogEntry>,
        fabrik_effectors: Vec<usize>,
        units: String,
        up_axis: String,
        undo_depth: usize,
    },
    SessionCreated {
        correlation_id: String,
        session_id: String,
        pose: Vec<f32>,
        topology: Topology,
        mode: Mode,
        post_process: bool,
    },
    SolveResult {
        correlation_id: String,
        session_id: String,
        results: Vec<SolvedPose>,
    },
    Committed {
        correlation_id: String,
        session_id: String,
        pose: Vec<f32>,
        undo_depth: usize,
    },
    Undone {
        correlation_id: String,
        session_id: String,
        pose: Vec<f32>,
        undo_depth: usize,
    },
    Error {
        correlation_id: String,
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn correlation_id(&self) -> &str {
        match self {
            Self::Hello { correlation_id, .. }
            | Self::SessionCreated { correlation_id, .. }
            | Self::SolveResult { correlation_id, .. }
            | Self::Committed { correlation_id, .. }
            | Self::Undone { correlation_id, .. }
            | Self::Error { correlation_id, .. } => correlation_id,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    InvalidPose,
    UnknownSession,
    UnsupportedJointSet,
    InvalidTarget,
    NothingToUndo,
    Internal,
}
