use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use posekit::fabrik::{fabrik_solve_fullbody, FabrikConfig, FULLBODY_EFFECTORS};
use posekit::geom::Vec3;
use posekit::skeleton::{canonical_topology, Pose, JOINT_NAMES};
use posekit::solver::{SolverSet, TargetSpec};

use crate::protocol::{
    CatalogEntry, ClientMessage, ErrorCode, JointRef, Mode, Residual, ServerMessage, SolvedPose,
    Topology, WireTargetSpec, PROTOCOL_VERSION,
};

/// Number of earlier poses a session can return to.
pub const UNDO_DEPTH: usize = 32;

#[derive(Debug, Clone)]
pub struct Session {
    pub pose: Pose,
    pub mode: Mode,
    pub post_process: bool,
    undo: VecDeque<Pose>,
}

impl Session {
    fn new(pose: Pose, mode: Mode, post_process: bool) -> Self {
        Self {
            pose,
            mode,
            post_process,
            undo: VecDeque::with_capacity(UNDO_DEPTH),
        }
    }

    fn commit(&mut self, pose: Pose) {
        if self.undo.len() == UNDO_DEPTH {
            self.undo.pop_front();
        }
        self.undo.push_back(std::mem::replace(&mut self.pose, pose));
    }

    fn undo(&mut self) -> bool {
        match self.undo.pop_back() {
            Some(p) => {
                self.pose = p;
                true
            }
            None => false,
        }
    }

    pub fn undo_depth(&self) -> usize {
        self.undo.len()
    }
}

struct Failure(ErrorCode, String);

type Reply = Result<ServerMessage, Failure>;

/// Loaded models plus all live sessions.
pub struct PoseService {
    models: SolverSet,
    fabrik: FabrikConfig,
    sessions: Mutex<HashMap<String, Session>>,
    next_id: AtomicU64,
}

impl PoseService {
    pub fn new(models: SolverSet, fabrik: FabrikConfig) -> Self {
        Self {
            models,
            fabrik,
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn models(&self) -> &SolverSet {
        &self.models
    }

    /// Parses one text frame and returns the serialized reply.
    pub fn handle_text(&self, text: &str) -> String {
        let reply = match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => ServerMessage::Error {
                correlation_id: salvage_correlation_id(text),
                code: ErrorCode::BadRequest,
                message: e.to_string(),
            },
        };
        serde_json::to_string(&reply).expect("server messages always serialize")
    }

    pub fn handle(&self, msg: ClientMessage) -> ServerMessage {
        let correlation_id = match &msg {
            ClientMessage::Hello { correlation_id }
            | ClientMessage::CreateSession { correlation_id, .. }
            | ClientMessage::Solve { correlation_id, .. }
            | ClientMessage::Commit { correlation_id, .. }
            | ClientMessage::Undo { correlation_id, .. } => correlation_id.clone(),
        };
        let reply = match msg {
            ClientMessage::Hello { correlation_id } => Ok(self.hello(correlation_id)),
            ClientMessage::CreateSession {
                correlation_id,
                pose,
                mode,
                post_process,
            } => self.create_session(correlation_id, pose, mode, post_process),
            ClientMessage::Solve {
                correlation_id,
                session_id,
                specs,
                mode,
                post_process,
            } => self.solve(correlation_id, session_id, &specs, mode, post_process),
            ClientMessage::Commit {
                correlation_id,
                session_id,
                pose,
            } => self.commit(correlation_id, session_id, &pose),
            ClientMessage::Undo {
                correlation_id,
                session_id,
            } => self.undo(correlation_id, session_id),
        };
        reply.unwrap_or_else(|Failure(code, message)| ServerMessage::Error {
            correlation_id,
            code,
            message,
        })
    }

    fn topology() -> Topology {
        let topo = canonical_topology();
        Topology {
            joint_names: topo.joint_names.clone(),
            parents: topo.parent.clone(),
            reference_pose: topo.reference_pose.0.to_vec(),
        }
    }

    fn hello(&self, correlation_id: String) -> ServerMessage {
        ServerMessage::Hello {
            correlation_id,
            protocol_version: PROTOCOL_VERSION,
            topology: Self::topology(),
            solvers: self
                .models
                .catalog()
                .into_iter()
                .map(|joints| CatalogEntry {
                    names: joints.iter().map(|&j| JOINT_NAMES[j].to_string()).collect(),
                    joints,
                })
                .collect(),
            fabrik_effectors: FULLBODY_EFFECTORS.to_vec(),
            units: "meters".into(),
            up_axis: "Y".into(),
            undo_depth: UNDO_DEPTH,
        }
    }

    fn create_session(
        &self,
        correlation_id: String,
        pose: Option<Vec<f32>>,
        mode: Option<Mode>,
        post_process: Option<bool>,
    ) -> Reply {
        let pose = match pose {
            Some(values) => parse_pose(&values)?,
            None => self.models.stats.mean_pose(),
        };
        let session_id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let session = Session::new(
            pose,
            mode.unwrap_or_default(),
            post_process.unwrap_or(false),
        );
        let reply = ServerMessage::SessionCreated {
            correlation_id,
            session_id: session_id.clone(),
            pose: pose.0.to_vec(),
            topology: Self::topology(),
            mode: session.mode,
            post_process: session.post_process,
        };
        self.sessions
            .lock()
            .expect("session lock")
            .insert(session_id, session);
        Ok(reply)
    }

    fn with_session<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> T) -> Result<T, Failure> {
        let mut sessions = self.sessions.lock().expect("session lock");
        let session = sessions
            .get_mut(id)
            .ok_or_else(|| Failure(ErrorCode::UnknownSession, format!("no session `{id}`")))?;
        Ok(f(session))
    }

    fn solve(
        &self,
        correlation_id: String,
        session_id: String,
        wire_specs: &[WireTargetSpec],
        mode: Option<Mode>,
        post_process: Option<bool>,
    ) -> Reply {
        let (pose, default_mode, default_post) =
            self.with_session(&session_id, |s| (s.pose, s.mode, s.post_process))?;
        let mode = mode.unwrap_or(default_mode);
        let post_process = post_process.unwrap_or(default_post);
        let specs = wire_specs
            .iter()
            .map(to_target_spec)
            .collect::<Result<Vec<_>, _>>()?;
        let targets: Vec<(usize, Vec3)> = specs
            .iter()
            .flat_map(|s| s.joints.iter().copied().zip(s.positions.iter().copied()))
            .collect();

        let mut results = Vec::new();
        if matches!(mode, Mode::Neural | Mode::Both) {
            let start = Instant::now();
            let out = if specs.is_empty() {
                pose
            } else {
                self.models
                    .compose(&pose, &specs, post_process)
                    .map_err(|e| Failure(ErrorCode::UnsupportedJointSet, e.to_string()))?
            };
            results.push(solved("neural", &out, &targets, start));
        }
        if matches!(mode, Mode::Fabrik | Mode::Both) {
            let start = Instant::now();
            let out = if targets.is_empty() {
                pose
            } else {
                fabrik_solve_fullbody(&pose, &targets, &self.fabrik)
                    .map_err(|e| Failure(ErrorCode::UnsupportedJointSet, e.to_string()))?
                    .pose
            };
            results.push(solved("fabrik", &out, &targets, start));
        }
        Ok(ServerMessage::SolveResult {
            correlation_id,
            session_id,
            results,
        })
    }

    fn commit(&self, correlation_id: String, session_id: String, values: &[f32]) -> Reply {
        let pose = parse_pose(values);
        self.with_session(&session_id, |s| {
            let pose = pose?;
            s.commit(pose);
            Ok(ServerMessage::Committed {
                correlation_id,
                session_id: session_id.clone(),
                pose: s.pose.0.to_vec(),
                undo_depth: s.undo_depth(),
            })
        })?
    }

    fn undo(&self, correlation_id: String, session_id: String) -> Reply {
        self.with_session(&session_id, |s| {
            if !s.undo() {
                return Err(Failure(
                    ErrorCode::NothingToUndo,
                    "undo stack is empty".into(),
                ));
            }
            Ok(ServerMessage::Undone {
                correlation_id,
                session_id: session_id.clone(),
                pose: s.pose.0.to_vec(),
                undo_depth: s.undo_depth(),
            })
        })?
    }

    /// Snapshot of a session, for inspection.
    pub fn session(&self, id: &str) -> Option<Session> {
        self.sessions.lock().expect("session lock").get(id).cloned()
    }
}

fn solved(method: &str, pose: &Pose, targets: &[(usize, Vec3)], start: Instant) -> SolvedPose {
    SolvedPose {
        method: method.into(),
        pose: pose.0.to_vec(),
        residuals: targets
            .iter()
            .map(|&(joint, t)| Residual {
                joint,
                distance: pose.joint(joint).distance(t),
            })
            .collect(),
        solve_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

fn parse_pose(values: &[f32]) -> Result<Pose, Failure> {
    Pose::from_slice(values).map_err(|e| Failure(ErrorCode::InvalidPose, e.to_string()))
}

fn to_target_spec(wire: &WireTargetSpec) -> Result<TargetSpec, Failure> {
    let topo = canonical_topology();
    let joints = wire
        .joints
        .iter()
        .map(|j| match j {
            JointRef::Index(i) => Ok(*i),
            JointRef::Name(n) => topo
                .joint_index(n)
                .ok_or_else(|| Failure(ErrorCode::InvalidTarget, format!("unknown joint `{n}`"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let positions = wire
        .positions
        .iter()
        .map(|p| Vec3::new(p[0], p[1], p[2]))
        .collect();
    TargetSpec::new(joints, positions).map_err(|e| Failure(ErrorCode::InvalidTarget, e.to_string()))
}

/// Best-effort correlation id from a message that failed to parse.
fn salvage_correlation_id(text: &str) -> String {
    serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| {
            v.get("correlation_id")
                .and_then(|c| c.as_str())
                .map(str::to_string)
        })
        .unwrap_or_default()
}
