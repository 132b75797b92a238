//! Pose-solve sessions over a WebSocket.
//!
//! Clients connect to [`server::WS_PATH`] and exchange JSON text frames
//! described in [`protocol`]. A session holds the pose being edited; `solve`
//! requests are previews computed from it and only `commit` changes it.

pub mod protocol;
pub mod server;
pub mod service;

pub use protocol::{ClientMessage, Mode, ServerMessage};
pub use server::{bind, router, serve, WS_PATH};
pub use service::{PoseService, Session, UNDO_DEPTH};
