//! Data-driven pose editing.
//!
//! Motion-capture clips are parsed ([`bvh`]), retargeted onto a canonical
//! 21-joint skeleton ([`skeleton`]) and gathered into a normalized pose
//! dataset ([`dataset`]). A tied-weight autoencoder ([`autoencoder`]) learns a
//! latent pose space in which small per-target networks ([`solver`]) move a
//! pose so that selected joints approach user targets. [`fabrik`] provides the
//! classic FABRIK baseline and the bone-length restoring post-process.

pub mod autoencoder;
pub mod bench;
pub mod bundle;
pub mod bvh;
pub mod dataset;
pub mod fabrik;
pub mod geom;
pub mod ingest;
pub mod nn;
pub mod skeleton;
pub mod solver;
pub mod synth;
