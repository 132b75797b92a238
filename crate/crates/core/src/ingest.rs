//! Directory ingestion: BVH files parsed and retargeted into canonical clips.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bvh::parse_bvh;
use crate::skeleton::{retarget, CanonicalClip, JointMapping, RetargetOptions, SkeletonError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no .bvh files in {0}")]
    NoFiles(PathBuf),
    #[error("none of the {} files could be ingested", .0.len())]
    NothingParsed(Vec<IngestFailure>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// A file that was skipped, with the reason.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestFailure {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub clips: Vec<CanonicalClip>,
    pub failures: Vec<IngestFailure>,
}

/// `.bvh` files directly inside `dir`, sorted by name.
pub fn bvh_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let io_err = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_file()
            && path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("bvh"))
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Parses and retargets one file; the clip id is the file stem.
pub fn load_clip(
    path: &Path,
    mapping: &JointMapping,
    options: RetargetOptions,
) -> Result<CanonicalClip, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let clip = parse_bvh(&text).map_err(|e| e.to_string())?;
    let id = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    retarget(&clip, mapping, &id, options).map_err(|e: SkeletonError| e.to_string())
}

/// Ingests every `.bvh` file of `dir`. Files that fail are reported, not fatal,
/// unless nothing could be read.
pub fn ingest_dir(
    dir: &Path,
    mapping: &JointMapping,
    options: RetargetOptions,
) -> Result<IngestReport, IngestError> {
    let files = bvh_files(dir)?;
    if files.is_empty() {
        return Err(IngestError::NoFiles(dir.to_path_buf()));
    }
    let mut clips = Vec::new();
    let mut failures = Vec::new();
    for path in files {
        match load_clip(&path, mapping, options) {
            Ok(c) => clips.push(c),
            Err(message) => failures.push(IngestFailure { path, message }),
        }
    }
    if clips.is_empty() {
        return Err(IngestError::NothingParsed(failures));
    }
    Ok(IngestReport { clips, failures })
}
