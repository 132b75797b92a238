//! On-disk model directory.
//!
//! ```text
//! ae.npw                      autoencoder weights
//! norm_stats.bin              63 means then 63 stds, f32 little-endian
//! solver_<Joint>_<...>.npw    solver weights
//! solver_<Joint>_<...>.desc   solver descriptor
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autoencoder::{AutoencoderError, PoseAutoencoder};
use crate::dataset::{DatasetError, NormStats};
use crate::nn;
use crate::solver::{solver_file_stem, SolverDescriptor, SolverError, SolverModel, SolverSet};

pub const AUTOENCODER_FILE: &str = "ae.npw";
pub const STATS_FILE: &str = "norm_stats.bin";

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn read(path: &Path) -> Result<Vec<u8>, BundleError> {
    fs::read(path).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), BundleError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| BundleError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| BundleError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(path: &Path, e: impl ToString) -> BundleError {
    BundleError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn save_autoencoder(
    dir: &Path,
    ae: &PoseAutoencoder,
    stats: &NormStats,
) -> Result<(), BundleError> {
    let weights = ae
        .to_bytes()
        .map_err(|e| invalid(&dir.join(AUTOENCODER_FILE), e))?;
    write(&dir.join(AUTOENCODER_FILE), &weights)?;
    write(&dir.join(STATS_FILE), &stats.to_bytes())
}

pub fn load_autoencoder(dir: &Path) -> Result<(PoseAutoencoder, NormStats), BundleError> {
    let ae_path = dir.join(AUTOENCODER_FILE);
    let ae = PoseAutoencoder::from_bytes(&read(&ae_path)?)
        .map_err(|e: AutoencoderError| invalid(&ae_path, e))?;
    let stats_path = dir.join(STATS_FILE);
    let stats = NormStats::from_bytes(&read(&stats_path)?)
        .map_err(|e: DatasetError| invalid(&stats_path, e))?;
    Ok((ae, stats))
}

/// Weight and descriptor paths for a solver's joint set.
pub fn solver_paths(dir: &Path, joints: &[usize]) -> (PathBuf, PathBuf) {
    let stem = solver_file_stem(joints);
    (
        dir.join(format!("{stem}.npw")),
        dir.join(format!("{stem}.desc")),
    )
}

pub fn save_solver(dir: &Path, solver: &SolverModel) -> Result<(), BundleError> {
    let (weights, desc) = solver_paths(dir, solver.joints());
    write(&weights, &solver.to_bytes()?)?;
    write(&desc, solver.descriptor.to_string().as_bytes())
}

pub fn load_solver(desc_path: &Path) -> Result<SolverModel, BundleError> {
    let text = String::from_utf8(read(desc_path)?).map_err(|e| invalid(desc_path, e))?;
    let descriptor: SolverDescriptor = text.parse().map_err(|e| invalid(desc_path, e))?;
    let weights_path = desc_path.with_extension("npw");
    let network = nn::load_weights(&read(&weights_path)?).map_err(|e| invalid(&weights_path, e))?;
    SolverModel::from_parts(descriptor, network).map_err(|e| invalid(&weights_path, e))
}

/// Loads the autoencoder, statistics and every solver in `dir`.
pub fn load_solver_set(dir: &Path) -> Result<SolverSet, BundleError> {
    let (ae, stats) = load_autoencoder(dir)?;
    let entries = fs::read_dir(dir).map_err(|source| BundleError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut descs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "desc")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("solver_"))
        })
        .collect();
    descs.sort();
    let solvers = descs
        .iter()
        .map(|p| load_solver(p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SolverSet::new(ae, stats, solvers)?)
}

/// Total size in bytes of the weight files for the autoencoder plus the
/// solvers of `sets`.
pub fn weight_footprint(dir: &Path, sets: &[&[usize]]) -> Result<u64, BundleError> {
    let size = |p: PathBuf| {
        fs::metadata(&p)
            .map(|m| m.len())
            .map_err(|source| BundleError::Io { path: p, source })
    };
    let mut total = size(dir.join(AUTOENCODER_FILE))?;
    for joints in sets {
        total += size(solver_paths(dir, joints).0)?;
    }
    Ok(total)
}
