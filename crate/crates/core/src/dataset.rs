//! Pose dataset: clip filtering and splitting, per-feature normalization and
//! same-clip training pair sampling, plus the `NPK1` binary file format.

use std::io::{self, Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::skeleton::{CanonicalClip, Pose, JOINT_COUNT, POSE_DIM};

pub const STD_FLOOR: f32 = 1e-6;
pub const DEFAULT_JITTER_THRESHOLD: f64 = 0.3;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.05;

const MAGIC: &[u8; 4] = b"NPK1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 2 poses to compute statistics, got {0}")]
    InsufficientPoses(usize),
    #[error("dataset has no usable clips")]
    Empty,
    #[error("corrupt dataset file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-feature mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: [f32; POSE_DIM],
    pub std: [f32; POSE_DIM],
}

impl NormStats {
    /// Identity statistics (mean 0, std 1).
    pub fn identity() -> Self {
        Self {
            mean: [0.0; POSE_DIM],
            std: [1.0; POSE_DIM],
        }
    }

    pub fn normalize(&self, pose: &Pose) -> [f32; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        for i in 0..POSE_DIM {
            out[i] = (pose.0[i] - self.mean[i]) / self.std[i];
        }
        out
    }

    pub fn denormalize(&self, values: &[f32]) -> Pose {
        let mut out = [0.0; POSE_DIM];
        for i in 0..POSE_DIM {
            out[i] = values[i] * self.std[i] + self.mean[i];
        }
        Pose(out)
    }

    /// Normalizes the coordinates of `joint` only.
    pub fn normalize_joint(&self, joint: usize, p: [f32; 3]) -> [f32; 3] {
        let b = 3 * joint;
        [
            (p[0] - self.mean[b]) / self.std[b],
            (p[1] - self.mean[b + 1]) / self.std[b + 1],
            (p[2] - self.mean[b + 2]) / self.std[b + 2],
        ]
    }

    /// The pose at the dataset mean (the decoded zero vector).
    pub fn mean_pose(&self) -> Pose {
        Pose(self.mean)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.mean
            .iter()
            .chain(&self.std)
            .flat_map(|v| v.to_le_bytes())
            .collect()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        if bytes.len() != 2 * POSE_DIM * 4 {
            return Err(DatasetError::Corrupt(format!(
                "stats block must be {} bytes, got {}",
                2 * POSE_DIM * 4,
                bytes.len()
            )));
        }
        let vals: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut stats = Self::identity();
        stats.mean.copy_from_slice(&vals[..POSE_DIM]);
        stats.std.copy_from_slice(&vals[POSE_DIM..]);
        if stats.std.iter().any(|&s| !(s > 0.0)) || stats.mean.iter().any(|m| !m.is_finite()) {
            return Err(DatasetError::Corrupt(
                "invalid normalization statistics".into(),
            ));
        }
        Ok(stats)
    }

    /// Short content hash, used to tie solver files to their statistics.
    pub fn hash_hex(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.to_bytes());
        hex::encode(&digest[..8])
    }
}

/// Single-pass (Welford) per-feature moments over every pose of `clips`.
pub fn compute_stats<'a, I>(clips: I) -> Result<NormStats, DatasetError>
where
    I: IntoIterator<Item = &'a CanonicalClip>,
{
    let mut count = 0usize;
    let mut mean = [0.0f64; POSE_DIM];
    let mut m2 = [0.0f64; POSE_DIM];
    for pose in clips.into_iter().flat_map(|c| &c.poses) {
        count += 1;
        let n = count as f64;
        for i in 0..POSE_DIM {
            let x = pose.0[i] as f64;
            let delta = x - mean[i];
            mean[i] += delta / n;
            m2[i] += delta * (x - mean[i]);
        }
    }
    if count < 2 {
        return Err(DatasetError::InsufficientPoses(count));
    }
    let mut stats = NormStats::identity();
    for i in 0..POSE_DIM {
        stats.mean[i] = mean[i] as f32;
        stats.std[i] = ((m2[i] / count as f64).sqrt() as f32).max(STD_FLOOR);
    }
    Ok(stats)
}

/// Largest single-frame displacement of any joint within a clip, in meters.
pub fn max_frame_displacement(clip: &CanonicalClip) -> f64 {
    clip.poses
        .windows(2)
        .flat_map(|w| (0..JOINT_COUNT).map(move |j| w[0].joint(j).distance(w[1].joint(j))))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, Copy)]
pub struct DatasetOptions {
    pub validation_fraction: f64,
    /// Clips with a per-frame joint displacement above this (meters) are dropped.
    pub jitter_threshold: f64,
    pub seed: u64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
            jitter_threshold: DEFAULT_JITTER_THRESHOLD,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BuildSummary {
    pub clips: usize,
    pub poses: usize,
    pub dropped_jittery: usize,
}

/// One same-clip training sample: input pose, target pose and source clip.
#[derive(Debug, Clone, Copy)]
pub struct TrainingPair<'a> {
    pub x: &'a Pose,
    pub x_prime: &'a Pose,
    pub clip: usize,
}

#[derive(Debug, Clone)]
pub struct PoseDataset {
    pub clips: Vec<CanonicalClip>,
    pub splits: Vec<Split>,
    pub stats: NormStats,
}

impl PoseDataset {
    /// Filters jittery clips, splits the rest by whole clips and computes
    /// normalization statistics over the training split.
    pub fn build(
        clips: Vec<CanonicalClip>,
        options: DatasetOptions,
    ) -> Result<(Self, BuildSummary), DatasetError> {
        let before = clips.len();
        let clips: Vec<CanonicalClip> = clips
            .into_iter()
            .filter(|c| {
                !c.poses.is_empty() && max_frame_displacement(c) <= options.jitter_threshold
            })
            .collect();
        let dropped_jittery = before - clips.len();
        if clips.is_empty() {
            return Err(DatasetError::Empty);
        }

        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
        let n_val = if clips.len() >= 2 && options.validation_fraction > 0.0 {
            ((clips.len() as f64 * options.validation_fraction).ceil() as usize)
                .clamp(1, clips.len() - 1)
        } else {
            0
        };
        let mut splits = vec![Split::Train; clips.len()];
        for &i in &order[..n_val] {
            splits[i] = Split::Validation;
        }
        let stats = compute_stats(
            clips
                .iter()
                .zip(&splits)
                .filter(|(_, s)| **s == Split::Train)
                .map(|(c, _)| c),
        )?;
        let summary = BuildSummary {
            clips: clips.len(),
            poses: clips.iter().map(|c| c.poses.len()).sum(),
            dropped_jittery,
        };
        Ok((
            Self {
                clips,
                splits,
                stats,
            },
            summary,
        ))
    }

    pub fn pose_count(&self) -> usize {
        self.clips.iter().map(|c| c.poses.len()).sum()
    }

    pub fn clip_indices(&self, split: Split) -> Vec<usize> {
        (0..self.clips.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// All poses of one split, in clip order.
    pub fn poses(&self, split: Split) -> Vec<&Pose> {
        self.clip_indices(split)
            .into_iter()
            .flat_map(|i| &self.clips[i].poses)
            .collect()
    }

    /// Normalized poses of one split as a flat row-major matrix.
    pub fn normalized_matrix(&self, split: Split) -> Vec<f32> {
        self.poses(split)
            .into_iter()
            .flat_map(|p| self.stats.normalize(p))
            .collect()
    }

    pub fn pair_sampler(&self, split: Split) -> PairSampler<'_> {
        PairSampler {
            dataset: self,
            eligible: self
                .clip_indices(split)
                .into_iter()
                .filter(|&i| self.clips[i].poses.len() >= 2)
                .collect(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), DatasetError> {
        let poses = self.pose_count();
        w.write_all(MAGIC)?;
        w.write_all(&(poses as u32).to_le_bytes())?;
        w.write_all(&(POSE_DIM as u32).to_le_bytes())?;
        w.write_all(&self.stats.to_bytes())?;
        w.write_all(&(self.clips.len() as u32).to_le_bytes())?;
        let mut offset = 0u32;
        for (clip, split) in self.clips.iter().zip(&self.splits) {
            w.write_all(&offset.to_le_bytes())?;
            w.write_all(&(clip.poses.len() as u32).to_le_bytes())?;
            w.write_all(&[matches!(split, Split::Validation) as u8])?;
            w.write_all(&clip.frame_time.to_le_bytes())?;
            let id = clip.source_id.as_bytes();
            let id_len = u16::try_from(id.len())
                .map_err(|_| DatasetError::Corrupt("source id longer than 65535 bytes".into()))?;
            w.write_all(&id_len.to_le_bytes())?;
            w.write_all(id)?;
            offset += clip.poses.len() as u32;
        }
        for pose in self.clips.iter().flat_map(|c| &c.poses) {
            let bytes: Vec<u8> = pose.0.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&bytes)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, DatasetError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(DatasetError::Corrupt("bad magic".into()));
        }
        let pose_count = cur.u32()? as usize;
        let features = cur.u32()? as usize;
        if features != POSE_DIM {
            return Err(DatasetError::Corrupt(format!(
                "feature count {features}, expected {POSE_DIM}"
            )));
        }
        let stats = NormStats::from_bytes(cur.take(2 * POSE_DIM * 4)?)?;
        let clip_count = cur.u32()? as usize;
        let mut entries = Vec::with_capacity(clip_count.min(1 << 16));
        for _ in 0..clip_count {
            let offset = cur.u32()? as usize;
            let len = cur.u32()? as usize;
            let split = match cur.take(1)?[0] {
                0 => Split::Train,
                1 => Split::Validation,
                t => return Err(DatasetError::Corrupt(format!("unknown split tag {t}"))),
            };
            let frame_time = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            let id_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let id = String::from_utf8(cur.take(id_len)?.to_vec())
                .map_err(|_| DatasetError::Corrupt("source id is not UTF-8".into()))?;
            entries.push((offset, len, split, frame_time, id));
        }
        let block = cur.take(pose_count * POSE_DIM * 4)?;
        if cur.pos != bytes.len() {
            return Err(DatasetError::Corrupt(
                "trailing bytes after pose block".into(),
            ));
        }
        let values: Vec<f32> = block
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut clips = Vec::with_capacity(entries.len());
        let mut splits = Vec::with_capacity(entries.len());
        for (offset, len, split, frame_time, source_id) in entries {
            if offset + len > pose_count {
                return Err(DatasetError::Corrupt(
                    "clip table points past the pose block".into(),
                ));
            }
            let poses = values[offset * POSE_DIM..(offset + len) * POSE_DIM]
                .chunks_exact(POSE_DIM)
                .map(|c| Pose::from_slice(c).map_err(|e| DatasetError::Corrupt(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            clips.push(CanonicalClip {
                poses,
                source_id,
                frame_time,
            });
            splits.push(split);
        }
        Ok(Self {
            clips,
            splits,
            stats,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| DatasetError::Corrupt("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Draws `(x, x')` pairs from one clip: uniform over clips, then uniform over
/// ordered pairs of distinct frames.
pub struct PairSampler<'a> {
    dataset: &'a PoseDataset,
    eligible: Vec<usize>,
}

impl<'a> PairSampler<'a> {
    pub fn is_empty(&self) -> bool {
        self.eligible.is_empty()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Option<TrainingPair<'a>> {
        if self.eligible.is_empty() {
            return None;
        }
        let clip = self.eligible[rng.random_range(0..self.eligible.len())];
        let poses = &self.dataset.clips[clip].poses;
        let a = rng.random_range(0..poses.len());
        let mut b = rng.random_range(0..poses.len() - 1);
        if b >= a {
            b += 1;
        }
        Some(TrainingPair {
            x: &poses[a],
            x_prime: &poses[b],
            clip,
        })
    }
}
