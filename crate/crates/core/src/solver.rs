//! Latent-space IK solvers.
//!
//! A solver network maps a latent pose and the desired positions of its `n`
//! target joints to a new latent pose. Several solvers with disjoint joint
//! sets are chained in latent space between a single encode and decode.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autoencoder::{AutoencoderError, EpochLoss, PoseAutoencoder};
use crate::dataset::{NormStats, PoseDataset, Split};
use crate::fabrik::bone_length_postprocess;
use crate::geom::Vec3;
use crate::nn::{
    self, Activation, AdamConfig, AdamState, InferenceScratch, LayerSpec, MlpModel, NnError,
};
use crate::skeleton::{
    bone_lengths, canonical_topology, joint, Pose, JOINT_COUNT, JOINT_NAMES, POSE_DIM,
};

/// Both hands.
pub const HANDS: [usize; 2] = [joint::LEFT_HAND, joint::RIGHT_HAND];
/// Both ankles.
pub const ANKLES: [usize; 2] = [joint::LEFT_FOOT, joint::RIGHT_FOOT];
pub const HEAD: [usize; 1] = [joint::HEAD];
/// Joint sets of the standard solver catalog.
pub const STANDARD_SETS: [&[usize]; 3] = [&HANDS, &ANKLES, &HEAD];

pub const DEFAULT_REST_WEIGHT: f32 = 0.01;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("target joint set must be non-empty and leave at least one joint free")]
    BadTargetSet,
    #[error("joint index {0} out of range")]
    JointOutOfRange(usize),
    #[error("joint {0} listed twice")]
    DuplicateJoint(usize),
    #[error("joint sets overlap on joint {0}")]
    Overlap(usize),
    #[error("no solver trained for joints {0:?}")]
    NoSolver(Vec<usize>),
    #[error("{joints} target joints but {positions} positions")]
    PositionCount { joints: usize, positions: usize },
    #[error("target for joint {0} is not finite")]
    NonFiniteTarget(usize),
    #[error("input width {found}, solver expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("solver was trained against statistics {solver}, loaded statistics are {loaded}")]
    StatsMismatch { solver: String, loaded: String },
    #[error("training split has no clip with two or more poses")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("bad solver descriptor: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autoencoder(#[from] AutoencoderError),
}

/// Target joints (canonical indices) with their desired positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    pub joints: Vec<usize>,
    pub positions: Vec<Vec3>,
}

impl TargetSpec {
    pub fn new(joints: Vec<usize>, positions: Vec<Vec3>) -> Result<Self, SolverError> {
        validate_joint_set(&joints)?;
        if joints.len() != positions.len() {
            return Err(SolverError::PositionCount {
                joints: joints.len(),
                positions: positions.len(),
            });
        }
        if let Some(i) = positions.iter().position(|p| !p.is_finite()) {
            return Err(SolverError::NonFiniteTarget(joints[i]));
        }
        Ok(Self { joints, positions })
    }

    /// Targets placed at the joints' current positions in `pose`.
    pub fn at_pose(joints: &[usize], pose: &Pose) -> Result<Self, SolverError> {
        Self::new(
            joints.to_vec(),
            joints.iter().map(|&j| pose.joint(j)).collect(),
        )
    }

    fn position_of(&self, joint: usize) -> Option<Vec3> {
        self.joints
            .iter()
            .position(|&j| j == joint)
            .map(|i| self.positions[i])
    }
}

fn validate_joint_set(joints: &[usize]) -> Result<(), SolverError> {
    if joints.is_empty() || joints.len() >= JOINT_COUNT {
        return Err(SolverError::BadTargetSet);
    }
    let mut seen = [false; JOINT_COUNT];
    for &j in joints {
        if j >= JOINT_COUNT {
            return Err(SolverError::JointOutOfRange(j));
        }
        if std::mem::replace(&mut seen[j], true) {
            return Err(SolverError::DuplicateJoint(j));
        }
    }
    Ok(())
}

fn same_set(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len() && a.iter().all(|j| b.contains(j))
}

/// Sidecar metadata stored next to a solver's weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverDescriptor {
    pub joints: Vec<usize>,
    pub k: f32,
    pub stats_hash: String,
    pub normalize_targets: bool,
}

impl fmt::Display for SolverDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let joints: Vec<String> = self.joints.iter().map(|j| j.to_string()).collect();
        writeln!(f, "# posekit solver")?;
        writeln!(f, "joints={}", joints.join(","))?;
        writeln!(f, "k={}", self.k)?;
        writeln!(f, "stats_hash={}", self.stats_hash)?;
        writeln!(f, "normalize_targets={}", self.normalize_targets)
    }
}

impl FromStr for SolverDescriptor {
    type Err = SolverError;

    fn from_str(text: &str) -> Result<Self, SolverError> {
        let bad = |m: String| SolverError::Descriptor(m);
        let (mut joints, mut k, mut hash, mut norm) = (None, None, None, None);
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "joints" => {
                    joints = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().parse::<usize>())
                            .collect::<Result<Vec<_>, _>>()
                            .map_err(|e| bad(format!("joints: {e}")))?,
                    )
                }
                "k" => k = Some(value.parse::<f32>().map_err(|e| bad(format!("k: {e}")))?),
                "stats_hash" => hash = Some(value.to_string()),
                "normalize_targets" => {
                    norm = Some(
                        value
                            .parse::<bool>()
                            .map_err(|e| bad(format!("normalize_targets: {e}")))?,
                    )
                }
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        let joints = joints.ok_or_else(|| bad("missing joints".into()))?;
        validate_joint_set(&joints)?;
        Ok(Self {
            joints,
            k: k.ok_or_else(|| bad("missing k".into()))?,
            stats_hash: hash.ok_or_else(|| bad("missing stats_hash".into()))?,
            normalize_targets: norm.unwrap_or(true),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Weight of the non-target term of the loss.
    pub k: f32,
    pub seed: u64,
    /// Feed targets in normalized pose-feature units rather than meters.
    pub normalize_targets: bool,
    /// Validation pairs drawn once per run for the per-epoch validation loss.
    pub validation_pairs: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            hidden_width: 126,
            hidden_layers: 3,
            epochs: 5,
            batch_size: 256,
            learning_rate: 1e-4,
            k: DEFAULT_REST_WEIGHT,
            seed: 0,
            normalize_targets: true,
            validation_pairs: 1024,
        }
    }
}

/// A trained (or freshly initialized) solver network and its descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverModel {
    pub descriptor: SolverDescriptor,
    pub network: MlpModel,
}

impl SolverModel {
    pub fn new(
        joints: &[usize],
        latent_dim: usize,
        stats: &NormStats,
        config: &SolverConfig,
    ) -> Result<Self, SolverError> {
        validate_joint_set(joints)?;
        let mut specs = Vec::with_capacity(config.hidden_layers + 1);
        let mut width = latent_dim + 3 * joints.len();
        for _ in 0..config.hidden_layers {
            specs.push(LayerSpec::new(width, config.hidden_width, Activation::Relu));
            width = config.hidden_width;
        }
        specs.push(LayerSpec::new(width, latent_dim, Activation::Linear));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ joint_seed(joints));
        Ok(Self {
            descriptor: SolverDescriptor {
                joints: joints.to_vec(),
                k: config.k,
                stats_hash: stats.hash_hex(),
                normalize_targets: config.normalize_targets,
            },
            network: MlpModel::new(&specs, &mut rng)?,
        })
    }

    pub fn from_parts(
        descriptor: SolverDescriptor,
        network: MlpModel,
    ) -> Result<Self, SolverError> {
        let n = descriptor.joints.len();
        if network.in_dim() != network.out_dim() + 3 * n {
            return Err(SolverError::DimensionMismatch {
                expected: network.out_dim() + 3 * n,
                found: network.in_dim(),
            });
        }
        Ok(Self {
            descriptor,
            network,
        })
    }

    pub fn joints(&self) -> &[usize] {
        &self.descriptor.joints
    }

    pub fn input_width(&self) -> usize {
        self.network.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.network.out_dim()
    }

    /// Encodes the targets as the solver's input features, in its joint order.
    pub fn target_features(
        &self,
        spec: &TargetSpec,
        stats: &NormStats,
        out: &mut Vec<f32>,
    ) -> Result<(), SolverError> {
        if !same_set(&spec.joints, self.joints()) {
            return Err(SolverError::NoSolver(spec.joints.clone()));
        }
        out.clear();
        for &j in self.joints() {
            let p = spec.position_of(j).expect("same joint set").to_f32();
            if self.descriptor.normalize_targets {
                out.extend_from_slice(&stats.normalize_joint(j, p));
            } else {
                out.extend_from_slice(&p);
            }
        }
        Ok(())
    }

    /// One latent solver pass.
    pub fn forward(&self, z: &[f32], targets: &[f32]) -> Result<Vec<f32>, SolverError> {
        let mut out = Vec::new();
        let mut input = Vec::new();
        self.forward_into(
            z,
            targets,
            &mut input,
            &mut out,
            &mut InferenceScratch::default(),
        )?;
        Ok(out)
    }

    pub fn forward_into(
        &self,
        z: &[f32],
        targets: &[f32],
        input: &mut Vec<f32>,
        out: &mut Vec<f32>,
        scratch: &mut InferenceScratch,
    ) -> Result<(), SolverError> {
        let latent = self.latent_dim();
        if z.len() != latent || targets.len() != 3 * self.joints().len() {
            return Err(SolverError::DimensionMismatch {
                expected: self.input_width(),
                found: z.len() + targets.len(),
            });
        }
        input.clear();
        input.extend_from_slice(z);
        input.extend_from_slice(targets);
        Ok(self.network.infer(input, out, scratch)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SolverError> {
        Ok(nn::save_weights(&self.network)?)
    }
}

fn joint_seed(joints: &[usize]) -> u64 {
    joints
        .iter()
        .fold(0xC0FFEE, |acc, &j| acc.rotate_left(7) ^ (j as u64 + 1))
}

/// File stem used for a solver's weight and descriptor files.
pub fn solver_file_stem(joints: &[usize]) -> String {
    let names: Vec<&str> = joints.iter().map(|&j| JOINT_NAMES[j]).collect();
    format!("solver_{}", names.join("_"))
}

/// Target-weighted pose loss and its gradient.
///
/// `MSE` over the 3n target coordinates plus `k` times the `MSE` over the
/// remaining coordinates.
pub fn solver_loss(
    x_hat: &[f32],
    x_prime: &[f32],
    targets: &[usize],
    k: f32,
) -> Result<(f64, Vec<f32>), SolverError> {
    let x_hat = ArrayView2::from_shape((1, x_hat.len()), x_hat).expect("single row");
    let x_prime = ArrayView2::from_shape((1, x_prime.len()), x_prime).expect("single row");
    let (loss, grad) = solver_loss_batch(x_hat, x_prime, targets, k)?;
    Ok((loss, grad.into_raw_vec_and_offset().0))
}

/// Batch mean of [`solver_loss`].
pub fn solver_loss_batch(
    x_hat: ArrayView2<'_, f32>,
    x_prime: ArrayView2<'_, f32>,
    targets: &[usize],
    k: f32,
) -> Result<(f64, Array2<f32>), SolverError> {
    validate_joint_set(targets)?;
    if x_hat.dim() != x_prime.dim() || x_hat.ncols() != POSE_DIM {
        return Err(SolverError::DimensionMismatch {
            expected: POSE_DIM,
            found: x_prime.ncols(),
        });
    }
    let mut is_target = [false; POSE_DIM];
    for &j in targets {
        is_target[3 * j..3 * j + 3].fill(true);
    }
    let n_t = (3 * targets.len()) as f64;
    let n_r = POSE_DIM as f64 - n_t;
    let rows = x_hat.nrows().max(1) as f64;
    let k = k as f64;
    let (w_t, w_r) = (1.0 / n_t, k / n_r);
    let mut loss = 0.0;
    let mut grad = Array2::<f32>::zeros(x_hat.dim());
    for (r, (hat, prime)) in x_hat.rows().into_iter().zip(x_prime.rows()).enumerate() {
        for c in 0..POSE_DIM {
            let d = hat[c] as f64 - prime[c] as f64;
            let w = if is_target[c] { w_t } else { w_r };
            loss += w * d * d;
            grad[[r, c]] = (2.0 * w * d / rows) as f32;
        }
    }
    Ok((loss / rows, grad))
}

/// Draws a seeded batch of same-clip pairs as normalized `x`, normalized `x'`
/// and solver target features.
struct PairBatch {
    x: Array2<f32>,
    x_prime: Array2<f32>,
    targets: Array2<f32>,
}

fn sample_batch(
    dataset: &PoseDataset,
    split: Split,
    joints: &[usize],
    normalize_targets: bool,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Option<PairBatch> {
    let sampler = dataset.pair_sampler(split);
    if sampler.is_empty() {
        return None;
    }
    let stats = &dataset.stats;
    let mut x = Array2::zeros((size, POSE_DIM));
    let mut x_prime = Array2::zeros((size, POSE_DIM));
    let mut targets = Array2::zeros((size, 3 * joints.len()));
    for r in 0..size {
        let pair = sampler.sample(rng).expect("sampler is non-empty");
        let xn = stats.normalize(pair.x);
        let xpn = stats.normalize(pair.x_prime);
        x.row_mut(r).as_slice_mut().unwrap().copy_from_slice(&xn);
        x_prime
            .row_mut(r)
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(&xpn);
        let mut t = targets.row_mut(r);
        for (k, &j) in joints.iter().enumerate() {
            for a in 0..3 {
                t[3 * k + a] = if normalize_targets {
                    xpn[3 * j + a]
                } else {
                    pair.x_prime.0[3 * j + a]
                };
            }
        }
    }
    Some(PairBatch {
        x,
        x_prime,
        targets,
    })
}

fn concat_columns(a: &Array2<f32>, b: &Array2<f32>) -> Array2<f32> {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).expect("matching row counts")
}

fn batch_loss(
    solver: &SolverModel,
    ae: &PoseAutoencoder,
    batch: &PairBatch,
) -> Result<f64, SolverError> {
    let z = ae.encode_batch(batch.x.view())?;
    let z_hat = solver
        .network
        .predict(concat_columns(&z, &batch.targets).view())?;
    let x_hat = ae.model.predict_layers(ae.decoder_layers(), z_hat.view())?;
    Ok(solver_loss_batch(
        x_hat.view(),
        batch.x_prime.view(),
        solver.joints(),
        solver.descriptor.k,
    )?
    .0)
}

/// Trains a solver for `joints` against a frozen autoencoder.
///
/// One epoch is `ceil(training poses / batch size)` steps of freshly sampled
/// same-clip pairs. The loss is applied to the decoded pose in normalized
/// units and gradients flow through the decoder into the solver only.
pub fn train_solver(
    dataset: &PoseDataset,
    ae: &PoseAutoencoder,
    joints: &[usize],
    config: &SolverConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<(SolverModel, Vec<EpochLoss>), SolverError> {
    let mut solver = SolverModel::new(joints, ae.latent_dim(), &dataset.stats, config)?;
    if dataset.pair_sampler(Split::Train).is_empty() {
        return Err(SolverError::EmptyDataset);
    }
    let batch_size = config.batch_size.max(1);
    let train_poses = dataset.poses(Split::Train).len();
    let steps = train_poses.div_ceil(batch_size).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ joint_seed(joints) ^ 0x501);
    let validation = sample_batch(
        dataset,
        Split::Validation,
        joints,
        config.normalize_targets,
        config.validation_pairs,
        &mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x7A1),
    )
    .filter(|b| b.x.nrows() > 0);

    let mut adam = AdamState::new(
        AdamConfig::with_learning_rate(config.learning_rate),
        &solver.network.param_blocks(),
    );
    let decoder = ae.decoder_layers();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut sum = 0.0;
        for step in 0..steps {
            let batch = sample_batch(
                dataset,
                Split::Train,
                joints,
                config.normalize_targets,
                batch_size,
                &mut rng,
            )
            .expect("checked non-empty");
            let z = ae.encode_batch(batch.x.view())?;
            let input = concat_columns(&z, &batch.targets);
            let solver_cache = solver.network.forward(input.view())?;
            let decoder_cache = ae
                .model
                .forward_layers(decoder.clone(), solver_cache.output().view())?;
            let (loss, grad) = solver_loss_batch(
                decoder_cache.output().view(),
                batch.x_prime.view(),
                joints,
                config.k,
            )?;
            if !loss.is_finite() {
                return Err(SolverError::NonFiniteLoss { epoch, step });
            }
            sum += loss;
            let grad_z = ae.model.backward_input(&decoder_cache, grad.view())?;
            let grads = solver.network.backward(&solver_cache, grad_z.view())?;
            adam.step(&mut solver.network.param_blocks_mut(), &grads.blocks())?;
        }
        let entry = EpochLoss {
            epoch: epoch + 1,
            train: sum / steps as f64,
            validation: validation
                .as_ref()
                .map(|b| batch_loss(&solver, ae, b))
                .transpose()?,
        };
        on_epoch(&entry);
        history.push(entry);
    }
    Ok((solver, history))
}

/// Reusable buffers for [`SolverSet::solve_into`].
#[derive(Debug, Default, Clone)]
pub struct SolveScratch {
    nn: InferenceScratch,
    x: Vec<f32>,
    z: Vec<f32>,
    z_next: Vec<f32>,
    input: Vec<f32>,
    targets: Vec<f32>,
}

/// An autoencoder, its normalization statistics and a catalog of solvers.
#[derive(Debug, Clone)]
pub struct SolverSet {
    pub autoencoder: PoseAutoencoder,
    pub stats: NormStats,
    pub solvers: Vec<SolverModel>,
}

impl SolverSet {
    pub fn new(
        autoencoder: PoseAutoencoder,
        stats: NormStats,
        solvers: Vec<SolverModel>,
    ) -> Result<Self, SolverError> {
        let hash = stats.hash_hex();
        for s in &solvers {
            if s.descriptor.stats_hash != hash {
                return Err(SolverError::StatsMismatch {
                    solver: s.descriptor.stats_hash.clone(),
                    loaded: hash,
                });
            }
            if s.latent_dim() != autoencoder.latent_dim() {
                return Err(SolverError::DimensionMismatch {
                    expected: autoencoder.latent_dim(),
                    found: s.latent_dim(),
                });
            }
        }
        Ok(Self {
            autoencoder,
            stats,
            solvers,
        })
    }

    pub fn solver_for(&self, joints: &[usize]) -> Option<&SolverModel> {
        self.solvers.iter().find(|s| same_set(s.joints(), joints))
    }

    /// Joint sets of every loaded solver.
    pub fn catalog(&self) -> Vec<Vec<usize>> {
        self.solvers.iter().map(|s| s.joints().to_vec()).collect()
    }

    /// Solves with a single solver.
    pub fn solve_pose(
        &self,
        pose: &Pose,
        spec: &TargetSpec,
        post_process: bool,
    ) -> Result<Pose, SolverError> {
        self.compose(pose, std::slice::from_ref(spec), post_process)
    }

    /// Runs the solvers for `specs` in order between one encode and decode.
    pub fn compose(
        &self,
        pose: &Pose,
        specs: &[TargetSpec],
        post_process: bool,
    ) -> Result<Pose, SolverError> {
        self.solve_into(pose, specs, post_process, &mut SolveScratch::default())
    }

    pub fn solve_into(
        &self,
        pose: &Pose,
        specs: &[TargetSpec],
        post_process: bool,
        scratch: &mut SolveScratch,
    ) -> Result<Pose, SolverError> {
        let solvers = self.resolve(specs)?;
        let SolveScratch {
            nn,
            x,
            z,
            z_next,
            input,
            targets,
        } = scratch;
        x.clear();
        x.extend_from_slice(&self.stats.normalize(pose));
        self.autoencoder.encode_into(x, z, nn)?;
        for (solver, spec) in solvers.iter().zip(specs) {
            solver.target_features(spec, &self.stats, targets)?;
            solver.forward_into(z, targets, input, z_next, nn)?;
            std::mem::swap(z, z_next);
        }
        self.autoencoder.decode_into(z, x, nn)?;
        let out = self.stats.denormalize(x);
        Ok(if post_process {
            let topo = canonical_topology();
            bone_length_postprocess(&out, &bone_lengths(pose, topo), topo)
        } else {
            out
        })
    }

    /// Decoded pose after each pass of the chain, without post-processing.
    pub fn compose_trace(
        &self,
        pose: &Pose,
        specs: &[TargetSpec],
    ) -> Result<Vec<Pose>, SolverError> {
        let solvers = self.resolve(specs)?;
        let mut z = self.autoencoder.encode(&self.stats.normalize(pose))?;
        let mut targets = Vec::new();
        let mut out = Vec::with_capacity(specs.len());
        for (solver, spec) in solvers.iter().zip(specs) {
            solver.target_features(spec, &self.stats, &mut targets)?;
            z = solver.forward(&z, &targets)?;
            out.push(self.stats.denormalize(&self.autoencoder.decode(&z)?));
        }
        Ok(out)
    }

    /// Latent input widths of the solver passes for `specs`.
    pub fn pass_widths(&self, specs: &[TargetSpec]) -> Result<Vec<usize>, SolverError> {
        Ok(self
            .resolve(specs)?
            .iter()
            .map(|s| s.input_width())
            .collect())
    }

    fn resolve(&self, specs: &[TargetSpec]) -> Result<Vec<&SolverModel>, SolverError> {
        let mut used = BTreeSet::new();
        let mut out = Vec::with_capacity(specs.len());
        for spec in specs {
            for &j in &spec.joints {
                if !used.insert(j) {
                    return Err(SolverError::Overlap(j));
                }
            }
            out.push(
                self.solver_for(&spec.joints)
                    .ok_or_else(|| SolverError::NoSolver(spec.joints.clone()))?,
            );
        }
        Ok(out)
    }
}
