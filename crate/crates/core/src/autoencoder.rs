//! Pose autoencoder defining the latent pose space.
//!
//! The encoder is `hidden_layers` ReLU layers followed by a linear layer to
//! the latent code. The decoder mirrors it layer for layer and reuses the
//! encoder matrices transposed, with its own biases.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::{NormStats, PoseDataset, Split};
use crate::nn::{
    self, Activation, AdamConfig, AdamState, InferenceScratch, LayerSpec, MlpModel, NnError,
};
use crate::skeleton::{Pose, POSE_DIM};

#[derive(Debug, Error)]
pub enum AutoencoderError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("weights do not describe a {POSE_DIM}-dimensional autoencoder: {0}")]
    NotAnAutoencoder(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AutoencoderConfig {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Decoder reuses the transposed encoder matrices.
    pub tied: bool,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden_width: 200,
            hidden_layers: 2,
            latent_dim: 64,
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-4,
            seed: 0,
            tied: true,
        }
    }
}

impl AutoencoderConfig {
    fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut dims = vec![POSE_DIM];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(self.latent_dim);
        let enc_len = dims.len() - 1;
        let mut specs = Vec::with_capacity(2 * enc_len);
        for k in 0..enc_len {
            let act = if k + 1 == enc_len {
                Activation::Linear
            } else {
                Activation::Relu
            };
            specs.push(LayerSpec::new(dims[k], dims[k + 1], act));
        }
        for k in 0..enc_len {
            let src = enc_len - 1 - k;
            let (i, o) = (dims[src + 1], dims[src]);
            let act = if k + 1 == enc_len {
                Activation::Linear
            } else {
                Activation::Relu
            };
            specs.push(if self.tied {
                LayerSpec::tied(i, o, act, src)
            } else {
                LayerSpec::new(i, o, act)
            });
        }
        specs
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseAutoencoder {
    pub model: MlpModel,
    encoder_len: usize,
}

impl PoseAutoencoder {
    pub fn new(config: &AutoencoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = MlpModel::new(&config.layer_specs(), &mut rng)
            .expect("autoencoder layer specs are consistent by construction");
        Self {
            encoder_len: config.hidden_layers + 1,
            model,
        }
    }

    /// Wraps a loaded network, checking it has the mirrored autoencoder shape.
    pub fn from_model(model: MlpModel) -> Result<Self, AutoencoderError> {
        let n = model.layers.len();
        let bad = |m: &str| AutoencoderError::NotAnAutoencoder(m.to_string());
        if n < 2 || n % 2 != 0 {
            return Err(bad("layer count must be even"));
        }
        if model.in_dim() != POSE_DIM || model.out_dim() != POSE_DIM {
            return Err(bad("input and output width must be 63"));
        }
        let encoder_len = n / 2;
        for k in 0..encoder_len {
            let (e, d) = (&model.layers[k], &model.layers[n - 1 - k]);
            if e.in_dim != d.out_dim || e.out_dim != d.in_dim {
                return Err(bad("decoder does not mirror the encoder"));
            }
        }
        Ok(Self { model, encoder_len })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AutoencoderError> {
        Self::from_model(nn::load_weights(bytes)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, AutoencoderError> {
        Ok(nn::save_weights(&self.model)?)
    }

    pub fn latent_dim(&self) -> usize {
        self.model.layers[self.encoder_len - 1].out_dim
    }

    pub fn encoder_layers(&self) -> std::ops::Range<usize> {
        0..self.encoder_len
    }

    pub fn decoder_layers(&self) -> std::ops::Range<usize> {
        self.encoder_len..self.model.layers.len()
    }

    /// Latent code of one normalized pose.
    pub fn encode(&self, x_norm: &[f32]) -> Result<Vec<f32>, AutoencoderError> {
        let mut out = Vec::new();
        self.encode_into(x_norm, &mut out, &mut InferenceScratch::default())?;
        Ok(out)
    }

    pub fn encode_into(
        &self,
        x_norm: &[f32],
        out: &mut Vec<f32>,
        scratch: &mut InferenceScratch,
    ) -> Result<(), AutoencoderError> {
        Ok(self
            .model
            .infer_layers(self.encoder_layers(), x_norm, out, scratch)?)
    }

    /// Normalized pose reconstructed from a latent code.
    pub fn decode(&self, z: &[f32]) -> Result<Vec<f32>, AutoencoderError> {
        let mut out = Vec::new();
        self.decode_into(z, &mut out, &mut InferenceScratch::default())?;
        Ok(out)
    }

    pub fn decode_into(
        &self,
        z: &[f32],
        out: &mut Vec<f32>,
        scratch: &mut InferenceScratch,
    ) -> Result<(), AutoencoderError> {
        Ok(self
            .model
            .infer_layers(self.decoder_layers(), z, out, scratch)?)
    }

    pub fn encode_batch(&self, x: ArrayView2<'_, f32>) -> Result<Array2<f32>, AutoencoderError> {
        Ok(self.model.predict_layers(self.encoder_layers(), x)?)
    }

    pub fn reconstruct_batch(
        &self,
        x: ArrayView2<'_, f32>,
    ) -> Result<Array2<f32>, AutoencoderError> {
        Ok(self.model.predict(x)?)
    }

    /// Mean normalized-space reconstruction loss over rows of `x`.
    pub fn reconstruction_loss(&self, x: ArrayView2<'_, f32>) -> Result<f64, AutoencoderError> {
        let out = self.reconstruct_batch(x)?;
        Ok(nn::mse_batch(out.view(), x)?.0)
    }

    /// Mean per-joint position error in meters after denormalization.
    pub fn reconstruction_error_m(
        &self,
        stats: &NormStats,
        poses: &[&Pose],
    ) -> Result<f64, AutoencoderError> {
        if poses.is_empty() {
            return Ok(0.0);
        }
        let flat: Vec<f32> = poses.iter().flat_map(|p| stats.normalize(p)).collect();
        let x =
            ArrayView2::from_shape((poses.len(), POSE_DIM), &flat).expect("row-major pose block");
        let out = self.reconstruct_batch(x)?;
        let total: f64 = poses
            .iter()
            .zip(out.rows())
            .map(|(p, row)| {
                let rec = stats.denormalize(row.as_slice().expect("standard layout"));
                rec.mean_joint_distance(p)
            })
            .sum();
        Ok(total / poses.len() as f64)
    }

    /// Trains on the dataset's training split; returns per-epoch losses.
    ///
    /// Each epoch visits a fresh seeded permutation of the training poses in
    /// batches of `config.batch_size` (the final batch may be smaller).
    pub fn train(
        &mut self,
        dataset: &PoseDataset,
        config: &AutoencoderConfig,
        mut on_epoch: impl FnMut(&EpochLoss),
    ) -> Result<Vec<EpochLoss>, AutoencoderError> {
        let train = dataset.normalized_matrix(Split::Train);
        let n = train.len() / POSE_DIM;
        if n == 0 {
            return Err(AutoencoderError::EmptyDataset);
        }
        let train = Array2::from_shape_vec((n, POSE_DIM), train).expect("row-major pose block");
        let val = dataset.normalized_matrix(Split::Validation);
        let val = Array2::from_shape_vec((val.len() / POSE_DIM, POSE_DIM), val)
            .expect("row-major pose block");

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_AE);
        let mut adam = AdamState::new(
            AdamConfig::with_learning_rate(config.learning_rate),
            &self.model.param_blocks(),
        );
        let batch_size = config.batch_size.max(1);
        let mut order: Vec<usize> = (0..n).collect();
        let mut history = Vec::with_capacity(config.epochs);
        let mut batch = Array2::<f32>::zeros((batch_size, POSE_DIM));
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for (b, idx) in order.chunks(batch_size).enumerate() {
                let mut view = batch.slice_mut(s![..idx.len(), ..]);
                for (mut row, &i) in view.rows_mut().into_iter().zip(idx) {
                    row.assign(&train.row(i));
                }
                let x = batch.slice(s![..idx.len(), ..]);
                let cache = self.model.forward(x)?;
                let (loss, grad) = nn::mse_batch(cache.output().view(), x)?;
                if !loss.is_finite() {
                    return Err(AutoencoderError::NonFiniteLoss { epoch, batch: b });
                }
                sum += loss * idx.len() as f64;
                let grads = self.model.backward(&cache, grad.view())?;
                adam.step(&mut self.model.param_blocks_mut(), &grads.blocks())?;
            }
            let validation = if val.nrows() > 0 {
                Some(self.reconstruction_loss(val.view())?)
            } else {
                None
            };
            let entry = EpochLoss {
                epoch: epoch + 1,
                train: sum / n as f64,
                validation,
            };
            on_epoch(&entry);
            history.push(entry);
        }
        Ok(history)
    }
}

/// Formats a loss history as `epoch train validation` lines.
pub fn format_loss_log(history: &[EpochLoss]) -> String {
    let mut out = String::from("# epoch\ttrain_loss\tvalidation_loss\n");
    for e in history {
        let val = e
            .validation
            .map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!("{}\t{:.6}\t{}\n", e.epoch, e.train, val));
    }
    out
}
