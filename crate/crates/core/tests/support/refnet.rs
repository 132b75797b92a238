//! Double-precision reference network and finite-difference helpers shared
//! by gradient tests.

#![allow(dead_code)]

use ndarray::{Array2, ArrayView2};
use posekit::nn::{mse_batch, Activation, MlpModel, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;

pub struct RefLayer {
    in_dim: usize,
    out_dim: usize,
    relu: bool,
    weight_block: Option<usize>,
    tie: Option<usize>,
    bias_block: usize,
}

/// Plain f64 re-implementation of the network used as the oracle.
pub struct RefNet {
    pub layers: Vec<RefLayer>,
    pub blocks: Vec<Vec<f64>>,
}

impl RefNet {
    pub fn from_model(model: &MlpModel) -> Self {
        let mut layers = Vec::new();
        let mut blocks = Vec::new();
        for layer in &model.layers {
            let (weight_block, tie) = match &layer.weights {
                Weights::Own(w) => {
                    blocks.push(w.iter().map(|&v| v as f64).collect());
                    (Some(blocks.len() - 1), None)
                }
                Weights::TiedTranspose(src) => (None, Some(*src)),
            };
            blocks.push(layer.bias.iter().map(|&v| v as f64).collect());
            layers.push(RefLayer {
                in_dim: layer.in_dim,
                out_dim: layer.out_dim,
                relu: layer.activation == Activation::Relu,
                weight_block,
                tie,
                bias_block: blocks.len() - 1,
            });
        }
        Self { layers, blocks }
    }

    pub fn weight(&self, l: usize, o: usize, i: usize) -> f64 {
        let layer = &self.layers[l];
        match layer.tie {
            None => self.blocks[layer.weight_block.unwrap()][o * layer.in_dim + i],
            // source matrix is (in_dim x out_dim) of this layer, stored row-major
            Some(src) => self.blocks[self.layers[src].weight_block.unwrap()][i * layer.out_dim + o],
        }
    }

    /// Output rows and the ReLU on/off pattern of every hidden unit.
    pub fn forward(
        &self,
        range: std::ops::Range<usize>,
        x: &[Vec<f64>],
    ) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut mask = Vec::new();
        let mut rows = x.to_vec();
        for l in range {
            let layer = &self.layers[l];
            rows = rows
                .iter()
                .map(|a| {
                    (0..layer.out_dim)
                        .map(|o| {
                            let mut z = self.blocks[layer.bias_block][o];
                            for (i, &ai) in a.iter().enumerate().take(layer.in_dim) {
                                z += self.weight(l, o, i) * ai;
                            }
                            if layer.relu {
                                mask.push(z > 0.0);
                                z.max(0.0)
                            } else {
                                z
                            }
                        })
                        .collect()
                })
                .collect();
        }
        (rows, mask)
    }

    pub fn loss(
        &self,
        range: std::ops::Range<usize>,
        x: &[Vec<f64>],
        target: &[Vec<f64>],
    ) -> (f64, Vec<bool>) {
        let (y, mask) = self.forward(range, x);
        let n = (y.len() * y[0].len()) as f64;
        let sum: f64 = y
            .iter()
            .zip(target)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, t)| (p - t) * (p - t)))
            .sum();
        (sum / n, mask)
    }
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f32> {
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.5f32..1.5))
}

pub fn to_rows(a: ArrayView2<'_, f32>) -> Vec<Vec<f64>> {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

/// Compares every parameter block (sampled entries) of one random instance.
/// Returns the number of entries checked and the worst per-block relative
/// error.
pub fn check_parameter_gradients(
    model: &MlpModel,
    seed: u64,
    samples_per_block: usize,
) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_rows(&mut rng, 6, model.in_dim());
    // Autoencoders reconstruct their input; other shapes get a random target.
    let t = if model.in_dim() == model.out_dim() {
        x.clone()
    } else {
        random_rows(&mut rng, 6, model.out_dim())
    };

    let cache = model.forward(x.view()).unwrap();
    let (_, grad) = mse_batch(cache.output().view(), t.view()).unwrap();
    let grads = model.backward(&cache, grad.view()).unwrap();
    let analytic_blocks = grads.blocks();

    let mut reference = RefNet::from_model(model);
    let (xr, tr) = (to_rows(x.view()), to_rows(t.view()));
    let full = 0..model.layers.len();
    let (_, base_mask) = reference.loss(full.clone(), &xr, &tr);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for b in 0..reference.blocks.len() {
        let len = reference.blocks[b].len();
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for _ in 0..samples_per_block.min(len) {
            let idx = rng.random_range(0..len);
            let orig = reference.blocks[b][idx];
            reference.blocks[b][idx] = orig + H;
            let (plus, mask_p) = reference.loss(full.clone(), &xr, &tr);
            reference.blocks[b][idx] = orig - H;
            let (minus, mask_m) = reference.loss(full.clone(), &xr, &tr);
            reference.blocks[b][idx] = orig;
            if mask_p != base_mask || mask_m != base_mask {
                continue;
            }
            numeric.push((plus - minus) / (2.0 * H));
            analytic.push(analytic_blocks[b][idx] as f64);
        }
        if numeric.is_empty() {
            continue;
        }
        worst = worst.max(relative_error(&analytic, &numeric));
        checked += numeric.len();
    }
    (checked, worst)
}

/// Target-weighted loss written out directly: mean squared error over the
/// target joints' coordinates plus `k` times that over all other coordinates,
/// averaged over rows.
pub fn weighted_pose_loss(y: &[Vec<f64>], target: &[Vec<f64>], joints: &[usize], k: f64) -> f64 {
    let mut total = 0.0;
    for (row, t) in y.iter().zip(target) {
        let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0.0, 0.0, 0.0);
        for c in 0..row.len() {
            let d2 = (row[c] - t[c]).powi(2);
            if joints.contains(&(c / 3)) {
                on += d2;
                n_on += 1.0;
            } else {
                off += d2;
                n_off += 1.0;
            }
        }
        total += on / n_on + k * off / n_off;
    }
    total / y.len() as f64
}

/// Gradient of the solver loss with respect to the solver's parameters,
/// back-propagated through the frozen decoder layers of `ae`. Checks one
/// random instance; returns entries checked and the worst per-block error.
pub fn check_solver_gradients(
    solver: &MlpModel,
    ae: &MlpModel,
    decoder: std::ops::Range<usize>,
    joints: &[usize],
    k: f32,
    seed: u64,
    samples_per_block: usize,
) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 4;
    let input = random_rows(&mut rng, rows, solver.in_dim());
    let x_prime = random_rows(&mut rng, rows, ae.out_dim());

    let solver_cache = solver.forward(input.view()).unwrap();
    let decoder_cache = ae
        .forward_layers(decoder.clone(), solver_cache.output().view())
        .unwrap();
    let (_, grad) = posekit::solver::solver_loss_batch(
        decoder_cache.output().view(),
        x_prime.view(),
        joints,
        k,
    )
    .unwrap();
    let grad_z = ae.backward_input(&decoder_cache, grad.view()).unwrap();
    let analytic_blocks = solver.backward(&solver_cache, grad_z.view()).unwrap();
    let analytic_blocks = analytic_blocks.blocks();

    let mut reference = RefNet::from_model(solver);
    let frozen = RefNet::from_model(ae);
    let (xr, tr) = (to_rows(input.view()), to_rows(x_prime.view()));
    let k = k as f64;
    let eval = |net: &RefNet| {
        let (z, m1) = net.forward(0..net.layers.len(), &xr);
        let (y, m2) = frozen.forward(decoder.clone(), &z);
        (weighted_pose_loss(&y, &tr, joints, k), [m1, m2].concat())
    };
    let (_, base_mask) = eval(&reference);
    let (mut checked, mut worst) = (0, 0.0f64);
    for b in 0..reference.blocks.len() {
        let len = reference.blocks[b].len();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for _ in 0..samples_per_block.min(len) {
            let idx = rng.random_range(0..len);
            let orig = reference.blocks[b][idx];
            reference.blocks[b][idx] = orig + H;
            let (plus, mask_p) = eval(&reference);
            reference.blocks[b][idx] = orig - H;
            let (minus, mask_m) = eval(&reference);
            reference.blocks[b][idx] = orig;
            if mask_p != base_mask || mask_m != base_mask {
                continue;
            }
            numeric.push((plus - minus) / (2.0 * H));
            analytic.push(analytic_blocks[b][idx] as f64);
        }
        if !numeric.is_empty() {
            worst = worst.max(relative_error(&analytic, &numeric));
            checked += numeric.len();
        }
    }
    (checked, worst)
}
