use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Linear),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
        }
    }
}

/// Where a layer's weight matrix comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    /// Owned `out x in` matrix.
    Own(Array2<f32>),
    /// Transpose of the matrix owned by the given (earlier) layer.
    TiedTranspose(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Weights,
    pub bias: Array1<f32>,
}

impl DenseLayer {
    pub fn tie(&self) -> Option<usize> {
        match self.weights {
            Weights::TiedTranspose(src) => Some(src),
            Weights::Own(_) => None,
        }
    }
}

/// Shape description used to build a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub tie: Option<usize>,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
            tie: None,
        }
    }

    pub fn tied(in_dim: usize, out_dim: usize, activation: Activation, source: usize) -> Self {
        Self {
            tie: Some(source),
            ..Self::new(in_dim, out_dim, activation)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
}

/// Activations retained by [`MlpModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    inputs: Vec<Array2<f32>>,
    /// Pre-activation values per layer.
    pre: Vec<Array2<f32>>,
    start: usize,
    shape: Vec<(usize, usize)>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f32> {
        self.inputs.last().expect("cache holds at least the input")
    }
}

/// Gradients for every parameter block, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// `Some` for layers owning a matrix (tied uses are accumulated here).
    pub weights: Vec<Option<Array2<f32>>>,
    pub biases: Vec<Array1<f32>>,
    /// Gradient with respect to the network input.
    pub input: Array2<f32>,
}

impl Gradients {
    /// Parameter gradient blocks in [`MlpModel::param_blocks_mut`] order.
    pub fn blocks(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            if let Some(w) = w {
                out.push(w.as_slice().expect("standard layout"));
            }
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0))
    }
}

/// Reusable buffers for single-sample inference.
#[derive(Debug, Default, Clone)]
pub struct InferenceScratch {
    a: Vec<f32>,
    b: Vec<f32>,
}

impl MlpModel {
    /// Builds a model with uniform Glorot initialization and zero biases.
    pub fn new(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self, NnError> {
        let mut layers: Vec<DenseLayer> = Vec::with_capacity(specs.len());
        for spec in specs {
            let weights = match spec.tie {
                Some(src) => Weights::TiedTranspose(src),
                None => {
                    let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt() as f32;
                    Weights::Own(Array2::from_shape_fn((spec.out_dim, spec.in_dim), |_| {
                        rng.random_range(-limit..limit)
                    }))
                }
            };
            layers.push(DenseLayer {
                in_dim: spec.in_dim,
                out_dim: spec.out_dim,
                activation: spec.activation,
                weights,
                bias: Array1::zeros(spec.out_dim),
            });
        }
        let model = Self { layers };
        model.validate()?;
        Ok(model)
    }

    /// Checks dimension chaining and tie references.
    pub fn validate(&self) -> Result<(), NnError> {
        if self.layers.is_empty() {
            return Err(NnError::InvalidStack("no layers".into()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 && self.layers[l - 1].out_dim != layer.in_dim {
                return Err(NnError::InvalidStack(format!(
                    "layer {l} expects {} inputs but layer {} produces {}",
                    layer.in_dim,
                    l - 1,
                    self.layers[l - 1].out_dim
                )));
            }
            if layer.bias.len() != layer.out_dim {
                return Err(NnError::InvalidStack(format!("layer {l} bias length")));
            }
            match &layer.weights {
                Weights::Own(w) => {
                    if w.dim() != (layer.out_dim, layer.in_dim) {
                        return Err(NnError::InvalidStack(format!("layer {l} weight shape")));
                    }
                }
                Weights::TiedTranspose(src) => {
                    let ok = *src < l
                        && matches!(self.layers[*src].weights, Weights::Own(_))
                        && self.layers[*src].in_dim == layer.out_dim
                        && self.layers[*src].out_dim == layer.in_dim;
                    if !ok {
                        return Err(NnError::InvalidStack(format!(
                            "layer {l} cannot tie to layer {src}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    /// Effective `out x in` weight view of layer `l`.
    pub fn weight(&self, l: usize) -> ArrayView2<'_, f32> {
        match &self.layers[l].weights {
            Weights::Own(w) => w.view(),
            Weights::TiedTranspose(src) => match &self.layers[*src].weights {
                Weights::Own(w) => w.t(),
                Weights::TiedTranspose(_) => unreachable!("validated: ties point at owned weights"),
            },
        }
    }

    /// Number of stored scalars (tied matrices counted once).
    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match &l.weights {
                Weights::Own(w) => w.len() + l.bias.len(),
                Weights::TiedTranspose(_) => l.bias.len(),
            })
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.bias.iter().all(|v| v.is_finite())
                && match &l.weights {
                    Weights::Own(w) => w.iter().all(|v| v.is_finite()),
                    Weights::TiedTranspose(_) => true,
                }
        })
    }

    fn shape(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.in_dim, l.out_dim)).collect()
    }

    /// Batched forward pass (`batch x in` rows) keeping a cache for backward.
    pub fn forward(&self, input: ArrayView2<'_, f32>) -> Result<ForwardCache, NnError> {
        self.forward_layers(0..self.layers.len(), input)
    }

    /// Forward pass through a contiguous sub-stack of layers.
    pub fn forward_layers(
        &self,
        range: Range<usize>,
        input: ArrayView2<'_, f32>,
    ) -> Result<ForwardCache, NnError> {
        self.check_range(&range, input.ncols())?;
        let mut inputs = Vec::with_capacity(range.len() + 1);
        let mut pre = Vec::with_capacity(range.len());
        inputs.push(input.to_owned());
        for (k, l) in range.clone().enumerate() {
            let layer = &self.layers[l];
            let z = inputs[k].dot(&self.weight(l).t()) + &layer.bias;
            let a = z.mapv(|v| layer.activation.apply(v));
            pre.push(z);
            inputs.push(a);
        }
        Ok(ForwardCache {
            inputs,
            pre,
            start: range.start,
            shape: self.shape(),
        })
    }

    fn check_range(&self, range: &Range<usize>, width: usize) -> Result<(), NnError> {
        if range.is_empty() || range.end > self.layers.len() {
            return Err(NnError::InvalidStack(format!(
                "layer range {range:?} out of bounds"
            )));
        }
        let expected = self.layers[range.start].in_dim;
        if width != expected {
            return Err(NnError::DimensionMismatch {
                expected,
                found: width,
            });
        }
        Ok(())
    }

    /// Batched forward pass without retaining intermediates.
    pub fn predict(&self, input: ArrayView2<'_, f32>) -> Result<Array2<f32>, NnError> {
        self.predict_layers(0..self.layers.len(), input)
    }

    pub fn predict_layers(
        &self,
        range: Range<usize>,
        input: ArrayView2<'_, f32>,
    ) -> Result<Array2<f32>, NnError> {
        self.check_range(&range, input.ncols())?;
        let mut x = input.to_owned();
        for l in range {
            let layer = &self.layers[l];
            let mut z = x.dot(&self.weight(l).t()) + &layer.bias;
            z.mapv_inplace(|v| layer.activation.apply(v));
            x = z;
        }
        Ok(x)
    }

    /// Reverse-mode gradients of a scalar loss given `dL/d(output)`.
    ///
    /// Layers outside the cached range get zero gradients. Gradients of tied
    /// layers are accumulated (transposed) into the owning layer's block.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f32>,
    ) -> Result<Gradients, NnError> {
        self.backward_impl(cache, output_grad, true)
    }

    /// Gradient with respect to the input only (parameters treated as frozen).
    pub fn backward_input(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f32>,
    ) -> Result<Array2<f32>, NnError> {
        Ok(self.backward_impl(cache, output_grad, false)?.input)
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        output_grad: ArrayView2<'_, f32>,
        param_grads: bool,
    ) -> Result<Gradients, NnError> {
        if cache.shape != self.shape() {
            return Err(NnError::StaleCache);
        }
        if output_grad.dim() != cache.output().dim() {
            return Err(NnError::DimensionMismatch {
                expected: cache.output().ncols(),
                found: output_grad.ncols(),
            });
        }
        let mut weights: Vec<Option<Array2<f32>>> = self
            .layers
            .iter()
            .map(|l| match &l.weights {
                Weights::Own(w) if param_grads => Some(Array2::zeros(w.dim())),
                _ => None,
            })
            .collect();
        let mut biases: Vec<Array1<f32>> = self
            .layers
            .iter()
            .map(|l| Array1::zeros(if param_grads { l.out_dim } else { 0 }))
            .collect();
        let mut grad = output_grad.to_owned();
        for k in (0..cache.pre.len()).rev() {
            let l = cache.start + k;
            let layer = &self.layers[l];
            if layer.activation == Activation::Relu {
                ndarray::Zip::from(&mut grad)
                    .and(&cache.pre[k])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            if param_grads {
                // dW_eff = dZ^T A_prev   (out x in)
                let dw = grad.t().dot(&cache.inputs[k]);
                match &layer.weights {
                    Weights::Own(_) => *weights[l].as_mut().unwrap() += &dw,
                    Weights::TiedTranspose(src) => *weights[*src].as_mut().unwrap() += &dw.t(),
                }
                biases[l] = grad.sum_axis(Axis(0));
            }
            grad = grad.dot(&self.weight(l));
        }
        Ok(Gradients {
            weights,
            biases,
            input: grad,
        })
    }

    /// Parameter blocks in a fixed order: per layer, owned matrix then bias.
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            if let Weights::Own(w) = &mut layer.weights {
                out.push(w.as_slice_mut().expect("standard layout"));
            }
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn param_blocks(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Weights::Own(w) = &layer.weights {
                out.push(w.as_slice().expect("standard layout"));
            }
            out.push(layer.bias.as_slice().expect("standard layout"));
        }
        out
    }

    /// Single-sample forward pass writing the result into `out`.
    pub fn infer(
        &self,
        input: &[f32],
        out: &mut Vec<f32>,
        scratch: &mut InferenceScratch,
    ) -> Result<(), NnError> {
        self.infer_layers(0..self.layers.len(), input, out, scratch)
    }

    pub fn infer_layers(
        &self,
        range: Range<usize>,
        input: &[f32],
        out: &mut Vec<f32>,
        scratch: &mut InferenceScratch,
    ) -> Result<(), NnError> {
        self.check_range(&range, input.len())?;
        let InferenceScratch { a, b } = scratch;
        a.clear();
        a.extend_from_slice(input);
        for layer in &self.layers[range] {
            b.clear();
            b.extend_from_slice(layer.bias.as_slice().expect("standard layout"));
            match &layer.weights {
                Weights::Own(w) => {
                    let w = w.as_slice().expect("standard layout");
                    for (o, row) in b.iter_mut().zip(w.chunks_exact(layer.in_dim)) {
                        *o += dot(row, a);
                    }
                }
                Weights::TiedTranspose(src) => {
                    let Weights::Own(w) = &self.layers[*src].weights else {
                        unreachable!("validated: ties point at owned weights")
                    };
                    let w = w.as_slice().expect("standard layout");
                    // y = W_src^T x, accumulated row by row of W_src.
                    for (&x, row) in a.iter().zip(w.chunks_exact(layer.out_dim)) {
                        if x != 0.0 {
                            axpy(x, row, b);
                        }
                    }
                }
            }
            if layer.activation == Activation::Relu {
                for v in b.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(a, b);
        }
        out.clear();
        out.extend_from_slice(a);
        Ok(())
    }
}

#[inline]
fn dot(x: &[f32], y: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for k in 0..8 {
            acc[k] += a[k] * b[k];
        }
    }
    let mut tail = 0.0;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    acc.iter().sum::<f32>() + tail
}

#[inline]
fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
