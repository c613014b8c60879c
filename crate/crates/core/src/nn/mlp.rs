use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// One dense layer, `y = act(W x + b)` with `W` of shape `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Parameters of a feed-forward network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Activations recorded by a forward pass, consumed by [`MlpParams::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }

    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre
    }

    /// Input to each layer; hidden post-activations are `inputs()[1..]`.
    pub fn inputs(&self) -> &[Matrix] {
        &self.inputs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Parameter gradients, shaped like the [`MlpParams`] they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weight.fill(0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Flat views in the same order as [`MlpParams::buffers`].
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.buffers().iter().all(|b| b.iter().all(|&v| v == 0.0))
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::dim(
                    format!("layer {i} bias"),
                    layer.output_dim(),
                    layer.bias.len(),
                ));
            }
            if i > 0 && layers[i - 1].output_dim() != layer.input_dim() {
                return Err(Error::dim(
                    format!("layer {i} input"),
                    layers[i - 1].output_dim(),
                    layer.input_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Relu hidden layers and an identity output layer, weights drawn
    /// uniformly from `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    weight: Matrix::from_vec(fan_out, fan_in, data).expect("sized above"),
                    bias: vec![0.0; fan_out],
                    activation: if i == last {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Flat parameter views: for each layer, weights then bias.
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Zeroes the weights and bias of the output layer.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.fill(0.0);
        last.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::dim("network input", self.input_dim(), inputs.cols()));
        }
        Ok(())
    }

    fn layer_forward(layer: &Layer, input: &Matrix) -> Matrix {
        let mut pre = Matrix::zeros(input.rows(), layer.output_dim());
        for b in 0..input.rows() {
            let x = input.row(b);
            let out = pre.row_mut(b);
            for (o, slot) in out.iter_mut().enumerate() {
                *slot = dot(layer.weight.row(o), x) + layer.bias[o];
            }
        }
        pre
    }

    /// Forward pass over a batch (one sample per row) without recording a cache.
    pub fn predict_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs)?;
        let mut current = inputs.clone();
        for layer in &self.layers {
            let mut next = Self::layer_forward(layer, &current);
            if layer.activation != Activation::Identity {
                next.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
            }
            current = next;
        }
        Ok(current)
    }

    /// Forward pass over a batch, keeping everything the backward pass needs.
    pub fn forward_batch(&self, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(inputs)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut current = inputs.clone();
        for layer in &self.layers {
            let pre = Self::layer_forward(layer, &current);
            let mut post = pre.clone();
            if layer.activation != Activation::Identity {
                post.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v = layer.activation.apply(*v));
            }
            cache.inputs.push(current);
            cache.pre.push(pre);
            current = post;
        }
        Ok((current, cache))
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let batch = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let (out, cache) = self.forward_batch(&batch)?;
        Ok((out.into_vec(), cache))
    }

    fn check_cache(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<()> {
        if cache.inputs.len() != self.layers.len() || cache.pre.len() != self.layers.len() {
            return Err(Error::Consistency(format!(
                "cache holds {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        let batch = cache.batch_size();
        for (i, layer) in self.layers.iter().enumerate() {
            if cache.inputs[i].shape() != (batch, layer.input_dim())
                || cache.pre[i].shape() != (batch, layer.output_dim())
            {
                return Err(Error::Consistency(format!(
                    "cache for layer {i} does not match network shape"
                )));
            }
        }
        if output_grad.shape() != (batch, self.output_dim()) {
            return Err(Error::Consistency(format!(
                "output gradient is {}x{}, cache expects {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                batch,
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Backpropagates `output_grad` (dLoss/dOutput per row), adding parameter
    /// gradients into `grads`. Returns dLoss/dInput.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grad: &Matrix,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        self.check_cache(cache, output_grad)?;
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Consistency("gradient buffer shape mismatch".into()));
        }
        let mut upstream = output_grad.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[i];
            let input = &cache.inputs[i];
            // upstream becomes dLoss/dPre in place
            if layer.activation != Activation::Identity {
                for (g, &p) in upstream.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *g *= layer.activation.derivative(p);
                }
            }
            let grad = &mut grads.layers[i];
            let mut downstream = Matrix::zeros(input.rows(), layer.input_dim());
            for b in 0..input.rows() {
                let g_row = upstream.row(b);
                let x_row = input.row(b);
                for (o, &g) in g_row.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    grad.bias[o] += g;
                    axpy(g, x_row, grad.weight.row_mut(o));
                    axpy(g, layer.weight.row(o), downstream.row_mut(b));
                }
            }
            upstream = downstream;
        }
        Ok(upstream)
    }

    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<(Gradients, Matrix)> {
        let mut grads = Gradients::zeros_like(self);
        let input_grad = self.backward_into(cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Single-sample convenience wrapper around [`MlpParams::backward`].
    pub fn backward_single(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let g = Matrix::from_vec(1, output_grad.len(), output_grad.to_vec())?;
        let (grads, input_grad) = self.backward(cache, &g)?;
        Ok((grads, input_grad.into_vec()))
    }
}
