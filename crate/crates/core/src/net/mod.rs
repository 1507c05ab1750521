//! Fully-connected ReLU classifier with softmax cross-entropy and explicit
//! per-example backpropagation.

mod checkpoint;
mod forward;
mod gradient;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

use num_traits::Float;
use thiserror::Error;

use crate::rng::Rng;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use forward::{accuracy, evaluate, forward, Evaluation, ForwardPass};
pub use gradient::{per_example_gradients, GradientBuffer};

/// Floating-point element type of a network (`f32` or `f64`).
pub trait Real: Float + AddAssign + SubAssign + Sum + Default + Debug + Display + Send + Sync + 'static {
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        f64::from(self)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("architecture needs at least an input and an output width, got {0:?}")]
    Architecture(Vec<usize>),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("label {label} outside [0, {classes})")]
    Label { label: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One affine layer; `weights` is `fan_out x fan_in`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            fan_in,
            fan_out,
            weights: vec![T::zero(); fan_in * fan_out],
            bias: vec![T::zero(); fan_out],
        }
    }

    /// Number of trainable coordinates: weights then biases.
    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight(&self, row: usize, col: usize) -> T {
        self.weights[row * self.fan_in + col]
    }

    /// Coordinate `index` in the layer's weights-then-bias ordering.
    pub fn get(&self, index: usize) -> T {
        let nw = self.weights.len();
        if index < nw {
            self.weights[index]
        } else {
            self.bias[index - nw]
        }
    }

    pub fn get_mut(&mut self, index: usize) -> &mut T {
        let nw = self.weights.len();
        if index < nw {
            &mut self.weights[index]
        } else {
            &mut self.bias[index - nw]
        }
    }

    /// `fan_in x fan_out` copy of the weights.
    pub(crate) fn transposed(&self) -> Vec<T> {
        let mut t = vec![T::zero(); self.weights.len()];
        for (i, row) in self.weights.chunks_exact(self.fan_in).enumerate() {
            for (j, &w) in row.iter().enumerate() {
                t[j * self.fan_out + i] = w;
            }
        }
        t
    }
}

/// Address of one trainable coordinate: layer and index within that
/// layer's weights-then-bias ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamIndex {
    pub layer: usize,
    pub index: usize,
}

/// All weights and biases of the network. Also used as the container for
/// gradients, which share the parameter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    widths: Vec<usize>,
    layers: Vec<Layer<T>>,
}

fn check_architecture(widths: &[usize]) -> Result<(), NetError> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(NetError::Architecture(widths.to_vec()));
    }
    Ok(())
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(widths: &[usize]) -> Result<Self, NetError> {
        check_architecture(widths)?;
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(MlpParams {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self, NetError> {
        let first = layers.first().ok_or_else(|| NetError::Architecture(vec![]))?;
        let mut widths = vec![first.fan_in];
        for (l, layer) in layers.iter().enumerate() {
            if layer.fan_in != *widths.last().unwrap() {
                return Err(NetError::Shape(format!(
                    "layer {l} fan_in {} does not chain onto width {}",
                    layer.fan_in,
                    widths.last().unwrap()
                )));
            }
            if layer.weights.len() != layer.fan_in * layer.fan_out || layer.bias.len() != layer.fan_out {
                return Err(NetError::Shape(format!("layer {l} buffers do not match {}x{}", layer.fan_out, layer.fan_in)));
            }
            widths.push(layer.fan_out);
        }
        check_architecture(&widths)?;
        Ok(MlpParams { widths, layers })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn xavier(widths: &[usize], seed: u64) -> Result<Self, NetError> {
        let mut params = Self::zeros(widths)?;
        let mut rng = Rng::for_stream(seed, crate::rng::Stream::Init);
        for layer in &mut params.layers {
            let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::of(bound * (2.0 * rng.next_f64() - 1.0));
            }
        }
        Ok(params)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn get(&self, p: ParamIndex) -> T {
        self.layers[p.layer].get(p.index)
    }

    pub fn get_mut(&mut self, p: ParamIndex) -> &mut T {
        self.layers[p.layer].get_mut(p.index)
    }

    /// Every coordinate in flat order: layer by layer, weights then bias.
    pub fn param_indices(&self) -> impl Iterator<Item = ParamIndex> + '_ {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(layer, l)| (0..l.len()).map(move |index| ParamIndex { layer, index }))
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn same_shape(&self, other: &MlpParams<T>) -> bool {
        self.widths == other.widths
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn dot(&self, other: &MlpParams<T>) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| {
                a.weights
                    .iter()
                    .zip(&b.weights)
                    .chain(a.bias.iter().zip(&b.bias))
                    .map(|(x, y)| x.f64() * y.f64())
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.dot(self)
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            widths: self.widths.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    fan_in: l.fan_in,
                    fan_out: l.fan_out,
                    weights: l.weights.iter().map(|v| U::of(v.f64())).collect(),
                    bias: l.bias.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
        }
    }
}

/// `m` examples as a row-major `m x dim` feature matrix plus labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub features: &'a [T],
    pub dim: usize,
    pub labels: &'a [usize],
}

impl<'a, T: Real> Batch<'a, T> {
    pub fn new(features: &'a [T], dim: usize, labels: &'a [usize]) -> Result<Self, NetError> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(NetError::Shape(format!(
                "{} feature values for {} examples of width {dim}",
                features.len(),
                labels.len()
            )));
        }
        Ok(Batch { features, dim, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, e: usize) -> &'a [T] {
        &self.features[e * self.dim..(e + 1) * self.dim]
    }

    fn check_against(&self, params: &MlpParams<T>) -> Result<(), NetError> {
        if self.dim != params.input_width() {
            return Err(NetError::Shape(format!(
                "batch width {} but network input width {}",
                self.dim,
                params.input_width()
            )));
        }
        let k = params.num_classes();
        if let Some(&label) = self.labels.iter().find(|&&l| l >= k) {
            return Err(NetError::Label { label, classes: k });
        }
        Ok(())
    }
}
