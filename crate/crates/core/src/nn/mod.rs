//! Dense network engine for the split local/global Q-network.
//!
//! A [`SplitModel`] is a chain of [`DenseLayer`]s. Exactly one layer is
//! [`Scope::Global`]: its parameters are replicated across cooperating
//! agents. All other layers are [`Scope::Local`] and never leave the agent.
//!
//! Weights are stored `in_dim x out_dim`, so a layer computes
//! `z_j = b_j + sum_i x_i * W[i][j]` followed by its activation.

mod checkpoint;
mod matrix;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use matrix::Matrix;

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Layer id of the shared middle layer.
pub const GLOBAL_LAYER_ID: &str = "2";

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch for layer {layer}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        layer: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("unknown layer id {0:?}")]
    UnknownLayer(String),
    #[error("topology is empty")]
    EmptyTopology,
    #[error("layer {index} has in_dim {in_dim} but previous out_dim is {prev_out}")]
    BrokenChain {
        index: usize,
        in_dim: usize,
        prev_out: usize,
    },
    #[error("model must have exactly one global layer, found {0}")]
    GlobalLayerCount(usize),
    #[error("duplicate layer id {0:?}")]
    DuplicateLayer(String),
    #[error("tape does not belong to this model")]
    TapeMismatch,
    #[error("non-finite value produced in layer {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => sigmoid(z),
            Activation::None => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    /// ReLU'(0) is 0.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::None => 1.0,
        }
    }

    pub(crate) fn to_byte(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Local,
    Global,
}

/// Declarative description of one layer, used to build a model.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub layer_id: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub scope: Scope,
}

impl LayerSpec {
    pub fn new(
        layer_id: impl Into<String>,
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        scope: Scope,
    ) -> Self {
        Self {
            layer_id: layer_id.into(),
            in_dim,
            out_dim,
            activation,
            scope,
        }
    }
}

/// The three-layer topology used by every agent: `(obs,32)+ReLU` local,
/// `(32,16)+ReLU` global, `(16,actions)+Sigmoid` local.
pub fn split_topology(agent: &str, obs_dim: usize, n_actions: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::new(
            format!("{agent}.1"),
            obs_dim,
            32,
            Activation::Relu,
            Scope::Local,
        ),
        LayerSpec::new(GLOBAL_LAYER_ID, 32, 16, Activation::Relu, Scope::Global),
        LayerSpec::new(
            format!("{agent}.3"),
            16,
            n_actions,
            Activation::Sigmoid,
            Scope::Local,
        ),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub layer_id: String,
    pub scope: Scope,
    pub activation: Activation,
    /// `in_dim x out_dim`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.cols()
    }

    fn pre_activation(&self, input: &[f64]) -> Vec<f64> {
        let out = self.out_dim();
        let mut z = self.bias.clone();
        let w = self.weights.as_slice();
        for (i, &x) in input.iter().enumerate() {
            let row = &w[i * out..(i + 1) * out];
            for (zj, &wij) in z.iter_mut().zip(row) {
                *zj += x * wij;
            }
        }
        z
    }

    pub fn params(&self) -> ParamTensors {
        ParamTensors {
            weights: self.weights.clone(),
            bias: self.bias.clone(),
        }
    }

    fn check_shape(&self, t: &ParamTensors) -> Result<(), NnError> {
        let expected = self.weights.shape();
        if t.weights.shape() != expected || t.bias.len() != self.bias.len() {
            return Err(NnError::ShapeMismatch {
                layer: self.layer_id.clone(),
                expected,
                got: t.weights.shape(),
            });
        }
        Ok(())
    }

    /// Elementwise `param += delta`.
    fn add_assign(&mut self, delta: &ParamTensors) {
        for (w, d) in self
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(delta.weights.as_slice())
        {
            *w += d;
        }
        for (b, d) in self.bias.iter_mut().zip(&delta.bias) {
            *b += d;
        }
    }
}

/// Weight and bias arrays shaped like one layer. Used for gradients,
/// deltas and raw parameter snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ParamTensors {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weights: Matrix::zeros(rows, cols),
            bias: vec![0.0; cols],
        }
    }

    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self::zeros(layer.in_dim(), layer.out_dim())
    }

    pub fn add_assign(&mut self, other: &ParamTensors) {
        for (a, b) in self
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(other.weights.as_slice())
        {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights
            .as_slice()
            .iter()
            .chain(&self.bias)
            .all(|&v| v == 0.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.as_slice().iter().chain(&self.bias).copied()
    }
}

/// Per-layer additive weight changes keyed by layer id.
pub type WeightDeltas = BTreeMap<String, ParamTensors>;

/// Gradients of a scalar loss with respect to layer parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientBundle {
    pub epoch: u32,
    pub layers: BTreeMap<String, ParamTensors>,
}

impl GradientBundle {
    /// Keeps only the entries for layers that are global in `model`.
    pub fn for_federation(&self, model: &SplitModel) -> GradientBundle {
        let layers = self
            .layers
            .iter()
            .filter(|(id, _)| {
                model
                    .layer(id)
                    .map(|l| l.scope == Scope::Global)
                    .unwrap_or(false)
            })
            .map(|(id, t)| (id.clone(), t.clone()))
            .collect();
        GradientBundle {
            epoch: self.epoch,
            layers,
        }
    }

    /// Accumulates `other` into `self`. Missing entries are inserted.
    pub fn accumulate(&mut self, other: &GradientBundle) {
        for (id, t) in &other.layers {
            match self.layers.get_mut(id) {
                Some(acc) => acc.add_assign(t),
                None => {
                    self.layers.insert(id.clone(), t.clone());
                }
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers.values().all(ParamTensors::is_zero)
    }
}

/// Activations recorded by [`SplitModel::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer; `inputs[0]` is the model input.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    pub owner: String,
    layers: Vec<DenseLayer>,
}

impl SplitModel {
    /// Builds a model from explicit layers, validating the chain and scope rules.
    pub fn from_layers(owner: impl Into<String>, layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::EmptyTopology);
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(NnError::DimensionMismatch {
                    expected: l.out_dim(),
                    got: l.bias.len(),
                });
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(NnError::BrokenChain {
                    index: i,
                    in_dim: l.in_dim(),
                    prev_out: layers[i - 1].out_dim(),
                });
            }
            if layers[..i].iter().any(|p| p.layer_id == l.layer_id) {
                return Err(NnError::DuplicateLayer(l.layer_id.clone()));
            }
        }
        let globals = layers.iter().filter(|l| l.scope == Scope::Global).count();
        if globals != 1 {
            return Err(NnError::GlobalLayerCount(globals));
        }
        Ok(Self {
            owner: owner.into(),
            layers,
        })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layer(&self, id: &str) -> Option<&DenseLayer> {
        self.layers.iter().find(|l| l.layer_id == id)
    }

    fn layer_mut(&mut self, id: &str) -> Option<&mut DenseLayer> {
        self.layers.iter_mut().find(|l| l.layer_id == id)
    }

    /// Mutable access to every layer. Shapes must not be changed.
    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.layers.iter_mut()
    }

    pub fn global_layer(&self) -> &DenseLayer {
        self.layers
            .iter()
            .find(|l| l.scope == Scope::Global)
            .expect("validated: exactly one global layer")
    }

    pub fn global_layer_mut(&mut self) -> &mut DenseLayer {
        self.layers
            .iter_mut()
            .find(|l| l.scope == Scope::Global)
            .expect("validated: exactly one global layer")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Runs the model on `input`, returning the output and the tape needed by
    /// [`SplitModel::backward`].
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n = self.layers.len();
        let mut tape = Tape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            post: Vec::with_capacity(n),
        };
        let mut x = input.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&x);
            let y: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            if y.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(layer.layer_id.clone()));
            }
            tape.inputs.push(std::mem::replace(&mut x, y.clone()));
            tape.pre.push(z);
            tape.post.push(y);
        }
        Ok((x, tape))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut x = input.to_vec();
        for layer in &self.layers {
            let mut z = layer.pre_activation(&x);
            for v in z.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            x = z;
        }
        Ok(x)
    }

    /// Reverse-mode gradients of a scalar loss given `dL/d(output)`.
    /// Returns entries for every layer, local and global.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<GradientBundle, NnError> {
        if output_grad.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        if tape.inputs.len() != self.layers.len()
            || self
                .layers
                .iter()
                .zip(&tape.inputs)
                .zip(&tape.pre)
                .any(|((l, x), z)| x.len() != l.in_dim() || z.len() != l.out_dim())
        {
            return Err(NnError::TapeMismatch);
        }

        let mut layers = BTreeMap::new();
        let mut upstream = output_grad.to_vec();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (in_dim, out_dim) = layer.weights.shape();
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&tape.pre[idx])
                .zip(&tape.post[idx])
                .map(|((&g, &z), &y)| g * layer.activation.derivative(z, y))
                .collect();

            let x = &tape.inputs[idx];
            let mut gw = Matrix::zeros(in_dim, out_dim);
            let w = layer.weights.as_slice();
            let mut next_upstream = vec![0.0; in_dim];
            {
                let g = gw.as_mut_slice();
                for i in 0..in_dim {
                    let row = i * out_dim..(i + 1) * out_dim;
                    let mut acc = 0.0;
                    for ((gij, &wij), &dj) in g[row.clone()].iter_mut().zip(&w[row]).zip(&delta) {
                        *gij = x[i] * dj;
                        acc += wij * dj;
                    }
                    next_upstream[i] = acc;
                }
            }
            layers.insert(
                layer.layer_id.clone(),
                ParamTensors {
                    weights: gw,
                    bias: delta,
                },
            );
            upstream = next_upstream;
        }
        Ok(GradientBundle { epoch: 0, layers })
    }

    /// Plain SGD step `w <- w + (-lr * g)` over every entry of `bundle`.
    ///
    /// Returns the exact additive deltas that were applied. Shapes are checked
    /// for all entries before any parameter is touched.
    pub fn apply_update(
        &mut self,
        bundle: &GradientBundle,
        learning_rate: f64,
    ) -> Result<WeightDeltas, NnError> {
        let mut deltas = WeightDeltas::new();
        for (id, grad) in &bundle.layers {
            let layer = self
                .layer(id)
                .ok_or_else(|| NnError::UnknownLayer(id.clone()))?;
            layer.check_shape(grad)?;
            let scale = |g: &f64| -learning_rate * g;
            let delta = ParamTensors {
                weights: Matrix::from_vec(
                    grad.weights.rows(),
                    grad.weights.cols(),
                    grad.weights.as_slice().iter().map(scale).collect(),
                )?,
                bias: grad.bias.iter().map(scale).collect(),
            };
            deltas.insert(id.clone(), delta);
        }
        self.apply_deltas(&deltas)?;
        Ok(deltas)
    }

    /// Adds `deltas` to the matching layers. All-or-nothing on shape errors.
    pub fn apply_deltas(&mut self, deltas: &WeightDeltas) -> Result<(), NnError> {
        for (id, d) in deltas {
            self.layer(id)
                .ok_or_else(|| NnError::UnknownLayer(id.clone()))?
                .check_shape(d)?;
        }
        for (id, d) in deltas {
            let layer = self.layer_mut(id).expect("checked above");
            layer.add_assign(d);
            if !layer.weights.is_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(id.clone()));
            }
        }
        Ok(())
    }

    /// Overwrites one layer's parameters.
    pub fn set_params(&mut self, id: &str, params: ParamTensors) -> Result<(), NnError> {
        let layer = self
            .layer_mut(id)
            .ok_or_else(|| NnError::UnknownLayer(id.to_string()))?;
        layer.check_shape(&params)?;
        layer.weights = params.weights;
        layer.bias = params.bias;
        Ok(())
    }
}

/// Builds a model with weights uniform in `[-1/sqrt(in_dim), 1/sqrt(in_dim)]`
/// and zero biases. Deterministic in `seed`.
pub fn init_model(
    owner: impl Into<String>,
    seed: u64,
    topology: &[LayerSpec],
) -> Result<SplitModel, NnError> {
    if topology.is_empty() {
        return Err(NnError::EmptyTopology);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = topology
        .iter()
        .map(|spec| {
            let limit = 1.0 / (spec.in_dim as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let data = (0..spec.in_dim * spec.out_dim)
                .map(|_| dist.sample(&mut rng))
                .collect();
            Ok(DenseLayer {
                layer_id: spec.layer_id.clone(),
                scope: spec.scope,
                activation: spec.activation,
                weights: Matrix::from_vec(spec.in_dim, spec.out_dim, data)?,
                bias: vec![0.0; spec.out_dim],
            })
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    SplitModel::from_layers(owner, layers)
}
