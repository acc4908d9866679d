//! Dense feed-forward networks with hand-derived reverse-mode gradients and Adam.
//!
//! Weights are stored input-major (`in_dim × out_dim`): column `j` of the usual
//! `(out, in)` matrix is the contiguous slice `weights[j*out..(j+1)*out]`. This
//! lets both the forward pass and the weight gradient skip zero inputs, which
//! is most of a rendered observation. The on-disk format is row-major
//! `(out, in)` regardless.
//!
//! Shape mismatches are programmer errors and panic.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

const NNC_MAGIC: &[u8; 4] = b"NNC1";

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("malformed network file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    in_dim: usize,
    out_dim: usize,
    /// Input-major: entry `(row i, col j)` lives at `j * out_dim + i`.
    weights: Vec<T>,
    biases: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            biases: vec![T::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    #[inline]
    fn column(&self, j: usize) -> &[T] {
        &self.weights[j * self.out_dim..(j + 1) * self.out_dim]
    }
}

/// A fully connected network: rectifier (or other) hidden layers, configurable output.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layer_sizes: Vec<usize>,
    layers: Vec<DenseLayer<T>>,
    hidden_activation: Activation,
    output_activation: Activation,
}

/// Post-activation values of every layer; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    activations: Vec<Vec<T>>,
}

impl<T> ForwardCache<T> {
    pub fn output(&self) -> &[T] {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &[T] {
        &self.activations[0]
    }
}

/// Gradients with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
}

impl<T: Scalar> DenseGrads<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![T::zero(); l.biases.len()]).collect(),
        }
    }

    /// Same ordering as [`DenseNet::params`].
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn scale(&mut self, factor: T) {
        self.iter_mut().for_each(|g| *g *= factor);
    }

    pub fn clear(&mut self) {
        self.iter_mut().for_each(|g| *g = T::zero());
    }

    /// Gradient of weight `(row, col)` in the usual `(out, in)` indexing.
    pub fn weight(&self, layer: usize, row: usize, col: usize) -> T {
        let out = self.biases[layer].len();
        self.weights[layer][col * out + row]
    }

    pub fn bias(&self, layer: usize, row: usize) -> T {
        self.biases[layer][row]
    }

    pub fn max_abs(&self) -> T {
        self.iter().fold(T::zero(), |m, g| m.max(g.abs()))
    }
}

impl<T: Scalar> DenseNet<T> {
    /// Builds a network with weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut net = Self::zeros(layer_sizes, hidden_activation, output_activation)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.in_dim as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                let u: f64 = rng.random();
                *w = T::c((2.0 * u - 1.0) * bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::Architecture(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(NnError::Architecture(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            hidden_activation,
            output_activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    #[inline]
    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn weight(&self, layer: usize, row: usize, col: usize) -> T {
        let l = &self.layers[layer];
        l.weights[col * l.out_dim + row]
    }

    pub fn set_weight(&mut self, layer: usize, row: usize, col: usize, value: T) {
        let l = &mut self.layers[layer];
        l.weights[col * l.out_dim + row] = value;
    }

    pub fn bias(&self, layer: usize, row: usize) -> T {
        self.layers[layer].biases[row]
    }

    pub fn set_bias(&mut self, layer: usize, row: usize, value: T) {
        self.layers[layer].biases[row] = value;
    }

    /// Parameters in a fixed order: per layer, the weights then the biases.
    pub fn params(&self) -> impl Iterator<Item = &T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn layer_forward(&self, index: usize, x: &[T]) -> Vec<T> {
        let layer = &self.layers[index];
        let mut z = layer.biases.clone();
        for (j, &xj) in x.iter().enumerate() {
            if xj == T::zero() {
                continue;
            }
            for (zi, &w) in z.iter_mut().zip(layer.column(j)) {
                *zi += w * xj;
            }
        }
        let act = self.activation_of(index);
        if act != Activation::Identity {
            z.iter_mut().for_each(|v| *v = act.apply(*v));
        }
        z
    }

    pub fn forward(&self, input: &[T]) -> Vec<T> {
        assert_eq!(
            input.len(),
            self.input_dim(),
            "input len {} does not match network input dim {}",
            input.len(),
            self.input_dim()
        );
        let mut x = self.layer_forward(0, input);
        for index in 1..self.layers.len() {
            x = self.layer_forward(index, &x);
        }
        x
    }

    pub fn forward_cached(&self, input: &[T]) -> ForwardCache<T> {
        assert_eq!(
            input.len(),
            self.input_dim(),
            "input len {} does not match network input dim {}",
            input.len(),
            self.input_dim()
        );
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for index in 0..self.layers.len() {
            let next = self.layer_forward(index, &activations[index]);
            activations.push(next);
        }
        ForwardCache { activations }
    }

    /// Gradients of `L = upstream · forward(input)` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> (DenseGrads<T>, Vec<T>) {
        let cache = self.forward_cached(input);
        let mut grads = DenseGrads::zeros_like(self);
        let input_grad = self
            .accumulate_backward(&cache, upstream, Some(&mut grads), true)
            .expect("input gradient requested");
        (grads, input_grad)
    }

    /// Backpropagates `upstream` (gradient w.r.t. the cached output), adding
    /// parameter gradients into `grads` when given. Returns the input gradient
    /// when `want_input_grad` is set.
    pub fn accumulate_backward(
        &self,
        cache: &ForwardCache<T>,
        upstream: &[T],
        mut grads: Option<&mut DenseGrads<T>>,
        want_input_grad: bool,
    ) -> Option<Vec<T>> {
        assert_eq!(
            upstream.len(),
            self.output_dim(),
            "upstream gradient len {} does not match network output dim {}",
            upstream.len(),
            self.output_dim()
        );
        assert_eq!(cache.activations.len(), self.layers.len() + 1);
        let last = self.layers.len() - 1;
        let out_act = self.output_activation;
        let mut delta: Vec<T> = upstream
            .iter()
            .zip(&cache.activations[last + 1])
            .map(|(&g, &y)| g * out_act.derivative_from_output(y))
            .collect();

        for index in (0..self.layers.len()).rev() {
            let layer = &self.layers[index];
            let x = &cache.activations[index];
            if let Some(g) = grads.as_deref_mut() {
                for (gb, &d) in g.biases[index].iter_mut().zip(&delta) {
                    *gb += d;
                }
                let gw = &mut g.weights[index];
                for (j, &xj) in x.iter().enumerate() {
                    if xj == T::zero() {
                        continue;
                    }
                    let col = &mut gw[j * layer.out_dim..(j + 1) * layer.out_dim];
                    for (w, &d) in col.iter_mut().zip(&delta) {
                        *w += d * xj;
                    }
                }
            }
            if index == 0 {
                if !want_input_grad {
                    return None;
                }
                let dx = (0..layer.in_dim)
                    .map(|j| dot(layer.column(j), &delta))
                    .collect();
                return Some(dx);
            }
            let prev_act = self.activation_of(index - 1);
            delta = (0..layer.in_dim)
                .map(|j| {
                    let d = prev_act.derivative_from_output(x[j]);
                    if d == T::zero() {
                        T::zero()
                    } else {
                        d * dot(layer.column(j), &delta)
                    }
                })
                .collect();
        }
        unreachable!("loop returns at layer 0")
    }

    /// `self ← (1 − tau)·self + tau·online`, elementwise.
    pub fn soft_update_from(&mut self, online: &DenseNet<T>, tau: T) {
        assert_eq!(self.layer_sizes, online.layer_sizes);
        let keep = T::one() - tau;
        for (t, &o) in self.params_mut().zip(online.params()) {
            *t = keep * *t + tau * o;
        }
    }

    /// Writes the `NNC1` format: magic, layer count and sizes as little-endian
    /// `u32`, then per layer the row-major `(out, in)` weights and the biases as
    /// little-endian `f64`.
    pub fn write_nnc<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(NNC_MAGIC)?;
        w.write_all(&(self.layer_sizes.len() as u32).to_le_bytes())?;
        for &s in &self.layer_sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for layer in &self.layers {
            for i in 0..layer.out_dim {
                for j in 0..layer.in_dim {
                    w.write_all(&layer.weights[j * layer.out_dim + i].as_f64().to_le_bytes())?;
                }
            }
            for b in &layer.biases {
                w.write_all(&b.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads the `NNC1` format. Activations are not part of the file.
    pub fn read_nnc<R: Read>(
        mut r: R,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self, NnError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != NNC_MAGIC {
            return Err(NnError::Format(format!("bad magic {magic:?}")));
        }
        let count = read_u32(&mut r)? as usize;
        if !(2..=64).contains(&count) {
            return Err(NnError::Format(format!("implausible layer count {count}")));
        }
        let sizes = (0..count)
            .map(|_| read_u32(&mut r).map(|s| s as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let mut net = Self::zeros(&sizes, hidden_activation, output_activation)?;
        for layer in &mut net.layers {
            for i in 0..layer.out_dim {
                for j in 0..layer.in_dim {
                    layer.weights[j * layer.out_dim + i] = T::c(read_f64(&mut r)?);
                }
            }
            for b in &mut layer.biases {
                *b = T::c(read_f64(&mut r)?);
            }
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_nnc(&mut w)?;
        w.flush()
    }

    pub fn load(
        path: &Path,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self, NnError> {
        Self::read_nnc(
            BufReader::new(File::open(path)?),
            hidden_activation,
            output_activation,
        )
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
    step_count: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(net: &DenseNet<T>, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: vec![T::zero(); net.num_params()],
            second_moment: vec![T::zero(); net.num_params()],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of `net` using `grads`.
    pub fn step(&mut self, net: &mut DenseNet<T>, grads: &DenseGrads<T>) {
        assert_eq!(self.first_moment.len(), net.num_params());
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::c(self.config.beta1);
        let b2 = T::c(self.config.beta2);
        let lr = T::c(self.config.learning_rate);
        let eps = T::c(self.config.epsilon);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (((p, &g), m), v) in net
            .params_mut()
            .zip(grads.iter())
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Largest relative disagreement between backpropagated and central
/// finite-difference parameter gradients.
///
/// `loss_fn` maps the network output to `(loss, dloss/doutput)`. The relative
/// error of each parameter is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<T, F>(net: &DenseNet<T>, input: &[T], loss_fn: F, step: T) -> T
where
    T: Scalar,
    F: Fn(&[T]) -> (T, Vec<T>),
{
    let cache = net.forward_cached(input);
    let (_, upstream) = loss_fn(cache.output());
    let mut analytic = DenseGrads::zeros_like(net);
    net.accumulate_backward(&cache, &upstream, Some(&mut analytic), false);

    let mut probe = net.clone();
    let floor = T::c(1e-8);
    let mut worst = T::zero();
    let n = net.num_params();
    let analytic: Vec<T> = analytic.iter().copied().collect();
    for k in 0..n {
        let original = *probe.params().nth(k).unwrap();
        *probe.params_mut().nth(k).unwrap() = original + step;
        let (plus, _) = loss_fn(&probe.forward(input));
        *probe.params_mut().nth(k).unwrap() = original - step;
        let (minus, _) = loss_fn(&probe.forward(input));
        *probe.params_mut().nth(k).unwrap() = original;
        let numeric = (plus - minus) / (T::c(2.0) * step);
        let a = analytic[k];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        worst = worst.max(err);
    }
    worst
}
