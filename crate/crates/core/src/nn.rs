//! Fully connected feed-forward networks with hand-written backpropagation.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::ParamRef;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Self::Linear => z,
            Self::Relu => z.max(0.0),
            Self::Tanh => z.tanh(),
            Self::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Self::Sigmoid => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 - s)
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Self::Linear => 0,
            Self::Relu => 1,
            Self::Tanh => 2,
            Self::Sigmoid => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Self::Linear,
            1 => Self::Relu,
            2 => Self::Tanh,
            3 => Self::Sigmoid,
            _ => return None,
        })
    }
}

/// Affine map `x · W + b` followed by an activation. `weight` is `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    /// Uniform init in `±1/sqrt(fan_in)`.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = Matrix::from_fn(inputs, outputs, |_, _| rng.random_range(-bound..bound));
        let bias = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            weight,
            bias,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

#[derive(Clone, Debug)]
struct LayerCache {
    input: Matrix,
    pre_activation: Matrix,
    dropout_mask: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetGradients {
    pub layers: Vec<LayerGradient>,
}

impl NetGradients {
    pub fn zeros_like(net: &FeedForwardNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weight: Matrix::zeros(l.inputs(), l.outputs()),
                    bias: vec![0.0; l.outputs()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight)?;
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        Ok(())
    }

    /// Adds `λ·W` for every weight matrix (biases untouched).
    pub fn add_l2(&mut self, net: &FeedForwardNet, lambda: f64) -> Result<()> {
        for (g, layer) in self.layers.iter_mut().zip(&net.layers) {
            g.weight.axpy(lambda, &layer.weight)?;
        }
        Ok(())
    }

    /// Flattened in the same order as [`FeedForwardNet::flat_parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.as_slice().iter().all(|&v| v == 0.0) && l.bias.iter().all(|&v| v == 0.0))
    }
}

#[derive(Clone, Debug)]
pub struct FeedForwardNet {
    pub layers: Vec<Dense>,
    dropout_rate: f64,
    cache: Option<Vec<LayerCache>>,
}

impl PartialEq for FeedForwardNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.dropout_rate == other.dropout_rate
    }
}

impl FeedForwardNet {
    /// Builds a net through the listed widths: hidden layers use `hidden`,
    /// the final layer uses `output`.
    pub fn new(
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("a network needs at least an input and output width".into()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config(format!("zero-width layer in {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(w[0], w[1], if i + 1 == n { output } else { hidden }, rng))
            .collect();
        Self::from_layers(layers, dropout_rate)
    }

    pub fn from_layers(layers: Vec<Dense>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
            cache: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} input features, batch has {}",
                self.input_dim(),
                batch.cols()
            )));
        }
        Ok(())
    }

    /// Runs the net and caches intermediate values for [`backward`](Self::backward).
    ///
    /// Dropout on hidden layers is active only when a generator is supplied
    /// (training mode); masks use inverted scaling so evaluation needs none.
    pub fn forward(&mut self, batch: &Matrix, mut dropout_rng: Option<&mut Rng>) -> Result<Matrix> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let keep = 1.0 - self.dropout_rate;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weight)?;
            z.add_row_vector(&layer.bias)?;
            let mut a = z.map(|v| layer.activation.apply(v));
            let mut mask = None;
            if i < last && self.dropout_rate > 0.0 {
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    let m = Matrix::from_fn(a.rows(), a.cols(), |_, _| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    for (v, s) in a.as_mut_slice().iter_mut().zip(m.as_slice()) {
                        *v *= s;
                    }
                    mask = Some(m);
                }
            }
            caches.push(LayerCache {
                input: std::mem::replace(&mut h, a),
                pre_activation: z,
                dropout_mask: mask,
            });
        }
        self.cache = Some(caches);
        Ok(h)
    }

    /// Deterministic inference without caching.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut h = batch.clone();
        for layer in &self.layers {
            let mut z = h.matmul(&layer.weight)?;
            z.add_row_vector(&layer.bias)?;
            h = z.map(|v| layer.activation.apply(v));
        }
        Ok(h)
    }

    /// Backpropagates `upstream` (gradient of the loss with respect to the
    /// last forward output) and returns parameter and input gradients.
    pub fn backward(&self, upstream: &Matrix) -> Result<(NetGradients, Matrix)> {
        let caches = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let out_rows = caches[0].input.rows();
        if upstream.shape() != (out_rows, self.output_dim()) {
            return Err(Error::Shape(format!(
                "upstream gradient is {}x{}, forward output was {}x{}",
                upstream.rows(),
                upstream.cols(),
                out_rows,
                self.output_dim()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut grad = upstream.clone();
        for (layer, cache) in self.layers.iter().zip(caches).rev() {
            if let Some(mask) = &cache.dropout_mask {
                for (g, m) in grad.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *g *= m;
                }
            }
            if layer.activation != Activation::Linear {
                for (g, z) in grad
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.pre_activation.as_slice())
                {
                    *g *= layer.activation.derivative(*z);
                }
            }
            let weight = cache.input.t_matmul(&grad)?;
            let bias = grad.column_sums();
            let next = grad.matmul_t(&layer.weight)?;
            layers.push(LayerGradient { weight, bias });
            grad = next;
        }
        layers.reverse();
        Ok((NetGradients { layers }, grad))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Sum of squared weight entries (biases excluded).
    pub fn weight_sum_of_squares(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.sum_of_squares()).sum()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Weights then bias of each layer, in order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[offset..offset + w.len()]);
            offset += w.len();
            let b = &mut l.bias;
            let n = b.len();
            b.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Pairs each parameter tensor with its gradient for an optimizer step.
    pub fn param_refs<'a>(&'a mut self, grads: &'a NetGradients, prefix: &str) -> Vec<ParamRef<'a>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            out.push(ParamRef {
                name: format!("{prefix}.{i}.weight"),
                value: layer.weight.as_mut_slice(),
                grad: g.weight.as_slice(),
            });
            out.push(ParamRef {
                name: format!("{prefix}.{i}.bias"),
                value: &mut layer.bias,
                grad: &g.bias,
            });
        }
        out
    }
}
