//! Dense feedforward network with ReLU hidden layers and a Sigmoid output,
//! evaluated on row-major mini-batches (one sample per row).

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::detect::FeatureVector;
use crate::error::{dim_err, input_err, Result};

/// Sigmoid outputs are kept inside `[SIGMOID_FLOOR, 1 - SIGMOID_FLOOR]` so that
/// probabilities never reach exactly 0 or 1 in floating point.
pub const SIGMOID_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Sigmoid => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Sigmoid),
            _ => None,
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => {
                (1.0 / (1.0 + (-z).exp())).clamp(SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
            }
        }
    }
}

/// Layer widths and activations. `layer_dims[0]` is the input width.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layer_dims: Vec<usize>,
    hidden_activation: Activation,
    output_activation: Activation,
}

impl NetworkSpec {
    pub fn new(
        layer_dims: Vec<usize>,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return input_err("a network needs at least an input and an output width");
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return input_err(format!("layer widths must be positive: {layer_dims:?}"));
        }
        Ok(Self {
            layer_dims,
            hidden_activation,
            output_activation,
        })
    }

    /// `[2M(M+1), 512, 256, 128, M·log₂L]` with ReLU hidden layers and a
    /// Sigmoid output.
    pub fn mimo_detector(n_tx: usize, bits_per_symbol: usize) -> Self {
        Self {
            layer_dims: vec![
                FeatureVector::len_for(n_tx),
                512,
                256,
                128,
                n_tx * bits_per_symbol,
            ],
            hidden_activation: Activation::Relu,
            output_activation: Activation::Sigmoid,
        }
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Number of weight layers.
    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty")
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }
}

/// Weight (`d_out x d_in`) and bias (`d_out`) of one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(d_out: usize, d_in: usize) -> Self {
        Self {
            weight: Array2::zeros((d_out, d_in)),
            bias: Array1::zeros(d_out),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.nrows()
    }
}

/// Per-layer gradients; same shapes as the parameters.
pub type LayerGradient = LayerParams;

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    /// Frobenius norm over all weight gradients.
    pub fn weight_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|g| g.weight.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Cached intermediate values of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each layer (`batch x d_in`); `layer_inputs[0]` is the feature batch.
    pub layer_inputs: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
    /// Sigmoid probabilities, `batch x d_out`.
    pub output: Array2<f64>,
}

impl ForwardTrace {
    /// Batch-mean input of every layer.
    pub fn mean_layer_inputs(&self) -> Vec<Array1<f64>> {
        self.layer_inputs
            .iter()
            .map(|c| c.mean_axis(Axis(0)).expect("non-empty batch"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<LayerParams>,
}

impl Network {
    /// Fan-balanced uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Self {
        let dims = spec.layer_dims();
        let layers = dims
            .windows(2)
            .map(|w| {
                let (d_in, d_out) = (w[0], w[1]);
                let limit = (6.0 / (d_in + d_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
                LayerParams {
                    weight: Array2::from_shape_simple_fn((d_out, d_in), || dist.sample(rng)),
                    bias: Array1::zeros(d_out),
                }
            })
            .collect();
        Self { spec, layers }
    }

    pub fn from_layers(spec: NetworkSpec, layers: Vec<LayerParams>) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return dim_err(format!(
                "{} layers given, spec has {}",
                layers.len(),
                spec.num_layers()
            ));
        }
        for (k, (layer, w)) in layers.iter().zip(spec.layer_dims().windows(2)).enumerate() {
            if layer.weight.dim() != (w[1], w[0]) || layer.bias.len() != w[1] {
                return dim_err(format!(
                    "layer {k}: weight {:?} / bias {} do not match widths {} -> {}",
                    layer.weight.dim(),
                    layer.bias.len(),
                    w[0],
                    w[1]
                ));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    /// Batched forward pass; `input` holds one feature vector per row.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<ForwardTrace> {
        if input.ncols() != self.spec.input_dim() {
            return dim_err(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.spec.input_dim()
            ));
        }
        let n = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n);
        let mut pre_activations = Vec::with_capacity(n);
        let mut current = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            let act = self.spec.activation(k);
            let c = z.mapv(|v| act.apply(v));
            layer_inputs.push(current);
            pre_activations.push(z);
            current = c;
        }
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
            output: current,
        })
    }

    /// Output probabilities only, without keeping the trace.
    pub fn predict_proba(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.spec.input_dim() {
            return dim_err(format!(
                "input has {} features, network expects {}",
                input.ncols(),
                self.spec.input_dim()
            ));
        }
        let mut current = input.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = current.dot(&layer.weight.t());
            z += &layer.bias;
            let act = self.spec.activation(k);
            z.mapv_inplace(|v| act.apply(v));
            current = z;
        }
        Ok(current)
    }

    pub fn forward_one(&self, c0: &FeatureVector) -> Result<ForwardTrace> {
        let row = c0.values.view().insert_axis(Axis(0));
        self.forward(row)
    }

    /// Exact gradients of the batch-mean [`bce_loss`] with respect to every
    /// weight and bias. Expects a Sigmoid output layer.
    pub fn backward(&self, trace: &ForwardTrace, target: ArrayView2<f64>) -> Result<Gradients> {
        if target.dim() != trace.output.dim() {
            return dim_err(format!(
                "target shape {:?} differs from output shape {:?}",
                target.dim(),
                trace.output.dim()
            ));
        }
        if self.spec.output_activation != Activation::Sigmoid {
            return input_err("backward pairs cross-entropy with a Sigmoid output layer");
        }
        let (batch, d_out) = trace.output.dim();
        let scale = 1.0 / (batch * d_out) as f64;
        let mut delta = (&trace.output - &target) * scale;
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let weight = delta.t().dot(&trace.layer_inputs[k]);
            let bias = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = delta.dot(&self.layers[k].weight);
                match self.spec.activation(k - 1) {
                    Activation::Relu => {
                        Zip::from(&mut prev)
                            .and(&trace.pre_activations[k - 1])
                            .for_each(|d, &z| {
                                if z <= 0.0 {
                                    *d = 0.0;
                                }
                            });
                    }
                    Activation::Sigmoid => {
                        Zip::from(&mut prev)
                            .and(&trace.layer_inputs[k])
                            .for_each(|d, &s| *d *= s * (1.0 - s));
                    }
                }
                delta = prev;
            }
            grads.push(LayerGradient { weight, bias });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }
}

/// Mean binary cross-entropy over every entry of the batch.
pub fn bce_loss(output: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if output.dim() != target.dim() {
        return dim_err(format!(
            "output shape {:?} differs from target shape {:?}",
            output.dim(),
            target.dim()
        ));
    }
    if output.is_empty() {
        return input_err("empty batch");
    }
    let mut total = 0.0;
    for (&p, &s) in output.iter().zip(target.iter()) {
        if !(p > 0.0 && p < 1.0) {
            return input_err(format!("probability {p} outside (0, 1)"));
        }
        total -= s * p.ln() + (1.0 - s) * (1.0 - p).ln();
    }
    Ok(total / output.len() as f64)
}

/// Hard decision: 1 when the probability exceeds one half, else 0.
pub fn predict_bits(output: &[f64]) -> Vec<u8> {
    output.iter().map(|&p| u8::from(p > 0.5)).collect()
}
