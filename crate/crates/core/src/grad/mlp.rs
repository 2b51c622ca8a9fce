use rand::Rng;

use super::tape::linear_forward;
use super::{GradError, Tensor};

const SQRT_2_OVER_PI: f32 = 0.797_884_6;
const GELU_CUBIC: f32 = 0.044715;

/// Pointwise nonlinearity applied after a layer's affine map.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`
    Gelu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Gelu => {
                let (s, _) = half_one_plus_tanh(gelu_inner(x));
                x * s
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    pub fn derivative(self, x: f32) -> f32 {
        match self {
            Activation::Gelu => {
                let (s, one_minus_s) = half_one_plus_tanh(gelu_inner(x));
                let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                s + 2.0 * x * s * one_minus_s * du
            }
            Activation::Tanh => sech2(x),
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Gelu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Gelu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

fn gelu_inner(x: f32) -> f32 {
    SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)
}

/// `(s, 1 − s)` for `s = (1 + tanh u)/2 = 1/(1 + e^{−2u})`, each computed
/// without cancellation so GELU keeps relative precision in its tails.
fn half_one_plus_tanh(u: f32) -> (f32, f32) {
    if u >= 0.0 {
        let e = (-2.0 * u).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = (2.0 * u).exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    }
}

/// `1 − tanh²(x)` without the cancellation of the subtraction form.
fn sech2(x: f32) -> f32 {
    let c = x.cosh();
    1.0 / (c * c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
    pub activation: Activation,
}

/// Fully connected network: a chain of affine layers with activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self, GradError> {
        if layers.is_empty() {
            return Err(GradError::ShapeMismatch("mlp needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weight.shape().len() != 2 || l.bias.len() != l.weight.rows() {
                return Err(GradError::ShapeMismatch(format!(
                    "layer {i}: weight {:?} and bias {:?} disagree",
                    l.weight.shape(),
                    l.bias.shape()
                )));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].weight.rows() != pair[1].weight.cols() {
                return Err(GradError::ShapeMismatch(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].weight.rows(),
                    i + 1,
                    pair[1].weight.cols()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights and zero biases. `dims` lists every width from
    /// input to output; hidden layers use `hidden`, the last uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self, GradError> {
        if dims.len() < 2 {
            return Err(GradError::ShapeMismatch("need input and output widths".into()));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    weight: Tensor::matrix(fan_out, fan_in, data).expect("sized above"),
                    bias: Tensor::zeros(&[fan_out]),
                    activation: if i + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self::new(layers)
    }

    /// Zeroes the final layer so the network outputs exactly zero everywhere.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(0.0);
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Forward pass without recording. `input` is `[n, in]` (or a single
    /// `[in]` vector treated as one row).
    pub fn forward(&self, input: &Tensor) -> Result<Tensor, GradError> {
        if input.cols() != self.in_dim() {
            return Err(GradError::ShapeMismatch(format!(
                "mlp expects input width {}, got {}",
                self.in_dim(),
                input.cols()
            )));
        }
        let mut h = if input.shape().len() == 2 {
            input.clone()
        } else {
            Tensor::matrix(input.rows(), input.cols(), input.data().to_vec())?
        };
        for layer in &self.layers {
            h = linear_forward(&h, &layer.weight, &layer.bias)?;
            if layer.activation != Activation::Identity {
                let act = layer.activation;
                h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
        h.ensure_finite("mlp output")?;
        Ok(h)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.is_finite())
    }

    pub(crate) fn check_same_shape(&self, other_shapes: &[(&[usize], &[usize])]) -> Result<(), GradError> {
        if other_shapes.len() != self.layers.len()
            || self
                .layers
                .iter()
                .zip(other_shapes)
                .any(|(l, (w, b))| l.weight.shape() != *w || l.bias.shape() != *b)
        {
            return Err(GradError::ShapeMismatch(
                "parameter structures differ".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn shapes(&self) -> Vec<(&[usize], &[usize])> {
        self.layers
            .iter()
            .map(|l| (l.weight.shape(), l.bias.shape()))
            .collect()
    }
}

/// Per-layer `(weight, bias)` gradients, mirroring an [`Mlp`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpGrads {
    pub fn zeros_like(params: &Mlp) -> Self {
        Self {
            layers: params
                .layers()
                .iter()
                .map(|l| (Tensor::zeros(l.weight.shape()), Tensor::zeros(l.bias.shape())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.is_finite() && b.is_finite())
    }

    /// Flattened view in layer order: weight then bias.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    pub(crate) fn shapes(&self) -> Vec<(&[usize], &[usize])> {
        self.layers.iter().map(|(w, b)| (w.shape(), b.shape())).collect()
    }
}
