use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Negative-side slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;
const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; deterministic and side-effect free.
    Eval,
}

/// Per-feature batch normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
        }
    }
}

/// Affine map, optional batch normalization, then activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `inputs x outputs`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub norm: Option<BatchNorm>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(
        weight: Array2<f64>,
        bias: Array1<f64>,
        norm: Option<BatchNorm>,
        activation: Activation,
    ) -> Result<Self> {
        let out = weight.ncols();
        if bias.len() != out || norm.as_ref().is_some_and(|n| n.scale.len() != out) {
            return Err(Error::Shape(format!(
                "layer with {out} outputs has bias/normalization of another width"
            )));
        }
        Ok(Self {
            weight,
            bias,
            norm,
            activation,
        })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
    pub fn random<R: Rng>(
        inputs: usize,
        outputs: usize,
        normalized: bool,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-bound..bound));
        let bias = Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..bound));
        Self {
            weight,
            bias,
            norm: normalized.then(|| BatchNorm::new(outputs)),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }
}

/// Values recorded by a forward pass for the backward pass.
#[derive(Debug, Clone)]
struct LayerTape {
    input: Array2<f64>,
    /// Normalized pre-activation (`xhat`) and `1/sqrt(var + eps)`.
    norm: Option<(Array2<f64>, Array1<f64>)>,
    /// Activation input and output.
    act_in: Array2<f64>,
    act_out: Array2<f64>,
}

#[derive(Debug, Clone)]
struct Tape {
    mode: Mode,
    layers: Vec<LayerTape>,
}

/// A fully connected network: a stack of [`Layer`]s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
    #[serde(skip)]
    tape: Option<Tape>,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Gradients for one layer, shaped like its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub scale: Option<Array1<f64>>,
    pub shift: Option<Array1<f64>>,
}

/// Gradients for a whole [`DenseNet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    scale: l.norm.as_ref().map(|n| Array1::zeros(n.scale.len())),
                    shift: l.norm.as_ref().map(|n| Array1::zeros(n.shift.len())),
                })
                .collect(),
        }
    }

    /// Elementwise sum with gradients of the same network.
    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
            if let (Some(x), Some(y)) = (a.scale.as_mut(), b.scale.as_ref()) {
                *x += y;
            }
            if let (Some(x), Some(y)) = (a.shift.as_mut(), b.shift.as_ref()) {
                *x += y;
            }
        }
    }

    /// Largest absolute entry over all tensors.
    pub fn max_abs(&self) -> f64 {
        self.flat().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// All entries in parameter order (weight, bias, scale, shift per layer).
    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| {
            l.weight
                .iter()
                .chain(l.bias.iter())
                .chain(l.scale.iter().flatten())
                .chain(l.shift.iter().flatten())
                .copied()
        })
    }

    /// Name of the first tensor holding a non-finite entry.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.iter().any(|v| !v.is_finite()) {
                return Some(format!("layer {i} weight"));
            }
            if l.bias.iter().any(|v| !v.is_finite()) {
                return Some(format!("layer {i} bias"));
            }
            if l.scale.as_ref().is_some_and(|s| s.iter().any(|v| !v.is_finite())) {
                return Some(format!("layer {i} norm scale"));
            }
            if l.shift.as_ref().is_some_and(|s| s.iter().any(|v| !v.is_finite())) {
                return Some(format!("layer {i} norm shift"));
            }
        }
        None
    }
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers, tape: None })
    }

    /// Multilayer perceptron over `widths` (input first). Hidden layers are
    /// batch-normalized leaky rectifiers; the last layer applies `output`
    /// without normalization.
    pub fn mlp<R: Rng>(widths: &[usize], output: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("invalid widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let act = if last { output } else { Activation::LeakyRelu };
                Layer::random(widths[i], widths[i + 1], !last, act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    /// Input width followed by every layer's output width.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight.len() + l.bias.len() + l.norm.as_ref().map_or(0, |n| 2 * n.scale.len())
            })
            .sum()
    }

    fn check_input(&self, batch: &Array2<f64>, mode: Mode) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch width {} but network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        if batch.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if mode == Mode::Train && batch.nrows() < 2 && self.layers.iter().any(|l| l.norm.is_some()) {
            return Err(Error::Shape(
                "train mode needs at least 2 rows for batch statistics".into(),
            ));
        }
        Ok(())
    }

    /// Forward pass recording everything needed by [`DenseNet::backward`].
    pub fn forward(&mut self, batch: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        self.check_input(batch, mode)?;
        let mut x = batch.to_owned();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let input = x;
            let mut z = input.dot(&layer.weight) + &layer.bias;
            let norm = match (&mut layer.norm, mode) {
                (None, _) => None,
                (Some(bn), Mode::Train) => {
                    let b = z.nrows() as f64;
                    let mean = z.mean_axis(Axis(0)).expect("rows");
                    let centered = &z - &mean;
                    let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / b;
                    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = centered * &inv_std;
                    z = &xhat * &bn.scale + &bn.shift;
                    bn.running_mean = &bn.running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
                    bn.running_var = &bn.running_var * (1.0 - BN_MOMENTUM) + &var * BN_MOMENTUM;
                    Some((xhat, inv_std))
                }
                (Some(bn), Mode::Eval) => {
                    let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                    let xhat = (&z - &bn.running_mean) * &inv_std;
                    z = &xhat * &bn.scale + &bn.shift;
                    Some((xhat, inv_std))
                }
            };
            let out = activate(&z, layer.activation);
            tapes.push(LayerTape {
                input,
                norm,
                act_in: z,
                act_out: out.clone(),
            });
            x = out;
        }
        self.tape = Some(Tape {
            mode,
            layers: tapes,
        });
        Ok(x)
    }

    /// Eval-mode forward pass without recording; safe to share across threads.
    pub fn predict(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch, Mode::Eval)?;
        let mut x = batch.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weight) + &layer.bias;
            if let Some(bn) = &layer.norm {
                let inv_std = bn.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                z = (z - &bn.running_mean) * &(inv_std * &bn.scale) + &bn.shift;
            }
            x = activate(&z, layer.activation);
        }
        Ok(x)
    }

    /// Backpropagate `grad_out` (dLoss/dOutput) through the last recorded
    /// forward pass. Returns parameter gradients and dLoss/dInput. The tape is
    /// consumed.
    pub fn backward(&mut self, grad_out: &Array2<f64>) -> Result<(NetGrads, Array2<f64>)> {
        let tape = self
            .tape
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward called without a recorded forward pass".into()))?;
        let last = tape.layers.last().expect("non-empty");
        if grad_out.dim() != last.act_out.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match forward output {:?}",
                grad_out.dim(),
                last.act_out.dim()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for (layer, lt) in self.layers.iter().zip(&tape.layers).rev() {
            let mut dz = activation_backward(&g, &lt.act_in, &lt.act_out, layer.activation);
            let (mut dscale, mut dshift) = (None, None);
            if let (Some(bn), Some((xhat, inv_std))) = (&layer.norm, &lt.norm) {
                dshift = Some(dz.sum_axis(Axis(0)));
                dscale = Some((&dz * xhat).sum_axis(Axis(0)));
                let dxhat = &dz * &bn.scale;
                dz = match tape.mode {
                    Mode::Eval => dxhat * inv_std,
                    Mode::Train => {
                        let b = dxhat.nrows() as f64;
                        let sum = dxhat.sum_axis(Axis(0));
                        let dot = (&dxhat * xhat).sum_axis(Axis(0));
                        let mut dx = dxhat * b - &sum - xhat * &dot;
                        Zip::from(dx.rows_mut()).for_each(|mut r| {
                            r *= &(inv_std / b);
                        });
                        dx
                    }
                };
            }
            let dweight = lt.input.t().dot(&dz);
            let dbias = dz.sum_axis(Axis(0));
            g = dz.dot(&layer.weight.t());
            grads.push(LayerGrads {
                weight: dweight,
                bias: dbias,
                scale: dscale,
                shift: dshift,
            });
        }
        grads.reverse();
        Ok((NetGrads { layers: grads }, g))
    }

    /// Drop any recorded forward pass.
    pub fn clear_tape(&mut self) {
        self.tape = None;
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn activate(z: &Array2<f64>, act: Activation) -> Array2<f64> {
    match act {
        Activation::Identity => z.clone(),
        Activation::LeakyRelu => z.mapv(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v }),
        Activation::Sigmoid => z.mapv(sigmoid),
    }
}

fn activation_backward(
    g: &Array2<f64>,
    act_in: &Array2<f64>,
    act_out: &Array2<f64>,
    act: Activation,
) -> Array2<f64> {
    match act {
        Activation::Identity => g.clone(),
        Activation::LeakyRelu => {
            let mut d = g.clone();
            Zip::from(&mut d).and(act_in).for_each(|d, &z| {
                if z <= 0.0 {
                    *d *= LEAKY_SLOPE;
                }
            });
            d
        }
        Activation::Sigmoid => {
            let mut d = g.clone();
            Zip::from(&mut d).and(act_out).for_each(|d, &p| *d *= p * (1.0 - p));
            d
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let layer = Layer::new(Array2::eye(3), Array1::zeros(3), None, Activation::Identity).unwrap();
        let mut net = DenseNet::from_layers(vec![layer]).unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(net.forward(&x, Mode::Eval).unwrap(), x);
        assert_eq!(net.forward(&x, Mode::Train).unwrap(), x);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = DenseNet::mlp(&[4, 6, 2], Activation::Sigmoid, &mut rng).unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let a = net.forward(&x, Mode::Eval).unwrap();
        let b = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
        assert_eq!(net.predict(&x).unwrap(), a);
    }

    #[test]
    fn two_layer_forward_matches_straight_line_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = DenseNet::mlp(&[3, 4, 2], Activation::Identity, &mut rng).unwrap();
        let x: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..3).map(|j| ((i * 3 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let batch = Array2::from_shape_fn((6, 3), |(i, j)| x[i][j]);
        let got = net.forward(&batch, Mode::Train).unwrap();

        // Scalar loops, no ndarray arithmetic.
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut hidden = vec![vec![0.0; 4]; 6];
        for (i, row) in x.iter().enumerate() {
            for o in 0..4 {
                let mut acc = l0.bias[o];
                for (k, v) in row.iter().enumerate() {
                    acc += v * l0.weight[[k, o]];
                }
                hidden[i][o] = acc;
            }
        }
        for o in 0..4 {
            let mean: f64 = hidden.iter().map(|h| h[o]).sum::<f64>() / 6.0;
            let var: f64 = hidden.iter().map(|h| (h[o] - mean).powi(2)).sum::<f64>() / 6.0;
            for h in hidden.iter_mut() {
                let n = (h[o] - mean) / (var + 1e-5).sqrt();
                h[o] = if n > 0.0 { n } else { 0.01 * n };
            }
        }
        for i in 0..6 {
            for o in 0..2 {
                let mut acc = l1.bias[o];
                for k in 0..4 {
                    acc += hidden[i][k] * l1.weight[[k, o]];
                }
                let rel = (got[[i, o]] - acc).abs() / acc.abs().max(1e-12);
                assert!(rel < 1e-6, "({i},{o}): {} vs {acc}", got[[i, o]]);
            }
        }
    }

    #[test]
    fn train_mode_rejects_single_row_and_bad_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = DenseNet::mlp(&[3, 4, 2], Activation::Identity, &mut rng).unwrap();
        assert!(net.forward(&Array2::zeros((1, 3)), Mode::Train).is_err());
        assert!(net.forward(&Array2::zeros((1, 3)), Mode::Eval).is_ok());
        assert!(net.forward(&Array2::zeros((4, 2)), Mode::Eval).is_err());
    }

    #[test]
    fn backward_needs_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = DenseNet::mlp(&[3, 2], Activation::Identity, &mut rng).unwrap();
        assert!(net.backward(&Array2::zeros((2, 2))).is_err());
        net.forward(&Array2::zeros((2, 3)), Mode::Train).unwrap();
        assert!(net.backward(&Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let a = Layer::new(Array2::zeros((3, 4)), Array1::zeros(4), None, Activation::Identity).unwrap();
        let b = Layer::new(Array2::zeros((5, 1)), Array1::zeros(1), None, Activation::Identity).unwrap();
        assert!(DenseNet::from_layers(vec![a, b]).is_err());
    }
}
