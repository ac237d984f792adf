//! Fully connected network trained with the aRMSE loss.
//!
//! Weights are stored `in x out`, so a batch `X` (rows = samples) maps to
//! `act(X W + b)`. The network is generic over [`Scalar`]; training and model
//! files use `f32`, gradient checks run in `f64`.

mod io;
mod optim;
mod standardize;
mod train;

use std::fmt::{Debug, Display};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use io::{load_model, save_model};
pub use optim::{Nadam, NadamState};
pub use standardize::{train_standardized, Standardizer};
pub use train::{train, EpochLog, TrainOptions, TrainReport};

/// Floating-point element type of a network.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + LinalgScalar + ScalarOperand + Send + Sync + Debug + Display + Default + 'static
{
    /// Byte width, also the dtype tag in model files.
    const WIDTH: u8;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn unit_sample<R: Rng>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().unwrap())
    }
    fn unit_sample<R: Rng>(rng: &mut R) -> Self {
        rng.gen::<f32>()
    }
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().unwrap())
    }
    fn unit_sample<R: Rng>(rng: &mut R) -> Self {
        rng.gen::<f64>()
    }
}

#[inline]
pub(crate) fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Logistic,
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Logistic => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Logistic),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }

    fn apply<T: Scalar>(self, z: &mut Array2<T>) {
        match self {
            Activation::Logistic => z.mapv_inplace(|v| T::one() / (T::one() + (-v).exp())),
            Activation::Relu => z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Identity => {}
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output `a`.
    fn backprop<T: Scalar>(self, grad: &mut Array2<T>, a: &Array2<T>) {
        match self {
            Activation::Logistic => grad.zip_mut_with(a, |g, &a| *g = *g * a * (T::one() - a)),
            Activation::Relu => grad.zip_mut_with(a, |g, &a| {
                if a <= T::zero() {
                    *g = T::zero()
                }
            }),
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar> {
    /// `in x out`.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
    /// Excluded from optimizer updates.
    pub frozen: bool,
    /// Dropout is applied to this layer's output during training.
    pub dropout: bool,
    /// Input offset `o` of a square ReLU layer, which then computes
    /// `relu((x + o) W + b) - o`.
    pub offset: Option<Array1<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    /// Pre-activation plus activation, given the layer input.
    fn activate(&self, input: &Array2<T>) -> Array2<T> {
        let mut a = input.dot(&self.weights);
        match &self.offset {
            None => {
                a += &self.bias;
                self.activation.apply(&mut a);
            }
            Some(o) => {
                // relu(s) - o == max(s - o, -o), and s - o = x W + (o W + b - o).
                let shift = o.dot(&self.weights) + &self.bias - o;
                a += &shift;
                for mut row in a.rows_mut() {
                    row.zip_mut_with(o, |v, &o| {
                        if !(*v > -o) {
                            *v = -o
                        }
                    });
                }
            }
        }
        a
    }

    /// Turns the gradient at the output into the gradient at the pre-activation.
    fn backprop_activation(&self, grad: &mut Array2<T>, out: &Array2<T>) {
        match &self.offset {
            None => self.activation.backprop(grad, out),
            Some(o) => {
                for (mut g, a) in grad.rows_mut().into_iter().zip(out.rows()) {
                    Zip::from(&mut g).and(&a).and(o).for_each(|g, &a, &o| {
                        if !(a > -o) {
                            *g = T::zero()
                        }
                    });
                }
            }
        }
    }
}

/// Network, optimizer state and training history.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T: Scalar = f32> {
    pub layers: Vec<Layer<T>>,
    pub optimizer: NadamState<T>,
    pub log: Vec<EpochLog>,
}

/// Whether the forward pass applies dropout.
pub enum Mode<'a> {
    Eval,
    Train { dropout_rate: f64, rng: &'a mut ChaCha8Rng },
}

/// Per-layer gradients; `None` for frozen layers.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar> {
    pub weights: Vec<Option<Array2<T>>>,
    pub bias: Vec<Option<Array1<T>>>,
}

struct Cache<T: Scalar> {
    /// Input of each layer.
    inputs: Vec<Array2<T>>,
    /// Activation output of each layer, before dropout.
    outputs: Vec<Array2<T>>,
    masks: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> MlpModel<T> {
    /// Glorot-uniform weights and zero biases, seeded. Hidden layers use
    /// `hidden_activation` and dropout; the output layer is linear.
    pub fn new(input: usize, hidden: &[usize], output: usize, hidden_activation: Activation, seed: u64) -> Result<Self> {
        if input == 0 || output == 0 || hidden.contains(&0) {
            return Err(Error::invariant("layer widths must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect();
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
                let weights =
                    Array2::from_shape_simple_fn((w[0], w[1]), || lit::<T>(rng.gen_range(-limit..limit)));
                Layer {
                    weights,
                    bias: Array1::zeros(w[1]),
                    activation: if k == last { Activation::Identity } else { hidden_activation },
                    frozen: false,
                    dropout: k != last,
                    offset: None,
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    /// Wraps existing layers with a fresh optimizer state and empty log.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("a network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::invariant(format!(
                    "layer {k} emits {} values but layer {} takes {}",
                    pair[0].outputs(),
                    k + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::invariant(format!("layer {k} bias width mismatch")));
            }
            if let Some(o) = &l.offset {
                if l.activation != Activation::Relu || l.inputs() != l.outputs() || o.len() != l.inputs() {
                    return Err(Error::invariant(format!(
                        "layer {k}: an input offset needs a square ReLU layer of matching width"
                    )));
                }
            }
        }
        if layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::invariant("the output layer must be linear"));
        }
        let optimizer = NadamState::for_layers(&layers);
        Ok(Self {
            layers,
            optimizer,
            log: Vec::new(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::Shape {
                what: "network input width",
                expected: self.input_width(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<T>, mut mode: Mode<'_>) -> Result<Cache<T>> {
        self.check_input(&x)?;
        let mut cache = Cache {
            inputs: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
            masks: Vec::with_capacity(self.layers.len()),
        };
        let mut current = x.to_owned();
        for layer in &self.layers {
            let a = layer.activate(&current);
            let mask = match &mut mode {
                Mode::Train { dropout_rate, rng } if layer.dropout && *dropout_rate > 0.0 => {
                    let keep = 1.0 - *dropout_rate;
                    let scale = lit::<T>(1.0 / keep);
                    let p = lit::<T>(*dropout_rate);
                    Some(Array2::from_shape_simple_fn(a.raw_dim(), || {
                        if T::unit_sample(*rng) < p {
                            T::zero()
                        } else {
                            scale
                        }
                    }))
                }
                _ => None,
            };
            let next = match &mask {
                Some(m) => &a * m,
                None => a.clone(),
            };
            cache.inputs.push(current);
            cache.outputs.push(a);
            cache.masks.push(mask);
            current = next;
        }
        Ok(cache)
    }

    /// Batch forward pass.
    pub fn forward(&self, x: ArrayView2<T>, mode: Mode<'_>) -> Result<Array2<T>> {
        let mut cache = self.forward_cached(x, mode)?;
        let out = cache.outputs.pop().unwrap();
        Ok(match cache.masks.pop().unwrap() {
            Some(m) => &out * &m,
            None => out,
        })
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.forward(x, Mode::Eval)
    }

    fn backward(&self, cache: &Cache<T>, grad_out: Array2<T>) -> Gradients<T> {
        let first_trainable = self.layers.iter().position(|l| !l.frozen);
        let count = self.layers.len();
        let mut gw = vec![None; count];
        let mut gb = vec![None; count];
        let Some(first) = first_trainable else {
            return Gradients { weights: gw, bias: gb };
        };
        let mut grad = grad_out;
        for k in (first..count).rev() {
            let layer = &self.layers[k];
            if let Some(mask) = &cache.masks[k] {
                grad *= mask;
            }
            layer.backprop_activation(&mut grad, &cache.outputs[k]);
            if !layer.frozen {
                let mut w = cache.inputs[k].t().dot(&grad);
                let b = grad.sum_axis(Axis(0));
                if let Some(o) = &layer.offset {
                    // The weights act on x + o.
                    let col = o.view().insert_axis(Axis(1));
                    w += &col.dot(&b.view().insert_axis(Axis(0)));
                }
                gw[k] = Some(w);
                gb[k] = Some(b);
            }
            if k > first {
                grad = grad.dot(&layer.weights.t());
            }
        }
        Gradients { weights: gw, bias: gb }
    }

    /// Loss and exact gradients of the batch aRMSE, with dropout per `mode`.
    pub fn loss_and_gradients(&self, x: ArrayView2<T>, y: ArrayView2<T>, mode: Mode<'_>) -> Result<(T, Gradients<T>)> {
        let cache = self.forward_cached(x, mode)?;
        let last = cache.outputs.len() - 1;
        let pred = match &cache.masks[last] {
            Some(m) => &cache.outputs[last] * m,
            None => cache.outputs[last].clone(),
        };
        let (loss, grad) = armse_with_grad(pred.view(), y)?;
        Ok((loss, self.backward(&cache, grad)))
    }

    /// Eval-mode gradients of the batch aRMSE.
    pub fn gradients(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> Result<Gradients<T>> {
        Ok(self.loss_and_gradients(x, y, Mode::Eval)?.1)
    }

    /// Eval-mode aRMSE on a set.
    pub fn loss(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> Result<T> {
        armse(self.predict(x)?.view(), y)
    }
}

fn check_pair<T: Scalar>(pred: &ArrayView2<T>, truth: &ArrayView2<T>) -> Result<()> {
    if pred.nrows() == 0 {
        return Err(Error::Empty("aRMSE needs at least one sample"));
    }
    if pred.dim() != truth.dim() {
        return Err(Error::Shape {
            what: if pred.nrows() != truth.nrows() {
                "target row count"
            } else {
                "target width"
            },
            expected: pred.ncols().max(pred.nrows()),
            found: if pred.nrows() != truth.nrows() {
                truth.nrows()
            } else {
                truth.ncols()
            },
        });
    }
    Ok(())
}

/// Mean over components of the per-component RMSE across the batch.
pub fn armse<T: Scalar>(pred: ArrayView2<T>, truth: ArrayView2<T>) -> Result<T> {
    check_pair(&pred, &truth)?;
    let samples = lit::<T>(pred.nrows() as f64);
    let mut total = T::zero();
    for (p, t) in pred.columns().into_iter().zip(truth.columns()) {
        let sq = p.iter().zip(t).fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        total = total + (sq / samples).sqrt();
    }
    Ok(total / lit::<T>(pred.ncols() as f64))
}

/// aRMSE and its gradient with respect to `pred`. A component with zero RMSE
/// contributes a zero gradient.
pub fn armse_with_grad<T: Scalar>(pred: ArrayView2<T>, truth: ArrayView2<T>) -> Result<(T, Array2<T>)> {
    check_pair(&pred, &truth)?;
    let (rows, cols) = pred.dim();
    let samples = lit::<T>(rows as f64);
    let comps = lit::<T>(cols as f64);
    let mut grad = &pred - &truth;
    let mut total = T::zero();
    for mut col in grad.columns_mut() {
        let sq = col.iter().fold(T::zero(), |acc, &e| acc + e * e);
        let rmse = (sq / samples).sqrt();
        total = total + rmse;
        if rmse > T::zero() {
            let scale = T::one() / (comps * samples * rmse);
            col.mapv_inplace(|e| e * scale);
        } else {
            col.fill(T::zero());
        }
    }
    Ok((total / comps, grad))
}
