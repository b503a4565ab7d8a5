//! Layer specifications, shape inference and the feed-forward layers.
//!
//! Activations are batch-first and channels-last: `[batch, features]` for
//! dense layers and `[batch, length, channels]` for sequences.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::recurrent::{Bidirectional, Lstm, Rnn};
use super::tensor::{Scalar, Tensor};
use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    GlorotUniform,
    GlorotNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub(crate) fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output `y`.
    pub(crate) fn grad_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Declarative description of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        #[serde(default)]
        init: Init,
    },
    Relu,
    Sigmoid,
    Conv1d {
        filters: usize,
        kernel_size: usize,
        #[serde(default)]
        padding: Padding,
        #[serde(default = "yes")]
        bias: bool,
        #[serde(default)]
        init: Init,
    },
    MaxPool1d {
        pool: usize,
    },
    AvgPool1d {
        pool: usize,
    },
    /// `y = body(x) + x`; a single-channel `x` is broadcast across the
    /// body's channels.
    Residual {
        body: Vec<LayerSpec>,
    },
    Rnn {
        units: usize,
        #[serde(default)]
        return_sequences: bool,
        #[serde(default)]
        activation: Activation,
    },
    Lstm {
        units: usize,
        #[serde(default)]
        return_sequences: bool,
    },
    Bidirectional {
        layer: Box<LayerSpec>,
    },
    Reshape {
        shape: Vec<usize>,
    },
    Flatten,
}

fn yes() -> bool {
    true
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::AvgPool1d { .. } => "avgpool1d",
            LayerSpec::Residual { .. } => "residual_add",
            LayerSpec::Rnn { .. } => "rnn",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Bidirectional { .. } => "bidirectional",
            LayerSpec::Reshape { .. } => "reshape",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: String| Err(NnError::Shape(format!("{}: {why} (input {input:?})", self.kind())));
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(NnError::Shape(format!("{}: {name} must be positive", self.kind())))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Dense { units, .. } => {
                positive("units", *units)?;
                if input.len() != 1 || input[0] == 0 {
                    return bad("expects a flat feature vector".into());
                }
                Ok(vec![*units])
            }
            LayerSpec::Relu | LayerSpec::Sigmoid => Ok(input.to_vec()),
            LayerSpec::Conv1d {
                filters, kernel_size, ..
            } => {
                positive("filters", *filters)?;
                positive("kernel_size", *kernel_size)?;
                if kernel_size % 2 == 0 {
                    return bad(format!("kernel size {kernel_size} must be odd for same padding"));
                }
                if input.len() != 2 || input[0] == 0 || input[1] == 0 {
                    return bad("expects [length, channels]".into());
                }
                Ok(vec![input[0], *filters])
            }
            LayerSpec::MaxPool1d { pool } | LayerSpec::AvgPool1d { pool } => {
                positive("pool", *pool)?;
                if input.len() != 2 || input[0] < *pool {
                    return bad(format!("expects [length >= {pool}, channels]"));
                }
                Ok(vec![input[0] / pool, input[1]])
            }
            LayerSpec::Residual { body } => {
                let mut shape = input.to_vec();
                for l in body {
                    shape = l.output_shape(&shape)?;
                }
                if shape.len() != input.len()
                    || shape[..shape.len() - 1] != input[..input.len() - 1]
                    || !(input[input.len() - 1] == shape[shape.len() - 1] || input[input.len() - 1] == 1)
                {
                    return bad(format!("body output {shape:?} cannot be added to the input"));
                }
                Ok(shape)
            }
            LayerSpec::Rnn {
                units,
                return_sequences,
                ..
            }
            | LayerSpec::Lstm {
                units,
                return_sequences,
            } => {
                positive("units", *units)?;
                if input.len() != 2 || input[0] == 0 || input[1] == 0 {
                    return bad("expects [steps, features]".into());
                }
                Ok(if *return_sequences {
                    vec![input[0], *units]
                } else {
                    vec![*units]
                })
            }
            LayerSpec::Bidirectional { layer } => {
                if !matches!(**layer, LayerSpec::Rnn { .. } | LayerSpec::Lstm { .. }) {
                    return bad("wraps only rnn or lstm layers".into());
                }
                let mut s = layer.output_shape(input)?;
                *s.last_mut().unwrap() *= 2;
                Ok(s)
            }
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() || shape.contains(&0) {
                    return bad(format!("cannot reshape to {shape:?}"));
                }
                Ok(shape.clone())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn build<T: Scalar>(&self, input: &[usize], rng: &mut impl Rng) -> Result<Box<dyn Layer<T>>> {
        self.output_shape(input)?;
        Ok(match self {
            LayerSpec::Dense { units, init } => Box::new(Dense::new(input[0], *units, *init, rng)),
            LayerSpec::Relu => Box::new(Act::new(Activation::Relu)),
            LayerSpec::Sigmoid => Box::new(Act::new(Activation::Sigmoid)),
            LayerSpec::Conv1d {
                filters,
                kernel_size,
                bias,
                init,
                ..
            } => Box::new(Conv1d::new(input[1], *filters, *kernel_size, *bias, *init, rng)),
            LayerSpec::MaxPool1d { pool } => Box::new(Pool1d::new(*pool, PoolMode::Max)),
            LayerSpec::AvgPool1d { pool } => Box::new(Pool1d::new(*pool, PoolMode::Average)),
            LayerSpec::Residual { body } => Box::new(Residual {
                body: Sequential::build(body, input, rng)?,
                cache: None,
            }),
            LayerSpec::Rnn {
                units,
                return_sequences,
                activation,
            } => Box::new(Rnn::new(input[1], *units, *return_sequences, *activation, rng)),
            LayerSpec::Lstm {
                units,
                return_sequences,
            } => Box::new(Lstm::new(input[1], *units, *return_sequences, rng)),
            LayerSpec::Bidirectional { layer } => {
                let fwd = layer.build(input, rng)?;
                let bwd = layer.build(input, rng)?;
                let seq = matches!(
                    **layer,
                    LayerSpec::Rnn {
                        return_sequences: true,
                        ..
                    } | LayerSpec::Lstm {
                        return_sequences: true,
                        ..
                    }
                );
                Box::new(Bidirectional::new(fwd, bwd, seq))
            }
            LayerSpec::Reshape { shape } => Box::new(Reshape::new(shape.clone())),
            LayerSpec::Flatten => Box::new(Reshape::flatten()),
        })
    }
}

/// Shapes after every layer of a sequence; the first mismatch names the
/// offending layer.
pub fn infer_shapes(specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut shapes = Vec::with_capacity(specs.len());
    let mut shape = input.to_vec();
    for (i, s) in specs.iter().enumerate() {
        shape = s
            .output_shape(&shape)
            .map_err(|e| NnError::Shape(format!("layer {i} ({}): {e}", s.kind())))?;
        shapes.push(shape.clone());
    }
    Ok(shapes)
}

/// A differentiable layer. `forward` caches what `backward` needs;
/// `backward` accumulates parameter gradients and returns the input
/// gradient.
pub trait Layer<T: Scalar>: Send {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>>;
    fn params(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
}

pub(crate) fn no_forward(kind: &str) -> NnError {
    NnError::State(format!("{kind}: backward called before forward"))
}

fn check_grad_shape<T: Scalar>(kind: &str, dy: &Tensor<T>, shape: &[usize]) -> Result<()> {
    if dy.shape != shape {
        return Err(NnError::Shape(format!(
            "{kind}: gradient shape {:?} does not match output {shape:?}",
            dy.shape
        )));
    }
    Ok(())
}

pub fn glorot_std(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Zero-mean draws with variance `2/(fan_in + fan_out)`.
pub fn glorot<T: Scalar>(n: usize, fan_in: usize, fan_out: usize, init: Init, rng: &mut impl Rng) -> Vec<T> {
    match init {
        Init::GlorotNormal => {
            let d = Normal::new(0.0, glorot_std(fan_in, fan_out)).expect("finite std");
            (0..n).map(|_| T::c(d.sample(rng))).collect()
        }
        Init::GlorotUniform => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let d = Uniform::new_inclusive(-limit, limit);
            (0..n).map(|_| T::c(d.sample(rng))).collect()
        }
    }
}

/// `y = W·x + b` with `W` stored `[out, in]`.
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(inputs: usize, units: usize, init: Init, rng: &mut impl Rng) -> Self {
        Self {
            weight: Tensor::param(vec![units, inputs], glorot(units * inputs, inputs, units, init, rng)),
            bias: Tensor::param(vec![units], vec![T::zero(); units]),
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, inp) = (self.weight.shape[0], self.weight.shape[1]);
        if x.shape.len() != 2 || x.shape[1] != inp {
            return Err(NnError::Shape(format!("dense: input {:?}, expected [batch, {inp}]", x.shape)));
        }
        let b = x.shape[0];
        let mut y = Vec::with_capacity(b * out);
        for _ in 0..b {
            y.extend_from_slice(&self.bias.data);
        }
        T::gemm(false, true, b, inp, out, T::one(), &x.data, &self.weight.data, T::one(), &mut y);
        self.input = Some(x.clone());
        Tensor::new(vec![b, out], y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.as_ref().ok_or_else(|| no_forward("dense"))?;
        let (out, inp) = (self.weight.shape[0], self.weight.shape[1]);
        let b = x.shape[0];
        check_grad_shape("dense", dy, &[b, out])?;
        T::gemm(true, false, out, b, inp, T::one(), &dy.data, &x.data, T::one(), self.weight.grad_mut());
        let db = self.bias.grad_mut();
        for row in dy.data.chunks_exact(out) {
            for (g, &v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![T::zero(); b * inp];
        T::gemm(false, false, b, out, inp, T::one(), &dy.data, &self.weight.data, T::zero(), &mut dx);
        Tensor::new(vec![b, inp], dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Pointwise activation.
pub struct Act<T> {
    pub activation: Activation,
    output: Option<Tensor<T>>,
}

impl<T: Scalar> Act<T> {
    pub fn new(activation: Activation) -> Self {
        Self {
            activation,
            output: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Act<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.activation;
        let y = Tensor::new(x.shape.clone(), x.data.iter().map(|&v| a.apply(v)).collect())?;
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.output.as_ref().ok_or_else(|| no_forward("activation"))?;
        check_grad_shape("activation", dy, &y.shape)?;
        let a = self.activation;
        Tensor::new(
            dy.shape.clone(),
            dy.data
                .iter()
                .zip(&y.data)
                .map(|(&g, &v)| g * a.grad_from_output(v))
                .collect(),
        )
    }
}

/// Same-padded cross-correlation `y[l, f] = b[f] + Σ_{j,c} w[j, c, f]·x[l + j − p, c]`.
pub struct Conv1d<T> {
    /// `[kernel, in_channels, filters]`.
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    cols: Option<(Vec<T>, Vec<usize>)>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(cin: usize, filters: usize, kernel: usize, bias: bool, init: Init, rng: &mut impl Rng) -> Self {
        let w = glorot(kernel * cin * filters, kernel * cin, kernel * filters, init, rng);
        Self {
            weight: Tensor::param(vec![kernel, cin, filters], w),
            bias: bias.then(|| Tensor::param(vec![filters], vec![T::zero(); filters])),
            cols: None,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.weight.shape[0], self.weight.shape[1], self.weight.shape[2])
    }
}

impl<T: Scalar> Layer<T> for Conv1d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (k, cin, cout) = self.dims();
        if x.shape.len() != 3 || x.shape[2] != cin {
            return Err(NnError::Shape(format!(
                "conv1d: input {:?}, expected [batch, length, {cin}]",
                x.shape
            )));
        }
        let (b, l) = (x.shape[0], x.shape[1]);
        let p = k / 2;
        let width = k * cin;
        let mut cols = vec![T::zero(); b * l * width];
        for bi in 0..b {
            let xs = &x.data[bi * l * cin..(bi + 1) * l * cin];
            for li in 0..l {
                let row = &mut cols[(bi * l + li) * width..(bi * l + li + 1) * width];
                for j in 0..k {
                    let src = li as isize + j as isize - p as isize;
                    if src >= 0 && (src as usize) < l {
                        let s = src as usize;
                        row[j * cin..(j + 1) * cin].copy_from_slice(&xs[s * cin..(s + 1) * cin]);
                    }
                }
            }
        }
        let mut y = vec![T::zero(); b * l * cout];
        if let Some(bias) = &self.bias {
            for row in y.chunks_exact_mut(cout) {
                row.copy_from_slice(&bias.data);
            }
        }
        T::gemm(false, false, b * l, width, cout, T::one(), &cols, &self.weight.data, T::one(), &mut y);
        self.cols = Some((cols, x.shape.clone()));
        Tensor::new(vec![b, l, cout], y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (k, cin, cout) = self.dims();
        let (cols, xshape) = self.cols.as_ref().ok_or_else(|| no_forward("conv1d"))?;
        let (b, l) = (xshape[0], xshape[1]);
        check_grad_shape("conv1d", dy, &[b, l, cout])?;
        let width = k * cin;
        T::gemm(true, false, width, b * l, cout, T::one(), cols, &dy.data, T::one(), self.weight.grad_mut());
        if let Some(bias) = &mut self.bias {
            let db = bias.grad_mut();
            for row in dy.data.chunks_exact(cout) {
                for (g, &v) in db.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let mut dcols = vec![T::zero(); b * l * width];
        T::gemm(false, true, b * l, cout, width, T::one(), &dy.data, &self.weight.data, T::zero(), &mut dcols);
        let p = k / 2;
        let mut dx = vec![T::zero(); b * l * cin];
        for bi in 0..b {
            for li in 0..l {
                let row = &dcols[(bi * l + li) * width..(bi * l + li + 1) * width];
                for j in 0..k {
                    let src = li as isize + j as isize - p as isize;
                    if src >= 0 && (src as usize) < l {
                        let s = bi * l + src as usize;
                        for c in 0..cin {
                            dx[s * cin + c] += row[j * cin + c];
                        }
                    }
                }
            }
        }
        Tensor::new(xshape.clone(), dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.as_ref());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.as_mut());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Average,
}

/// Non-overlapping pooling along the length axis; a trailing partial
/// window is dropped.
pub struct Pool1d {
    pub pool: usize,
    pub mode: PoolMode,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl Pool1d {
    pub fn new(pool: usize, mode: PoolMode) -> Self {
        Self { pool, mode, cache: None }
    }
}

impl<T: Scalar> Layer<T> for Pool1d {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape.len() != 3 || x.shape[1] < self.pool {
            return Err(NnError::Shape(format!("pool1d: input {:?} too short for pool {}", x.shape, self.pool)));
        }
        let (b, l, c) = (x.shape[0], x.shape[1], x.shape[2]);
        let lo = l / self.pool;
        let mut y = vec![T::zero(); b * lo * c];
        let mut arg = Vec::new();
        if self.mode == PoolMode::Max {
            arg = vec![0usize; b * lo * c];
        }
        let inv = T::one() / T::c(self.pool as f64);
        for bi in 0..b {
            for o in 0..lo {
                for ch in 0..c {
                    let out = (bi * lo + o) * c + ch;
                    let first = (bi * l + o * self.pool) * c + ch;
                    match self.mode {
                        PoolMode::Max => {
                            let mut best = first;
                            for j in 1..self.pool {
                                let idx = first + j * c;
                                if x.data[idx] > x.data[best] {
                                    best = idx;
                                }
                            }
                            y[out] = x.data[best];
                            arg[out] = best;
                        }
                        PoolMode::Average => {
                            let mut s = T::zero();
                            for j in 0..self.pool {
                                s += x.data[first + j * c];
                            }
                            y[out] = s * inv;
                        }
                    }
                }
            }
        }
        self.cache = Some((x.shape.clone(), arg));
        Tensor::new(vec![b, lo, c], y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (xshape, arg) = self.cache.as_ref().ok_or_else(|| no_forward("pool1d"))?;
        let (b, l, c) = (xshape[0], xshape[1], xshape[2]);
        let lo = l / self.pool;
        check_grad_shape("pool1d", dy, &[b, lo, c])?;
        let mut dx = vec![T::zero(); b * l * c];
        match self.mode {
            PoolMode::Max => {
                for (o, &g) in dy.data.iter().enumerate() {
                    dx[arg[o]] += g;
                }
            }
            PoolMode::Average => {
                let inv = T::one() / T::c(self.pool as f64);
                for bi in 0..b {
                    for o in 0..lo {
                        for ch in 0..c {
                            let g = dy.data[(bi * lo + o) * c + ch] * inv;
                            let first = (bi * l + o * self.pool) * c + ch;
                            for j in 0..self.pool {
                                dx[first + j * c] += g;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(xshape.clone(), dx)
    }
}

/// Per-sample reshape; `None` flattens.
pub struct Reshape {
    target: Option<Vec<usize>>,
    input: Option<Vec<usize>>,
}

impl Reshape {
    pub fn new(shape: Vec<usize>) -> Self {
        Self {
            target: Some(shape),
            input: None,
        }
    }

    pub fn flatten() -> Self {
        Self {
            target: None,
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Reshape {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let b = x.batch();
        let mut shape = vec![b];
        match &self.target {
            Some(t) => shape.extend(t),
            None => shape.push(x.shape[1..].iter().product()),
        }
        self.input = Some(x.shape.clone());
        Tensor::new(x.shape.clone(), x.data.clone())?.reshaped(shape)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.input.clone().ok_or_else(|| no_forward("reshape"))?;
        Tensor::new(dy.shape.clone(), dy.data.clone())?.reshaped(shape)
    }
}

pub struct Residual<T> {
    pub body: Sequential<T>,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl<T: Scalar> Layer<T> for Residual<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.body.forward(x)?;
        let cin = *x.shape.last().unwrap();
        let cout = *y.shape.last().unwrap();
        if y.shape[..y.shape.len() - 1] != x.shape[..x.shape.len() - 1] || !(cin == cout || cin == 1) {
            return Err(NnError::Shape(format!("residual: cannot add {:?} to {:?}", x.shape, y.shape)));
        }
        if cin == cout {
            for (a, &b) in y.data.iter_mut().zip(&x.data) {
                *a += b;
            }
        } else {
            for (row, &b) in y.data.chunks_exact_mut(cout).zip(&x.data) {
                row.iter_mut().for_each(|a| *a += b);
            }
        }
        self.cache = Some((x.shape.clone(), y.shape.clone()));
        Ok(y)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (xshape, yshape) = self.cache.clone().ok_or_else(|| no_forward("residual"))?;
        check_grad_shape("residual", dy, &yshape)?;
        let mut dx = self.body.backward(dy)?;
        let (cin, cout) = (*xshape.last().unwrap(), *yshape.last().unwrap());
        if cin == cout {
            for (a, &g) in dx.data.iter_mut().zip(&dy.data) {
                *a += g;
            }
        } else {
            for (a, row) in dx.data.iter_mut().zip(dy.data.chunks_exact(cout)) {
                *a += row.iter().copied().sum::<T>();
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.body.params_mut()
    }
}

pub struct Sequential<T> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn build(specs: &[LayerSpec], input: &[usize], rng: &mut impl Rng) -> Result<Self> {
        infer_shapes(specs, input)?;
        let mut shape = input.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for s in specs {
            layers.push(s.build::<T>(&shape, rng)?);
            shape = s.output_shape(&shape)?;
        }
        Ok(Self { layers })
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x)?;
        for l in iter {
            h = l.forward(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut iter = self.layers.iter_mut().rev();
        let Some(last) = iter.next() else {
            return Ok(dy.clone());
        };
        let mut g = last.backward(dy)?;
        for l in iter {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
