//! Recurrent layers trained by backpropagation through time.
//!
//! Internally sequences are kept time-major so each step works on a
//! contiguous `[batch, features]` block.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{glorot, no_forward, sigmoid, Activation, Init, Layer};
use super::tensor::{Scalar, Tensor};
use super::{NnError, Result};

/// `[d0, d1, c] -> [d1, d0, c]`.
fn swap01<T: Copy>(data: &[T], d0: usize, d1: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for j in 0..d1 {
        for i in 0..d0 {
            let s = (i * d1 + j) * c;
            out.extend_from_slice(&data[s..s + c]);
        }
    }
    out
}

fn sequence_dims(kind: &str, x: &Tensor<impl Scalar>, features: usize) -> Result<(usize, usize)> {
    if x.shape.len() != 3 || x.shape[2] != features || x.shape[1] == 0 {
        return Err(NnError::Shape(format!(
            "{kind}: input {:?}, expected [batch, steps, {features}]",
            x.shape
        )));
    }
    Ok((x.shape[0], x.shape[1]))
}

/// Expands a gradient on the returned outputs to a time-major `[T, B, u]`
/// buffer that is zero at unreturned steps.
fn expand_output_grad<T: Scalar>(
    kind: &str,
    dy: &Tensor<T>,
    b: usize,
    steps: usize,
    u: usize,
    sequences: bool,
) -> Result<Vec<T>> {
    if sequences {
        if dy.shape != [b, steps, u] {
            return Err(NnError::Shape(format!("{kind}: gradient {:?}, expected [{b}, {steps}, {u}]", dy.shape)));
        }
        Ok(swap01(&dy.data, b, steps, u))
    } else {
        if dy.shape != [b, u] {
            return Err(NnError::Shape(format!("{kind}: gradient {:?}, expected [{b}, {u}]", dy.shape)));
        }
        let mut g = vec![T::zero(); steps * b * u];
        g[(steps - 1) * b * u..].copy_from_slice(&dy.data);
        Ok(g)
    }
}

fn collect_output<T: Scalar>(tm: &[T], b: usize, steps: usize, u: usize, sequences: bool) -> Result<Tensor<T>> {
    if sequences {
        Tensor::new(vec![b, steps, u], swap01(tm, steps, b, u))
    } else {
        Tensor::new(vec![b, u], tm[(steps - 1) * b * u..].to_vec())
    }
}

fn accumulate_bias<T: Scalar>(grad: &mut [T], rows: &[T]) {
    for row in rows.chunks_exact(grad.len()) {
        for (g, &v) in grad.iter_mut().zip(row) {
            *g += v;
        }
    }
}

/// Rows of a `rows×cols` matrix (`rows <= cols`) made orthonormal by
/// Gram-Schmidt over Gaussian draws.
pub fn orthogonal<T: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Vec<T> {
    assert!(rows <= cols, "orthogonal init needs rows <= cols");
    let mut m: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..rows {
        for j in 0..i {
            let dot: f64 = (0..cols).map(|k| m[i * cols + k] * m[j * cols + k]).sum();
            for k in 0..cols {
                m[i * cols + k] -= dot * m[j * cols + k];
            }
        }
        let norm = (0..cols).map(|k| m[i * cols + k].powi(2)).sum::<f64>().sqrt();
        for k in 0..cols {
            m[i * cols + k] /= norm;
        }
    }
    m.into_iter().map(T::c).collect()
}

/// Elman cell `a_t = W_ax·x_t + W_aa·a_{t−1} + b_a`, `y_t = s(W_pa·a_t + b_p)`.
/// Weights are stored input-major (`[in, units]`) so a batch step is `X·W`.
pub struct Rnn<T> {
    pub w_ax: Tensor<T>,
    pub w_aa: Tensor<T>,
    pub w_pa: Tensor<T>,
    pub b_a: Tensor<T>,
    pub b_p: Tensor<T>,
    pub return_sequences: bool,
    pub activation: Activation,
    cache: Option<RnnCache<T>>,
}

struct RnnCache<T> {
    b: usize,
    steps: usize,
    x: Vec<T>,
    a: Vec<T>,
    y: Vec<T>,
}

impl<T: Scalar> Rnn<T> {
    pub fn new(inputs: usize, units: usize, return_sequences: bool, activation: Activation, rng: &mut impl Rng) -> Self {
        let u = units;
        Self {
            w_ax: Tensor::param(vec![inputs, u], glorot(inputs * u, inputs, u, Init::GlorotUniform, rng)),
            w_aa: Tensor::param(vec![u, u], orthogonal(u, u, rng)),
            w_pa: Tensor::param(vec![u, u], glorot(u * u, u, u, Init::GlorotUniform, rng)),
            b_a: Tensor::param(vec![u], vec![T::zero(); u]),
            b_p: Tensor::param(vec![u], vec![T::zero(); u]),
            return_sequences,
            activation,
            cache: None,
        }
    }

    fn units(&self) -> usize {
        self.w_aa.shape[0]
    }

    /// One step on a single sequence: returns `(a_t, y_t)`.
    pub fn step(&self, x_t: &[T], a_prev: &[T]) -> (Vec<T>, Vec<T>) {
        let (n_in, u) = (self.w_ax.shape[0], self.units());
        let mut a = self.b_a.data.clone();
        T::gemm(false, false, 1, n_in, u, T::one(), x_t, &self.w_ax.data, T::one(), &mut a);
        T::gemm(false, false, 1, u, u, T::one(), a_prev, &self.w_aa.data, T::one(), &mut a);
        let mut y = self.b_p.data.clone();
        T::gemm(false, false, 1, u, u, T::one(), &a, &self.w_pa.data, T::one(), &mut y);
        y.iter_mut().for_each(|v| *v = self.activation.apply(*v));
        (a, y)
    }
}

impl<T: Scalar> Layer<T> for Rnn<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n_in = self.w_ax.shape[0];
        let u = self.units();
        let (b, steps) = sequence_dims("rnn", x, n_in)?;
        let xt = swap01(&x.data, b, steps, n_in);
        let bu = b * u;
        let mut a = vec![T::zero(); steps * bu];
        for row in a.chunks_exact_mut(u) {
            row.copy_from_slice(&self.b_a.data);
        }
        T::gemm(false, false, steps * b, n_in, u, T::one(), &xt, &self.w_ax.data, T::one(), &mut a);
        for t in 1..steps {
            let (prev, cur) = a.split_at_mut(t * bu);
            T::gemm(false, false, b, u, u, T::one(), &prev[(t - 1) * bu..], &self.w_aa.data, T::one(), &mut cur[..bu]);
        }
        let mut y = vec![T::zero(); steps * bu];
        for row in y.chunks_exact_mut(u) {
            row.copy_from_slice(&self.b_p.data);
        }
        T::gemm(false, false, steps * b, u, u, T::one(), &a, &self.w_pa.data, T::one(), &mut y);
        let act = self.activation;
        y.iter_mut().for_each(|v| *v = act.apply(*v));
        let out = collect_output(&y, b, steps, u, self.return_sequences)?;
        self.cache = Some(RnnCache { b, steps, x: xt, a, y });
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let n_in = self.w_ax.shape[0];
        let u = self.units();
        let c = self.cache.as_ref().ok_or_else(|| no_forward("rnn"))?;
        let (b, steps) = (c.b, c.steps);
        let bu = b * u;
        let mut dp = expand_output_grad("rnn", dy, b, steps, u, self.return_sequences)?;
        let act = self.activation;
        for (g, &y) in dp.iter_mut().zip(&c.y) {
            *g *= act.grad_from_output(y);
        }
        T::gemm(true, false, u, steps * b, u, T::one(), &c.a, &dp, T::one(), self.w_pa.grad_mut());
        accumulate_bias(self.b_p.grad_mut(), &dp);
        let mut da = vec![T::zero(); steps * bu];
        T::gemm(false, true, steps * b, u, u, T::one(), &dp, &self.w_pa.data, T::zero(), &mut da);
        for t in (1..steps).rev() {
            let (prev, cur) = da.split_at_mut(t * bu);
            T::gemm(false, true, b, u, u, T::one(), &cur[..bu], &self.w_aa.data, T::one(), &mut prev[(t - 1) * bu..]);
        }
        if steps > 1 {
            T::gemm(true, false, u, (steps - 1) * b, u, T::one(), &c.a[..(steps - 1) * bu], &da[bu..], T::one(), self.w_aa.grad_mut());
        }
        T::gemm(true, false, n_in, steps * b, u, T::one(), &c.x, &da, T::one(), self.w_ax.grad_mut());
        accumulate_bias(self.b_a.grad_mut(), &da);
        let mut dx = vec![T::zero(); steps * b * n_in];
        T::gemm(false, true, steps * b, u, n_in, T::one(), &da, &self.w_ax.data, T::zero(), &mut dx);
        Tensor::new(vec![b, steps, n_in], swap01(&dx, steps, b, n_in))
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.w_ax, &self.w_aa, &self.w_pa, &self.b_a, &self.b_p]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.w_ax, &mut self.w_aa, &mut self.w_pa, &mut self.b_a, &mut self.b_p]
    }
}

/// Standard LSTM with gate blocks ordered input, forget, candidate, output.
pub struct Lstm<T> {
    /// `[in, 4u]`.
    pub kernel: Tensor<T>,
    /// `[u, 4u]`.
    pub recurrent: Tensor<T>,
    /// `[4u]`.
    pub bias: Tensor<T>,
    pub return_sequences: bool,
    cache: Option<LstmCache<T>>,
}

struct LstmCache<T> {
    b: usize,
    steps: usize,
    x: Vec<T>,
    /// activated gates, `[T, B, 4u]`
    gates: Vec<T>,
    c: Vec<T>,
    tanh_c: Vec<T>,
    h: Vec<T>,
}

/// Recurrent state of one LSTM cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new(inputs: usize, units: usize, return_sequences: bool, rng: &mut impl Rng) -> Self {
        let u = units;
        let mut bias = vec![T::zero(); 4 * u];
        bias[u..2 * u].iter_mut().for_each(|v| *v = T::one());
        Self {
            kernel: Tensor::param(vec![inputs, 4 * u], glorot(inputs * 4 * u, inputs, 4 * u, Init::GlorotUniform, rng)),
            recurrent: Tensor::param(vec![u, 4 * u], orthogonal(u, 4 * u, rng)),
            bias: Tensor::param(vec![4 * u], bias),
            return_sequences,
            cache: None,
        }
    }

    pub fn units(&self) -> usize {
        self.recurrent.shape[0]
    }

    /// One step on a single sequence.
    pub fn step(&self, x_t: &[T], state: &LstmState<T>) -> LstmState<T> {
        let (n_in, u) = (self.kernel.shape[0], self.units());
        let mut z = self.bias.data.clone();
        T::gemm(false, false, 1, n_in, 4 * u, T::one(), x_t, &self.kernel.data, T::one(), &mut z);
        T::gemm(false, false, 1, u, 4 * u, T::one(), &state.h, &self.recurrent.data, T::one(), &mut z);
        let mut next = LstmState {
            h: vec![T::zero(); u],
            c: vec![T::zero(); u],
        };
        for k in 0..u {
            let (i, f, g, o) = (sigmoid(z[k]), sigmoid(z[u + k]), z[2 * u + k].tanh(), sigmoid(z[3 * u + k]));
            next.c[k] = f * state.c[k] + i * g;
            next.h[k] = o * next.c[k].tanh();
        }
        next
    }
}

impl<T: Scalar> Layer<T> for Lstm<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n_in = self.kernel.shape[0];
        let u = self.units();
        let (b, steps) = sequence_dims("lstm", x, n_in)?;
        let xt = swap01(&x.data, b, steps, n_in);
        let (bu, b4) = (b * u, b * 4 * u);
        let mut gates = vec![T::zero(); steps * b4];
        for row in gates.chunks_exact_mut(4 * u) {
            row.copy_from_slice(&self.bias.data);
        }
        T::gemm(false, false, steps * b, n_in, 4 * u, T::one(), &xt, &self.kernel.data, T::one(), &mut gates);
        let mut c = vec![T::zero(); steps * bu];
        let mut h = vec![T::zero(); steps * bu];
        let mut tanh_c = vec![T::zero(); steps * bu];
        for t in 0..steps {
            let z = &mut gates[t * b4..(t + 1) * b4];
            if t > 0 {
                T::gemm(false, false, b, u, 4 * u, T::one(), &h[(t - 1) * bu..t * bu], &self.recurrent.data, T::one(), z);
            }
            for bi in 0..b {
                let zr = &mut z[bi * 4 * u..(bi + 1) * 4 * u];
                for k in 0..u {
                    let i = sigmoid(zr[k]);
                    let f = sigmoid(zr[u + k]);
                    let g = zr[2 * u + k].tanh();
                    let o = sigmoid(zr[3 * u + k]);
                    zr[k] = i;
                    zr[u + k] = f;
                    zr[2 * u + k] = g;
                    zr[3 * u + k] = o;
                    let idx = t * bu + bi * u + k;
                    let c_prev = if t > 0 { c[idx - bu] } else { T::zero() };
                    let ct = f * c_prev + i * g;
                    let tc = ct.tanh();
                    c[idx] = ct;
                    tanh_c[idx] = tc;
                    h[idx] = o * tc;
                }
            }
        }
        let out = collect_output(&h, b, steps, u, self.return_sequences)?;
        self.cache = Some(LstmCache {
            b,
            steps,
            x: xt,
            gates,
            c,
            tanh_c,
            h,
        });
        Ok(out)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let n_in = self.kernel.shape[0];
        let u = self.units();
        let cache = self.cache.as_ref().ok_or_else(|| no_forward("lstm"))?;
        let (b, steps) = (cache.b, cache.steps);
        let (bu, b4) = (b * u, b * 4 * u);
        let mut dh = expand_output_grad("lstm", dy, b, steps, u, self.return_sequences)?;
        let mut dz = vec![T::zero(); steps * b4];
        let mut dc_next = vec![T::zero(); bu];
        let one = T::one();
        for t in (0..steps).rev() {
            if t + 1 < steps {
                let next = &dz[(t + 1) * b4..(t + 2) * b4];
                T::gemm(false, true, b, 4 * u, u, one, next, &self.recurrent.data, one, &mut dh[t * bu..(t + 1) * bu]);
            }
            for bi in 0..b {
                for k in 0..u {
                    let idx = t * bu + bi * u + k;
                    let gi = t * b4 + bi * 4 * u;
                    let (i, f, g, o) = (
                        cache.gates[gi + k],
                        cache.gates[gi + u + k],
                        cache.gates[gi + 2 * u + k],
                        cache.gates[gi + 3 * u + k],
                    );
                    let tc = cache.tanh_c[idx];
                    let c_prev = if t > 0 { cache.c[idx - bu] } else { T::zero() };
                    let dht = dh[idx];
                    let dc = dht * o * (one - tc * tc) + dc_next[bi * u + k];
                    dz[gi + k] = dc * g * i * (one - i);
                    dz[gi + u + k] = dc * c_prev * f * (one - f);
                    dz[gi + 2 * u + k] = dc * i * (one - g * g);
                    dz[gi + 3 * u + k] = dht * tc * o * (one - o);
                    dc_next[bi * u + k] = dc * f;
                }
            }
        }
        if steps > 1 {
            T::gemm(true, false, u, (steps - 1) * b, 4 * u, one, &cache.h[..(steps - 1) * bu], &dz[b4..], one, self.recurrent.grad_mut());
        }
        T::gemm(true, false, n_in, steps * b, 4 * u, one, &cache.x, &dz, one, self.kernel.grad_mut());
        accumulate_bias(self.bias.grad_mut(), &dz);
        let mut dx = vec![T::zero(); steps * b * n_in];
        T::gemm(false, true, steps * b, 4 * u, n_in, one, &dz, &self.kernel.data, T::zero(), &mut dx);
        Tensor::new(vec![b, steps, n_in], swap01(&dx, steps, b, n_in))
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.kernel, &self.recurrent, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.kernel, &mut self.recurrent, &mut self.bias]
    }
}

/// Runs one layer forward in time and another on the reversed sequence,
/// concatenating their outputs along the feature axis.
pub struct Bidirectional<T> {
    pub forward: Box<dyn Layer<T>>,
    pub backward: Box<dyn Layer<T>>,
    pub return_sequences: bool,
    split: Option<usize>,
}

fn reverse_time<T: Copy>(data: &[T], b: usize, steps: usize, c: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for bi in 0..b {
        for t in (0..steps).rev() {
            let s = (bi * steps + t) * c;
            out.extend_from_slice(&data[s..s + c]);
        }
    }
    out
}

fn concat_last<T: Copy>(a: &[T], ca: usize, b: &[T], cb: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    for (ra, rb) in a.chunks_exact(ca).zip(b.chunks_exact(cb)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    out
}

impl<T: Scalar> Bidirectional<T> {
    pub fn new(forward: Box<dyn Layer<T>>, backward: Box<dyn Layer<T>>, return_sequences: bool) -> Self {
        Self {
            forward,
            backward,
            return_sequences,
            split: None,
        }
    }

    fn reversed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let c = x.shape[2..].iter().product();
        Tensor::new(x.shape.clone(), reverse_time(&x.data, x.shape[0], x.shape[1], c))
    }
}

impl<T: Scalar> Layer<T> for Bidirectional<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape.len() != 3 {
            return Err(NnError::Shape(format!("bidirectional: input {:?} is not a sequence", x.shape)));
        }
        let yf = self.forward.forward(x)?;
        let mut yb = self.backward.forward(&self.reversed(x)?)?;
        if self.return_sequences {
            yb = self.reversed(&yb)?;
        }
        let cf = *yf.shape.last().unwrap();
        let cb = *yb.shape.last().unwrap();
        let mut shape = yf.shape.clone();
        *shape.last_mut().unwrap() = cf + cb;
        self.split = Some(cf);
        Tensor::new(shape, concat_last(&yf.data, cf, &yb.data, cb))
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cf = self.split.ok_or_else(|| no_forward("bidirectional"))?;
        let c = *dy.shape.last().unwrap();
        if c <= cf {
            return Err(NnError::Shape(format!("bidirectional: gradient {:?} too narrow", dy.shape)));
        }
        let cb = c - cf;
        let mut df = Vec::with_capacity(dy.len() / c * cf);
        let mut db = Vec::with_capacity(dy.len() / c * cb);
        for row in dy.data.chunks_exact(c) {
            df.extend_from_slice(&row[..cf]);
            db.extend_from_slice(&row[cf..]);
        }
        let mut sf = dy.shape.clone();
        *sf.last_mut().unwrap() = cf;
        let mut sb = dy.shape.clone();
        *sb.last_mut().unwrap() = cb;
        let mut db = Tensor::new(sb, db)?;
        if self.return_sequences {
            db = self.reversed(&db)?;
        }
        let mut dx = self.forward.backward(&Tensor::new(sf, df)?)?;
        let dxb = self.backward.backward(&db)?;
        let dxb = self.reversed(&dxb)?;
        for (a, &g) in dx.data.iter_mut().zip(&dxb.data) {
            *a += g;
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        let mut v = self.forward.params();
        v.extend(self.backward.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v = self.forward.params_mut();
        v.extend(self.backward.params_mut());
        v
    }
}
