//! Neural-network kernels: tensors, 1-D convolution and its transpose, dense
//! layers, ReLU and Adam, each with an explicit backward pass.
//!
//! Convolutions use the cross-correlation convention with zero padding.
//! Both directions lower to a GEMM over an im2col matrix; the transposed
//! convolution is the exact adjoint of the strided convolution with the same
//! stride and padding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("shape {shape:?} has a zero extent")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::shape(format!(
                "{what} must be rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// A trainable tensor together with its gradient and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub step_count: u64,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            step_count: 0,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    /// Uniform in `[-bound, bound]`, `bound = sqrt(6 / fan_in)`.
    pub fn kaiming_uniform<R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::of(rng.random_range(-bound..=bound)))
            .collect();
        Self::new(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update using `param.grad`.
pub fn adam_step<T: Scalar>(param: &mut Param<T>, cfg: &AdamConfig) {
    param.step_count += 1;
    let t = param.step_count as i32;
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let bc1 = T::of(1.0 - cfg.beta1.powi(t));
    let bc2 = T::of(1.0 - cfg.beta2.powi(t));
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let one = T::one();
    let value = param.value.data_mut();
    let grad = param.grad.data();
    let m = param.m.data_mut();
    let v = param.v.data_mut();
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Output length of a strided "same" convolution.
pub fn conv_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Geometry shared by im2col and col2im.
#[derive(Debug, Clone, Copy)]
struct Window {
    channels: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_len: usize,
}

impl Window {
    fn source(&self, i: usize, j: usize) -> Option<usize> {
        let p = (i * self.stride + j).checked_sub(self.padding)?;
        (p < self.len).then_some(p)
    }
}

/// `cols[(d*k + j), i] = x[d, i*stride + j - padding]` (zero outside).
fn im2col<T: Scalar>(x: &[T], w: Window, cols: &mut Vec<T>) {
    cols.clear();
    cols.resize(w.channels * w.kernel * w.out_len, T::zero());
    for d in 0..w.channels {
        let xrow = &x[d * w.len..(d + 1) * w.len];
        for j in 0..w.kernel {
            let row = &mut cols[(d * w.kernel + j) * w.out_len..(d * w.kernel + j + 1) * w.out_len];
            for (i, slot) in row.iter_mut().enumerate() {
                if let Some(p) = w.source(i, j) {
                    *slot = xrow[p];
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
fn col2im<T: Scalar>(cols: &[T], w: Window, x: &mut [T]) {
    for d in 0..w.channels {
        let xrow = &mut x[d * w.len..(d + 1) * w.len];
        for j in 0..w.kernel {
            let row = &cols[(d * w.kernel + j) * w.out_len..(d * w.kernel + j + 1) * w.out_len];
            for (i, &v) in row.iter().enumerate() {
                if let Some(p) = w.source(i, j) {
                    xrow[p] += v;
                }
            }
        }
    }
}

fn add_bias<T: Scalar>(y: &mut [T], bias: &[T], len: usize) {
    for (c, &b) in bias.iter().enumerate() {
        y[c * len..(c + 1) * len].iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_row_sums<T: Scalar>(g: &[T], len: usize, out: &mut [T]) {
    for (c, o) in out.iter_mut().enumerate() {
        // Reductions run in f64 regardless of storage precision.
        let s: f64 = g[c * len..(c + 1) * len].iter().map(|v| v.as_f64()).sum();
        *o += T::of(s);
    }
}

fn check_conv_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, padding: usize) -> Result<()> {
    x.expect_rank(2, "conv input")?;
    w.expect_rank(3, "conv weight")?;
    b.expect_rank(1, "conv bias")?;
    let (out_ch, in_ch, k) = (w.shape[0], w.shape[1], w.shape[2]);
    if x.shape[0] != in_ch {
        return Err(Error::shape(format!(
            "input has {} channels, weight expects in_ch = {in_ch}",
            x.shape[0]
        )));
    }
    if b.shape[0] != out_ch {
        return Err(Error::shape(format!("bias has {} entries, expected out_ch = {out_ch}", b.shape[0])));
    }
    if k % 2 == 0 || padding != (k - 1) / 2 {
        return Err(Error::shape(format!("kernel {k} must be odd with padding (k-1)/2, got padding {padding}")));
    }
    if stride == 0 {
        return Err(Error::shape("stride must be at least 1"));
    }
    Ok(())
}

/// `y[c, i] = b[c] + sum_{d,j} w[c, d, j] * x_pad[d, i*stride + j]`.
pub fn conv1d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_conv_shapes(x, w, b, stride, padding)?;
    let mut cols = Vec::new();
    let mut y = Vec::new();
    conv_forward_raw(x.data(), x.shape[1], w, b.data(), stride, &mut cols, &mut y);
    let out_len = conv_out_len(x.shape[1], stride);
    Tensor::from_vec(&[w.shape[0], out_len], y)
}

fn conv_forward_raw<T: Scalar>(
    x: &[T],
    len: usize,
    w: &Tensor<T>,
    bias: &[T],
    stride: usize,
    cols: &mut Vec<T>,
    y: &mut Vec<T>,
) {
    let (out_ch, in_ch, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let geo = Window {
        channels: in_ch,
        len,
        kernel: k,
        stride,
        padding: (k - 1) / 2,
        out_len: conv_out_len(len, stride),
    };
    im2col(x, geo, cols);
    y.clear();
    y.resize(out_ch * geo.out_len, T::zero());
    gemm(
        MatRef::new(w.data(), out_ch, in_ch * k),
        MatRef::new(cols, in_ch * k, geo.out_len),
        T::zero(),
        y,
    );
    add_bias(y, bias, geo.out_len);
}

/// Gradients of [`conv1d_forward`]: `(grad_x, grad_w, grad_b)`.
pub fn conv1d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let b = Tensor::zeros(&[w.shape.first().copied().unwrap_or(1)]);
    check_conv_shapes(x, w, &b, stride, padding)?;
    let out_len = conv_out_len(x.shape[1], stride);
    if grad_out.shape() != [w.shape[0], out_len] {
        return Err(Error::shape(format!(
            "grad_out shape {:?} does not match forward output [{}, {out_len}]",
            grad_out.shape(),
            w.shape[0]
        )));
    }
    let mut cols = Vec::new();
    let geo = Window {
        channels: w.shape[1],
        len: x.shape[1],
        kernel: w.shape[2],
        stride,
        padding,
        out_len,
    };
    im2col(x.data(), geo, &mut cols);
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[w.shape[0]]);
    let mut gx = Tensor::zeros(x.shape());
    conv_backward_raw(grad_out.data(), &cols, geo, w, &mut gw, &mut gb, Some(gx.data_mut()));
    Ok((gx, gw, gb))
}

fn conv_backward_raw<T: Scalar>(
    g: &[T],
    cols: &[T],
    geo: Window,
    w: &Tensor<T>,
    grad_w: &mut Tensor<T>,
    grad_b: &mut Tensor<T>,
    grad_x: Option<&mut [T]>,
) {
    let out_ch = w.shape[0];
    let ck = geo.channels * geo.kernel;
    gemm(
        MatRef::new(g, out_ch, geo.out_len),
        MatRef::new(cols, ck, geo.out_len).t(),
        T::one(),
        grad_w.data_mut(),
    );
    accumulate_row_sums(g, geo.out_len, grad_b.data_mut());
    if let Some(gx) = grad_x {
        let mut gcols = vec![T::zero(); ck * geo.out_len];
        gemm(
            MatRef::new(w.data(), out_ch, ck).t(),
            MatRef::new(g, out_ch, geo.out_len),
            T::zero(),
            &mut gcols,
        );
        col2im(&gcols, geo, gx);
    }
}

fn check_tconv_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize, padding: usize) -> Result<()> {
    x.expect_rank(2, "transposed conv input")?;
    w.expect_rank(3, "transposed conv weight")?;
    b.expect_rank(1, "transposed conv bias")?;
    let (in_ch, out_ch, k) = (w.shape[0], w.shape[1], w.shape[2]);
    if x.shape[0] != in_ch {
        return Err(Error::shape(format!(
            "input has {} channels, weight expects in_ch = {in_ch}",
            x.shape[0]
        )));
    }
    if b.shape[0] != out_ch {
        return Err(Error::shape(format!("bias has {} entries, expected out_ch = {out_ch}", b.shape[0])));
    }
    if k % 2 == 0 || padding != (k - 1) / 2 {
        return Err(Error::shape(format!("kernel {k} must be odd with padding (k-1)/2, got padding {padding}")));
    }
    if stride == 0 {
        return Err(Error::shape("stride must be at least 1"));
    }
    Ok(())
}

/// Transposed convolution mapping `[in_ch, len]` to `[out_ch, len * stride]`.
///
/// The weight has shape `[in_ch, out_ch, k]`; with zero bias this is the
/// adjoint of [`conv1d_forward`] run with the same weight viewed as
/// `[out_ch', in_ch', k] = [in_ch, out_ch, k]`.
pub fn transposed_conv1d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_tconv_shapes(x, w, b, stride, padding)?;
    let mut cols = Vec::new();
    let mut y = Vec::new();
    tconv_forward_raw(x.data(), x.shape[1], w, b.data(), stride, &mut cols, &mut y);
    Tensor::from_vec(&[w.shape[1], x.shape[1] * stride], y)
}

fn tconv_forward_raw<T: Scalar>(
    x: &[T],
    len: usize,
    w: &Tensor<T>,
    bias: &[T],
    stride: usize,
    cols: &mut Vec<T>,
    y: &mut Vec<T>,
) {
    let (in_ch, out_ch, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let geo = Window {
        channels: out_ch,
        len: len * stride,
        kernel: k,
        stride,
        padding: (k - 1) / 2,
        out_len: len,
    };
    cols.clear();
    cols.resize(out_ch * k * len, T::zero());
    gemm(
        MatRef::new(w.data(), in_ch, out_ch * k).t(),
        MatRef::new(x, in_ch, len),
        T::zero(),
        cols,
    );
    y.clear();
    y.resize(out_ch * geo.len, T::zero());
    col2im(cols, geo, y);
    add_bias(y, bias, geo.len);
}

/// Gradients of [`transposed_conv1d_forward`]: `(grad_x, grad_w, grad_b)`.
pub fn transposed_conv1d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let b = Tensor::zeros(&[w.shape.get(1).copied().unwrap_or(1)]);
    check_tconv_shapes(x, w, &b, stride, padding)?;
    if grad_out.shape() != [w.shape[1], x.shape[1] * stride] {
        return Err(Error::shape(format!(
            "grad_out shape {:?} does not match forward output [{}, {}]",
            grad_out.shape(),
            w.shape[1],
            x.shape[1] * stride
        )));
    }
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[w.shape[1]]);
    let mut gx = Tensor::zeros(x.shape());
    let mut scratch = Vec::new();
    tconv_backward_raw(grad_out.data(), x.data(), x.shape[1], w, stride, &mut scratch, &mut gw, &mut gb, Some(gx.data_mut()));
    Ok((gx, gw, gb))
}

#[allow(clippy::too_many_arguments)]
fn tconv_backward_raw<T: Scalar>(
    g: &[T],
    x: &[T],
    len: usize,
    w: &Tensor<T>,
    stride: usize,
    gcols: &mut Vec<T>,
    grad_w: &mut Tensor<T>,
    grad_b: &mut Tensor<T>,
    grad_x: Option<&mut [T]>,
) {
    let (in_ch, out_ch, k) = (w.shape[0], w.shape[1], w.shape[2]);
    let geo = Window {
        channels: out_ch,
        len: len * stride,
        kernel: k,
        stride,
        padding: (k - 1) / 2,
        out_len: len,
    };
    im2col(g, geo, gcols);
    gemm(
        MatRef::new(x, in_ch, len),
        MatRef::new(gcols, out_ch * k, len).t(),
        T::one(),
        grad_w.data_mut(),
    );
    accumulate_row_sums(g, geo.len, grad_b.data_mut());
    if let Some(gx) = grad_x {
        gemm(
            MatRef::new(w.data(), in_ch, out_ch * k),
            MatRef::new(gcols, out_ch * k, len),
            T::zero(),
            gx,
        );
    }
}

/// `y = W x + b` with `W: [m, n]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank(1, "dense input")?;
    w.expect_rank(2, "dense weight")?;
    b.expect_rank(1, "dense bias")?;
    let (m, n) = (w.shape[0], w.shape[1]);
    if x.shape[0] != n || b.shape[0] != m {
        return Err(Error::shape(format!(
            "dense weight [{m}, {n}] with input [{}] and bias [{}]",
            x.shape[0], b.shape[0]
        )));
    }
    let mut y = b.data.clone();
    dense_forward_raw(x.data(), w, &mut y);
    Tensor::from_vec(&[m], y)
}

fn dense_forward_raw<T: Scalar>(x: &[T], w: &Tensor<T>, y: &mut [T]) {
    let (m, n) = (w.shape[0], w.shape[1]);
    gemm(MatRef::new(w.data(), m, n), MatRef::new(x, n, 1), T::one(), y);
}

/// Gradients of [`dense_forward`]: `(grad_x, grad_w, grad_b)`.
pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    w.expect_rank(2, "dense weight")?;
    let (m, n) = (w.shape[0], w.shape[1]);
    if grad_out.shape() != [m] || x.shape() != [n] {
        return Err(Error::shape(format!(
            "dense backward with weight [{m}, {n}], grad_out {:?}, input {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = Tensor::zeros(&[m]);
    let mut gx = Tensor::zeros(&[n]);
    dense_backward_raw(grad_out.data(), x.data(), w, &mut gw, &mut gb, Some(gx.data_mut()));
    Ok((gx, gw, gb))
}

fn dense_backward_raw<T: Scalar>(
    g: &[T],
    x: &[T],
    w: &Tensor<T>,
    grad_w: &mut Tensor<T>,
    grad_b: &mut Tensor<T>,
    grad_x: Option<&mut [T]>,
) {
    let (m, n) = (w.shape[0], w.shape[1]);
    gemm(MatRef::new(g, m, 1), MatRef::new(x, 1, n), T::one(), grad_w.data_mut());
    grad_b.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b);
    if let Some(gx) = grad_x {
        gemm(MatRef::new(w.data(), m, n).t(), MatRef::new(g, m, 1), T::zero(), gx);
    }
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

/// Gradient of ReLU given the pre-activation input.
pub fn relu_backward<T: Scalar>(grad_out: &[T], x: &[T]) -> Vec<T> {
    grad_out
        .iter()
        .zip(x)
        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
        .collect()
}

pub(crate) fn relu_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

pub(crate) fn relu_mask<T: Scalar>(g: &mut [T], pre: &[T]) {
    g.iter_mut().zip(pre).for_each(|(gv, &p)| {
        if p <= T::zero() {
            *gv = T::zero();
        }
    });
}

/// Strided "same" convolution layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::kaiming_uniform(&[out_ch, in_ch, kernel], in_ch * kernel, rng),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            stride,
        }
    }

    pub fn in_ch(&self) -> usize {
        self.weight.value.shape[1]
    }

    pub fn out_ch(&self) -> usize {
        self.weight.value.shape[0]
    }

    fn geometry(&self, len: usize) -> Window {
        let k = self.weight.value.shape[2];
        Window {
            channels: self.in_ch(),
            len,
            kernel: k,
            stride: self.stride,
            padding: (k - 1) / 2,
            out_len: conv_out_len(len, self.stride),
        }
    }

    /// Forward pass; `cols` keeps the im2col matrix for the backward pass.
    pub(crate) fn forward(&self, x: &[T], len: usize, cols: &mut Vec<T>, y: &mut Vec<T>) {
        conv_forward_raw(x, len, &self.weight.value, self.bias.value.data(), self.stride, cols, y);
    }

    pub(crate) fn backward(&mut self, g: &[T], cols: &[T], len: usize, grad_x: Option<&mut [T]>) {
        let geo = self.geometry(len);
        conv_backward_raw(g, cols, geo, &self.weight.value, &mut self.weight.grad, &mut self.bias.grad, grad_x);
    }
}

/// Transposed convolution layer multiplying the length by `stride`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose1d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
}

impl<T: Scalar> ConvTranspose1d<T> {
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        let fan_in = (in_ch * kernel).div_ceil(stride);
        Self {
            weight: Param::kaiming_uniform(&[in_ch, out_ch, kernel], fan_in, rng),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            stride,
        }
    }

    pub fn in_ch(&self) -> usize {
        self.weight.value.shape[0]
    }

    pub fn out_ch(&self) -> usize {
        self.weight.value.shape[1]
    }

    pub(crate) fn forward(&self, x: &[T], len: usize, cols: &mut Vec<T>, y: &mut Vec<T>) {
        tconv_forward_raw(x, len, &self.weight.value, self.bias.value.data(), self.stride, cols, y);
    }

    pub(crate) fn backward(&mut self, g: &[T], x: &[T], len: usize, scratch: &mut Vec<T>, grad_x: Option<&mut [T]>) {
        tconv_backward_raw(g, x, len, &self.weight.value, self.stride, scratch, &mut self.weight.grad, &mut self.bias.grad, grad_x);
    }
}

/// Fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::kaiming_uniform(&[n_out, n_in], n_in, rng),
            bias: Param::new(Tensor::zeros(&[n_out])),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.value.shape[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.value.shape[0]
    }

    pub(crate) fn forward(&self, x: &[T], y: &mut Vec<T>) {
        y.clear();
        y.extend_from_slice(self.bias.value.data());
        dense_forward_raw(x, &self.weight.value, y);
    }

    pub(crate) fn backward(&mut self, g: &[T], x: &[T], grad_x: Option<&mut [T]>) {
        dense_backward_raw(g, x, &self.weight.value, &mut self.weight.grad, &mut self.bias.grad, grad_x);
    }
}
