//! Layer implementations behind the [`Layer`] trait.
//!
//! Per-sample shapes exclude the batch dimension. Convolutions use zero
//! "same" padding of `(kernel - 1) / 2`, so stride-2 layers halve even
//! spatial sizes and transposed stride-2 layers double them.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul, Scalar, Tensor};
use super::NetError;
use crate::util::Rng;

pub const BATCH_NORM_EPS: f64 = 1e-5;
/// Weight on the previous running statistic.
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    TransposedConv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Conv1d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    BatchNorm {
        features: usize,
    },
    ReLU,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
    Softmax,
    Sigmoid,
    GlobalAvgPool1d,
}

/// A trainable tensor and its gradient from the latest backward pass.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

impl<S: Scalar> Param<S> {
    fn new(value: Tensor<S>) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { value, grad }
    }
}

pub trait Layer<S: Scalar>: Send + Sync {
    fn spec(&self) -> LayerSpec;

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError>;

    /// Eval-mode forward; touches no cached state.
    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError>;

    /// Train-mode forward; caches what `backward` needs.
    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError>;

    /// Writes parameter gradients and returns the input gradient.
    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError>;

    fn params(&self) -> Vec<&Param<S>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        Vec::new()
    }

    /// Non-trainable state saved with checkpoints (batch-norm statistics).
    fn buffers(&self) -> Vec<&Tensor<S>> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<S>> {
        Vec::new()
    }

    fn clear_cache(&mut self);
}

pub fn build_layer<S: Scalar>(
    spec: &LayerSpec,
    rng: &mut Rng,
) -> Result<Box<dyn Layer<S>>, NetError> {
    Ok(match spec {
        LayerSpec::Dense { input, output } => Box::new(Dense::new(*input, *output, rng)?),
        LayerSpec::Conv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
        } => Box::new(Conv2d::new(
            *in_ch,
            *out_ch,
            (*kernel, *kernel),
            (*stride, *stride),
            rng,
        )?),
        LayerSpec::Conv1d {
            in_ch,
            out_ch,
            kernel,
            stride,
        } => Box::new(Conv1d::new(*in_ch, *out_ch, *kernel, *stride, rng)?),
        LayerSpec::TransposedConv2d {
            in_ch,
            out_ch,
            kernel,
            stride,
        } => Box::new(TransposedConv2d::new(
            *in_ch, *out_ch, *kernel, *stride, rng,
        )?),
        LayerSpec::BatchNorm { features } => Box::new(BatchNorm::new(*features)?),
        LayerSpec::ReLU => Box::new(Relu::default()),
        LayerSpec::Flatten => Box::new(Reshape::flatten()),
        LayerSpec::Reshape { shape } => Box::new(Reshape::to(shape.clone())),
        LayerSpec::Softmax => Box::new(Softmax::default()),
        LayerSpec::Sigmoid => Box::new(Sigmoid::default()),
        LayerSpec::GlobalAvgPool1d => Box::new(GlobalAvgPool1d::default()),
    })
}

fn no_cache() -> NetError {
    NetError::NoCachedForward
}

fn expect_shape(x: &Tensor<impl Scalar>, per_sample: &[usize], what: &str) -> Result<(), NetError> {
    if x.shape().len() != per_sample.len() + 1 || &x.shape()[1..] != per_sample {
        return Err(NetError::ShapeMismatch(format!(
            "{what} expects per-sample shape {per_sample:?}, got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// Kaiming-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in).
fn kaiming<S: Scalar>(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Tensor<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| S::lit((rng.random::<f64>() * 2.0 - 1.0) * bound))
        .collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

// ---------------------------------------------------------------- Dense

pub struct Dense<S> {
    input: usize,
    output: usize,
    weight: Param<S>,
    bias: Param<S>,
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Dense<S> {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Result<Self, NetError> {
        if input == 0 || output == 0 {
            return Err(NetError::Config(
                "dense layer dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            input,
            output,
            weight: Param::new(kaiming(vec![output, input], input, rng)),
            bias: Param::new(Tensor::zeros(vec![output])),
            cache: None,
        })
    }

    pub fn weight_mut(&mut self) -> &mut Tensor<S> {
        &mut self.weight.value
    }

    pub fn bias_mut(&mut self) -> &mut Tensor<S> {
        &mut self.bias.value
    }
}

impl<S: Scalar> Layer<S> for Dense<S> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Dense {
            input: self.input,
            output: self.output,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        if input != [self.input] {
            return Err(NetError::ShapeMismatch(format!(
                "dense expects [{}], got {input:?}",
                self.input
            )));
        }
        Ok(vec![self.output])
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        expect_shape(x, &[self.input], "dense")?;
        let n = x.batch();
        let mut y = vec![S::zero(); n * self.output];
        for row in y.chunks_mut(self.output) {
            row.copy_from_slice(self.bias.value.data());
        }
        matmul(
            x.data(),
            false,
            self.weight.value.data(),
            true,
            &mut y,
            n,
            self.input,
            self.output,
            true,
        );
        Tensor::new(vec![n, self.output], y)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let y = self.infer(x)?;
        self.cache = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let x = self.cache.as_ref().ok_or_else(no_cache)?;
        let n = x.batch();
        expect_shape(grad_out, &[self.output], "dense gradient")?;
        if grad_out.batch() != n {
            return Err(NetError::ShapeMismatch(
                "dense gradient batch differs from forward batch".into(),
            ));
        }
        let g = grad_out.data();
        matmul(
            g,
            true,
            x.data(),
            false,
            self.weight.grad.data_mut(),
            self.output,
            n,
            self.input,
            false,
        );
        let gb = self.bias.grad.data_mut();
        gb.iter_mut().for_each(|v| *v = S::zero());
        for row in g.chunks(self.output) {
            for (b, &v) in gb.iter_mut().zip(row) {
                *b = *b + v;
            }
        }
        let mut dx = vec![S::zero(); n * self.input];
        matmul(
            g,
            false,
            self.weight.value.data(),
            false,
            &mut dx,
            n,
            self.output,
            self.input,
            false,
        );
        Tensor::new(vec![n, self.input], dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------- convolution geometry

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvGeom {
    channels: usize,
    in_h: usize,
    in_w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn new(
        channels: usize,
        in_h: usize,
        in_w: usize,
        k: (usize, usize),
        s: (usize, usize),
    ) -> Result<Self, NetError> {
        let (ph, pw) = ((k.0 - 1) / 2, (k.1 - 1) / 2);
        if in_h + 2 * ph < k.0 || in_w + 2 * pw < k.1 {
            return Err(NetError::ShapeMismatch(format!(
                "input {in_h}x{in_w} smaller than kernel {k:?}"
            )));
        }
        let out_h = (in_h + 2 * ph - k.0) / s.0 + 1;
        let out_w = (in_w + 2 * pw - k.1) / s.1 + 1;
        Ok(Self {
            channels,
            in_h,
            in_w,
            kh: k.0,
            kw: k.1,
            sh: s.0,
            sw: s.1,
            ph,
            pw,
            out_h,
            out_w,
        })
    }

    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }

    /// Writes one sample's patches into columns `[col0, col0 + out_plane)` of
    /// a matrix with `stride` columns.
    fn im2col<S: Scalar>(&self, x: &[S], cols: &mut [S], col0: usize, stride: usize) {
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let base = row * stride + col0;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.sh + ki) as isize - self.ph as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.sw + kj) as isize - self.pw as isize;
                            let v = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.in_h
                                && (ix as usize) < self.in_w
                            {
                                x[(c * self.in_h + iy as usize) * self.in_w + ix as usize]
                            } else {
                                S::zero()
                            };
                            cols[base + oy * self.out_w + ox] = v;
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, accumulating.
    fn col2im<S: Scalar>(&self, cols: &[S], col0: usize, stride: usize, x: &mut [S]) {
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let base = row * stride + col0;
                    for oy in 0..self.out_h {
                        let iy = (oy * self.sh + ki) as isize - self.ph as isize;
                        if iy < 0 || iy as usize >= self.in_h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.sw + kj) as isize - self.pw as isize;
                            if ix < 0 || ix as usize >= self.in_w {
                                continue;
                            }
                            let xi = (c * self.in_h + iy as usize) * self.in_w + ix as usize;
                            x[xi] = x[xi] + cols[base + oy * self.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// (N, C, P) -> (C, N*P)
fn to_channel_major<S: Scalar>(x: &[S], n: usize, c: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * p..(b * c + ch + 1) * p];
            out[ch * n * p + b * p..ch * n * p + (b + 1) * p].copy_from_slice(src);
        }
    }
    out
}

/// (C, N*P) -> (N, C, P)
fn from_channel_major<S: Scalar>(x: &[S], n: usize, c: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); x.len()];
    for ch in 0..c {
        for b in 0..n {
            let src = &x[ch * n * p + b * p..ch * n * p + (b + 1) * p];
            out[(b * c + ch) * p..(b * c + ch + 1) * p].copy_from_slice(src);
        }
    }
    out
}

// ---------------------------------------------------------------- Conv2d

struct ConvCache<S> {
    geom: ConvGeom,
    batch: usize,
    cols: Vec<S>,
}

pub struct Conv2d<S> {
    in_ch: usize,
    out_ch: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    /// (out_ch, in_ch * kh * kw)
    weight: Param<S>,
    bias: Param<S>,
    cache: Option<ConvCache<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        rng: &mut Rng,
    ) -> Result<Self, NetError> {
        if in_ch == 0
            || out_ch == 0
            || kernel.0 == 0
            || kernel.1 == 0
            || stride.0 == 0
            || stride.1 == 0
        {
            return Err(NetError::Config(
                "convolution sizes must be positive".into(),
            ));
        }
        let fan_in = in_ch * kernel.0 * kernel.1;
        Ok(Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight: Param::new(kaiming(vec![out_ch, fan_in], fan_in, rng)),
            bias: Param::new(Tensor::zeros(vec![out_ch])),
            cache: None,
        })
    }

    fn geom(&self, shape: &[usize]) -> Result<ConvGeom, NetError> {
        if shape.len() != 3 || shape[0] != self.in_ch {
            return Err(NetError::ShapeMismatch(format!(
                "conv2d expects [{}, H, W], got {shape:?}",
                self.in_ch
            )));
        }
        ConvGeom::new(self.in_ch, shape[1], shape[2], self.kernel, self.stride)
    }

    fn run(&self, x: &Tensor<S>) -> Result<(Tensor<S>, ConvCache<S>), NetError> {
        let geom = self.geom(&x.shape()[1..])?;
        let n = x.batch();
        let p = geom.out_plane();
        let stride = n * p;
        let mut cols = vec![S::zero(); geom.col_rows() * stride];
        for b in 0..n {
            geom.im2col(x.sample(b), &mut cols, b * p, stride);
        }
        let mut y = vec![S::zero(); self.out_ch * stride];
        for (oc, row) in y.chunks_mut(stride).enumerate() {
            row.iter_mut().for_each(|v| *v = self.bias.value.data()[oc]);
        }
        matmul(
            self.weight.value.data(),
            false,
            &cols,
            false,
            &mut y,
            self.out_ch,
            geom.col_rows(),
            stride,
            true,
        );
        let out = from_channel_major(&y, n, self.out_ch, p);
        let t = Tensor::new(vec![n, self.out_ch, geom.out_h, geom.out_w], out)?;
        Ok((
            t,
            ConvCache {
                geom,
                batch: n,
                cols,
            },
        ))
    }
}

impl<S: Scalar> Layer<S> for Conv2d<S> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Conv2d {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: self.kernel.0,
            stride: self.stride.0,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        let g = self.geom(input)?;
        Ok(vec![self.out_ch, g.out_h, g.out_w])
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        self.run(x).map(|(y, _)| y)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let (y, cache) = self.run(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let cache = self.cache.as_ref().ok_or_else(no_cache)?;
        let (geom, n) = (cache.geom, cache.batch);
        expect_shape(
            grad_out,
            &[self.out_ch, geom.out_h, geom.out_w],
            "conv2d gradient",
        )?;
        let p = geom.out_plane();
        let stride = n * p;
        let g = to_channel_major(grad_out.data(), n, self.out_ch, p);
        matmul(
            &g,
            false,
            &cache.cols,
            true,
            self.weight.grad.data_mut(),
            self.out_ch,
            stride,
            geom.col_rows(),
            false,
        );
        for (oc, row) in g.chunks(stride).enumerate() {
            self.bias.grad.data_mut()[oc] = row.iter().copied().sum();
        }
        let mut dcols = vec![S::zero(); geom.col_rows() * stride];
        matmul(
            self.weight.value.data(),
            true,
            &g,
            false,
            &mut dcols,
            geom.col_rows(),
            self.out_ch,
            stride,
            false,
        );
        let mut dx = vec![S::zero(); n * geom.in_len()];
        for b in 0..n {
            geom.col2im(
                &dcols,
                b * p,
                stride,
                &mut dx[b * geom.in_len()..(b + 1) * geom.in_len()],
            );
        }
        Tensor::new(vec![n, self.in_ch, geom.in_h, geom.in_w], dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------- Conv1d

/// 1-D convolution over `(channels, length)` inputs, run as a 1 x k Conv2d.
pub struct Conv1d<S> {
    inner: Conv2d<S>,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<Self, NetError> {
        Ok(Self {
            inner: Conv2d::new(in_ch, out_ch, (1, kernel), (1, stride), rng)?,
        })
    }

    fn lift(x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        if x.shape().len() != 3 {
            return Err(NetError::ShapeMismatch(format!(
                "conv1d expects (N, C, L), got {:?}",
                x.shape()
            )));
        }
        let s = x.shape();
        x.clone().reshaped(vec![s[0], s[1], 1, s[2]])
    }

    fn lower(y: Tensor<S>) -> Result<Tensor<S>, NetError> {
        let s = y.shape().to_vec();
        y.reshaped(vec![s[0], s[1], s[3]])
    }
}

impl<S: Scalar> Layer<S> for Conv1d<S> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Conv1d {
            in_ch: self.inner.in_ch,
            out_ch: self.inner.out_ch,
            kernel: self.inner.kernel.1,
            stride: self.inner.stride.1,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        if input.len() != 2 {
            return Err(NetError::ShapeMismatch(format!(
                "conv1d expects [C, L], got {input:?}"
            )));
        }
        let out = self.inner.output_shape(&[input[0], 1, input[1]])?;
        Ok(vec![out[0], out[2]])
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        Self::lower(self.inner.infer(&Self::lift(x)?)?)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        Self::lower(self.inner.forward_train(&Self::lift(x)?)?)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        Self::lower(self.inner.backward(&Self::lift(grad_out)?)?)
    }

    fn params(&self) -> Vec<&Param<S>> {
        self.inner.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.inner.params_mut()
    }

    fn clear_cache(&mut self) {
        self.inner.clear_cache();
    }
}

// ---------------------------------------------------------------- TransposedConv2d

struct DeconvCache<S> {
    geom: ConvGeom,
    batch: usize,
    /// Input in (C_in, N * h * w) layout.
    x_cm: Vec<S>,
}

/// Adjoint of a same-padded strided convolution: maps (C_in, h, w) to
/// (C_out, h * stride, w * stride).
pub struct TransposedConv2d<S> {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    /// (in_ch, out_ch * k * k)
    weight: Param<S>,
    bias: Param<S>,
    cache: Option<DeconvCache<S>>,
}

impl<S: Scalar> TransposedConv2d<S> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<Self, NetError> {
        if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 {
            return Err(NetError::Config(
                "transposed convolution sizes must be positive".into(),
            ));
        }
        // Each output pixel receives about in_ch * k^2 / stride^2 contributions.
        let fan_in = (in_ch * kernel * kernel / (stride * stride)).max(1);
        Ok(Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight: Param::new(kaiming(vec![in_ch, out_ch * kernel * kernel], fan_in, rng)),
            bias: Param::new(Tensor::zeros(vec![out_ch])),
            cache: None,
        })
    }

    /// Geometry of the forward convolution from the (large) output to the
    /// (small) input.
    fn geom(&self, shape: &[usize]) -> Result<ConvGeom, NetError> {
        if shape.len() != 3 || shape[0] != self.in_ch {
            return Err(NetError::ShapeMismatch(format!(
                "transposed conv expects [{}, h, w], got {shape:?}",
                self.in_ch
            )));
        }
        let (h, w) = (shape[1] * self.stride, shape[2] * self.stride);
        let g = ConvGeom::new(
            self.out_ch,
            h,
            w,
            (self.kernel, self.kernel),
            (self.stride, self.stride),
        )?;
        if g.out_h != shape[1] || g.out_w != shape[2] {
            return Err(NetError::ShapeMismatch(format!(
                "kernel {} with stride {} cannot upsample {}x{} exactly",
                self.kernel, self.stride, shape[1], shape[2]
            )));
        }
        Ok(g)
    }

    fn run(&self, x: &Tensor<S>) -> Result<(Tensor<S>, DeconvCache<S>), NetError> {
        let geom = self.geom(&x.shape()[1..])?;
        let n = x.batch();
        let p = geom.out_plane();
        let stride = n * p;
        let x_cm = to_channel_major(x.data(), n, self.in_ch, p);
        let mut cols = vec![S::zero(); geom.col_rows() * stride];
        matmul(
            self.weight.value.data(),
            true,
            &x_cm,
            false,
            &mut cols,
            geom.col_rows(),
            self.in_ch,
            stride,
            false,
        );
        let mut y = vec![S::zero(); n * geom.in_len()];
        for b in 0..n {
            geom.col2im(
                &cols,
                b * p,
                stride,
                &mut y[b * geom.in_len()..(b + 1) * geom.in_len()],
            );
        }
        let plane = geom.in_h * geom.in_w;
        for (i, chunk) in y.chunks_mut(plane).enumerate() {
            let bias = self.bias.value.data()[i % self.out_ch];
            chunk.iter_mut().for_each(|v| *v = *v + bias);
        }
        let t = Tensor::new(vec![n, self.out_ch, geom.in_h, geom.in_w], y)?;
        Ok((
            t,
            DeconvCache {
                geom,
                batch: n,
                x_cm,
            },
        ))
    }
}

impl<S: Scalar> Layer<S> for TransposedConv2d<S> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::TransposedConv2d {
            in_ch: self.in_ch,
            out_ch: self.out_ch,
            kernel: self.kernel,
            stride: self.stride,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        let g = self.geom(input)?;
        Ok(vec![self.out_ch, g.in_h, g.in_w])
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        self.run(x).map(|(y, _)| y)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let (y, cache) = self.run(x)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let cache = self.cache.as_ref().ok_or_else(no_cache)?;
        let (geom, n) = (cache.geom, cache.batch);
        expect_shape(
            grad_out,
            &[self.out_ch, geom.in_h, geom.in_w],
            "transposed conv gradient",
        )?;
        let p = geom.out_plane();
        let stride = n * p;
        let plane = geom.in_h * geom.in_w;
        let gb = self.bias.grad.data_mut();
        gb.iter_mut().for_each(|v| *v = S::zero());
        for (i, chunk) in grad_out.data().chunks(plane).enumerate() {
            gb[i % self.out_ch] = gb[i % self.out_ch] + chunk.iter().copied().sum();
        }
        let mut dcols = vec![S::zero(); geom.col_rows() * stride];
        for b in 0..n {
            geom.im2col(grad_out.sample(b), &mut dcols, b * p, stride);
        }
        matmul(
            &cache.x_cm,
            false,
            &dcols,
            true,
            self.weight.grad.data_mut(),
            self.in_ch,
            stride,
            geom.col_rows(),
            false,
        );
        let mut dx_cm = vec![S::zero(); self.in_ch * stride];
        matmul(
            self.weight.value.data(),
            false,
            &dcols,
            false,
            &mut dx_cm,
            self.in_ch,
            geom.col_rows(),
            stride,
            false,
        );
        let dx = from_channel_major(&dx_cm, n, self.in_ch, p);
        Tensor::new(vec![n, self.in_ch, geom.out_h, geom.out_w], dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------- BatchNorm

struct BnCache<S> {
    shape: Vec<usize>,
    xhat: Vec<S>,
    inv_std: Vec<S>,
}

/// Normalizes each feature (dimension 1) over the batch and any trailing
/// spatial dimensions.
pub struct BatchNorm<S> {
    features: usize,
    gamma: Param<S>,
    beta: Param<S>,
    running_mean: Tensor<S>,
    running_var: Tensor<S>,
    cache: Option<BnCache<S>>,
}

impl<S: Scalar> BatchNorm<S> {
    pub fn new(features: usize) -> Result<Self, NetError> {
        if features == 0 {
            return Err(NetError::Config(
                "batch norm needs at least one feature".into(),
            ));
        }
        Ok(Self {
            features,
            gamma: Param::new(Tensor::new(vec![features], vec![S::one(); features])?),
            beta: Param::new(Tensor::zeros(vec![features])),
            running_mean: Tensor::zeros(vec![features]),
            running_var: Tensor::new(vec![features], vec![S::one(); features])?,
            cache: None,
        })
    }

    fn check(&self, x: &Tensor<S>) -> Result<(usize, usize), NetError> {
        if x.shape().len() < 2 || x.shape()[1] != self.features {
            return Err(NetError::ShapeMismatch(format!(
                "batch norm expects {} features in dimension 1, got {:?}",
                self.features,
                x.shape()
            )));
        }
        Ok((x.batch(), x.shape()[2..].iter().product()))
    }
}

impl<S: Scalar> Layer<S> for BatchNorm<S> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::BatchNorm {
            features: self.features,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        if input.first() != Some(&self.features) {
            return Err(NetError::ShapeMismatch(format!(
                "batch norm expects {} features, got {input:?}",
                self.features
            )));
        }
        Ok(input.to_vec())
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let (n, spatial) = self.check(x)?;
        let eps = S::lit(BATCH_NORM_EPS);
        let mut y = x.data().to_vec();
        for b in 0..n {
            for f in 0..self.features {
                let scale = self.gamma.value.data()[f] / (self.running_var.data()[f] + eps).sqrt();
                let shift = self.beta.value.data()[f] - self.running_mean.data()[f] * scale;
                let off = (b * self.features + f) * spatial;
                for v in &mut y[off..off + spatial] {
                    *v = *v * scale + shift;
                }
            }
        }
        Tensor::new(x.shape().to_vec(), y)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let (n, spatial) = self.check(x)?;
        let m = n * spatial;
        let mf = S::lit(m as f64);
        let eps = S::lit(BATCH_NORM_EPS);
        let momentum = S::lit(BATCH_NORM_MOMENTUM);
        let data = x.data();
        let mut xhat = vec![S::zero(); data.len()];
        let mut y = vec![S::zero(); data.len()];
        let mut inv_stds = vec![S::zero(); self.features];
        for f in 0..self.features {
            let mut sum = S::zero();
            for b in 0..n {
                let off = (b * self.features + f) * spatial;
                sum = sum + data[off..off + spatial].iter().copied().sum();
            }
            let mean = sum / mf;
            let mut sq = S::zero();
            for b in 0..n {
                let off = (b * self.features + f) * spatial;
                for &v in &data[off..off + spatial] {
                    sq = sq + (v - mean) * (v - mean);
                }
            }
            let var = sq / mf;
            let inv_std = S::one() / (var + eps).sqrt();
            inv_stds[f] = inv_std;
            let (g, be) = (self.gamma.value.data()[f], self.beta.value.data()[f]);
            for b in 0..n {
                let off = (b * self.features + f) * spatial;
                for i in off..off + spatial {
                    let h = (data[i] - mean) * inv_std;
                    xhat[i] = h;
                    y[i] = g * h + be;
                }
            }
            let unbiased = if m > 1 {
                sq / S::lit((m - 1) as f64)
            } else {
                var
            };
            let rm = &mut self.running_mean.data_mut()[f];
            *rm = momentum * *rm + (S::one() - momentum) * mean;
            let rv = &mut self.running_var.data_mut()[f];
            *rv = momentum * *rv + (S::one() - momentum) * unbiased;
        }
        self.cache = Some(BnCache {
            shape: x.shape().to_vec(),
            xhat,
            inv_std: inv_stds,
        });
        Tensor::new(x.shape().to_vec(), y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let cache = self.cache.as_ref().ok_or_else(no_cache)?;
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(NetError::ShapeMismatch(
                "batch norm gradient shape differs from forward".into(),
            ));
        }
        let n = cache.shape[0];
        let spatial: usize = cache.shape[2..].iter().product();
        let mf = S::lit((n * spatial) as f64);
        let g = grad_out.data();
        let mut dx = vec![S::zero(); g.len()];
        for f in 0..self.features {
            let (mut sum_dy, mut sum_dy_xhat) = (S::zero(), S::zero());
            for b in 0..n {
                let off = (b * self.features + f) * spatial;
                for i in off..off + spatial {
                    sum_dy = sum_dy + g[i];
                    sum_dy_xhat = sum_dy_xhat + g[i] * cache.xhat[i];
                }
            }
            self.gamma.grad.data_mut()[f] = sum_dy_xhat;
            self.beta.grad.data_mut()[f] = sum_dy;
            let gamma = self.gamma.value.data()[f];
            let k = gamma * cache.inv_std[f] / mf;
            for b in 0..n {
                let off = (b * self.features + f) * spatial;
                for i in off..off + spatial {
                    dx[i] = k * (mf * g[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                }
            }
        }
        Tensor::new(cache.shape.clone(), dx)
    }

    fn params(&self) -> Vec<&Param<S>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&Tensor<S>> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor<S>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------- activations

#[derive(Default)]
pub struct Relu<S> {
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Layer<S> for Relu<S> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::ReLU
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        Ok(input.to_vec())
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        Tensor::new(
            x.shape().to_vec(),
            x.data().iter().map(|&v| v.max(S::zero())).collect(),
        )
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        self.cache = Some(x.clone());
        self.infer(x)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let x = self.cache.as_ref().ok_or_else(no_cache)?;
        if x.shape() != grad_out.shape() {
            return Err(NetError::ShapeMismatch(
                "relu gradient shape differs from forward".into(),
            ));
        }
        let dx = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
            .collect();
        Tensor::new(x.shape().to_vec(), dx)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[derive(Default)]
pub struct Sigmoid<S> {
    cache: Option<Tensor<S>>,
}

impl<S: Scalar> Layer<S> for Sigmoid<S> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Sigmoid
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        Ok(input.to_vec())
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let y = x
            .data()
            .iter()
            .map(|&v| S::one() / (S::one() + (-v).exp()))
            .collect();
        Tensor::new(x.shape().to_vec(), y)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let y = self.infer(x)?;
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let y = self.cache.as_ref().ok_or_else(no_cache)?;
        if y.shape() != grad_out.shape() {
            return Err(NetError::ShapeMismatch(
                "sigmoid gradient shape differs from forward".into(),
            ));
        }
        let dx = y
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&s, &g)| g * s * (S::one() - s))
            .collect();
        Tensor::new(y.shape().to_vec(), dx)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Softmax over each sample's flattened values.
#[derive(Default)]
pub struct Softmax<S> {
    cache: Option<Tensor<S>>,
}

pub fn softmax_slice<S: Scalar>(x: &[S], out: &mut [S]) {
    let max = x.iter().copied().fold(S::neg_infinity(), S::max);
    let mut sum = S::zero();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum = sum + *o;
    }
    out.iter_mut().for_each(|o| *o = *o / sum);
}

impl<S: Scalar> Layer<S> for Softmax<S> {
    fn spec(&self) -> LayerSpec {
        LayerSpec::Softmax
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        Ok(input.to_vec())
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let len = x.sample_len();
        let mut y = vec![S::zero(); x.len()];
        if len > 0 {
            for (xs, ys) in x.data().chunks(len).zip(y.chunks_mut(len)) {
                softmax_slice(xs, ys);
            }
        }
        Tensor::new(x.shape().to_vec(), y)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let y = self.infer(x)?;
        self.cache = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let y = self.cache.as_ref().ok_or_else(no_cache)?;
        if y.shape() != grad_out.shape() {
            return Err(NetError::ShapeMismatch(
                "softmax gradient shape differs from forward".into(),
            ));
        }
        let len = y.sample_len();
        let mut dx = vec![S::zero(); y.len()];
        for ((ys, gs), ds) in y
            .data()
            .chunks(len)
            .zip(grad_out.data().chunks(len))
            .zip(dx.chunks_mut(len))
        {
            let dot: S = ys.iter().zip(gs).map(|(&a, &b)| a * b).sum();
            for ((d, &yv), &gv) in ds.iter_mut().zip(ys).zip(gs) {
                *d = yv * (gv - dot);
            }
        }
        Tensor::new(y.shape().to_vec(), dx)
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------- shape layers

/// Flatten (target `None`) or reshape each sample to a fixed shape.
pub struct Reshape {
    target: Option<Vec<usize>>,
    cached_input: Option<Vec<usize>>,
}

impl Reshape {
    pub fn flatten() -> Self {
        Self {
            target: None,
            cached_input: None,
        }
    }

    pub fn to(shape: Vec<usize>) -> Self {
        Self {
            target: Some(shape),
            cached_input: None,
        }
    }
}

impl<S: Scalar> Layer<S> for Reshape {
    fn spec(&self) -> LayerSpec {
        match &self.target {
            None => LayerSpec::Flatten,
            Some(shape) => LayerSpec::Reshape {
                shape: shape.clone(),
            },
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        let n: usize = input.iter().product();
        match &self.target {
            None => Ok(vec![n]),
            Some(shape) if shape.iter().product::<usize>() == n => Ok(shape.clone()),
            Some(shape) => Err(NetError::ShapeMismatch(format!(
                "cannot reshape {input:?} to {shape:?}"
            ))),
        }
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let mut shape = vec![x.batch()];
        shape.extend(<Self as Layer<S>>::output_shape(self, &x.shape()[1..])?);
        x.clone().reshaped(shape)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        self.cached_input = Some(x.shape().to_vec());
        <Self as Layer<S>>::infer(self, x)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let shape = self.cached_input.clone().ok_or_else(no_cache)?;
        grad_out.clone().reshaped(shape)
    }

    fn clear_cache(&mut self) {
        self.cached_input = None;
    }
}

/// Mean over the last axis: (N, C, L) -> (N, C).
#[derive(Default)]
pub struct GlobalAvgPool1d {
    cached_input: Option<Vec<usize>>,
}

impl<S: Scalar> Layer<S> for GlobalAvgPool1d {
    fn spec(&self) -> LayerSpec {
        LayerSpec::GlobalAvgPool1d
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NetError> {
        if input.len() != 2 || input[1] == 0 {
            return Err(NetError::ShapeMismatch(format!(
                "global average pool expects [C, L], got {input:?}"
            )));
        }
        Ok(vec![input[0]])
    }

    fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let out = <Self as Layer<S>>::output_shape(self, &x.shape()[1..])?;
        let l = x.shape()[2];
        let inv = S::one() / S::lit(l as f64);
        let y = x
            .data()
            .chunks(l)
            .map(|c| c.iter().copied().sum::<S>() * inv)
            .collect();
        Tensor::new(vec![x.batch(), out[0]], y)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        self.cached_input = Some(x.shape().to_vec());
        <Self as Layer<S>>::infer(self, x)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>, NetError> {
        let shape = self.cached_input.clone().ok_or_else(no_cache)?;
        let l = shape[2];
        let inv = S::one() / S::lit(l as f64);
        let mut dx = Vec::with_capacity(shape.iter().product());
        for &g in grad_out.data() {
            dx.extend(std::iter::repeat_n(g * inv, l));
        }
        Tensor::new(shape, dx)
    }

    fn clear_cache(&mut self) {
        self.cached_input = None;
    }
}
