use rand::Rng;

use super::gemm::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Square-kernel cross-correlation with zero "same" padding, stride 1.
///
/// Weights are laid out `(out_ch, in_ch, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Shape(format!("kernel size must be odd, got {kernel}")));
        }
        if weight.len() != out_channels * in_channels * kernel * kernel || bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "conv ({out_channels}, {in_channels}, {kernel}, {kernel}) parameter count mismatch"
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel,
            weight,
            bias,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng>(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut R) -> Self {
        let taps = kernel * kernel;
        let weight = glorot_uniform(in_channels * taps, out_channels * taps, out_channels * in_channels * taps, rng);
        Self {
            out_channels,
            in_channels,
            kernel,
            weight,
            bias: vec![0.0; out_channels],
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Tensor) -> Vec<f64> {
        let (_, batch, h, w) = x.shape();
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let n = batch * h * w;
        let mut cols = vec![0.0; self.patch_len() * n];
        for ci in 0..self.in_channels {
            let src = x.channel(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for b in 0..batch {
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let src_row = &src[(b * h + sy as usize) * w..][..w];
                            let dst_row = &mut dst[(b * h + y) * w..][..w];
                            for xx in 0..w {
                                let sx = xx as isize + dx;
                                if sx >= 0 && sx < w as isize {
                                    dst_row[xx] = src_row[sx as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], like: &Tensor) -> Tensor {
        let (_, batch, h, w) = like.shape();
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let n = batch * h * w;
        let mut out = Tensor::zeros_like(like);
        for ci in 0..self.in_channels {
            let dst = out.channel_mut(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    let dy = ky as isize - pad;
                    let dx = kx as isize - pad;
                    for b in 0..batch {
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let dst_row = &mut dst[(b * h + sy as usize) * w..][..w];
                            let src_row = &src[(b * h + y) * w..][..w];
                            for xx in 0..w {
                                let sx = xx as isize + dx;
                                if sx >= 0 && sx < w as isize {
                                    dst_row[sx as usize] += src_row[xx];
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.channels()
            )));
        }
        let (_, batch, h, w) = x.shape();
        let n = batch * h * w;
        let mut out = Tensor::zeros(self.out_channels, batch, h, w);
        for (o, &b) in self.bias.iter().enumerate() {
            out.channel_mut(o).fill(b);
        }
        if self.kernel == 1 {
            gemm(self.out_channels, self.in_channels, n, &self.weight, false, x.data(), false, 1.0, out.data_mut());
        } else {
            let cols = self.im2col(x);
            gemm(self.out_channels, self.patch_len(), n, &self.weight, false, &cols, false, 1.0, out.data_mut());
        }
        Ok(out)
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor, need_input_grad: bool) -> (Option<Tensor>, LayerGrad) {
        let n = x.plane();
        let patch = self.patch_len();
        let owned;
        let cols: &[f64] = if self.kernel == 1 {
            x.data()
        } else {
            owned = self.im2col(x);
            &owned
        };
        let mut d_weight = vec![0.0; self.weight.len()];
        gemm(self.out_channels, n, patch, grad_out.data(), false, cols, true, 0.0, &mut d_weight);
        let d_bias = (0..self.out_channels).map(|o| grad_out.channel(o).iter().sum()).collect();
        let d_input = need_input_grad.then(|| {
            let mut d_cols = vec![0.0; patch * n];
            gemm(patch, self.out_channels, n, &self.weight, true, grad_out.data(), false, 0.0, &mut d_cols);
            if self.kernel == 1 {
                Tensor::new(x.channels(), x.batch(), x.height(), x.width(), d_cols)
                    .expect("1x1 column buffer has the input shape")
            } else {
                self.col2im(&d_cols, x)
            }
        });
        (d_input, LayerGrad { weight: d_weight, bias: d_bias })
    }
}

/// Fully connected layer, weights `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub outputs: usize,
    pub inputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Shape(format!("dense ({outputs}, {inputs}) parameter count mismatch")));
        }
        Ok(Self {
            outputs,
            inputs,
            weight,
            bias,
        })
    }

    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            outputs,
            inputs,
            weight: glorot_uniform(inputs, outputs, inputs * outputs, rng),
            bias: vec![0.0; outputs],
        }
    }

    /// Input must be flat: `(inputs, batch, 1, 1)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.channels() != self.inputs || x.height() != 1 || x.width() != 1 {
            return Err(Error::Shape(format!(
                "dense expects a flat input of length {}, got {:?}",
                self.inputs,
                x.shape()
            )));
        }
        let batch = x.batch();
        let mut out = Tensor::zeros(self.outputs, batch, 1, 1);
        for (o, &b) in self.bias.iter().enumerate() {
            out.channel_mut(o).fill(b);
        }
        gemm(self.outputs, self.inputs, batch, &self.weight, false, x.data(), false, 1.0, out.data_mut());
        Ok(out)
    }

    fn backward(&self, x: &Tensor, grad_out: &Tensor, need_input_grad: bool) -> (Option<Tensor>, LayerGrad) {
        let batch = x.batch();
        let mut d_weight = vec![0.0; self.weight.len()];
        gemm(self.outputs, batch, self.inputs, grad_out.data(), false, x.data(), true, 0.0, &mut d_weight);
        let d_bias = (0..self.outputs).map(|o| grad_out.channel(o).iter().sum()).collect();
        let d_input = need_input_grad.then(|| {
            let mut d = Tensor::zeros_like(x);
            gemm(self.inputs, self.outputs, batch, &self.weight, true, grad_out.data(), false, 0.0, d.data_mut());
            d
        });
        (d_input, LayerGrad { weight: d_weight, bias: d_bias })
    }
}

fn glorot_uniform<R: Rng>(fan_in: usize, fan_out: usize, count: usize, rng: &mut R) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| rng.random_range(-limit..=limit)).collect()
}

/// Parameter gradients of one layer; empty for parameter-free layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    Dense(Dense),
    Relu,
    Sigmoid,
    /// Softmax across channels at every spatial position.
    Softmax,
    /// `(C, B, H, W)` to `(C·H·W, B, 1, 1)`.
    Flatten,
}

impl Layer {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(conv) => conv.forward(x),
            Layer::Dense(dense) => dense.forward(x),
            Layer::Relu => Ok(relu(x)),
            Layer::Sigmoid => Ok(sigmoid(x)),
            Layer::Softmax => softmax_channels(x),
            Layer::Flatten => Ok(flatten(x)),
        }
    }

    /// Returns the input gradient (when requested) and parameter gradients.
    pub(crate) fn backward(
        &self,
        input: &Tensor,
        output: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> (Option<Tensor>, LayerGrad) {
        match self {
            Layer::Conv(conv) => conv.backward(input, grad_out, need_input_grad),
            Layer::Dense(dense) => dense.backward(input, grad_out, need_input_grad),
            Layer::Relu => {
                let mut d = grad_out.clone();
                for (g, &x) in d.data_mut().iter_mut().zip(input.data()) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
                (Some(d), LayerGrad::default())
            }
            Layer::Sigmoid => {
                let mut d = grad_out.clone();
                for (g, &y) in d.data_mut().iter_mut().zip(output.data()) {
                    *g *= y * (1.0 - y);
                }
                (Some(d), LayerGrad::default())
            }
            Layer::Softmax => {
                let plane = output.plane();
                let channels = output.channels();
                let mut d = Tensor::zeros_like(output);
                for pos in 0..plane {
                    let dot: f64 = (0..channels)
                        .map(|c| output.data()[c * plane + pos] * grad_out.data()[c * plane + pos])
                        .sum();
                    for c in 0..channels {
                        let i = c * plane + pos;
                        d.data_mut()[i] = output.data()[i] * (grad_out.data()[i] - dot);
                    }
                }
                (Some(d), LayerGrad::default())
            }
            Layer::Flatten => (Some(unflatten(grad_out, input)), LayerGrad::default()),
        }
    }

    pub fn params(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Layer::Conv(c) => Some((&c.weight, &c.bias)),
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Vec<f64>, &mut Vec<f64>)> {
        match self {
            Layer::Conv(c) => Some((&mut c.weight, &mut c.bias)),
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            _ => None,
        }
    }
}

pub fn conv_forward(x: &Tensor, layer: &Conv2d) -> Result<Tensor> {
    layer.forward(x)
}

pub fn dense_forward(x: &Tensor, layer: &Dense) -> Result<Tensor> {
    layer.forward(x)
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = logistic(*v));
    y
}

#[inline]
fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Two-class softmax at every pixel.
pub fn softmax_pixelwise(x: &Tensor) -> Result<Tensor> {
    if x.channels() != 2 {
        return Err(Error::Shape(format!(
            "pixelwise softmax expects 2 channels, got {}",
            x.channels()
        )));
    }
    softmax_channels(x)
}

fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let channels = x.channels();
    if channels == 0 {
        return Err(Error::Shape("softmax over zero channels".into()));
    }
    let plane = x.plane();
    let mut y = Tensor::zeros_like(x);
    for pos in 0..plane {
        let max = (0..channels).map(|c| x.data()[c * plane + pos]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..channels {
            let e = (x.data()[c * plane + pos] - max).exp();
            y.data_mut()[c * plane + pos] = e;
            total += e;
        }
        for c in 0..channels {
            y.data_mut()[c * plane + pos] /= total;
        }
    }
    Ok(y)
}

fn flatten(x: &Tensor) -> Tensor {
    let (c, b, h, w) = x.shape();
    let features = c * h * w;
    let mut out = vec![0.0; features * b];
    for ch in 0..c {
        for s in 0..b {
            for p in 0..h * w {
                out[(ch * h * w + p) * b + s] = x.data()[(ch * b + s) * h * w + p];
            }
        }
    }
    Tensor::new(features, b, 1, 1, out).expect("flatten preserves element count")
}

fn unflatten(grad: &Tensor, like: &Tensor) -> Tensor {
    let (c, b, h, w) = like.shape();
    let mut out = Tensor::zeros_like(like);
    for ch in 0..c {
        for s in 0..b {
            for p in 0..h * w {
                out.data_mut()[(ch * b + s) * h * w + p] = grad.data()[(ch * h * w + p) * b + s];
            }
        }
    }
    out
}
