//! A small dense/convolutional network stack with hand-written backprop.
//!
//! Everything is `f64` end to end. Activations are carried as [`Tensor`]s in
//! channel-major batch layout `[channel][sample][y][x]`, so a batch of
//! feature maps is a plain `channels × (batch·height·width)` matrix and every
//! layer reduces to a GEMM.

mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod train;
pub mod weights;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{conv_forward, dense_forward, relu, sigmoid, softmax_pixelwise, Conv2d, Dense, Layer};
pub use loss::{cross_entropy, PROBABILITY_CLAMP};
pub use network::{Gradients, Network};
pub use optim::{adam_step, sgd_step, Adam, AdamState, Optimizer};
pub use train::{train, TrainConfig, TrainSample};
pub use weights::{load_weights, save_weights, NetworkWeights};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    batch: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, batch: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * batch * height * width {
            return Err(Error::Shape(format!(
                "tensor ({channels}, {batch}, {height}, {width}) needs {} values, got {}",
                channels * batch * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            batch,
            height,
            width,
            data,
        })
    }

    /// A single `(channels, height, width)` feature map.
    pub fn image(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(channels, 1, height, width, data)
    }

    /// A single flat vector.
    pub fn flat(data: Vec<f64>) -> Self {
        Self {
            channels: data.len(),
            batch: 1,
            height: 1,
            width: 1,
            data,
        }
    }

    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![0.0; channels * batch * height * width],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.channels, other.batch, other.height, other.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.channels, self.batch, self.height, self.width)
    }

    /// Positions per channel: `batch · height · width`.
    pub fn plane(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.plane();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Stacks single-sample tensors of identical shape into one batch.
    pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty batch".into()))?;
        let (c, _, h, w) = first.shape();
        let per = h * w;
        let batch: usize = samples.iter().map(|s| s.batch).sum();
        let mut out = Tensor::zeros(c, batch, h, w);
        let mut offset = 0;
        for s in samples {
            if s.channels != c || s.height != h || s.width != w {
                return Err(Error::Shape("stacked tensors differ in shape".into()));
            }
            for ch in 0..c {
                let src = s.channel(ch);
                let dst = &mut out.data[ch * batch * per + offset * per..][..src.len()];
                dst.copy_from_slice(src);
            }
            offset += s.batch;
        }
        Ok(out)
    }
}
