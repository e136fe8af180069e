use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::cross_entropy;
use super::network::Network;
use super::optim::{adam_step, sgd_step, AdamState, Optimizer};
use super::Tensor;
use crate::error::{Error, Result};

/// One training example: a single-sample input and the per-position targets
/// for the supervised output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Tensor,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    /// Output channel holding the positive-class probability.
    pub target_channel: usize,
}

/// Mini-batch cross-entropy training. Returns the mean training loss of
/// every epoch (computed on the fly, batch by batch).
pub fn train<F>(network: &mut Network, samples: &[TrainSample], config: &TrainConfig, mut on_epoch: F) -> Result<Vec<f64>>
where
    F: FnMut(usize, f64),
{
    if samples.is_empty() {
        return Err(Error::TrainingData("no training samples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut adam: Vec<AdamState> = Vec::new();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Tensor> = chunk.iter().map(|&i| &samples[i].input).collect();
            let x = Tensor::stack(&batch)?;
            let target: Vec<f64> = chunk.iter().flat_map(|&i| samples[i].target.iter().copied()).collect();

            let trace = network.forward_trace(&x)?;
            let out = trace.last().expect("trace is never empty");
            let (loss, grad) = channel_loss(out, config.target_channel, &target)?;
            total += loss * chunk.len() as f64;

            let grads = network.backward(&trace, grad);
            let grads = grads.slices();
            let mut params = network.param_slices_mut();
            match config.optimizer {
                Optimizer::Sgd { lr } => {
                    for (p, g) in params.iter_mut().zip(&grads) {
                        sgd_step(p, g, lr);
                    }
                }
                Optimizer::Adam(cfg) => {
                    if adam.is_empty() {
                        adam = params.iter().map(|p| AdamState::new(p.len())).collect();
                    }
                    for ((p, g), s) in params.iter_mut().zip(&grads).zip(adam.iter_mut()) {
                        adam_step(p, g, s, &cfg);
                    }
                }
            }
        }
        let mean = total / samples.len() as f64;
        on_epoch(epoch, mean);
        history.push(mean);
    }
    Ok(history)
}

/// Cross-entropy on one output channel, returned as a full-shape output gradient.
pub fn channel_loss(output: &Tensor, channel: usize, target: &[f64]) -> Result<(f64, Tensor)> {
    if channel >= output.channels() || output.plane() != target.len() {
        return Err(Error::Shape(format!(
            "target of length {} does not fit output channel {channel} of shape {:?}",
            target.len(),
            output.shape()
        )));
    }
    let (loss, g) = cross_entropy(output.channel(channel), target);
    let mut grad = Tensor::zeros_like(output);
    grad.channel_mut(channel).copy_from_slice(&g);
    Ok((loss, grad))
}

/// Mean cross-entropy of `network` over `samples`, evaluated one sample at a time.
pub fn dataset_loss(network: &Network, samples: &[TrainSample], channel: usize) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let out = network.forward(&s.input)?;
        total += channel_loss(&out, channel, &s.target)?.0;
    }
    Ok(total / samples.len().max(1) as f64)
}
