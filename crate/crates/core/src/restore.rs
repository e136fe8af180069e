//! Distortion detection and approximate recovery of embedded blocks.
//!
//! Any block already "encodes" some bit through its coefficient order. A
//! detector is trained to tell untouched NROI blocks from copies whose
//! intrinsic bit has been forcibly inverted; at recovery time the blocks it
//! flags are rolled back with [`reverse_bit`] using the extracted payload.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{embed_block, payload_slots, CodecConfig, EmbedReport, LengthMode, Watermark, HEADER_BITS};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, ConfusionCounts};
use crate::nn::{train, Adam, Dense, Layer, Network, NetworkWeights, Optimizer, Tensor, TrainConfig, TrainSample};
use crate::pixel::{BlockRef, Image};
use crate::segment::{MapBuilder, Segmenter};
use crate::transform::{quantize_block, read_bit, reverse_bit, Dct, EmbedParams};

/// The bit a block currently encodes.
pub fn intrinsic_bit(block: &[u8], params: &EmbedParams) -> bool {
    read_bit(&Dct::new(params.m()).forward_u8(block), params)
}

/// Re-embeds the opposite of the block's intrinsic bit.
pub fn invert_block(block: &[u8], params: &EmbedParams, guard_retries: usize) -> Result<Vec<u8>> {
    let m = params.m();
    if block.len() != m * m {
        return Err(Error::Shape(format!("expected a {m}x{m} block, got {} samples", block.len())));
    }
    let dct = Dct::new(m);
    let target = !read_bit(&dct.forward_u8(block), params);
    embed_block(&dct, block, params, target, guard_retries)
        .map(|e| e.samples)
        .ok_or(Error::GuardExhausted(BlockRef::new(0, 0, 0)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledBlock {
    pub samples: Vec<u8>,
    /// `true` for an inverted (distorted) block.
    pub distorted: bool,
}

/// Every NROI block of every channel, once as-is and once inverted.
pub fn build_detector_training_set<S: Segmenter + ?Sized>(
    covers: &[Image],
    segmenter: &S,
    config: &CodecConfig,
) -> Result<Vec<LabeledBlock>> {
    if covers.is_empty() {
        return Err(Error::TrainingData("no cover images".into()));
    }
    let m = config.m();
    let dct = Dct::new(m);
    let mut out = Vec::new();
    for cover in covers {
        let map = MapBuilder::new(segmenter).build(cover, m)?;
        for slot in payload_slots(&map, cover.channels()) {
            let block = cover.extract_block(slot, m)?;
            let target = !read_bit(&dct.forward_u8(&block), &config.params);
            let inverted = embed_block(&dct, &block, &config.params, target, config.guard_retries)
                .ok_or(Error::GuardExhausted(slot))?
                .samples;
            out.push(LabeledBlock {
                samples: block,
                distorted: false,
            });
            out.push(LabeledBlock {
                samples: inverted,
                distorted: true,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::TrainingData("no NROI blocks in the cover images".into()));
    }
    Ok(out)
}

pub trait DistortionDetector {
    /// Whether the block at `slot` (samples given row-major) was altered by embedding.
    fn is_distorted(&self, slot: BlockRef, block: &[u8]) -> Result<bool>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub m: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: Adam,
    pub threshold: f64,
}

impl DetectorConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            epochs: 100,
            batch_size: 32,
            adam: Adam::default(),
            threshold: 0.5,
        }
    }
}

pub const DETECTOR_ARCH: &str = "distortion-detector";

/// flatten → dense(m²)+ReLU → dense(m²)+ReLU → dense(1)+sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDetector {
    network: Network,
    m: usize,
    threshold: f64,
}

impl DenseDetector {
    pub fn new_random(m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = m * m;
        let network = Network::new(vec![
            Layer::Flatten,
            Layer::Dense(Dense::glorot(n, n, &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::glorot(n, n, &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::glorot(n, 1, &mut rng)),
            Layer::Sigmoid,
        ]);
        Self {
            network,
            m,
            threshold: 0.5,
        }
    }

    pub fn from_weights(weights: &NetworkWeights) -> Result<Self> {
        if let Some(arch) = weights.meta("arch") {
            if arch != DETECTOR_ARCH {
                return Err(Error::ModelMismatch(format!("expected {DETECTOR_ARCH} weights, found {arch}")));
            }
        }
        let dims: Vec<(usize, usize)> = weights
            .network
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some((d.inputs, d.outputs)),
                _ => None,
            })
            .collect();
        let n = match dims.as_slice() {
            &[(a, b), (c, d), (e, 1)] if a == b && b == c && c == d && d == e => a,
            _ => return Err(Error::ModelMismatch("weights do not describe the 3-layer detector".into())),
        };
        let m = (n as f64).sqrt().round() as usize;
        if m * m != n || !matches!(weights.network.layers.last(), Some(Layer::Sigmoid)) {
            return Err(Error::ModelMismatch("detector input is not a square block".into()));
        }
        if let Some(recorded) = weights.meta_usize("block_size") {
            if recorded != m {
                return Err(Error::ModelMismatch(format!("metadata block size {recorded} disagrees with {m}x{m} input")));
            }
        }
        let threshold = weights.meta("threshold").and_then(|v| v.parse().ok()).unwrap_or(0.5);
        Ok(Self {
            network: weights.network.clone(),
            m,
            threshold,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn to_weights(&self) -> NetworkWeights {
        NetworkWeights::new(self.network.clone())
            .with_meta("arch", DETECTOR_ARCH)
            .with_meta("block_size", self.m)
            .with_meta("threshold", self.threshold)
    }

    /// Sigmoid output for one block.
    pub fn probability(&self, block: &[u8]) -> Result<f64> {
        if block.len() != self.m * self.m {
            return Err(Error::ModelMismatch(format!(
                "detector expects {m}x{m} blocks, got {} samples",
                block.len(),
                m = self.m
            )));
        }
        let out = self.network.forward(&detector_input(block, self.m))?;
        Ok(out.data()[0])
    }

    pub fn classify(&self, block: &[u8]) -> Result<bool> {
        Ok(self.probability(block)? >= self.threshold)
    }
}

impl DistortionDetector for DenseDetector {
    fn is_distorted(&self, _slot: BlockRef, block: &[u8]) -> Result<bool> {
        self.classify(block)
    }
}

fn detector_input(block: &[u8], m: usize) -> Tensor {
    Tensor::image(1, m, m, block.iter().map(|&v| v as f64 / 255.0).collect()).expect("block length checked")
}

/// Test stub keyed by ground-truth slot modifications.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OracleDetector {
    modified: HashSet<BlockRef>,
}

impl OracleDetector {
    pub fn new(modified: impl IntoIterator<Item = BlockRef>) -> Self {
        Self {
            modified: modified.into_iter().collect(),
        }
    }

    pub fn from_report(report: &EmbedReport) -> Self {
        Self::new(report.modified_slots().map(|s| s.slot))
    }
}

impl DistortionDetector for OracleDetector {
    fn is_distorted(&self, slot: BlockRef, _block: &[u8]) -> Result<bool> {
        Ok(self.modified.contains(&slot))
    }
}

pub fn detector_confusion<D: DistortionDetector + ?Sized>(detector: &D, blocks: &[LabeledBlock]) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for b in blocks {
        counts.record(detector.is_distorted(BlockRef::new(0, 0, 0), &b.samples)?, b.distorted);
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetTrainOutcome {
    pub detector: DenseDetector,
    pub weights: NetworkWeights,
    pub held_out_accuracy: f64,
    pub loss_history: Vec<f64>,
}

/// Adam + cross-entropy training of the dense detector.
pub fn train_detector<F>(
    train_set: &[LabeledBlock],
    held_out: &[LabeledBlock],
    config: &DetectorConfig,
    seed: u64,
    on_epoch: F,
) -> Result<DetTrainOutcome>
where
    F: FnMut(usize, f64),
{
    let positives = train_set.iter().filter(|b| b.distorted).count();
    if positives == 0 || positives == train_set.len() {
        return Err(Error::TrainingData("detector training needs both clean and distorted blocks".into()));
    }
    let m = config.m;
    let samples: Vec<TrainSample> = train_set
        .iter()
        .map(|b| {
            if b.samples.len() != m * m {
                return Err(Error::Shape(format!("training block is not {m}x{m}")));
            }
            Ok(TrainSample {
                input: detector_input(&b.samples, m),
                target: vec![b.distorted as u8 as f64],
            })
        })
        .collect::<Result<_>>()?;
    let mut detector = DenseDetector::new_random(m, seed);
    detector.threshold = config.threshold;
    let loss_history = train(
        &mut detector.network,
        &samples,
        &TrainConfig {
            epochs: config.epochs,
            batch_size: config.batch_size,
            optimizer: Optimizer::Adam(config.adam),
            seed,
            target_channel: 0,
        },
        on_epoch,
    )?;
    let held_out_accuracy = accuracy(detector_confusion(&detector, held_out)?)?;
    let weights = detector
        .to_weights()
        .with_meta("epochs", config.epochs)
        .with_meta("seed", seed)
        .with_meta("held_out_accuracy", held_out_accuracy);
    Ok(DetTrainOutcome {
        detector,
        weights,
        held_out_accuracy,
        loss_history,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub candidates: usize,
    pub recovered: usize,
}

/// Rolls back the payload slots the detector flags as distorted.
///
/// Only the first `|w|` payload slots (after the length prefix in header
/// mode) are candidates; every other sample passes through.
pub fn recover<S, D>(
    watermarked: &Image,
    watermark: &Watermark,
    segmenter: &S,
    detector: &D,
    config: &CodecConfig,
) -> Result<(Image, RecoveryReport)>
where
    S: Segmenter + ?Sized,
    D: DistortionDetector + ?Sized,
{
    let m = config.m();
    let map = MapBuilder::new(segmenter).build(watermarked, m)?;
    let slots = payload_slots(&map, watermarked.channels());
    let prefix = match config.length_mode {
        LengthMode::External => Vec::new(),
        LengthMode::Header => {
            let len = watermark.len() as u32;
            (0..HEADER_BITS).rev().map(|i| (len >> i) & 1 == 1).collect()
        }
    };
    let bits: Vec<bool> = prefix.into_iter().chain(watermark.bits().iter().copied()).collect();
    if bits.len() > slots.len() {
        return Err(Error::Capacity {
            needed: bits.len(),
            available: slots.len(),
        });
    }
    let dct = Dct::new(m);
    let mut out = watermarked.clone();
    let mut report = RecoveryReport {
        candidates: bits.len(),
        recovered: 0,
    };
    for (&slot, &bit) in slots.iter().zip(&bits) {
        let block = watermarked.extract_block(slot, m)?;
        if !detector.is_distorted(slot, &block)? {
            continue;
        }
        let mut coeffs = dct.forward_u8(&block);
        reverse_bit(&mut coeffs, &config.params, bit);
        out.replace_block(slot, m, &quantize_block(&dct.inverse(&coeffs)))?;
        report.recovered += 1;
    }
    Ok((out, report))
}
