//! ROI segmentation.
//!
//! Every [`Segmenter`] must be block-local: the pixel map it returns for a
//! block depends only on that block's grayscale samples. Iterative
//! embedding converges and blind extraction recomputes the embedding map
//! only because of this.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::{dice, ConfusionCounts};
use crate::nn::{
    train, Conv2d, Layer, Network, NetworkWeights, Optimizer, Tensor, TrainConfig, TrainSample,
};
use crate::pixel::{BlockGrid, BlockRef, Image};

/// Per-pixel ROI labels of one `m`×`m` block, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiPixelMap {
    pub m: usize,
    pub roi: Vec<bool>,
}

impl RoiPixelMap {
    pub fn is_all_nroi(&self) -> bool {
        !self.roi.iter().any(|&r| r)
    }
}

pub trait Segmenter {
    /// Labels the pixels of one grayscale block given row-major.
    fn segment_block(&self, block: &[u8], m: usize) -> Result<RoiPixelMap>;
}

impl<S: Segmenter + ?Sized> Segmenter for &S {
    fn segment_block(&self, block: &[u8], m: usize) -> Result<RoiPixelMap> {
        (**self).segment_block(block, m)
    }
}

impl<S: Segmenter + ?Sized> Segmenter for Box<S> {
    fn segment_block(&self, block: &[u8], m: usize) -> Result<RoiPixelMap> {
        (**self).segment_block(block, m)
    }
}

fn check_block(block: &[u8], m: usize) -> Result<()> {
    if block.len() != m * m {
        return Err(Error::Shape(format!("expected a {m}x{m} block, got {} samples", block.len())));
    }
    Ok(())
}

/// Deterministic intensity oracle: ROI iff sample ≥ threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThresholdSegmenter {
    pub threshold: u8,
}

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        Self { threshold: 128 }
    }
}

impl Segmenter for ThresholdSegmenter {
    fn segment_block(&self, block: &[u8], m: usize) -> Result<RoiPixelMap> {
        check_block(block, m)?;
        Ok(RoiPixelMap {
            m,
            roi: block.iter().map(|&v| v >= self.threshold).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnSegmenterConfig {
    /// Output channels of the ten hidden 3×3 layers.
    pub hidden_channels: Vec<usize>,
    /// ROI class probability at or above which a pixel is ROI.
    pub threshold: f64,
}

impl Default for CnnSegmenterConfig {
    fn default() -> Self {
        Self {
            hidden_channels: vec![16, 32, 32, 64, 64, 64, 32, 32, 16, 16],
            threshold: 0.5,
        }
    }
}

pub const CNN_ARCH: &str = "segmenter-cnn";
const HIDDEN_LAYERS: usize = 10;

/// Ten 3×3 conv + ReLU layers, a 1×1 conv to two classes and a per-pixel
/// softmax. Channel 1 of the output is the ROI class.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnSegmenter {
    network: Network,
    threshold: f64,
    block_size: Option<usize>,
}

impl CnnSegmenter {
    pub fn new_random(config: &CnnSegmenterConfig, seed: u64) -> Result<Self> {
        if config.hidden_channels.len() != HIDDEN_LAYERS {
            return Err(Error::InvalidArgument(format!(
                "the segmenter has {HIDDEN_LAYERS} hidden conv layers, got a schedule of {}",
                config.hidden_channels.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_ch = 1;
        for &out in &config.hidden_channels {
            layers.push(Layer::Conv(Conv2d::glorot(in_ch, out, 3, &mut rng)));
            layers.push(Layer::Relu);
            in_ch = out;
        }
        layers.push(Layer::Conv(Conv2d::glorot(in_ch, 2, 1, &mut rng)));
        layers.push(Layer::Softmax);
        Ok(Self {
            network: Network::new(layers),
            threshold: config.threshold,
            block_size: None,
        })
    }

    pub fn from_network(network: Network, threshold: f64) -> Result<Self> {
        validate_architecture(&network)?;
        Ok(Self {
            network,
            threshold,
            block_size: None,
        })
    }

    /// Restores a trained segmenter; the recorded block size, if any, is enforced.
    pub fn from_weights(weights: &NetworkWeights) -> Result<Self> {
        if let Some(arch) = weights.meta("arch") {
            if arch != CNN_ARCH {
                return Err(Error::ModelMismatch(format!("expected {CNN_ARCH} weights, found {arch}")));
            }
        }
        let threshold = weights.meta("threshold").and_then(|v| v.parse().ok()).unwrap_or(0.5);
        let mut seg = Self::from_network(weights.network.clone(), threshold)?;
        seg.block_size = weights.meta_usize("block_size");
        Ok(seg)
    }

    pub fn with_block_size(mut self, m: usize) -> Self {
        self.block_size = Some(m);
        self
    }

    pub fn block_size(&self) -> Option<usize> {
        self.block_size
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn to_weights(&self) -> NetworkWeights {
        let mut w = NetworkWeights::new(self.network.clone())
            .with_meta("arch", CNN_ARCH)
            .with_meta("threshold", self.threshold);
        if let Some(m) = self.block_size {
            w = w.with_meta("block_size", m);
        }
        w
    }

    /// ROI-class probability per pixel.
    pub fn probabilities(&self, block: &[u8], m: usize) -> Result<Vec<f64>> {
        check_block(block, m)?;
        if let Some(expected) = self.block_size {
            if expected != m {
                return Err(Error::ModelMismatch(format!(
                    "segmenter was trained on {expected}x{expected} blocks, not {m}x{m}"
                )));
            }
        }
        let out = self.network.forward(&block_tensor(block, m))?;
        Ok(out.channel(1).to_vec())
    }
}

impl Segmenter for CnnSegmenter {
    fn segment_block(&self, block: &[u8], m: usize) -> Result<RoiPixelMap> {
        let probs = self.probabilities(block, m)?;
        Ok(RoiPixelMap {
            m,
            roi: probs.iter().map(|&p| p >= self.threshold).collect(),
        })
    }
}

fn validate_architecture(network: &Network) -> Result<()> {
    let convs: Vec<&Conv2d> = network
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::Conv(c) => Some(c),
            _ => None,
        })
        .collect();
    let ok = convs.len() == HIDDEN_LAYERS + 1
        && convs[0].in_channels == 1
        && convs[..HIDDEN_LAYERS].iter().all(|c| c.kernel == 3)
        && convs[HIDDEN_LAYERS].kernel == 1
        && convs[HIDDEN_LAYERS].out_channels == 2
        && matches!(network.layers.last(), Some(Layer::Softmax))
        && network.layers.iter().all(|l| !matches!(l, Layer::Dense(_) | Layer::Flatten));
    if !ok {
        return Err(Error::ModelMismatch("weights do not describe the 11-layer segmentation CNN".into()));
    }
    Ok(())
}

/// Samples scaled to `[0, 1]` as a `(1, m, m)` tensor.
pub(crate) fn block_tensor(block: &[u8], m: usize) -> Tensor {
    Tensor::image(1, m, m, block.iter().map(|&v| v as f64 / 255.0).collect())
        .expect("block length checked by caller")
}

/// Per-block ROI/NROI labels over an image's grid; one map for all channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiBlockMap {
    rows: usize,
    cols: usize,
    roi: Vec<bool>,
}

impl RoiBlockMap {
    pub fn new(rows: usize, cols: usize, roi: Vec<bool>) -> Result<Self> {
        if roi.len() != rows * cols {
            return Err(Error::Shape(format!("{rows}x{cols} block map needs {} labels", rows * cols)));
        }
        Ok(Self { rows, cols, roi })
    }

    pub fn all(rows: usize, cols: usize, roi: bool) -> Self {
        Self {
            rows,
            cols,
            roi: vec![roi; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_roi(&self, row: usize, col: usize) -> bool {
        self.roi[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, roi: bool) {
        self.roi[row * self.cols + col] = roi;
    }

    pub fn labels(&self) -> &[bool] {
        &self.roi
    }

    pub fn nroi_count(&self) -> usize {
        self.roi.iter().filter(|&&r| !r).count()
    }

    /// NROI `(row, col)` positions in raster order.
    pub fn nroi_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.roi
            .iter()
            .enumerate()
            .filter(|(_, &r)| !r)
            .map(move |(i, _)| (i / self.cols, i % self.cols))
    }

    /// True when every NROI block of `self` is NROI in `other` as well.
    pub fn nroi_subset_of(&self, other: &RoiBlockMap) -> bool {
        self.roi.len() == other.roi.len() && self.roi.iter().zip(&other.roi).all(|(&a, &b)| a || !b)
    }
}

/// Block map of an image: a block is NROI only when all of its pixels are NROI.
pub fn roi_block_map<S: Segmenter + ?Sized>(image: &Image, segmenter: &S, m: usize) -> Result<RoiBlockMap> {
    MapBuilder::new(segmenter).build(image, m)
}

/// Builds block maps, memoising labels by block content.
///
/// Valid because segmenters are pure functions of the block samples; the
/// iterative embedder re-segments mostly unchanged images many times.
pub(crate) struct MapBuilder<'a, S: ?Sized> {
    segmenter: &'a S,
    memo: HashMap<Vec<u8>, bool>,
}

impl<'a, S: Segmenter + ?Sized> MapBuilder<'a, S> {
    pub(crate) fn new(segmenter: &'a S) -> Self {
        Self {
            segmenter,
            memo: HashMap::new(),
        }
    }

    pub(crate) fn build(&mut self, image: &Image, m: usize) -> Result<RoiBlockMap> {
        let grid = BlockGrid::new(image, m)?;
        let gray = image.to_grayscale();
        let mut roi = Vec::with_capacity(grid.len());
        for (r, c) in grid.positions() {
            let block = gray.extract_block(BlockRef::new(0, r, c), m)?;
            let label = match self.memo.get(&block) {
                Some(&l) => l,
                None => {
                    let l = !self.segmenter.segment_block(&block, m)?.is_all_nroi();
                    self.memo.insert(block, l);
                    l
                }
            };
            roi.push(label);
        }
        RoiBlockMap::new(grid.rows, grid.cols, roi)
    }
}

/// An image with its ground-truth ROI mask (sample 255 = ROI).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub mask: Image,
}

impl LabeledImage {
    pub fn new(image: Image, mask: Image) -> Result<Self> {
        if mask.channels() != 1 || mask.width() != image.width() || mask.height() != image.height() {
            return Err(Error::Shape("mask must be single-channel with the image's dimensions".into()));
        }
        if mask.samples().iter().any(|&v| v != 0 && v != 255) {
            return Err(Error::TrainingData("mask samples must be 0 or 255".into()));
        }
        Ok(Self { image, mask })
    }

    /// Per-pixel ROI flags, row-major.
    pub fn roi_pixels(&self) -> Vec<bool> {
        self.mask.samples().iter().map(|&v| v == 255).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegTrainConfig {
    pub m: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub network: CnnSegmenterConfig,
}

impl SegTrainConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            epochs: 150,
            lr: 0.01,
            seed: 0,
            batch_size: 32,
            network: CnnSegmenterConfig::default(),
        }
    }
}

/// Grid blocks of the grayscale image with per-pixel mask targets.
pub fn segmentation_samples(data: &[LabeledImage], m: usize) -> Result<Vec<TrainSample>> {
    let mut samples = Vec::new();
    for item in data {
        let gray = item.image.to_grayscale();
        let grid = BlockGrid::new(&gray, m)?;
        for (r, c) in grid.positions() {
            let at = BlockRef::new(0, r, c);
            let block = gray.extract_block(at, m)?;
            let target = item.mask.extract_block(at, m)?.iter().map(|&v| (v == 255) as u8 as f64).collect();
            samples.push(TrainSample {
                input: block_tensor(&block, m),
                target,
            });
        }
    }
    Ok(samples)
}

/// Pixel-level confusion counts of `segmenter` over the grid area of `data`.
pub fn segmentation_confusion<S: Segmenter + ?Sized>(
    segmenter: &S,
    data: &[LabeledImage],
    m: usize,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    for item in data {
        let gray = item.image.to_grayscale();
        let grid = BlockGrid::new(&gray, m)?;
        for (r, c) in grid.positions() {
            let at = BlockRef::new(0, r, c);
            let block = gray.extract_block(at, m)?;
            let truth = item.mask.extract_block(at, m)?;
            let map = segmenter.segment_block(&block, m)?;
            for (&p, &t) in map.roi.iter().zip(&truth) {
                counts.record(p, t == 255);
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegTrainOutcome {
    pub segmenter: CnnSegmenter,
    pub weights: NetworkWeights,
    pub held_out_dice: f64,
    pub loss_history: Vec<f64>,
}

/// SGD training of the CNN on every grid block of `train_set`, scored by
/// pixel Dice on `held_out`.
pub fn train_segmenter<F>(
    train_set: &[LabeledImage],
    held_out: &[LabeledImage],
    config: &SegTrainConfig,
    on_epoch: F,
) -> Result<SegTrainOutcome>
where
    F: FnMut(usize, f64),
{
    let samples = segmentation_samples(train_set, config.m)?;
    if samples.is_empty() {
        return Err(Error::TrainingData("no training blocks (empty set or images smaller than a block)".into()));
    }
    let mut segmenter = CnnSegmenter::new_random(&config.network, config.seed)?.with_block_size(config.m);
    let train_config = TrainConfig {
        epochs: config.epochs,
        batch_size: config.batch_size,
        optimizer: Optimizer::Sgd { lr: config.lr },
        seed: config.seed,
        target_channel: 1,
    };
    let loss_history = train(segmenter.network_mut(), &samples, &train_config, on_epoch)?;
    let counts = segmentation_confusion(&segmenter, held_out, config.m)?;
    let held_out_dice = dice(counts)?;
    let weights = segmenter
        .to_weights()
        .with_meta("epochs", config.epochs)
        .with_meta("seed", config.seed)
        .with_meta("lr", config.lr)
        .with_meta("held_out_dice", held_out_dice);
    Ok(SegTrainOutcome {
        segmenter,
        weights,
        held_out_dice,
        loss_history,
    })
}
