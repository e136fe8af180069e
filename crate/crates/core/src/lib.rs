//! Blind, ROI-preserving watermarking for block-structured images.
//!
//! A block-local segmenter labels every `m`×`m` block of an image as ROI or
//! NROI. Payload bits go only into NROI blocks, one bit per block and
//! channel, by ordering two mirrored DCT coefficients. Embedding iterates
//! until re-segmenting the watermarked image reproduces the map used to
//! place the bits, so the receiver can recompute that map from the
//! watermarked image alone. A small dense classifier later flags the blocks
//! that embedding actually altered so they can be rolled back.
//!
//! Module map:
//!
//! - [`pixel`]: rasters, netpbm I/O, the block grid.
//! - [`transform`]: orthonormal block DCT and the coefficient-pair primitives.
//! - [`nn`]: layers, losses, optimizers, gradient checks, weight files.
//! - [`segment`]: segmenters, ROI block maps, segmentation training.
//! - [`codec`]: iterative embedding and blind extraction.
//! - [`restore`]: distortion detection and recovery.
//! - [`metrics`]: PSNR, SSIM, Dice, accuracy, capacity.
//! - [`synthetic`]: seeded test corpora.
//! - [`cli`]: the `blessmark` command-line front end.

pub mod cli;
pub mod codec;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pixel;
pub mod restore;
pub mod segment;
pub mod synthetic;
pub mod transform;

pub use codec::{capacity, embed, extract, payload_slots, CodecConfig, EmbedReport, LengthMode, Watermark};
pub use error::{Error, Result};
pub use pixel::{read_image, write_image, BlockGrid, BlockRef, Image};
pub use segment::{roi_block_map, CnnSegmenter, RoiBlockMap, RoiPixelMap, Segmenter, ThresholdSegmenter};
pub use transform::{CoeffBlock, EmbedParams};
