//! Iterative NROI-only embedding and blind extraction.
//!
//! Embedding loop:
//!
//! 1. segment the working cover into a block map;
//! 2. write the payload into the first payload slots (NROI blocks,
//!    channel-major raster order), always starting from working-cover samples;
//! 3. segment the tentative result;
//! 4. stop if the map is unchanged, otherwise freeze every block that
//!    flipped NROI→ROI at its embedded version in the working cover and
//!    start over.
//!
//! Because segmenters are block-local, untouched blocks never change their
//! label, the NROI set only shrinks, and the loop ends after at most
//! `initial NROI count + 1` rounds. The final image re-segments to exactly
//! the map that placed the bits, so extraction needs nothing but the image.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::metrics::bpp;
use crate::pixel::{BlockRef, Image};
use crate::segment::{MapBuilder, RoiBlockMap, Segmenter};
use crate::transform::{embed_bit, embed_bit_with_margin, quantize_block, read_bit, Dct, EmbedParams};

/// Bits used by the self-describing length prefix in [`LengthMode::Header`].
pub const HEADER_BITS: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Watermark {
    bits: Vec<bool>,
}

impl Watermark {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// `len` uniform bits from a seeded generator.
    pub fn random(seed: u64, len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            bits: (0..len).map(|_| rng.random::<bool>()).collect(),
        }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// One line of `0`/`1` characters with a trailing newline.
    pub fn to_text(&self) -> String {
        let mut s: String = self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
        s.push('\n');
        s
    }
}

impl FromStr for Watermark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let line = s.strip_suffix('\n').unwrap_or(s);
        let line = line.strip_suffix('\r').unwrap_or(line);
        let bits = line
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Watermark(format!("unexpected character {other:?}"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self { bits })
    }
}

impl fmt::Display for Watermark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LengthMode {
    /// The receiver is told the payload length out of band.
    #[default]
    External,
    /// A 32-bit big-endian length occupies the first slots.
    Header,
}

impl FromStr for LengthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "external" => Ok(Self::External),
            "header" => Ok(Self::Header),
            other => Err(Error::InvalidArgument(format!("unknown length mode {other:?}"))),
        }
    }
}

impl fmt::Display for LengthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::External => "external",
            Self::Header => "header",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodecConfig {
    pub params: EmbedParams,
    pub max_iterations: usize,
    /// Post-quantization re-embedding attempts; 0 disables the check.
    pub guard_retries: usize,
    pub length_mode: LengthMode,
}

impl CodecConfig {
    pub fn new(params: EmbedParams) -> Self {
        Self {
            params,
            max_iterations: 10_000,
            guard_retries: 64,
            length_mode: LengthMode::External,
        }
    }

    pub fn for_block_size(m: usize) -> Result<Self> {
        Ok(Self::new(EmbedParams::for_block_size(m)?))
    }

    pub fn m(&self) -> usize {
        self.params.m()
    }

    fn overhead(&self) -> usize {
        match self.length_mode {
            LengthMode::External => 0,
            LengthMode::Header => HEADER_BITS,
        }
    }
}

/// What happened to one payload slot in the final embedding round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRecord {
    pub slot: BlockRef,
    pub bit: bool,
    pub modified: bool,
    /// Margin applications: 0 when unmodified, 1 for a clean embed, more
    /// when the quantization guard had to step in.
    pub increments: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedReport {
    pub iterations: usize,
    pub switched_blocks: usize,
    /// Switched blocks as a percentage of the initially NROI blocks.
    pub switched_percent: f64,
    pub bits_embedded: usize,
    /// Payload slots of the first-round map (header included).
    pub slots_available: usize,
    /// Block map of every round, first to last; the last one is the map the
    /// watermarked image segments to.
    pub maps: Vec<RoiBlockMap>,
    pub slots: Vec<SlotRecord>,
}

impl EmbedReport {
    pub fn initial_map(&self) -> &RoiBlockMap {
        self.maps.first().expect("at least one round")
    }

    pub fn final_map(&self) -> &RoiBlockMap {
        self.maps.last().expect("at least one round")
    }

    pub fn modified_slots(&self) -> impl Iterator<Item = &SlotRecord> {
        self.slots.iter().filter(|s| s.modified)
    }

    pub fn to_key_value(&self) -> String {
        let modified = self.modified_slots().count();
        let guarded = self.slots.iter().filter(|s| s.increments > 1).count();
        format!(
            "iterations={}\nswitched_blocks={}\nswitched_percent={:.4}\nbits_embedded={}\nslots_available={}\n\
             initial_nroi_blocks={}\nfinal_nroi_blocks={}\nmodified_slots={}\nguarded_slots={}\n",
            self.iterations,
            self.switched_blocks,
            self.switched_percent,
            self.bits_embedded,
            self.slots_available,
            self.initial_map().nroi_count(),
            self.final_map().nroi_count(),
            modified,
            guarded
        )
    }
}

/// Every NROI block once per channel: all of channel 0 in raster order, then channel 1, ...
pub fn payload_slots(map: &RoiBlockMap, channels: usize) -> Vec<BlockRef> {
    (0..channels)
        .flat_map(|ch| map.nroi_positions().map(move |(r, c)| BlockRef::new(ch, r, c)))
        .collect()
}

/// Usable payload bits of `image` in its current state.
pub fn capacity<S: Segmenter + ?Sized>(image: &Image, segmenter: &S, config: &CodecConfig) -> Result<CapacityReport> {
    let map = MapBuilder::new(segmenter).build(image, config.m())?;
    let slots = payload_slots(&map, image.channels()).len();
    let bits = slots.saturating_sub(config.overhead());
    Ok(CapacityReport {
        slots,
        bits,
        bpp: bpp(bits, image.width(), image.height()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityReport {
    pub slots: usize,
    pub bits: usize,
    pub bpp: f64,
}

pub(crate) struct BlockEmbedding {
    pub samples: Vec<u8>,
    pub modified: bool,
    pub increments: usize,
}

/// Embeds one bit into one block of samples and returns the quantized result.
///
/// With a nonzero `guard_retries`, the quantized block is re-analysed and,
/// if rounding destroyed the bit, embedded again with a margin that doubles
/// each attempt (`th·2^attempt`).
pub(crate) fn embed_block(
    dct: &Dct,
    samples: &[u8],
    params: &EmbedParams,
    bit: bool,
    guard_retries: usize,
) -> Option<BlockEmbedding> {
    let mut coeffs = dct.forward_u8(samples);
    if !embed_bit(&mut coeffs, params, bit) {
        return Some(BlockEmbedding {
            samples: samples.to_vec(),
            modified: false,
            increments: 0,
        });
    }
    let mut out = quantize_block(&dct.inverse(&coeffs));
    let mut increments = 1;
    if guard_retries == 0 {
        return Some(BlockEmbedding {
            samples: out,
            modified: true,
            increments,
        });
    }
    for attempt in 1..=guard_retries {
        let mut requantized = dct.forward_u8(&out);
        if read_bit(&requantized, params) == bit {
            return Some(BlockEmbedding {
                samples: out,
                modified: true,
                increments,
            });
        }
        let margin = params.threshold() * 2f64.powi(attempt.min(1000) as i32);
        embed_bit_with_margin(&mut requantized, params, bit, margin);
        out = quantize_block(&dct.inverse(&requantized));
        increments += 1;
    }
    (read_bit(&dct.forward_u8(&out), params) == bit).then_some(BlockEmbedding {
        samples: out,
        modified: true,
        increments,
    })
}

fn payload_bits(watermark: &Watermark, mode: LengthMode) -> Result<Vec<bool>> {
    let mut bits = Vec::with_capacity(watermark.len() + HEADER_BITS);
    if mode == LengthMode::Header {
        let len = u32::try_from(watermark.len())
            .map_err(|_| Error::InvalidArgument("watermark longer than a 32-bit header can describe".into()))?;
        bits.extend((0..HEADER_BITS).rev().map(|i| (len >> i) & 1 == 1));
    }
    bits.extend_from_slice(watermark.bits());
    Ok(bits)
}

/// Embeds `watermark` into the NROI blocks of `cover`.
pub fn embed<S: Segmenter + ?Sized>(
    cover: &Image,
    watermark: &Watermark,
    segmenter: &S,
    config: &CodecConfig,
) -> Result<(Image, EmbedReport)> {
    if config.max_iterations == 0 {
        return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
    }
    let m = config.m();
    let dct = Dct::new(m);
    let payload = payload_bits(watermark, config.length_mode)?;
    let mut maps_builder = MapBuilder::new(segmenter);
    let mut working = cover.clone();
    let mut map = maps_builder.build(&working, m)?;
    let mut maps = vec![map.clone()];
    let slots_available = payload_slots(&map, cover.channels()).len();

    for iteration in 1..=config.max_iterations {
        let slots = payload_slots(&map, cover.channels());
        if payload.len() > slots.len() {
            return Err(Error::Capacity {
                needed: payload.len(),
                available: slots.len(),
            });
        }
        let mut tentative = working.clone();
        let mut records = Vec::with_capacity(payload.len());
        for (&slot, &bit) in slots.iter().zip(&payload) {
            let block = working.extract_block(slot, m)?;
            let e = embed_block(&dct, &block, &config.params, bit, config.guard_retries)
                .ok_or(Error::GuardExhausted(slot))?;
            if e.modified {
                tentative.replace_block(slot, m, &e.samples)?;
            }
            records.push(SlotRecord {
                slot,
                bit,
                modified: e.modified,
                increments: e.increments,
            });
        }

        let next = maps_builder.build(&tentative, m)?;
        if next == map {
            let initial = &maps[0];
            let switched = initial.nroi_count() - map.nroi_count().min(initial.nroi_count());
            let switched_percent = if initial.nroi_count() == 0 {
                0.0
            } else {
                100.0 * switched as f64 / initial.nroi_count() as f64
            };
            let report = EmbedReport {
                iterations: iteration,
                switched_blocks: switched,
                switched_percent,
                bits_embedded: watermark.len(),
                slots_available,
                maps,
                slots: records,
            };
            return Ok((tentative, report));
        }

        for (r, c) in map.nroi_positions().collect::<Vec<_>>() {
            if next.is_roi(r, c) {
                working.copy_block_from(&tentative, r, c, m)?;
            }
        }
        map = maps_builder.build(&working, m)?;
        maps.push(map.clone());
    }
    Err(Error::NotConverged(config.max_iterations))
}

/// Reads a watermark back from a watermarked image alone.
///
/// `length` is required in [`LengthMode::External`] and ignored in
/// [`LengthMode::Header`], where the prefix supplies it.
pub fn extract<S: Segmenter + ?Sized>(
    watermarked: &Image,
    segmenter: &S,
    config: &CodecConfig,
    length: Option<usize>,
) -> Result<Watermark> {
    let m = config.m();
    let map = MapBuilder::new(segmenter).build(watermarked, m)?;
    let slots = payload_slots(&map, watermarked.channels());
    let dct = Dct::new(m);
    let read = |slot: &BlockRef| -> Result<bool> {
        let block = watermarked.extract_block(*slot, m)?;
        Ok(read_bit(&dct.forward_u8(&block), &config.params))
    };
    let (offset, len) = match config.length_mode {
        LengthMode::External => {
            let len = length.ok_or_else(|| Error::InvalidArgument("external length mode needs a bit count".into()))?;
            (0, len)
        }
        LengthMode::Header => {
            if slots.len() < HEADER_BITS {
                return Err(Error::Capacity {
                    needed: HEADER_BITS,
                    available: slots.len(),
                });
            }
            let mut len = 0usize;
            for slot in &slots[..HEADER_BITS] {
                len = (len << 1) | read(slot)? as usize;
            }
            (HEADER_BITS, len)
        }
    };
    if offset + len > slots.len() {
        return Err(Error::Capacity {
            needed: len,
            available: slots.len() - offset,
        });
    }
    let bits = slots[offset..offset + len].iter().map(read).collect::<Result<_>>()?;
    Ok(Watermark::new(bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{roi_block_map, ThresholdSegmenter};

    #[test]
    fn slot_order() {
        let map = RoiBlockMap::all(2, 2, false);
        let gray = payload_slots(&map, 1);
        assert_eq!(
            gray,
            vec![BlockRef::new(0, 0, 0), BlockRef::new(0, 0, 1), BlockRef::new(0, 1, 0), BlockRef::new(0, 1, 1)]
        );
        let color = payload_slots(&map, 3);
        assert_eq!(color.len(), 12);
        assert_eq!(&color[..4], gray.as_slice());
        assert!(color[4..8].iter().all(|s| s.channel == 1));
        assert!(payload_slots(&RoiBlockMap::all(2, 2, true), 3).is_empty());
    }

    #[test]
    fn capacity_of_flat_dark_image() {
        let img = Image::filled(512, 512, 1, 30).unwrap();
        let mut cfg = CodecConfig::for_block_size(6).unwrap();
        let cap = capacity(&img, &ThresholdSegmenter::default(), &cfg).unwrap();
        assert_eq!(cap.bits, 7225);
        assert!((cap.bpp - 7225.0 / 262144.0).abs() < 1e-15);
        cfg.length_mode = LengthMode::Header;
        assert_eq!(capacity(&img, &ThresholdSegmenter::default(), &cfg).unwrap().bits, 7193);
    }

    #[test]
    fn empty_watermark_is_identity() {
        let img = crate::synthetic::generate(&crate::synthetic::SyntheticSpec::gray(3, 48, 48)).image;
        let cfg = CodecConfig::for_block_size(6).unwrap();
        let (wm, report) = embed(&img, &Watermark::default(), &ThresholdSegmenter::default(), &cfg).unwrap();
        assert_eq!(wm, img);
        assert_eq!(report.iterations, 1);
        assert!(extract(&wm, &ThresholdSegmenter::default(), &cfg, Some(0)).unwrap().is_empty());
    }

    #[test]
    fn header_mode_roundtrip() {
        let img = crate::synthetic::generate(&crate::synthetic::SyntheticSpec::gray(4, 96, 96)).image;
        let mut cfg = CodecConfig::for_block_size(6).unwrap();
        cfg.length_mode = LengthMode::Header;
        let w = Watermark::random(1, 40);
        let (wm, _) = embed(&img, &w, &ThresholdSegmenter::default(), &cfg).unwrap();
        assert_eq!(extract(&wm, &ThresholdSegmenter::default(), &cfg, None).unwrap(), w);
    }

    #[test]
    fn all_roi_image_has_no_room() {
        let img = Image::filled(12, 12, 1, 240).unwrap();
        let cfg = CodecConfig::for_block_size(6).unwrap();
        let seg = ThresholdSegmenter::default();
        assert!(matches!(extract(&img, &seg, &cfg, Some(1)), Err(Error::Capacity { .. })));
        assert!(matches!(embed(&img, &Watermark::random(0, 1), &seg, &cfg), Err(Error::Capacity { .. })));
        assert!(matches!(extract(&img, &seg, &cfg, None), Err(Error::InvalidArgument(_))));
    }

    /// Block (0,0) stays below the oracle threshold but holds a large
    /// coefficient gap of the wrong sign for bit 1, so the swap pushes some
    /// pixel past 128. Block (0,1) is flat and dark. The (0,0) block is found
    /// by a small search over DC level, horizontal ramp and gap size.
    fn switching_cover() -> Image {
        let m = 6;
        let params = EmbedParams::for_block_size(m).unwrap();
        let dct = Dct::new(m);
        let mut found = None;
        'search: for level in (90..128).rev() {
            for ramp in (-40..=40).step_by(5) {
                for gap in (10..=60).step_by(5) {
                    let mut c = dct.forward(&[level as f64; 36]);
                    c.set(1, 2, ramp as f64);
                    c.set(params.index(), params.index() + 1, gap as f64);
                    let block = quantize_block(&dct.inverse(&c));
                    if block.iter().any(|&v| v >= 128) || block.iter().any(|&v| v == 0 || v == 255) {
                        continue;
                    }
                    let e = embed_block(&dct, &block, &params, true, 64).unwrap();
                    if e.samples.iter().any(|&v| v >= 128) {
                        found = Some(block);
                        break 'search;
                    }
                }
            }
        }
        let mut img = Image::filled(12, 6, 1, 40).unwrap();
        img.replace_block(BlockRef::new(0, 0, 0), m, &found.expect("a switching block exists"))
            .unwrap();
        img
    }

    #[test]
    fn switched_block_takes_two_rounds() {
        let cover = switching_cover();
        let seg = ThresholdSegmenter::default();
        let cfg = CodecConfig::for_block_size(6).unwrap();
        assert_eq!(roi_block_map(&cover, &seg, 6).unwrap().nroi_count(), 2);

        // round 1: bit 1 into (0,0) swaps the big gap and crosses 128; round 2:
        // (0,0) is frozen as ROI and the single bit moves to (0,1)
        let w = Watermark::new(vec![true]);
        let (wm, report) = embed(&cover, &w, &seg, &cfg).unwrap();
        assert_eq!(report.iterations, 2);
        assert_eq!(report.switched_blocks, 1);
        assert!(report.final_map().is_roi(0, 0));
        assert!(!report.final_map().is_roi(0, 1));
        assert_eq!(roi_block_map(&wm, &seg, 6).unwrap(), *report.final_map());
        assert_eq!(extract(&wm, &seg, &cfg, Some(1)).unwrap(), w);
        assert_eq!(report.slots[0].slot, BlockRef::new(0, 0, 1));
    }

    #[test]
    fn capacity_shrinkage_is_an_error() {
        let cover = switching_cover();
        let w = Watermark::new(vec![true, true]);
        let cfg = CodecConfig::for_block_size(6).unwrap();
        let err = embed(&cover, &w, &ThresholdSegmenter::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Capacity { needed: 2, available: 1 }));
    }

    #[test]
    fn watermark_text_format() {
        let w: Watermark = "0110\n".parse().unwrap();
        assert_eq!(w.bits(), &[false, true, true, false]);
        assert_eq!(w.to_text(), "0110\n");
        assert!("".parse::<Watermark>().unwrap().is_empty());
        assert_eq!(Watermark::default().to_text(), "\n");
        assert!("01x".parse::<Watermark>().is_err());
        assert_eq!(Watermark::random(5, 64), Watermark::random(5, 64));
    }

    #[test]
    fn guard_rescues_flat_blocks() {
        let dct = Dct::new(6);
        let params = EmbedParams::for_block_size(6).unwrap();
        let flat = [90u8; 36];
        // a single th on a zero gap is erased by rounding
        let raw = embed_block(&dct, &flat, &params, true, 0).unwrap();
        assert_eq!(raw.samples, flat.to_vec());
        assert!(!read_bit(&dct.forward_u8(&raw.samples), &params));
        let guarded = embed_block(&dct, &flat, &params, true, 64).unwrap();
        assert!(read_bit(&dct.forward_u8(&guarded.samples), &params));
        assert!(guarded.increments > 1);
    }
}
