//! 8-bit rasters, binary netpbm I/O and the non-overlapping block grid.
//!
//! Samples are stored row-major with channels interleaved, so a pixel at
//! `(x, y)` of a color image occupies `samples[(y * width + x) * 3..][..3]`.
//! Only the binary PGM (`P5`) and PPM (`P6`) flavours with `maxval == 255`
//! are supported.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if samples.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} samples, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, channel: usize) -> u8 {
        self.samples[(y * self.width + x) * self.channels + channel]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, channel: usize, value: u8) {
        self.samples[(y * self.width + x) * self.channels + channel] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// BT.601 luma, rounded half-up. Single-channel images are returned as-is.
    pub fn to_grayscale(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let samples = self
            .samples
            .chunks_exact(3)
            .map(|px| {
                let luma = 299 * px[0] as u32 + 587 * px[1] as u32 + 114 * px[2] as u32;
                ((luma + 500) / 1000).min(255) as u8
            })
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            samples,
        }
    }

    /// Copies one channel of an `m`×`m` grid block out as a row-major matrix.
    pub fn extract_block(&self, block: BlockRef, m: usize) -> Result<Vec<u8>> {
        self.check_block(block, m)?;
        let mut out = Vec::with_capacity(m * m);
        let (x0, y0) = (block.col * m, block.row * m);
        for y in y0..y0 + m {
            for x in x0..x0 + m {
                out.push(self.get(x, y, block.channel));
            }
        }
        Ok(out)
    }

    pub fn replace_block(&mut self, block: BlockRef, m: usize, values: &[u8]) -> Result<()> {
        self.check_block(block, m)?;
        if values.len() != m * m {
            return Err(Error::Shape(format!(
                "block replacement needs {} samples, got {}",
                m * m,
                values.len()
            )));
        }
        let (x0, y0) = (block.col * m, block.row * m);
        for (dy, row) in values.chunks_exact(m).enumerate() {
            for (dx, &v) in row.iter().enumerate() {
                self.set(x0 + dx, y0 + dy, block.channel, v);
            }
        }
        Ok(())
    }

    /// Copies every channel of grid block `(row, col)` from `source`.
    pub fn copy_block_from(&mut self, source: &Image, row: usize, col: usize, m: usize) -> Result<()> {
        if !self.same_shape(source) {
            return Err(Error::Shape("block copy between differently shaped images".into()));
        }
        for channel in 0..self.channels {
            let r = BlockRef::new(channel, row, col);
            let block = source.extract_block(r, m)?;
            self.replace_block(r, m, &block)?;
        }
        Ok(())
    }

    fn check_block(&self, block: BlockRef, m: usize) -> Result<()> {
        let grid = BlockGrid::new(self, m)?;
        if block.channel >= self.channels || block.row >= grid.rows || block.col >= grid.cols {
            return Err(Error::InvalidArgument(format!(
                "block (channel {}, row {}, col {}) outside {}x{} grid with {} channel(s)",
                block.channel, block.row, block.col, grid.rows, grid.cols, self.channels
            )));
        }
        Ok(())
    }
}

/// Non-overlapping `m`×`m` tiling anchored at the top-left corner.
///
/// Trailing strips narrower than `m` on the right and bottom are outside the
/// grid; they are never segmented or embedded into.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockGrid {
    pub m: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockGrid {
    pub fn new(image: &Image, m: usize) -> Result<Self> {
        Self::for_dims(image.width(), image.height(), m)
    }

    pub fn for_dims(width: usize, height: usize, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("block size must be at least 2, got {m}")));
        }
        Ok(Self {
            m,
            rows: height / m,
            cols: width / m,
        })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raster-order `(row, col)` positions.
    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |r| (0..self.cols).map(move |c| (r, c)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRef {
    pub channel: usize,
    pub row: usize,
    pub col: usize,
}

impl BlockRef {
    pub const fn new(channel: usize, row: usize, col: usize) -> Self {
        Self { channel, row, col }
    }
}

/// Parses a binary PGM (`P5`) or PPM (`P6`) stream.
pub fn read_image(bytes: &[u8]) -> Result<Image> {
    let mut header = HeaderReader { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("expected P5 or P6 magic".into())),
    };
    header.pos = 2;
    let width = header.next_number("width")?;
    let height = header.next_number("height")?;
    let maxval = header.next_number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("only maxval 255 is supported, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("degenerate dimensions {width}x{height}")));
    }
    // exactly one whitespace byte separates maxval from the raster
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let raster = &bytes[header.pos..];
    if raster.len() < len {
        return Err(Error::Format(format!(
            "truncated raster: expected {len} samples, found {}",
            raster.len()
        )));
    }
    Image::new(width, height, channels, raster[..len].to_vec())
}

/// Serializes to `P5` (one channel) or `P6` (three channels).
pub fn write_image(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.samples());
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn next_number(&mut self, what: &str) -> Result<usize> {
        let start_sep = self.pos;
        self.skip_separators();
        if self.pos == start_sep {
            return Err(Error::Format(format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("{what} out of range")))
    }
}
