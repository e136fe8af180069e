//! Seeded image/mask pairs for tests, demos and training runs.
//!
//! The background is a dark field (10–60): a handful of low-frequency
//! cosines for shading, a fine diagonal weave and per-pixel grain. Bright
//! structures (150–255 in every channel) are painted on top: filled
//! ellipses and thin branching random-walk curves.
//! The mask is 255 wherever a structure was painted, so any threshold
//! strictly between 60 and 150 separates the two classes exactly.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pixel::Image;

pub const BACKGROUND_RANGE: (u8, u8) = (10, 60);
pub const STRUCTURE_MIN: u8 = 150;
/// Weave amplitude in gray levels, drawn per image.
const WEAVE_AMPLITUDE: (f64, f64) = (3.0, 6.0);
/// Weave frequency in cycles per pixel (horizontal, vertical).
const WEAVE_FREQUENCY: (f64, f64) = (5.0 / 12.0, 4.0 / 12.0);
const WEAVE_JITTER: f64 = 0.02;
const GRAIN_AMPLITUDE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl SyntheticSpec {
    pub fn gray(seed: u64, width: usize, height: usize) -> Self {
        Self {
            seed,
            width,
            height,
            channels: 1,
        }
    }

    pub fn color(seed: u64, width: usize, height: usize) -> Self {
        Self {
            seed,
            width,
            height,
            channels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticImage {
    pub image: Image,
    /// Single channel, 255 on structures, 0 elsewhere.
    pub mask: Image,
}

/// Panics on zero dimensions or a channel count other than 1 or 3; use
/// [`try_generate`] for untrusted input.
pub fn generate(spec: &SyntheticSpec) -> SyntheticImage {
    try_generate(spec).expect("valid synthetic spec")
}

pub fn try_generate(spec: &SyntheticSpec) -> Result<SyntheticImage> {
    let (w, h) = (spec.width, spec.height);
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument(format!("synthetic image dimensions must be positive, got {w}x{h}")));
    }
    if spec.channels != 1 && spec.channels != 3 {
        return Err(Error::InvalidArgument(format!("synthetic images have 1 or 3 channels, got {}", spec.channels)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut samples = vec![0u8; w * h * spec.channels];
    for c in 0..spec.channels {
        let field = background(&mut rng, w, h);
        for (i, v) in field.into_iter().enumerate() {
            samples[i * spec.channels + c] = v;
        }
    }

    let mut mask = vec![false; w * h];
    let mut value = vec![0u8; w * h];
    let count = rng.random_range(2..=6);
    for _ in 0..count {
        let intensity = rng.random_range(STRUCTURE_MIN..=255);
        let mut canvas = Canvas {
            w,
            h,
            mask: &mut mask,
            value: &mut value,
            intensity,
        };
        if rng.random_bool(0.5) {
            paint_ellipse(&mut rng, &mut canvas);
        } else {
            paint_vessel(&mut rng, &mut canvas);
        }
    }

    for (i, &on) in mask.iter().enumerate() {
        if on {
            for c in 0..spec.channels {
                samples[i * spec.channels + c] = value[i];
            }
        }
    }
    let image = Image::new(w, h, spec.channels, samples)?;
    let mask = Image::new(w, h, 1, mask.iter().map(|&on| if on { 255 } else { 0 }).collect())?;
    Ok(SyntheticImage { image, mask })
}

/// Low-frequency shading, a fine diagonal weave and a little per-pixel grain.
fn background(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<u8> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let fx = rng.random_range(-2.0..2.0) / w as f64;
            let fy = rng.random_range(-2.0..2.0) / h as f64;
            let amp = rng.random_range(0.3..1.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            (fx, fy, amp, phase)
        })
        .collect();
    let raw: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            waves.iter().map(|&(fx, fy, a, p)| a * (2.0 * PI * (fx * x + fy * y) + p).cos()).sum()
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let weave_amp = rng.random_range(WEAVE_AMPLITUDE.0..=WEAVE_AMPLITUDE.1);
    let wx = WEAVE_FREQUENCY.0 + rng.random_range(-WEAVE_JITTER..=WEAVE_JITTER);
    let wy = WEAVE_FREQUENCY.1 + rng.random_range(-WEAVE_JITTER..=WEAVE_JITTER);
    let weave_phase = rng.random_range(0.0..2.0 * PI);
    let margin = weave_amp + GRAIN_AMPLITUDE;

    let (b0, b1) = (BACKGROUND_RANGE.0 as f64 + margin, BACKGROUND_RANGE.1 as f64 - margin);
    // A random sub-band keeps each image's contrast different.
    let span = rng.random_range(0.4..1.0) * (b1 - b0);
    let base = b0 + rng.random_range(0.0..=(b1 - b0 - span));
    raw.iter()
        .enumerate()
        .map(|(i, &v)| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let weave = weave_amp * (2.0 * PI * (wx * x + wy * y) + weave_phase).cos();
            let grain = rng.random_range(-GRAIN_AMPLITUDE..=GRAIN_AMPLITUDE);
            (base + t * span + weave + grain)
                .round()
                .clamp(BACKGROUND_RANGE.0 as f64, BACKGROUND_RANGE.1 as f64) as u8
        })
        .collect()
}

struct Canvas<'a> {
    w: usize,
    h: usize,
    mask: &'a mut [bool],
    value: &'a mut [u8],
    intensity: u8,
}

impl Canvas<'_> {
    fn disc(&mut self, cx: f64, cy: f64, r: f64) {
        let (x0, x1) = ((cx - r).floor().max(0.0) as usize, (cx + r).ceil().max(0.0) as usize);
        let (y0, y1) = ((cy - r).floor().max(0.0) as usize, (cy + r).ceil().max(0.0) as usize);
        for y in y0..=y1.min(self.h - 1) {
            for x in x0..=x1.min(self.w - 1) {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.paint(x, y);
                }
            }
        }
    }

    fn paint(&mut self, x: usize, y: usize) {
        let i = y * self.w + x;
        self.mask[i] = true;
        self.value[i] = self.value[i].max(self.intensity);
    }
}

fn paint_ellipse(rng: &mut ChaCha8Rng, canvas: &mut Canvas) {
    let (w, h) = (canvas.w as f64, canvas.h as f64);
    let max_axis = (w.min(h) / 12.0).max(2.0);
    let a = rng.random_range(1.5..=max_axis);
    let b = rng.random_range(1.5..=max_axis);
    let theta = rng.random_range(0.0..PI);
    let cx = rng.random_range(0.0..w);
    let cy = rng.random_range(0.0..h);
    let (s, c) = theta.sin_cos();
    let r = a.max(b).ceil() as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx.round() as isize + dx, cy.round() as isize + dy);
            if x < 0 || y < 0 || x >= canvas.w as isize || y >= canvas.h as isize {
                continue;
            }
            let (ox, oy) = (x as f64 - cx, y as f64 - cy);
            let (u, v) = (ox * c + oy * s, -ox * s + oy * c);
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                canvas.paint(x as usize, y as usize);
            }
        }
    }
}

/// A thin curve that wanders from a random start and may fork once.
fn paint_vessel(rng: &mut ChaCha8Rng, canvas: &mut Canvas) {
    let (w, h) = (canvas.w as f64, canvas.h as f64);
    let side = w.min(h);
    let start = (rng.random_range(0.0..w), rng.random_range(0.0..h));
    let heading = rng.random_range(0.0..2.0 * PI);
    let length = side * rng.random_range(0.25..0.6);
    let radius = rng.random_range(0.6..1.6);
    let fork = rng.random_bool(0.5).then(|| rng.random_range(0.3..0.7));
    let mut branches = vec![(start, heading, length)];
    while let Some(((mut x, mut y), mut dir, len)) = branches.pop() {
        let mut walked = 0.0;
        while walked < len {
            canvas.disc(x, y, radius);
            dir += rng.random_range(-0.25..0.25);
            x += dir.cos();
            y += dir.sin();
            walked += 1.0;
            if x < 0.0 || y < 0.0 || x >= w || y >= h {
                break;
            }
            if let Some(at) = fork {
                if branches.is_empty() && len == length && (walked - (at * len).round()).abs() < 0.5 {
                    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    branches.push(((x, y), dir + side * rng.random_range(0.4..1.0), len * 0.5));
                }
            }
        }
    }
}
