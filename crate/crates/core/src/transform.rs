//! Orthonormal block DCT and the coefficient-pair bit primitives.
//!
//! A bit lives in the order relation between the two mirrored coefficients
//! `c(i, i+1)` and `c(i+1, i)` (1-based, as in the usual zig-zag tables):
//! `c(i, i+1) >= c(i+1, i)` reads as 0, anything else as 1.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Default margin added to the winning coefficient after a swap.
pub const DEFAULT_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedParams {
    m: usize,
    index: usize,
    threshold: f64,
}

impl EmbedParams {
    pub fn new(m: usize, index: usize, threshold: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!("block size must be at least 2, got {m}")));
        }
        if index < 1 || index + 1 > m {
            return Err(Error::InvalidArgument(format!(
                "coefficient index must lie in 1..={}, got {index}",
                m - 1
            )));
        }
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be finite and nonnegative, got {threshold}"
            )));
        }
        Ok(Self { m, index, threshold })
    }

    /// `i = m - 1`, `th = 0.01`.
    pub fn for_block_size(m: usize) -> Result<Self> {
        Self::new(m, m.saturating_sub(1), DEFAULT_THRESHOLD)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(self, threshold: f64) -> Result<Self> {
        Self::new(self.m, self.index, threshold)
    }

    /// Flat offsets of `c(i, i+1)` and `c(i+1, i)`.
    fn pair(&self) -> (usize, usize) {
        let i = self.index - 1;
        (i * self.m + i + 1, (i + 1) * self.m + i)
    }
}

/// An `m`×`m` matrix of DCT coefficients, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffBlock {
    m: usize,
    coeffs: Vec<f64>,
}

impl CoeffBlock {
    pub fn from_coeffs(m: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != m * m {
            return Err(Error::Shape(format!("{m}x{m} block needs {} coefficients", m * m)));
        }
        Ok(Self { m, coeffs })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            coeffs: vec![0.0; m * m],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    /// 1-based access, `c(row, col)`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.coeffs[(row - 1) * self.m + col - 1]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.coeffs[(row - 1) * self.m + col - 1] = value;
    }
}

// Above the float noise of the basis products, below any useful margin.
const ZERO_SNAP: f64 = 1e-9;

/// Precomputed orthonormal DCT-II basis for one block size.
///
/// `forward` computes `A X Aᵀ`, `inverse` computes `Aᵀ C A`.
#[derive(Debug, Clone)]
pub struct Dct {
    m: usize,
    basis: Vec<f64>,
}

impl Dct {
    pub fn new(m: usize) -> Self {
        let mut basis = vec![0.0; m * m];
        let dc = (1.0 / m as f64).sqrt();
        let ac = (2.0 / m as f64).sqrt();
        for k in 0..m {
            for j in 0..m {
                basis[k * m + j] = if k == 0 {
                    dc
                } else {
                    ac * (PI * (2 * j + 1) as f64 * k as f64 / (2 * m) as f64).cos()
                };
            }
        }
        Self { m, basis }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn forward(&self, samples: &[f64]) -> CoeffBlock {
        assert_eq!(samples.len(), self.m * self.m, "block side mismatch");
        let tmp = self.left(samples, false);
        CoeffBlock {
            m: self.m,
            coeffs: self.right(&tmp, true),
        }
    }

    /// Like [`Dct::forward`], with coefficients that are zero up to rounding
    /// noise snapped to exactly zero, so a flat block really ties its pair.
    pub fn forward_u8(&self, samples: &[u8]) -> CoeffBlock {
        let real: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
        let mut block = self.forward(&real);
        for c in &mut block.coeffs {
            if c.abs() < ZERO_SNAP {
                *c = 0.0;
            }
        }
        block
    }

    pub fn inverse(&self, block: &CoeffBlock) -> Vec<f64> {
        assert_eq!(block.m, self.m, "block side mismatch");
        let tmp = self.left(&block.coeffs, true);
        self.right(&tmp, false)
    }

    /// `A·X` or `Aᵀ·X`.
    fn left(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m * m];
        for r in 0..m {
            for k in 0..m {
                let a = if transpose { self.basis[k * m + r] } else { self.basis[r * m + k] };
                for c in 0..m {
                    out[r * m + c] += a * x[k * m + c];
                }
            }
        }
        out
    }

    /// `X·Aᵀ` or `X·A`.
    fn right(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                let mut acc = 0.0;
                for k in 0..m {
                    let a = if transpose { self.basis[c * m + k] } else { self.basis[k * m + c] };
                    acc += x[r * m + k] * a;
                }
                out[r * m + c] = acc;
            }
        }
        out
    }
}

pub fn dct2(samples: &[f64], m: usize) -> CoeffBlock {
    Dct::new(m).forward(samples)
}

pub fn idct2(block: &CoeffBlock) -> Vec<f64> {
    Dct::new(block.m).inverse(block)
}

/// Forces the coefficient pair to encode `bit`. Returns whether anything changed.
pub fn embed_bit(block: &mut CoeffBlock, params: &EmbedParams, bit: bool) -> bool {
    embed_bit_with_margin(block, params, bit, params.threshold)
}

pub(crate) fn embed_bit_with_margin(block: &mut CoeffBlock, params: &EmbedParams, bit: bool, margin: f64) -> bool {
    let (upper, lower) = params.pair();
    let (a, b) = (block.coeffs[upper], block.coeffs[lower]);
    if !bit && a <= b {
        block.coeffs[upper] = b + margin;
        block.coeffs[lower] = a;
        true
    } else if bit && a >= b {
        block.coeffs[upper] = b;
        block.coeffs[lower] = a + margin;
        true
    } else {
        false
    }
}

pub fn read_bit(block: &CoeffBlock, params: &EmbedParams) -> bool {
    let (upper, lower) = params.pair();
    block.coeffs[upper] < block.coeffs[lower]
}

/// Undoes one `embed_bit` that encoded `bit`: removes the margin, then swaps back.
pub fn reverse_bit(block: &mut CoeffBlock, params: &EmbedParams, bit: bool) {
    let (upper, lower) = params.pair();
    if !bit {
        block.coeffs[upper] -= params.threshold;
        if block.coeffs[upper] > block.coeffs[lower] {
            block.coeffs.swap(upper, lower);
        }
    } else {
        block.coeffs[lower] -= params.threshold;
        if block.coeffs[upper] < block.coeffs[lower] {
            block.coeffs.swap(upper, lower);
        }
    }
}

/// Round half-up, then clip to the 8-bit range.
pub fn quantize_block(values: &[f64]) -> Vec<u8> {
    values.iter().map(|&v| quantize(v)).collect()
}

#[inline]
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}
