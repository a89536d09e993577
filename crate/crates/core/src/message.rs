//! Payload bits ↔ block-structured message planes.
//!
//! A plane of side `S` holds `(S/N)²` blocks of `N×N×3` samples; every block
//! is constant at the symbol of the bit it carries. Blocks are numbered in
//! row-major order and bytes expand most-significant bit first.

use crate::image_model::{ImageTensor, RawImage, CHANNELS};
use crate::{Error, Result};

/// Ordered payload bits.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitString {
    bits: Vec<bool>,
}

impl BitString {
    pub fn new(bits: Vec<bool>) -> Self {
        BitString { bits }
    }

    pub fn from_01(bits: &[u8]) -> Self {
        BitString {
            bits: bits.iter().map(|&b| b != 0).collect(),
        }
    }

    pub fn random<R: rand::Rng>(len: usize, rng: &mut R) -> Self {
        BitString {
            bits: (0..len).map(|_| rng.random::<bool>()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Appends bits from `rest` until `len` bits are held.
    pub fn padded_with(mut self, len: usize, rest: &BitString) -> BitString {
        let missing = len.saturating_sub(self.bits.len());
        self.bits.extend(rest.bits.iter().take(missing));
        self
    }

    pub fn truncated(&self, len: usize) -> BitString {
        BitString {
            bits: self.bits[..len.min(self.bits.len())].to_vec(),
        }
    }

    pub fn hamming(&self, other: &BitString) -> Result<usize> {
        if self.len() != other.len() {
            return Err(Error::PayloadSize {
                expected: self.len(),
                actual: other.len(),
            });
        }
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count())
    }
}

/// Number of payload bits a plane of side `size` carries at `block_size`.
pub fn actual_length(size: usize, block_size: usize) -> Result<usize> {
    if block_size == 0 || size == 0 || size % block_size != 0 {
        return Err(Error::Config(format!(
            "block size N={block_size} must divide image size {size}"
        )));
    }
    let per_side = size / block_size;
    Ok(per_side * per_side)
}

/// Sample values written for bit 0 and bit 1 (normalized domain).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitSymbols {
    /// `0 → −1`, `1 → +1`: symmetric around the decoding threshold.
    #[default]
    Signed,
    /// `0 → 0`, `1 → 1`.
    Unit,
}

impl BitSymbols {
    pub fn value(self, bit: bool) -> f32 {
        match (self, bit) {
            (BitSymbols::Signed, false) => -1.0,
            (BitSymbols::Signed, true) => 1.0,
            (BitSymbols::Unit, false) => 0.0,
            (BitSymbols::Unit, true) => 1.0,
        }
    }
}

/// Message image: one constant block per payload bit.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagePlane {
    pub tensor: ImageTensor,
    pub block_size: usize,
}

/// Constant plane that switches the network into extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerPlane {
    pub tensor: ImageTensor,
}

impl TriggerPlane {
    pub fn constant(size: usize, value: f32) -> Self {
        TriggerPlane {
            tensor: ImageTensor::constant(size, value),
        }
    }
}

pub fn encode_plane(
    bits: &BitString,
    size: usize,
    block_size: usize,
    symbols: BitSymbols,
) -> Result<MessagePlane> {
    let al = actual_length(size, block_size)?;
    if bits.len() != al {
        return Err(Error::PayloadSize {
            expected: al,
            actual: bits.len(),
        });
    }
    let per_side = size / block_size;
    let mut values = vec![0.0f32; size * size * CHANNELS];
    for y in 0..size {
        let by = y / block_size;
        for x in 0..size {
            let v = symbols.value(bits.bits[by * per_side + x / block_size]);
            for c in 0..CHANNELS {
                values[(c * size + y) * size + x] = v;
            }
        }
    }
    Ok(MessagePlane {
        tensor: ImageTensor::new(size, CHANNELS, values)?,
        block_size,
    })
}

/// Thresholds each block's mean at zero; a mean of exactly zero reads as 0.
pub fn decode_plane(plane: &ImageTensor, block_size: usize) -> Result<BitString> {
    let size = plane.size();
    let al = actual_length(size, block_size)?;
    let per_side = size / block_size;
    let mut sums = vec![0.0f64; al];
    for c in 0..plane.channels() {
        for y in 0..size {
            let row = (y / block_size) * per_side;
            for x in 0..size {
                sums[row + x / block_size] += plane.get(y, x, c) as f64;
            }
        }
    }
    Ok(BitString {
        bits: sums.into_iter().map(|s| s > 0.0).collect(),
    })
}

/// Visual rendering of a payload: bit-1 blocks white, bit-0 blocks black.
pub fn plane_image(bits: &BitString, size: usize, block_size: usize) -> Result<RawImage> {
    let plane = encode_plane(bits, size, block_size, BitSymbols::Signed)?;
    Ok(crate::image_model::denormalize(&plane.tensor))
}

pub fn bytes_to_bits(payload: &[u8]) -> BitString {
    let mut bits = Vec::with_capacity(payload.len() * 8);
    for &byte in payload {
        for shift in (0..8).rev() {
            bits.push((byte >> shift) & 1 == 1);
        }
    }
    BitString { bits }
}

/// Packs bits MSB-first; a trailing partial byte is zero-padded. Returns the
/// bytes and the true bit length.
pub fn bits_to_bytes(bits: &BitString) -> (Vec<u8>, usize) {
    let bytes = bits
        .bits
        .chunks(8)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i)))
        })
        .collect();
    (bytes, bits.len())
}
