//! The three roles of a trained network: style transfer, embedding and
//! trigger-driven extraction.

use crate::ecc::{ecc_decode, ecc_encode, EccConfig};
use crate::image_model::ImageTensor;
use crate::message::{
    actual_length, bits_to_bytes, bytes_to_bits, decode_plane, encode_plane, BitString, BitSymbols,
    TriggerPlane,
};
use crate::network::WeightSet;
use crate::{Error, Result};

/// Default trigger constant: raw black in the normalized domain.
pub const TRIGGER_VALUE: f32 = -1.0;

/// The all-black trigger plane for `size`.
pub fn make_trigger(size: usize) -> TriggerPlane {
    TriggerPlane::constant(size, TRIGGER_VALUE)
}

#[derive(Debug, Clone)]
pub struct Hider {
    pub weights: WeightSet<f32>,
    pub style_image: ImageTensor,
    pub trigger: TriggerPlane,
    pub block_size: usize,
    pub symbols: BitSymbols,
}

impl Hider {
    pub fn new(weights: WeightSet<f32>, style_image: ImageTensor, block_size: usize) -> Result<Self> {
        let size = weights.spec().image_size;
        if style_image.size() != size {
            return Err(Error::Shape(format!(
                "style image is {0}x{0}, network expects {size}x{size}",
                style_image.size()
            )));
        }
        actual_length(size, block_size)?;
        Ok(Hider {
            weights,
            style_image,
            trigger: make_trigger(size),
            block_size,
            symbols: BitSymbols::default(),
        })
    }

    pub fn size(&self) -> usize {
        self.weights.spec().image_size
    }

    /// Payload bits per cover, `(S/N)²`.
    pub fn capacity(&self) -> usize {
        actual_length(self.size(), self.block_size).expect("validated at construction")
    }

    fn run(&self, a: &ImageTensor, b: &ImageTensor) -> Result<ImageTensor> {
        let out = self.weights.forward(&a.to_tensor::<f32>(), &b.to_tensor::<f32>())?;
        Ok(ImageTensor::from_tensor(&out, 0))
    }

    pub fn style(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.run(x, &self.style_image)
    }

    /// Stego image carrying exactly `capacity()` bits.
    pub fn embed(&self, cover: &ImageTensor, bits: &BitString) -> Result<ImageTensor> {
        let plane = encode_plane(bits, self.size(), self.block_size, self.symbols)?;
        self.run(cover, &plane.tensor)
    }

    pub fn extract(&self, stego: &ImageTensor) -> Result<BitString> {
        self.extract_with(stego, &self.trigger.tensor)
    }

    /// Extraction driven by an arbitrary second input in place of the trigger.
    pub fn extract_with(&self, stego: &ImageTensor, trigger: &ImageTensor) -> Result<BitString> {
        decode_plane(&self.run(stego, trigger)?, self.block_size)
    }

    /// Payload bytes (after optional ECC) as the full-capacity bit string,
    /// zero-filled past the payload.
    pub fn payload_bits(&self, payload: &[u8], ecc: &EccConfig) -> Result<BitString> {
        let bits = bytes_to_bits(&ecc_encode(payload, ecc)?);
        let capacity = self.capacity();
        if bits.len() > capacity {
            return Err(Error::Capacity {
                bits: bits.len(),
                capacity,
            });
        }
        let fill = BitString::new(vec![false; capacity - bits.len()]);
        Ok(bits.padded_with(capacity, &fill))
    }

    /// Recovers payload bytes. Without ECC, `len` truncates the
    /// full-capacity byte string.
    pub fn extract_bytes(&self, stego: &ImageTensor, ecc: &EccConfig, len: Option<usize>) -> Result<Vec<u8>> {
        self.bytes_from_bits(&self.extract(stego)?, ecc, len)
    }

    pub fn bytes_from_bits(&self, bits: &BitString, ecc: &EccConfig, len: Option<usize>) -> Result<Vec<u8>> {
        let whole = bits.truncated(bits.len() / 8 * 8);
        let (bytes, _) = bits_to_bytes(&whole);
        let mut out = ecc_decode(&bytes, ecc)?;
        if let Some(n) = len {
            if n > out.len() {
                return Err(Error::InvalidArgument(format!(
                    "requested {n} bytes, {} available",
                    out.len()
                )));
            }
            out.truncate(n);
        }
        Ok(out)
    }
}
