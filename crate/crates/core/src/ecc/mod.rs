//! Optional Reed–Solomon protection of payload bytes.
//!
//! Framing: the plaintext `len (u32 BE) || payload` is zero-padded to whole
//! `rs_k`-byte blocks and each block becomes an `rs_n`-byte codeword. The
//! decoder reads the length from the first block, so trailing filler after
//! the last codeword is ignored.

pub mod gf256;
pub mod rs;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EccScheme {
    #[default]
    None,
    ReedSolomon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EccConfig {
    pub scheme: EccScheme,
    pub rs_n: usize,
    pub rs_k: usize,
}

impl Default for EccConfig {
    fn default() -> Self {
        EccConfig {
            scheme: EccScheme::None,
            rs_n: 255,
            rs_k: 223,
        }
    }
}

const HEADER: usize = 4;

impl EccConfig {
    pub fn reed_solomon(rs_n: usize, rs_k: usize) -> Result<Self> {
        let cfg = EccConfig {
            scheme: EccScheme::ReedSolomon,
            rs_n,
            rs_k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scheme == EccScheme::ReedSolomon && !(0 < self.rs_k && self.rs_k < self.rs_n && self.rs_n <= 255)
        {
            return Err(Error::Config(format!(
                "reed-solomon requires 0 < rs_k < rs_n <= 255 (rs_n={}, rs_k={})",
                self.rs_n, self.rs_k
            )));
        }
        Ok(())
    }

    /// Byte errors correctable per codeword.
    pub fn correctable(&self) -> usize {
        match self.scheme {
            EccScheme::None => 0,
            EccScheme::ReedSolomon => (self.rs_n - self.rs_k) / 2,
        }
    }

    /// Encoded size of a payload of `len` bytes.
    pub fn encoded_len(&self, len: usize) -> usize {
        match self.scheme {
            EccScheme::None => len,
            EccScheme::ReedSolomon if len == 0 => 0,
            EccScheme::ReedSolomon => (len + HEADER).div_ceil(self.rs_k) * self.rs_n,
        }
    }
}

pub fn ecc_encode(payload: &[u8], cfg: &EccConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    match cfg.scheme {
        EccScheme::None => Ok(payload.to_vec()),
        EccScheme::ReedSolomon => {
            if payload.is_empty() {
                return Ok(Vec::new());
            }
            let len = u32::try_from(payload.len())
                .map_err(|_| Error::InvalidArgument("payload exceeds 4 GiB".into()))?;
            let mut plain = len.to_be_bytes().to_vec();
            plain.extend_from_slice(payload);
            plain.resize(plain.len().div_ceil(cfg.rs_k) * cfg.rs_k, 0);
            Ok(plain
                .chunks(cfg.rs_k)
                .flat_map(|chunk| rs::encode(chunk, cfg.rs_n - cfg.rs_k))
                .collect())
        }
    }
}

pub fn ecc_decode(codeword: &[u8], cfg: &EccConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    match cfg.scheme {
        EccScheme::None => Ok(codeword.to_vec()),
        EccScheme::ReedSolomon => {
            if codeword.is_empty() {
                return Ok(Vec::new());
            }
            let (n, k) = (cfg.rs_n, cfg.rs_k);
            let available = codeword.len() / n;
            if available == 0 {
                return Err(Error::Framing(format!(
                    "{} bytes is shorter than one {n}-byte codeword",
                    codeword.len()
                )));
            }
            let decode_block = |i: usize| -> Result<Vec<u8>> {
                let mut block = codeword[i * n..(i + 1) * n].to_vec();
                rs::decode(&mut block, n - k).ok_or(Error::Uncorrectable { block: i })?;
                block.truncate(k);
                Ok(block)
            };
            let mut plain = decode_block(0)?;
            if plain.len() < HEADER {
                return Err(Error::Framing("first block shorter than length header".into()));
            }
            let len = u32::from_be_bytes(plain[..HEADER].try_into().expect("4 bytes")) as usize;
            let blocks = (len + HEADER).div_ceil(k);
            if len == 0 || blocks > available {
                return Err(Error::Framing(format!(
                    "header claims {len} bytes ({blocks} codewords), {available} available"
                )));
            }
            for i in 1..blocks {
                plain.extend(decode_block(i)?);
            }
            Ok(plain[HEADER..HEADER + len].to_vec())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn none_is_identity() {
        let cfg = EccConfig::default();
        assert_eq!(ecc_encode(b"abc", &cfg).unwrap(), b"abc");
        assert_eq!(ecc_decode(b"abc", &cfg).unwrap(), b"abc");
    }

    #[test]
    fn empty_payload_stays_empty() {
        let cfg = EccConfig::reed_solomon(255, 223).unwrap();
        assert!(ecc_encode(&[], &cfg).unwrap().is_empty());
        assert!(ecc_decode(&[], &cfg).unwrap().is_empty());
    }

    #[test]
    fn systematic_prefix() {
        let cfg = EccConfig::reed_solomon(255, 223).unwrap();
        let cw = ecc_encode(b"secret", &cfg).unwrap();
        assert_eq!(cw.len(), 255);
        assert_eq!(&cw[..4], &6u32.to_be_bytes());
        assert_eq!(&cw[4..10], b"secret");
    }

    #[test]
    fn invalid_parameters() {
        assert!(EccConfig::reed_solomon(255, 255).is_err());
        assert!(EccConfig::reed_solomon(256, 200).is_err());
        assert!(EccConfig::reed_solomon(10, 0).is_err());
    }

    #[test]
    fn uncorrectable_block_reported() {
        let cfg = EccConfig::reed_solomon(12, 8).unwrap();
        let mut cw = ecc_encode(&[7u8; 10], &cfg).unwrap();
        assert_eq!(cw.len(), 24);
        for b in &mut cw[12..17] {
            *b ^= 0xa5;
        }
        match ecc_decode(&cw, &cfg) {
            Err(Error::Uncorrectable { block: 1 }) => {}
            other => panic!("expected uncorrectable block 1, got {other:?}"),
        }
    }

    #[test]
    fn trailing_filler_ignored() {
        let cfg = EccConfig::reed_solomon(16, 8).unwrap();
        let mut cw = ecc_encode(b"hi", &cfg).unwrap();
        cw.extend_from_slice(&[0xee; 5]);
        assert_eq!(ecc_decode(&cw, &cfg).unwrap(), b"hi");
    }

    proptest! {
        #[test]
        fn round_trip_with_correctable_errors(
            payload in proptest::collection::vec(any::<u8>(), 1..600),
            flips in proptest::collection::vec((0usize..255, 1u8..=255), 0..=16),
        ) {
            let cfg = EccConfig::reed_solomon(255, 223).unwrap();
            let mut cw = ecc_encode(&payload, &cfg).unwrap();
            prop_assert_eq!(cw.len(), cfg.encoded_len(payload.len()));
            // Up to 16 distinct positions corrupted in every codeword.
            let mut positions: Vec<_> = flips.clone();
            positions.sort_by_key(|p| p.0);
            positions.dedup_by_key(|p| p.0);
            for block in cw.chunks_mut(255) {
                for &(pos, mask) in &positions {
                    block[pos] ^= mask;
                }
            }
            prop_assert_eq!(ecc_decode(&cw, &cfg).unwrap(), payload);
        }
    }
}
