//! Packed bit vectors used for raw speckle bits, keys, and wire payloads.
//!
//! Bits are stored big-endian: bit 0 of the vector is the most significant
//! bit of byte 0. Unused trailing bits of the last byte are always zero, so
//! the byte form is canonical and safe to compare or hash.

use std::fmt;

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitsError {
    #[error("bit vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid hex string for bit vector")]
    InvalidHex,
    #[error("byte slice too short for {len} bits")]
    ShortBuffer { len: usize },
    #[error("nonzero padding bits beyond declared length {len}")]
    DirtyPadding { len: usize },
}

/// Fixed-length bit vector, packed MSB-first.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVec {
    len: usize,
    bytes: Vec<u8>,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        BitVec {
            len,
            bytes: vec![0u8; len.div_ceil(8)],
        }
    }

    pub fn from_fn(len: usize, mut f: impl FnMut(usize) -> bool) -> Self {
        let mut v = BitVec::zeros(len);
        for i in 0..len {
            v.set(i, f(i));
        }
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self::from_fn(bits.len(), |i| bits[i])
    }

    /// Uniformly random vector drawn from `rng`.
    pub fn random(len: usize, rng: &mut impl Rng) -> Self {
        let mut bytes = vec![0u8; len.div_ceil(8)];
        rng.fill(bytes.as_mut_slice());
        mask_padding(&mut bytes, len);
        BitVec { len, bytes }
    }

    /// Reconstructs a vector of `len` bits from its packed byte form.
    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<Self, BitsError> {
        if bytes.len() != len.div_ceil(8) {
            return Err(BitsError::ShortBuffer { len });
        }
        let mut owned = bytes.to_vec();
        let masked = {
            let mut m = owned.clone();
            mask_padding(&mut m, len);
            m
        };
        if masked != owned {
            return Err(BitsError::DirtyPadding { len });
        }
        mask_padding(&mut owned, len);
        Ok(BitVec { len, bytes: owned })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.bytes[i / 8] >> (7 - (i % 8)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let mask = 1u8 << (7 - (i % 8));
        if value {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Packed big-endian byte form, trailing bits zeroed.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn xor(&self, other: &BitVec) -> Result<BitVec, BitsError> {
        if self.len != other.len {
            return Err(BitsError::LengthMismatch {
                left: self.len,
                right: other.len,
            });
        }
        let bytes = self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| a ^ b)
            .collect();
        Ok(BitVec {
            len: self.len,
            bytes,
        })
    }

    pub fn hamming(&self, other: &BitVec) -> Result<usize, BitsError> {
        Ok(self.xor(other)?.count_ones())
    }

    pub fn complement(&self) -> BitVec {
        let mut bytes: Vec<u8> = self.bytes.iter().map(|b| !b).collect();
        mask_padding(&mut bytes, self.len);
        BitVec {
            len: self.len,
            bytes,
        }
    }

    /// Unsigned value of the `width`-bit window starting at `start`, MSB first.
    pub fn window_value(&self, start: usize, width: usize) -> u32 {
        assert!(width <= 32 && start + width <= self.len);
        let mut v = 0u32;
        for i in 0..width {
            v = v << 1 | u32::from(self.get(start + i));
        }
        v
    }

    pub fn to_hex(&self) -> String {
        crate::hex::encode(&self.bytes)
    }

    pub fn from_hex(len: usize, s: &str) -> Result<Self, BitsError> {
        let bytes = crate::hex::decode(s).map_err(|_| BitsError::InvalidHex)?;
        Self::from_bytes(len, &bytes)
    }
}

fn mask_padding(bytes: &mut [u8], len: usize) {
    let spare = bytes.len() * 8 - len;
    if spare > 0 {
        if let Some(last) = bytes.last_mut() {
            *last &= 0xffu8 << spare;
        }
    }
}

impl fmt::Debug for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVec[{}]({})", self.len, self.to_hex())
    }
}
