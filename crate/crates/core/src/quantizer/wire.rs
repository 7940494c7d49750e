//! Byte format of one quantized update.
//!
//! ```text
//! offset  size     field
//! 0       2        magic 0xAD 0x51
//! 2       1        format version (1)
//! 3       4        s, u32 little-endian
//! 7       4        d, u32 little-endian
//! 11      4        norm, IEEE-754 binary32 little-endian
//! 15      d bits   sign plane, bit i set = coordinate i negative
//! ..      d*w bits level plane, w = ⌈log2(s+1)⌉, each index LSB first
//! ..      0..7     zero padding to a byte boundary
//! ```
//!
//! Bits are packed LSB-first within each byte. The body (norm + planes) is
//! exactly `d⌈log2(s+1)⌉ + d + 32` bits.

use super::{bits_per_update, level_width, QuantizedUpdate};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 2] = [0xAD, 0x51];
pub const VERSION: u8 = 1;
/// Magic, version, s and d.
pub const HEADER_BITS: u64 = 88;
const HEADER_BYTES: usize = 11;

/// Bit length of an encoded update before padding.
pub fn encoded_bit_len(d: usize, s: u32) -> u64 {
    HEADER_BITS + bits_per_update(d, s).total_bits
}

struct BitWriter {
    bytes: Vec<u8>,
    bit: u64,
}

impl BitWriter {
    fn with_capacity_bits(bits: u64) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8) as usize),
            bit: 0,
        }
    }

    fn put(&mut self, value: u64, width: u32) {
        for i in 0..width {
            let byte = (self.bit / 8) as usize;
            if byte == self.bytes.len() {
                self.bytes.push(0);
            }
            if (value >> i) & 1 == 1 {
                self.bytes[byte] |= 1 << (self.bit % 8);
            }
            self.bit += 1;
        }
    }

    fn put_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.put(u64::from(b), 8);
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bit: u64,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8], bit: u64) -> Self {
        Self { bytes, bit }
    }

    fn take(&mut self, width: u32) -> u64 {
        let mut value = 0u64;
        for i in 0..width {
            let byte = self.bytes[(self.bit / 8) as usize];
            value |= u64::from((byte >> (self.bit % 8)) & 1) << i;
            self.bit += 1;
        }
        value
    }
}

/// Serializes `q`; the output length is `⌈encoded_bit_len(d, s) / 8⌉` bytes.
pub fn encode<T: Scalar>(q: &QuantizedUpdate<T>) -> Vec<u8> {
    let d = q.dim();
    let s = q.s();
    let width = level_width(s);
    let mut w = BitWriter::with_capacity_bits(encoded_bit_len(d, s));
    w.put_bytes(&MAGIC);
    w.put(u64::from(VERSION), 8);
    w.put_bytes(&s.to_le_bytes());
    w.put_bytes(&(d as u32).to_le_bytes());
    w.put_bytes(&(q.norm().as_f64() as f32).to_le_bytes());
    for &neg in q.negative() {
        w.put(u64::from(neg), 1);
    }
    for &l in q.levels() {
        w.put(u64::from(l), width);
    }
    debug_assert_eq!(w.bit, encoded_bit_len(d, s));
    w.bytes
}

/// Parses an update of expected dimension `d`.
pub fn decode<T: Scalar>(bytes: &[u8], d: usize) -> Result<QuantizedUpdate<T>> {
    if bytes.len() < HEADER_BYTES {
        return Err(Error::decode(format!(
            "{} bytes is shorter than the {HEADER_BYTES}-byte header",
            bytes.len()
        )));
    }
    if bytes[..2] != MAGIC {
        return Err(Error::decode(format!("bad magic {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != VERSION {
        return Err(Error::decode(format!("unsupported format version {}", bytes[2])));
    }
    let s = u32::from_le_bytes(bytes[3..7].try_into().expect("4 bytes"));
    let header_d = u32::from_le_bytes(bytes[7..11].try_into().expect("4 bytes")) as usize;
    if s == 0 {
        return Err(Error::decode("level count s is 0"));
    }
    if header_d != d {
        return Err(Error::decode(format!(
            "dimension mismatch: header says {header_d}, expected {d}"
        )));
    }
    if d == 0 {
        return Err(Error::decode("dimension is 0"));
    }
    let total_bits = encoded_bit_len(d, s);
    let expected_len = total_bits.div_ceil(8) as usize;
    if bytes.len() != expected_len {
        return Err(Error::decode(format!(
            "payload is {} bytes, expected {expected_len} for d = {d}, s = {s}",
            bytes.len()
        )));
    }
    let mut r = BitReader::new(bytes, HEADER_BITS);
    let norm = f32::from_bits(r.take(32) as u32);
    if !norm.is_finite() || norm < 0.0 {
        return Err(Error::decode(format!("invalid norm {norm}")));
    }
    let negative: Vec<bool> = (0..d).map(|_| r.take(1) == 1).collect();
    let width = level_width(s);
    let mut levels = Vec::with_capacity(d);
    for i in 0..d {
        let l = r.take(width) as u32;
        if l > s {
            return Err(Error::decode(format!("coordinate {i}: level {l} exceeds s = {s}")));
        }
        levels.push(l);
    }
    let pad = (8 - total_bits % 8) % 8;
    if pad > 0 && r.take(pad as u32) != 0 {
        return Err(Error::decode("nonzero padding bits"));
    }
    QuantizedUpdate::from_parts(T::of(f64::from(norm)), negative, levels, s)
        .map_err(|e| Error::decode(e.to_string()))
}
