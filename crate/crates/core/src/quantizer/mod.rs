//! Stochastic uniform quantization with `s` levels.
//!
//! A vector `w` is sent as its Euclidean norm, one sign bit per coordinate
//! and one level index `l_i ∈ [0, s]` per coordinate; the receiver
//! reconstructs `norm · sign_i · l_i / s`. Levels are drawn by randomized
//! rounding of `|w_i| / ‖w‖ · s` so the reconstruction is unbiased.

mod wire;

pub use wire::{decode, encode, encoded_bit_len, HEADER_BITS, MAGIC, VERSION};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// One quantized vector, as produced by [`quantize`] or [`decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedUpdate<T> {
    norm: T,
    negative: Vec<bool>,
    levels: Vec<u32>,
    s: u32,
}

impl<T: Scalar> QuantizedUpdate<T> {
    /// Assembles an update from raw parts, checking the invariants.
    ///
    /// `norm` is rounded to `f32` precision, the width it has on the wire.
    pub fn from_parts(norm: T, negative: Vec<bool>, levels: Vec<u32>, s: u32) -> Result<Self> {
        if s == 0 {
            return Err(Error::param("level count s must be at least 1"));
        }
        if levels.is_empty() || levels.len() != negative.len() {
            return Err(Error::input(format!(
                "sign plane has {} entries, level plane has {}",
                negative.len(),
                levels.len()
            )));
        }
        if u32::try_from(levels.len()).is_err() {
            return Err(Error::input("dimension does not fit in 32 bits"));
        }
        if !norm.is_finite() || norm < T::zero() {
            return Err(Error::input(format!("norm must be finite and nonnegative, got {norm}")));
        }
        if let Some(l) = levels.iter().find(|&&l| l > s) {
            return Err(Error::input(format!("level {l} exceeds s = {s}")));
        }
        let norm = round_to_wire(norm);
        if norm.is_zero() && levels.iter().any(|&l| l != 0) {
            return Err(Error::input("zero norm with nonzero levels"));
        }
        Ok(Self {
            norm,
            negative,
            levels,
            s,
        })
    }

    /// The zero update of dimension `d`.
    pub fn zero(d: usize, s: u32) -> Result<Self> {
        Self::from_parts(T::zero(), vec![false; d], vec![0; d], s)
    }

    pub fn norm(&self) -> T {
        self.norm
    }

    pub fn levels(&self) -> &[u32] {
        &self.levels
    }

    /// Sign of each coordinate as `+1` / `-1`.
    pub fn signs(&self) -> impl Iterator<Item = i8> + '_ {
        self.negative.iter().map(|&n| if n { -1 } else { 1 })
    }

    pub(crate) fn negative(&self) -> &[bool] {
        &self.negative
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    pub fn dim(&self) -> usize {
        self.levels.len()
    }

    pub fn bit_cost(&self) -> BitCost {
        bits_per_update(self.dim(), self.s)
    }
}

/// Bits one client uploads for one quantized update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitCost {
    pub total_bits: u64,
    /// Width of one level index, `⌈log2(s + 1)⌉`.
    pub element_bits: u32,
    pub sign_bits: u64,
    pub norm_bits: u32,
}

pub const NORM_BITS: u32 = 32;

/// `⌈log2(s + 1)⌉`, the bit width of a level index in `[0, s]`.
pub fn level_width(s: u32) -> u32 {
    u32::BITS - s.leading_zeros()
}

/// Uplink cost `d⌈log2(s+1)⌉ + d + 32` of one update.
pub fn bits_per_update(d: usize, s: u32) -> BitCost {
    let element_bits = level_width(s);
    let d = d as u64;
    BitCost {
        total_bits: d * u64::from(element_bits) + d + u64::from(NORM_BITS),
        element_bits,
        sign_bits: d,
        norm_bits: NORM_BITS,
    }
}

fn round_to_wire<T: Scalar>(x: T) -> T {
    T::of(f64::from(x.as_f64() as f32))
}

/// Euclidean norm, scaled so large coordinates do not overflow the square.
fn euclidean_norm<T: Scalar>(w: &[T]) -> T {
    let scale = w.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale.is_zero() {
        return T::zero();
    }
    let sum = w.iter().fold(T::zero(), |acc, &x| {
        let r = x / scale;
        acc + r * r
    });
    scale * sum.sqrt()
}

/// Lower level index and probability of rounding up for one coordinate.
///
/// A ratio of exactly 1 maps to `(s - 1, 1.0)` so the level is `s` with
/// certainty.
///
/// Values within a few ulps of an integer are snapped to it, so coordinates
/// that sit on a level quantize deterministically despite rounding in the
/// norm and the division.
fn split_level(ratio: f64, s: u32) -> (u32, f64) {
    let mut scaled = ratio.clamp(0.0, 1.0) * f64::from(s);
    let nearest = scaled.round();
    if (scaled - nearest).abs() <= 4.0 * f64::EPSILON * nearest.max(1.0) {
        scaled = nearest;
    }
    let lower = (scaled.floor() as u32).min(s - 1);
    (lower, scaled - f64::from(lower))
}

/// True when the norm of `w` is representable in the 32-bit wire field.
pub fn fits_wire<T: Scalar>(w: &[T]) -> bool {
    round_to_wire(euclidean_norm(w)).is_finite()
}

/// Quantizes `w` onto `s` uniform levels.
///
/// Exactly one uniform draw is consumed per coordinate (none for the zero
/// vector), independent of `s`.
pub fn quantize<T: Scalar, R: Rng + ?Sized>(
    w: &[T],
    s: u32,
    rng: &mut R,
) -> Result<QuantizedUpdate<T>> {
    if s == 0 {
        return Err(Error::param("level count s must be at least 1"));
    }
    if w.is_empty() {
        return Err(Error::input("cannot quantize an empty vector"));
    }
    if !all_finite(w) {
        return Err(Error::input("vector has a non-finite coordinate"));
    }
    let norm = euclidean_norm(w);
    let wire_norm = round_to_wire(norm);
    if !wire_norm.is_finite() {
        return Err(Error::input(format!("norm {norm} overflows the 32-bit wire field")));
    }
    if wire_norm.is_zero() {
        return QuantizedUpdate::zero(w.len(), s);
    }
    let norm = norm.as_f64();
    let mut negative = Vec::with_capacity(w.len());
    let mut levels = Vec::with_capacity(w.len());
    for &x in w {
        let (lower, p_up) = split_level(x.abs().as_f64() / norm, s);
        let u: f64 = rng.random();
        levels.push(if u < p_up { lower + 1 } else { lower });
        negative.push(x < T::zero());
    }
    Ok(QuantizedUpdate {
        norm: wire_norm,
        negative,
        levels,
        s,
    })
}

/// Reconstructs `norm · sign_i · l_i / s` for every coordinate.
pub fn dequantize<T: Scalar>(q: &QuantizedUpdate<T>) -> Vec<T> {
    let norm = q.norm.as_f64();
    let s = f64::from(q.s);
    q.levels
        .iter()
        .zip(&q.negative)
        .map(|(&l, &neg)| {
            let mag = norm * f64::from(l) / s;
            T::of(if neg { -mag } else { mag })
        })
        .collect()
}

/// Upper bound `(d / s²) · ‖w‖²` on the quantization variance.
pub fn variance_upper_bound<T: Scalar>(d: usize, s: u32, norm_sq: T) -> T {
    let s = T::of(f64::from(s));
    T::of(d as f64) / (s * s) * norm_sq
}

/// Exact `E‖Q_s(w) − w‖²`: each coordinate is a two-point variable with
/// variance `‖w‖² p (1 − p) / s²`, `p` the fractional part of `|w_i|/‖w‖·s`.
pub fn exact_variance<T: Scalar>(w: &[T], s: u32) -> Result<T> {
    if s == 0 {
        return Err(Error::param("level count s must be at least 1"));
    }
    if !all_finite(w) {
        return Err(Error::input("vector has a non-finite coordinate"));
    }
    let norm = euclidean_norm(w).as_f64();
    if norm == 0.0 {
        return Ok(T::zero());
    }
    let sum: f64 = w
        .iter()
        .map(|x| {
            let (_, p) = split_level(x.abs().as_f64() / norm, s);
            p * (1.0 - p)
        })
        .sum();
    let s = f64::from(s);
    Ok(T::of(norm * norm * sum / (s * s)))
}
