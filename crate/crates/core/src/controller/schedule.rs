use log::warn;

use crate::error::{Error, Result};
use crate::quantizer::level_width;
use crate::scalar::Scalar;

/// Default starting level count.
pub const DEFAULT_S0: u32 = 2;
/// Default level cap: 16-bit level indices.
pub const DEFAULT_S_MAX: u32 = (1 << 16) - 1;

/// `⌈log2(s + 1)⌉` bits per level index, sign bit excluded.
pub fn bits_for_level(s: u32) -> u32 {
    level_width(s)
}

/// How the level count is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    Fixed { s: u32 },
    Adaptive { s0: u32, interval_bits: u64, s_max: u32 },
}

impl QuantMode {
    /// Fixed `b`-bit level indices, i.e. `s = 2^b − 1`.
    pub fn fixed_bits(b: u32) -> Result<Self> {
        if !(1..=32).contains(&b) {
            return Err(Error::param(format!("element width must be 1..=32 bits, got {b}")));
        }
        Ok(QuantMode::Fixed {
            s: ((1u64 << b) - 1) as u32,
        })
    }

    /// Adaptive schedule with the default `s0`, `s_max` and an interval of
    /// `16·d` bits.
    pub fn adaptive_default(d: usize) -> Self {
        QuantMode::Adaptive {
            s0: DEFAULT_S0,
            interval_bits: 16 * d as u64,
            s_max: DEFAULT_S_MAX,
        }
    }
}

/// Loss-driven level schedule.
///
/// Training is split into intervals of `interval_bits` uplink bits per
/// client. At the first round of each new interval the level count is reset
/// to `s0 · (η_k / η_0) · sqrt(f(w_0) / f(w_k))`, rounded to the nearest
/// integer and clamped to `[1, s_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantSchedule<T> {
    s0: u32,
    interval_bits: u64,
    f_init: T,
    eta0: T,
    s_max: u32,
    interval: u64,
    current: u32,
}

impl<T: Scalar> QuantSchedule<T> {
    pub fn new(s0: u32, interval_bits: u64, f_init: T, eta0: T, s_max: u32) -> Result<Self> {
        if s0 == 0 || s_max == 0 || s0 > s_max {
            return Err(Error::param(format!("need 1 ≤ s0 ≤ s_max, got s0 = {s0}, s_max = {s_max}")));
        }
        if interval_bits == 0 {
            return Err(Error::param("interval length must be at least one bit"));
        }
        if !(f_init.is_finite() && f_init >= T::zero()) {
            return Err(Error::param(format!("baseline loss must be finite and ≥ 0, got {f_init}")));
        }
        if !(eta0.is_finite() && eta0 > T::zero()) {
            return Err(Error::param(format!("baseline learning rate must be positive, got {eta0}")));
        }
        Ok(Self {
            s0,
            interval_bits,
            f_init,
            eta0,
            s_max,
            interval: 0,
            current: s0,
        })
    }

    pub fn s0(&self) -> u32 {
        self.s0
    }

    pub fn s_max(&self) -> u32 {
        self.s_max
    }

    pub fn f_init(&self) -> T {
        self.f_init
    }

    pub fn eta0(&self) -> T {
        self.eta0
    }

    pub fn interval_bits(&self) -> u64 {
        self.interval_bits
    }

    /// Index of the interval the last tick fell in.
    pub fn interval(&self) -> u64 {
        self.interval
    }

    /// Level count in effect.
    pub fn current(&self) -> u32 {
        self.current
    }

    /// Level count for the next round, given the bits sent so far and the
    /// current loss and learning rate. Recomputes only when
    /// `⌊cumulative_bits / interval_bits⌋` has moved past the stored index.
    pub fn tick(&mut self, cumulative_bits: u64, loss: T, eta: T) -> u32 {
        let idx = cumulative_bits / self.interval_bits;
        if idx > self.interval {
            self.interval = idx;
            self.current = adaquant_level(loss, eta, self);
        }
        self.current
    }
}

/// `s0 · (η_k / η_0) · sqrt(f(w_0) / f(w_k))`, rounded and clamped.
///
/// A nonpositive (or NaN) loss means the assumed optimum `f* = 0` has been
/// reached; the cap `s_max` is returned.
pub fn adaquant_level<T: Scalar>(loss: T, eta: T, sched: &QuantSchedule<T>) -> u32 {
    if loss.is_nan() || loss <= T::zero() {
        warn!("loss {loss} is not above the assumed optimum 0; using s_max = {}", sched.s_max);
        return sched.s_max;
    }
    let ratio = (eta / sched.eta0).as_f64() * (sched.f_init / loss).as_f64().sqrt();
    let raw = ratio * f64::from(sched.s0);
    if raw.is_nan() {
        return sched.s_max;
    }
    raw.round().clamp(1.0, f64::from(sched.s_max)) as u32
}

/// Learning rate per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule<T> {
    Constant(T),
    /// `η_0 · factor^⌊k / period⌋`.
    StepDecay { eta0: T, factor: T, period: u64 },
    /// `η_0 / (k + 1)`.
    InverseTime { eta0: T },
}

impl<T: Scalar> LrSchedule<T> {
    pub fn validate(&self) -> Result<()> {
        let eta0 = self.initial();
        if !(eta0.is_finite() && eta0 > T::zero()) {
            return Err(Error::param(format!("initial learning rate must be positive, got {eta0}")));
        }
        if let LrSchedule::StepDecay { factor, period, .. } = *self {
            if !(factor > T::zero() && factor <= T::one()) || period == 0 {
                return Err(Error::param(format!(
                    "step decay needs factor in (0, 1] and period ≥ 1, got {factor} and {period}"
                )));
            }
        }
        Ok(())
    }

    pub fn initial(&self) -> T {
        match *self {
            LrSchedule::Constant(eta) => eta,
            LrSchedule::StepDecay { eta0, .. } | LrSchedule::InverseTime { eta0 } => eta0,
        }
    }

    pub fn rate(&self, round: u64) -> T {
        match *self {
            LrSchedule::Constant(eta) => eta,
            LrSchedule::StepDecay {
                eta0,
                factor,
                period,
            } => {
                let steps = i32::try_from(round / period).unwrap_or(i32::MAX);
                eta0 * factor.powi(steps)
            }
            LrSchedule::InverseTime { eta0 } => eta0 / T::of(round as f64 + 1.0),
        }
    }
}
