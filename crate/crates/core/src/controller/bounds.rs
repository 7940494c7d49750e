//! Error bounds for quantized local SGD measured against communicated bits.
//!
//! For a fixed level count `s` and bit budget `B` the averaged squared
//! gradient norm is bounded by
//!
//! ```text
//! F(s) = A1·log2(4s) + A2/s² + A3
//! A1 = 2(f(w0) − f*)·d / (η·B·τ)
//! A2 = η·L·d·σ² / n
//! A3 = η²σ²(τ−1)L²(n+1)/n + η·L·σ²/n + A1·(d+32)/d
//! ```
//!
//! valid while `1 − ηL(1 + dτ/(s²n)) − 2η²L²τ(τ−1) ≥ 0`. `F` has a single
//! stationary point on `s > 0`, its global minimum
//! `s* = sqrt(η²Lσ²τB·ln2 / (n(f(w0) − f*)))`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `A1·log2(4s) + A2/s² + A3`.
pub fn bound_from_terms<T: Scalar>(a1: T, a2: T, a3: T, s: T) -> T {
    a1 * (T::of(4.0) * s).log2() + a2 / (s * s) + a3
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants<T> {
    /// Learning rate η.
    pub eta: T,
    /// Smoothness constant L.
    pub smoothness: T,
    /// Stochastic-gradient variance bound σ².
    pub grad_variance: T,
    /// Local steps per round τ.
    pub local_steps: u32,
    /// Client count n.
    pub clients: u32,
    /// Parameter dimension d.
    pub dim: usize,
    /// Bits communicated per client B.
    pub bits: T,
    /// Loss at initialization f(w0).
    pub f_init: T,
    /// Optimal objective value f*.
    pub f_star: T,
}

impl<T: Scalar> BoundConstants<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta", self.eta),
            ("smoothness", self.smoothness),
            ("grad_variance", self.grad_variance),
            ("bits", self.bits),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > T::zero()) {
                return Err(Error::param(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.local_steps == 0 || self.clients == 0 || self.dim == 0 {
            return Err(Error::param("local_steps, clients and dim must be positive"));
        }
        if !(self.f_star.is_finite() && self.f_star >= T::zero()) {
            return Err(Error::param(format!("f_star must be nonnegative, got {}", self.f_star)));
        }
        if !(self.f_init.is_finite() && self.f_init > self.f_star) {
            return Err(Error::param(format!(
                "f_init ({}) must exceed f_star ({})",
                self.f_init, self.f_star
            )));
        }
        Ok(())
    }

    fn tau(&self) -> T {
        T::of(f64::from(self.local_steps))
    }

    fn n(&self) -> T {
        T::of(f64::from(self.clients))
    }

    fn d(&self) -> T {
        T::of(self.dim as f64)
    }

    pub fn a1(&self) -> T {
        T::of(2.0) * (self.f_init - self.f_star) * self.d() / (self.eta * self.bits * self.tau())
    }

    pub fn a2(&self) -> T {
        self.eta * self.smoothness * self.d() * self.grad_variance / self.n()
    }

    pub fn a3(&self) -> T {
        let (eta, l, var, n) = (self.eta, self.smoothness, self.grad_variance, self.n());
        eta * eta * var * (self.tau() - T::one()) * l * l * (n + T::one()) / n
            + eta * l * var / n
            + self.a1() * (self.d() + T::of(32.0)) / self.d()
    }

    /// `F(s)` at a real `s > 0`.
    pub fn bound_at(&self, s: T) -> T {
        bound_from_terms(self.a1(), self.a2(), self.a3(), s)
    }

    /// `F(s)` for an integer level count.
    pub fn bound_value(&self, s: u32) -> T {
        self.bound_at(T::of(f64::from(s)))
    }

    /// Closed-form minimizer of `F`.
    pub fn optimal_s(&self) -> Result<T> {
        self.validate()?;
        let num = self.eta * self.eta * self.smoothness * self.grad_variance * self.tau() * self.bits
            * T::of(std::f64::consts::LN_2);
        Ok((num / (self.n() * (self.f_init - self.f_star))).sqrt())
    }
}

/// `1 − ηL(1 + dτ/(s²n)) − 2η²L²τ(τ−1)`; nonnegative when the bound applies.
pub fn lr_condition_value<T: Scalar>(eta: T, smoothness: T, d: usize, tau: u32, s: u32, n: u32) -> T {
    let tau = T::of(f64::from(tau));
    let s = T::of(f64::from(s));
    let quant = T::of(d as f64) * tau / (s * s * T::of(f64::from(n)));
    let el = eta * smoothness;
    T::one() - el * (T::one() + quant) - T::of(2.0) * el * el * tau * (tau - T::one())
}

pub fn lr_condition_fixed<T: Scalar>(eta: T, smoothness: T, d: usize, tau: u32, s: u32, n: u32) -> bool {
    lr_condition_value(eta, smoothness, d, tau, s, n) >= T::zero()
}

/// Per-round form of the step-size condition, with that round's `η_k` and `s_k`.
pub fn lr_condition_per_round<T: Scalar>(
    eta_k: T,
    smoothness: T,
    d: usize,
    tau: u32,
    s_k: u32,
    n: u32,
) -> bool {
    lr_condition_fixed(eta_k, smoothness, d, tau, s_k, n)
}

/// First round whose `(η_k, s_k)` violates the per-round condition.
pub fn first_infeasible_round<T: Scalar>(
    etas: &[T],
    levels: &[u32],
    smoothness: T,
    d: usize,
    tau: u32,
    n: u32,
) -> Option<usize> {
    etas.iter()
        .zip(levels)
        .position(|(&eta, &s)| !lr_condition_per_round(eta, smoothness, d, tau, s, n))
}

/// The four terms bounding the η-weighted average squared gradient norm
/// under round-varying `η_k` and `s_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveBoundTerms<T> {
    /// `2(f(w0) − f*) / Ση_k`
    pub initial_gap: T,
    /// `Lτσ²·Ση_k² / (n·Ση_k)`
    pub gradient_noise: T,
    /// `σ²(n+1)τ(τ−1)L²·Ση_k³ / (n·Ση_k)`
    pub local_drift: T,
    /// `Lτσ²·Σ η_k²·d/s_k² / (n·Ση_k)`
    pub quantization: T,
}

impl<T: Scalar> AdaptiveBoundTerms<T> {
    pub fn total(&self) -> T {
        self.initial_gap + self.gradient_noise + self.local_drift + self.quantization
    }
}

/// Evaluates [`AdaptiveBoundTerms`] for per-round learning rates and levels.
/// `c.eta` and `c.bits` are not used.
pub fn adaptive_bound_terms<T: Scalar>(
    etas: &[T],
    levels: &[u32],
    c: &BoundConstants<T>,
) -> Result<AdaptiveBoundTerms<T>> {
    if etas.is_empty() || etas.len() != levels.len() {
        return Err(Error::input(format!(
            "need equal nonempty sequences, got {} rates and {} levels",
            etas.len(),
            levels.len()
        )));
    }
    if levels.contains(&0) {
        return Err(Error::param("level counts must be positive"));
    }
    let d = T::of(c.dim as f64);
    let (mut s1, mut s2, mut s3, mut sq) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (&eta, &s) in etas.iter().zip(levels) {
        let s = T::of(f64::from(s));
        s1 = s1 + eta;
        s2 = s2 + eta * eta;
        s3 = s3 + eta * eta * eta;
        sq = sq + eta * eta * d / (s * s);
    }
    let (l, var, tau, n) = (c.smoothness, c.grad_variance, c.tau(), c.n());
    let denom = n * s1;
    Ok(AdaptiveBoundTerms {
        initial_gap: T::of(2.0) * (c.f_init - c.f_star) / s1,
        gradient_noise: l * tau * var * s2 / denom,
        local_drift: var * (n + T::one()) * tau * (tau - T::one()) * l * l * s3 / denom,
        quantization: l * tau * var * sq / denom,
    })
}
