//! Quantized local SGD.
//!
//! Each round every client starts from the broadcast model `w_k`, runs `τ`
//! minibatch SGD steps on its shard, quantizes the resulting delta and
//! uploads it in the wire format of [`crate::quantizer`]. The server decodes
//! the uploads and applies `w_{k+1} = w_k + Σ_i p_i · Q(Δw_k^(i))`.
//!
//! Only uplink bits are counted. Every client sends one update per round, so
//! the cumulative count `B` is the same for all clients.

mod training;

pub use training::{
    run_training, LossEstimate, PartialRun, TrainingOutcome, TrainingPlan,
};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objectives::{
    batch_gradient, global_loss, loss_on, sample_batch, ClientShard, ModelSpec,
};
use crate::quantizer::{self, bits_per_update, dequantize, QuantizedUpdate};
use crate::rng::{substream, Purpose};
use crate::scalar::{all_finite, Scalar};

/// Server-side model and bit counter.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState<T> {
    /// Current global model `w_k`.
    pub w: Vec<T>,
    /// Index of the next round to run.
    pub round: u64,
    /// Uplink bits sent so far by each client.
    pub cumulative_bits: u64,
}

impl<T: Scalar> GlobalState<T> {
    pub fn new(w: Vec<T>) -> Self {
        Self {
            w,
            round: 0,
            cumulative_bits: 0,
        }
    }
}

/// Telemetry for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord<T> {
    pub round: u64,
    pub s: u32,
    /// Bits per level index, `⌈log2(s + 1)⌉`.
    pub b: u32,
    pub eta: T,
    pub bits_this_round: u64,
    /// Uplink bits per client including this round.
    pub cumulative_bits: u64,
    /// `f(w_k)`, evaluated before the round's local updates.
    pub train_loss: T,
    pub eval_metric: Option<T>,
    /// Schedule interval index, adaptive mode only.
    pub interval: Option<u64>,
    /// Step-size condition for `(η_k, s_k)`, when a smoothness constant is known.
    pub feasible: Option<bool>,
}

/// Everything a round needs besides the model state.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a, T> {
    pub model: &'a ModelSpec,
    pub shards: &'a [ClientShard<T>],
    pub local_steps: u32,
    pub batch_size: usize,
    pub seed: u64,
}

/// Runs `τ` SGD steps from `w` on one shard and returns the parameter delta.
///
/// On a non-finite gradient or iterate the error carries the shard's id and
/// the failing step; the round index is left 0 for the caller to fill in.
pub fn local_round<T: Scalar, R: Rng + ?Sized>(
    model: &ModelSpec,
    shard: &ClientShard<T>,
    w: &[T],
    local_steps: u32,
    eta: T,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    if local_steps == 0 {
        return Err(Error::param("need at least one local step"));
    }
    if !(eta.is_finite() && eta > T::zero()) {
        return Err(Error::param(format!("learning rate must be positive, got {eta}")));
    }
    if batch_size == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    let diverged = |step: usize, what: &str| Error::Divergence {
        round: 0,
        client: shard.id,
        step,
        what: what.to_string(),
    };
    let mut local = w.to_vec();
    for step in 0..local_steps as usize {
        let idx = sample_batch(shard.data.len(), batch_size, rng);
        let g = batch_gradient(model, &local, &shard.data, &idx)?;
        if !all_finite(&g) {
            return Err(diverged(step, "non-finite gradient"));
        }
        for (x, gi) in local.iter_mut().zip(&g) {
            *x = *x - eta * *gi;
        }
        if !all_finite(&local) {
            return Err(diverged(step, "non-finite parameters"));
        }
    }
    Ok(local.iter().zip(w).map(|(&a, &b)| a - b).collect())
}

/// `w + Σ_i p_i · dequantize(update_i)`, summed in client order.
pub fn aggregate<T: Scalar>(
    w: &[T],
    updates: &[QuantizedUpdate<T>],
    weights: &[T],
) -> Result<Vec<T>> {
    if updates.len() != weights.len() || updates.is_empty() {
        return Err(Error::input(format!(
            "{} updates but {} weights",
            updates.len(),
            weights.len()
        )));
    }
    let s = updates[0].s();
    for u in updates {
        if u.dim() != w.len() {
            return Err(Error::input(format!(
                "update has dimension {}, model has {}",
                u.dim(),
                w.len()
            )));
        }
        if u.s() != s {
            return Err(Error::input(format!("mixed level counts {} and {s}", u.s())));
        }
    }
    let total: f64 = weights.iter().map(|p| p.as_f64()).sum();
    if (total - 1.0).abs() > 1e-9 || weights.iter().any(|p| p.is_nan() || *p < T::zero()) {
        return Err(Error::input(format!("client weights must be nonnegative and sum to 1, got {total}")));
    }
    let mut next = w.to_vec();
    for (u, &p) in updates.iter().zip(weights) {
        for (x, v) in next.iter_mut().zip(dequantize(u)) {
            *x = *x + p * v;
        }
    }
    Ok(next)
}

/// Global training loss `f(w) = Σ p_i f_i(w)` and optional held-out metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation<T> {
    pub train_loss: T,
    pub eval_metric: Option<T>,
}

/// Round-start estimate of `f(w)` as the clients would report it.
pub fn estimate_loss<T: Scalar>(
    ctx: &RoundContext<'_, T>,
    w: &[T],
    round: u64,
    estimate: LossEstimate,
) -> Result<T> {
    let loss = match estimate {
        LossEstimate::Full => global_loss(ctx.model, w, ctx.shards)?,
        LossEstimate::Minibatch(batch) => ctx.shards.iter().try_fold(T::zero(), |acc, shard| {
            let mut rng = substream(ctx.seed, Purpose::LossEstimate, shard.id as u64, round);
            let idx = sample_batch(shard.data.len(), batch.max(1), &mut rng);
            Ok::<T, Error>(acc + shard.weight * loss_on(ctx.model, w, &shard.data, &idx)?)
        })?,
    };
    if !loss.is_finite() {
        return Err(Error::Divergence {
            round,
            client: 0,
            step: 0,
            what: format!("training loss {loss} at round start"),
        });
    }
    Ok(loss)
}

/// Runs one round from `state` with level count `s` and learning rate `eta`.
///
/// Clients work in parallel; each uses its own batch and quantizer streams
/// keyed by `(seed, client id, round)`, and uploads are decoded and reduced
/// in client order, so the result does not depend on scheduling.
pub fn run_round<T: Scalar>(
    state: &GlobalState<T>,
    ctx: &RoundContext<'_, T>,
    s: u32,
    eta: T,
) -> Result<GlobalState<T>> {
    if s == 0 {
        return Err(Error::param("level count s must be at least 1"));
    }
    let round = state.round;
    let w = &state.w;
    let uploads: Vec<Vec<u8>> = ctx
        .shards
        .par_iter()
        .map(|shard| {
            let client = shard.id as u64;
            let mut batch_rng = substream(ctx.seed, Purpose::Batch, client, round);
            let delta = local_round(
                ctx.model,
                shard,
                w,
                ctx.local_steps,
                eta,
                ctx.batch_size,
                &mut batch_rng,
            )
            .map_err(|e| match e {
                Error::Divergence {
                    client, step, what, ..
                } => Error::Divergence {
                    round,
                    client,
                    step,
                    what,
                },
                other => other,
            })?;
            if !quantizer::fits_wire(&delta) {
                return Err(Error::Divergence {
                    round,
                    client: shard.id,
                    step: ctx.local_steps as usize,
                    what: "update norm exceeds the wire format's range".into(),
                });
            }
            let mut quant_rng = substream(ctx.seed, Purpose::Quantize, client, round);
            let q = quantizer::quantize(&delta, s, &mut quant_rng)?;
            Ok(quantizer::encode(&q))
        })
        .collect::<Result<_>>()?;

    let updates: Vec<QuantizedUpdate<T>> = uploads
        .iter()
        .map(|bytes| quantizer::decode(bytes, w.len()))
        .collect::<Result<_>>()?;
    let weights: Vec<T> = ctx.shards.iter().map(|s| s.weight).collect();
    let next = aggregate(w, &updates, &weights)?;
    if !all_finite(&next) {
        return Err(Error::Divergence {
            round,
            client: 0,
            step: ctx.local_steps as usize,
            what: "non-finite aggregated model".into(),
        });
    }
    Ok(GlobalState {
        w: next,
        round: round + 1,
        cumulative_bits: state.cumulative_bits + bits_per_update(w.len(), s).total_bits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{partition, Dataset, ModelKind, PartitionMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn regression() -> (ModelSpec, Dataset<f64>, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 4.0, (i % 3) as f64 - 1.0]).collect();
        let w_star = vec![1.5, -0.5, 0.25];
        let labels = rows.iter().map(|r| 1.5 * r[0] - 0.5 * r[1] + 0.25).collect();
        (
            ModelSpec::new(ModelKind::Quadratic, 2).unwrap(),
            Dataset::new(rows, labels).unwrap(),
            w_star,
        )
    }

    fn single_shard(data: Dataset<f64>) -> ClientShard<f64> {
        ClientShard { id: 0, data, weight: 1.0 }
    }

    #[test]
    fn one_step_delta_is_negative_scaled_gradient() {
        let (spec, data, _) = regression();
        let shard = single_shard(data);
        let w = vec![0.1, 0.2, 0.3];
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let delta = local_round(&spec, &shard, &w, 1, 0.1, 3, &mut a).unwrap();
        let idx = sample_batch(shard.data.len(), 3, &mut b);
        let g = batch_gradient(&spec, &w, &shard.data, &idx).unwrap();
        for (d, gi) in delta.iter().zip(&g) {
            assert!((d + 0.1 * gi).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_gives_zero_delta() {
        let (spec, data, w_star) = regression();
        let shard = single_shard(data);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let delta = local_round(&spec, &shard, &w_star, 5, 0.1, 100, &mut r).unwrap();
        assert!(delta.iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn two_full_batch_steps_unrolled_by_hand() {
        let (spec, data, _) = regression();
        let shard = single_shard(data);
        let all: Vec<usize> = (0..shard.data.len()).collect();
        let w0 = vec![0.0, 0.0, 0.0];
        let eta = 0.05;
        let g0 = batch_gradient(&spec, &w0, &shard.data, &all).unwrap();
        let w1: Vec<f64> = w0.iter().zip(&g0).map(|(w, g)| w - eta * g).collect();
        let g1 = batch_gradient(&spec, &w1, &shard.data, &all).unwrap();
        let w2: Vec<f64> = w1.iter().zip(&g1).map(|(w, g)| w - eta * g).collect();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let delta = local_round(&spec, &shard, &w0, 2, eta, 1000, &mut r).unwrap();
        for (d, expected) in delta.iter().zip(&w2) {
            assert!((d - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let (spec, data, _) = regression();
        let shard = ClientShard { id: 3, data, weight: 1.0 };
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let err = local_round(&spec, &shard, &[1e300, 1e300, 1e300], 3, 1e10, 8, &mut r).unwrap_err();
        match err {
            Error::Divergence { client, step, .. } => {
                assert_eq!(client, 3);
                assert!(step < 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aggregate_cases() {
        let w = vec![1.0, -1.0];
        let zero = QuantizedUpdate::<f64>::zero(2, 4).unwrap();
        assert_eq!(aggregate(&w, &[zero.clone(), zero.clone()], &[0.5, 0.5]).unwrap(), w);

        let u = QuantizedUpdate::from_parts(5.0, vec![false, true], vec![3, 4], 5).unwrap();
        assert_eq!(aggregate(&w, &[u], &[1.0]).unwrap(), vec![4.0, -5.0]);

        let a = QuantizedUpdate::from_parts(2.0, vec![false, false], vec![1, 0], 1).unwrap();
        let b = QuantizedUpdate::from_parts(2.0, vec![false, false], vec![0, 1], 1).unwrap();
        assert_eq!(aggregate(&w, &[a.clone(), b], &[0.5, 0.5]).unwrap(), vec![2.0, 0.0]);

        assert!(aggregate(&w, std::slice::from_ref(&a), &[0.9]).is_err());
        assert!(aggregate(&[0.0; 3], std::slice::from_ref(&a), &[1.0]).is_err());
        assert!(aggregate(&w, &[a.clone(), zero.clone()], &[0.5, 0.5]).is_err());
        assert!(aggregate(&w, &[a], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn bits_accumulate_per_round() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| (0..9).map(|j| ((i * j) % 7) as f64 / 7.0).collect()).collect();
        let labels = (0..40).map(|i| (i % 5) as f64 / 5.0).collect();
        let data = Dataset::new(rows, labels).unwrap();
        let spec = ModelSpec::new(ModelKind::Quadratic, 9).unwrap();
        assert_eq!(spec.dim(), 10);
        let shards = partition(&data, 4, PartitionMode::Iid, 1).unwrap();
        let ctx = RoundContext { model: &spec, shards: &shards, local_steps: 2, batch_size: 4, seed: 9 };
        let s0 = GlobalState::new(vec![0.0; 10]);
        let s1 = run_round(&s0, &ctx, 3, 0.1).unwrap();
        assert_eq!(s1.cumulative_bits, 62);
        assert_eq!(s1.round, 1);
        let s2 = run_round(&s1, &ctx, 15, 0.1).unwrap();
        assert_eq!(s2.cumulative_bits, 62 + 82);
        // identical inputs, identical outputs
        assert_eq!(run_round(&s1, &ctx, 15, 0.1).unwrap(), s2);
    }
}
