use rand::seq::SliceRandom;

use super::{loss, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// Shuffle, then split into equal contiguous blocks.
    Iid,
    /// Stable sort by label, then split into equal contiguous blocks.
    SortedLabel,
}

/// One client's local data and its weight `p_i = m_i / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard<T> {
    pub id: usize,
    pub data: Dataset<T>,
    pub weight: T,
}

/// Splits `data` across `n` clients. Block sizes differ by at most one, the
/// first `m mod n` blocks getting the extra sample.
pub fn partition<T: Scalar>(
    data: &Dataset<T>,
    n: usize,
    mode: PartitionMode,
    seed: u64,
) -> Result<Vec<ClientShard<T>>> {
    let m = data.len();
    if n == 0 || n > m {
        return Err(Error::param(format!("cannot split {m} samples across {n} clients")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    match mode {
        PartitionMode::Iid => order.shuffle(&mut substream(seed, Purpose::Partition, 0, 0)),
        PartitionMode::SortedLabel => order.sort_by(|&a, &b| {
            data.label(a)
                .partial_cmp(&data.label(b))
                .unwrap_or(std::cmp::Ordering::Equal)
        }),
    }
    let (base, extra) = (m / n, m % n);
    let mut start = 0;
    (0..n)
        .map(|id| {
            let len = base + usize::from(id < extra);
            let block = &order[start..start + len];
            start += len;
            Ok(ClientShard {
                id,
                data: data.select(block)?,
                weight: T::of(len as f64 / m as f64),
            })
        })
        .collect()
}

/// `Σ p_i f_i(w)` over the shards.
pub fn global_loss<T: Scalar>(spec: &ModelSpec, w: &[T], shards: &[ClientShard<T>]) -> Result<T> {
    shards.iter().try_fold(T::zero(), |acc, shard| {
        Ok(acc + shard.weight * loss(spec, w, &shard.data)?)
    })
}
