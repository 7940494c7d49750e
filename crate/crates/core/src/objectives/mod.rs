//! Training objectives, datasets and client partitioning.
//!
//! The global objective is `f(w) = Σ_i p_i f_i(w)` where `f_i` is the mean
//! per-sample loss on client `i`'s shard and `p_i = m_i / Σ_j m_j`.

mod data;
mod model;
mod partition;

pub use data::{generate_eval, generate_synthetic, load_delimited, planted_weights, SyntheticKind};
pub use model::{
    accuracy, batch_gradient, init_params, loss, loss_on, sample_batch, stochastic_gradient,
    ModelKind, ModelSpec,
};
pub use partition::{global_loss, partition, ClientShard, PartitionMode};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Labelled samples with a shared feature dimension.
///
/// Labels are reals; classification labels hold integral class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    labels: Vec<T>,
    dim: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(rows: Vec<Vec<T>>, labels: Vec<T>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::input("dataset needs at least one sample"));
        }
        if rows.len() != labels.len() {
            return Err(Error::input(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows[0].len();
        if let Some(i) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::input(format!(
                "row {i} has {} features, expected {dim}",
                rows[i].len()
            )));
        }
        Ok(Self {
            features: rows.into_iter().flatten().collect(),
            labels,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> T {
        self.labels[i]
    }

    pub fn labels(&self) -> &[T] {
        &self.labels
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::input("selection is empty"));
        }
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Ok(Self {
            features,
            labels,
            dim: self.dim,
        })
    }

    /// Concatenation of several datasets with equal feature dimension.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::input("nothing to concatenate"))?;
        if parts.iter().any(|p| p.dim != first.dim) {
            return Err(Error::input("feature dimensions differ"));
        }
        Ok(Self {
            features: parts.iter().flat_map(|p| p.features.iter().copied()).collect(),
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            dim: first.dim,
        })
    }
}
