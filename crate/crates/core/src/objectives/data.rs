//! Synthetic datasets and a plain-text loader.
//!
//! Text format: one sample per line, fields separated by commas and/or
//! whitespace, features first and the label last. Blank lines and lines
//! starting with `#` are skipped.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    /// `y = w·x + b + noise · N(0, 1)`.
    Regression,
    /// Labels from a planted linear classifier, each flipped to a different
    /// uniformly chosen class with probability `noise`.
    Classification { classes: usize },
}

/// Planted parameters for a given seed.
///
/// Regression: `features` weights followed by a bias. Classification: one
/// weight row of length `features` per class (a single row for two classes),
/// no bias so classes are balanced in expectation.
pub fn planted_weights<T: Scalar>(kind: SyntheticKind, features: usize, seed: u64) -> Vec<T> {
    let mut rng = substream(seed, Purpose::Data, u64::MAX, 0);
    let count = match kind {
        SyntheticKind::Regression => features + 1,
        SyntheticKind::Classification { classes: 2 } => features,
        SyntheticKind::Classification { classes } => classes * features,
    };
    (0..count)
        .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn draw<T: Scalar, R: Rng>(
    kind: SyntheticKind,
    m: usize,
    features: usize,
    noise: f64,
    planted: &[T],
    rng: &mut R,
) -> Result<Dataset<T>> {
    if m == 0 || features == 0 {
        return Err(Error::param("need at least one sample and one feature"));
    }
    if !noise.is_finite() || noise < 0.0 {
        return Err(Error::param(format!("noise must be finite and nonnegative, got {noise}")));
    }
    if let SyntheticKind::Classification { classes } = kind {
        if classes < 2 {
            return Err(Error::param("classification needs at least two classes"));
        }
        if noise > 1.0 {
            return Err(Error::param("label flip probability must be at most 1"));
        }
    }
    let mut rows = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let x: Vec<T> = (0..features)
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let y = match kind {
            SyntheticKind::Regression => {
                let clean = crate::scalar::dot(&planted[..features], &x) + planted[features];
                clean + T::of(noise * rng.sample::<f64, _>(StandardNormal))
            }
            SyntheticKind::Classification { classes } => {
                let scores: Vec<T> = if classes == 2 {
                    let z = crate::scalar::dot(planted, &x);
                    vec![-z, z]
                } else {
                    planted
                        .chunks_exact(features)
                        .map(|row| crate::scalar::dot(row, &x))
                        .collect()
                };
                let mut label = scores
                    .iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |b, (c, &v)| if v > b.1 { (c, v) } else { b })
                    .0;
                if rng.random::<f64>() < noise {
                    let other = rng.random_range(0..classes - 1);
                    label = if other >= label { other + 1 } else { other };
                }
                T::of(label as f64)
            }
        };
        rows.push(x);
        labels.push(y);
    }
    Dataset::new(rows, labels)
}

/// Training samples for `seed`; reproducible.
pub fn generate_synthetic<T: Scalar>(
    kind: SyntheticKind,
    m: usize,
    features: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    let planted = planted_weights(kind, features, seed);
    let mut rng = substream(seed, Purpose::Data, 0, 0);
    draw(kind, m, features, noise, &planted, &mut rng)
}

/// Held-out samples from the same planted model as [`generate_synthetic`].
pub fn generate_eval<T: Scalar>(
    kind: SyntheticKind,
    m: usize,
    features: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    let planted = planted_weights(kind, features, seed);
    let mut rng = substream(seed, Purpose::EvalData, 0, 0);
    draw(kind, m, features, noise, &planted, &mut rng)
}

pub fn load_delimited<T: Scalar>(path: &Path) -> Result<Dataset<T>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>().map_err(|e| {
                    Error::input(format!("{}:{}: bad number {f:?}: {e}", path.display(), lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if fields.len() < 2 {
            return Err(Error::input(format!(
                "{}:{}: need at least one feature and a label",
                path.display(),
                lineno + 1
            )));
        }
        let (x, y) = fields.split_at(fields.len() - 1);
        rows.push(x.iter().map(|&v| T::of(v)).collect());
        labels.push(T::of(y[0]));
    }
    Dataset::new(rows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{loss, ModelKind, ModelSpec};

    #[test]
    fn same_seed_same_data() {
        let kind = SyntheticKind::Classification { classes: 2 };
        let a: Dataset<f64> = generate_synthetic(kind, 50, 4, 0.1, 9).unwrap();
        let b: Dataset<f64> = generate_synthetic(kind, 50, 4, 0.1, 9).unwrap();
        let c: Dataset<f64> = generate_synthetic(kind, 50, 4, 0.1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let e: Dataset<f64> = generate_eval(kind, 50, 4, 0.1, 9).unwrap();
        assert_ne!(a, e);
    }

    #[test]
    fn noiseless_regression_is_interpolated_by_planted_weights() {
        let data: Dataset<f64> = generate_synthetic(SyntheticKind::Regression, 40, 5, 0.0, 3).unwrap();
        let w = planted_weights::<f64>(SyntheticKind::Regression, 5, 3);
        let spec = ModelSpec::new(ModelKind::Quadratic, 5).unwrap();
        assert!(loss(&spec, &w, &data).unwrap() < 1e-28);
    }

    #[test]
    fn binary_labels_are_balanced() {
        // Binomial(100, 0.5) leaves [30, 70] with probability < 1e-4
        for seed in 0..20 {
            let data: Dataset<f64> =
                generate_synthetic(SyntheticKind::Classification { classes: 2 }, 100, 6, 0.0, seed)
                    .unwrap();
            let ones = data.labels().iter().filter(|&&y| y == 1.0).count();
            assert!((30..=70).contains(&ones), "seed {seed}: {ones}");
        }
    }

    #[test]
    fn noise_flips_labels_to_other_classes() {
        let kind = SyntheticKind::Classification { classes: 3 };
        let planted = planted_weights::<f64>(kind, 4, 1);
        let noisy: Dataset<f64> = generate_synthetic(kind, 4000, 4, 0.2, 1).unwrap();
        let flipped = (0..noisy.len())
            .filter(|&i| {
                let x = noisy.features(i);
                let clean = planted
                    .chunks_exact(4)
                    .map(|row| crate::scalar::dot(row, x))
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (c, v)| if v > b.1 { (c, v) } else { b })
                    .0;
                clean as f64 != noisy.label(i)
            })
            .count();
        // Binomial(4000, 0.2): sd ≈ 25
        assert!((700..=900).contains(&flipped), "{flipped}");
        assert!(noisy.labels().iter().all(|&y| y == 0.0 || y == 1.0 || y == 2.0));
    }

    #[test]
    fn loads_text_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        std::fs::write(&path, "# x0, x1, y\n1.0, 2.0, 0\n\n3 4 1\n-1,0.5,1\n").unwrap();
        let data: Dataset<f64> = load_delimited(&path).unwrap();
        assert_eq!(data.len(), 3);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.features(1), &[3.0, 4.0]);
        assert_eq!(data.labels(), &[0.0, 1.0, 1.0]);

        std::fs::write(&path, "1,2,3\n1,2\n").unwrap();
        assert!(load_delimited::<f64>(&path).is_err());
        std::fs::write(&path, "1,x,3\n").unwrap();
        assert!(load_delimited::<f64>(&path).is_err());
        assert!(matches!(
            load_delimited::<f64>(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }
}
