use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Linear least squares, per-sample loss `½(x·w + b − y)²`.
    Quadratic,
    /// Binary logistic regression on labels {0, 1}.
    Logistic,
    /// One ReLU hidden layer and a softmax cross-entropy output.
    Mlp { hidden: usize, classes: usize },
}

/// Model family plus input width.
///
/// Parameters are one flat vector. Linear models store the `input_dim`
/// weights followed by the bias. The MLP stores, in order: the hidden
/// weights (`hidden × input_dim`, row-major), hidden biases, output weights
/// (`classes × hidden`, row-major), output biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::param("input dimension must be positive"));
        }
        if let ModelKind::Mlp { hidden, classes } = kind {
            if hidden == 0 || classes < 2 {
                return Err(Error::param(format!(
                    "mlp needs hidden ≥ 1 and classes ≥ 2, got {hidden} and {classes}"
                )));
            }
        }
        Ok(Self { kind, input_dim })
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        match self.kind {
            ModelKind::Quadratic | ModelKind::Logistic => self.input_dim + 1,
            ModelKind::Mlp { hidden, classes } => {
                hidden * self.input_dim + hidden + classes * hidden + classes
            }
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self.kind, ModelKind::Quadratic)
    }

    fn check(&self, w_len: usize, data: &Dataset<impl Scalar>) -> Result<()> {
        if w_len != self.dim() {
            return Err(Error::input(format!(
                "parameter vector has length {w_len}, model needs {}",
                self.dim()
            )));
        }
        if data.dim() != self.input_dim {
            return Err(Error::input(format!(
                "samples have {} features, model expects {}",
                data.dim(),
                self.input_dim
            )));
        }
        Ok(())
    }
}

fn class_index<T: Scalar>(y: T, classes: usize) -> Result<usize> {
    let c = y.as_f64();
    if c.fract() != 0.0 || c < 0.0 || c >= classes as f64 {
        return Err(Error::input(format!("label {c} is not a class index below {classes}")));
    }
    Ok(c as usize)
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Loss of one sample; when `grad` is given, adds the sample's gradient to it.
fn sample_loss<T: Scalar>(
    spec: &ModelSpec,
    w: &[T],
    x: &[T],
    y: T,
    grad: Option<&mut [T]>,
) -> Result<T> {
    let n_in = spec.input_dim;
    match spec.kind {
        ModelKind::Quadratic => {
            let r = dot(&w[..n_in], x) + w[n_in] - y;
            if let Some(g) = grad {
                for (gi, &xi) in g[..n_in].iter_mut().zip(x) {
                    *gi = *gi + r * xi;
                }
                g[n_in] = g[n_in] + r;
            }
            Ok(T::of(0.5) * r * r)
        }
        ModelKind::Logistic => {
            let y = T::of(class_index(y, 2)? as f64);
            let z = dot(&w[..n_in], x) + w[n_in];
            if let Some(g) = grad {
                let r = sigmoid(z) - y;
                for (gi, &xi) in g[..n_in].iter_mut().zip(x) {
                    *gi = *gi + r * xi;
                }
                g[n_in] = g[n_in] + r;
            }
            Ok(softplus(z) - y * z)
        }
        ModelKind::Mlp { hidden, classes } => {
            let label = class_index(y, classes)?;
            let (w1, rest) = w.split_at(hidden * n_in);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2) = rest.split_at(classes * hidden);
            let h: Vec<T> = (0..hidden)
                .map(|j| (dot(&w1[j * n_in..(j + 1) * n_in], x) + b1[j]).max(T::zero()))
                .collect();
            let logits: Vec<T> = (0..classes)
                .map(|c| dot(&w2[c * hidden..(c + 1) * hidden], &h) + b2[c])
                .collect();
            let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let sum_exp: T = logits.iter().map(|&v| (v - max).exp()).sum();
            let log_z = max + sum_exp.ln();
            if let Some(g) = grad {
                let (g1, rest) = g.split_at_mut(hidden * n_in);
                let (gb1, rest) = rest.split_at_mut(hidden);
                let (g2, gb2) = rest.split_at_mut(classes * hidden);
                let mut dh = vec![T::zero(); hidden];
                for c in 0..classes {
                    let mut delta = (logits[c] - log_z).exp();
                    if c == label {
                        delta = delta - T::one();
                    }
                    gb2[c] = gb2[c] + delta;
                    for j in 0..hidden {
                        g2[c * hidden + j] = g2[c * hidden + j] + delta * h[j];
                        dh[j] = dh[j] + delta * w2[c * hidden + j];
                    }
                }
                for j in 0..hidden {
                    if h[j] > T::zero() {
                        gb1[j] = gb1[j] + dh[j];
                        for (gk, &xk) in g1[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                            *gk = *gk + dh[j] * xk;
                        }
                    }
                }
            }
            Ok(log_z - logits[label])
        }
    }
}

/// Mean per-sample loss over the whole dataset.
pub fn loss<T: Scalar>(spec: &ModelSpec, w: &[T], data: &Dataset<T>) -> Result<T> {
    spec.check(w.len(), data)?;
    let mut total = T::zero();
    for i in 0..data.len() {
        total = total + sample_loss(spec, w, data.features(i), data.label(i), None)?;
    }
    Ok(total / T::of(data.len() as f64))
}

/// Mean loss over the samples at `indices`.
pub fn loss_on<T: Scalar>(
    spec: &ModelSpec,
    w: &[T],
    data: &Dataset<T>,
    indices: &[usize],
) -> Result<T> {
    spec.check(w.len(), data)?;
    if indices.is_empty() {
        return Err(Error::input("minibatch is empty"));
    }
    let mut total = T::zero();
    for &i in indices {
        total = total + sample_loss(spec, w, data.features(i), data.label(i), None)?;
    }
    Ok(total / T::of(indices.len() as f64))
}

/// Gradient of the mean loss over the samples at `indices`.
pub fn batch_gradient<T: Scalar>(
    spec: &ModelSpec,
    w: &[T],
    data: &Dataset<T>,
    indices: &[usize],
) -> Result<Vec<T>> {
    spec.check(w.len(), data)?;
    if indices.is_empty() {
        return Err(Error::input("minibatch is empty"));
    }
    let mut g = vec![T::zero(); w.len()];
    for &i in indices {
        sample_loss(spec, w, data.features(i), data.label(i), Some(&mut g))?;
    }
    let scale = T::one() / T::of(indices.len() as f64);
    g.iter_mut().for_each(|v| *v = *v * scale);
    Ok(g)
}

/// Indices of a minibatch: `batch` distinct samples drawn uniformly, or the
/// whole dataset in order when `batch >= m`.
pub fn sample_batch<R: Rng + ?Sized>(m: usize, batch: usize, rng: &mut R) -> Vec<usize> {
    if batch >= m {
        (0..m).collect()
    } else {
        index::sample(rng, m, batch).into_vec()
    }
}

/// Minibatch gradient; an unbiased estimate of the full-data gradient.
pub fn stochastic_gradient<T: Scalar, R: Rng + ?Sized>(
    spec: &ModelSpec,
    w: &[T],
    data: &Dataset<T>,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<T>> {
    if batch == 0 {
        return Err(Error::param("batch size must be positive"));
    }
    let idx = sample_batch(data.len(), batch, rng);
    batch_gradient(spec, w, data, &idx)
}

fn predict_class<T: Scalar>(spec: &ModelSpec, w: &[T], x: &[T]) -> usize {
    let n_in = spec.input_dim;
    match spec.kind {
        ModelKind::Quadratic => 0,
        ModelKind::Logistic => usize::from(dot(&w[..n_in], x) + w[n_in] > T::zero()),
        ModelKind::Mlp { hidden, classes } => {
            let (w1, rest) = w.split_at(hidden * n_in);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2) = rest.split_at(classes * hidden);
            let h: Vec<T> = (0..hidden)
                .map(|j| (dot(&w1[j * n_in..(j + 1) * n_in], x) + b1[j]).max(T::zero()))
                .collect();
            (0..classes)
                .map(|c| dot(&w2[c * hidden..(c + 1) * hidden], &h) + b2[c])
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (c, v)| if v > best.1 { (c, v) } else { best })
                .0
        }
    }
}

/// Classification accuracy; `None` for regression models.
pub fn accuracy<T: Scalar>(spec: &ModelSpec, w: &[T], data: &Dataset<T>) -> Result<Option<T>> {
    spec.check(w.len(), data)?;
    if !spec.is_classifier() {
        return Ok(None);
    }
    let correct = (0..data.len())
        .filter(|&i| predict_class(spec, w, data.features(i)) as f64 == data.label(i).as_f64())
        .count();
    Ok(Some(T::of(correct as f64 / data.len() as f64)))
}

/// Initial parameters: zeros for linear models, scaled Gaussian weights and
/// zero biases for the MLP.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Vec<T> {
    match spec.kind {
        ModelKind::Quadratic | ModelKind::Logistic => vec![T::zero(); spec.dim()],
        ModelKind::Mlp { hidden, classes } => {
            let n_in = spec.input_dim;
            let mut w = Vec::with_capacity(spec.dim());
            let he = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).expect("valid std");
            w.extend((0..hidden * n_in).map(|_| T::of(he.sample(rng))));
            w.extend(std::iter::repeat_n(T::zero(), hidden));
            let xavier = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("valid std");
            w.extend((0..classes * hidden).map(|_| T::of(xavier.sample(rng))));
            w.extend(std::iter::repeat_n(T::zero(), classes));
            w
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn toy_regression() -> (Dataset<f64>, Vec<f64>) {
        // y = 2 x0 - x1 + 0.5, consistent so the least-squares optimum interpolates
        let rows = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![-2.0, 0.5],
            vec![0.3, -1.0],
        ];
        let labels = rows.iter().map(|r| 2.0 * r[0] - r[1] + 0.5).collect();
        (Dataset::new(rows, labels).unwrap(), vec![2.0, -1.0, 0.5])
    }

    fn random_data(spec: &ModelSpec, m: usize, seed: u64) -> Dataset<f64> {
        let mut r = rng(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..spec.input_dim).map(|_| normal.sample(&mut r)).collect())
            .collect();
        let labels = (0..m)
            .map(|i| match spec.kind {
                ModelKind::Quadratic => normal.sample(&mut r),
                ModelKind::Logistic => (i % 2) as f64,
                ModelKind::Mlp { classes, .. } => (i % classes) as f64,
            })
            .collect();
        Dataset::new(rows, labels).unwrap()
    }

    fn specs() -> Vec<ModelSpec> {
        vec![
            ModelSpec::new(ModelKind::Quadratic, 3).unwrap(),
            ModelSpec::new(ModelKind::Logistic, 4).unwrap(),
            ModelSpec::new(ModelKind::Mlp { hidden: 5, classes: 3 }, 4).unwrap(),
        ]
    }

    #[test]
    fn quadratic_optimum_has_zero_loss_and_gradient() {
        let (data, w) = toy_regression();
        let spec = ModelSpec::new(ModelKind::Quadratic, 2).unwrap();
        assert!(loss(&spec, &w, &data).unwrap() < 1e-30);
        let all: Vec<usize> = (0..data.len()).collect();
        let g = batch_gradient(&spec, &w, &data, &all).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn logistic_at_zero_is_ln2() {
        let data = Dataset::new(
            vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![3.0, 3.0], vec![0.0, -1.0]],
            vec![0.0, 1.0, 1.0, 0.0],
        )
        .unwrap();
        let spec = ModelSpec::new(ModelKind::Logistic, 2).unwrap();
        let l = loss(&spec, &[0.0; 3], &data).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (data, _) = toy_regression();
        let spec = ModelSpec::new(ModelKind::Quadratic, 2).unwrap();
        assert!(matches!(loss(&spec, &[0.0; 2], &data), Err(Error::InvalidInput(_))));
        let wide = ModelSpec::new(ModelKind::Quadratic, 3).unwrap();
        assert!(matches!(loss(&wide, &[0.0; 4], &data), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn bad_labels_are_rejected() {
        let data = Dataset::new(vec![vec![1.0]], vec![2.0]).unwrap();
        let spec = ModelSpec::new(ModelKind::Logistic, 1).unwrap();
        assert!(loss(&spec, &[0.0, 0.0], &data).is_err());
    }

    #[test]
    fn dimensions() {
        assert_eq!(ModelSpec::new(ModelKind::Logistic, 19).unwrap().dim(), 20);
        let mlp = ModelSpec::new(ModelKind::Mlp { hidden: 8, classes: 3 }, 4).unwrap();
        assert_eq!(mlp.dim(), 8 * 4 + 8 + 3 * 8 + 3);
        assert!(ModelSpec::new(ModelKind::Mlp { hidden: 0, classes: 3 }, 4).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        for spec in specs() {
            let data = random_data(&spec, 12, 5);
            let all: Vec<usize> = (0..data.len()).collect();
            for point in 0..10u64 {
                let mut r = rng(100 + point);
                let normal = Normal::new(0.0, 0.7).unwrap();
                let w: Vec<f64> = (0..spec.dim()).map(|_| normal.sample(&mut r)).collect();
                let g = batch_gradient(&spec, &w, &data, &all).unwrap();
                let h = 1e-5;
                for k in 0..w.len() {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[k] += h;
                    wm[k] -= h;
                    let fd = (loss(&spec, &wp, &data).unwrap() - loss(&spec, &wm, &data).unwrap())
                        / (2.0 * h);
                    let rel = (g[k] - fd).abs() / fd.abs().max(g[k].abs()).max(1e-3);
                    assert!(rel < 1e-4, "{:?} coord {k}: analytic {} fd {fd}", spec.kind, g[k]);
                }
            }
        }
    }

    #[test]
    fn singleton_batches_average_to_full_gradient() {
        for spec in specs() {
            let data = random_data(&spec, 9, 8);
            let w: Vec<f64> = (0..spec.dim()).map(|k| 0.1 * (k as f64).sin()).collect();
            let all: Vec<usize> = (0..data.len()).collect();
            let full = batch_gradient(&spec, &w, &data, &all).unwrap();
            let mut mean = vec![0.0; w.len()];
            for i in 0..data.len() {
                let g = batch_gradient(&spec, &w, &data, &[i]).unwrap();
                mean.iter_mut().zip(g).for_each(|(m, v)| *m += v / data.len() as f64);
            }
            for (a, b) in mean.iter().zip(&full) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn full_batch_when_batch_covers_dataset() {
        let (data, _) = toy_regression();
        let spec = ModelSpec::new(ModelKind::Quadratic, 2).unwrap();
        let w = [0.3, 0.1, -0.2];
        let all: Vec<usize> = (0..data.len()).collect();
        let full = batch_gradient(&spec, &w, &data, &all).unwrap();
        assert_eq!(stochastic_gradient(&spec, &w, &data, 100, &mut rng(0)).unwrap(), full);
    }

    #[test]
    fn batches_have_distinct_indices() {
        let mut r = rng(4);
        for _ in 0..100 {
            let mut b = sample_batch(50, 10, &mut r);
            b.sort_unstable();
            b.dedup();
            assert_eq!(b.len(), 10);
            assert!(b.iter().all(|&i| i < 50));
        }
    }

    #[test]
    fn accuracy_of_perfect_separator() {
        let data = Dataset::new(
            vec![vec![1.0], vec![2.0], vec![-1.0], vec![-3.0]],
            vec![1.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        let spec = ModelSpec::new(ModelKind::Logistic, 1).unwrap();
        assert_eq!(accuracy(&spec, &[1.0, 0.0], &data).unwrap(), Some(1.0));
        assert_eq!(accuracy(&spec, &[-1.0, 0.0], &data).unwrap(), Some(0.0));
        let q = ModelSpec::new(ModelKind::Quadratic, 1).unwrap();
        assert_eq!(accuracy(&q, &[1.0, 0.0], &data).unwrap(), None);
    }

    #[test]
    fn mlp_init_is_seeded() {
        let spec = ModelSpec::new(ModelKind::Mlp { hidden: 4, classes: 2 }, 3).unwrap();
        let a: Vec<f64> = init_params(&spec, &mut rng(1));
        let b: Vec<f64> = init_params(&spec, &mut rng(1));
        assert_eq!(a, b);
        assert_eq!(a.len(), spec.dim());
        assert!(a.iter().any(|&v| v != 0.0));
    }
}
