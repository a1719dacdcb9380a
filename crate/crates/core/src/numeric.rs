//! Dense linear algebra, activations, loss, optimizer and finite differences.
//!
//! Everything here works on `f64`. Vectors are plain `Vec<f64>` / `&[f64]`;
//! matrices are row-major [`Mat`].

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                context: "Mat::from_vec",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::LengthMismatch {
                    context: "Mat::from_rows",
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `selfᵀ · x`, i.e. the row vector `xᵀ` times this matrix.
    pub fn transpose_apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "transpose_apply",
                expected: format!("vector of length {} for {}x{} matrix", self.rows, self.rows, self.cols),
                got: format!("vector of length {}", x.len()),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += xr * w;
            }
        }
        Ok(out)
    }
}

/// Matrix-vector product `w · x` with no bias term.
pub fn linear_apply(w: &Mat, x: &[f64]) -> Result<Vec<f64>> {
    if w.cols != x.len() {
        return Err(Error::DimensionMismatch {
            context: "linear_apply",
            expected: format!("vector of length {} for {}x{} matrix", w.cols, w.rows, w.cols),
            got: format!("vector of length {}", x.len()),
        });
    }
    Ok((0..w.rows).map(|r| dot(w.row(r), x)).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(z: &[f64]) -> Vec<f64> {
    z.iter().copied().map(sigmoid).collect()
}

/// Softmax of `z / tau`, computed after subtracting the maximum logit.
pub fn softmax_tau(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Shannon entropy in nats; zero-probability entries contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Cross-entropy of a two-class logit pair against `label`, with the
/// gradient with respect to the logits.
pub fn cross_entropy_logits(logits: [f64; 2], label: usize) -> (f64, [f64; 2]) {
    debug_assert!(label < 2);
    let max = logits[0].max(logits[1]);
    let shifted = [logits[0] - max, logits[1] - max];
    let log_total = (shifted[0].exp() + shifted[1].exp()).ln();
    let log_p = [shifted[0] - log_total, shifted[1] - log_total];
    let p = [log_p[0].exp(), log_p[1].exp()];
    let mut grad = p;
    grad[label] -= 1.0;
    (-log_p[label], grad)
}

/// Two-class softmax probabilities.
pub fn softmax2(logits: [f64; 2]) -> [f64; 2] {
    let p1 = sigmoid(logits[1] - logits[0]);
    [1.0 - p1, p1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected Adam step, in place on `params`.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        for (context, len) in [("adam params", params.len()), ("adam grads", grads.len())] {
            if len != self.m.len() {
                return Err(Error::LengthMismatch {
                    context,
                    expected: self.m.len(),
                    got: len,
                });
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// splitmix64 generator. The algorithm is fixed so streams agree across
/// platforms and language ports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform in `[-bound, bound)`, computed as `(2u - 1) · bound`.
    pub fn symmetric(&mut self, bound: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * bound
    }

    /// Uniform integer in `[0, n)`; `n` must be nonzero.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Derives an independent generator for a named sub-stream.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

/// Uniform Xavier/Glorot initialization in `±sqrt(6 / (rows + cols))`.
pub fn xavier_init(rng: &mut Rng, rows: usize, cols: usize) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.symmetric(bound))
        .collect();
    Mat { rows, cols, data }
}

/// Central-difference gradient of `f` at `params`.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    (0..params.len())
        .map(|k| finite_diff_coord(&mut f, &mut probe, k, h))
        .collect()
}

/// Central difference along coordinate `k`; `probe` is restored on return.
pub fn finite_diff_coord<F>(f: &mut F, probe: &mut [f64], k: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = probe[k];
    probe[k] = orig + h;
    let plus = f(probe);
    probe[k] = orig - h;
    let minus = f(probe);
    probe[k] = orig;
    (plus - minus) / (2.0 * h)
}

/// `|a - b| / max(1, |a|, |b|)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numeric::Rng;

    #[test]
    fn linear_apply_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(linear_apply(&Mat::identity(3), &x).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(linear_apply(&Mat::zeros(2, 3), &x).unwrap(), vec![0.0, 0.0]);
        let w = Mat::from_rows(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_eq!(linear_apply(&w, &[2.0, 3.0]).unwrap(), vec![5.0, -1.0]);
    }

    #[test]
    fn linear_apply_reports_both_shapes() {
        let err = linear_apply(&Mat::zeros(2, 3), &[1.0, 2.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("length 2"), "{msg}");
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_vec(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert!((sigmoid_vec(&[3f64.ln()])[0] - 0.75).abs() < 1e-15);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }

    #[test]
    fn softmax_examples() {
        for tau in [0.01, 1.0, 100.0] {
            for p in softmax_tau(&[0.7, 0.7, 0.7], tau).unwrap() {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let p = softmax_tau(&[1.0, 2.0], 1.0).unwrap();
        assert!((p[0] - 0.26894).abs() < 1e-5 && (p[1] - 0.73106).abs() < 1e-5);
        for p in softmax_tau(&[0.3, 0.9, -0.4], 1e6).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_nonpositive_tau() {
        assert!(matches!(softmax_tau(&[1.0], 0.0), Err(Error::InvalidTemperature(_))));
        assert!(softmax_tau(&[1.0], -1.0).is_err());
        assert!(softmax_tau(&[1.0], f64::NAN).is_err());
    }

    #[test]
    fn softmax_low_temperature_does_not_overflow() {
        let p = softmax_tau(&[900.0, 1000.0], 0.01).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let (loss, _) = cross_entropy_logits([0.0, 0.0], 0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let (loss, _) = cross_entropy_logits([20.0, -20.0], 0);
        assert!(loss < 1e-8);
        let (_, grad) = cross_entropy_logits([0.0, 0.0], 1);
        assert_eq!(grad, [0.5, -0.5]);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let logits = [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
            for label in 0..2 {
                let (_, grad) = cross_entropy_logits(logits, label);
                let numeric = finite_diff_grad(
                    |p| cross_entropy_logits([p[0], p[1]], label).0,
                    &logits,
                    1e-5,
                );
                for (a, n) in grad.iter().zip(&numeric) {
                    assert!(relative_error(*a, *n) < 1e-6, "{a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn adam_first_step() {
        let mut state = AdamState::new(1, AdamConfig::default());
        let mut theta = [0.0];
        state.update(&mut theta, &[1.0]).unwrap();
        assert_eq!(state.step(), 1);
        assert!((theta[0] + 0.001).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_is_noop_and_symmetric() {
        let mut state = AdamState::new(3, AdamConfig::default());
        let mut theta = [0.5, -2.0, 3.0];
        for _ in 0..10 {
            state.update(&mut theta, &[0.0; 3]).unwrap();
        }
        assert_eq!(theta, [0.5, -2.0, 3.0]);

        let mut state = AdamState::new(2, AdamConfig::default());
        let mut theta = [1.0, 1.0];
        for g in [0.3, -1.2, 4.0] {
            state.update(&mut theta, &[g, g]).unwrap();
        }
        assert_eq!(theta[0], theta[1]);
    }

    #[test]
    fn adam_length_mismatch() {
        let mut state = AdamState::new(2, AdamConfig::default());
        assert!(state.update(&mut [0.0; 3], &[0.0; 3]).is_err());
        assert!(state.update(&mut [0.0; 2], &[0.0; 1]).is_err());
    }

    #[test]
    fn splitmix_reference_stream() {
        // Reference values from an independent implementation of splitmix64.
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 16294208416658607535);
        assert_eq!(rng.next_u64(), 7960286522194355700);
        assert_eq!(rng.next_u64(), 487617019471545679);
        let mut rng = Rng::new(42);
        assert_eq!(rng.next_u64(), 13679457532755275413);
    }

    #[test]
    fn xavier_examples() {
        let a = xavier_init(&mut Rng::new(5), 4, 7);
        let b = xavier_init(&mut Rng::new(5), 4, 7);
        assert_eq!(a, b);
        let m = xavier_init(&mut Rng::new(1), 3, 3);
        assert!(m.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        let big = xavier_init(&mut Rng::new(2), 100, 100);
        let mean = big.as_slice().iter().sum::<f64>() / 1e4;
        assert!(mean.abs() < 0.05, "{mean}");
    }

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(|p| p[0] * p[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = finite_diff_grad(|_| 4.2, &[1.0, 2.0, 3.0], 1e-5);
        assert_eq!(g, vec![0.0; 3]);
        let g = finite_diff_grad(|p| p[0].sin(), &[0.0], 1e-5);
        assert!((g[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut items: Vec<usize> = (0..50).collect();
        Rng::new(9).shuffle(&mut items);
        let mut sorted = items.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(items, sorted);
    }

    fn logits_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0f64..50.0, 1..8)
    }

    proptest! {
        #[test]
        fn softmax_is_probability_vector(z in logits_strategy(), log_tau in -3.0f64..6.0) {
            let p = softmax_tau(&z, 10f64.powf(log_tau)).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(z in logits_strategy(), c in -50.0f64..50.0, tau in 0.1f64..10.0) {
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            let a = softmax_tau(&z, tau).unwrap();
            let b = softmax_tau(&shifted, tau).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_temperature_limits(z in prop::collection::vec(-1.0f64..1.0, 2..6)) {
            let n = z.len() as f64;
            for p in softmax_tau(&z, 1e6).unwrap() {
                prop_assert!((p - 1.0 / n).abs() < 1e-6);
            }
            let mut sorted = z.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted[0] - sorted[1] >= 0.1 {
                let arg = z.iter().position(|&v| v == sorted[0]).unwrap();
                prop_assert!(softmax_tau(&z, 0.01).unwrap()[arg] > 0.99);
            }
        }

        #[test]
        fn sigmoid_complement(z in prop::collection::vec(-40.0f64..40.0, 1..8)) {
            let neg: Vec<f64> = z.iter().map(|v| -v).collect();
            for (a, b) in sigmoid_vec(&z).iter().zip(sigmoid_vec(&neg)) {
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }
    }
}
