//! S-step: augmented Sinkhorn normalization.
//!
//! The similarity matrix is kernelized, padded with one slack row and one
//! slack column of ones, and alternately row- and column-normalized. Only
//! the real rows and columns are normalized; the slack row and column
//! collect the mass of points without a good partner. The top-left block of
//! the result is a partial doubly stochastic matrix.
//!
//! Kernel entries are `exp((s_ij - max(S) + alpha) / T)`, so a pair competes
//! with the slack entry when its similarity is within `alpha` of the best
//! similarity in the matrix. Each real row is additionally rescaled (slack
//! entry included) before exponentiation to avoid overflow; the first row
//! normalization removes that scale exactly.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SimilarityMatrix;
use crate::matrix::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SinkhornConfig {
    pub temperature: f64,
    /// Inlier offset: how far below the best similarity a pair may be and
    /// still outweigh the slack entry.
    pub alpha: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            alpha: 0.5,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidInput(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::NonFinite("sinkhorn alpha"));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("sinkhorn needs at least one iteration".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput(format!("tolerance must be > 0, got {}", self.tolerance)));
        }
        Ok(())
    }
}

/// Cropped S-step output: entries in [0, 1], row and column sums <= 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMatchMatrix {
    matrix: DenseMatrix,
    /// Row+column passes performed.
    pub iterations: usize,
    /// Max deviation from 1 over the normalized row and column sums after
    /// the last pass.
    pub residual: f64,
}

impl SoftMatchMatrix {
    /// Wraps an externally produced matrix after checking the PDSM bounds.
    pub fn from_matrix(matrix: DenseMatrix) -> Result<Self> {
        const TOL: f64 = 1e-6;
        if !matrix.all_finite() {
            return Err(Error::NonFinite("soft match matrix"));
        }
        if matrix.as_slice().iter().any(|&p| !(-1e-9..=1.0 + 1e-9).contains(&p)) {
            return Err(Error::InvalidInput("soft match entries must lie in [0, 1]".into()));
        }
        if matrix.row_sums().iter().chain(matrix.col_sums().iter()).any(|&s| s > 1.0 + TOL) {
            return Err(Error::InvalidInput("soft match row/column sums must be <= 1".into()));
        }
        Ok(Self {
            matrix,
            iterations: 0,
            residual: 0.0,
        })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

/// Record of a fixed-length forward pass, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct SinkhornTrace {
    pub(crate) config: SinkhornConfig,
    pub(crate) shape: (usize, usize),
    pub(crate) fingerprint: u64,
    pub(crate) iterations: usize,
    pub(crate) argmax: (usize, usize),
}

impl SinkhornTrace {
    pub fn iterations(&self) -> usize {
        self.iterations
    }
}

pub(crate) fn fingerprint(s: &DenseMatrix) -> u64 {
    let mut h = DefaultHasher::new();
    s.shape().hash(&mut h);
    for v in s.as_slice() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Augmented kernel `(N+1) x (M+1)` with per-row overflow shifts applied.
pub(crate) fn augmented_kernel(s: &SimilarityMatrix, cfg: &SinkhornConfig) -> Result<(DenseMatrix, (usize, usize))> {
    if !s.all_finite() {
        return Err(Error::NonFinite("similarity matrix"));
    }
    let (n, m) = s.shape();
    let (ai, aj, s_max) = s.argmax().unwrap_or((0, 0, 0.0));
    let mut k = DenseMatrix::filled(n + 1, m + 1, 1.0);
    for i in 0..n {
        let z: Vec<f64> = s.row(i).iter().map(|&v| (v - s_max + cfg.alpha) / cfg.temperature).collect();
        let shift = z.iter().copied().fold(0.0, f64::max);
        let row = k.row_mut(i);
        for (dst, zi) in row.iter_mut().zip(&z) {
            *dst = (zi - shift).exp();
        }
        row[m] = (-shift).exp();
    }
    Ok((k, (ai, aj)))
}

/// Normalizes the first `n` rows over all columns; returns the sums used.
pub(crate) fn normalize_rows(a: &mut DenseMatrix, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let row = a.row_mut(i);
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            sum
        })
        .collect()
}

/// Normalizes the first `m` columns over all rows; returns the sums used.
pub(crate) fn normalize_cols(a: &mut DenseMatrix, m: usize) -> Vec<f64> {
    let sums: Vec<f64> = a.col_sums()[..m].to_vec();
    for i in 0..a.rows() {
        let row = a.row_mut(i);
        for (v, s) in row[..m].iter_mut().zip(&sums) {
            *v /= s;
        }
    }
    sums
}

fn residual(a: &DenseMatrix, n: usize, m: usize) -> f64 {
    let rows = a.row_sums();
    let cols = a.col_sums();
    rows[..n]
        .iter()
        .chain(cols[..m].iter())
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max)
}

fn run(s: &SimilarityMatrix, cfg: &SinkhornConfig, early_stop: bool) -> Result<(SoftMatchMatrix, (usize, usize))> {
    cfg.validate()?;
    let (n, m) = s.shape();
    let (mut a, argmax) = augmented_kernel(s, cfg)?;
    let mut iterations = 0;
    let mut res = f64::INFINITY;
    while iterations < cfg.max_iterations {
        normalize_rows(&mut a, n);
        normalize_cols(&mut a, m);
        iterations += 1;
        res = residual(&a, n, m);
        if early_stop && res < cfg.tolerance {
            break;
        }
    }
    Ok((
        SoftMatchMatrix {
            matrix: a.crop(n, m),
            iterations,
            residual: res,
        },
        argmax,
    ))
}

/// Runs until the row/column residual drops below the tolerance or the
/// iteration cap is reached.
pub fn augmented_sinkhorn(s: &SimilarityMatrix, cfg: &SinkhornConfig) -> Result<SoftMatchMatrix> {
    Ok(run(s, cfg, true)?.0)
}

/// Runs exactly `cfg.max_iterations` passes and returns the trace needed by
/// [`crate::losses::sinkhorn_backward`].
pub fn augmented_sinkhorn_traced(s: &SimilarityMatrix, cfg: &SinkhornConfig) -> Result<(SoftMatchMatrix, SinkhornTrace)> {
    let (p, argmax) = run(s, cfg, false)?;
    let trace = SinkhornTrace {
        config: *cfg,
        shape: s.shape(),
        fingerprint: fingerprint(s),
        iterations: p.iterations,
        argmax,
    };
    Ok((p, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct implementation: explicit augmented kernel without overflow
    /// shifts, plain alternating normalization.
    fn oracle(s: &[Vec<f64>], t: f64, alpha: f64, passes: usize) -> Vec<Vec<f64>> {
        let n = s.len();
        let m = s[0].len();
        let smax = s.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut a = vec![vec![1.0; m + 1]; n + 1];
        for i in 0..n {
            for j in 0..m {
                a[i][j] = ((s[i][j] - smax + alpha) / t).exp();
            }
        }
        for _ in 0..passes {
            for row in a.iter_mut().take(n) {
                let sum: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= sum);
            }
            for j in 0..m {
                let sum: f64 = (0..=n).map(|i| a[i][j]).sum();
                (0..=n).for_each(|i| a[i][j] /= sum);
            }
        }
        a.truncate(n);
        a.iter_mut().for_each(|r| r.truncate(m));
        a
    }

    fn random_s(rng: &mut impl Rng, n: usize, m: usize) -> DenseMatrix {
        DenseMatrix::from_fn(n, m, |_, _| rng.random_range(-4.0..0.0))
    }

    fn fixed(iters: usize, t: f64, alpha: f64) -> SinkhornConfig {
        SinkhornConfig {
            temperature: t,
            alpha,
            max_iterations: iters,
            tolerance: 1e-300,
        }
    }

    #[test]
    fn one_by_one_single_pass() {
        let s = DenseMatrix::zeros(1, 1);
        let p = augmented_sinkhorn(&s, &fixed(1, 1.0, 0.0)).unwrap();
        let expected = oracle(&[vec![0.0]], 1.0, 0.0, 1)[0][0];
        assert!((expected - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.matrix()[(0, 0)] - expected).abs() < 1e-15);
        assert_eq!(p.iterations, 1);
    }

    #[test]
    fn constant_square_is_symmetric() {
        let s = DenseMatrix::filled(4, 4, -1.3);
        let p = augmented_sinkhorn(&s, &SinkhornConfig::default()).unwrap();
        let first = p.matrix()[(0, 0)];
        for v in p.matrix().as_slice() {
            assert!((v - first).abs() < 1e-15);
        }
        let o = oracle(&vec![vec![-1.3; 4]; 4], 0.05, 0.5, p.iterations);
        assert!((o[0][0] - first).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let (n, m) = (rng.random_range(1..7), rng.random_range(1..7));
            let s = random_s(&mut rng, n, m);
            let rows: Vec<Vec<f64>> = (0..n).map(|i| s.row(i).to_vec()).collect();
            let cfg = fixed(rng.random_range(1..30), rng.random_range(0.2..2.0), rng.random_range(0.0..1.0));
            let p = augmented_sinkhorn(&s, &cfg).unwrap();
            let o = oracle(&rows, cfg.temperature, cfg.alpha, cfg.max_iterations);
            for i in 0..n {
                for j in 0..m {
                    assert!((p.matrix()[(i, j)] - o[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn planted_diagonal_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DenseMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { rng.random_range(-4.0..-0.5) });
        let cfg = SinkhornConfig {
            tolerance: 1e-10,
            max_iterations: 10_000,
            ..Default::default()
        };
        let p = augmented_sinkhorn(&s, &cfg).unwrap();
        assert!(p.residual < 1e-10);
        let rows: Vec<Vec<f64>> = (0..4).map(|i| s.row(i).to_vec()).collect();
        let o = oracle(&rows, 0.05, 0.5, p.iterations);
        for i in 0..4 {
            assert!(p.matrix()[(i, i)] > 0.9);
            assert!((p.matrix()[(i, i)] - o[i][i]).abs() < 1e-12);
        }
        for s in p.matrix().row_sums().iter().chain(p.matrix().col_sums().iter()) {
            assert!(*s <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn survives_extreme_temperatures() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_s(&mut rng, 6, 5);
        let cfg = SinkhornConfig {
            temperature: 1e-6,
            alpha: 3.0,
            ..Default::default()
        };
        let p = augmented_sinkhorn(&s, &cfg).unwrap();
        assert!(p.matrix().all_finite());
        let mut bad = s.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(augmented_sinkhorn(&bad, &cfg), Err(Error::NonFinite(_))));
        assert!(augmented_sinkhorn(&s, &SinkhornConfig { temperature: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn lowering_a_row_moves_mass_to_slack() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = SinkhornConfig {
            temperature: 0.3,
            tolerance: 1e-12,
            max_iterations: 5000,
            ..Default::default()
        };
        for _ in 0..200 {
            let (n, m) = (rng.random_range(2..7), rng.random_range(2..7));
            let s = random_s(&mut rng, n, m);
            let i = rng.random_range(0..n);
            let delta = rng.random_range(0.01..2.0);
            let mut lowered = s.clone();
            lowered.row_mut(i).iter_mut().for_each(|v| *v -= delta);
            let before: f64 = augmented_sinkhorn(&s, &cfg).unwrap().matrix().row(i).iter().sum();
            let after: f64 = augmented_sinkhorn(&lowered, &cfg).unwrap().matrix().row(i).iter().sum();
            assert!(after <= before + 1e-9, "row sum rose from {before} to {after}");
        }
    }

    proptest! {
        #[test]
        fn output_is_pdsm(n in 1usize..12, m in 1usize..12, seed in any::<u64>(), t in 0.01f64..2.0, alpha in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = DenseMatrix::from_fn(n, m, |_, _| rng.random_range(-50.0..50.0));
            let p = augmented_sinkhorn(&s, &SinkhornConfig { temperature: t, alpha, ..Default::default() }).unwrap();
            for v in p.matrix().as_slice() {
                prop_assert!((-1e-9..=1.0 + 1e-9).contains(v));
            }
            for s in p.matrix().row_sums().iter().chain(p.matrix().col_sums().iter()) {
                prop_assert!(*s <= 1.0 + 1e-6);
            }
            prop_assert!(SoftMatchMatrix::from_matrix(p.matrix().clone()).is_ok());
        }

        #[test]
        fn shift_invariant_and_deterministic(seed in any::<u64>(), shift in -100.0f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_s(&mut rng, 5, 6);
            let cfg = SinkhornConfig::default();
            let p = augmented_sinkhorn(&s, &cfg).unwrap();
            let q = augmented_sinkhorn(&s.map(|v| v + shift), &cfg).unwrap();
            prop_assert!(p.matrix().max_abs_diff(q.matrix()).unwrap() < 1e-9);
            let again = augmented_sinkhorn(&s, &cfg).unwrap();
            prop_assert_eq!(p.matrix().as_slice(), again.matrix().as_slice());
        }
    }
}
