//! Mean-zero Gaussian measures, reproducible sampling, and importance
//! sampling for rare events under the invariant measure.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::linalg;

/// Mean-zero Gaussian with a fixed SPD covariance.
#[derive(Debug, Clone)]
pub struct GaussianMeasure {
    pub covariance: DMatrix<f64>,
    pub covariance_chol: DMatrix<f64>,
    pub precision: DMatrix<f64>,
    pub log_norm_const: f64,
}

impl GaussianMeasure {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        let covariance = linalg::symmetrize(&covariance);
        let chol = linalg::cholesky_lower(&covariance, "gaussian covariance")?;
        let precision = linalg::spd_inverse(&covariance, "gaussian covariance")?;
        let n = covariance.nrows() as f64;
        let log_norm_const = -0.5 * n * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * linalg::log_det_from_chol(&chol);
        Ok(GaussianMeasure {
            covariance,
            covariance_chol: chol,
            precision,
            log_norm_const,
        })
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        self.log_norm_const - 0.5 * (&self.precision * y).dot(y)
    }

    pub fn density(&self, y: &DVector<f64>) -> f64 {
        self.log_density(y).exp()
    }

    /// Draw `count` samples y = chol * z with z standard normal.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, count)
    }

    pub fn sample_with(&self, rng: &mut ChaCha8Rng, count: usize) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..count)
            .map(|_| {
                let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
                &self.covariance_chol * z
            })
            .collect()
    }

    pub fn sample_one(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let n = self.dim();
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
        &self.covariance_chol * z
    }
}

/// Deterministic per-worker RNG derivation from (master seed, worker index).
pub fn worker_rng(seed: u64, worker: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker);
    rng
}

/// Monte Carlo estimate of a probability under a Gaussian measure,
/// with binomial/IS standard error.
#[derive(Debug, Clone)]
pub struct LevelSetEstimate {
    pub alpha: f64,
    pub measure_hat: f64,
    pub std_error: f64,
    pub sample_count: usize,
    pub hits: usize,
    pub seed: u64,
}

/// Importance-sampled estimate of target{event}: draw x from the Gaussian
/// `proposal_mean + proposal.sample()` and reweight by the density ratio.
/// Unbiased for any event since the proposal has full support.
pub fn importance_probability<F: FnMut(&DVector<f64>) -> bool>(
    target: &GaussianMeasure,
    proposal: &GaussianMeasure,
    proposal_mean: &DVector<f64>,
    count: usize,
    seed: u64,
    mut event: F,
) -> LevelSetEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut hits = 0usize;
    for _ in 0..count {
        let x = proposal_mean + proposal.sample_one(&mut rng);
        if event(&x) {
            let centered = &x - proposal_mean;
            let w = (target.log_density(&x) - proposal.log_density(&centered)).exp();
            sum += w;
            sum_sq += w * w;
            hits += 1;
        }
    }
    let n = count as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    LevelSetEstimate {
        alpha: f64::NAN,
        measure_hat: mean,
        std_error: (var / n).sqrt(),
        sample_count: count,
        hits,
        seed,
    }
}

/// Plain Monte Carlo estimate of target{event}.
pub fn direct_probability<F: FnMut(&DVector<f64>) -> bool>(
    target: &GaussianMeasure,
    count: usize,
    seed: u64,
    mut event: F,
) -> LevelSetEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..count {
        let x = target.sample_one(&mut rng);
        if event(&x) {
            hits += 1;
        }
    }
    let n = count as f64;
    let p = hits as f64 / n;
    LevelSetEstimate {
        alpha: f64::NAN,
        measure_hat: p,
        std_error: (p * (1.0 - p) / n).sqrt(),
        sample_count: count,
        hits,
        seed,
    }
}
