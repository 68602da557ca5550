//! Exact simulation of the Ornstein-Uhlenbeck process. One step advances
//! X <- e^{hB} X + xi with xi ~ N(0, Q_h), which is the exact transition
//! law, so the terminal distribution is N(e^{TB} x0, Q_T) with no
//! discretization bias regardless of the step size.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{OuError, Result};
use crate::gaussian::worker_rng;
use crate::kernel::{SemigroupValue, TestFunction};
use crate::model::{OUModel, TimeSlice};

/// Initial condition of a path ensemble.
#[derive(Debug, Clone)]
pub enum Start {
    /// Every path starts at the same point.
    Point(DVector<f64>),
    /// Each path draws its start from the invariant measure gamma_inf.
    Invariant,
}

/// Path ensemble specification. The horizon must be an integer number of
/// steps; each path derives its RNG from (seed, path index), so results do
/// not depend on how paths are distributed over workers.
#[derive(Debug, Clone)]
pub struct PathSpec {
    pub start: Start,
    pub horizon: f64,
    pub step: f64,
    pub path_count: usize,
    pub seed: u64,
}

impl PathSpec {
    pub fn from_point(x0: DVector<f64>, horizon: f64, step: f64, path_count: usize, seed: u64) -> Self {
        PathSpec {
            start: Start::Point(x0),
            horizon,
            step,
            path_count,
            seed,
        }
    }

    /// Number of steps k with horizon = k * step, validating the spec.
    pub fn step_count(&self) -> Result<usize> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(OuError::ConfigParse(format!(
                "step size must lie in (0, 1] (got {})",
                self.step
            )));
        }
        if self.path_count == 0 {
            return Err(OuError::ConfigParse("path_count must be >= 1".into()));
        }
        let k = (self.horizon / self.step).round();
        if k < 1.0 || (k * self.step - self.horizon).abs() > 1e-9 * self.horizon.max(1.0) {
            return Err(OuError::ConfigParse(format!(
                "horizon {} is not a positive integer multiple of step {}",
                self.horizon, self.step
            )));
        }
        Ok(k as usize)
    }
}

/// Streaming mean/covariance accumulator (Welford update) with a numerically
/// stable pairwise merge, so per-worker partials combine exactly.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: usize,
    mean: DVector<f64>,
    comoment: DMatrix<f64>,
}

impl MomentAccumulator {
    pub fn new(dim: usize) -> Self {
        MomentAccumulator {
            count: 0,
            mean: DVector::zeros(dim),
            comoment: DMatrix::zeros(dim, dim),
        }
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.comoment += &delta2 * delta.transpose();
    }

    pub fn merge(mut self, other: MomentAccumulator) -> MomentAccumulator {
        if other.count == 0 {
            return self;
        }
        if self.count == 0 {
            return other;
        }
        let (n1, n2) = (self.count as f64, other.count as f64);
        let delta = &other.mean - &self.mean;
        self.comoment += &other.comoment + (&delta * delta.transpose()) * (n1 * n2 / (n1 + n2));
        self.mean += delta * (n2 / (n1 + n2));
        self.count += other.count;
        self
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unbiased sample covariance; symmetrized against roundoff.
    pub fn covariance(&self) -> DMatrix<f64> {
        assert!(self.count >= 2, "covariance needs at least two samples");
        let c = &self.comoment / (self.count - 1) as f64;
        (&c + c.transpose()) * 0.5
    }

    /// Standard error of the (i, j) covariance entry under approximate
    /// normality: sqrt((c_ii c_jj + c_ij^2) / count).
    pub fn covariance_std_error(&self, i: usize, j: usize) -> f64 {
        let c = self.covariance();
        ((c[(i, i)] * c[(j, j)] + c[(i, j)] * c[(i, j)]) / self.count as f64).sqrt()
    }

    /// Standard error of the i-th mean coordinate.
    pub fn mean_std_error(&self, i: usize) -> f64 {
        (self.covariance()[(i, i)] / self.count as f64).sqrt()
    }
}

/// Worker count for path-parallel loops: OULAB_WORKERS if set, else the
/// available hardware parallelism (capped at 8).
pub fn worker_count() -> usize {
    std::env::var("OULAB_WORKERS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&w| w >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
                .min(8)
        })
}

fn terminal_state(
    model: &OUModel,
    spec: &PathSpec,
    slice: &TimeSlice,
    steps: usize,
    path: usize,
) -> DVector<f64> {
    let mut rng = worker_rng(spec.seed, path as u64);
    let mut x = match &spec.start {
        Start::Point(x0) => x0.clone(),
        Start::Invariant => model.invariant_measure().sample_one(&mut rng),
    };
    let n = model.n;
    for _ in 0..steps {
        let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        x = &slice.exp_tb * x + &slice.chol_q_t * z;
    }
    x
}

/// Terminal samples of the ensemble, one per path.
pub fn simulate_terminal(model: &OUModel, spec: &PathSpec) -> Result<Vec<DVector<f64>>> {
    let steps = spec.step_count()?;
    let slice = model.slice(spec.step)?;
    Ok((0..spec.path_count)
        .map(|p| terminal_state(model, spec, &slice, steps, p))
        .collect())
}

/// Full paths (for dumps): per path, the list of (time, state) after every
/// step, including the start at t = 0.
pub fn simulate_paths(model: &OUModel, spec: &PathSpec) -> Result<Vec<Vec<(f64, DVector<f64>)>>> {
    let steps = spec.step_count()?;
    let slice = model.slice(spec.step)?;
    let n = model.n;
    Ok((0..spec.path_count)
        .map(|p| {
            let mut rng = worker_rng(spec.seed, p as u64);
            let mut x = match &spec.start {
                Start::Point(x0) => x0.clone(),
                Start::Invariant => model.invariant_measure().sample_one(&mut rng),
            };
            let mut path = Vec::with_capacity(steps + 1);
            path.push((0.0, x.clone()));
            for k in 1..=steps {
                let z =
                    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
                x = &slice.exp_tb * x + &slice.chol_q_t * z;
                path.push((k as f64 * spec.step, x.clone()));
            }
            path
        })
        .collect())
}

/// Streaming terminal-law moments, parallel over paths with per-path seeds;
/// the result is independent of the worker count.
pub fn simulate_moments(model: &OUModel, spec: &PathSpec) -> Result<MomentAccumulator> {
    let steps = spec.step_count()?;
    let slice = model.slice(spec.step)?;
    let workers = worker_count().min(spec.path_count.max(1));
    let acc = std::thread::scope(|scope| {
        let slice = &slice;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut acc = MomentAccumulator::new(model.n);
                    let mut p = w;
                    while p < spec.path_count {
                        acc.push(&terminal_state(model, spec, slice, steps, p));
                        p += workers;
                    }
                    acc
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation worker panicked"))
            .fold(MomentAccumulator::new(model.n), MomentAccumulator::merge)
    });
    Ok(acc)
}

/// H_t f(x) as the empirical mean of f over exact terminal draws, with the
/// Monte Carlo standard error.
pub fn empirical_semigroup(
    model: &OUModel,
    f: &TestFunction,
    x: &DVector<f64>,
    t: f64,
    path_count: usize,
    seed: u64,
) -> Result<SemigroupValue> {
    if !(t > 0.0) {
        return Err(OuError::TimeNonpositive(t));
    }
    let slice = model.slice(t)?;
    let n = model.n;
    let workers = worker_count().min(path_count.max(1));
    let (sum, sum_sq) = std::thread::scope(|scope| {
        let slice = &slice;
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut sum = 0.0;
                    let mut sum_sq = 0.0;
                    let mut p = w;
                    while p < path_count {
                        let mut rng = worker_rng(seed, p as u64);
                        let z = DVector::from_iterator(
                            n,
                            (0..n).map(|_| StandardNormal.sample(&mut rng)),
                        );
                        let terminal = &slice.exp_tb * x + &slice.chol_q_t * z;
                        let v = f.eval_with(model, &terminal);
                        sum += v;
                        sum_sq += v * v;
                        p += workers;
                    }
                    (sum, sum_sq)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation worker panicked"))
            .fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q))
    });
    let count = path_count as f64;
    let value = sum / count;
    let variance = (sum_sq / count - value * value).max(0.0);
    Ok(SemigroupValue {
        value,
        std_error: Some((variance / count).sqrt()),
        quadrature_order: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{apply_semigroup, Route};

    fn jordan_model() -> OUModel {
        OUModel::build(
            DMatrix::identity(2, 2),
            DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]),
        )
        .unwrap()
    }

    fn symmetric_model() -> OUModel {
        OUModel::build(DMatrix::identity(2, 2), -DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn spec_validation_rejects_bad_grids() {
        let x0 = DVector::zeros(2);
        let bad_multiple = PathSpec::from_point(x0.clone(), 1.0, 0.3, 10, 1);
        assert!(matches!(
            bad_multiple.step_count(),
            Err(OuError::ConfigParse(_))
        ));
        let bad_step = PathSpec::from_point(x0.clone(), 3.0, 1.5, 10, 1);
        assert!(matches!(bad_step.step_count(), Err(OuError::ConfigParse(_))));
        let no_paths = PathSpec::from_point(x0, 1.0, 0.5, 0, 1);
        assert!(matches!(no_paths.step_count(), Err(OuError::ConfigParse(_))));
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let data: Vec<DVector<f64>> = (0..100)
            .map(|i| {
                let s = i as f64 * 0.13;
                DVector::from_row_slice(&[s.sin(), (2.0 * s).cos() + 0.1 * s])
            })
            .collect();
        let mut whole = MomentAccumulator::new(2);
        for x in &data {
            whole.push(x);
        }
        let mut left = MomentAccumulator::new(2);
        let mut right = MomentAccumulator::new(2);
        for (i, x) in data.iter().enumerate() {
            if i < 37 {
                left.push(x);
            } else {
                right.push(x);
            }
        }
        let merged = left.merge(right);
        assert_eq!(merged.count(), whole.count());
        assert!((merged.mean() - whole.mean()).norm() <= 1e-12);
        assert!((merged.covariance() - whole.covariance()).norm() <= 1e-12);
    }

    #[test]
    fn moments_do_not_depend_on_worker_count() {
        let m = jordan_model();
        let spec = PathSpec::from_point(DVector::from_row_slice(&[1.0, -0.5]), 1.0, 0.5, 500, 42);
        let a = simulate_moments(&m, &spec).unwrap();
        std::env::set_var("OULAB_WORKERS", "1");
        let b = simulate_moments(&m, &spec).unwrap();
        std::env::remove_var("OULAB_WORKERS");
        assert_eq!(a.count(), b.count());
        assert!((a.mean() - b.mean()).norm() <= 1e-12);
        assert!((a.covariance() - b.covariance()).norm() <= 1e-12);
    }

    #[test]
    fn stationary_covariance_is_half_identity() {
        // Q = I, B = -I: Q_inf = I/2, approached from x0 = 0 by T = 6
        let m = symmetric_model();
        let spec = PathSpec::from_point(DVector::zeros(2), 6.0, 0.5, 100_000, 7);
        let acc = simulate_moments(&m, &spec).unwrap();
        let cov = acc.covariance();
        for i in 0..2 {
            for j in 0..2 {
                let exact = if i == j { 0.5 } else { 0.0 };
                let band = 4.0 * acc.covariance_std_error(i, j);
                assert!(
                    (cov[(i, j)] - exact).abs() <= band,
                    "cov[{i}{j}] = {} vs {exact} (band {band})",
                    cov[(i, j)]
                );
            }
        }
    }

    #[test]
    fn empirical_mean_matches_the_drift_flow() {
        let m = jordan_model();
        let x0 = DVector::from_row_slice(&[1.5, -0.7]);
        let spec = PathSpec::from_point(x0.clone(), 1.0, 1.0, 1_000_000, 11);
        let acc = simulate_moments(&m, &spec).unwrap();
        let exact = m.slice(1.0).unwrap().exp_tb.clone() * x0;
        for i in 0..2 {
            let band = 4.0 * acc.mean_std_error(i);
            assert!(
                (acc.mean()[i] - exact[i]).abs() <= band,
                "mean[{i}] = {} vs {} (band {band})",
                acc.mean()[i],
                exact[i]
            );
        }
    }

    #[test]
    fn one_step_matches_the_direct_transition_draw() {
        // T = h: the simulator is a single draw from N(e^{hB} x0, Q_h)
        let m = jordan_model();
        let x0 = DVector::from_row_slice(&[0.8, 0.4]);
        let spec = PathSpec::from_point(x0.clone(), 0.7, 0.7, 50_000, 23);
        let acc = simulate_moments(&m, &spec).unwrap();
        let s = m.slice(0.7).unwrap();
        let mean = &s.exp_tb * &x0;
        let cov = acc.covariance();
        for i in 0..2 {
            assert!((acc.mean()[i] - mean[i]).abs() <= 4.0 * acc.mean_std_error(i));
            for j in 0..2 {
                assert!(
                    (cov[(i, j)] - s.q_t[(i, j)]).abs() <= 4.0 * acc.covariance_std_error(i, j),
                    "cov[{i}{j}]"
                );
            }
        }
    }

    #[test]
    fn terminal_law_is_independent_of_step_size() {
        // exact transition stepping has no discretization bias
        let m = jordan_model();
        let x0 = DVector::from_row_slice(&[1.0, -1.0]);
        let accs: Vec<MomentAccumulator> = [1.0, 0.1, 0.01]
            .iter()
            .enumerate()
            .map(|(k, &h)| {
                let spec = PathSpec::from_point(x0.clone(), 1.0, h, 50_000, 100 + k as u64);
                simulate_moments(&m, &spec).unwrap()
            })
            .collect();
        for a in 0..accs.len() {
            for b in a + 1..accs.len() {
                let (ca, cb) = (accs[a].covariance(), accs[b].covariance());
                for i in 0..2 {
                    for j in 0..2 {
                        let band = 4.0
                            * (accs[a].covariance_std_error(i, j)
                                + accs[b].covariance_std_error(i, j));
                        assert!(
                            (ca[(i, j)] - cb[(i, j)]).abs() <= band,
                            "steps {a} vs {b}, cov[{i}{j}]"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn invariant_start_stays_invariant() {
        let m = jordan_model();
        let spec = PathSpec {
            start: Start::Invariant,
            horizon: 0.6,
            step: 0.2,
            path_count: 100_000,
            seed: 31,
        };
        let acc = simulate_moments(&m, &spec).unwrap();
        let cov = acc.covariance();
        for i in 0..2 {
            assert!((acc.mean()[i]).abs() <= 4.0 * acc.mean_std_error(i));
            for j in 0..2 {
                assert!(
                    (cov[(i, j)] - m.q_inf[(i, j)]).abs()
                        <= 4.0 * acc.covariance_std_error(i, j),
                    "cov[{i}{j}] = {} vs {}",
                    cov[(i, j)],
                    m.q_inf[(i, j)]
                );
            }
        }
    }

    #[test]
    fn constant_function_gives_one_exactly() {
        let m = jordan_model();
        let f = TestFunction::constant_one(2);
        let x = DVector::from_row_slice(&[0.3, -0.9]);
        let v = empirical_semigroup(&m, &f, &x, 0.5, 2_000, 3).unwrap();
        assert_eq!(v.value, 1.0);
        assert_eq!(v.std_error, Some(0.0));
    }

    #[test]
    fn linear_function_recovers_the_flow() {
        let m = jordan_model();
        let dir = DVector::from_row_slice(&[0.6, -0.8]);
        let f = TestFunction::polynomial(dir.clone(), vec![0.0, 1.0]);
        let x = DVector::from_row_slice(&[1.2, 0.5]);
        let t = 0.8;
        let v = empirical_semigroup(&m, &f, &x, t, 400_000, 5).unwrap();
        let exact = dir.dot(&(m.slice(t).unwrap().exp_tb.clone() * &x));
        let band = 4.0 * v.std_error.unwrap();
        assert!((v.value - exact).abs() <= band, "{} vs {exact}", v.value);
    }

    #[test]
    fn empirical_semigroup_matches_quadrature() {
        let m = jordan_model();
        let f = TestFunction::gaussian_bump(DVector::from_row_slice(&[0.4, -0.3]), 0.7);
        let x = DVector::from_row_slice(&[0.5, -0.3]);
        let t = 0.8;
        let emp = empirical_semigroup(&m, &f, &x, t, 400_000, 9).unwrap();
        let quad = apply_semigroup(&m, t, &f, &x, Route::KolmogorovQuadrature).unwrap();
        let band = 4.0 * emp.std_error.unwrap();
        assert!(
            (emp.value - quad.value).abs() <= band,
            "{} vs {} (band {band})",
            emp.value,
            quad.value
        );
    }

    #[test]
    fn path_dump_has_the_expected_shape() {
        let m = jordan_model();
        let spec = PathSpec::from_point(DVector::from_row_slice(&[1.0, 0.0]), 1.0, 0.25, 3, 17);
        let paths = simulate_paths(&m, &spec).unwrap();
        assert_eq!(paths.len(), 3);
        for path in &paths {
            assert_eq!(path.len(), 5);
            assert_eq!(path[0].1, DVector::from_row_slice(&[1.0, 0.0]));
            assert!((path[4].0 - 1.0).abs() <= 1e-12);
        }
        // terminal states agree with the terminal-only simulator
        let terminal = simulate_terminal(&m, &spec).unwrap();
        for (path, term) in paths.iter().zip(&terminal) {
            assert_eq!(&path[4].1, term);
        }
    }
}
