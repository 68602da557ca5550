//! The Mehler transition kernel K_t against the invariant measure, a small
//! library of test functions, three independent routes to the semigroup
//! H_t f, and sample-cloud checkers for the kernel sandwich bounds.
//!
//! All kernel arithmetic stays in log space: the R(x) term alone exceeds 700
//! for the level sets the maximal-function experiments probe.

use nalgebra::{DMatrix, DVector};
use once_cell::sync::OnceCell;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{OuError, Result};
use crate::gaussian::GaussianMeasure;
use crate::geometry::{region_classify, sample_ball, Region};
use crate::linalg;
use crate::model::OUModel;
use crate::quad::{gauss_expectation, GaussLegendre};
use crate::report::{assess, assess_ends, BoundReport, Sidedness};

/// Log-space evaluation of K_t(x, u) together with its decomposition.
#[derive(Debug, Clone)]
pub struct KernelEval {
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    /// (1/2) log(det Q_inf / det Q_t)
    pub log_det_ratio: f64,
    /// R(x) = (1/2) <Q_inf^{-1} x, x>
    pub r_x: f64,
    /// -(1/2) <(Q_t^{-1} - Q_inf^{-1})(u - D_t x), u - D_t x>  (always <= 0)
    pub quad_term: f64,
    pub log_value: f64,
}

/// log K_t(x, u) with the three summands exposed.
pub fn mehler_log_kernel(
    model: &OUModel,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<KernelEval> {
    let s = model.slice(t)?;
    let log_det_ratio = 0.5 * (model.log_det_q_inf - s.log_det_q_t);
    let r_x = model.quadratic_form_r(x);
    let d = u - &s.d_t * x;
    let quad_term = -0.5 * (&s.m_t * &d).dot(&d);
    Ok(KernelEval {
        t,
        x: x.clone(),
        u: u.clone(),
        log_det_ratio,
        r_x,
        quad_term,
        log_value: log_det_ratio + r_x + quad_term,
    })
}

/// log of the transition density p_t(x, u) = K_t(x, u) gamma_inf(u):
/// the Gaussian N(e^{tB} x, Q_t) evaluated at u. Used as an independent
/// cross-check of the kernel and as the quadrature envelope.
pub fn transition_log_density(
    model: &OUModel,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    let s = model.slice(t)?;
    let centered = u - &s.exp_tb * x;
    let n = model.n as f64;
    Ok(-0.5 * n * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * s.log_det_q_t
        - 0.5 * (&s.q_t_inv * &centered).dot(&centered))
}

/// The shapes of test function used throughout the experiments.
#[derive(Debug, Clone)]
pub enum TestKind {
    /// exp(-|u - center|^2 / (2 width^2)), peak height 1.
    GaussianBump { center: DVector<f64>, width: f64 },
    /// Characteristic function of the closed ball.
    IndicatorBall { center: DVector<f64>, radius: f64 },
    /// c_0 + c_1 s + ... + c_k s^k with s = <direction, u>, k <= 4.
    Polynomial {
        direction: DVector<f64>,
        coeffs: Vec<f64>,
    },
    /// Gaussian of the given width normalized to unit mass in L1(gamma_inf);
    /// the mass is width-independent by construction.
    DiracApprox { center: DVector<f64>, width: f64 },
}

#[derive(Debug, Clone)]
pub struct TestFunction {
    pub kind: TestKind,
    l1_norm: OnceCell<f64>,
}

impl TestFunction {
    pub fn gaussian_bump(center: DVector<f64>, width: f64) -> Self {
        assert!(width > 0.0);
        TestFunction {
            kind: TestKind::GaussianBump { center, width },
            l1_norm: OnceCell::new(),
        }
    }

    pub fn indicator_ball(center: DVector<f64>, radius: f64) -> Self {
        assert!(radius > 0.0);
        TestFunction {
            kind: TestKind::IndicatorBall { center, radius },
            l1_norm: OnceCell::new(),
        }
    }

    pub fn polynomial(direction: DVector<f64>, coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty() && coeffs.len() <= 5, "degree at most 4");
        TestFunction {
            kind: TestKind::Polynomial { direction, coeffs },
            l1_norm: OnceCell::new(),
        }
    }

    pub fn dirac_approx(center: DVector<f64>, width: f64) -> Self {
        assert!(width > 0.0);
        TestFunction {
            kind: TestKind::DiracApprox { center, width },
            l1_norm: OnceCell::new(),
        }
    }

    pub fn constant_one(n: usize) -> Self {
        Self::polynomial(DVector::zeros(n), vec![1.0])
    }

    /// Pointwise evaluation. The dirac kind carries its model-dependent
    /// normalizer, so it must be evaluated through `eval_with`.
    pub fn eval_with(&self, model: &OUModel, u: &DVector<f64>) -> f64 {
        match &self.kind {
            TestKind::GaussianBump { center, width } => {
                (-(u - center).norm_squared() / (2.0 * width * width)).exp()
            }
            TestKind::IndicatorBall { center, radius } => {
                if (u - center).norm() <= *radius {
                    1.0
                } else {
                    0.0
                }
            }
            TestKind::Polynomial { direction, coeffs } => {
                let s = direction.dot(u);
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * s + c)
            }
            TestKind::DiracApprox { center, width } => {
                let log_phi = -(u - center).norm_squared() / (2.0 * width * width);
                (log_phi - dirac_log_mass(model, center, *width)).exp()
            }
        }
    }

    /// L1 norm against the invariant measure, computed once per instance.
    pub fn l1_gamma_norm(&self, model: &OUModel) -> Result<f64> {
        if let Some(v) = self.l1_norm.get() {
            return Ok(*v);
        }
        let v = match &self.kind {
            TestKind::GaussianBump { center, width } => {
                bump_log_gamma_mass(model, center, *width).exp()
            }
            TestKind::DiracApprox { .. } => 1.0,
            TestKind::Polynomial { .. } => {
                let zero = DVector::zeros(model.n);
                gauss_expectation(&zero, &model.chol_q_inf, 60, |u| {
                    self.eval_with(model, u).abs()
                })
            }
            TestKind::IndicatorBall { center, radius } => {
                let gamma = model.invariant_measure();
                ball_integral(model.n, center, *radius, |u| gamma.density(u))?
            }
        };
        let _ = self.l1_norm.set(v);
        Ok(v)
    }

    fn is_smooth(&self) -> bool {
        !matches!(self.kind, TestKind::IndicatorBall { .. })
    }

    fn gaussian_factor(&self) -> Option<(&DVector<f64>, f64)> {
        match &self.kind {
            TestKind::GaussianBump { center, width }
            | TestKind::DiracApprox { center, width } => Some((center, *width)),
            _ => None,
        }
    }
}

/// log integral of exp(-|u-c|^2/(2w^2)) against gamma_inf: the convolution
/// identity turns it into a single Gaussian density evaluation,
/// (2 pi w^2)^{n/2} N(c; 0, Q_inf + w^2 I).
fn bump_log_gamma_mass(model: &OUModel, center: &DVector<f64>, width: f64) -> f64 {
    let n = model.n as f64;
    let w2 = width * width;
    let widened = &model.q_inf + DMatrix::identity(model.n, model.n) * w2;
    let g = GaussianMeasure::new(widened).expect("Q_inf + w^2 I is SPD");
    0.5 * n * (2.0 * std::f64::consts::PI * w2).ln() + g.log_density(center)
}

/// log of the L1(gamma_inf) mass of the unnormalized dirac bump.
fn dirac_log_mass(model: &OUModel, center: &DVector<f64>, width: f64) -> f64 {
    bump_log_gamma_mass(model, center, width)
}

/// Integrate g over the closed ball (n = 1 or 2) by Gauss-Legendre.
fn ball_integral<F: Fn(&DVector<f64>) -> f64>(
    n: usize,
    center: &DVector<f64>,
    radius: f64,
    g: F,
) -> Result<f64> {
    let rule = GaussLegendre::new(50);
    match n {
        1 => {
            let mut acc = 0.0;
            for (node, weight) in rule.nodes.iter().zip(&rule.weights) {
                let u = DVector::from_row_slice(&[center[0] + radius * node]);
                acc += weight * g(&u);
            }
            Ok(acc * radius)
        }
        2 => {
            let theta_count = 128usize;
            let mut acc = 0.0;
            for k in 0..theta_count {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / theta_count as f64;
                let dir = DVector::from_row_slice(&[theta.cos(), theta.sin()]);
                for (node, weight) in rule.nodes.iter().zip(&rule.weights) {
                    let rho = radius * 0.5 * (node + 1.0);
                    let u = center + &dir * rho;
                    acc += weight * rho * g(&u);
                }
            }
            Ok(acc * radius * 0.5 * 2.0 * std::f64::consts::PI / theta_count as f64)
        }
        _ => Err(OuError::DimensionTooLargeForQuadrature(n)),
    }
}

/// How to evaluate H_t f.
#[derive(Debug, Clone, Copy)]
pub enum Route {
    /// Integrate f(e^{tB}x - y) over y ~ gamma_t (the defining formula).
    KolmogorovQuadrature,
    /// Integrate K_t(x, u) f(u) against gamma_inf.
    KernelGammaQuadrature,
    /// Monte Carlo over gamma_t draws.
    MonteCarlo { count: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct SemigroupValue {
    pub value: f64,
    pub std_error: Option<f64>,
    pub quadrature_order: Option<usize>,
}

/// Orders tried by the adaptive tensor rule.
const GH_ORDERS: [usize; 4] = [40, 80, 160, 320];
const GH_REL_TOL: f64 = 1e-6;
/// Tensor quadrature is capped at this dimension.
pub const MAX_QUAD_DIM: usize = 4;

/// Gaussian proposal for quadrature against the transition law from the
/// point with transition mean `mean`. Narrow Gaussian factors in f defeat a
/// fixed proposal, so the rule is centered on the product of the transition
/// law and that factor; the density ratio is re-evaluated at every node.
pub(crate) fn quadrature_proposal(
    model: &OUModel,
    s: &crate::model::TimeSlice,
    f: &TestFunction,
    mean: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, GaussianMeasure)> {
    match f.gaussian_factor() {
        Some((center, width)) => {
            let w2 = width * width;
            let prec = &s.q_t_inv + DMatrix::identity(model.n, model.n) / w2;
            let sigma = linalg::spd_inverse(&prec, "product covariance")?;
            let mu = &sigma * (&s.q_t_inv * mean + center / w2);
            let measure = GaussianMeasure::new(sigma)?;
            let chol = measure.covariance_chol.clone();
            Ok((mu, chol, measure))
        }
        None => {
            let measure = GaussianMeasure::new(s.q_t.clone())?;
            let chol = measure.covariance_chol.clone();
            Ok((mean.clone(), chol, measure))
        }
    }
}

/// H_t f(x) by the requested route.
pub fn apply_semigroup(
    model: &OUModel,
    t: f64,
    f: &TestFunction,
    x: &DVector<f64>,
    route: Route,
) -> Result<SemigroupValue> {
    if !(t > 0.0) {
        return Err(OuError::TimeNonpositive(t));
    }
    let s = model.slice(t)?;
    let mean = &s.exp_tb * x;

    match route {
        Route::MonteCarlo { count, seed } => {
            let gamma_t = GaussianMeasure::new(s.q_t.clone())?;
            let mut rng = crate::gaussian::worker_rng(seed, 0);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..count {
                let y = gamma_t.sample_one(&mut rng);
                let v = f.eval_with(model, &(&mean - &y));
                sum += v;
                sum_sq += v * v;
            }
            let n = count as f64;
            let avg = sum / n;
            let var = (sum_sq / n - avg * avg).max(0.0);
            Ok(SemigroupValue {
                value: avg,
                std_error: Some((var / n).sqrt()),
                quadrature_order: None,
            })
        }
        Route::KolmogorovQuadrature | Route::KernelGammaQuadrature => {
            if model.n > MAX_QUAD_DIM {
                return Err(OuError::DimensionTooLargeForQuadrature(model.n));
            }
            if !f.is_smooth() {
                return indicator_quadrature(model, t, f, x, route);
            }
            let (prop_mean, prop_chol, prop_measure) = quadrature_proposal(model, &s, f, &mean)?;
            let gamma_inf = model.invariant_measure();

            let mut integrand = |u: &DVector<f64>| -> f64 {
                let log_prop = prop_measure.log_density(&(u - &prop_mean));
                let log_env = match route {
                    Route::KolmogorovQuadrature => {
                        transition_log_density(model, t, x, u).expect("slice exists")
                    }
                    _ => {
                        let ke = mehler_log_kernel(model, t, x, u).expect("slice exists");
                        ke.log_value + gamma_inf.log_density(u)
                    }
                };
                f.eval_with(model, u) * (log_env - log_prop).exp()
            };

            let mut prev = f64::NAN;
            let mut last_change = f64::NAN;
            for &order in &GH_ORDERS {
                let estimate = gauss_expectation(&prop_mean, &prop_chol, order, &mut integrand);
                if prev.is_finite() {
                    last_change = (estimate - prev).abs() / (estimate.abs() + 1e-12);
                    if last_change <= GH_REL_TOL {
                        return Ok(SemigroupValue {
                            value: estimate,
                            std_error: None,
                            quadrature_order: Some(order),
                        });
                    }
                }
                prev = estimate;
            }
            Err(OuError::QuadratureNotConverged {
                order: *GH_ORDERS.last().unwrap(),
                change: last_change,
            })
        }
    }
}

/// Indicator test functions: integrate the route's density over the ball.
fn indicator_quadrature(
    model: &OUModel,
    t: f64,
    f: &TestFunction,
    x: &DVector<f64>,
    route: Route,
) -> Result<SemigroupValue> {
    let (center, radius) = match &f.kind {
        TestKind::IndicatorBall { center, radius } => (center, *radius),
        _ => unreachable!("only indicators take this path"),
    };
    let gamma_inf = model.invariant_measure();
    let value = ball_integral(model.n, center, radius, |u| match route {
        Route::KolmogorovQuadrature => transition_log_density(model, t, x, u)
            .expect("slice exists")
            .exp(),
        _ => {
            let ke = mehler_log_kernel(model, t, x, u).expect("slice exists");
            (ke.log_value + gamma_inf.log_density(u)).exp()
        }
    })?;
    Ok(SemigroupValue {
        value,
        std_error: None,
        quadrature_order: Some(50),
    })
}

/// Per-t evaluator of log H_t f for Gaussian-shaped f, closed form:
/// H_t f(x) = (2 pi w^2)^{n/2} N(c; e^{tB}x, Q_t + w^2 I) (times the dirac
/// normalizer when applicable). One cheap density evaluation per x.
#[derive(Debug, Clone)]
pub struct SmoothSemigroupSlice {
    pub t: f64,
    exp_tb: DMatrix<f64>,
    center: DVector<f64>,
    widened: GaussianMeasure,
    log_prefactor: f64,
}

impl SmoothSemigroupSlice {
    pub fn log_value(&self, x: &DVector<f64>) -> f64 {
        let diff = &self.center - &self.exp_tb * x;
        self.log_prefactor + self.widened.log_density(&diff)
    }
}

/// Build the closed-form evaluator; `None` for kinds without one.
pub fn smooth_semigroup_slice(
    model: &OUModel,
    f: &TestFunction,
    t: f64,
) -> Result<Option<SmoothSemigroupSlice>> {
    let (center, width) = match f.gaussian_factor() {
        Some((c, w)) => (c.clone(), w),
        None => return Ok(None),
    };
    let s = model.slice(t)?;
    let n = model.n as f64;
    let w2 = width * width;
    let widened = GaussianMeasure::new(&s.q_t + DMatrix::identity(model.n, model.n) * w2)?;
    let mut log_prefactor = 0.5 * n * (2.0 * std::f64::consts::PI * w2).ln();
    if matches!(f.kind, TestKind::DiracApprox { .. }) {
        log_prefactor -= dirac_log_mass(model, &center, width);
    }
    Ok(Some(SmoothSemigroupSlice {
        t,
        exp_tb: s.exp_tb.clone(),
        center,
        widened,
        log_prefactor,
    }))
}

/// Sample cloud specification shared by the bound checkers: x from the
/// invariant measure mixed 50/50 with a uniform ball, u displaced from
/// D_t x at scale sqrt(t) x {0.1, 1, 10}, t log-uniform.
#[derive(Debug, Clone)]
pub struct SampleSpec {
    pub count: usize,
    pub seed: u64,
    pub t_min: f64,
    pub t_max: f64,
}

impl SampleSpec {
    pub fn small_t(count: usize, seed: u64) -> Self {
        SampleSpec { count, seed, t_min: 1e-3, t_max: 1.0 }
    }

    pub fn large_t(count: usize, seed: u64) -> Self {
        SampleSpec { count, seed, t_min: 1.0, t_max: 20.0 }
    }
}

fn draw_sample(
    model: &OUModel,
    rng: &mut ChaCha8Rng,
    spec: &SampleSpec,
    index: usize,
) -> Result<(f64, DVector<f64>, DVector<f64>)> {
    let gamma = model.invariant_measure();
    let t = rng.gen_range(spec.t_min.ln()..=spec.t_max.ln()).exp();
    let x = if rng.gen_bool(0.5) {
        gamma.sample_one(rng)
    } else {
        sample_ball(rng, model.n, 8.0)
    };
    let scale = [0.1, 1.0, 10.0][index % 3];
    let xi = DVector::<f64>::from_iterator(model.n, (0..model.n).map(|_| StandardNormal.sample(rng)));
    let u = model.d_s(t)? * &x + xi * (t.sqrt() * scale);
    Ok((t, x, u))
}

/// Collapse (coordinate, value) samples to the minimum value over each of
/// `bins` log-spaced coordinate bins, reported at the bin midpoint.
fn bin_minima(samples: &[(f64, f64)], bins: usize) -> Vec<(f64, f64)> {
    let finite: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|(c, v)| c.is_finite() && c > &0.0 && v.is_finite())
        .collect();
    if finite.is_empty() {
        return Vec::new();
    }
    let lo = finite.iter().map(|p| p.0.ln()).fold(f64::INFINITY, f64::min);
    let hi = finite
        .iter()
        .map(|p| p.0.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / bins as f64).max(1e-12);
    let mut best: Vec<Option<f64>> = vec![None; bins];
    for (c, v) in finite {
        let idx = (((c.ln() - lo) / width) as usize).min(bins - 1);
        best[idx] = Some(best[idx].map_or(v, |b: f64| b.min(v)));
    }
    best.iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|v| ((lo + (i as f64 + 0.5) * width).exp(), v)))
        .collect()
}

/// Small-time sandwich: on 0 < t <= 1 the kernel satisfies
/// c1 e^{R(x)} t^{-n/2} e^{-C|u-D_t x|^2/t} <= K_t <= C1 e^{R(x)} t^{-n/2}
/// e^{-c|u-D_t x|^2/t}, which splits into a two-sided quadratic-form ratio
/// and a bounded additive offset. Also checks the local-region inequality
/// |u - D_t x|^2/t >= |u - x|^2/t - C.
pub fn check_kernel_bounds_small_t(model: &OUModel, spec: &SampleSpec) -> Result<Vec<BoundReport>> {
    let mut rng = crate::gaussian::worker_rng(spec.seed, 2);
    let grid = format!("{} samples, t in [{:.0e}, {}]", spec.count, spec.t_min, spec.t_max);
    let mut quad_ratio = Vec::new();
    let mut offset = Vec::new();
    let mut local_gap = Vec::new();

    for i in 0..spec.count {
        let (t, x, u) = draw_sample(model, &mut rng, spec, i)?;
        let ke = mehler_log_kernel(model, t, &x, &u)?;
        let d = &u - model.d_s(t)? * &x;
        let dn2 = d.norm_squared();
        if dn2 > 1e-18 {
            quad_ratio.push((t, -ke.quad_term * t / dn2));
        }
        offset.push((t, ke.log_det_ratio + 0.5 * model.n as f64 * t.ln()));
        if region_classify(&x, &u) == Region::Local {
            local_gap.push((t, ((&u - &x).norm_squared() - dn2) / t));
        }
    }

    Ok(vec![
        // t = 1 is the attained edge of the small-time regime
        assess_ends(
            "litet quad ratio t<M_t d,d>/(2|d|^2)",
            &grid,
            &quad_ratio,
            Sidedness::TwoSided,
            true,
            false,
        ),
        assess(
            "litet additive offset logdet + (n/2)log t",
            &grid,
            &offset,
            Sidedness::AdditiveUpper,
        ),
        assess(
            "final-aim-stima-loc (|u-x|^2 - |u-D_t x|^2)/t on L",
            &grid,
            &local_gap,
            Sidedness::AdditiveUpper,
        ),
    ])
}

/// Large-time sandwich: for t >= 1,
/// e^{R(x)} e^{-C|D_{-t}u - x|^2} <= K_t <= e^{R(x)} e^{-c|D_{-t}u - x|^2},
/// split the same way (the offset is the vanishing determinant ratio).
pub fn check_kernel_bounds_large_t(model: &OUModel, spec: &SampleSpec) -> Result<Vec<BoundReport>> {
    let mut rng = crate::gaussian::worker_rng(spec.seed, 3);
    let grid = format!("{} samples, t in [{}, {}]", spec.count, spec.t_min, spec.t_max);
    let mut quad_ratio = Vec::new();
    let mut offset = Vec::new();

    for i in 0..spec.count {
        let (t, x, u) = draw_sample(model, &mut rng, spec, i)?;
        let ke = mehler_log_kernel(model, t, &x, &u)?;
        let e = model.d_s(-t)? * &u - &x;
        let en2 = e.norm_squared();
        if en2 > 1e-18 {
            quad_ratio.push((t, -ke.quad_term / en2));
        }
        offset.push((t, ke.log_det_ratio));
    }

    Ok(vec![
        // t = 1 is the attained edge of the large-time regime
        assess_ends(
            "stort quad ratio <M_t d,d>/(2|D_-t u - x|^2)",
            &grid,
            &quad_ratio,
            Sidedness::TwoSided,
            false,
            true,
        ),
        assess(
            "stort additive offset logdet ratio",
            &grid,
            &offset,
            Sidedness::AdditiveUpper,
        ),
    ])
}

/// Global-region small-time bounds: on G with R(x) < (1/2) log alpha,
/// 1/(1+|x|)^2 <~ t^2|x|^2 + |u - D_t x|^2 and K_t(x,u) <~ alpha.
pub fn check_global_small_t_bound(
    model: &OUModel,
    alpha: f64,
    spec: &SampleSpec,
) -> Result<Vec<BoundReport>> {
    assert!(alpha > std::f64::consts::E);
    let mut rng = crate::gaussian::worker_rng(spec.seed, 4);
    let grid = format!(
        "{} G-samples, t in [{:.0e}, {}], alpha = {alpha:.0e}",
        spec.count, spec.t_min, spec.t_max
    );
    let r_cap = 0.5 * alpha.ln();
    let mut lower = Vec::new();
    let mut kernel_excess = Vec::new();

    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < spec.count && attempts < spec.count * 200 {
        attempts += 1;
        let (t, x, u) = draw_sample(model, &mut rng, spec, attempts)?;
        if region_classify(&x, &u) != Region::Global || model.quadratic_form_r(&x) >= r_cap {
            continue;
        }
        accepted += 1;
        let d = &u - model.d_s(t)? * &x;
        let weight = (1.0 + x.norm()).powi(2);
        lower.push((t, (t * t * x.norm_squared() + d.norm_squared()) * weight));
        let ke = mehler_log_kernel(model, t, &x, &u)?;
        kernel_excess.push((t, ke.log_value - alpha.ln()));
    }

    // The displacement scale of the sample cloud grows like sqrt(t), which
    // drags the conditional mean of the lower family with it; the claimed
    // infimum sits at the region threshold independently of t. Assess the
    // per-bin minima so the trend check sees the quantity the bound is about.
    let lower_minima = bin_minima(&lower, 30);

    Ok(vec![
        // t = 1 is the attained edge of the small-time regime
        assess_ends(
            "lemma5.1 (t^2|x|^2 + |u-D_t x|^2)(1+|x|)^2 on G",
            &grid,
            &lower_minima,
            Sidedness::LowerOnly,
            true,
            false,
        ),
        assess(
            "claimv log K_t - log alpha on G",
            &grid,
            &kernel_excess,
            Sidedness::AdditiveUpper,
        ),
    ])
}
