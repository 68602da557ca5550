//! Gauss-Hermite and Gauss-Legendre rules plus tensor-product helpers.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use once_cell::sync::Lazy;
use std::sync::Mutex;

/// Gauss-Hermite rule for the weight e^{-z^2} on (-inf, inf).
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub-Welsch: eigenvalues of the symmetric Jacobi matrix are the
    /// nodes; weights come from the first eigenvector components.
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let mut jacobi = DMatrix::<f64>::zeros(order, order);
        for k in 1..order {
            let off = (k as f64 / 2.0).sqrt();
            jacobi[(k - 1, k)] = off;
            jacobi[(k, k - 1)] = off;
        }
        let eig = nalgebra::SymmetricEigen::new(jacobi);
        let total = std::f64::consts::PI.sqrt();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|i| {
                let node = eig.eigenvalues[i];
                let v0 = eig.eigenvectors[(0, i)];
                (node, total * v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        GaussHermite {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }
}

static HERMITE_CACHE: Lazy<Mutex<HashMap<usize, Arc<GaussHermite>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Shared, memoized Gauss-Hermite rule.
pub fn hermite(order: usize) -> Arc<GaussHermite> {
    let mut cache = HERMITE_CACHE.lock().unwrap();
    cache
        .entry(order)
        .or_insert_with(|| Arc::new(GaussHermite::new(order)))
        .clone()
}

/// Gauss-Legendre rule on [-1, 1] (Newton iteration on P_n).
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1);
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Chebyshev initial guess
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_and_deriv(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_and_deriv(n, x);
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        GaussLegendre { nodes, weights }
    }
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Iterate over all multi-indices in {0..order}^dim.
pub fn multi_indices(dim: usize, order: usize) -> impl Iterator<Item = Vec<usize>> {
    let total = order.pow(dim as u32);
    (0..total).map(move |mut flat| {
        let mut idx = vec![0usize; dim];
        for slot in idx.iter_mut() {
            *slot = flat % order;
            flat /= order;
        }
        idx
    })
}

/// E[f(X)] for X ~ N(mean, L L^T) by a tensor Gauss-Hermite rule:
/// X = mean + sqrt(2) L z with weight e^{-|z|^2}.
pub fn gauss_expectation<F: FnMut(&DVector<f64>) -> f64>(
    mean: &DVector<f64>,
    chol_lower: &DMatrix<f64>,
    order: usize,
    mut f: F,
) -> f64 {
    let dim = mean.len();
    let rule = hermite(order);
    let norm = std::f64::consts::PI.powf(-(dim as f64) / 2.0);
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut acc = 0.0;
    let mut z = DVector::<f64>::zeros(dim);
    for idx in multi_indices(dim, order) {
        let mut w = 1.0;
        for (axis, &i) in idx.iter().enumerate() {
            z[axis] = rule.nodes[i];
            w *= rule.weights[i];
        }
        let x = mean + chol_lower * &z * sqrt2;
        acc += w * f(&x);
    }
    acc * norm
}
