//! Dense linear-algebra primitives: matrix exponential, Lyapunov solve,
//! symmetric helpers.
//!
//! Everything here targets desk scale (n <= 32), so the Lyapunov equation is
//! solved through its Kronecker-vectorized linear system and the matrix
//! exponential uses scaling-and-squaring with the degree-13 Pade approximant
//! (Higham 2005). Eigendecomposition is deliberately not used for exp(tB):
//! drift matrices with Jordan blocks are first-class inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{OuError, Result};

/// Pade(13) numerator coefficients, Higham (2005) eq. (10.33).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

const THETA13: f64 = 5.371920351148152;

/// exp(t*A) by scaling-and-squaring with the Pade(13) approximant.
///
/// Contract: relative accuracy ~1e-12 for n <= 10; exp(0*A) = I exactly.
pub fn matrix_exp(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix_exp requires a square matrix");
    if t == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let m = a * t;
    if !m.iter().all(|v| v.is_finite()) {
        return Err(OuError::Overflow { scale: f64::INFINITY });
    }
    let norm = one_norm(&m);
    if norm > 1.0e4 {
        return Err(OuError::Overflow { scale: norm });
    }

    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let scaled = &m / 2f64.powi(s as i32);

    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;

    let u_inner = &a6 * (&a6 * PADE13[13] + &a4 * PADE13[11] + &a2 * PADE13[9])
        + &a6 * PADE13[7]
        + &a4 * PADE13[5]
        + &a2 * PADE13[3]
        + DMatrix::identity(n, n) * PADE13[1];
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * PADE13[12] + &a4 * PADE13[10] + &a2 * PADE13[8])
        + &a6 * PADE13[6]
        + &a4 * PADE13[4]
        + &a2 * PADE13[2]
        + DMatrix::identity(n, n) * PADE13[0];

    // exp ~ (V - U)^{-1} (V + U)
    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut exp = lhs
        .lu()
        .solve(&rhs)
        .ok_or(OuError::Overflow { scale: norm })?;
    for _ in 0..s {
        exp = &exp * &exp;
    }
    if !exp.iter().all(|v| v.is_finite()) {
        return Err(OuError::Overflow { scale: norm });
    }
    Ok(exp)
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Solve the continuous Lyapunov equation B X + X B^T = -Q for X.
///
/// Kronecker-vectorized dense solve: n^2 unknowns, O(n^6) work, which is fine
/// at desk scale and avoids a Schur-decomposition dependency.
pub fn lyapunov_solve(b: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = b.nrows();
    let nn = n * n;
    // vec(BX) = (I (x) B) vec X, vec(X B^T) = (B (x) I) vec X  (column-major vec)
    let mut big = DMatrix::<f64>::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                // I (x) B
                big[(j * n + i, j * n + k)] += b[(i, k)];
                // B (x) I
                big[(j * n + i, k * n + i)] += b[(j, k)];
            }
        }
    }
    let rhs = DVector::from_iterator(nn, q.iter().map(|v| -v));
    let lu = big.lu();
    let sol = lu.solve(&rhs).ok_or(OuError::LyapunovSingular)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(OuError::LyapunovSingular);
    }
    let x = DMatrix::from_iterator(n, n, sol.iter().copied());
    Ok(symmetrize(&x))
}

/// (M + M^T)/2. Analytically symmetric results are symmetrized before any
/// definiteness check; floating-point asymmetry otherwise trips Cholesky.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest |m_ij - m_ji|.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Lower-triangular Cholesky factor of an SPD matrix.
pub fn cholesky_lower(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or(OuError::NotPositiveDefinite { context })
}

/// Inverse of an SPD matrix through its Cholesky factorization.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let chol =
        nalgebra::Cholesky::new(m.clone()).ok_or(OuError::NotPositiveDefinite { context })?;
    Ok(symmetrize(&chol.inverse()))
}

/// log det of an SPD matrix from its lower Cholesky factor.
pub fn log_det_from_chol(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Symmetric square root of an SPD matrix (eigendecomposition; the input is
/// symmetric by contract, unlike the drift).
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(OuError::NotPositiveDefinite {
            context: "symmetric square root",
        });
    }
    let sqrt_vals = DVector::from_iterator(m.nrows(), eig.eigenvalues.iter().map(|l| l.sqrt()));
    let v = eig.eigenvectors;
    Ok(symmetrize(&(&v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose())))
}

/// Extreme eigenvalues (min, max) of a symmetric matrix.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Extreme singular values (min, max) of a square matrix.
pub fn singular_value_range(m: &DMatrix<f64>) -> (f64, f64) {
    let (lo, hi) = sym_eig_range(&(m.transpose() * m));
    (lo.max(0.0).sqrt(), hi.max(0.0).sqrt())
}

/// Operator (spectral) norm.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    singular_value_range(m).1
}

/// Max over eigenvalues of the real part (spectral abscissa).
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}
