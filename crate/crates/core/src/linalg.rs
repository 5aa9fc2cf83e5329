//! Dense complex linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;
pub type RMatrix = DMatrix<f64>;
pub type RVector = DVector<f64>;

pub const I: Complex64 = Complex64::new(0.0, 1.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Largest |entry| of a complex matrix.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

pub fn max_abs_vec(v: &CVector) -> f64 {
    v.iter().fold(0.0f64, |acc, z| acc.max(z.norm()))
}

/// ‖M − Mᵀ‖_max (ordinary transpose, no conjugation).
pub fn symmetry_residual(m: &CMatrix) -> f64 {
    let mut r = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            r = r.max((m[(i, j)] - m[(j, i)]).norm());
        }
    }
    r
}

/// Symmetrize in place: M ← (M + Mᵀ)/2.
pub fn symmetrize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)]) * cr(0.5);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Solution of a square complex system together with the log-determinant of
/// the matrix, 2-norm condition estimate, and the solve itself.
pub struct DenseSolve {
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    /// log det of the factored matrix, imaginary part in (−π, π] per pivot
    /// (accumulated, so recorded modulo 2πi overall).
    pub log_det: Complex64,
    /// σ_max/σ_min from an SVD of the input.
    pub condition: f64,
}

impl DenseSolve {
    /// Factor `m`, failing if the condition estimate exceeds `cond_limit`.
    pub fn factor(m: &CMatrix, cond_limit: f64) -> Result<Self> {
        let n = m.nrows();
        assert_eq!(n, m.ncols());
        if n == 0 {
            return Ok(Self {
                lu: nalgebra::LU::new(CMatrix::zeros(0, 0)),
                log_det: ZERO,
                condition: 1.0,
            });
        }
        let svd = m.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !condition.is_finite() || condition > cond_limit {
            return Err(Error::SingularMarginal { cond: condition, limit: cond_limit });
        }
        let lu = nalgebra::LU::new(m.clone());
        let mut log_det = ZERO;
        for k in 0..n {
            let u_kk = lu.u()[(k, k)];
            if u_kk == ZERO {
                return Err(Error::SingularMarginal { cond: f64::INFINITY, limit: cond_limit });
            }
            log_det += u_kk.ln();
        }
        // determinant sign of the row permutation
        let signum: Complex64 = lu.p().determinant();
        if signum.re < 0.0 {
            log_det += I * std::f64::consts::PI;
        }
        Ok(Self { lu, log_det, condition })
    }

    pub fn solve_vec(&self, rhs: &CVector) -> CVector {
        self.lu.solve(rhs).expect("LU solve after successful factorization")
    }

    pub fn solve_mat(&self, rhs: &CMatrix) -> CMatrix {
        self.lu.solve(rhs).expect("LU solve after successful factorization")
    }
}

/// Hermitian deviation ‖M − M†‖_max.
pub fn hermiticity_residual(m: &CMatrix) -> f64 {
    let mut r = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            r = r.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    r
}

/// Eigenvalues of a Hermitian matrix (ascending).
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut h = m.clone();
    // enforce exact Hermiticity before factoring
    for i in 0..h.nrows() {
        h[(i, i)] = cr(h[(i, i)].re);
        for j in (i + 1)..h.ncols() {
            let avg = (h[(i, j)] + h[(j, i)].conj()) * cr(0.5);
            h[(i, j)] = avg;
            h[(j, i)] = avg.conj();
        }
    }
    let eig = h.symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// exp(scale·H) for Hermitian `H` via eigendecomposition.
pub fn hermitian_exp(h: &CMatrix, scale: Complex64) -> CMatrix {
    let eig = h.clone().symmetric_eigen();
    let n = h.nrows();
    let mut d = CMatrix::zeros(n, n);
    for k in 0..n {
        d[(k, k)] = (scale * cr(eig.eigenvalues[k])).exp();
    }
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Real-part symmetric positive-definiteness check via eigenvalues.
pub fn min_real_symmetric_eigenvalue(m: &RMatrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Error function, |error| < 1.2e-7 (Abramowitz–Stegun 7.1.26 refined by a
/// second Chebyshev pass). Sufficient for binning probabilities at the
/// percent scale; see tests against exact half-integer values.
pub fn erf(x: f64) -> f64 {
    // Numerical Recipes erfc with Chebyshev fit, |rel err| < 1.2e-7
    let z = x.abs();
    let t = 2.0 / (2.0 + z);
    let ty = 4.0 * t - 2.0;
    const COF: [f64; 28] = [
        -1.3026537197817094,
        6.4196979235649026e-1,
        1.9476473204185836e-2,
        -9.561514786808631e-3,
        -9.46595344482036e-4,
        3.66839497852761e-4,
        4.2523324806907e-5,
        -2.0278578112534e-5,
        -1.624290004647e-6,
        1.303655835580e-6,
        1.5626441722e-8,
        -8.5238095915e-8,
        6.529054439e-9,
        5.059343495e-9,
        -9.91364156e-10,
        -2.27365122e-10,
        9.6467911e-11,
        2.394038e-12,
        -6.886027e-12,
        8.94487e-13,
        3.13092e-13,
        -1.12708e-13,
        3.81e-16,
        7.106e-15,
        -1.523e-15,
        -9.4e-17,
        1.21e-16,
        -2.8e-17,
    ];
    let mut d = 0.0;
    let mut dd = 0.0;
    for &cj in COF.iter().rev().take(COF.len() - 1) {
        let tmp = d;
        d = ty * d - dd + cj;
        dd = tmp;
    }
    let erfc = t * (-z * z + 0.5 * (COF[0] + ty * d) - dd).exp();
    if x >= 0.0 {
        1.0 - erfc
    } else {
        erfc - 1.0
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Relative difference ‖a − b‖_max / max(‖a‖_max, ‖b‖_max, floor).
pub fn rel_mat_diff(a: &CMatrix, b: &CMatrix, floor: f64) -> f64 {
    let scale = max_abs(a).max(max_abs(b)).max(floor);
    max_abs(&(a - b)) / scale
}

pub fn rel_vec_diff(a: &CVector, b: &CVector, floor: f64) -> f64 {
    let scale = max_abs_vec(a).max(max_abs_vec(b)).max(floor);
    max_abs_vec(&(a - b)) / scale
}
