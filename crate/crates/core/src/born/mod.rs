//! The functional Born rule in the Gaussian sector.
//!
//! Pairing a closed process functional with a symbolic measurement
//! functional and integrating out every trajectory variable leaves a
//! Gaussian law over the readout variables. This module computes that law
//! by direct marginalization, evaluates conditional (post-measurement)
//! states, draws records from laws, and produces the closed-form law of the
//! singular (projective) measurement limit. The independent
//! classical-trajectory assembly of the same law lives in [`saddle`].

pub mod saddle;

pub use saddle::{compute_readout_law_saddle, solve_saddle, SaddleData};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gauss::{FutureBoundary, GaussianFunctional, PastBoundary};
use crate::grid::{TimeGrid, VarKind, VarLabel};
use crate::linalg::{cr, normal_cdf, CMatrix, CVector, RMatrix, RVector};
use crate::measure::ReadoutRecord;
use crate::process::{ClModel, GaussianState};

/// Rank-factored correction to the white part of a readout kernel, from the
/// boundary-integration step of the classical-trajectory route. The kernel
/// correction is Σ_j values[j] · vectors[j] vectors[j]ᵀ; the leading factor
/// plays the role of the separable g(t)h(s) term.
#[derive(Debug, Clone)]
pub struct RankCorrection {
    pub values: Vec<f64>,
    pub vectors: Vec<RVector>,
}

/// Gaussian law of measurement records on grid nodes.
///
/// The stored matrix `R` is the precision of the discrete density over the
/// node values (Lebesgue measure per node): log Pr(r) = −½ rᵀR r + bᵀr +
/// logZ. In continuum terms R carries the 1/τ_m and quadrature weights, so
/// the record covariance τ_m·(weighted kernel)⁻¹ is simply R⁻¹ here.
#[derive(Debug, Clone)]
pub struct ReadoutLaw {
    grid: TimeGrid,
    readout_nodes: Vec<usize>,
    r_mat: RMatrix,
    b: RVector,
    log_z: f64,
    raw_log_z: Complex64,
    imag_residual: f64,
    gh_data: Option<RankCorrection>,
}

impl ReadoutLaw {
    /// Build a law from the complex exponent left after marginalizing all
    /// trajectory variables. Fails when the imaginary part of the kernel is
    /// above 1e−8 of the real part or the real part is not positive
    /// definite.
    pub fn from_raw(
        grid: TimeGrid,
        readout_nodes: Vec<usize>,
        k: &CMatrix,
        b: &CVector,
        c_raw: Complex64,
    ) -> Result<Self> {
        let n = readout_nodes.len();
        if k.nrows() != n || b.len() != n {
            return Err(Error::Invariant("law dimensions do not match readout nodes".into()));
        }
        let mut r_mat = RMatrix::zeros(n, n);
        let mut im_max = 0.0f64;
        let mut re_max = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let avg = (k[(i, j)] + k[(j, i)]) * cr(0.5);
                r_mat[(i, j)] = avg.re;
                im_max = im_max.max(avg.im.abs());
                re_max = re_max.max(avg.re.abs());
            }
        }
        let imag_residual = im_max / re_max.max(1e-300);
        if imag_residual > 1e-8 {
            return Err(Error::LawValidity(format!(
                "kernel has imaginary part {im_max:.3e} vs real scale {re_max:.3e}"
            )));
        }
        let b_im = b.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if b_im > 1e-8 * (1.0 + b.iter().map(|z| z.re.abs()).fold(0.0, f64::max)) {
            return Err(Error::LawValidity(format!(
                "linear term has imaginary part {b_im:.3e}"
            )));
        }
        let b_re = RVector::from_iterator(n, b.iter().map(|z| z.re));
        let eig = r_mat.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(Error::LawValidity(format!(
                "kernel real part not positive definite: min eigenvalue {min_eig:.3e}"
            )));
        }
        // logZ makes the density integrate to one:
        //   ∫ exp(−½rᵀRr + bᵀr) dr = exp(½bᵀR⁻¹b + n/2·log 2π − ½ log det R)
        let chol = nalgebra::Cholesky::new(r_mat.clone())
            .ok_or_else(|| Error::LawValidity("Cholesky of kernel failed".into()))?;
        let half_quad = 0.5 * b_re.dot(&chol.solve(&b_re));
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let log_z = -(half_quad + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * log_det);
        Ok(ReadoutLaw {
            grid,
            readout_nodes,
            r_mat,
            b: b_re,
            log_z,
            raw_log_z: c_raw,
            imag_residual,
            gh_data: None,
        })
    }

    pub(crate) fn with_gh(mut self, gh: RankCorrection) -> Self {
        self.gh_data = Some(gh);
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn readout_nodes(&self) -> &[usize] {
        &self.readout_nodes
    }

    pub fn kernel(&self) -> &RMatrix {
        &self.r_mat
    }

    pub fn drift(&self) -> &RVector {
        &self.b
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// The constant that the marginalization itself produced, before
    /// re-normalization.
    pub fn raw_log_z(&self) -> Complex64 {
        self.raw_log_z
    }

    pub fn imag_residual(&self) -> f64 {
        self.imag_residual
    }

    pub fn gh_data(&self) -> Option<&RankCorrection> {
        self.gh_data.as_ref()
    }

    /// |exp(raw − normalized) − 1|: how far the tracked path-measure
    /// constants are from the exact normalizing constant.
    pub fn normalization_residual(&self) -> f64 {
        let d = self.raw_log_z - cr(self.log_z);
        (d.exp() - cr(1.0)).norm()
    }

    /// Normalized log density at the given node values.
    pub fn log_density(&self, values: &[f64]) -> f64 {
        assert_eq!(values.len(), self.readout_nodes.len());
        let v = RVector::from_column_slice(values);
        -0.5 * v.dot(&(&self.r_mat * &v)) + self.b.dot(&v) + self.log_z
    }

    /// Unnormalized log density carrying the raw marginalization constant.
    pub fn raw_log_density(&self, values: &[f64]) -> Complex64 {
        let v = RVector::from_column_slice(values);
        cr(-0.5 * v.dot(&(&self.r_mat * &v)) + self.b.dot(&v)) + self.raw_log_z
    }

    /// Record covariance R⁻¹ and mean R⁻¹b of the law.
    pub fn covariance(&self) -> Result<(RMatrix, RVector)> {
        let chol = nalgebra::Cholesky::new(self.r_mat.clone())
            .ok_or_else(|| Error::LawValidity("kernel not positive definite".into()))?;
        let n = self.readout_nodes.len();
        let cov = chol.solve(&RMatrix::identity(n, n));
        let mean = chol.solve(&self.b);
        Ok((cov, mean))
    }

    /// Draw `n` records, deterministically in `seed`. Sampling uses the
    /// Cholesky factor of the covariance and falls back to an
    /// eigenvalue-based factor when Cholesky fails; eigenvalues below
    /// −1e−10·λ_max are an error.
    pub fn sample_vectors(&self, n: usize, seed: u64) -> Result<Vec<RVector>> {
        let (cov, mean) = self.covariance()?;
        let dim = cov.nrows();
        let factor = match nalgebra::Cholesky::new(cov.clone()) {
            Some(ch) => ch.l(),
            None => {
                let eig = cov.symmetric_eigen();
                let max_ev = eig.eigenvalues.max();
                let mut d = DMatrix::zeros(dim, dim);
                for i in 0..dim {
                    let ev = eig.eigenvalues[i];
                    if ev < -1e-10 * max_ev {
                        return Err(Error::Sampling(format!(
                            "covariance eigenvalue {ev:.3e} below tolerance"
                        )));
                    }
                    d[(i, i)] = ev.max(0.0).sqrt();
                }
                &eig.eigenvectors * d
            }
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let z = RVector::from_iterator(dim, (0..dim).map(|_| {
                let x: f64 = normal.sample(&mut rng);
                x
            }));
            out.push(&mean + &factor * z);
        }
        Ok(out)
    }

    /// Draw `n` full-grid records. The law must cover every grid node.
    pub fn sample_records(&self, n: usize, seed: u64) -> Result<Vec<ReadoutRecord>> {
        let full: Vec<usize> = (0..=self.grid.n_steps()).collect();
        if self.readout_nodes != full {
            return Err(Error::Precondition(
                "law does not cover all grid nodes; use sample_vectors".into(),
            ));
        }
        let vecs = self.sample_vectors(n, seed)?;
        vecs.into_iter()
            .map(|v| ReadoutRecord::new(self.grid.clone(), v.iter().copied().collect()))
            .collect()
    }

    /// Cell probabilities of a two-readout law on a rectangular binning.
    /// Edge vectors are ascending and may start/end with ±∞.
    pub fn bin_probabilities_2d(&self, edges0: &[f64], edges1: &[f64]) -> Result<RMatrix> {
        if self.readout_nodes.len() != 2 {
            return Err(Error::Precondition(format!(
                "2-D binning needs a two-readout law, got {}",
                self.readout_nodes.len()
            )));
        }
        let (cov, mean) = self.covariance()?;
        let (mu0, mu1) = (mean[0], mean[1]);
        let (s00, s01, s11) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]);
        let sd0 = s00.sqrt();
        let cond_var = s11 - s01 * s01 / s00;
        if cond_var <= 0.0 {
            return Err(Error::LawValidity("degenerate two-readout covariance".into()));
        }
        let cond_sd = cond_var.sqrt();
        let lo0 = mu0 - 12.0 * sd0;
        let hi0 = mu0 + 12.0 * sd0;
        let mut out = RMatrix::zeros(edges0.len() - 1, edges1.len() - 1);
        // ∫ φ(x; μ0, σ0²) [Φ(b1|x) − Φ(a1|x)] dx per cell, Simpson rule
        for i in 0..edges0.len() - 1 {
            let a = edges0[i].max(lo0).min(hi0);
            let b = edges0[i + 1].max(lo0).min(hi0);
            if b <= a {
                continue;
            }
            let steps = 200usize;
            let h = (b - a) / steps as f64;
            for j in 0..edges1.len() - 1 {
                let (a1, b1) = (edges1[j], edges1[j + 1]);
                let f = |x: f64| -> f64 {
                    let z = (x - mu0) / sd0;
                    let phi = (-0.5 * z * z).exp() / (sd0 * (2.0 * std::f64::consts::PI).sqrt());
                    let m = mu1 + s01 / s00 * (x - mu0);
                    let upper = if b1.is_infinite() { 1.0 } else { normal_cdf((b1 - m) / cond_sd) };
                    let lower = if a1.is_infinite() { 0.0 } else { normal_cdf((a1 - m) / cond_sd) };
                    phi * (upper - lower)
                };
                let mut acc = f(a) + f(b);
                for s in 1..steps {
                    let x = a + s as f64 * h;
                    acc += f(x) * if s % 2 == 1 { 4.0 } else { 2.0 };
                }
                out[(i, j)] = acc * h / 3.0;
            }
        }
        Ok(out)
    }
}

/// Evaluate the readout law of `W` paired with the symbolic measurement `M`
/// by direct marginalization: multiply, apply the deferred final-node
/// identification, integrate out every trajectory variable.
pub fn compute_readout_law_direct(
    w: &GaussianFunctional,
    m_symbolic: &GaussianFunctional,
) -> Result<ReadoutLaw> {
    if w.boundary().past != PastBoundary::ClosedState {
        return Err(Error::Precondition(
            "process must carry initial-state data (closed past)".into(),
        ));
    }
    if w.boundary().future != FutureBoundary::DeferredIdentity {
        return Err(Error::Precondition("process must be closed (deferred identity)".into()));
    }
    let product = w.multiply(m_symbolic)?;
    let n = product.layout().grid().n_steps();
    let pinned = product.pin_equal(VarLabel::ket(n), VarLabel::bra(n))?;
    let to_integrate: Vec<VarLabel> = pinned
        .layout()
        .labels()
        .iter()
        .copied()
        .filter(|l| l.kind != VarKind::Readout)
        .collect();
    let marg = pinned.marginalize(&to_integrate)?;
    let readout_nodes: Vec<usize> = marg.layout().labels().iter().map(|l| l.node).collect();
    ReadoutLaw::from_raw(
        marg.layout().grid().clone(),
        readout_nodes,
        marg.quadratic(),
        marg.linear(),
        marg.log_prefactor(),
    )
}

/// Post-measurement conditional state: all variables except the final node
/// pair are integrated out of W̃·M_r, and the trace of the result is
/// returned alongside (it equals the Born weight of the record).
pub fn conditional_state(
    w_open_future: &GaussianFunctional,
    m_numeric: &GaussianFunctional,
) -> Result<(GaussianState, f64)> {
    if w_open_future.boundary().future != FutureBoundary::Open {
        return Err(Error::Precondition("process must have an open future".into()));
    }
    if m_numeric
        .layout()
        .labels()
        .iter()
        .any(|l| l.kind == VarKind::Readout)
    {
        return Err(Error::Precondition("operation must carry a numeric record".into()));
    }
    let product = w_open_future.multiply(m_numeric)?;
    let n = product.layout().grid().n_steps();
    let keep = [VarLabel::ket(n), VarLabel::bra(n)];
    let marg = product.marginalize_keeping(&keep)?;
    let state = GaussianState::from_pair_functional(&marg, keep[0], keep[1])?;
    let traced = marg
        .pin_equal(keep[0], keep[1])?
        .marginalize(&[keep[0]])?
        .scalar_value()?;
    if traced.im.abs() > 1e-8 * traced.norm().max(1e-300) {
        return Err(Error::NumericRange(format!(
            "conditional trace has imaginary part: {traced}"
        )));
    }
    Ok((state, traced.re))
}

/// Final reduced state of the process with no conditioning: everything but
/// the final node pair is integrated out of the open-future functional.
pub fn unconditional_final_state(
    w_open_future: &GaussianFunctional,
) -> Result<(GaussianState, f64)> {
    if w_open_future.boundary().future != FutureBoundary::Open {
        return Err(Error::Precondition("process must have an open future".into()));
    }
    let n = w_open_future.layout().grid().n_steps();
    let keep = [VarLabel::ket(n), VarLabel::bra(n)];
    let marg = w_open_future.marginalize_keeping(&keep)?;
    let state = GaussianState::from_pair_functional(&marg, keep[0], keep[1])?;
    let traced = marg
        .pin_equal(keep[0], keep[1])?
        .marginalize(&[keep[0]])?
        .scalar_value()?;
    Ok((state, traced.re))
}

/// Marginalize the symbolic records out of an operation functional: what
/// remains is the trace-preserving decoherence factor the measurement
/// leaves on the process.
pub fn measurement_decoherence(m_symbolic: &GaussianFunctional) -> Result<GaussianFunctional> {
    let readouts: Vec<VarLabel> = m_symbolic
        .layout()
        .labels()
        .iter()
        .copied()
        .filter(|l| l.kind == VarKind::Readout)
        .collect();
    m_symbolic.marginalize(&readouts)
}

/// Unconditional final state with the record-integrated measurement
/// back-action included.
pub fn unconditional_final_state_with_measurement(
    w_open_future: &GaussianFunctional,
    m_symbolic: &GaussianFunctional,
) -> Result<(GaussianState, f64)> {
    let deco = measurement_decoherence(m_symbolic)?;
    let w = w_open_future.multiply(&deco)?;
    unconditional_final_state(&w)
}

/// Closed-form law of the singular measurement limit τ_m → 0:
///
/// ```text
///   Pr[r] ∝ ρ(r(t_i), r(t_i)) · exp(−(i/2)·rᵀ Q r),
/// ```
///
/// where Q is the discretized branch-summed memory kernel. No measurement
/// time appears. For Hermitian kernels the branch sum is purely imaginary,
/// so the exponential contributes a damping of the modulus; a real
/// branch-summed kernel would contribute a pure phase.
#[derive(Debug, Clone)]
pub struct ProjectiveLaw {
    grid: TimeGrid,
    /// quadratic weight of the initial-state factor on r(t_i)
    weight_precision: Complex64,
    /// linear weight of the initial-state factor on r(t_i)
    weight_linear: Complex64,
    /// Q_kl = dt² w_k w_l Σ_ij Ã_ij(t_k, t_l)
    kernel: CMatrix,
}

impl ProjectiveLaw {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// The discretized branch-summed kernel of the exponent −(i/2)·rᵀQr.
    pub fn phase_kernel(&self) -> &CMatrix {
        &self.kernel
    }

    /// Unnormalized log Pr at a record.
    pub fn log_value(&self, record: &ReadoutRecord) -> Result<Complex64> {
        if !record.grid().same_as(&self.grid) {
            return Err(Error::Composition("record grid mismatch".into()));
        }
        let v = CVector::from_iterator(
            record.values().len(),
            record.values().iter().map(|&x| cr(x)),
        );
        let quad = v.dot(&(&self.kernel * &v));
        let r0 = cr(record.values()[0]);
        Ok(-0.5 * self.weight_precision * r0 * r0 + self.weight_linear * r0
            - Complex64::new(0.0, 0.5) * quad)
    }

    /// Precision matrix of the law's modulus: the initial-state weight plus
    /// the damping carried by the imaginary part of the branch-summed
    /// kernel.
    pub fn modulus_precision(&self) -> RMatrix {
        let n = self.kernel.nrows();
        let mut out = RMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                // Re(−(i/2)·Q_ij r_i r_j) contributes +½ Im(Q) to log|Pr|
                out[(i, j)] = -(self.kernel[(i, j)].im + self.kernel[(j, i)].im) * 0.5;
            }
        }
        out[(0, 0)] += self.weight_precision.re;
        out
    }

    /// Drift (linear term) of log |Pr|.
    pub fn modulus_drift(&self) -> RVector {
        let n = self.kernel.nrows();
        let mut out = RVector::zeros(n);
        out[0] = self.weight_linear.re;
        out
    }
}

/// Law of the projective limit for the given model and initial state.
pub fn projective_limit_law(
    model: &ClModel,
    state: &GaussianState,
    grid: &TimeGrid,
) -> Result<ProjectiveLaw> {
    let n = grid.n_steps() + 1;
    let dt2 = grid.dt() * grid.dt();
    let mut kernel = CMatrix::zeros(n, n);
    if !model.kernel.is_zero() {
        if !model.kernel.grid().same_as(grid) {
            return Err(Error::Composition("kernel grid differs from working grid".into()));
        }
        for k in 0..n {
            for l in 0..n {
                let blk = model.kernel.block(k, l);
                let sum: Complex64 = blk.iter().sum();
                kernel[(k, l)] =
                    cr(dt2 * grid.trapezoid_weight(k) * grid.trapezoid_weight(l)) * sum;
            }
        }
    }
    let xi = state.xi();
    let q = xi[(0, 0)] + xi[(0, 1)] + xi[(1, 0)] + xi[(1, 1)];
    let l = state.coeff()[0] + state.coeff()[1];
    Ok(ProjectiveLaw { grid: grid.clone(), weight_precision: q, weight_linear: l, kernel })
}
