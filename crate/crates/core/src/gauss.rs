//! Exact algebra of complex Gaussian functionals.
//!
//! A [`GaussianFunctional`] stores the exponent data (K, b, c) of
//!
//! ```text
//!     F[x] = exp(-1/2 xᵀ K x + bᵀ x + c)
//! ```
//!
//! over the real variables named by its [`Layout`]. Products multiply by
//! adding exponents, Gaussian integration is a Schur complement, and
//! boundary conditions are exact substitutions. Exponents are complex;
//! oscillatory integrals are taken in the analytically continued (Fresnel)
//! sense whenever the integrated block is invertible, and every constant is
//! tracked through `c` (modulo 2πi) so normalizations can be checked at the
//! end rather than assumed.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Layout, VarLabel};
use crate::linalg::{
    c, cr, max_abs, max_abs_vec, symmetrize, symmetry_residual, CMatrix, CVector, DenseSolve,
    ZERO,
};

/// Condition-number ceiling before a marginalization block is declared
/// singular.
pub const COND_LIMIT: f64 = 1e12;

/// Whether a functional still carries initial-state data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PastBoundary {
    /// Initial state attached (closed past).
    ClosedState,
    Open,
}

/// Whether the final trace identification δ(x̄_f − x_f) is owed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FutureBoundary {
    /// The final identification is part of the functional's meaning but is
    /// applied lazily by consumers (Born rule, property checks).
    DeferredIdentity,
    Open,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryTag {
    pub past: PastBoundary,
    pub future: FutureBoundary,
}

impl BoundaryTag {
    pub fn open() -> Self {
        BoundaryTag { past: PastBoundary::Open, future: FutureBoundary::Open }
    }

    fn combined(self, other: BoundaryTag) -> BoundaryTag {
        let past = if self.past == PastBoundary::ClosedState || other.past == PastBoundary::ClosedState
        {
            PastBoundary::ClosedState
        } else {
            PastBoundary::Open
        };
        let future = if self.future == FutureBoundary::DeferredIdentity
            || other.future == FutureBoundary::DeferredIdentity
        {
            FutureBoundary::DeferredIdentity
        } else {
            FutureBoundary::Open
        };
        BoundaryTag { past, future }
    }
}

/// Complex Gaussian quadratic form over labeled variables.
#[derive(Debug, Clone)]
pub struct GaussianFunctional {
    layout: Layout,
    k: CMatrix,
    b: CVector,
    c: Complex64,
    boundary: BoundaryTag,
}

/// Report of the sampled positivity check.
#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    pub min_eig: f64,
    pub max_eig: f64,
    pub hermiticity_residual: f64,
    pub pass: bool,
}

/// Flat-direction extraction: the data of `∫dv F` when the integrated
/// variable has (numerically) no quadratic term, so the integral is a Dirac
/// delta on the linear form that multiplied it.
#[derive(Debug, Clone)]
pub struct DeltaExtract {
    /// Coefficients of the remaining variables inside the delta constraint
    /// `Σ_j coeff_j x_j = bias` (layout order of `remainder`).
    pub constraint: CVector,
    pub bias: Complex64,
    /// |K_vv| / max|K|, the flatness residual.
    pub flatness: f64,
    /// The functional with the flat variable dropped; constants from the
    /// delta normalization are not tracked.
    pub remainder: GaussianFunctional,
}

impl GaussianFunctional {
    /// The constant functional exp(c) over `layout`.
    pub fn constant(layout: Layout, c: Complex64) -> Self {
        let n = layout.len();
        GaussianFunctional {
            layout,
            k: CMatrix::zeros(n, n),
            b: CVector::zeros(n),
            c,
            boundary: BoundaryTag::open(),
        }
    }

    pub fn one(layout: Layout) -> Self {
        Self::constant(layout, ZERO)
    }

    /// Build from explicit exponent data. `k` must be symmetric within
    /// `1e-10·(1 + max|K|)` and is exactly symmetrized on construction.
    pub fn from_parts(layout: Layout, mut k: CMatrix, b: CVector, c: Complex64) -> Result<Self> {
        let n = layout.len();
        if k.nrows() != n || k.ncols() != n || b.len() != n {
            return Err(Error::Invariant(format!(
                "exponent dimensions {}x{} / {} do not match layout size {}",
                k.nrows(),
                k.ncols(),
                b.len(),
                n
            )));
        }
        let res = symmetry_residual(&k);
        if res > 1e-10 * (1.0 + max_abs(&k)) {
            return Err(Error::Invariant(format!(
                "quadratic coefficient asymmetric: residual {res:.3e}"
            )));
        }
        if k.iter().any(|z| !z.is_finite()) || b.iter().any(|z| !z.is_finite()) || !c.is_finite()
        {
            return Err(Error::Invariant("non-finite exponent data".into()));
        }
        symmetrize(&mut k);
        Ok(GaussianFunctional { layout, k, b, c, boundary: BoundaryTag::open() })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn quadratic(&self) -> &CMatrix {
        &self.k
    }

    pub fn linear(&self) -> &CVector {
        &self.b
    }

    pub fn log_prefactor(&self) -> Complex64 {
        self.c
    }

    pub fn boundary(&self) -> BoundaryTag {
        self.boundary
    }

    pub fn with_boundary(mut self, tag: BoundaryTag) -> Self {
        self.boundary = tag;
        self
    }

    pub fn set_log_prefactor(&mut self, c: Complex64) {
        self.c = c;
    }

    pub fn add_to_log_prefactor(&mut self, dc: Complex64) {
        self.c += dc;
    }

    /// exponent += `coeff · x_a x_b` (K entries updated accordingly).
    pub fn add_exponent_quadratic(&mut self, a: VarLabel, b: VarLabel, coeff: Complex64) {
        let ia = self.layout.flat_index(a).expect("label in layout");
        let ib = self.layout.flat_index(b).expect("label in layout");
        if ia == ib {
            // exponent += coeff x², so K[a,a] -= 2 coeff
            self.k[(ia, ia)] -= 2.0 * coeff;
        } else {
            self.k[(ia, ib)] -= coeff;
            self.k[(ib, ia)] -= coeff;
        }
    }

    /// exponent += coeff · x_a.
    pub fn add_exponent_linear(&mut self, a: VarLabel, coeff: Complex64) {
        let ia = self.layout.flat_index(a).expect("label in layout");
        self.b[ia] += coeff;
    }

    /// Exponent value −½vᵀKv + bᵀv + c at the assignment `values` given in
    /// layout order.
    pub fn exponent_at(&self, values: &[f64]) -> Complex64 {
        assert_eq!(values.len(), self.layout.len());
        let v = CVector::from_iterator(values.len(), values.iter().map(|&x| cr(x)));
        let kv = &self.k * &v;
        -0.5 * v.dot(&kv) + self.b.dot(&v) + self.c
    }

    /// Exponent value with the assignment given per label.
    pub fn exponent_at_labels(&self, assignment: &[(VarLabel, f64)]) -> Result<Complex64> {
        let mut values = vec![0.0f64; self.layout.len()];
        let mut seen = vec![false; self.layout.len()];
        for &(l, x) in assignment {
            let i = self.layout.flat_index(l)?;
            values[i] = x;
            seen[i] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Precondition("assignment does not cover all labels".into()));
        }
        Ok(self.exponent_at(&values))
    }

    /// Value of a fully marginalized (variable-free) functional.
    pub fn scalar_value(&self) -> Result<Complex64> {
        if !self.layout.is_empty() {
            return Err(Error::Precondition(format!(
                "functional still has {} variables",
                self.layout.len()
            )));
        }
        Ok(self.c.exp())
    }

    /// Product of two functionals: exponent data added on the union layout.
    pub fn multiply(&self, other: &GaussianFunctional) -> Result<GaussianFunctional> {
        let layout = self.layout.merged(&other.layout)?;
        let n = layout.len();
        let mut k = CMatrix::zeros(n, n);
        let mut b = CVector::zeros(n);
        let map_self: Vec<usize> = self
            .layout
            .labels()
            .iter()
            .map(|&l| layout.flat_index(l).unwrap())
            .collect();
        let map_other: Vec<usize> = other
            .layout
            .labels()
            .iter()
            .map(|&l| layout.flat_index(l).unwrap())
            .collect();
        for (i, &mi) in map_self.iter().enumerate() {
            b[mi] += self.b[i];
            for (j, &mj) in map_self.iter().enumerate() {
                k[(mi, mj)] += self.k[(i, j)];
            }
        }
        for (i, &mi) in map_other.iter().enumerate() {
            b[mi] += other.b[i];
            for (j, &mj) in map_other.iter().enumerate() {
                k[(mi, mj)] += other.k[(i, j)];
            }
        }
        Ok(GaussianFunctional {
            layout,
            k,
            b,
            c: self.c + other.c,
            boundary: self.boundary.combined(other.boundary),
        })
    }

    fn split_indices(&self, vars: &[VarLabel]) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut v_idx = Vec::with_capacity(vars.len());
        for &l in vars {
            v_idx.push(self.layout.flat_index(l)?);
        }
        v_idx.sort_unstable();
        v_idx.dedup();
        if v_idx.len() != vars.len() {
            return Err(Error::Precondition("repeated labels in marginalization set".into()));
        }
        let r_idx: Vec<usize> = (0..self.layout.len()).filter(|i| !v_idx.contains(i)).collect();
        Ok((v_idx, r_idx))
    }

    /// Integrate out `vars` exactly:
    ///
    /// ```text
    ///   K' = K_rr − K_rv K_vv⁻¹ K_vr
    ///   b' = b_r − K_rv K_vv⁻¹ b_v
    ///   c' = c + ½ b_vᵀ K_vv⁻¹ b_v − ½ log det(K_vv / 2π)
    /// ```
    pub fn marginalize(&self, vars: &[VarLabel]) -> Result<GaussianFunctional> {
        if vars.is_empty() {
            return Ok(self.clone());
        }
        let (v_idx, r_idx) = self.split_indices(vars)?;
        let nv = v_idx.len();
        let nr = r_idx.len();
        let k_vv = self.k.select_rows(&v_idx).select_columns(&v_idx);
        let k_rv = self.k.select_rows(&r_idx).select_columns(&v_idx);
        let b_v = CVector::from_iterator(nv, v_idx.iter().map(|&i| self.b[i]));
        let b_r = CVector::from_iterator(nr, r_idx.iter().map(|&i| self.b[i]));
        let k_rr = self.k.select_rows(&r_idx).select_columns(&r_idx);

        let f = DenseSolve::factor(&k_vv, COND_LIMIT)?;
        let kinv_bv = f.solve_vec(&b_v);
        let kinv_kvr = f.solve_mat(&k_rv.transpose());

        let mut k_new = k_rr - &k_rv * &kinv_kvr;
        symmetrize(&mut k_new);
        let b_new = b_r - &k_rv * &kinv_bv;
        let n_log_2pi = cr(nv as f64 * (2.0 * std::f64::consts::PI).ln());
        let c_new = self.c + 0.5 * b_v.dot(&kinv_bv) - 0.5 * (f.log_det - n_log_2pi);

        let remaining: Vec<VarLabel> = r_idx.iter().map(|&i| self.layout.label_at(i)).collect();
        let layout = Layout::new(self.layout.grid().clone(), remaining)?;
        Ok(GaussianFunctional { layout, k: k_new, b: b_new, c: c_new, boundary: self.boundary })
    }

    /// Marginalize everything except `keep`.
    pub fn marginalize_keeping(&self, keep: &[VarLabel]) -> Result<GaussianFunctional> {
        let vars: Vec<VarLabel> = self
            .layout
            .labels()
            .iter()
            .copied()
            .filter(|l| !keep.contains(l))
            .collect();
        self.marginalize(&vars)
    }

    /// Substitute `var = value` exactly and drop the variable.
    pub fn pin_value(&self, var: VarLabel, value: f64) -> Result<GaussianFunctional> {
        let iv = self.layout.flat_index(var)?;
        let n = self.layout.len();
        let r_idx: Vec<usize> = (0..n).filter(|&i| i != iv).collect();
        let s = cr(value);
        let c_new = self.c - 0.5 * self.k[(iv, iv)] * s * s + self.b[iv] * s;
        let mut b_new = CVector::zeros(n - 1);
        for (j, &rj) in r_idx.iter().enumerate() {
            b_new[j] = self.b[rj] - self.k[(rj, iv)] * s;
        }
        let k_new = self.k.select_rows(&r_idx).select_columns(&r_idx);
        let remaining: Vec<VarLabel> = r_idx.iter().map(|&i| self.layout.label_at(i)).collect();
        let layout = Layout::new(self.layout.grid().clone(), remaining)?;
        Ok(GaussianFunctional { layout, k: k_new, b: b_new, c: c_new, boundary: self.boundary })
    }

    /// Multiply by δ(x_a − x_b) and integrate over x_b: the two variables are
    /// identified, keeping label `a`. Identifying a label with itself is a
    /// no-op.
    pub fn pin_equal(&self, a: VarLabel, b: VarLabel) -> Result<GaussianFunctional> {
        let ia = self.layout.flat_index(a)?;
        let ib = self.layout.flat_index(b)?;
        if ia == ib {
            return Ok(self.clone());
        }
        let n = self.layout.len();
        let r_idx: Vec<usize> = (0..n).filter(|&i| i != ib).collect();
        let mut k_new = CMatrix::zeros(n - 1, n - 1);
        let mut b_new = CVector::zeros(n - 1);
        let pa = r_idx.iter().position(|&x| x == ia).unwrap();
        for (j, &rj) in r_idx.iter().enumerate() {
            b_new[j] = self.b[rj];
            for (l, &rl) in r_idx.iter().enumerate() {
                k_new[(j, l)] = self.k[(rj, rl)];
            }
        }
        b_new[pa] += self.b[ib];
        for (j, &rj) in r_idx.iter().enumerate() {
            k_new[(pa, j)] += self.k[(ib, rj)];
            if j != pa {
                k_new[(j, pa)] += self.k[(rj, ib)];
            }
        }
        k_new[(pa, pa)] += self.k[(ib, ib)];
        let remaining: Vec<VarLabel> = r_idx.iter().map(|&i| self.layout.label_at(i)).collect();
        let layout = Layout::new(self.layout.grid().clone(), remaining)?;
        Ok(GaussianFunctional {
            layout,
            k: k_new,
            b: b_new,
            c: self.c,
            boundary: self.boundary,
        })
    }

    /// Drop variables whose exponent rows vanish (≤ `tol` relative to the
    /// largest coefficient). Errors on the first label that is still live.
    pub fn remove_inert(&self, vars: &[VarLabel], tol: f64) -> Result<GaussianFunctional> {
        let scale = max_abs(&self.k).max(max_abs_vec(&self.b)).max(1.0);
        let mut out = self.clone();
        for &l in vars {
            let i = out.layout.flat_index(l)?;
            let row_max = (0..out.layout.len())
                .map(|j| out.k[(i, j)].norm())
                .fold(0.0f64, f64::max)
                .max(out.b[i].norm());
            if row_max > tol * scale {
                return Err(Error::Precondition(format!(
                    "variable {l:?} is not inert: coupling {row_max:.3e} vs scale {scale:.3e}"
                )));
            }
            out = out.pin_value(l, 0.0)?;
        }
        Ok(out)
    }

    /// Treat `var` as a flat (delta-producing) direction: check that its
    /// quadratic coefficient is negligible and return the linear constraint
    /// it enforces together with the remainder functional.
    pub fn extract_flat_delta(&self, var: VarLabel) -> Result<DeltaExtract> {
        let iv = self.layout.flat_index(var)?;
        let scale = max_abs(&self.k).max(1e-300);
        let flatness = self.k[(iv, iv)].norm() / scale;
        let n = self.layout.len();
        let r_idx: Vec<usize> = (0..n).filter(|&i| i != iv).collect();
        // exponent terms with v: -v·(Σ_j K_vj x_j) + b_v·v  (+ negligible v²)
        let constraint = CVector::from_iterator(n - 1, r_idx.iter().map(|&j| self.k[(iv, j)]));
        let bias = self.b[iv];
        let k_new = self.k.select_rows(&r_idx).select_columns(&r_idx);
        let b_new = CVector::from_iterator(n - 1, r_idx.iter().map(|&j| self.b[j]));
        let remaining: Vec<VarLabel> = r_idx.iter().map(|&i| self.layout.label_at(i)).collect();
        let layout = Layout::new(self.layout.grid().clone(), remaining)?;
        Ok(DeltaExtract {
            constraint,
            bias,
            flatness,
            remainder: GaussianFunctional {
                layout,
                k: k_new,
                b: b_new,
                c: self.c,
                boundary: self.boundary,
            },
        })
    }

    /// Residual of the Hermitian symmetry F*[x, x̄] = F[x̄, x]: conjugating
    /// the data and swapping branches must leave (K, b, c) invariant.
    pub fn hermitian_symmetry_residual(&self) -> f64 {
        let n = self.layout.len();
        let mut perm = vec![0usize; n];
        for (i, &l) in self.layout.labels().iter().enumerate() {
            match self.layout.flat_index(l.branch_flipped()) {
                Ok(j) => perm[i] = j,
                Err(_) => return f64::INFINITY,
            }
        }
        let mut res = 0.0f64;
        let scale = max_abs(&self.k).max(max_abs_vec(&self.b)).max(1.0);
        for i in 0..n {
            for j in 0..n {
                res = res.max((self.k[(perm[i], perm[j])].conj() - self.k[(i, j)]).norm());
            }
            res = res.max((self.b[perm[i]].conj() - self.b[i]).norm());
        }
        let two_pi = 2.0 * std::f64::consts::PI;
        let dc = self.c.conj() - self.c;
        let c_res = [-1.0f64, 0.0, 1.0]
            .iter()
            .map(|k| (dc - c(0.0, two_pi * k)).norm())
            .fold(f64::INFINITY, f64::min);
        (res / scale).max(c_res)
    }

    /// Sampled positivity check of the kernel between ket and bra branches.
    ///
    /// Draws `n_samples` i.i.d. N(0, width²) trajectories u⁽ʲ⁾, forms the
    /// Gram matrix Q_jk = F[ket ← u⁽ʲ⁾, bra ← u⁽ᵏ⁾] and checks that Q is
    /// Hermitian and positive semidefinite within `1e-8` of its largest
    /// eigenvalue. The exponent is rescaled by the largest real part before
    /// exponentiating, which leaves definiteness unchanged.
    pub fn positivity_sample_check(
        &self,
        ket_labels: &[VarLabel],
        bra_labels: &[VarLabel],
        n_samples: usize,
        seed: u64,
        width: f64,
    ) -> Result<PositivityReport> {
        if ket_labels.len() != bra_labels.len() {
            return Err(Error::Precondition(
                "ket and bra label lists must pair up one-to-one".into(),
            ));
        }
        if n_samples < 2 {
            return Err(Error::Precondition("need at least 2 samples".into()));
        }
        let mut covered = vec![false; self.layout.len()];
        for &l in ket_labels.iter().chain(bra_labels.iter()) {
            let i = self.layout.flat_index(l)?;
            if covered[i] {
                return Err(Error::Precondition(format!("label {l:?} listed twice")));
            }
            covered[i] = true;
        }
        if !covered.iter().all(|&s| s) {
            return Err(Error::Precondition(
                "ket/bra labels must partition the functional's variables".into(),
            ));
        }

        let m = ket_labels.len();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let samples: Vec<Vec<f64>> = (0..n_samples)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let x: f64 = normal.sample(&mut rng);
                        width * x
                    })
                    .collect()
            })
            .collect();

        let ket_idx: Vec<usize> = ket_labels.iter().map(|&l| self.layout.flat_index(l).unwrap()).collect();
        let bra_idx: Vec<usize> = bra_labels.iter().map(|&l| self.layout.flat_index(l).unwrap()).collect();

        let mut exponents = CMatrix::zeros(n_samples, n_samples);
        let mut max_re = f64::NEG_INFINITY;
        let mut values = vec![0.0f64; self.layout.len()];
        for j in 0..n_samples {
            for k_s in 0..n_samples {
                for (t, &i) in ket_idx.iter().enumerate() {
                    values[i] = samples[j][t];
                }
                for (t, &i) in bra_idx.iter().enumerate() {
                    values[i] = samples[k_s][t];
                }
                let e = self.exponent_at(&values);
                max_re = max_re.max(e.re);
                exponents[(j, k_s)] = e;
            }
        }
        if !max_re.is_finite() {
            return Err(Error::NumericRange("non-finite exponent in positivity sampling".into()));
        }
        let mut q = CMatrix::zeros(n_samples, n_samples);
        for j in 0..n_samples {
            for k_s in 0..n_samples {
                let z = (exponents[(j, k_s)] - cr(max_re)).exp();
                if !z.is_finite() {
                    return Err(Error::NumericRange(
                        "exponent overflow in positivity sampling; rescale c".into(),
                    ));
                }
                q[(j, k_s)] = z;
            }
        }
        let qmax = max_abs(&q).max(1e-300);
        let herm_res = crate::linalg::hermiticity_residual(&q) / qmax;
        let ev = crate::linalg::hermitian_eigenvalues(&q);
        let min_eig = *ev.first().unwrap();
        let max_eig = *ev.last().unwrap();
        let pass = herm_res <= 1e-8 && min_eig >= -1e-8 * max_eig.abs().max(1e-300);
        Ok(PositivityReport { min_eig, max_eig, hermiticity_residual: herm_res, pass })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, TimeGrid, VarKind};

    fn grid2() -> TimeGrid {
        TimeGrid::new(0.0, 1.0, 2).unwrap()
    }

    fn single_var_layout(node: usize) -> Layout {
        Layout::new(grid2(), vec![VarLabel::ket(node)]).unwrap()
    }

    #[test]
    fn multiply_identity() {
        let g = grid2();
        let layout = Layout::new(g, vec![VarLabel::ket(0), VarLabel::ket(1)]).unwrap();
        let mut f = GaussianFunctional::one(layout.clone());
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(1), c(0.3, -0.1));
        f.add_exponent_linear(VarLabel::ket(0), c(0.0, 1.0));
        let one = GaussianFunctional::one(single_var_layout(0));
        let prod = one.multiply(&f).unwrap();
        assert_eq!(prod.quadratic(), f.quadratic());
        assert_eq!(prod.linear(), f.linear());
        assert_eq!(prod.log_prefactor(), f.log_prefactor());
    }

    #[test]
    fn multiply_adds_kernels_on_shared_label() {
        // exp(-x²/2)·exp(-x²/2) = exp(-x²)
        let l = single_var_layout(0);
        let f = GaussianFunctional::from_parts(
            l.clone(),
            CMatrix::from_element(1, 1, cr(1.0)),
            CVector::zeros(1),
            ZERO,
        )
        .unwrap();
        let prod = f.multiply(&f).unwrap();
        assert_eq!(prod.quadratic()[(0, 0)], cr(2.0));
    }

    #[test]
    fn multiply_disjoint_supports_is_block_diagonal() {
        let f = GaussianFunctional::from_parts(
            single_var_layout(0),
            CMatrix::from_element(1, 1, cr(1.0)),
            CVector::zeros(1),
            ZERO,
        )
        .unwrap();
        let g = GaussianFunctional::from_parts(
            single_var_layout(1),
            CMatrix::from_element(1, 1, cr(3.0)),
            CVector::zeros(1),
            ZERO,
        )
        .unwrap();
        let prod = f.multiply(&g).unwrap();
        assert_eq!(prod.layout().len(), 2);
        assert_eq!(prod.quadratic()[(0, 0)], cr(1.0));
        assert_eq!(prod.quadratic()[(1, 1)], cr(3.0));
        assert_eq!(prod.quadratic()[(0, 1)], ZERO);
    }

    #[test]
    fn marginalize_one_dimensional_gaussian() {
        // ∫ exp(-½·2·x² + x) dx = sqrt(2π/2)·exp(1/4)
        let l = single_var_layout(0);
        let f = GaussianFunctional::from_parts(
            l,
            CMatrix::from_element(1, 1, cr(2.0)),
            CVector::from_element(1, cr(1.0)),
            ZERO,
        )
        .unwrap();
        let m = f.marginalize(&[VarLabel::ket(0)]).unwrap();
        let value = m.scalar_value().unwrap();
        let expect = (std::f64::consts::PI).sqrt() * (0.25f64).exp();
        assert!((value.re - expect).abs() < 1e-12 * expect);
        assert!(value.im.abs() < 1e-14);
    }

    #[test]
    fn marginalize_block_leaves_independent_block() {
        let g = grid2();
        let layout = Layout::new(g, vec![VarLabel::ket(0), VarLabel::ket(1)]).unwrap();
        let mut k = CMatrix::zeros(2, 2);
        k[(0, 0)] = cr(1.5);
        k[(1, 1)] = c(2.0, 0.4);
        let f = GaussianFunctional::from_parts(layout, k, CVector::zeros(2), ZERO).unwrap();
        let m = f.marginalize(&[VarLabel::ket(0)]).unwrap();
        assert_eq!(m.quadratic()[(0, 0)], c(2.0, 0.4));
        assert_eq!(m.linear()[0], ZERO);
    }

    #[test]
    fn marginalize_singular_block_rejected() {
        let l = single_var_layout(0);
        let f = GaussianFunctional::from_parts(
            l,
            CMatrix::from_element(1, 1, ZERO),
            CVector::zeros(1),
            ZERO,
        )
        .unwrap();
        assert!(matches!(
            f.marginalize(&[VarLabel::ket(0)]),
            Err(Error::SingularMarginal { .. })
        ));
    }

    #[test]
    fn pin_value_substitutes() {
        // exp(-½x² + xy): pin x = 0 leaves exp over {y} with zero data
        let g = grid2();
        let layout = Layout::new(g, vec![VarLabel::ket(0), VarLabel::ket(1)]).unwrap();
        let mut f = GaussianFunctional::one(layout);
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(0), cr(-0.5));
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(1), cr(1.0));
        let pinned = f.pin_value(VarLabel::ket(0), 0.0).unwrap();
        assert_eq!(pinned.layout().len(), 1);
        assert_eq!(pinned.quadratic()[(0, 0)], ZERO);
        assert_eq!(pinned.linear()[0], ZERO);
        assert_eq!(pinned.log_prefactor(), ZERO);
        // pinning again is a lookup error
        assert!(matches!(
            pinned.pin_value(VarLabel::ket(0), 1.0),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn pin_value_nonzero() {
        let g = grid2();
        let layout = Layout::new(g, vec![VarLabel::ket(0), VarLabel::ket(1)]).unwrap();
        let mut f = GaussianFunctional::one(layout);
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(0), c(-0.5, 0.2));
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(1), c(1.0, -0.3));
        f.add_exponent_linear(VarLabel::ket(0), c(0.1, 0.1));
        let s = 1.7;
        let pinned = f.pin_value(VarLabel::ket(0), s).unwrap();
        // compare against direct evaluation at a y value
        let y = -0.45;
        let full = f.exponent_at_labels(&[(VarLabel::ket(0), s), (VarLabel::ket(1), y)]).unwrap();
        let red = pinned.exponent_at_labels(&[(VarLabel::ket(1), y)]).unwrap();
        assert!((full - red).norm() < 1e-14);
    }

    #[test]
    fn pin_equal_identifies_variables() {
        let g = grid2();
        let layout = Layout::new(
            g,
            vec![VarLabel::ket(0), VarLabel::ket(2), VarLabel::bra(2)],
        )
        .unwrap();
        let mut f = GaussianFunctional::one(layout);
        f.add_exponent_quadratic(VarLabel::ket(2), VarLabel::ket(0), c(0.0, 2.0));
        f.add_exponent_quadratic(VarLabel::bra(2), VarLabel::ket(0), c(0.0, -2.0));
        f.add_exponent_quadratic(VarLabel::ket(2), VarLabel::ket(2), c(0.3, 0.0));
        f.add_exponent_quadratic(VarLabel::bra(2), VarLabel::bra(2), c(0.4, 0.0));
        let idd = f.pin_equal(VarLabel::ket(2), VarLabel::bra(2)).unwrap();
        assert_eq!(idd.layout().len(), 2);
        // coupling to ket(0) cancels, diagonal terms add
        let ik0 = idd.layout().flat_index(VarLabel::ket(0)).unwrap();
        let ik2 = idd.layout().flat_index(VarLabel::ket(2)).unwrap();
        assert!((idd.quadratic()[(ik0, ik2)]).norm() < 1e-15);
        // exponent had 0.3 x² + 0.4 x̄² -> identified: 0.7 x², K entry = -1.4
        assert!((idd.quadratic()[(ik2, ik2)] - cr(-1.4)).norm() < 1e-15);
        // pin_equal with itself is a no-op
        let same = f.pin_equal(VarLabel::ket(2), VarLabel::ket(2)).unwrap();
        assert_eq!(same.layout().len(), 3);
    }

    #[test]
    fn pin_equal_matches_evaluation() {
        let g = grid2();
        let layout = Layout::new(
            g,
            vec![VarLabel::ket(0), VarLabel::ket(1), VarLabel::bra(1)],
        )
        .unwrap();
        let mut f = GaussianFunctional::one(layout);
        f.add_exponent_quadratic(VarLabel::ket(1), VarLabel::ket(0), c(0.2, 0.5));
        f.add_exponent_quadratic(VarLabel::bra(1), VarLabel::bra(1), c(-0.1, 0.2));
        f.add_exponent_linear(VarLabel::bra(1), c(0.7, 0.0));
        let idd = f.pin_equal(VarLabel::ket(1), VarLabel::bra(1)).unwrap();
        let (u, w) = (0.3, -1.2);
        let full = f
            .exponent_at_labels(&[
                (VarLabel::ket(0), u),
                (VarLabel::ket(1), w),
                (VarLabel::bra(1), w),
            ])
            .unwrap();
        let red = idd
            .exponent_at_labels(&[(VarLabel::ket(0), u), (VarLabel::ket(1), w)])
            .unwrap();
        assert!((full - red).norm() < 1e-14);
    }

    #[test]
    fn positivity_rank_one_kernel_passes() {
        // F = K[x]·K*[x̄] with K[x] = exp((−1+2i)·x²/2): kernel of a pure
        // functional, Gram matrix is rank-one PSD.
        let g = grid2();
        let layout = Layout::new(g, vec![VarLabel::ket(0), VarLabel::bra(0)]).unwrap();
        let mut f = GaussianFunctional::one(layout);
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(0), c(-0.5, 1.0));
        f.add_exponent_quadratic(VarLabel::bra(0), VarLabel::bra(0), c(-0.5, -1.0));
        let rep = f
            .positivity_sample_check(&[VarLabel::ket(0)], &[VarLabel::bra(0)], 24, 7, 1.0)
            .unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn positivity_negative_constant_fails() {
        let g = grid2();
        let layout = Layout::new(g, vec![VarLabel::ket(0), VarLabel::bra(0)]).unwrap();
        let mut f = GaussianFunctional::one(layout);
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(0), cr(-0.5));
        f.add_exponent_quadratic(VarLabel::bra(0), VarLabel::bra(0), cr(-0.5));
        f.add_to_log_prefactor(c(0.0, std::f64::consts::PI)); // overall −1
        let rep = f
            .positivity_sample_check(&[VarLabel::ket(0)], &[VarLabel::bra(0)], 24, 7, 1.0)
            .unwrap();
        assert!(!rep.pass);
        assert!(rep.min_eig < 0.0);
    }

    #[test]
    fn hermitian_symmetry_residual_detects_violation() {
        let g = grid2();
        let layout = Layout::new(g, vec![VarLabel::ket(0), VarLabel::bra(0)]).unwrap();
        let mut f = GaussianFunctional::one(layout);
        // symmetric pair: K[x] K*[x̄]
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(0), c(-0.5, 0.8));
        f.add_exponent_quadratic(VarLabel::bra(0), VarLabel::bra(0), c(-0.5, -0.8));
        assert!(f.hermitian_symmetry_residual() < 1e-14);
        // break it
        f.add_exponent_quadratic(VarLabel::ket(0), VarLabel::ket(0), cr(-0.1));
        assert!(f.hermitian_symmetry_residual() > 1e-3);
    }

    #[test]
    fn boundary_slots_participate_in_layouts() {
        let g = grid2();
        let bi = VarLabel { branch: Branch::Ket, node: 0, kind: VarKind::BoundaryInitial };
        let layout = Layout::new(g, vec![bi, VarLabel::ket(0)]).unwrap();
        let mut f = GaussianFunctional::one(layout);
        f.add_exponent_quadratic(bi, VarLabel::ket(0), cr(1.0));
        let pinned = f.pin_equal(VarLabel::ket(0), bi).unwrap();
        assert_eq!(pinned.layout().len(), 1);
    }
}
