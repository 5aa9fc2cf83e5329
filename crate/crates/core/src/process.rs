//! Constructors for process functionals.
//!
//! The working representation is the position-space doubled path integral: a
//! process is exp(i·S) with S the discretized free oscillator action plus a
//! double-time memory action, optionally multiplied by a Gaussian initial
//! state on the first node pair. Quadrature conventions are fixed once and
//! used identically everywhere: forward differences for velocities,
//! trapezoid weights for single and double time integrals. Each one-step
//! kinetic factor carries its canonical normalization `m/(2π dt)` (ket and
//! bra combined) in the log-prefactor so that normalization and
//! trace-preservation become checkable statements instead of conventions.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gauss::{BoundaryTag, FutureBoundary, GaussianFunctional, PastBoundary};
use crate::grid::{Branch, Layout, TimeGrid, VarLabel};
use crate::linalg::{c, cr, CMatrix, CVector, I, ZERO};

/// Discretized two-time influence kernel Ã(t_k, t_l) of the memory action,
/// stored as one 2×2 complex block per node pair.
#[derive(Debug, Clone)]
pub struct MemoryKernel {
    grid: TimeGrid,
    /// Row-major over node pairs: blocks[k * (n+1) + l] = Ã(t_k, t_l).
    blocks: Vec<CMatrix>,
}

impl MemoryKernel {
    pub fn zero(grid: TimeGrid) -> Self {
        let n = grid.n_steps() + 1;
        MemoryKernel { grid, blocks: vec![CMatrix::zeros(2, 2); n * n] }
    }

    /// Validated construction from explicit blocks (row-major node pairs).
    /// Requires the transpose symmetry Ã(t_l, t_k) = Ã(t_k, t_l)ᵀ.
    pub fn from_blocks(grid: TimeGrid, blocks: Vec<CMatrix>) -> Result<Self> {
        let n = grid.n_steps() + 1;
        if blocks.len() != n * n || blocks.iter().any(|b| b.nrows() != 2 || b.ncols() != 2) {
            return Err(Error::Invariant(format!(
                "memory kernel needs {}x{} blocks of size 2x2",
                n, n
            )));
        }
        let kernel = MemoryKernel { grid, blocks };
        let res = kernel.symmetry_residual();
        if res > 1e-10 * (1.0 + kernel.max_abs()) {
            return Err(Error::Invariant(format!(
                "memory kernel violates transpose symmetry: residual {res:.3e}"
            )));
        }
        Ok(kernel)
    }

    /// Built-in family Ã(t, s) = η·e^{−γ|t−s|}·B with a fixed 2×2 structure
    /// `B` (which must be symmetric for the kernel symmetry to hold).
    pub fn exponential(grid: TimeGrid, eta: f64, gamma: f64, structure: &CMatrix) -> Result<Self> {
        if structure.nrows() != 2 || structure.ncols() != 2 {
            return Err(Error::Invariant("kernel structure must be 2x2".into()));
        }
        if (structure[(0, 1)] - structure[(1, 0)]).norm()
            > 1e-12 * (1.0 + structure.iter().map(|z| z.norm()).fold(0.0, f64::max))
        {
            return Err(Error::Invariant(
                "exponential-family structure matrix must be symmetric".into(),
            ));
        }
        if !eta.is_finite() || !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::Domain("exponential kernel needs finite eta, gamma >= 0".into()));
        }
        let n = grid.n_steps() + 1;
        let mut blocks = Vec::with_capacity(n * n);
        for k in 0..n {
            for l in 0..n {
                let w = eta * (-gamma * (grid.node(k) - grid.node(l)).abs()).exp();
                blocks.push(structure * cr(w));
            }
        }
        MemoryKernel::from_blocks(grid, blocks)
    }

    /// Time-ordered kernel generated by a bath correlation function
    /// α(t, s) (defined for t ≥ s):
    ///
    /// ```text
    ///   Ã(t,s) = i·[[−α, α*], [α, −α*]](t,s)        for t > s,
    ///   Ã(t,s) = Ã(s,t)ᵀ                            for t < s,
    /// ```
    ///
    /// with the diagonal symmetrized. This is the structure a linear
    /// position–position coupling to a traced-out environment produces; its
    /// later-time branch sum vanishes, which is what makes causality and
    /// trace preservation exact.
    pub fn from_correlation<F>(grid: TimeGrid, alpha: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> Complex64,
    {
        let n = grid.n_steps() + 1;
        let ordered = |t: f64, s: f64| -> CMatrix {
            let a = alpha(t, s);
            CMatrix::from_row_slice(2, 2, &[-a, a.conj(), a, -a.conj()]) * I
        };
        let mut blocks = vec![CMatrix::zeros(2, 2); n * n];
        for k in 0..n {
            for l in 0..n {
                let (t, s) = (grid.node(k), grid.node(l));
                blocks[k * n + l] = if k > l {
                    ordered(t, s)
                } else if k < l {
                    ordered(s, t).transpose()
                } else {
                    let m = ordered(t, t);
                    (&m + m.transpose()) * cr(0.5)
                };
            }
        }
        MemoryKernel::from_blocks(grid, blocks)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn block(&self, k: usize, l: usize) -> &CMatrix {
        let n = self.grid.n_steps() + 1;
        &self.blocks[k * n + l]
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|z| *z == ZERO))
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// max ‖Ã(t_l,t_k) − Ã(t_k,t_l)ᵀ‖.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.grid.n_steps() + 1;
        let mut r: f64 = 0.0;
        for k in 0..n {
            for l in 0..n {
                let d = self.block(l, k) - self.block(k, l).transpose();
                r = r.max(d.iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        r
    }

    /// Deviation from the conjugation symmetry Ã* = −σ_x Ã σ_x that makes
    /// exp(iS_FV) Hermitian between the two branches.
    pub fn hermitian_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for b in &self.blocks {
            // σ_x M σ_x swaps both indices
            let swapped = CMatrix::from_row_slice(
                2,
                2,
                &[b[(1, 1)], b[(1, 0)], b[(0, 1)], b[(0, 0)]],
            );
            let d = b.map(|z| z.conj()) + swapped;
            r = r.max(d.iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
        r
    }

    /// Parse the kernel-grid CSV format
    /// `t_index,s_index,a11_re,a11_im,a12_re,a12_im,a21_re,a21_im,a22_re,a22_im`.
    /// Missing pairs default to zero; the transpose partner of a row is
    /// filled in automatically when absent.
    pub fn parse_csv(text: &str, grid: TimeGrid) -> Result<Self> {
        let n = grid.n_steps() + 1;
        let mut blocks = vec![CMatrix::zeros(2, 2); n * n];
        let mut given = vec![false; n * n];
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        for record in rdr.records() {
            let rec = record.map_err(|e| Error::Parse(format!("kernel csv: {e}")))?;
            if rec.len() != 10 {
                return Err(Error::Parse(format!(
                    "kernel csv row needs 10 fields, got {}",
                    rec.len()
                )));
            }
            let idx = |i: usize| -> Result<usize> {
                rec[i]
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("kernel csv index: {e}")))
            };
            let val = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("kernel csv value: {e}")))
            };
            let (k, l) = (idx(0)?, idx(1)?);
            if k >= n || l >= n {
                return Err(Error::Parse(format!(
                    "kernel csv node pair ({k},{l}) outside grid with {n} nodes"
                )));
            }
            let m = CMatrix::from_row_slice(
                2,
                2,
                &[
                    c(val(2)?, val(3)?),
                    c(val(4)?, val(5)?),
                    c(val(6)?, val(7)?),
                    c(val(8)?, val(9)?),
                ],
            );
            blocks[k * n + l] = m;
            given[k * n + l] = true;
        }
        for k in 0..n {
            for l in 0..n {
                if given[k * n + l] && !given[l * n + k] {
                    blocks[l * n + k] = blocks[k * n + l].transpose();
                    given[l * n + k] = true;
                }
            }
        }
        MemoryKernel::from_blocks(grid, blocks)
    }

    pub fn to_csv_string(&self) -> String {
        let n = self.grid.n_steps() + 1;
        let mut out =
            String::from("t_index,s_index,a11_re,a11_im,a12_re,a12_im,a21_re,a21_im,a22_re,a22_im\n");
        for k in 0..n {
            for l in 0..n {
                let b = self.block(k, l);
                out.push_str(&format!(
                    "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                    k,
                    l,
                    b[(0, 0)].re,
                    b[(0, 0)].im,
                    b[(0, 1)].re,
                    b[(0, 1)].im,
                    b[(1, 0)].re,
                    b[(1, 0)].im,
                    b[(1, 1)].re,
                    b[(1, 1)].im,
                ));
            }
        }
        out
    }
}

/// Damped harmonic oscillator model: mass, bare frequency, memory kernel.
#[derive(Debug, Clone)]
pub struct ClModel {
    pub mass: f64,
    pub omega0: f64,
    pub kernel: MemoryKernel,
}

impl ClModel {
    pub fn new(mass: f64, omega0: f64, kernel: MemoryKernel) -> Result<Self> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Domain(format!("mass must be positive, got {mass}")));
        }
        if !(omega0.is_finite() && omega0 >= 0.0) {
            return Err(Error::Domain(format!("omega0 must be >= 0, got {omega0}")));
        }
        Ok(ClModel { mass, omega0, kernel })
    }

    pub fn free(mass: f64, omega0: f64, grid: &TimeGrid) -> Result<Self> {
        Self::new(mass, omega0, MemoryKernel::zero(grid.clone()))
    }
}

/// Gaussian density kernel ρ(x, x̄) ∝ exp(−½ XᵀΞX + cᵀX) on a node pair.
#[derive(Debug, Clone)]
pub struct GaussianState {
    xi: CMatrix,
    coeff: CVector,
}

impl GaussianState {
    pub fn new(xi: CMatrix, coeff: CVector) -> Result<Self> {
        if xi.nrows() != 2 || xi.ncols() != 2 || coeff.len() != 2 {
            return Err(Error::Invariant("Gaussian state needs 2x2 Ξ and length-2 c".into()));
        }
        if (xi[(0, 1)] - xi[(1, 0)]).norm() > 1e-10 * (1.0 + xi.iter().map(|z| z.norm()).fold(0.0, f64::max)) {
            return Err(Error::Invariant("Ξ must be symmetric".into()));
        }
        // Hermiticity of the density kernel: swapping x and x̄ plus complex
        // conjugation must be the identity on (Ξ, c).
        let herm_xi = (xi[(0, 0)].conj() - xi[(1, 1)]).norm()
            + (xi[(0, 1)].conj() - xi[(1, 0)]).norm();
        let herm_c = (coeff[0].conj() - coeff[1]).norm();
        let scale = 1.0 + xi.iter().chain(coeff.iter()).map(|z| z.norm()).fold(0.0, f64::max);
        if herm_xi > 1e-10 * scale || herm_c > 1e-10 * scale {
            return Err(Error::Invariant(
                "state kernel is not Hermitian under branch swap + conjugation".into(),
            ));
        }
        let q = Self::diag_precision(&xi);
        if q.re <= 0.0 {
            return Err(Error::Invariant(format!(
                "diagonal quadratic form must have positive real part, got {q}"
            )));
        }
        Ok(GaussianState { xi, coeff })
    }

    fn diag_precision(xi: &CMatrix) -> Complex64 {
        xi[(0, 0)] + xi[(0, 1)] + xi[(1, 0)] + xi[(1, 1)]
    }

    /// Oscillator ground state of frequency `omega` (mass 1): Ξ = ω·I.
    pub fn ground(omega: f64) -> Result<Self> {
        Self::new(CMatrix::identity(2, 2) * cr(omega), CVector::zeros(2))
    }

    /// Coherent state centered at (x0, p0) with ground-state width.
    pub fn coherent(omega: f64, x0: f64, p0: f64) -> Result<Self> {
        let c1 = c(omega * x0, p0);
        Self::new(
            CMatrix::identity(2, 2) * cr(omega),
            CVector::from_vec(vec![c1, c1.conj()]),
        )
    }

    pub fn xi(&self) -> &CMatrix {
        &self.xi
    }

    pub fn coeff(&self) -> &CVector {
        &self.coeff
    }

    /// Log of the factor that makes ∫ρ(x, x)dx = 1.
    pub fn log_norm(&self) -> Complex64 {
        let q = Self::diag_precision(&self.xi);
        let l = self.coeff[0] + self.coeff[1];
        -((2.0 * std::f64::consts::PI) / q).ln() * 0.5 - l * l / (2.0 * q)
    }

    /// The state as a functional over the trajectory pair at `node`,
    /// normalized to unit trace.
    pub fn as_functional(&self, grid: &TimeGrid, node: usize) -> Result<GaussianFunctional> {
        let ket = VarLabel::ket(node);
        let bra = VarLabel::bra(node);
        let layout = Layout::new(grid.clone(), vec![ket, bra])?;
        let ik = layout.flat_index(ket)?;
        let ib = layout.flat_index(bra)?;
        let mut k = CMatrix::zeros(2, 2);
        k[(ik, ik)] = self.xi[(0, 0)];
        k[(ik, ib)] = self.xi[(0, 1)];
        k[(ib, ik)] = self.xi[(1, 0)];
        k[(ib, ib)] = self.xi[(1, 1)];
        let mut b = CVector::zeros(2);
        b[ik] = self.coeff[0];
        b[ib] = self.coeff[1];
        let f = GaussianFunctional::from_parts(layout, k, b, self.log_norm())?;
        Ok(f.with_boundary(BoundaryTag { past: PastBoundary::ClosedState, future: FutureBoundary::Open }))
    }

    /// Build from an (unnormalized) two-variable marginal with ket index
    /// first. The log-prefactor is dropped.
    pub fn from_pair_functional(f: &GaussianFunctional, ket: VarLabel, bra: VarLabel) -> Result<Self> {
        let ik = f.layout().flat_index(ket)?;
        let ib = f.layout().flat_index(bra)?;
        if f.layout().len() != 2 {
            return Err(Error::Precondition(format!(
                "expected a two-variable marginal, got {} variables",
                f.layout().len()
            )));
        }
        let kq = f.quadratic();
        let xi = CMatrix::from_row_slice(
            2,
            2,
            &[kq[(ik, ik)], kq[(ik, ib)], kq[(ib, ik)], kq[(ib, ib)]],
        );
        let coeff = CVector::from_vec(vec![f.linear()[ik], f.linear()[ib]]);
        Self::new(xi, coeff)
    }

    /// First and second moments of position and momentum read off the
    /// kernel: (⟨x⟩, ⟨p⟩, ⟨x²⟩, ⟨p²⟩, ⟨(xp+px)/2⟩).
    pub fn moments(&self) -> StateMoments {
        let q = Self::diag_precision(&self.xi);
        let l = self.coeff[0] + self.coeff[1];
        let mu = (l / q).re;
        let var = (1.0 / q).re;
        let a = self.xi[(0, 0)] + self.xi[(0, 1)];
        let c1 = self.coeff[0];
        let mean_p = (-I * (c1 - a * cr(mu))).re;
        let e_sq = mu * mu + var;
        let p_sq = (self.xi[(0, 0)]
            - ((c1 - a * cr(mu)) * (c1 - a * cr(mu)) + a * a * cr(var)))
            .re;
        let sym = (-I * (c1 * cr(mu) - a * cr(e_sq) + cr(0.5))).re;
        StateMoments { mean_x: mu, mean_p, x_sq: e_sq, p_sq, sym_xp: sym }
    }
}

/// Position/momentum moments of a Gaussian state kernel.
#[derive(Debug, Clone, Copy)]
pub struct StateMoments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub x_sq: f64,
    pub p_sq: f64,
    pub sym_xp: f64,
}

/// Boundary handling of a built process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Initial state attached; the final trace identification is owed (and
    /// applied by consumers).
    Closed,
    /// Initial state attached, final node pair left free.
    OpenFuture,
    /// Neither initial state nor final identification.
    OpenBoundary,
}

/// exp(i·S₀) over the doubled trajectory on node range `[a, b]` of `grid`.
pub(crate) fn free_action_range(
    model: &ClModel,
    grid: &TimeGrid,
    a: usize,
    b: usize,
) -> Result<GaussianFunctional> {
    if b <= a || b > grid.n_steps() {
        return Err(Error::Precondition(format!("bad node range [{a}, {b}]")));
    }
    let layout = Layout::doubled_range(grid.clone(), a, b)?;
    let mut f = GaussianFunctional::one(layout);
    let dt = grid.dt();
    let m = model.mass;
    let kin = I * cr(m / (2.0 * dt));
    for k in a..b {
        for (branch, sign) in [(Branch::Ket, 1.0), (Branch::Bra, -1.0)] {
            let lo = VarLabel::traj(branch, k);
            let hi = VarLabel::traj(branch, k + 1);
            let s = cr(sign);
            f.add_exponent_quadratic(lo, lo, kin * s);
            f.add_exponent_quadratic(hi, hi, kin * s);
            f.add_exponent_quadratic(lo, hi, -2.0 * kin * s);
        }
    }
    if model.omega0 > 0.0 {
        let pot = I * cr(-0.5 * m * model.omega0 * model.omega0 * dt);
        for k in a..=b {
            let w = cr(grid.trapezoid_weight_in(k, a, b));
            f.add_exponent_quadratic(VarLabel::ket(k), VarLabel::ket(k), pot * w);
            f.add_exponent_quadratic(VarLabel::bra(k), VarLabel::bra(k), -pot * w);
        }
    }
    // canonical per-step normalization (ket and bra factors combined)
    f.add_to_log_prefactor(cr((b - a) as f64 * (m / (2.0 * std::f64::consts::PI * dt)).ln()));
    Ok(f)
}

/// Doubled free oscillator action exp(i·S₀) on the whole grid.
pub fn build_free_action(model: &ClModel, grid: &TimeGrid) -> Result<GaussianFunctional> {
    free_action_range(model, grid, 0, grid.n_steps())
}

pub(crate) fn memory_action_range(
    kernel: &MemoryKernel,
    grid: &TimeGrid,
    a: usize,
    b: usize,
) -> Result<GaussianFunctional> {
    if !kernel.grid().same_as(grid) {
        return Err(Error::Composition("memory kernel grid differs from working grid".into()));
    }
    let res = kernel.symmetry_residual();
    if res > 1e-10 * (1.0 + kernel.max_abs()) {
        return Err(Error::Invariant(format!(
            "memory kernel violates transpose symmetry: residual {res:.3e}"
        )));
    }
    let layout = Layout::doubled_range(grid.clone(), a, b)?;
    let mut f = GaussianFunctional::one(layout);
    let dt2 = grid.dt() * grid.dt();
    let branches = [Branch::Ket, Branch::Bra];
    for k in a..=b {
        let wk = grid.trapezoid_weight_in(k, a, b);
        // same-node terms
        let blk = kernel.block(k, k);
        let base = -0.5 * I * cr(dt2 * wk * wk);
        for (ia, &ba) in branches.iter().enumerate() {
            for (ib, &bb) in branches.iter().enumerate() {
                if ia < ib {
                    f.add_exponent_quadratic(
                        VarLabel::traj(ba, k),
                        VarLabel::traj(bb, k),
                        base * (blk[(ia, ib)] + blk[(ib, ia)]),
                    );
                } else if ia == ib {
                    f.add_exponent_quadratic(
                        VarLabel::traj(ba, k),
                        VarLabel::traj(bb, k),
                        base * blk[(ia, ib)],
                    );
                }
            }
        }
        // distinct node pairs, counted once
        for l in (k + 1)..=b {
            let wl = grid.trapezoid_weight_in(l, a, b);
            let blk = kernel.block(k, l);
            let coeff = -I * cr(dt2 * wk * wl);
            for (ia, &ba) in branches.iter().enumerate() {
                for (ib, &bb) in branches.iter().enumerate() {
                    let z = blk[(ia, ib)];
                    if z != ZERO {
                        f.add_exponent_quadratic(
                            VarLabel::traj(ba, k),
                            VarLabel::traj(bb, l),
                            coeff * z,
                        );
                    }
                }
            }
        }
    }
    Ok(f)
}

/// exp(i·S_FV) with trapezoid double-time weights on the whole grid.
pub fn build_memory_action(kernel: &MemoryKernel, grid: &TimeGrid) -> Result<GaussianFunctional> {
    memory_action_range(kernel, grid, 0, grid.n_steps())
}

/// Full process functional: free action × memory action, with the initial
/// state attached unless `boundary` is open and the future identification
/// recorded as deferred for the closed case.
pub fn build_cl_process(
    model: &ClModel,
    grid: &TimeGrid,
    state: &GaussianState,
    boundary: Boundary,
) -> Result<GaussianFunctional> {
    let free = build_free_action(model, grid)?;
    let f = if model.kernel.is_zero() {
        free
    } else {
        free.multiply(&build_memory_action(&model.kernel, grid)?)?
    };
    let (f, past) = match boundary {
        Boundary::OpenBoundary => (f, PastBoundary::Open),
        Boundary::Closed | Boundary::OpenFuture => {
            (f.multiply(&state.as_functional(grid, 0)?)?, PastBoundary::ClosedState)
        }
    };
    let future = match boundary {
        Boundary::Closed => FutureBoundary::DeferredIdentity,
        _ => FutureBoundary::Open,
    };
    Ok(f.with_boundary(BoundaryTag { past, future }))
}

/// Product of independent open-boundary segment functionals on a node
/// tiling of the grid. Segment kernels only act within their own range, so
/// the result has no couplings across segment cuts.
pub fn build_markovian_process(
    segments: &[(ClModel, (usize, usize))],
    grid: &TimeGrid,
) -> Result<GaussianFunctional> {
    if segments.is_empty() {
        return Err(Error::Precondition("need at least one segment".into()));
    }
    let mut expected = 0usize;
    for (_, (a, b)) in segments {
        if *a != expected {
            return Err(Error::Precondition(format!(
                "segments do not tile the grid: expected start {expected}, got {a}"
            )));
        }
        if b <= a {
            return Err(Error::Precondition(format!("empty segment [{a}, {b}]")));
        }
        expected = *b;
    }
    if expected != grid.n_steps() {
        return Err(Error::Precondition(format!(
            "segments end at node {expected}, grid has {} steps",
            grid.n_steps()
        )));
    }
    let mut out: Option<GaussianFunctional> = None;
    for (model, (a, b)) in segments {
        if !model.kernel.grid().same_as(grid) {
            return Err(Error::Composition("segment kernel grid differs from working grid".into()));
        }
        let mut seg = free_action_range(model, grid, *a, *b)?;
        if !model.kernel.is_zero() {
            seg = seg.multiply(&memory_action_range(&model.kernel, grid, *a, *b)?)?;
        }
        out = Some(match out {
            None => seg,
            Some(acc) => acc.multiply(&seg)?,
        });
    }
    Ok(out.unwrap().with_boundary(BoundaryTag::open()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, rel_mat_diff};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn free_action_single_step_blocks() {
        let g = TimeGrid::new(0.0, 0.25, 1).unwrap();
        let model = ClModel::free(1.0, 0.0, &g).unwrap();
        let f = build_free_action(&model, &g).unwrap();
        let dt = g.dt();
        let k = f.quadratic();
        let idx = |l: VarLabel| f.layout().flat_index(l).unwrap();
        let (k0, k1) = (idx(VarLabel::ket(0)), idx(VarLabel::ket(1)));
        let (b0, b1) = (idx(VarLabel::bra(0)), idx(VarLabel::bra(1)));
        // ket block −i/dt·[[1,−1],[−1,1]], bra block the conjugate
        assert!((k[(k0, k0)] - c(0.0, -1.0 / dt)).norm() < 1e-14);
        assert!((k[(k0, k1)] - c(0.0, 1.0 / dt)).norm() < 1e-14);
        assert!((k[(k1, k1)] - c(0.0, -1.0 / dt)).norm() < 1e-14);
        assert!((k[(b0, b0)] - c(0.0, 1.0 / dt)).norm() < 1e-14);
        assert!((k[(b0, b1)] - c(0.0, -1.0 / dt)).norm() < 1e-14);
        assert!((k[(k0, b0)]).norm() == 0.0);
    }

    #[test]
    fn free_action_frequency_adds_trapezoid_diagonal() {
        let g = grid(2);
        let m0 = ClModel::free(1.0, 0.0, &g).unwrap();
        let m1 = ClModel::free(1.0, 2.0, &g).unwrap();
        let f0 = build_free_action(&m0, &g).unwrap();
        let f1 = build_free_action(&m1, &g).unwrap();
        let d = f1.quadratic() - f0.quadratic();
        let idx = |l: VarLabel| f1.layout().flat_index(l).unwrap();
        let dt = g.dt();
        // exponent gets −i·m ω₀² dt w_k/2 · x_k² → K += +i·m ω₀² dt w_k
        let expect = |w: f64| c(0.0, 1.0 * 4.0 * dt * w);
        assert!((d[(idx(VarLabel::ket(0)), idx(VarLabel::ket(0)))] - expect(0.5)).norm() < 1e-14);
        assert!((d[(idx(VarLabel::ket(1)), idx(VarLabel::ket(1)))] - expect(1.0)).norm() < 1e-14);
        assert!(
            (d[(idx(VarLabel::bra(2)), idx(VarLabel::bra(2)))] + expect(0.5)).norm() < 1e-14
        );
    }

    #[test]
    fn free_action_on_smooth_path_matches_integral() {
        // evaluate iS₀ on x(t) = sin(πt), x̄ = 0 and compare with the exact
        // action of that path
        let n = 32;
        let g = grid(n);
        let model = ClModel::free(1.3, 0.9, &g).unwrap();
        let f = build_free_action(&model, &g).unwrap();
        let mut assignment = Vec::new();
        for k in 0..=n {
            let t = g.node(k);
            assignment.push((VarLabel::ket(k), (std::f64::consts::PI * t).sin()));
            assignment.push((VarLabel::bra(k), 0.0));
        }
        let e = f.exponent_at_labels(&assignment).unwrap() - f.log_prefactor();
        // S = (m/2)∫ ẋ² − ω₀² x² = (m/2)(π²/2 − ω₀²/2) for this path on [0,1]
        let pi = std::f64::consts::PI;
        let s_exact = 0.5 * 1.3 * (pi * pi * 0.5 - 0.9 * 0.9 * 0.5);
        let want = I * cr(s_exact);
        assert!(
            (e - want).norm() < 0.01 * want.norm(),
            "discrete action {e}, exact {want}"
        );
    }

    #[test]
    fn memory_action_zero_kernel_is_one() {
        let g = grid(2);
        let kernel = MemoryKernel::zero(g.clone());
        let f = build_memory_action(&kernel, &g).unwrap();
        assert_eq!(max_abs(f.quadratic()), 0.0);
        assert_eq!(f.log_prefactor(), ZERO);
    }

    #[test]
    fn memory_action_matches_direct_double_sum() {
        // all-ones structure at N=2, checked against the raw discretized
        // double integral on a fixed path pair
        let g = grid(2);
        let ones = CMatrix::from_element(2, 2, cr(1.0));
        let kernel = MemoryKernel::exponential(g.clone(), 0.7, 1.3, &ones).unwrap();
        let f = build_memory_action(&kernel, &g).unwrap();
        let path = [0.4, -0.2, 0.9];
        let barpath = [-0.1, 0.3, 0.5];
        let mut assignment = Vec::new();
        for k in 0..=2 {
            assignment.push((VarLabel::ket(k), path[k]));
            assignment.push((VarLabel::bra(k), barpath[k]));
        }
        let got = f.exponent_at_labels(&assignment).unwrap();
        // direct sum of −(i/2)·ΣΣ w_k w_l dt² xᵀ(t_k) Ã x(t_l)
        let dt2 = g.dt() * g.dt();
        let mut s = ZERO;
        for k in 0..=2usize {
            for l in 0..=2usize {
                let w = g.trapezoid_weight(k) * g.trapezoid_weight(l);
                let blk = kernel.block(k, l);
                let xk = [path[k], barpath[k]];
                let xl = [path[l], barpath[l]];
                for a in 0..2 {
                    for b in 0..2 {
                        s += cr(w * dt2 * xk[a] * xl[b]) * blk[(a, b)];
                    }
                }
            }
        }
        let want = -0.5 * I * s;
        assert!((got - want).norm() < 1e-13 * want.norm().max(1.0));
    }

    #[test]
    fn asymmetric_kernel_rejected() {
        let g = grid(1);
        let n = 2usize;
        let mut blocks = vec![CMatrix::zeros(2, 2); n * n];
        blocks[1] = CMatrix::from_row_slice(2, 2, &[cr(1.0), cr(2.0), cr(3.0), cr(4.0)]);
        // transpose partner deliberately wrong
        blocks[2] = CMatrix::from_row_slice(2, 2, &[cr(1.0), cr(2.0), cr(3.0), cr(4.0)]);
        assert!(matches!(
            MemoryKernel::from_blocks(g, blocks),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn cl_process_unitary_is_hermitian_symmetric() {
        let g = grid(4);
        let model = ClModel::free(1.0, 1.0, &g).unwrap();
        let state = GaussianState::ground(1.0).unwrap();
        for boundary in [Boundary::OpenBoundary, Boundary::Closed] {
            let w = build_cl_process(&model, &g, &state, boundary).unwrap();
            assert!(w.hermitian_symmetry_residual() < 1e-12);
        }
    }

    #[test]
    fn cl_process_with_memory_is_hermitian_symmetric() {
        let g = grid(4);
        let b = CMatrix::from_row_slice(2, 2, &[c(0.0, -1.0), c(0.0, 1.0), c(0.0, 1.0), c(0.0, -1.0)]);
        let kernel = MemoryKernel::exponential(g.clone(), 0.3, 1.0, &b).unwrap();
        assert!(kernel.hermitian_residual() < 1e-14);
        let model = ClModel::new(1.0, 1.0, kernel).unwrap();
        let state = GaussianState::ground(1.0).unwrap();
        let w = build_cl_process(&model, &g, &state, Boundary::Closed).unwrap();
        assert!(w.hermitian_symmetry_residual() < 1e-12);
    }

    #[test]
    fn markovian_single_segment_equals_open_boundary_process() {
        let g = grid(3);
        let model = ClModel::free(1.0, 0.7, &g).unwrap();
        let state = GaussianState::ground(1.0).unwrap();
        let prod = build_markovian_process(&[(model.clone(), (0, 3))], &g).unwrap();
        let direct = build_cl_process(&model, &g, &state, Boundary::OpenBoundary).unwrap();
        assert!(rel_mat_diff(prod.quadratic(), direct.quadratic(), 1.0) < 1e-14);
        assert!((prod.log_prefactor() - direct.log_prefactor()).norm() < 1e-12);
    }

    #[test]
    fn markovian_product_has_no_cross_segment_couplings() {
        let g = grid(4);
        let model = ClModel::free(1.0, 1.0, &g).unwrap();
        let w = build_markovian_process(
            &[(model.clone(), (0, 2)), (model.clone(), (2, 4))],
            &g,
        )
        .unwrap();
        let k = w.quadratic();
        let idx = |l: VarLabel| w.layout().flat_index(l).unwrap();
        for past in 0..2usize {
            for fut in 3..=4usize {
                for ba in [Branch::Ket, Branch::Bra] {
                    for bb in [Branch::Ket, Branch::Bra] {
                        let z = k[(idx(VarLabel::traj(ba, past)), idx(VarLabel::traj(bb, fut)))];
                        assert_eq!(z, ZERO, "coupling between node {past} and {fut}");
                    }
                }
            }
        }
    }

    #[test]
    fn markovian_rejects_non_tiling() {
        let g = grid(4);
        let model = ClModel::free(1.0, 1.0, &g).unwrap();
        assert!(build_markovian_process(&[(model.clone(), (0, 2)), (model.clone(), (3, 4))], &g)
            .is_err());
        assert!(build_markovian_process(&[(model.clone(), (0, 2))], &g).is_err());
    }

    #[test]
    fn markovian_rejects_mismatched_grids() {
        let g = grid(4);
        let other = grid(8);
        let model = ClModel::free(1.0, 1.0, &other).unwrap();
        assert!(matches!(
            build_markovian_process(&[(model, (0, 4))], &g),
            Err(Error::Composition(_))
        ));
    }

    #[test]
    fn refinement_converges_on_smooth_paths() {
        // exponent on a fixed smooth path pair converges at least first
        // order in dt
        let pi = std::f64::consts::PI;
        let path = |t: f64| (pi * t).sin() + 0.3 * t;
        let barpath = |t: f64| 0.5 * (pi * t).cos();
        let eval = |n: usize| -> Complex64 {
            let g = grid(n);
            let bmat =
                CMatrix::from_row_slice(2, 2, &[c(0.0, -1.0), c(0.0, 1.0), c(0.0, 1.0), c(0.0, -1.0)]);
            let kernel = MemoryKernel::exponential(g.clone(), 0.4, 2.0, &bmat).unwrap();
            let model = ClModel::new(1.0, 1.0, kernel).unwrap();
            let w = build_cl_process(
                &model,
                &g,
                &GaussianState::ground(1.0).unwrap(),
                Boundary::OpenBoundary,
            )
            .unwrap();
            let mut assignment = Vec::new();
            for k in 0..=n {
                let t = g.node(k);
                assignment.push((VarLabel::ket(k), path(t)));
                assignment.push((VarLabel::bra(k), barpath(t)));
            }
            w.exponent_at_labels(&assignment).unwrap() - w.log_prefactor()
        };
        let e1 = eval(16);
        let e2 = eval(32);
        let e4 = eval(64);
        let d12 = (e1 - e4).norm();
        let d24 = (e2 - e4).norm();
        assert!(
            d24 < 0.6 * d12,
            "no first-order convergence: {d12:.3e} -> {d24:.3e}"
        );
    }

    #[test]
    fn kernel_csv_round_trip() {
        let g = grid(2);
        let bmat = CMatrix::from_row_slice(2, 2, &[c(0.0, -1.0), c(0.2, 0.5), c(0.2, 0.5), c(0.0, -1.0)]);
        let kernel = MemoryKernel::exponential(g.clone(), 0.8, 0.5, &bmat).unwrap();
        let text = kernel.to_csv_string();
        let parsed = MemoryKernel::parse_csv(&text, g).unwrap();
        for k in 0..=2usize {
            for l in 0..=2usize {
                let d = parsed.block(k, l) - kernel.block(k, l);
                assert!(d.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
            }
        }
    }

    #[test]
    fn correlation_kernel_has_causal_branch_sums() {
        let g = grid(3);
        let kernel =
            MemoryKernel::from_correlation(g.clone(), |t, s| c(0.3, -0.1) * cr((-(t - s)).exp()))
                .unwrap();
        assert!(kernel.hermitian_residual() < 1e-12);
        // later-time branch sum 1ᵀÃ(t,s) vanishes for t > s, and the full
        // scalar sum vanishes at coincident times
        for k in 0..=3usize {
            for l in 0..k {
                let b = kernel.block(k, l);
                let col_sum0 = b[(0, 0)] + b[(1, 0)];
                let col_sum1 = b[(0, 1)] + b[(1, 1)];
                assert!(col_sum0.norm() < 1e-14 && col_sum1.norm() < 1e-14);
            }
            let d = kernel.block(k, k);
            let total: Complex64 = d.iter().sum();
            assert!(total.norm() < 1e-14);
        }
    }

    #[test]
    fn state_moments_ground_and_coherent() {
        let s = GaussianState::ground(2.0).unwrap();
        let m = s.moments();
        assert!((m.mean_x).abs() < 1e-14);
        assert!((m.mean_p).abs() < 1e-14);
        assert!((m.x_sq - 1.0 / (2.0 * 2.0)).abs() < 1e-14);
        assert!((m.p_sq - 2.0 / 2.0).abs() < 1e-14);
        assert!((m.sym_xp).abs() < 1e-14);

        let s = GaussianState::coherent(1.5, 0.7, -0.4).unwrap();
        let m = s.moments();
        assert!((m.mean_x - 0.7).abs() < 1e-12);
        assert!((m.mean_p + 0.4).abs() < 1e-12);
        assert!((m.x_sq - (0.49 + 1.0 / 3.0)).abs() < 1e-12);
        assert!((m.p_sq - (0.16 + 0.75)).abs() < 1e-12);
        assert!((m.sym_xp - 0.7 * -0.4).abs() < 1e-12);
    }

    #[test]
    fn state_rejects_non_hermitian() {
        let xi = CMatrix::from_row_slice(2, 2, &[cr(1.0), ZERO, ZERO, cr(2.0)]);
        assert!(GaussianState::new(xi, CVector::zeros(2)).is_err());
        let xi = CMatrix::from_row_slice(2, 2, &[cr(-1.0), ZERO, ZERO, cr(-1.0)]);
        assert!(GaussianState::new(xi, CVector::zeros(2)).is_err());
    }
}
