//! Constructors for operation functionals.
//!
//! Pure Markovian operations are squares of Kraus functionals: the ket
//! branch carries exp(−i∫H_r), the bra branch the complex conjugate. The
//! continuous weak position measurement is the special case
//! H_r = −i(r−x)²/(4 τ_m); it is momentum-independent, which is what allows
//! it to be paired with position-space process functionals directly.
//! Records can be numeric (fixed readout values) or symbolic (readout-kind
//! variables), and generators may be restricted to a node sub-range so that
//! operations supported on part of the interval compose exactly.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss::GaussianFunctional;
use crate::grid::{Branch, Layout, TimeGrid, VarLabel};
use crate::linalg::{cr, I};

/// A fixed measurement record: one readout value per grid node.
#[derive(Debug, Clone)]
pub struct ReadoutRecord {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl ReadoutRecord {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_steps() + 1 {
            return Err(Error::Invariant(format!(
                "record needs {} values, got {}",
                grid.n_steps() + 1,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("record contains non-finite values".into()));
        }
        Ok(ReadoutRecord { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        let n = grid.n_steps() + 1;
        ReadoutRecord { grid, values: vec![0.0; n] }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Parse the record CSV format `t,r` (header row, nodes in order).
    pub fn parse_csv(text: &str, grid: TimeGrid) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut values = Vec::new();
        let mut times = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(format!("record csv: {e}")))?;
            if rec.len() != 2 {
                return Err(Error::Parse("record csv rows need 2 fields (t,r)".into()));
            }
            times.push(
                rec[0]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("record csv time: {e}")))?,
            );
            values.push(
                rec[1]
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("record csv value: {e}")))?,
            );
        }
        if values.len() != grid.n_steps() + 1 {
            return Err(Error::Parse(format!(
                "record csv has {} rows, grid has {} nodes",
                values.len(),
                grid.n_steps() + 1
            )));
        }
        for (k, &t) in times.iter().enumerate() {
            if (t - grid.node(k)).abs() > 1e-9 * (1.0 + grid.node(k).abs()) {
                return Err(Error::Parse(format!(
                    "record csv time {t} does not match grid node {} at row {k}",
                    grid.node(k)
                )));
            }
        }
        ReadoutRecord::new(grid, values)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,r\n");
        for (k, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{:e},{:e}\n", self.grid.node(k), v));
        }
        out
    }
}

/// Continuous position measurement of strength 1/τ_m on a node range.
#[derive(Debug, Clone)]
pub struct PositionMeasurementSpec {
    grid: TimeGrid,
    tau_m: f64,
    range: (usize, usize),
}

impl PositionMeasurementSpec {
    pub fn new(grid: TimeGrid, tau_m: f64) -> Result<Self> {
        let n = grid.n_steps();
        Self::on_range(grid, tau_m, 0, n)
    }

    /// Measurement supported on nodes `[a, b]` of the grid.
    pub fn on_range(grid: TimeGrid, tau_m: f64, a: usize, b: usize) -> Result<Self> {
        if !(tau_m.is_finite() && tau_m > 0.0) {
            return Err(Error::Domain(format!(
                "measurement time must be positive and finite, got {tau_m}"
            )));
        }
        if b <= a || b > grid.n_steps() {
            return Err(Error::Precondition(format!("bad measurement range [{a}, {b}]")));
        }
        Ok(PositionMeasurementSpec { grid, tau_m, range: (a, b) })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn tau_m(&self) -> f64 {
        self.tau_m
    }

    pub fn range(&self) -> (usize, usize) {
        self.range
    }

    fn node_weight(&self, k: usize) -> f64 {
        self.grid.trapezoid_weight_in(k, self.range.0, self.range.1) * self.grid.dt()
    }
}

/// Operation functional of the position measurement at a fixed record:
/// exp(−(1/4τ_m)·Σ_k w_k dt [(r_k−x_k)² + (r_k−x̄_k)²]) over the range.
pub fn build_position_measurement(
    spec: &PositionMeasurementSpec,
    record: &ReadoutRecord,
) -> Result<GaussianFunctional> {
    if !record.grid().same_as(spec.grid()) {
        return Err(Error::Composition("record grid differs from measurement grid".into()));
    }
    let (a, b) = spec.range;
    let layout = Layout::doubled_range(spec.grid().clone(), a, b)?;
    let mut f = GaussianFunctional::one(layout);
    for k in a..=b {
        let w = spec.node_weight(k);
        let damp = cr(-w / (4.0 * spec.tau_m));
        let r = record.values()[k];
        for branch in [Branch::Ket, Branch::Bra] {
            let x = VarLabel::traj(branch, k);
            f.add_exponent_quadratic(x, x, damp);
            f.add_exponent_linear(x, -2.0 * damp * cr(r));
        }
        f.add_to_log_prefactor(2.0 * damp * cr(r * r));
    }
    Ok(f)
}

/// Same exponent with the record left symbolic: readout-kind variables at
/// the range nodes.
pub fn build_position_measurement_symbolic(
    spec: &PositionMeasurementSpec,
) -> Result<GaussianFunctional> {
    let (a, b) = spec.range;
    let mut labels = Layout::doubled_range(spec.grid().clone(), a, b)?
        .labels()
        .to_vec();
    labels.extend((a..=b).map(VarLabel::readout));
    let layout = Layout::new(spec.grid().clone(), labels)?;
    let mut f = GaussianFunctional::one(layout);
    for k in a..=b {
        let w = spec.node_weight(k);
        let damp = cr(-w / (4.0 * spec.tau_m));
        let r = VarLabel::readout(k);
        for branch in [Branch::Ket, Branch::Bra] {
            let x = VarLabel::traj(branch, k);
            f.add_exponent_quadratic(x, x, damp);
            f.add_exponent_quadratic(r, x, -2.0 * damp);
        }
        f.add_exponent_quadratic(r, r, 2.0 * damp);
    }
    Ok(f)
}

/// One impulsive position-measurement kick.
#[derive(Debug, Clone, Copy)]
pub struct MeasurementKick {
    /// Trajectory node the kick acts on.
    pub node: usize,
    /// Node index used for the readout label.
    pub readout_node: usize,
    /// Effective duration (weight of the kick in the exponent).
    pub duration: f64,
}

/// Sequence of impulsive kicks: exp(−Σ_j (duration_j/4τ_m)[(r_j−x_{n_j})² +
/// (r_j−x̄_{n_j})²]) with symbolic readouts. This is the operation a meter
/// that interacts once per coarse step produces, and is the bridge to the
/// truncated-Fock oracle.
pub fn build_impulsive_measurement(
    grid: &TimeGrid,
    kicks: &[MeasurementKick],
    tau_m: f64,
) -> Result<GaussianFunctional> {
    if !(tau_m.is_finite() && tau_m > 0.0) {
        return Err(Error::Domain("measurement time must be positive and finite".into()));
    }
    let mut labels = Vec::new();
    for k in kicks {
        if k.node > grid.n_steps() || k.readout_node > grid.n_steps() {
            return Err(Error::Precondition(format!("kick node {k:?} outside grid")));
        }
        if !(k.duration.is_finite() && k.duration > 0.0) {
            return Err(Error::Precondition("kick duration must be positive".into()));
        }
        labels.push(VarLabel::ket(k.node));
        labels.push(VarLabel::bra(k.node));
        labels.push(VarLabel::readout(k.readout_node));
    }
    labels.sort();
    labels.dedup();
    let layout = Layout::new(grid.clone(), labels)?;
    let mut f = GaussianFunctional::one(layout);
    for k in kicks {
        let damp = cr(-k.duration / (4.0 * tau_m));
        let r = VarLabel::readout(k.readout_node);
        for branch in [Branch::Ket, Branch::Bra] {
            let x = VarLabel::traj(branch, k.node);
            f.add_exponent_quadratic(x, x, damp);
            f.add_exponent_quadratic(r, x, -2.0 * damp);
        }
        f.add_exponent_quadratic(r, r, 2.0 * damp);
    }
    Ok(f)
}

/// Quadratic non-Hermitian generator H_r(x) = k₂x² + k₁x + k₀ per node, on
/// a node range of the grid.
#[derive(Debug, Clone)]
pub struct KrausSpec {
    grid: TimeGrid,
    range: (usize, usize),
    /// coefficients (k₂, k₁, k₀) for nodes range.0 ..= range.1
    coeffs: Vec<(Complex64, Complex64, Complex64)>,
}

impl KrausSpec {
    pub fn new(
        grid: TimeGrid,
        range: (usize, usize),
        coeffs: Vec<(Complex64, Complex64, Complex64)>,
    ) -> Result<Self> {
        let (a, b) = range;
        if b <= a || b > grid.n_steps() {
            return Err(Error::Precondition(format!("bad generator range [{a}, {b}]")));
        }
        if coeffs.len() != b - a + 1 {
            return Err(Error::Invariant(format!(
                "generator needs {} coefficient triples, got {}",
                b - a + 1,
                coeffs.len()
            )));
        }
        if coeffs
            .iter()
            .any(|(k2, k1, k0)| !(k2.is_finite() && k1.is_finite() && k0.is_finite()))
        {
            return Err(Error::Invariant("non-finite generator coefficients".into()));
        }
        Ok(KrausSpec { grid, range, coeffs })
    }

    /// Constant generator over the whole grid.
    pub fn uniform(grid: TimeGrid, k2: Complex64, k1: Complex64, k0: Complex64) -> Result<Self> {
        let n = grid.n_steps();
        let coeffs = vec![(k2, k1, k0); n + 1];
        Self::new(grid, (0, n), coeffs)
    }

    /// The generator of the continuous weak position measurement,
    /// H_r = −i(r−x)²/(4τ_m), at a fixed record.
    pub fn position_measurement(
        spec: &PositionMeasurementSpec,
        record: &ReadoutRecord,
    ) -> Result<Self> {
        let (a, b) = spec.range();
        let tau = spec.tau_m();
        let coeffs = (a..=b)
            .map(|k| {
                let r = record.values()[k];
                (
                    -I / cr(4.0 * tau),
                    I * cr(r) / cr(2.0 * tau),
                    -I * cr(r * r) / cr(4.0 * tau),
                )
            })
            .collect();
        Self::new(spec.grid().clone(), (a, b), coeffs)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn range(&self) -> (usize, usize) {
        self.range
    }
}

/// Operation functional M_r = K_r[x]·K_r*[x̄] of a pure Markovian
/// measurement: exponent −i·Σ w dt H(x_k) on the ket branch and the complex
/// conjugate on the bra branch.
pub fn build_kraus_functional(spec: &KrausSpec) -> Result<GaussianFunctional> {
    let (a, b) = spec.range;
    let layout = Layout::doubled_range(spec.grid.clone(), a, b)?;
    let mut f = GaussianFunctional::one(layout);
    let dt = spec.grid.dt();
    for k in a..=b {
        let w = cr(spec.grid.trapezoid_weight_in(k, a, b) * dt);
        let (k2, k1, k0) = spec.coeffs[k - a];
        let ket = VarLabel::ket(k);
        let bra = VarLabel::bra(k);
        let q = -I * w * k2;
        let l = -I * w * k1;
        let z = -I * w * k0;
        f.add_exponent_quadratic(ket, ket, q);
        f.add_exponent_linear(ket, l);
        f.add_exponent_quadratic(bra, bra, q.conj());
        f.add_exponent_linear(bra, l.conj());
        f.add_to_log_prefactor(z + z.conj());
    }
    Ok(f)
}

/// Outcome of the Kraus-completeness check.
#[derive(Debug, Clone, Serialize)]
pub struct NormalizationReport {
    /// Largest leftover exponent coefficient on the system variables after
    /// the records are integrated out.
    pub residual: f64,
    /// Log of the record-measure constant absorbed by convention.
    pub absorbed_log_constant: f64,
    pub pass: bool,
}

/// Check ∫D[r] K_r†K_r = 1 for the position measurement: with the records
/// symbolic, the diagonal (x = x̄) exponent of K†K is marginalized over all
/// readout variables and the result must not depend on x.
pub fn check_kraus_normalization(spec: &PositionMeasurementSpec) -> Result<NormalizationReport> {
    let (a, b) = spec.range;
    // Diagonal exponent of K†K: −(1/2τ_m) Σ w dt (r_k − x_k)², built over
    // ket labels and readouts.
    let mut labels: Vec<VarLabel> = (a..=b).map(VarLabel::ket).collect();
    labels.extend((a..=b).map(VarLabel::readout));
    let layout = Layout::new(spec.grid().clone(), labels)?;
    let mut f = GaussianFunctional::one(layout);
    for k in a..=b {
        let w = spec.node_weight(k);
        let damp = cr(-w / (2.0 * spec.tau_m));
        let x = VarLabel::ket(k);
        let r = VarLabel::readout(k);
        f.add_exponent_quadratic(x, x, damp);
        f.add_exponent_quadratic(r, r, damp);
        f.add_exponent_quadratic(r, x, -2.0 * damp);
    }
    let readouts: Vec<VarLabel> = (a..=b).map(VarLabel::readout).collect();
    let marg = f.marginalize(&readouts)?;
    let residual = crate::linalg::max_abs(marg.quadratic())
        .max(crate::linalg::max_abs_vec(marg.linear()));
    Ok(NormalizationReport {
        residual,
        absorbed_log_constant: marg.log_prefactor().re,
        pass: residual <= 1e-10,
    })
}
