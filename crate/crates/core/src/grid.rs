//! Uniform time grids and the labeling of doubled (ket/bra) trajectory
//! variables.
//!
//! Every functional in this crate is a quadratic form over a finite set of
//! real variables. The variables are named by [`VarLabel`]: which branch of
//! the doubled trajectory they belong to, which grid node they sit on, and
//! whether they are ordinary trajectory values, boundary slots, or readout
//! values. A [`Layout`] fixes the order in which a functional's variables
//! are flattened into vectors and matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform discretization of a time interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_i: f64,
    t_f: f64,
    n_steps: usize,
    dt: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Build a uniform grid with `n_steps` steps on `[t_i, t_f]`.
    pub fn new(t_i: f64, t_f: f64, n_steps: usize) -> Result<Self> {
        if !t_i.is_finite() || !t_f.is_finite() {
            return Err(Error::Domain(format!(
                "grid endpoints must be finite, got [{t_i}, {t_f}]"
            )));
        }
        if t_f <= t_i {
            return Err(Error::Domain(format!(
                "grid requires t_f > t_i, got [{t_i}, {t_f}]"
            )));
        }
        if n_steps == 0 {
            return Err(Error::Domain("grid requires n_steps >= 1".into()));
        }
        let span = t_f - t_i;
        let dt = span / n_steps as f64;
        let mut nodes: Vec<f64> = (0..=n_steps)
            .map(|k| t_i + (k as f64 * span) / n_steps as f64)
            .collect();
        // Pin the endpoints exactly; interior nodes keep the multiply-first
        // form so that halving the step leaves even-index nodes bit-identical.
        nodes[0] = t_i;
        nodes[n_steps] = t_f;
        Ok(Self { t_i, t_f, n_steps, dt, nodes })
    }

    pub fn t_i(&self) -> f64 {
        self.t_i
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Trapezoid weight of node `k`: 1/2 at the endpoints, 1 inside.
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_steps {
            0.5
        } else {
            1.0
        }
    }

    /// Trapezoid weight of node `k` for an integral restricted to the node
    /// range `[a, b]` of this grid.
    pub fn trapezoid_weight_in(&self, k: usize, a: usize, b: usize) -> f64 {
        debug_assert!(a <= k && k <= b);
        if k == a || k == b {
            0.5
        } else {
            1.0
        }
    }

    /// Two grids are interchangeable when all defining data coincide.
    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.n_steps == other.n_steps && self.t_i == other.t_i && self.t_f == other.t_f
    }
}

/// Ket (`x`) or bra (`x̄`) branch of the doubled trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Ket,
    Bra,
}

impl Branch {
    pub fn flipped(self) -> Branch {
        match self {
            Branch::Ket => Branch::Bra,
            Branch::Bra => Branch::Ket,
        }
    }
}

/// Role a variable plays within a functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VarKind {
    /// A trajectory value x(t_k) or x̄(t_k).
    Trajectory,
    /// A retained initial-boundary slot, distinct from the trajectory value.
    BoundaryInitial,
    /// A retained final-boundary slot.
    BoundaryFinal,
    /// A measurement-record value r(t_k). Readouts are not doubled; by
    /// convention they carry the ket branch tag.
    Readout,
}

/// Name of one real variable of a functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarLabel {
    pub branch: Branch,
    pub node: usize,
    pub kind: VarKind,
}

impl VarLabel {
    pub fn traj(branch: Branch, node: usize) -> Self {
        VarLabel { branch, node, kind: VarKind::Trajectory }
    }

    pub fn ket(node: usize) -> Self {
        Self::traj(Branch::Ket, node)
    }

    pub fn bra(node: usize) -> Self {
        Self::traj(Branch::Bra, node)
    }

    pub fn readout(node: usize) -> Self {
        VarLabel { branch: Branch::Ket, node, kind: VarKind::Readout }
    }

    /// Same label on the opposite branch; readouts are fixed points.
    pub fn branch_flipped(self) -> Self {
        match self.kind {
            VarKind::Readout => self,
            _ => VarLabel { branch: self.branch.flipped(), ..self },
        }
    }

    /// Canonical ordering key: ket trajectory nodes, then bra trajectory
    /// nodes, then boundary slots, then readout slots.
    fn order_key(&self) -> (u8, usize, u8) {
        let branch_rank = match self.branch {
            Branch::Ket => 0u8,
            Branch::Bra => 1u8,
        };
        match self.kind {
            VarKind::Trajectory => (branch_rank, self.node, 0),
            VarKind::BoundaryInitial => (2, self.node, branch_rank),
            VarKind::BoundaryFinal => (2, self.node, 2 + branch_rank),
            VarKind::Readout => (3, self.node, 0),
        }
    }
}

impl PartialOrd for VarLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VarLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.order_key().cmp(&other.order_key())
    }
}

/// Ordered variable set of one functional, tied to a grid.
///
/// Labels are kept in the canonical order so that functionals over the same
/// variable set always agree on the flattened index of each label.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    grid: TimeGrid,
    labels: Vec<VarLabel>,
}

impl Layout {
    /// Layout over an explicit label set. Labels are deduplicated and sorted
    /// into canonical order; node indices must lie on the grid.
    pub fn new(grid: TimeGrid, mut labels: Vec<VarLabel>) -> Result<Self> {
        labels.sort();
        let before = labels.len();
        labels.dedup();
        if labels.len() != before {
            return Err(Error::Invariant("duplicate labels in layout".into()));
        }
        for l in &labels {
            if l.node > grid.n_steps() {
                return Err(Error::UnknownLabel(*l));
            }
        }
        Ok(Self { grid, labels })
    }

    /// Both branches of all trajectory nodes of the grid.
    pub fn doubled_trajectory(grid: TimeGrid) -> Self {
        let n = grid.n_steps();
        Self::doubled_range(grid, 0, n).expect("full range is valid")
    }

    /// Both branches of the trajectory nodes `a ..= b`.
    pub fn doubled_range(grid: TimeGrid, a: usize, b: usize) -> Result<Self> {
        if b < a || b > grid.n_steps() {
            return Err(Error::Domain(format!("bad node range [{a}, {b}]")));
        }
        let mut labels = Vec::with_capacity(2 * (b - a + 1));
        for k in a..=b {
            labels.push(VarLabel::ket(k));
        }
        for k in a..=b {
            labels.push(VarLabel::bra(k));
        }
        Ok(Self { grid, labels })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn labels(&self) -> &[VarLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: VarLabel) -> bool {
        self.labels.binary_search(&label).is_ok()
    }

    /// Flattened 0-based index of `label`.
    pub fn flat_index(&self, label: VarLabel) -> Result<usize> {
        self.labels
            .binary_search(&label)
            .map_err(|_| Error::UnknownLabel(label))
    }

    pub fn label_at(&self, index: usize) -> VarLabel {
        self.labels[index]
    }

    /// Layout over the union of the two label sets. Grids must coincide.
    pub fn merged(&self, other: &Layout) -> Result<Layout> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::Composition(format!(
                "grids differ: [{}, {}] x {} vs [{}, {}] x {}",
                self.grid.t_i(),
                self.grid.t_f(),
                self.grid.n_steps(),
                other.grid.t_i(),
                other.grid.t_f(),
                other.grid.n_steps()
            )));
        }
        let mut labels: Vec<VarLabel> = self
            .labels
            .iter()
            .chain(other.labels.iter())
            .copied()
            .collect();
        labels.sort();
        labels.dedup();
        Ok(Layout { grid: self.grid.clone(), labels })
    }

    /// Layout with `remove` dropped.
    pub fn without(&self, remove: &[VarLabel]) -> Layout {
        let labels = self
            .labels
            .iter()
            .copied()
            .filter(|l| !remove.contains(l))
            .collect();
        Layout { grid: self.grid.clone(), labels }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_nodes_and_dt() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.dt(), 0.25);
    }

    #[test]
    fn grid_single_step() {
        let g = TimeGrid::new(-1.0, 1.0, 1).unwrap();
        assert_eq!(g.nodes(), &[-1.0, 1.0]);
        assert_eq!(g.dt(), 2.0);
    }

    #[test]
    fn grid_degenerate_interval_rejected() {
        assert!(matches!(TimeGrid::new(0.0, 0.0, 4), Err(Error::Domain(_))));
        assert!(matches!(TimeGrid::new(0.0, 1.0, 0), Err(Error::Domain(_))));
        assert!(matches!(
            TimeGrid::new(0.0, f64::INFINITY, 4),
            Err(Error::Domain(_))
        ));
        assert!(matches!(TimeGrid::new(f64::NAN, 1.0, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn grid_refinement_matches_on_even_nodes() {
        for &(t_i, t_f, n) in &[(0.0, 1.0, 8usize), (0.3, 1.7, 5), (-2.5, 3.1, 16)] {
            let coarse = TimeGrid::new(t_i, t_f, n).unwrap();
            let fine = TimeGrid::new(t_i, t_f, 2 * n).unwrap();
            for k in 0..=n {
                assert_eq!(coarse.node(k), fine.node(2 * k), "node {k}");
            }
        }
    }

    #[test]
    fn grid_uniformity() {
        let g = TimeGrid::new(0.1, 0.9, 7).unwrap();
        for k in 0..g.n_steps() {
            let h = g.node(k + 1) - g.node(k);
            assert!((h - g.dt()).abs() <= 1e-12 * g.dt());
        }
        assert_eq!(g.node(0), 0.1);
        assert_eq!(g.node(7), 0.9);
    }

    #[test]
    fn flat_index_ordering_convention() {
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let layout = Layout::doubled_trajectory(g);
        assert_eq!(layout.flat_index(VarLabel::ket(0)).unwrap(), 0);
        assert_eq!(layout.flat_index(VarLabel::ket(1)).unwrap(), 1);
        assert_eq!(layout.flat_index(VarLabel::ket(2)).unwrap(), 2);
        assert_eq!(layout.flat_index(VarLabel::bra(0)).unwrap(), 3);
        assert_eq!(layout.flat_index(VarLabel::bra(2)).unwrap(), 5);
    }

    #[test]
    fn flat_index_unknown_label() {
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let layout = Layout::doubled_trajectory(g);
        assert!(matches!(
            layout.flat_index(VarLabel::ket(7)),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn flat_index_round_trip() {
        let g = TimeGrid::new(0.0, 1.0, 3).unwrap();
        let mut labels: Vec<VarLabel> = Layout::doubled_trajectory(g.clone())
            .labels()
            .to_vec();
        labels.push(VarLabel::readout(0));
        labels.push(VarLabel::readout(2));
        labels.push(VarLabel {
            branch: Branch::Ket,
            node: 0,
            kind: VarKind::BoundaryInitial,
        });
        labels.push(VarLabel {
            branch: Branch::Bra,
            node: 3,
            kind: VarKind::BoundaryFinal,
        });
        let layout = Layout::new(g, labels).unwrap();
        for (i, &l) in layout.labels().iter().enumerate() {
            assert_eq!(layout.flat_index(l).unwrap(), i);
            assert_eq!(layout.label_at(i), l);
        }
        // boundary slots come after trajectory labels, readouts last
        let n = layout.len();
        assert_eq!(layout.label_at(n - 1), VarLabel::readout(2));
        assert_eq!(layout.label_at(n - 2), VarLabel::readout(0));
    }

    #[test]
    fn merged_rejects_mismatched_grids() {
        let a = Layout::doubled_trajectory(TimeGrid::new(0.0, 1.0, 2).unwrap());
        let b = Layout::doubled_trajectory(TimeGrid::new(0.0, 2.0, 2).unwrap());
        assert!(matches!(a.merged(&b), Err(Error::Composition(_))));
    }
}
