//! Piecewise-constant Markov control policies and finite control subsets.
//!
//! A [`MarkovPolicy`] assigns one control to every (time slab, spatial cell)
//! pair.  Evaluation is predictable by construction: the control applied on
//! the slab `(t_j, t_{j+1}]` depends only on the state recorded at the slab's
//! left knot `t_j`, never on the current state.  States outside every cell
//! fall back to a fixed default control.
//!
//! The module also provides the finite-subset machinery used to approximate a
//! compact control space: [`finite_subset`] takes the head of the set's
//! deterministic dense enumeration, and [`project_control`] maps an arbitrary
//! control to its nearest subset member with first-index tie-breaking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::DomainSpec;
use crate::num;
use crate::problem::{ControlKind, ControlSet, ProblemSpec};
use crate::solver::{self, ValueField};

/// Errors from policy construction.
#[derive(Debug, Error)]
pub enum PolicyError {
    /// The value grid is coarser than the requested policy cells, so cell
    /// centers could not be resolved by the field.
    #[error(
        "value grid (h = {grid_h}) is coarser than the policy cells (width {cell_h}); \
         refine the grid or widen the cells"
    )]
    IncompatibleGrids { grid_h: f64, cell_h: f64 },
}

/// Uniform axis-aligned partition of a bounding box into half-open cells
/// `[lo + i w, lo + (i+1) w)` (the last cell per axis is closed on the
/// right), flat-indexed row-major.  Cells are pairwise disjoint and cover
/// the whole box, hence any set whose closure the box contains.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellPartition {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    widths: Vec<f64>,
}

/// Slack for locating points that sit on the box faces up to rounding.
const LOCATE_TOL: f64 = 1e-9;

impl CellPartition {
    /// Partition the bounding box of `domain` into cells of width at most
    /// `cell_h` per axis (widths are shrunk to divide each side exactly).
    pub fn over_bounding_box(domain: &DomainSpec, cell_h: f64) -> Self {
        assert!(cell_h > 0.0, "cell width must be positive");
        let (lo, hi) = domain.bounding_box();
        let counts: Vec<usize> = lo
            .iter()
            .zip(&hi)
            .map(|(a, b)| (((b - a) / cell_h).ceil() as usize).max(1))
            .collect();
        let widths: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .zip(&counts)
            .map(|((a, b), &n)| (b - a) / n as f64)
            .collect();
        Self {
            lo,
            hi,
            counts,
            widths,
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Total number of cells.
    pub fn num_cells(&self) -> usize {
        self.counts.iter().product()
    }

    /// Largest cell diameter (Euclidean length of the width vector).
    pub fn max_diameter(&self) -> f64 {
        num::norm2(&self.widths)
    }

    /// Flat index of the cell containing `x`, or `None` if `x` lies outside
    /// the partitioned box (beyond a face-rounding tolerance).
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        assert_eq!(x.len(), self.dim(), "state dimension mismatch");
        let mut flat = 0usize;
        for i in 0..self.dim() {
            if x[i] < self.lo[i] - LOCATE_TOL || x[i] > self.hi[i] + LOCATE_TOL {
                return None;
            }
            let raw = ((x[i] - self.lo[i]) / self.widths[i]).floor();
            let idx = (raw.max(0.0) as usize).min(self.counts[i] - 1);
            flat = flat * self.counts[i] + idx;
        }
        Some(flat)
    }

    /// Center of cell `k` (row-major flat index).
    pub fn center(&self, k: usize) -> Vec<f64> {
        assert!(k < self.num_cells(), "cell index out of range");
        let mut rem = k;
        let mut idx = vec![0usize; self.dim()];
        for i in (0..self.dim()).rev() {
            idx[i] = rem % self.counts[i];
            rem /= self.counts[i];
        }
        idx.iter()
            .enumerate()
            .map(|(i, &j)| self.lo[i] + (j as f64 + 0.5) * self.widths[i])
            .collect()
    }
}

/// A piecewise-constant feedback policy on time slabs and spatial cells.
///
/// `time_knots` is an increasing grid `t_0 < t_1 < ... < t_M`; slab `j`
/// covers `(t_j, t_{j+1}]` (with `t_0` itself assigned to slab 0).  `table`
/// stores one control per `(slab, cell)` pair flat-indexed as
/// `j * cells.num_cells() + k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkovPolicy {
    pub time_knots: Vec<f64>,
    pub cells: CellPartition,
    pub table: Vec<Vec<f64>>,
    pub fallback: Vec<f64>,
}

impl MarkovPolicy {
    /// Assemble a policy, checking the table shape against knots and cells.
    pub fn new(
        time_knots: Vec<f64>,
        cells: CellPartition,
        table: Vec<Vec<f64>>,
        fallback: Vec<f64>,
    ) -> Self {
        assert!(time_knots.len() >= 2, "need at least one time slab");
        assert!(
            time_knots.windows(2).all(|w| w[0] < w[1]),
            "time knots must be strictly increasing"
        );
        assert_eq!(
            table.len(),
            (time_knots.len() - 1) * cells.num_cells(),
            "table must hold one control per (slab, cell) pair"
        );
        Self {
            time_knots,
            cells,
            table,
            fallback,
        }
    }

    /// A policy that applies the same control everywhere (handy baseline).
    pub fn constant(
        u: Vec<f64>,
        domain: &DomainSpec,
        t0: f64,
        t1: f64,
        num_slabs: usize,
        cell_h: f64,
    ) -> Self {
        let cells = CellPartition::over_bounding_box(domain, cell_h);
        let knots = uniform_knots(t0, t1, num_slabs);
        let table = vec![u.clone(); num_slabs * cells.num_cells()];
        Self::new(knots, cells, table, u)
    }

    /// Number of time slabs `M`.
    pub fn num_slabs(&self) -> usize {
        self.time_knots.len() - 1
    }

    /// Control for time `s` and the state recorded at the last knot.
    ///
    /// Slab selection is right-closed: `s` in `(t_j, t_{j+1}]` selects row
    /// `j`, `s = t_0` selects row 0, and times beyond the last knot clamp to
    /// the final row.  States outside the cell partition get `fallback`.
    pub fn evaluate(&self, s: f64, x_at_last_knot: &[f64]) -> &[f64] {
        let below = self.time_knots.partition_point(|&k| k < s);
        let j = below.saturating_sub(1).min(self.num_slabs() - 1);
        match self.cells.locate(x_at_last_knot) {
            Some(k) => &self.table[j * self.cells.num_cells() + k],
            None => &self.fallback,
        }
    }
}

/// Uniform knots `t0 = k_0 < ... < k_M = t1`.
pub fn uniform_knots(t0: f64, t1: f64, num_slabs: usize) -> Vec<f64> {
    assert!(num_slabs >= 1 && t1 > t0, "need t1 > t0 and at least one slab");
    let dt = (t1 - t0) / num_slabs as f64;
    let mut knots: Vec<f64> = (0..num_slabs).map(|j| t0 + j as f64 * dt).collect();
    knots.push(t1);
    knots
}

/// Free-function form of [`MarkovPolicy::evaluate`].
pub fn evaluate_policy<'a>(policy: &'a MarkovPolicy, s: f64, x_at_last_knot: &[f64]) -> &'a [f64] {
    policy.evaluate(s, x_at_last_knot)
}

/// First `n` points of the control set's deterministic dense enumeration,
/// as a finite control set.  Finite sets clamp `n` to their size; boxes
/// yield the nested low-discrepancy head, so subsets for growing `n` are
/// nested.
pub fn finite_subset(controls: &ControlSet, n: usize) -> ControlSet {
    assert!(n >= 1, "subset size must be at least 1");
    ControlSet::finite(controls.enumerate(n)).expect("enumeration of a valid set is nonempty")
}

/// Nearest subset member to `u` under the control metric, first index
/// winning ties.  For box sets the projection is the componentwise clamp
/// (the unique nearest point of the box).
pub fn project_control(u: &[f64], subset: &ControlSet) -> Vec<f64> {
    match subset.kind() {
        ControlKind::Finite(points) => {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, p) in points.iter().enumerate() {
                let d = subset.metric(u, p);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            points[best].clone()
        }
        ControlKind::Box { lo, hi } => u
            .iter()
            .zip(lo.iter().zip(hi))
            .map(|(&c, (&a, &b))| c.max(a).min(b))
            .collect(),
    }
}

/// Extract a piecewise-constant Markov policy from a solved value field.
///
/// The horizon `[0, T]` is split into `num_slabs` uniform slabs and the
/// domain's bounding box into cells of width at most `cell_h`.  The control
/// for slab `j` and cell `k` minimizes the discrete generator plus running
/// cost of the solved field at the slab's left knot and the cell center,
/// over the field's own control subset, first index winning ties.  Cell
/// centers the field cannot resolve (outside its solve region) receive the
/// fallback control, the subset's first point.
///
/// Requires the field's mesh to be at least as fine as the cells, so each
/// cell center sees a locally accurate minimizer.
pub fn synthesize(
    field: &ValueField,
    spec: &ProblemSpec,
    num_slabs: usize,
    cell_h: f64,
) -> Result<MarkovPolicy, PolicyError> {
    assert!(num_slabs >= 1, "need at least one time slab");
    if field.grid.spatial_h > cell_h * (1.0 + 1e-12) {
        return Err(PolicyError::IncompatibleGrids {
            grid_h: field.grid.spatial_h,
            cell_h,
        });
    }
    let points = field
        .control_subset
        .len_finite()
        .map(|n| field.control_subset.enumerate(n))
        .expect("solved fields carry a finite control subset");
    let fallback = points[0].clone();
    let knots = uniform_knots(0.0, spec.horizon_t, num_slabs);
    let cells = CellPartition::over_bounding_box(&spec.domain, cell_h);
    let num_cells = cells.num_cells();

    let table: Vec<Vec<f64>> = (0..num_slabs * num_cells)
        .into_par_iter()
        .map(|flat| {
            let j = flat / num_cells;
            let k = flat % num_cells;
            let t = knots[j];
            let x = cells.center(k);
            if !field.domain_delta.is_interior(&x) {
                return fallback.clone();
            }
            let mut best = f64::INFINITY;
            let mut best_u = fallback.clone();
            for u in &points {
                let g = solver::apply_generator(field, spec, t, &x, u)
                    .expect("generator defined at interior centers of a solved field");
                let cand = g + (spec.running_cost_gamma)(t, &x, u);
                if cand < best {
                    best = cand;
                    best_u = u.clone();
                }
            }
            best_u
        })
        .collect();

    Ok(MarkovPolicy::new(knots, cells, table, fallback))
}
