//! Monotone explicit finite-difference solver for the terminal-boundary
//! value problem of the controlled jump-diffusion.
//!
//! The solved field `W` satisfies, level by level backwards in time,
//!
//! ```text
//! W(t_l, x) = W(t_l + dt, x) + dt * min_u [ L^u W(t_l + dt, .)(x)
//!                                           + running_cost(t_l, x, u) ]
//! ```
//!
//! at strictly interior lattice nodes, with `W(T, .)` equal to the terminal
//! datum and every non-interior evaluation routed through the closed-form
//! boundary datum (the nonlocal Dirichlet extension).  The spatial operator
//! `L^u` combines a diagonally-dominated second-order stencil for
//! `a + eps I` (seven points in 2-d), an upwind first-order stencil for the
//! combined drift `b - sum_j w_j gamma_j`, and the exact atom sum of the
//! compensated jump part, so every neighbor enters with a nonnegative
//! coefficient and the update is monotone under the step-size guard.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::geometry::{DomainSpec, GeometryError};
use crate::num;
use crate::policy::finite_subset;
use crate::problem::{ControlSet, ProblemSpec, TerminalFn};

/// Errors from grid construction and solving.
#[derive(Debug, Error)]
pub enum SolverError {
    /// The time step fails the explicit-scheme stability bound.
    #[error("time step {dt} violates the stability bound: dt * rate = {product} > 1")]
    CflViolation { dt: f64, product: f64 },
    /// No controls to minimize over.
    #[error("solve requires a non-empty finite control set")]
    EmptyControlSet,
    /// The diffusion matrix (plus viscosity) is not diagonally dominant, so
    /// no monotone seven-point stencil exists; raise the viscosity.
    #[error(
        "diffusion is not diagonally dominant at a node (diagonals {a11}, {a22}, \
         off-diagonal {offdiag}); raise eps"
    )]
    NonMonotoneDiffusion { a11: f64, a22: f64, offdiag: f64 },
    /// Query at an exterior node or at the terminal level (no equation).
    #[error("query outside the solvable region (exterior point or terminal level)")]
    OutsideDomain,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Discretization parameters: a uniform time grid with `time_steps` steps
/// over the horizon and a spatial lattice of width `spatial_h` over the
/// domain dilated by `delta`.  Construction checks the declared stability
/// bound `dt * max_u [ tr(a + eps I)/h^2 + |b|_1/h + 2 * total_rate ] <= 1`
/// on a deterministic sample cloud (the solve itself re-checks the sharp
/// per-node bound).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub time_steps: usize,
    pub spatial_h: f64,
    pub delta: f64,
}

impl GridSpec {
    pub fn new(
        spec: &ProblemSpec,
        time_steps: usize,
        spatial_h: f64,
        delta: f64,
        eps: f64,
    ) -> Result<Self, SolverError> {
        assert!(time_steps >= 1, "need at least one time step");
        assert!(spatial_h > 0.0, "mesh width must be positive");
        let domain_delta = spec.domain.dilate(delta)?;
        let rate = stability_rate(spec, &domain_delta, spatial_h, eps);
        let dt = spec.horizon_t / time_steps as f64;
        if dt * rate > 1.0 + 1e-9 {
            return Err(SolverError::CflViolation {
                dt,
                product: dt * rate,
            });
        }
        Ok(Self {
            time_steps,
            spatial_h,
            delta,
        })
    }

    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / self.time_steps as f64
    }
}

/// Smallest number of time steps for which [`GridSpec::new`] accepts the
/// given mesh, with a 10% safety margin over the sampled stability rate so
/// the in-loop sharp check has headroom between sample points.
pub fn min_time_steps(
    spec: &ProblemSpec,
    spatial_h: f64,
    delta: f64,
    eps: f64,
) -> Result<usize, SolverError> {
    let domain_delta = spec.domain.dilate(delta)?;
    let rate = stability_rate(spec, &domain_delta, spatial_h, eps);
    Ok(((spec.horizon_t * rate * 1.1).ceil() as usize).max(1))
}

/// Sampled supremum of both the declared stability rate
/// `tr(a + eps I)/h^2 + |b|_1/h + 2 Lambda` and the sharp per-node diagonal
/// rate `tr(a + eps I)/h^2 + |b - sum w gamma|_1/h + Lambda`.
fn stability_rate(spec: &ProblemSpec, domain_delta: &DomainSpec, h: f64, eps: f64) -> f64 {
    let d = spec.dims.d;
    let lambda = spec.levy.total_rate();
    let mut points: Vec<Vec<f64>> = domain_delta.boundary_samples(32);
    let (lo, hi) = domain_delta.bounding_box();
    for k in 1..=128u64 {
        let hp = num::halton_point(k, d);
        let x: Vec<f64> = (0..d).map(|i| lo[i] + hp[i] * (hi[i] - lo[i])).collect();
        if domain_delta.is_interior(&x) {
            points.push(x);
        }
    }
    let controls = match spec.controls.len_finite() {
        Some(n) => spec.controls.enumerate(n.min(16)),
        None => spec.controls.enumerate(16),
    };
    let times: Vec<f64> = (0..5).map(|k| spec.horizon_t * k as f64 / 4.0).collect();

    let mut rate = 0.0f64;
    for t in &times {
        for x in &points {
            for u in &controls {
                let a = spec.diffusion_a(*t, x, u);
                let tr: f64 = (0..d).map(|i| a[i * d + i]).sum::<f64>() + d as f64 * eps;
                let b = (spec.drift_b)(*t, x, u);
                let mut v = b.clone();
                for atom in spec.levy.atoms() {
                    let g = (spec.jump_gamma)(*t, x, u, &atom.z);
                    for i in 0..d {
                        v[i] -= atom.w * g[i];
                    }
                }
                let declared = tr / (h * h) + num::norm1(&b) / h + 2.0 * lambda;
                let sharp = tr / (h * h) + num::norm1(&v) / h + lambda;
                rate = rate.max(declared).max(sharp);
            }
        }
    }
    rate
}

/// Axis-aligned lattice `origin + k * h`, anchored to the undilated
/// domain's bounding box so that lattices for different dilations of one
/// domain share node positions on their overlap.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lattice {
    origin: Vec<f64>,
    dims: Vec<usize>,
    h: f64,
}

impl Lattice {
    /// Lattice on the `h`-grid through `anchor_lo` covering the bounding box
    /// of `target` plus one ghost layer on every side.
    fn covering(anchor_lo: &[f64], h: f64, target: &DomainSpec) -> Self {
        let (lo, hi) = target.bounding_box();
        let d = lo.len();
        let mut origin = vec![0.0; d];
        let mut dims = vec![0usize; d];
        for i in 0..d {
            let kmin = ((lo[i] - anchor_lo[i]) / h).floor() as i64 - 1;
            let kmax = ((hi[i] - anchor_lo[i]) / h + 1e-9).ceil() as i64 + 1;
            origin[i] = anchor_lo[i] + kmin as f64 * h;
            dims[i] = (kmax - kmin + 1) as usize;
        }
        Self { origin, dims, h }
    }

    pub fn num_nodes(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    /// Position of the node with flat row-major index `flat`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let d = self.dim();
        let mut idx = vec![0usize; d];
        for i in (0..d).rev() {
            idx[i] = rem % self.dims[i];
            rem /= self.dims[i];
        }
        idx.iter()
            .enumerate()
            .map(|(i, &k)| self.origin[i] + k as f64 * self.h)
            .collect()
    }
}

/// A solved (or tabulated) space-time field with the boundary datum as its
/// exact exterior extension.
///
/// `values[level][node]` stores the field on the lattice at time
/// `level * dt`; the terminal level holds the terminal datum exactly and
/// non-interior nodes hold the boundary datum at their level time.
#[derive(Clone)]
pub struct ValueField {
    pub grid: GridSpec,
    pub domain_delta: DomainSpec,
    pub eps_viscosity: f64,
    pub control_subset: ControlSet,
    lattice: Lattice,
    values: Vec<Vec<f64>>,
    interior: Vec<bool>,
    psi: TerminalFn,
    horizon: f64,
}

impl fmt::Debug for ValueField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValueField")
            .field("grid", &self.grid)
            .field("domain_delta", &self.domain_delta)
            .field("eps_viscosity", &self.eps_viscosity)
            .field("levels", &self.values.len())
            .field("nodes", &self.lattice.num_nodes())
            .finish()
    }
}

/// Snap tolerance for hitting lattice nodes and time levels exactly.
const SNAP: f64 = 1e-9;

impl ValueField {
    /// Shell with every level prefilled by the boundary/terminal datum.
    fn shell(
        spec: &ProblemSpec,
        grid: &GridSpec,
        eps: f64,
        controls: &ControlSet,
    ) -> Result<Self, SolverError> {
        let domain_delta = spec.domain.dilate(grid.delta)?;
        let anchor = spec.domain.bounding_box().0;
        let lattice = Lattice::covering(&anchor, grid.spatial_h, &domain_delta);
        let horizon = spec.horizon_t;
        let psi = spec.terminal_boundary_psi.clone();
        let n = lattice.num_nodes();
        let interior: Vec<bool> = (0..n)
            .map(|k| domain_delta.is_interior(&lattice.node(k)))
            .collect();
        let dt = grid.dt(horizon);
        let values: Vec<Vec<f64>> = (0..=grid.time_steps)
            .map(|l| {
                let t = (l as f64 * dt).min(horizon);
                (0..n).map(|k| (psi)(t, &lattice.node(k))).collect()
            })
            .collect();
        Ok(Self {
            grid: grid.clone(),
            domain_delta,
            eps_viscosity: eps,
            control_subset: controls.clone(),
            lattice,
            values,
            interior,
            psi,
            horizon,
        })
    }

    /// Tabulate an arbitrary function on the grid (diagnostics and operator
    /// probes); the exterior extension remains the problem's boundary datum.
    pub fn tabulate(
        spec: &ProblemSpec,
        grid: &GridSpec,
        eps: f64,
        controls: &ControlSet,
        f: impl Fn(f64, &[f64]) -> f64,
    ) -> Result<Self, SolverError> {
        let mut field = Self::shell(spec, grid, eps, controls)?;
        let dt = field.dt();
        for l in 0..field.values.len() {
            let t = (l as f64 * dt).min(field.horizon);
            for k in 0..field.lattice.num_nodes() {
                field.values[l][k] = f(t, &field.lattice.node(k));
            }
        }
        Ok(field)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt(self.horizon)
    }

    /// Number of stored time levels (`time_steps + 1`).
    pub fn levels(&self) -> usize {
        self.values.len()
    }

    pub fn level_time(&self, level: usize) -> f64 {
        (level as f64 * self.dt()).min(self.horizon)
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn num_nodes(&self) -> usize {
        self.lattice.num_nodes()
    }

    pub fn is_interior_node(&self, flat: usize) -> bool {
        self.interior[flat]
    }

    pub fn node_position(&self, flat: usize) -> Vec<f64> {
        self.lattice.node(flat)
    }

    pub fn value_at_node(&self, level: usize, flat: usize) -> f64 {
        self.values[level][flat]
    }

    /// Overwrite one stored value (diagnostics: planting defects).
    pub fn set_value(&mut self, level: usize, flat: usize, v: f64) {
        self.values[level][flat] = v;
    }

    /// Largest stored magnitude across all levels and nodes.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|lv| lv.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn interp_level(&self, level: usize, x: &[f64]) -> f64 {
        let d = self.lattice.dim();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0f64; d];
        for i in 0..d {
            let u = (x[i] - self.lattice.origin[i]) / self.lattice.h;
            let mut i0 = u.floor();
            let mut f = u - i0;
            if f < SNAP {
                f = 0.0;
            } else if f > 1.0 - SNAP {
                i0 += 1.0;
                f = 0.0;
            }
            let top = (self.lattice.dims[i] - 1) as f64;
            let mut i0 = i0.clamp(0.0, top) as usize;
            if f > 0.0 {
                i0 = i0.min(self.lattice.dims[i] - 2);
            }
            base[i] = i0;
            frac[i] = f;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for i in 0..d {
                let bit = (corner >> i) & 1;
                w *= if bit == 1 { frac[i] } else { 1.0 - frac[i] };
            }
            if w == 0.0 {
                continue;
            }
            let mut flat = 0usize;
            for i in 0..d {
                let bit = (corner >> i) & 1;
                flat = flat * self.lattice.dims[i] + base[i] + bit;
            }
            acc += w * self.values[level][flat];
        }
        acc
    }

    /// Field value at `(t, x)`: the boundary datum exactly for non-interior
    /// `x`, otherwise multilinear in space and linear in time between
    /// levels, snapping to stored node values and level times.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> f64 {
        if !self.domain_delta.is_interior(x) {
            return (self.psi)(t, x);
        }
        let last = self.levels() - 1;
        let theta = (t / self.dt()).clamp(0.0, last as f64);
        let l0 = theta.floor();
        let frac = theta - l0;
        let l0 = l0 as usize;
        if frac < SNAP || l0 >= last {
            self.interp_level(l0, x)
        } else if frac > 1.0 - SNAP {
            self.interp_level(l0 + 1, x)
        } else {
            (1.0 - frac) * self.interp_level(l0, x) + frac * self.interp_level(l0 + 1, x)
        }
    }
}

/// The spatial operator value at one point together with the magnitude of
/// its diagonal coefficient (for the sharp per-node stability guard).
struct SpatialParts {
    value: f64,
    diag: f64,
}

/// Monotone discrete spatial operator `L^u F(t_eval, .)(x)` with
/// coefficients frozen at `t_coeff`.
fn spatial_part(
    field: &ValueField,
    spec: &ProblemSpec,
    t_coeff: f64,
    t_eval: f64,
    x: &[f64],
    u: &[f64],
) -> Result<SpatialParts, SolverError> {
    let d = spec.dims.d;
    let h = field.grid.spatial_h;
    let h2 = h * h;
    let eps = field.eps_viscosity;
    let f0 = field.evaluate(t_eval, x);
    let shifted = |i: usize, step: f64| {
        let mut y = x.to_vec();
        y[i] += step;
        field.evaluate(t_eval, &y)
    };

    let mut a = spec.diffusion_a(t_coeff, x, u);
    for i in 0..d {
        a[i * d + i] += eps;
    }

    let mut value = 0.0;
    let mut diag = 0.0;
    match d {
        1 => {
            value += 0.5 * a[0] * (shifted(0, h) - 2.0 * f0 + shifted(0, -h)) / h2;
            diag += a[0] / h2;
        }
        2 => {
            let (a11, a12, a22) = (a[0], a[1], a[3]);
            let am = a12.abs();
            if a11 - am < -1e-12 || a22 - am < -1e-12 {
                return Err(SolverError::NonMonotoneDiffusion {
                    a11,
                    a22,
                    offdiag: a12,
                });
            }
            let cxx = (a11 - am).max(0.0);
            let cyy = (a22 - am).max(0.0);
            value += 0.5 * cxx * (shifted(0, h) - 2.0 * f0 + shifted(0, -h)) / h2;
            value += 0.5 * cyy * (shifted(1, h) - 2.0 * f0 + shifted(1, -h)) / h2;
            if am > 0.0 {
                let sy = if a12 >= 0.0 { h } else { -h };
                let up = {
                    let mut y = x.to_vec();
                    y[0] += h;
                    y[1] += sy;
                    field.evaluate(t_eval, &y)
                };
                let dn = {
                    let mut y = x.to_vec();
                    y[0] -= h;
                    y[1] -= sy;
                    field.evaluate(t_eval, &y)
                };
                value += 0.5 * am * (up - 2.0 * f0 + dn) / h2;
            }
            diag += (a11 + a22 - am) / h2;
        }
        _ => panic!("the grid solver supports one or two spatial dimensions"),
    }

    // Combined first-order coefficient: drift minus the jump compensator,
    // upwinded as one vector so all neighbor weights stay nonnegative.
    let b = (spec.drift_b)(t_coeff, x, u);
    let atoms = spec.levy.atoms();
    let gvecs: Vec<Vec<f64>> = atoms
        .iter()
        .map(|atom| (spec.jump_gamma)(t_coeff, x, u, &atom.z))
        .collect();
    let mut v = b;
    for (atom, g) in atoms.iter().zip(&gvecs) {
        for i in 0..d {
            v[i] -= atom.w * g[i];
        }
    }
    for i in 0..d {
        if v[i] > 0.0 {
            value += v[i] * (shifted(i, h) - f0) / h;
        } else if v[i] < 0.0 {
            value += -v[i] * (shifted(i, -h) - f0) / h;
        }
        diag += v[i].abs() / h;
    }

    // Exact atom sum of the jump part (the gradient correction lives in the
    // combined drift above).
    for (atom, g) in atoms.iter().zip(&gvecs) {
        let y = num::add(x, g);
        value += atom.w * (field.evaluate(t_eval, &y) - f0);
        diag += atom.w;
    }

    Ok(SpatialParts { value, diag })
}

/// Discrete generator `A^u F(t, x)`: forward time difference over the
/// field's own step plus the monotone spatial operator evaluated one level
/// ahead, with coefficients frozen at `t`.  Defined at interior points
/// strictly before the horizon.
pub fn apply_generator(
    field: &ValueField,
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    u: &[f64],
) -> Result<f64, SolverError> {
    if !field.domain_delta.is_interior(x) {
        return Err(SolverError::OutsideDomain);
    }
    let dt_eff = field.dt().min(field.horizon - t);
    if dt_eff <= 0.0 {
        return Err(SolverError::OutsideDomain);
    }
    let t_next = t + dt_eff;
    let time_diff = (field.evaluate(t_next, x) - field.evaluate(t, x)) / dt_eff;
    let sp = spatial_part(field, spec, t, t_next, x, u)?;
    Ok(time_diff + sp.value)
}

/// Solve the terminal-boundary problem on the dilated domain with the given
/// viscosity and finite control set.  The returned field is monotone in its
/// data, exact on the exterior, and satisfies the discrete equation to
/// rounding (see [`residual`]).
pub fn solve(
    spec: &ProblemSpec,
    grid: &GridSpec,
    eps: f64,
    controls: &ControlSet,
) -> Result<ValueField, SolverError> {
    assert!(
        spec.dims.d <= 2,
        "the grid solver supports one or two spatial dimensions"
    );
    let points = match controls.len_finite() {
        Some(0) => return Err(SolverError::EmptyControlSet),
        Some(n) => controls.enumerate(n),
        None => panic!("solve requires a finite control set; take a finite subset first"),
    };

    let mut field = ValueField::shell(spec, grid, eps, controls)?;
    let dt = field.dt();
    let n = field.lattice.num_nodes();
    for l in (0..grid.time_steps).rev() {
        let t_l = field.level_time(l);
        let t_next = field.level_time(l + 1);
        let new_level: Result<Vec<f64>, SolverError> = (0..n)
            .into_par_iter()
            .map(|k| {
                if !field.interior[k] {
                    return Ok(field.values[l][k]);
                }
                let x = field.lattice.node(k);
                let mut best = f64::INFINITY;
                for u in &points {
                    let sp = spatial_part(&field, spec, t_l, t_next, &x, u)?;
                    if dt * sp.diag > 1.0 + 1e-9 {
                        return Err(SolverError::CflViolation {
                            dt,
                            product: dt * sp.diag,
                        });
                    }
                    let cand = sp.value + (spec.running_cost_gamma)(t_l, &x, u);
                    if cand < best {
                        best = cand;
                    }
                }
                Ok(field.values[l + 1][k] + dt * best)
            })
            .collect();
        field.values[l] = new_level?;
    }
    Ok(field)
}

/// Absolute discrete-equation residual
/// `| min_u [ A^u W(t_level, node) + running_cost ] |` at an interior node
/// strictly before the terminal level.  Solved fields satisfy
/// `residual <= 1e-10` by construction (the same code path computes the
/// update and the residual).
pub fn residual(
    field: &ValueField,
    spec: &ProblemSpec,
    level: usize,
    node: usize,
) -> Result<f64, SolverError> {
    if level + 1 >= field.levels() || !field.interior[node] {
        return Err(SolverError::OutsideDomain);
    }
    let t = field.level_time(level);
    let x = field.lattice.node(node);
    let points = match field.control_subset.len_finite() {
        Some(n) => field.control_subset.enumerate(n),
        None => panic!("residual requires the field's finite control subset"),
    };
    let mut best = f64::INFINITY;
    for u in &points {
        let g = apply_generator(field, spec, t, &x, u)?;
        let cand = g + (spec.running_cost_gamma)(t, &x, u);
        if cand < best {
            best = cand;
        }
    }
    Ok(best.abs())
}

/// One stage of a refinement cascade: viscosity level, control-subset size,
/// and domain dilation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeStage {
    pub eps: f64,
    pub subset_size: usize,
    pub delta: f64,
}

/// One comparison row: the stage parameters and the sup-norm gap to the
/// finest stage over the shared base-domain nodes and all time levels.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CascadeRow {
    pub eps: f64,
    pub subset_size: usize,
    pub delta: f64,
    pub sup_diff: f64,
}

/// Cascade result: rows for every stage but the finest, plus a flag that the
/// tail of the gap sequence (last up to three rows) is non-increasing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CascadeTable {
    pub rows: Vec<CascadeRow>,
    pub trend_non_increasing: bool,
}

/// Solve every stage of `schedule` on the template mesh and report each
/// stage's sup-norm distance to the last (finest) stage, measured at the
/// interior lattice nodes of the undilated base domain, which all stage
/// lattices share.
pub fn cascade_study(
    spec: &ProblemSpec,
    template: &GridSpec,
    schedule: &[CascadeStage],
) -> Result<CascadeTable, SolverError> {
    assert!(schedule.len() >= 2, "a cascade needs at least two stages");
    let mut fields = Vec::with_capacity(schedule.len());
    for stage in schedule {
        let grid = GridSpec::new(
            spec,
            template.time_steps,
            template.spatial_h,
            stage.delta,
            stage.eps,
        )?;
        let subset = finite_subset(&spec.controls, stage.subset_size);
        fields.push(solve(spec, &grid, stage.eps, &subset)?);
    }

    // Shared comparison set: interior lattice nodes of the base domain.
    let anchor = spec.domain.bounding_box().0;
    let base = Lattice::covering(&anchor, template.spatial_h, &spec.domain);
    let shared: Vec<Vec<f64>> = (0..base.num_nodes())
        .map(|k| base.node(k))
        .filter(|x| spec.domain.is_interior(x))
        .collect();

    let finest = fields.last().expect("nonempty schedule");
    let mut rows = Vec::with_capacity(schedule.len() - 1);
    for (stage, field) in schedule.iter().zip(&fields).take(schedule.len() - 1) {
        let mut sup = 0.0f64;
        for l in 0..field.levels() {
            let t = field.level_time(l);
            for x in &shared {
                sup = sup.max((field.evaluate(t, x) - finest.evaluate(t, x)).abs());
            }
        }
        rows.push(CascadeRow {
            eps: stage.eps,
            subset_size: stage.subset_size,
            delta: stage.delta,
            sup_diff: sup,
        });
    }

    let tail = rows.len().min(3);
    let trend_non_increasing = rows[rows.len() - tail..]
        .windows(2)
        .all(|w| w[1].sup_diff <= w[0].sup_diff + 1e-12);
    Ok(CascadeTable {
        rows,
        trend_non_increasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{Atom, LevyModel};
    use crate::problem::{make_problem, Dims, FamilyParams};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn still_spec() -> ProblemSpec {
        ProblemSpec {
            name: "solver_still".into(),
            dims: Dims { d: 1, m1: 1, m2: 1 },
            horizon_t: 1.0,
            drift_b: Arc::new(|_, _, _| vec![0.0]),
            vol_sigma: Arc::new(|_, _, _| vec![0.0]),
            jump_gamma: Arc::new(|_, _, _, _| vec![0.0]),
            running_cost_gamma: Arc::new(|_, _, _| 0.0),
            terminal_boundary_psi: Arc::new(|_, x: &[f64]| 0.3 * x[0] + x[0] * x[0]),
            lipschitz_c: 1.0,
            boundary_ellipticity_lambda: 0.0,
            domain: DomainSpec::interval(-1.0, 1.0).unwrap(),
            levy: LevyModel::empty(1),
            controls: ControlSet::finite(vec![vec![0.0]]).unwrap(),
        }
    }

    #[test]
    fn grid_construction_enforces_the_stability_bound() {
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        // h = 0.05 needs roughly h^-2 = 400 steps; 40 must fail.
        let err = GridSpec::new(&spec, 40, 0.05, 0.0, 0.0);
        assert!(matches!(err, Err(SolverError::CflViolation { .. })));
        let steps = min_time_steps(&spec, 0.05, 0.0, 0.0).unwrap();
        assert!(steps >= 400, "steps {steps}");
        assert!(GridSpec::new(&spec, steps, 0.05, 0.0, 0.0).is_ok());
    }

    #[test]
    fn zero_dynamics_propagate_the_terminal_datum_unchanged() {
        let spec = still_spec();
        let grid = GridSpec::new(&spec, 8, 0.25, 0.0, 0.0).unwrap();
        let field = solve(&spec, &grid, 0.0, &spec.controls).unwrap();
        for l in 0..field.levels() {
            for k in 0..field.num_nodes() {
                if field.is_interior_node(k) {
                    let x = field.node_position(k);
                    let want = (spec.terminal_boundary_psi)(1.0, &x);
                    assert_relative_eq!(
                        field.value_at_node(l, k),
                        want,
                        epsilon = 1e-14
                    );
                }
            }
        }
    }

    #[test]
    fn constant_running_cost_adds_a_linear_ramp() {
        let mut spec = still_spec();
        spec.running_cost_gamma = Arc::new(|_, _, _| 0.4);
        let grid = GridSpec::new(&spec, 10, 0.25, 0.0, 0.0).unwrap();
        let field = solve(&spec, &grid, 0.0, &spec.controls).unwrap();
        for l in 0..field.levels() {
            let t = field.level_time(l);
            for k in 0..field.num_nodes() {
                if field.is_interior_node(k) {
                    let x = field.node_position(k);
                    let want = (spec.terminal_boundary_psi)(1.0, &x) + 0.4 * (1.0 - t);
                    assert_relative_eq!(field.value_at_node(l, k), want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_data_solve_is_exactly_constant() {
        // Nontrivial dynamics, constant terminal datum, zero running cost:
        // every stencil difference vanishes, so the field stays constant.
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let mut spec = spec;
        spec.terminal_boundary_psi = Arc::new(|_, _| 2.0);
        let grid = GridSpec::new(&spec, 450, 0.05, 0.0, 0.0).unwrap();
        let field = solve(&spec, &grid, 0.0, &spec.controls).unwrap();
        for l in 0..field.levels() {
            for k in 0..field.num_nodes() {
                assert_eq!(field.value_at_node(l, k), 2.0);
            }
        }
    }

    #[test]
    fn martingale_value_matches_the_identity_datum() {
        // Unit diffusion on (-1, 1) with datum x: the value function is x
        // itself (bounded-martingale optional stopping); the scheme must
        // reproduce it within discretization error.
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let steps = min_time_steps(&spec, 0.05, 0.0, 0.0).unwrap();
        let grid = GridSpec::new(&spec, steps, 0.05, 0.0, 0.0).unwrap();
        let field = solve(&spec, &grid, 0.0, &spec.controls).unwrap();
        for k in 0..field.num_nodes() {
            if field.is_interior_node(k) {
                let x = field.node_position(k);
                assert!(
                    (field.value_at_node(0, k) - x[0]).abs() <= 2e-2,
                    "node {} value {} expected {}",
                    k,
                    field.value_at_node(0, k),
                    x[0]
                );
            }
        }
    }

    #[test]
    fn generator_is_zero_on_constants_and_advects_linears() {
        let mut spec = still_spec();
        spec.drift_b = Arc::new(|_, _, u: &[f64]| vec![u[0]]);
        spec.controls = ControlSet::finite(vec![vec![-1.0], vec![0.5]]).unwrap();
        let grid = GridSpec::new(&spec, 64, 0.1, 0.0, 0.0).unwrap();

        let constant = ValueField::tabulate(&spec, &grid, 0.0, &spec.controls, |_, _| 7.0)
            .unwrap();
        let g = apply_generator(&constant, &spec, 0.25, &[0.05], &[0.5]).unwrap();
        assert!(g.abs() <= 1e-12, "constant field generator {g}");

        let linear = ValueField::tabulate(&spec, &grid, 0.0, &spec.controls, |_, x| x[0])
            .unwrap();
        for u in [-1.0, 0.5] {
            let g = apply_generator(&linear, &spec, 0.25, &[0.05], &[u]).unwrap();
            assert_relative_eq!(g, u, epsilon = 1e-10);
        }
        // Exterior and terminal queries are rejected.
        assert!(matches!(
            apply_generator(&linear, &spec, 0.25, &[3.0], &[0.5]),
            Err(SolverError::OutsideDomain)
        ));
        assert!(matches!(
            apply_generator(&linear, &spec, 1.0, &[0.05], &[0.5]),
            Err(SolverError::OutsideDomain)
        ));
    }

    #[test]
    fn nonlocal_part_is_exact_for_quadratics_on_aligned_atoms() {
        // Two opposite atoms cancel the compensator, so the upwind gradient
        // correction vanishes and the atom sum applied to x^2 equals
        // sum_j w_j |gamma_j|^2 exactly (atoms land on lattice nodes).
        let mut spec = still_spec();
        spec.levy = LevyModel::build(
            vec![Atom::new(vec![0.2], 1.0), Atom::new(vec![-0.2], 1.0)],
            None,
        )
        .unwrap();
        spec.jump_gamma = Arc::new(|_, _, _, z: &[f64]| vec![z[0]]);
        let grid = GridSpec::new(&spec, 64, 0.05, 0.0, 0.0).unwrap();
        let quad = ValueField::tabulate(&spec, &grid, 0.0, &spec.controls, |_, x| x[0] * x[0])
            .unwrap();
        let g = apply_generator(&quad, &spec, 0.5, &[0.25], &[0.0]).unwrap();
        assert_relative_eq!(g, 2.0 * 0.2 * 0.2, epsilon = 1e-12);
    }

    #[test]
    fn evaluate_interpolates_and_extends_by_the_boundary_datum() {
        let spec = still_spec();
        let grid = GridSpec::new(&spec, 4, 0.5, 0.0, 0.0).unwrap();
        let field = solve(&spec, &grid, 0.0, &spec.controls).unwrap();
        // Far outside: the boundary datum, exactly, with its time argument.
        assert_eq!(
            field.evaluate(0.3, &[5.0]),
            (spec.terminal_boundary_psi)(0.3, &[5.0])
        );
        // Grid node at a level time: the stored value.
        let k = (0..field.num_nodes())
            .find(|&k| field.is_interior_node(k))
            .unwrap();
        let x = field.node_position(k);
        assert_eq!(field.evaluate(field.level_time(1), &x), field.value_at_node(1, k));
        // Midpoint of two interior nodes: their average.
        let x0 = [0.0];
        let x1 = [0.5];
        let xm = [0.25];
        let want = 0.5 * (field.evaluate(0.0, &x0) + field.evaluate(0.0, &x1));
        assert_relative_eq!(field.evaluate(0.0, &xm), want, epsilon = 1e-12);
    }

    #[test]
    fn solved_fields_have_vanishing_residuals_until_perturbed() {
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let steps = min_time_steps(&spec, 0.1, 0.0, 0.0).unwrap();
        let grid = GridSpec::new(&spec, steps, 0.1, 0.0, 0.0).unwrap();
        let mut field = solve(&spec, &grid, 0.0, &spec.controls).unwrap();
        let interior: Vec<usize> = (0..field.num_nodes())
            .filter(|&k| field.is_interior_node(k))
            .collect();
        for &k in &interior {
            for level in [0, field.levels() / 2, field.levels() - 2] {
                let r = residual(&field, &spec, level, k).unwrap();
                assert!(r <= 1e-10, "residual {r} at level {level}, node {k}");
            }
        }
        // Terminal level has no equation.
        assert!(matches!(
            residual(&field, &spec, field.levels() - 1, interior[0]),
            Err(SolverError::OutsideDomain)
        ));
        // Planting a defect at one node disturbs its neighbor's residual.
        let mid = interior[interior.len() / 2];
        let level = 3;
        field.set_value(level + 1, mid, field.value_at_node(level + 1, mid) + 1.0);
        let r = residual(&field, &spec, level, mid - 1).unwrap();
        assert!(r > 1e-6, "perturbed residual {r}");
    }

    #[test]
    fn scheme_is_monotone_in_the_terminal_datum() {
        let base = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let mut raised = base.clone();
        raised.terminal_boundary_psi =
            Arc::new(|_, x: &[f64]| x[0] + 0.05 * (1.0 + (3.0 * x[0]).cos()));
        let steps = min_time_steps(&base, 0.1, 0.0, 0.0).unwrap();
        let grid = GridSpec::new(&base, steps, 0.1, 0.0, 0.0).unwrap();
        let low = solve(&base, &grid, 0.0, &base.controls).unwrap();
        let high = solve(&raised, &grid, 0.0, &raised.controls).unwrap();
        for l in 0..low.levels() {
            for k in 0..low.num_nodes() {
                assert!(
                    low.value_at_node(l, k) <= high.value_at_node(l, k) + 1e-12,
                    "monotonicity violated at level {l}, node {k}"
                );
            }
        }
    }

    #[test]
    fn dominated_controls_leave_the_field_unchanged() {
        // With control-independent dynamics and running cost |u|, the
        // control 1 never beats 0, and duplicate-free enlargement of the
        // set changes nothing.
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let mut spec = spec;
        spec.running_cost_gamma = Arc::new(|_, _, u: &[f64]| u[0].abs());
        let steps = min_time_steps(&spec, 0.1, 0.0, 0.0).unwrap();
        let grid = GridSpec::new(&spec, steps, 0.1, 0.0, 0.0).unwrap();
        let lone = ControlSet::finite(vec![vec![0.0]]).unwrap();
        let pair = ControlSet::finite(vec![vec![0.0], vec![1.0]]).unwrap();
        let f1 = solve(&spec, &grid, 0.0, &lone).unwrap();
        let f2 = solve(&spec, &grid, 0.0, &pair).unwrap();
        for l in 0..f1.levels() {
            for k in 0..f1.num_nodes() {
                assert_eq!(f1.value_at_node(l, k), f2.value_at_node(l, k));
            }
        }
    }

    #[test]
    fn solved_field_obeys_the_data_bound() {
        let spec = make_problem("jump_diffusion_ball", FamilyParams::default()).unwrap();
        let steps = min_time_steps(&spec, 0.1, 0.0, 0.05).unwrap();
        let grid = GridSpec::new(&spec, steps, 0.1, 0.0, 0.05).unwrap();
        let subset = finite_subset(&spec.controls, 5);
        let field = solve(&spec, &grid, 0.05, &subset).unwrap();
        // Data sups for this family: |psi| <= 0.5, |running cost| <= 0.15.
        assert!(field.max_abs() <= 0.5 + 1.0 * 0.15 + 1e-9);
    }

    #[test]
    fn viscosity_cascade_gaps_shrink() {
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let steps = min_time_steps(&spec, 0.1, 0.0, 0.1).unwrap();
        let template = GridSpec::new(&spec, steps, 0.1, 0.0, 0.1).unwrap();
        let schedule: Vec<CascadeStage> = [0.1, 0.05, 0.025, 0.0]
            .iter()
            .map(|&eps| CascadeStage {
                eps,
                subset_size: 1,
                delta: 0.0,
            })
            .collect();
        let table = cascade_study(&spec, &template, &schedule).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.rows.iter().all(|r| r.sup_diff > 0.0));
        assert!(
            table.rows.windows(2).all(|w| w[1].sup_diff <= w[0].sup_diff),
            "{:?}",
            table.rows
        );
        assert!(table.trend_non_increasing);
    }

    #[test]
    fn duplicate_controls_add_nothing_to_the_cascade() {
        let mut spec =
            make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
        // Order the two controls so the singleton head is the suboptimal one.
        spec.controls = ControlSet::finite(vec![vec![1.0], vec![-1.0]]).unwrap();
        let steps = min_time_steps(&spec, 0.1, 0.0, 0.0).unwrap();
        let template = GridSpec::new(&spec, steps, 0.1, 0.0, 0.0).unwrap();
        let schedule: Vec<CascadeStage> = [1usize, 2, 4]
            .iter()
            .map(|&n| CascadeStage {
                eps: 0.0,
                subset_size: n,
                delta: 0.0,
            })
            .collect();
        let table = cascade_study(&spec, &template, &schedule).unwrap();
        assert!(table.rows[0].sup_diff > 0.0, "head-only stage must differ");
        assert_eq!(
            table.rows[1].sup_diff, 0.0,
            "sizes 2 and 4 enumerate the same two controls"
        );
        assert!(table.trend_non_increasing);
    }

    #[test]
    fn domain_dilation_cascade_gaps_shrink_on_base_nodes() {
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let eta = spec.domain.prox_radius_eta();
        let deltas = [0.2 * eta, 0.1 * eta, 0.05 * eta, 0.0];
        let steps = min_time_steps(&spec, 0.1, deltas[0], 0.0).unwrap();
        let template = GridSpec::new(&spec, steps, 0.1, 0.0, 0.0).unwrap();
        let schedule: Vec<CascadeStage> = deltas
            .iter()
            .map(|&delta| CascadeStage {
                eps: 0.0,
                subset_size: 1,
                delta,
            })
            .collect();
        let table = cascade_study(&spec, &template, &schedule).unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.rows.iter().all(|r| r.sup_diff > 0.0));
        assert!(
            table.rows.windows(2).all(|w| w[1].sup_diff <= w[0].sup_diff),
            "{:?}",
            table.rows
        );
        assert!(table.trend_non_increasing);
    }
}
