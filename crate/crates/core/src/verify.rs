//! The headline identities as numerical checks: the stochastic
//! representation sandwich (no admissible candidate beats the grid value
//! beyond the solver budget, and the synthesized policy comes within the
//! policy budget of it), the dynamic programming principle at representable
//! stopping rules, common-random-number coupling probes with the pathwise
//! exit-order identity, and finite-control projection trends.
//!
//! Every check is a pure function of its inputs and recorded seeds, so
//! reports are reproducible bit for bit.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{DomainSpec, GeometryError};
use crate::num;
use crate::policy::{self, PolicyError};
use crate::problem::{ControlSet, ProblemError, ProblemSpec};
use crate::rng::PathStreams;
use crate::sim::{self, ControlLaw, McEstimate, SimError};
use crate::solver::{self, GridSpec, SolverError, ValueField};

/// Errors surfaced by the verification drivers.
#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("stopping rule not representable here: {0}")]
    BadStoppingRule(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// One checked quantity.  Two-sided rows pass when `|value| <= tolerance`,
/// one-sided rows when `value <= tolerance`, and informational rows carry an
/// infinite tolerance so the consistency rule holds vacuously.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Quantity {
    pub label: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Quantity {
    pub fn two_sided(label: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            label: label.into(),
            value,
            tolerance,
            pass: value.abs() <= tolerance,
        }
    }

    pub fn one_sided(label: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            label: label.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    pub fn info(label: impl Into<String>, value: f64) -> Self {
        Self {
            label: label.into(),
            value,
            tolerance: f64::INFINITY,
            pass: true,
        }
    }
}

/// A named bundle of checked quantities together with the seeds that
/// reproduce it and the wall-clock time the check took.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerificationReport {
    pub name: String,
    pub quantities: Vec<Quantity>,
    pub seeds: Vec<u64>,
    pub runtime_seconds: f64,
}

impl VerificationReport {
    /// All quantities pass.
    pub fn passed(&self) -> bool {
        self.quantities.iter().all(|q| q.pass)
    }

    /// First quantity with the given label, if any.
    pub fn quantity(&self, label: &str) -> Option<&Quantity> {
        self.quantities.iter().find(|q| q.label == label)
    }
}

/// Monte Carlo effort shared by the checks: path count, maximum step size,
/// and the base seed every per-path stream derives from.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Representable stopping rules for the dynamic programming check: a fixed
/// time in `(t, T]`, or the first exit from the domain eroded by `rho`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub enum StoppingRule {
    FixedTime(f64),
    FirstExitEroded(f64),
}

/// Additive error-budget constants.  The grid solver contributes
/// `c1 * (h + dt)`, the policy partition `c2 * (cell_h + slab_dt)`, the
/// path discretization `c3 * sqrt(dt)` (discrete exit detection biases
/// simulated costs at the half-order rate), and Monte Carlo noise three
/// standard errors on top of whichever terms a check combines.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl ErrorBudget {
    pub fn tol_solver(&self, spatial_h: f64, dt: f64) -> f64 {
        self.c1 * (spatial_h + dt)
    }

    pub fn tol_policy(&self, cell_h: f64, slab_dt: f64) -> f64 {
        self.c2 * (cell_h + slab_dt)
    }

    pub fn tol_sim(&self, dt: f64) -> f64 {
        self.c3 * dt.sqrt()
    }
}

/// Calibrate the budget constants once per problem by mesh halving.
///
/// The solver constant compares the field on `grid` against one solved at
/// half the spatial pitch (and at least four times the time steps); if the
/// error is first order in `h + dt`, the true gap is at most twice the
/// observed one, so `c1 = 2 * sup_gap / (h + dt)`.  The policy constant
/// halves the cell and slab pitches on the same refined field and prices
/// both policies with the same seed, so Monte Carlo noise cancels and the
/// gap isolates the partition effect.  The simulation constant reprices
/// the synthesized policy with the step quartered (halving `sqrt(dt)`,
/// same seed): if the exit-detection bias is `c * sqrt(dt)`, the observed
/// change is half the coarse bias, so `c3 = 2 * gap / sqrt(dt)`.  All
/// constants are floored at 1e-9 so exactly-solvable problems keep a
/// nonzero budget against rounding.
///
/// Requires `grid.spatial_h <= cell_h` so both policy pitches are
/// synthesizable from the refined field.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_budget(
    spec: &ProblemSpec,
    grid: &GridSpec,
    eps: f64,
    controls: &ControlSet,
    num_slabs: usize,
    cell_h: f64,
    t: f64,
    x: &[f64],
    mc: &McConfig,
) -> Result<ErrorBudget, VerifyError> {
    let coarse = solver::solve(spec, grid, eps, controls)?;
    let h_fine = grid.spatial_h / 2.0;
    let steps_fine =
        solver::min_time_steps(spec, h_fine, grid.delta, eps)?.max(grid.time_steps * 4);
    let grid_fine = GridSpec::new(spec, steps_fine, h_fine, grid.delta, eps)?;
    let fine = solver::solve(spec, &grid_fine, eps, controls)?;

    let mut sup_gap = 0.0f64;
    for level in 0..coarse.levels() {
        let tl = coarse.level_time(level);
        for k in 0..coarse.num_nodes() {
            if !coarse.is_interior_node(k) {
                continue;
            }
            let pos = coarse.node_position(k);
            sup_gap = sup_gap.max((coarse.value_at_node(level, k) - fine.evaluate(tl, &pos)).abs());
        }
    }
    let c1 = 2.0 * sup_gap / (grid.spatial_h + coarse.dt());

    let coarse_policy = policy::synthesize(&fine, spec, num_slabs, cell_h)?;
    let fine_policy = policy::synthesize(&fine, spec, num_slabs * 2, cell_h / 2.0)?;
    let coarse_law = ControlLaw::Markov(Arc::new(coarse_policy));
    let cost_coarse = sim::estimate_cost(spec, &coarse_law, t, x, mc.n_paths, mc.dt, mc.seed)?;
    let cost_fine = sim::estimate_cost(
        spec,
        &ControlLaw::Markov(Arc::new(fine_policy)),
        t,
        x,
        mc.n_paths,
        mc.dt,
        mc.seed,
    )?;
    let slab_dt = spec.horizon_t / num_slabs as f64;
    let c2 = 2.0 * (cost_coarse.mean - cost_fine.mean).abs() / (cell_h + slab_dt);

    let cost_quarter_dt =
        sim::estimate_cost(spec, &coarse_law, t, x, mc.n_paths, mc.dt / 4.0, mc.seed)?;
    let c3 = 2.0 * (cost_coarse.mean - cost_quarter_dt.mean).abs() / mc.dt.sqrt();

    Ok(ErrorBudget {
        c1: c1.max(1e-9),
        c2: c2.max(1e-9),
        c3: c3.max(1e-9),
    })
}

/// The candidate family for the sandwich checks: the synthesized Markov
/// policy first, then every constant policy from the field's control
/// subset.
pub fn standard_candidates(
    field: &ValueField,
    spec: &ProblemSpec,
    num_slabs: usize,
    cell_h: f64,
) -> Result<Vec<(String, ControlLaw)>, VerifyError> {
    let synthesized = policy::synthesize(field, spec, num_slabs, cell_h)?;
    let mut out = vec![(
        format!("markov[slabs={num_slabs},cell={cell_h}]"),
        ControlLaw::Markov(Arc::new(synthesized)),
    )];
    let n = field
        .control_subset
        .len_finite()
        .expect("solved fields carry a finite control subset");
    for point in field.control_subset.enumerate(n) {
        out.push((format!("constant{point:?}"), ControlLaw::Constant(point)));
    }
    Ok(out)
}

/// Value used to restart the dynamic programming identity at `(s, y)`: the
/// exact terminal/boundary datum once the path has left the problem's own
/// domain or reached the horizon, and the interpolated field inside.
pub fn restart_value(field: &ValueField, spec: &ProblemSpec, s: f64, y: &[f64]) -> f64 {
    if s >= field.horizon() - 1e-12 || !spec.domain.is_interior(y) {
        (spec.terminal_boundary_psi)(s, y)
    } else {
        field.evaluate(s, y)
    }
}

/// Sandwich form of the representation identity at `(t, x)`.
///
/// Simulates every candidate at the shared seed and checks that (i) the
/// cheapest candidate does not beat the field value by more than the solver
/// and simulation budgets, and (ii) the first candidate — by convention the
/// synthesized Markov policy — costs at most the field value plus the
/// solver, policy, and simulation budgets.  Three standard errors of the
/// relevant estimate are added to each side.
#[allow(clippy::too_many_arguments)]
pub fn representation_check(
    spec: &ProblemSpec,
    field: &ValueField,
    candidates: &[(String, ControlLaw)],
    t: f64,
    x: &[f64],
    mc: &McConfig,
    tol_solver: f64,
    tol_policy: f64,
    tol_sim: f64,
) -> Result<VerificationReport, VerifyError> {
    assert!(!candidates.is_empty(), "need at least one candidate policy");
    let start = Instant::now();
    let w = field.evaluate(t, x);
    let mut quantities = vec![Quantity::info("field_value", w)];
    let mut estimates: Vec<McEstimate> = Vec::with_capacity(candidates.len());
    for (label, law) in candidates {
        let est = sim::estimate_cost(spec, law, t, x, mc.n_paths, mc.dt, mc.seed)?;
        quantities.push(Quantity::info(format!("estimate[{label}]"), est.mean));
        quantities.push(Quantity::info(format!("se[{label}]"), est.std_error));
        estimates.push(est);
    }
    let (i_best, best) = estimates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
        .expect("candidates are nonempty");
    quantities.push(Quantity::info("best_candidate_index", i_best as f64));
    quantities.push(Quantity::one_sided(
        "sandwich_lower_gap",
        w - best.mean,
        tol_solver + tol_sim + 3.0 * best.std_error,
    ));
    let synth = &estimates[0];
    quantities.push(Quantity::one_sided(
        "sandwich_upper_gap",
        synth.mean - w,
        tol_solver + tol_policy + tol_sim + 3.0 * synth.std_error,
    ));
    Ok(VerificationReport {
        name: format!("representation[{}]", spec.name),
        quantities,
        seeds: vec![mc.seed],
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

enum StopMode {
    Horizon,
    Fixed { ts: f64, dt: f64 },
    Eroded(DomainSpec),
}

fn resolve_rule(
    spec: &ProblemSpec,
    rule: &StoppingRule,
    t: f64,
    x: &[f64],
    dt: f64,
) -> Result<StopMode, VerifyError> {
    match *rule {
        StoppingRule::FixedTime(ts) => {
            if !(ts > t + 1e-12 && ts <= spec.horizon_t + 1e-9) {
                return Err(VerifyError::BadStoppingRule(format!(
                    "fixed time {ts} lies outside ({t}, {}]",
                    spec.horizon_t
                )));
            }
            if ts >= spec.horizon_t - 1e-12 {
                return Ok(StopMode::Horizon);
            }
            // Refine the step so the fixed time lands on the path grid.
            let span = ts - t;
            let pieces = (span / dt).ceil().max(1.0);
            Ok(StopMode::Fixed {
                ts,
                dt: span / pieces,
            })
        }
        StoppingRule::FirstExitEroded(rho) => {
            if rho <= 0.0 {
                return Err(VerifyError::BadStoppingRule(format!(
                    "erosion depth must be positive, got {rho}"
                )));
            }
            let eroded = spec.domain.dilate(-rho).map_err(|e| {
                VerifyError::BadStoppingRule(format!("erosion by {rho} is not admissible: {e}"))
            })?;
            if !eroded.is_interior(x) {
                return Err(VerifyError::BadStoppingRule(format!(
                    "start point {x:?} is not interior to the domain eroded by {rho}"
                )));
            }
            Ok(StopMode::Eroded(eroded))
        }
    }
}

fn dpp_values(
    spec: &ProblemSpec,
    field: &ValueField,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    mode: &StopMode,
    mc: &McConfig,
) -> Result<Vec<f64>, VerifyError> {
    let values: Result<Vec<f64>, SimError> = (0..mc.n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut streams = PathStreams::for_path(mc.seed, i);
            match mode {
                StopMode::Horizon => {
                    let rec = sim::simulate(spec, law, t, x, mc.dt, 0.0, &mut streams)?;
                    Ok(rec.running_cost
                        + restart_value(field, spec, rec.exit_time_tau, &rec.exit_state))
                }
                StopMode::Fixed { ts, dt } => {
                    let rec = sim::simulate(spec, law, t, x, *dt, 0.0, &mut streams)?;
                    let t_end = *rec.times.last().expect("records hold at least one time");
                    if t_end < ts - 1e-9 {
                        // The path left the domain strictly before the fixed
                        // time, so the stopped pair is the exit pair.
                        return Ok(rec.running_cost
                            + restart_value(field, spec, rec.exit_time_tau, &rec.exit_state));
                    }
                    let (i_star, t_star) = rec
                        .times
                        .iter()
                        .copied()
                        .enumerate()
                        .min_by(|a, b| (a.1 - ts).abs().total_cmp(&(b.1 - ts).abs()))
                        .expect("records hold at least one time");
                    debug_assert!((t_star - ts).abs() <= 1e-9);
                    Ok(sim::running_cost_until(&rec, spec, t_star)
                        + restart_value(field, spec, t_star, &rec.states[i_star]))
                }
                StopMode::Eroded(eroded) => {
                    let rec = sim::simulate_with_exit_domain(
                        spec,
                        law,
                        t,
                        x,
                        mc.dt,
                        0.0,
                        &mut streams,
                        eroded,
                    )?;
                    Ok(rec.running_cost
                        + restart_value(field, spec, rec.exit_time_tau, &rec.exit_state))
                }
            }
        })
        .collect();
    Ok(values?)
}

/// Dynamic programming identity at `(t, x)` under a representable stopping
/// rule: the cheapest candidate's estimate of
/// `running cost up to the stop + restart value at the stopped pair` must
/// match the field value to within `tol_total` plus three standard errors.
///
/// With the rule fixed at the horizon, every stopped pair is the exit pair
/// and the per-candidate estimates reproduce [`representation_check`]'s
/// bit for bit at the same seeds.
#[allow(clippy::too_many_arguments)]
pub fn dpp_check(
    spec: &ProblemSpec,
    field: &ValueField,
    candidates: &[(String, ControlLaw)],
    t: f64,
    x: &[f64],
    rule: &StoppingRule,
    mc: &McConfig,
    tol_total: f64,
) -> Result<VerificationReport, VerifyError> {
    assert!(!candidates.is_empty(), "need at least one candidate policy");
    let start = Instant::now();
    let mode = resolve_rule(spec, rule, t, x, mc.dt)?;
    let w = field.evaluate(t, x);
    let mut quantities = vec![Quantity::info("field_value", w)];
    let mut means: Vec<(f64, f64)> = Vec::with_capacity(candidates.len());
    for (label, law) in candidates {
        let values = dpp_values(spec, field, law, t, x, &mode, mc)?;
        let (mean, se) = num::mean_and_std_error(&values);
        quantities.push(Quantity::info(format!("estimate[{label}]"), mean));
        quantities.push(Quantity::info(format!("se[{label}]"), se));
        means.push((mean, se));
    }
    let (i_best, (best_mean, best_se)) = means
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("candidates are nonempty");
    quantities.push(Quantity::info("best_candidate_index", i_best as f64));
    quantities.push(Quantity::two_sided(
        "dpp_gap",
        best_mean - w,
        tol_total + 3.0 * best_se,
    ));
    Ok(VerificationReport {
        name: format!("dpp[{} {rule:?}]", spec.name),
        quantities,
        seeds: vec![mc.seed],
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Common-random-number coupling probe between two coefficient-compatible
/// problems.
///
/// Pairs share noise and realized controls.  Reported quantities: the
/// fraction of pairs whose sup deviation exceeds `delta / 2` (checked
/// against the empirical Markov bound, an internal consistency rule); the
/// number of complement-event pairs where the first system leaves its
/// domain *later* than the second leaves the `delta/2`-enlarged domain
/// (the pathwise exit-order identity — must be zero); and the deviation
/// second moment against the explicit stability bound.
#[allow(clippy::too_many_arguments)]
pub fn coupling_probe(
    spec_a: &ProblemSpec,
    spec_b: &ProblemSpec,
    law: &ControlLaw,
    delta: f64,
    t: f64,
    x: &[f64],
    mc: &McConfig,
) -> Result<VerificationReport, VerifyError> {
    assert!(delta > 0.0, "need a positive coupling margin");
    let start = Instant::now();
    let enlarged = spec_a.domain.dilate(0.5 * delta)?;
    let domain_a = spec_a.domain.clone();
    let triples: Vec<(f64, f64, f64)> = sim::compare_pairs(
        spec_a,
        spec_b,
        law,
        t,
        x,
        mc.n_paths,
        mc.dt,
        mc.seed,
        |ra, rb| {
            let n = ra.states.len().min(rb.states.len());
            let mut sup = 0.0f64;
            for i in 0..n {
                sup = sup.max(num::dist2(&ra.states[i], &rb.states[i]));
            }
            let (tau_a, _) = sim::exit_against(ra, &domain_a);
            let (tau_b, _) = sim::exit_against(rb, &enlarged);
            (sup, tau_a, tau_b)
        },
    )?;

    let threshold = 0.5 * delta;
    let n = triples.len() as f64;
    let p_hat = triples.iter().filter(|(s, _, _)| *s > threshold).count() as f64 / n;
    let sup_sq: Vec<f64> = triples.iter().map(|(s, _, _)| s * s).collect();
    let (moment, moment_se) = num::mean_and_std_error(&sup_sq);
    let markov_bound = (moment / (threshold * threshold)).min(1.0);
    let violations = triples
        .iter()
        .filter(|(s, tau_a, tau_b)| *s <= threshold && *tau_a > *tau_b + 1e-12)
        .count() as f64;

    let (db, dsig, dgam_sq, _) = sim::coefficient_gaps(spec_a, spec_b, 10_000);
    let c = spec_a.lipschitz_c.max(spec_b.lipschitz_c);
    let k3 = sim::k3_constant(c, spec_a.horizon_t, spec_a.levy.second_moment());
    let stability_bound = k3 * (db * db + dsig * dsig + dgam_sq);

    let quantities = vec![
        Quantity::info("delta", delta),
        Quantity::one_sided("coupling_failure_fraction", p_hat, markov_bound),
        Quantity::one_sided("exit_order_violations", violations, 0.0),
        Quantity::one_sided(
            "pathwise_second_moment",
            moment,
            stability_bound + 4.0 * moment_se + 1e-12,
        ),
    ];
    Ok(VerificationReport {
        name: format!("coupling[{} vs {}]", spec_a.name, spec_b.name),
        quantities,
        seeds: vec![mc.seed],
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Finite-control projection probe: simulate the base law and its
/// projection onto the first `n` enumerated controls under common noise for
/// each `n` in the increasing schedule, and report the empirical sup
/// deviation second moments.  Passes when the moments are non-increasing
/// along the schedule (the enumeration is nested) and the final one is at
/// most `tol_final`.
#[allow(clippy::too_many_arguments)]
pub fn control_projection_probe(
    spec: &ProblemSpec,
    law: &ControlLaw,
    n_schedule: &[usize],
    tol_final: f64,
    t: f64,
    x: &[f64],
    mc: &McConfig,
) -> Result<VerificationReport, VerifyError> {
    assert!(!n_schedule.is_empty(), "need at least one subset size");
    assert!(
        n_schedule.iter().all(|&n| n >= 1),
        "subset sizes must be positive"
    );
    assert!(
        n_schedule.windows(2).all(|w| w[0] < w[1]),
        "the schedule must increase"
    );
    let start = Instant::now();
    let mut quantities = Vec::new();
    let mut moments = Vec::with_capacity(n_schedule.len());
    for &n_sub in n_schedule {
        let subset = ControlSet::finite(spec.controls.enumerate(n_sub))?;
        let projected = ControlLaw::Projected {
            base: Arc::new(law.clone()),
            subset,
        };
        let sups: Result<Vec<f64>, SimError> = (0..mc.n_paths as u64)
            .into_par_iter()
            .map(|i| {
                let mut streams_a = PathStreams::for_path(mc.seed, i);
                let rec_a = sim::simulate_unstopped(spec, law, t, x, mc.dt, 0.0, &mut streams_a)?;
                let mut streams_b = PathStreams::for_path(mc.seed, i);
                let rec_b =
                    sim::simulate_unstopped(spec, &projected, t, x, mc.dt, 0.0, &mut streams_b)?;
                let steps = rec_a.states.len().min(rec_b.states.len());
                let mut sup = 0.0f64;
                for k in 0..steps {
                    let d = num::dist2(&rec_a.states[k], &rec_b.states[k]);
                    sup = sup.max(d * d);
                }
                Ok(sup)
            })
            .collect();
        let (moment, _) = num::mean_and_std_error(&sups?);
        quantities.push(Quantity::info(format!("sup_moment[n={n_sub}]"), moment));
        moments.push(moment);
    }
    let scale = moments.iter().fold(0.0f64, |a, &b| a.max(b));
    let max_increase = moments
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    quantities.push(Quantity::one_sided(
        "projection_trend_max_increase",
        max_increase,
        1e-12 * (1.0 + scale),
    ));
    quantities.push(Quantity::one_sided(
        "projection_final_moment",
        *moments.last().expect("schedule is nonempty"),
        tol_final,
    ));
    Ok(VerificationReport {
        name: format!("control_projection[{}]", spec.name),
        quantities,
        seeds: vec![mc.seed],
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DomainSpec;
    use crate::levy::LevyModel;
    use crate::problem::{make_problem, Dims, FamilyParams};

    fn frozen_spec() -> ProblemSpec {
        ProblemSpec {
            name: "frozen".into(),
            dims: Dims { d: 1, m1: 1, m2: 1 },
            horizon_t: 1.0,
            drift_b: Arc::new(|_, _, _| vec![0.0]),
            vol_sigma: Arc::new(|_, _, _| vec![0.0]),
            jump_gamma: Arc::new(|_, _, _, _| vec![0.0]),
            running_cost_gamma: Arc::new(|_, _, _| 0.4),
            terminal_boundary_psi: Arc::new(|_, _| 2.0),
            lipschitz_c: 1.0,
            boundary_ellipticity_lambda: 0.0,
            domain: DomainSpec::interval(-1.0, 1.0).unwrap(),
            levy: LevyModel::empty(1),
            controls: ControlSet::finite(vec![vec![0.0]]).unwrap(),
        }
    }

    fn solved(spec: &ProblemSpec, h: f64) -> ValueField {
        let steps = solver::min_time_steps(spec, h, 0.0, 0.0).unwrap();
        let grid = GridSpec::new(spec, steps, h, 0.0, 0.0).unwrap();
        solver::solve(spec, &grid, 0.0, &spec.controls).unwrap()
    }

    fn mc(n_paths: usize, dt: f64, seed: u64) -> McConfig {
        McConfig { n_paths, dt, seed }
    }

    #[test]
    fn frozen_dynamics_pass_the_sandwich_with_zero_variance() {
        let spec = frozen_spec();
        let field = solved(&spec, 0.25);
        let candidates = standard_candidates(&field, &spec, 2, 0.25).unwrap();
        let report = representation_check(
            &spec,
            &field,
            &candidates,
            0.0,
            &[0.1],
            &mc(64, 0.05, 7),
            1e-9,
            1e-9,
            0.0,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        for q in &report.quantities {
            if q.label.starts_with("se[") {
                assert_eq!(q.value, 0.0, "frozen paths are identical: {q:?}");
            }
        }
        let w = report.quantity("field_value").unwrap().value;
        assert!((w - 2.4).abs() < 1e-12);
    }

    #[test]
    fn horizon_stopping_reproduces_the_representation_estimates() {
        let spec = make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
        let field = solved(&spec, 0.25);
        let candidates = standard_candidates(&field, &spec, 4, 0.25).unwrap();
        let shared = mc(300, 0.02, 11);
        let rep = representation_check(
            &spec,
            &field,
            &candidates,
            0.0,
            &[0.1],
            &shared,
            0.5,
            0.5,
            0.0,
        )
        .unwrap();
        let dpp = dpp_check(
            &spec,
            &field,
            &candidates,
            0.0,
            &[0.1],
            &StoppingRule::FixedTime(spec.horizon_t),
            &shared,
            1.0,
        )
        .unwrap();
        let mut compared = 0;
        for q in &rep.quantities {
            if q.label.starts_with("estimate[") || q.label.starts_with("se[") {
                let other = dpp.quantity(&q.label).unwrap();
                assert_eq!(q.value.to_bits(), other.value.to_bits(), "{}", q.label);
                compared += 1;
            }
        }
        assert_eq!(compared, 2 * candidates.len());
        assert!(dpp.passed(), "{dpp:?}");
    }

    #[test]
    fn frozen_dynamics_telescope_the_dpp_through_an_interior_stop() {
        let spec = frozen_spec();
        let field = solved(&spec, 0.25);
        let candidates = vec![("hold".to_string(), ControlLaw::Constant(vec![0.0]))];
        let report = dpp_check(
            &spec,
            &field,
            &candidates,
            0.0,
            &[0.1],
            &StoppingRule::FixedTime(0.5),
            &mc(32, 0.05, 3),
            1e-9,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        let gap = report.quantity("dpp_gap").unwrap();
        assert!(gap.value.abs() < 1e-12, "telescoping is exact: {gap:?}");
    }

    #[test]
    fn unrepresentable_stopping_rules_are_rejected() {
        let spec = frozen_spec();
        let field = solved(&spec, 0.25);
        let candidates = vec![("hold".to_string(), ControlLaw::Constant(vec![0.0]))];
        let run = |rule: StoppingRule, x: f64| {
            dpp_check(
                &spec,
                &field,
                &candidates,
                0.0,
                &[x],
                &rule,
                &mc(8, 0.1, 1),
                1.0,
            )
        };
        for (rule, x) in [
            (StoppingRule::FixedTime(0.0), 0.1),
            (StoppingRule::FixedTime(2.0), 0.1),
            (StoppingRule::FirstExitEroded(-0.1), 0.1),
            (StoppingRule::FirstExitEroded(1.2), 0.1),
            (StoppingRule::FirstExitEroded(0.4), 0.65),
        ] {
            let err = run(rule, x).unwrap_err();
            assert!(
                matches!(err, VerifyError::BadStoppingRule(_)),
                "{rule:?} from x={x} should be rejected, got {err:?}"
            );
        }
    }

    #[test]
    fn eroded_exit_stopping_stays_within_budget() {
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let field = solved(&spec, 0.1);
        let candidates = vec![("hold".to_string(), ControlLaw::Constant(vec![0.0]))];
        let report = dpp_check(
            &spec,
            &field,
            &candidates,
            0.0,
            &[0.2],
            &StoppingRule::FirstExitEroded(0.3),
            &mc(400, 0.01, 5),
            0.05,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn identical_problems_couple_exactly() {
        let spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let report = coupling_probe(
            &spec,
            &spec,
            &ControlLaw::Constant(vec![0.0]),
            0.2,
            0.0,
            &[0.1],
            &mc(64, 0.05, 13),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(
            report.quantity("coupling_failure_fraction").unwrap().value,
            0.0
        );
        assert_eq!(report.quantity("exit_order_violations").unwrap().value, 0.0);
        assert_eq!(report.quantity("pathwise_second_moment").unwrap().value, 0.0);
    }

    #[test]
    fn coupling_failures_shrink_with_the_perturbation() {
        let base = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        let law = ControlLaw::Constant(vec![0.0]);
        let delta = 0.1 * base.domain.prox_radius_eta();
        let mut fractions = Vec::new();
        for shift in [1e-1, 1e-2, 1e-3] {
            let mut other =
                make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
            other.name = format!("shifted[{shift}]");
            other.drift_b = Arc::new(move |_, _, _| vec![shift]);
            let report =
                coupling_probe(&base, &other, &law, delta, 0.0, &[0.1], &mc(128, 0.02, 17))
                    .unwrap();
            assert!(report.passed(), "{report:?}");
            assert_eq!(report.quantity("exit_order_violations").unwrap().value, 0.0);
            fractions.push(report.quantity("coupling_failure_fraction").unwrap().value);
        }
        assert!(
            fractions.windows(2).all(|w| w[1] <= w[0] + 1e-12),
            "fractions should not increase: {fractions:?}"
        );
        assert!(fractions[2] <= 0.01, "{fractions:?}");
    }

    #[test]
    fn subset_valued_laws_have_zero_projection_gap() {
        let spec = make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
        let first = spec.controls.enumerate(1).remove(0);
        let report = control_projection_probe(
            &spec,
            &ControlLaw::Constant(first),
            &[1, 2],
            1e-12,
            0.0,
            &[0.1],
            &mc(48, 0.05, 19),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        for q in &report.quantities {
            if q.label.starts_with("sup_moment[") {
                assert_eq!(q.value, 0.0, "projection is idempotent: {q:?}");
            }
        }
    }

    #[test]
    fn finer_control_meshes_track_a_sinusoidal_law() {
        let params = FamilyParams {
            controls: Some(ControlSet::bounded_box(vec![-1.0], vec![1.0]).unwrap()),
            ..FamilyParams::default()
        };
        let spec = make_problem("controlled_drift_interval", params).unwrap();
        let law = ControlLaw::Deterministic(Arc::new(|s, _| {
            vec![0.9 * (2.0 * std::f64::consts::PI * s).sin()]
        }));
        let report = control_projection_probe(
            &spec,
            &law,
            &[2, 8, 32],
            0.01,
            0.0,
            &[0.1],
            &mc(48, 0.02, 23),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        let values: Vec<f64> = report
            .quantities
            .iter()
            .filter(|q| q.label.starts_with("sup_moment["))
            .map(|q| q.value)
            .collect();
        assert_eq!(values.len(), 3);
        assert!(
            values[0] > values[1] && values[1] > values[2],
            "moments should strictly decrease: {values:?}"
        );
    }

    #[test]
    fn reports_are_reproducible_bit_for_bit() {
        let spec = make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
        let field = solved(&spec, 0.25);
        let candidates = standard_candidates(&field, &spec, 4, 0.25).unwrap();
        let cfg = mc(128, 0.02, 29);
        let run = || {
            representation_check(&spec, &field, &candidates, 0.0, &[0.1], &cfg, 0.5, 0.5, 0.1)
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.seeds, b.seeds);
        assert_eq!(a.quantities.len(), b.quantities.len());
        for (qa, qb) in a.quantities.iter().zip(&b.quantities) {
            assert_eq!(qa.label, qb.label);
            assert_eq!(qa.value.to_bits(), qb.value.to_bits(), "{}", qa.label);
            assert_eq!(qa.pass, qb.pass);
        }
    }

    #[test]
    fn budget_calibration_yields_finite_positive_constants() {
        let spec = make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
        let steps = solver::min_time_steps(&spec, 0.2, 0.0, 0.0).unwrap();
        let grid = GridSpec::new(&spec, steps, 0.2, 0.0, 0.0).unwrap();
        let budget = calibrate_budget(
            &spec,
            &grid,
            0.0,
            &spec.controls,
            5,
            0.2,
            0.0,
            &[0.1],
            &mc(200, 0.02, 31),
        )
        .unwrap();
        assert!(budget.c1.is_finite() && budget.c1 >= 1e-9);
        assert!(budget.c2.is_finite() && budget.c2 >= 1e-9);
        assert!(budget.c3.is_finite() && budget.c3 >= 1e-9);
        let tol = budget.tol_solver(0.1, 0.01);
        assert!((tol - budget.c1 * 0.11).abs() < 1e-15);
        let tol = budget.tol_sim(0.01);
        assert!((tol - budget.c3 * 0.1).abs() < 1e-15);
    }

    #[test]
    fn candidate_family_leads_with_the_synthesized_policy() {
        let spec = make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
        let field = solved(&spec, 0.25);
        let candidates = standard_candidates(&field, &spec, 3, 0.25).unwrap();
        assert_eq!(candidates.len(), 3);
        assert!(candidates[0].0.starts_with("markov["));
        assert!(candidates[1].0.starts_with("constant["));
        assert!(candidates[2].0.starts_with("constant["));
    }
}

