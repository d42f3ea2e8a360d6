//! Jump-adapted Euler simulation of the controlled jump-diffusion, exit-time
//! detection, Monte Carlo cost estimation, and empirical checks of the
//! classical moment and stability estimates with explicit constants.
//!
//! The state follows
//!
//! ```text
//! dX = b(s, X, U) ds + sigma(s, X, U) dW + jump part,
//! ```
//!
//! where the jump part adds `gamma(s, X(s-), U(s), z)` at each event of a
//! finite-rate Poisson measure and subtracts its compensator drift
//! `sum_j w_j gamma(s, X, U, z_j)` continuously, so the jump integral is a
//! martingale.  Paths are driven by named noise channels
//! ([`crate::rng::PathStreams`]) so that common-random-number comparisons and
//! worker-count-independent Monte Carlo reductions are exact.
//!
//! Exit detection is discrete: the exit time is the first grid-or-jump time
//! whose state is not strictly interior to the domain, with the convention
//! that paths that never leave exit at the horizon with their final state.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::DomainSpec;
use crate::levy::JumpEvent;
use crate::num;
use crate::policy::{project_control, MarkovPolicy};
use crate::problem::{ControlKind, ControlSet, ProblemSpec};
use crate::rng::PathStreams;

/// Constant used for the `L^2` maximal inequality in the explicit moment
/// bounds (Doob's constant for `p = 2`; any larger martingale-maximal
/// constant only loosens the bounds).
pub const LAMBDA_BDG: f64 = 4.0;

/// Explicit constant in the window-increment moment bound: paths satisfy
/// `E sup_{s in [l1, l2]} |X(s) - X(l1)|^2 <= k2 * (l2 - l1)` with
/// `k2 = 3 c^2 (T + Lambda (1 + m))`, where `c` bounds the coefficients,
/// `T` is the horizon, and `m` is the second moment of the jump measure.
pub fn k2_constant(c: f64, horizon: f64, m: f64) -> f64 {
    3.0 * c * c * (horizon + LAMBDA_BDG * (1.0 + m))
}

/// Explicit Gronwall constant in the coefficient-stability bound:
/// `E sup |X - X~|^2 <= k3 * (|b - b~|^2 + |sigma - sigma~|^2 + sum_j w_j
/// |gamma - gamma~|_j^2)` with
/// `k3 = 6 T (T + Lambda) exp(6 c^2 (1 + m) (T + Lambda) T)`.
pub fn k3_constant(c: f64, horizon: f64, m: f64) -> f64 {
    6.0 * horizon
        * (horizon + LAMBDA_BDG)
        * (6.0 * c * c * (1.0 + m) * (horizon + LAMBDA_BDG) * horizon).exp()
}

/// Constant in the running-cost stability bound, consistent with
/// [`k3_constant`]: `k4 = sqrt(k3)`.
pub fn k4_constant(c: f64, horizon: f64, m: f64) -> f64 {
    k3_constant(c, horizon, m).sqrt()
}

/// Conservative factor for the global second-moment bound
/// `E sup_{[t, T]} |X(s)|^2 <= k1_bound_factor(..) * (1 + |x|^2)`, namely
/// `3 (|x|^2 + c^2 T (T + Lambda (1 + m))) exp(3 c^2 (2 + m) (T + Lambda) T)
/// / (1 + |x|^2)`.
pub fn k1_bound_factor(c: f64, horizon: f64, m: f64, x_norm_sq: f64) -> f64 {
    3.0 * (x_norm_sq + c * c * horizon * (horizon + LAMBDA_BDG * (1.0 + m)))
        * (3.0 * c * c * (2.0 + m) * (horizon + LAMBDA_BDG) * horizon).exp()
        / (1.0 + x_norm_sq)
}

/// Errors from simulation and Monte Carlo estimation.
#[derive(Debug, Error)]
pub enum SimError {
    /// A coefficient or state component became non-finite.
    #[error("non-finite state or coefficient at time {time}")]
    NonFiniteState { time: f64 },
    /// A probe window does not satisfy `t <= l1 < l2 <= horizon`.
    #[error("bad probe window [{l1}, {l2}] for the span [{start}, {horizon}]")]
    BadWindow {
        l1: f64,
        l2: f64,
        start: f64,
        horizon: f64,
    },
    /// Two problems cannot be compared under common noise.
    #[error("incompatible problem specs: {0}")]
    IncompatibleSpecs(String),
}

/// A control law the simulator can apply.
///
/// The law is evaluated once per time step, predictably: constant laws
/// ignore their arguments, deterministic closed-loop laws see the left
/// endpoint `(s_i, X(s_i))`, Markov policies see the time slab containing
/// the step and the state recorded at the slab's left knot, and projected
/// laws post-compose any base law with nearest-member projection onto a
/// finite control subset.
#[derive(Clone)]
pub enum ControlLaw {
    Constant(Vec<f64>),
    Deterministic(Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>),
    Markov(Arc<MarkovPolicy>),
    Projected {
        base: Arc<ControlLaw>,
        subset: ControlSet,
    },
}

impl ControlLaw {
    /// Time knots the step grid must refine for exact slab alignment.
    fn knots(&self) -> Option<&[f64]> {
        match self {
            ControlLaw::Markov(p) => Some(&p.time_knots),
            ControlLaw::Projected { base, .. } => base.knots(),
            _ => None,
        }
    }

    /// Control for the step `(s_left, s_right]` given the left state and the
    /// state at the last policy knot.
    fn eval(&self, s_left: f64, s_right: f64, x_left: &[f64], x_at_knot: &[f64]) -> Vec<f64> {
        match self {
            ControlLaw::Constant(u) => u.clone(),
            ControlLaw::Deterministic(f) => f(s_left, x_left),
            ControlLaw::Markov(p) => p.evaluate(s_right, x_at_knot).to_vec(),
            ControlLaw::Projected { base, subset } => {
                project_control(&base.eval(s_left, s_right, x_left, x_at_knot), subset)
            }
        }
    }
}

impl fmt::Debug for ControlLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlLaw::Constant(u) => f.debug_tuple("Constant").field(u).finish(),
            ControlLaw::Deterministic(_) => write!(f, "Deterministic(<closure>)"),
            ControlLaw::Markov(p) => f
                .debug_struct("Markov")
                .field("slabs", &p.num_slabs())
                .field("cells", &p.cells.num_cells())
                .finish(),
            ControlLaw::Projected { base, .. } => {
                f.debug_tuple("Projected").field(base).finish()
            }
        }
    }
}

/// One simulated path: the merged step/jump grid, states, per-step controls,
/// jump events, the detected exit pair, and the left-endpoint running cost
/// accumulated up to the exit time.
#[derive(Clone, Debug)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls_applied: Vec<Vec<f64>>,
    pub jump_events: Vec<JumpEvent>,
    pub exit_time_tau: f64,
    pub exit_state: Vec<f64>,
    pub running_cost: f64,
}

impl PathRecord {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("records hold at least one state")
    }

    /// Realized cost `running_cost + psi(tau, X(tau))`.
    pub fn cost_with_terminal(&self, spec: &ProblemSpec) -> f64 {
        self.running_cost + (spec.terminal_boundary_psi)(self.exit_time_tau, &self.exit_state)
    }
}

/// A Monte Carlo estimate with its standard error and provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// One window's empirical increment moment against its explicit bound.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WindowMoment {
    pub window: (f64, f64),
    pub empirical: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Common-noise pathwise deviation of two problems against the explicit
/// stability bound, plus the per-path sup deviations for coupling studies.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathwiseCompare {
    pub empirical: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
    pub sup_deviations: Vec<f64>,
}

impl PathwiseCompare {
    /// Fraction of common-noise path pairs whose sup deviation exceeds
    /// `threshold` (an empirical coupling-failure probability).
    pub fn fraction_exceeding(&self, threshold: f64) -> f64 {
        if self.sup_deviations.is_empty() {
            return 0.0;
        }
        let n = self.sup_deviations.iter().filter(|&&d| d > threshold).count();
        n as f64 / self.sup_deviations.len() as f64
    }
}

/// Both sides of the running-cost stability inequality.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CostCompare {
    pub empirical: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Empirical global second moment of a path supremum against its bound.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MomentCheck {
    pub empirical: f64,
    pub std_error: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Optional overrides for cost estimation: extra isotropic noise intensity
/// and a replacement exit domain (used for dilated-domain exit studies).
#[derive(Clone, Debug, Default)]
pub struct CostOptions {
    pub extra_bm_eps: f64,
    pub exit_domain: Option<DomainSpec>,
}

/// Control source for one path: a live law or a replayed per-step sequence.
enum Steering<'a> {
    Law(&'a ControlLaw),
    Replay(&'a [Vec<f64>]),
}

impl Steering<'_> {
    fn knots(&self) -> Option<&[f64]> {
        match self {
            Steering::Law(law) => law.knots(),
            Steering::Replay(_) => None,
        }
    }

    fn control(
        &self,
        step: usize,
        s_left: f64,
        s_right: f64,
        x_left: &[f64],
        x_at_knot: &[f64],
    ) -> Vec<f64> {
        match self {
            Steering::Law(law) => law.eval(s_left, s_right, x_left, x_at_knot),
            Steering::Replay(seq) => {
                assert!(step < seq.len(), "replayed control sequence too short");
                seq[step].clone()
            }
        }
    }
}

struct RunConfig<'a> {
    stop_at_exit: bool,
    exit_domain: &'a DomainSpec,
    extra_times: &'a [f64],
    extra_bm_eps: f64,
}

fn grid_tol(horizon: f64) -> f64 {
    1e-12 * horizon.max(1.0)
}

/// Union of the uniform step grid, the horizon, any control knots and forced
/// times inside the open span, and the jump times; sorted, de-duplicated
/// within a rounding tolerance, first element exactly `t`, last exactly
/// `horizon`.
fn build_time_grid(
    t: f64,
    horizon: f64,
    dt: f64,
    jump_times: &[f64],
    knots: Option<&[f64]>,
    extra: &[f64],
) -> Vec<f64> {
    let tol = grid_tol(horizon);
    let span = horizon - t;
    let n = ((span / dt).ceil() as usize).max(1);
    let mut ts: Vec<f64> = (1..n).map(|k| t + k as f64 * dt).collect();
    if let Some(ks) = knots {
        ts.extend(ks.iter().copied().filter(|&s| s > t + tol && s < horizon - tol));
    }
    ts.extend(extra.iter().copied().filter(|&s| s > t + tol && s < horizon - tol));
    ts.extend(jump_times.iter().copied().filter(|&s| s > t && s <= horizon));
    ts.sort_by(f64::total_cmp);

    let mut out = vec![t];
    for &s in &ts {
        if s - out.last().unwrap() > tol {
            out.push(s);
        }
    }
    if (out.last().unwrap() - horizon).abs() <= tol {
        *out.last_mut().unwrap() = horizon;
    } else {
        out.push(horizon);
    }
    out
}

fn index_of_time(times: &[f64], s: f64, tol: f64) -> usize {
    let i = times.partition_point(|&v| v < s - tol);
    debug_assert!(
        i < times.len() && (times[i] - s).abs() <= tol,
        "time {s} not on the recorded grid"
    );
    i.min(times.len() - 1)
}

fn contains_time(sorted: &[f64], s: f64, tol: f64) -> bool {
    let i = sorted.partition_point(|&v| v < s - tol);
    i < sorted.len() && (sorted[i] - s).abs() <= tol
}

fn check_finite(x: &[f64], time: f64) -> Result<(), SimError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SimError::NonFiniteState { time })
    }
}

/// The single-path Euler engine shared by every public entry point.
fn run_path(
    spec: &ProblemSpec,
    steering: &Steering<'_>,
    t: f64,
    x0: &[f64],
    dt: f64,
    streams: &mut PathStreams,
    cfg: &RunConfig<'_>,
) -> Result<PathRecord, SimError> {
    let d = spec.dims.d;
    let m1 = spec.dims.m1;
    assert_eq!(x0.len(), d, "initial state dimension mismatch");
    assert!(dt > 0.0, "step size must be positive");
    assert!(
        (0.0..=spec.horizon_t + grid_tol(spec.horizon_t)).contains(&t),
        "start time outside [0, horizon]"
    );
    check_finite(x0, t)?;

    let horizon = spec.horizon_t;
    let tol = grid_tol(horizon);
    let start_interior = cfg.exit_domain.is_interior(x0);

    // Degenerate span, or immediate exit in stopping mode: a one-point path.
    if horizon - t <= tol || (cfg.stop_at_exit && !start_interior) {
        return Ok(PathRecord {
            times: vec![t],
            states: vec![x0.to_vec()],
            controls_applied: vec![],
            jump_events: vec![],
            exit_time_tau: t,
            exit_state: x0.to_vec(),
            running_cost: 0.0,
        });
    }

    let jump_events = spec.levy.sample_jumps(t, horizon, &mut streams.jumps);
    let jump_times: Vec<f64> = jump_events.iter().map(|e| e.time).collect();
    let times = build_time_grid(t, horizon, dt, &jump_times, steering.knots(), cfg.extra_times);

    let mut states: Vec<Vec<f64>> = Vec::with_capacity(times.len());
    let mut controls: Vec<Vec<f64>> = Vec::with_capacity(times.len() - 1);
    let mut recorded_events: Vec<JumpEvent> = Vec::with_capacity(jump_events.len());
    let mut x = x0.to_vec();
    states.push(x.clone());
    let mut x_knot = x.clone();
    let mut exited: Option<(f64, Vec<f64>)> = if start_interior {
        None
    } else {
        Some((t, x.clone()))
    };
    let mut cost = 0.0;
    let mut ev_i = 0usize;

    for i in 0..times.len() - 1 {
        let s0 = times[i];
        let s1 = times[i + 1];
        let h = s1 - s0;
        let u = steering.control(i, s0, s1, &x, &x_knot);

        let b = (spec.drift_b)(s0, &x, &u);
        let sig = (spec.vol_sigma)(s0, &x, &u);
        assert_eq!(b.len(), d, "drift dimension mismatch");
        assert_eq!(sig.len(), d * m1, "volatility shape mismatch");
        let comp = if spec.levy.atoms().is_empty() {
            vec![0.0; d]
        } else {
            spec.levy
                .compensator_drift(d, |z| (spec.jump_gamma)(s0, &x, &u, z))
        };

        // Brownian increments are always drawn (one block per step) so that
        // common-random-number runs consume the channel identically.
        let sqrt_h = h.sqrt();
        let mut dw = vec![0.0; m1];
        for w in dw.iter_mut() {
            *w = sqrt_h * streams.diffusion.sample::<f64, _>(StandardNormal);
        }
        let sdw = num::mat_vec(&sig, d, m1, &dw);
        let mut xn: Vec<f64> = (0..d)
            .map(|r| x[r] + h * (b[r] - comp[r]) + sdw[r])
            .collect();
        if cfg.extra_bm_eps > 0.0 {
            let scale = (cfg.extra_bm_eps * h).sqrt();
            for v in xn.iter_mut() {
                *v += scale * streams.extra.sample::<f64, _>(StandardNormal);
            }
        }

        // Left-endpoint running cost over [s0, s1), while still interior.
        if exited.is_none() {
            cost += (spec.running_cost_gamma)(s0, &x, &u) * h;
        }

        // Jumps scheduled at the step's right endpoint act on the
        // pre-jump state.
        while ev_i < jump_events.len() && jump_events[ev_i].time <= s1 + tol {
            let ev = &jump_events[ev_i];
            ev_i += 1;
            let g = (spec.jump_gamma)(s1, &xn, &u, &ev.mark);
            assert_eq!(g.len(), d, "jump map dimension mismatch");
            for (v, gi) in xn.iter_mut().zip(&g) {
                *v += gi;
            }
            recorded_events.push(ev.clone());
        }

        check_finite(&xn, s1)?;
        states.push(xn.clone());
        controls.push(u);

        if exited.is_none() && !cfg.exit_domain.is_interior(&xn) {
            exited = Some((s1, xn.clone()));
            if cfg.stop_at_exit {
                break;
            }
        }
        if let Some(ks) = steering.knots() {
            if contains_time(ks, s1, tol) {
                x_knot = xn.clone();
            }
        }
        x = xn;
    }

    if !cost.is_finite() {
        return Err(SimError::NonFiniteState { time: t });
    }
    let (exit_time_tau, exit_state) = exited.unwrap_or_else(|| {
        (
            horizon,
            states.last().expect("nonempty states").clone(),
        )
    });
    let times = times[..states.len()].to_vec();
    Ok(PathRecord {
        times,
        states,
        controls_applied: controls,
        jump_events: recorded_events,
        exit_time_tau,
        exit_state,
        running_cost: cost,
    })
}

/// Simulate one controlled path from `(t, x)`, stopping at the first
/// detected exit from the problem's domain (or at the horizon).
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    spec: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    dt: f64,
    extra_bm_eps: f64,
    streams: &mut PathStreams,
) -> Result<PathRecord, SimError> {
    run_path(
        spec,
        &Steering::Law(law),
        t,
        x,
        dt,
        streams,
        &RunConfig {
            stop_at_exit: true,
            exit_domain: &spec.domain,
            extra_times: &[],
            extra_bm_eps,
        },
    )
}

/// Simulate one path stopping at the first exit from `exit_domain` instead
/// of the problem's own domain (dilated-domain exit studies).
#[allow(clippy::too_many_arguments)]
pub fn simulate_with_exit_domain(
    spec: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    dt: f64,
    extra_bm_eps: f64,
    streams: &mut PathStreams,
    exit_domain: &DomainSpec,
) -> Result<PathRecord, SimError> {
    run_path(
        spec,
        &Steering::Law(law),
        t,
        x,
        dt,
        streams,
        &RunConfig {
            stop_at_exit: true,
            exit_domain,
            extra_times: &[],
            extra_bm_eps,
        },
    )
}

/// Simulate one path all the way to the horizon without stopping; the exit
/// fields still report the first detected exit from the problem's domain
/// and the running cost still accumulates only up to that time.
#[allow(clippy::too_many_arguments)]
pub fn simulate_unstopped(
    spec: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    dt: f64,
    extra_bm_eps: f64,
    streams: &mut PathStreams,
) -> Result<PathRecord, SimError> {
    run_path(
        spec,
        &Steering::Law(law),
        t,
        x,
        dt,
        streams,
        &RunConfig {
            stop_at_exit: false,
            exit_domain: &spec.domain,
            extra_times: &[],
            extra_bm_eps,
        },
    )
}

/// First recorded time at which the path leaves `domain`, with its state;
/// falls back to the final recorded pair when the path never leaves.
pub fn exit_against(record: &PathRecord, domain: &DomainSpec) -> (f64, Vec<f64>) {
    for (s, x) in record.times.iter().zip(&record.states) {
        if !domain.is_interior(x) {
            return (*s, x.clone());
        }
    }
    (
        *record.times.last().expect("nonempty record"),
        record.final_state().to_vec(),
    )
}

/// Left-endpoint quadrature of the running cost along a recorded path up to
/// `stop` (clipped to the record's span).
pub fn running_cost_until(record: &PathRecord, spec: &ProblemSpec, stop: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..record.controls_applied.len() {
        let s0 = record.times[i];
        if s0 >= stop {
            break;
        }
        let s1 = record.times[i + 1].min(stop);
        total += (spec.running_cost_gamma)(s0, &record.states[i], &record.controls_applied[i])
            * (s1 - s0);
    }
    total
}

fn run_many<T, F>(
    spec: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    n_paths: usize,
    dt: f64,
    base_seed: u64,
    cfg_extra_eps: f64,
    exit_domain: &DomainSpec,
    stop_at_exit: bool,
    extra_times: &[f64],
    per_path: F,
) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(PathRecord) -> T + Send + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut streams = PathStreams::for_path(base_seed, i);
            let rec = run_path(
                spec,
                &Steering::Law(law),
                t,
                x,
                dt,
                &mut streams,
                &RunConfig {
                    stop_at_exit,
                    exit_domain,
                    extra_times,
                    extra_bm_eps: cfg_extra_eps,
                },
            )?;
            Ok(per_path(rec))
        })
        .collect()
}

/// Monte Carlo estimate of the expected cost
/// `E[ integral of the running cost up to the exit + psi(exit) ]` from
/// `(t, x)` under `law`.  Deterministic in `base_seed` regardless of the
/// number of worker threads.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cost(
    spec: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    n_paths: usize,
    dt: f64,
    base_seed: u64,
) -> Result<McEstimate, SimError> {
    estimate_cost_with(
        spec,
        law,
        t,
        x,
        n_paths,
        dt,
        base_seed,
        &CostOptions::default(),
    )
}

/// [`estimate_cost`] with optional extra noise and exit-domain overrides.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cost_with(
    spec: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    n_paths: usize,
    dt: f64,
    base_seed: u64,
    options: &CostOptions,
) -> Result<McEstimate, SimError> {
    assert!(n_paths >= 2, "need at least two paths for a standard error");
    let exit_domain = options.exit_domain.as_ref().unwrap_or(&spec.domain);
    let costs = run_many(
        spec,
        law,
        t,
        x,
        n_paths,
        dt,
        base_seed,
        options.extra_bm_eps,
        exit_domain,
        true,
        &[],
        |rec| rec.cost_with_terminal(spec),
    )?;
    let (mean, std_error) = num::mean_and_std_error(&costs);
    Ok(McEstimate {
        mean,
        std_error,
        n_paths,
        seed: base_seed,
    })
}

/// Empirical `E sup_{s in [l1, l2]} |X(s) - X(l1)|^2` per window against the
/// explicit bound `k2 * (l2 - l1)`; a window fails only when the empirical
/// value exceeds the bound by more than four standard errors.
#[allow(clippy::too_many_arguments)]
pub fn increment_moment_probe(
    spec: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    windows: &[(f64, f64)],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<Vec<WindowMoment>, SimError> {
    assert!(n_paths >= 2, "need at least two paths for a standard error");
    let horizon = spec.horizon_t;
    let tol = grid_tol(horizon);
    for &(l1, l2) in windows {
        if !(t - tol <= l1 && l1 < l2 && l2 <= horizon + tol) {
            return Err(SimError::BadWindow {
                l1,
                l2,
                start: t,
                horizon,
            });
        }
    }
    let mut forced: Vec<f64> = windows.iter().flat_map(|&(a, b)| [a, b]).collect();
    forced.sort_by(f64::total_cmp);

    let per_path = run_many(
        spec,
        law,
        t,
        x,
        n_paths,
        dt,
        seed,
        0.0,
        &spec.domain,
        false,
        &forced,
        |rec| {
            windows
                .iter()
                .map(|&(l1, l2)| {
                    let i1 = index_of_time(&rec.times, l1, tol);
                    let i2 = index_of_time(&rec.times, l2, tol);
                    let base = &rec.states[i1];
                    let mut sup = 0.0f64;
                    for i in i1..=i2 {
                        let dev = num::dist2(&rec.states[i], base);
                        sup = sup.max(dev * dev);
                    }
                    sup
                })
                .collect::<Vec<f64>>()
        },
    )?;

    let k2 = k2_constant(spec.lipschitz_c, horizon, spec.levy.second_moment());
    let mut out = Vec::with_capacity(windows.len());
    for (w, &(l1, l2)) in windows.iter().enumerate() {
        let samples: Vec<f64> = per_path.iter().map(|row| row[w]).collect();
        let (empirical, std_error) = num::mean_and_std_error(&samples);
        let bound = k2 * (l2 - l1);
        out.push(WindowMoment {
            window: (l1, l2),
            empirical,
            std_error,
            bound,
            pass: empirical <= bound + 4.0 * std_error + 1e-12,
        });
    }
    Ok(out)
}

/// Empirical `E sup_{[t, horizon]} |X(s)|^2` against the explicit global
/// bound `k1_bound_factor(..) * (1 + |x|^2)`.
#[allow(clippy::too_many_arguments)]
pub fn global_moment_probe(
    spec: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<MomentCheck, SimError> {
    assert!(n_paths >= 2, "need at least two paths for a standard error");
    let sups = run_many(
        spec,
        law,
        t,
        x,
        n_paths,
        dt,
        seed,
        0.0,
        &spec.domain,
        false,
        &[],
        |rec| {
            rec.states
                .iter()
                .map(|s| {
                    let n = num::norm2(s);
                    n * n
                })
                .fold(0.0f64, f64::max)
        },
    )?;
    let (empirical, std_error) = num::mean_and_std_error(&sups);
    let x_sq = {
        let n = num::norm2(x);
        n * n
    };
    let bound = k1_bound_factor(
        spec.lipschitz_c,
        spec.horizon_t,
        spec.levy.second_moment(),
        x_sq,
    ) * (1.0 + x_sq);
    Ok(MomentCheck {
        empirical,
        std_error,
        bound,
        pass: empirical <= bound + 4.0 * std_error + 1e-12,
    })
}

/// Deterministic sample cloud over time, an inflated bounding box of the
/// domain, and the control set's enumeration, used to estimate coefficient
/// sup-norm gaps.
fn coefficient_cloud(spec: &ProblemSpec, n: usize) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let d = spec.dims.d;
    let (lo, hi) = spec.domain.bounding_box();
    let controls = match spec.controls.kind() {
        ControlKind::Finite(points) => points.clone(),
        ControlKind::Box { .. } => spec.controls.enumerate(16),
    };
    (1..=n as u64)
        .map(|k| {
            let h = num::halton_point(k, 1 + d);
            let t = h[0] * spec.horizon_t;
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    let c = 0.5 * (lo[i] + hi[i]);
                    let half = 0.75 * (hi[i] - lo[i]);
                    c + (2.0 * h[1 + i] - 1.0) * half
                })
                .collect();
            let u = controls[(k as usize - 1) % controls.len()].clone();
            (t, x, u)
        })
        .collect()
}

/// Sampled sup-norm gaps between the coefficient fields of two problems:
/// drift (Euclidean), volatility (Frobenius), the jump-size weighted sum of
/// squared per-atom gaps, and the running-cost gap.
pub(crate) fn coefficient_gaps(
    spec_a: &ProblemSpec,
    spec_b: &ProblemSpec,
    n_cloud: usize,
) -> (f64, f64, f64, f64) {
    let cloud = coefficient_cloud(spec_a, n_cloud);
    let mut db = 0.0f64;
    let mut dsig = 0.0f64;
    let mut dgam: Vec<f64> = vec![0.0; spec_a.levy.atoms().len()];
    let mut dcost = 0.0f64;
    for (t, x, u) in &cloud {
        let ba = (spec_a.drift_b)(*t, x, u);
        let bb = (spec_b.drift_b)(*t, x, u);
        db = db.max(num::dist2(&ba, &bb));
        let sa = (spec_a.vol_sigma)(*t, x, u);
        let sb = (spec_b.vol_sigma)(*t, x, u);
        dsig = dsig.max(num::frobenius(&num::sub(&sa, &sb)));
        for (j, atom) in spec_a.levy.atoms().iter().enumerate() {
            let ga = (spec_a.jump_gamma)(*t, x, u, &atom.z);
            let gb = (spec_b.jump_gamma)(*t, x, u, &atom.z);
            dgam[j] = dgam[j].max(num::dist2(&ga, &gb));
        }
        let ca = (spec_a.running_cost_gamma)(*t, x, u);
        let cb = (spec_b.running_cost_gamma)(*t, x, u);
        dcost = dcost.max((ca - cb).abs());
    }
    let dgam_sq_weighted: f64 = spec_a
        .levy
        .atoms()
        .iter()
        .zip(&dgam)
        .map(|(atom, g)| atom.w * g * g)
        .sum();
    (db, dsig, dgam_sq_weighted, dcost)
}

pub(crate) fn compare_pairs<T, F>(
    spec_a: &ProblemSpec,
    spec_b: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
    per_pair: F,
) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(&PathRecord, &PathRecord) -> T + Send + Sync,
{
    if !spec_a.compatible_with(spec_b) {
        return Err(SimError::IncompatibleSpecs(format!(
            "{} and {} differ in dimensions, domain, jump atoms, or controls",
            spec_a.name, spec_b.name
        )));
    }
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut streams_a = PathStreams::for_path(seed, i);
            let rec_a = run_path(
                spec_a,
                &Steering::Law(law),
                t,
                x,
                dt,
                &mut streams_a,
                &RunConfig {
                    stop_at_exit: false,
                    exit_domain: &spec_a.domain,
                    extra_times: &[],
                    extra_bm_eps: 0.0,
                },
            )?;
            // The second system replays the first one's realized control
            // sequence on an identical time grid, so both paths are driven
            // by literally the same noise and the same control process.
            let mut streams_b = PathStreams::for_path(seed, i);
            let rec_b = run_path(
                spec_b,
                &Steering::Replay(&rec_a.controls_applied),
                t,
                x,
                dt,
                &mut streams_b,
                &RunConfig {
                    stop_at_exit: false,
                    exit_domain: &spec_b.domain,
                    extra_times: &rec_a.times,
                    extra_bm_eps: 0.0,
                },
            )?;
            debug_assert_eq!(rec_a.times.len(), rec_b.times.len());
            Ok(per_pair(&rec_a, &rec_b))
        })
        .collect()
}

/// Common-noise pathwise deviation `E sup_s |X_A(s) - X_B(s)|^2` of two
/// coefficient-compatible problems against the explicit stability bound
/// `k3 * (|b_A - b_B|^2 + |sigma_A - sigma_B|^2 + sum_j w_j |gamma gap|^2)`
/// with sup-norm gaps estimated on a deterministic sample cloud.
#[allow(clippy::too_many_arguments)]
pub fn pathwise_compare(
    spec_a: &ProblemSpec,
    spec_b: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
) -> Result<PathwiseCompare, SimError> {
    assert!(n_paths >= 2, "need at least two paths for a standard error");
    let sup_deviations = compare_pairs(
        spec_a,
        spec_b,
        law,
        t,
        x,
        n_paths,
        dt,
        seed,
        |ra, rb| {
            let n = ra.states.len().min(rb.states.len());
            let mut sup = 0.0f64;
            for i in 0..n {
                sup = sup.max(num::dist2(&ra.states[i], &rb.states[i]));
            }
            sup
        },
    )?;
    let sup_sq: Vec<f64> = sup_deviations.iter().map(|v| v * v).collect();
    let (empirical, std_error) = num::mean_and_std_error(&sup_sq);

    let (db, dsig, dgam_sq, _) = coefficient_gaps(spec_a, spec_b, 10_000);
    let c = spec_a.lipschitz_c.max(spec_b.lipschitz_c);
    let k3 = k3_constant(c, spec_a.horizon_t, spec_a.levy.second_moment());
    let bound = k3 * (db * db + dsig * dsig + dgam_sq);
    Ok(PathwiseCompare {
        empirical,
        std_error,
        bound,
        pass: empirical <= bound + 4.0 * std_error + 1e-12,
        sup_deviations,
    })
}

/// Both sides of the running-cost stability inequality
/// `E int |cost_A(X_A) - cost_B(X_B)| <= (T - t) (|gap|_inf + k4 * L *
/// (|b gap| + |sigma gap| + sqrt(weighted gamma gap)))`, where `L` is the
/// declared spatial Lipschitz constant of problem B's running cost.
#[allow(clippy::too_many_arguments)]
pub fn cost_compare(
    spec_a: &ProblemSpec,
    spec_b: &ProblemSpec,
    law: &ControlLaw,
    t: f64,
    x: &[f64],
    n_paths: usize,
    dt: f64,
    seed: u64,
    cost_b_lipschitz: f64,
) -> Result<CostCompare, SimError> {
    assert!(n_paths >= 2, "need at least two paths for a standard error");
    let integrals = compare_pairs(
        spec_a,
        spec_b,
        law,
        t,
        x,
        n_paths,
        dt,
        seed,
        |ra, rb| {
            let steps = ra.controls_applied.len().min(rb.controls_applied.len());
            let mut total = 0.0;
            for i in 0..steps {
                let s0 = ra.times[i];
                let h = ra.times[i + 1] - s0;
                let u = &ra.controls_applied[i];
                let ca = (spec_a.running_cost_gamma)(s0, &ra.states[i], u);
                let cb = (spec_b.running_cost_gamma)(s0, &rb.states[i], u);
                total += (ca - cb).abs() * h;
            }
            total
        },
    )?;
    let (empirical, std_error) = num::mean_and_std_error(&integrals);

    let (db, dsig, dgam_sq, dcost) = coefficient_gaps(spec_a, spec_b, 10_000);
    let c = spec_a.lipschitz_c.max(spec_b.lipschitz_c);
    let k4 = k4_constant(c, spec_a.horizon_t, spec_a.levy.second_moment());
    let bound = (spec_a.horizon_t - t)
        * (dcost + k4 * cost_b_lipschitz * (db + dsig + dgam_sq.sqrt()));
    Ok(CostCompare {
        empirical,
        std_error,
        bound,
        pass: empirical <= bound + 4.0 * std_error + 1e-12,
    })
}
