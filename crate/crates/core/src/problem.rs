//! Problem specifications: coefficient bundles with declared constants.
//!
//! A [`ProblemSpec`] collects the controlled dynamics (drift `b`, volatility
//! `sigma`, jump map `gamma`), the costs (running cost and terminal/boundary
//! data), the bounded domain, the jump measure, the control set, and two
//! declared constants: a joint Lipschitz/growth constant `C` for the
//! coefficients and a boundary nondegeneracy (ellipticity) level `lambda`.
//! The declared constants feed every explicit moment bound downstream, so
//! [`validate_assumptions`] probes them on sampled points and reports
//! quantified margins instead of trusting the declaration.

use std::fmt;
use std::sync::Arc;

use crate::geometry::DomainSpec;
use crate::levy::{Atom, LevyModel};
use crate::num::{self, halton_point};

/// Drift `b(t, x, u) -> R^d`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// Volatility `sigma(t, x, u) -> R^{d x m1}` (row-major).
pub type SigmaFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// Jump amplitude `gamma(t, x, u, z) -> R^d`.
pub type GammaFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
/// Running cost `Gamma(t, x, u)`.
pub type RunningCostFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
/// Terminal/boundary data `Psi(t, x)`, used on the parabolic complement.
pub type TerminalFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Errors from problem construction.
#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("unknown problem family `{0}`")]
    UnknownFamily(String),
    #[error("invalid problem parameters: {0}")]
    BadParams(String),
}

/// Compact control set: an explicit finite list or a coordinate box.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlKind {
    Finite(Vec<Vec<f64>>),
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

/// A compact metric control space with a deterministic dense enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSet {
    kind: ControlKind,
    dim: usize,
}

impl ControlSet {
    /// Finite set of control points; duplicates are removed keeping the
    /// first occurrence (order is semantically relevant: ties in downstream
    /// minimizations break toward the earliest index).
    pub fn finite(points: Vec<Vec<f64>>) -> Result<Self, ProblemError> {
        if points.is_empty() {
            return Err(ProblemError::BadParams("empty control set".into()));
        }
        let dim = points[0].len();
        let mut dedup: Vec<Vec<f64>> = Vec::with_capacity(points.len());
        for p in points {
            if p.len() != dim {
                return Err(ProblemError::BadParams(
                    "control points have mixed dimensions".into(),
                ));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(ProblemError::BadParams("nonfinite control point".into()));
            }
            if !dedup.iter().any(|q| q == &p) {
                dedup.push(p);
            }
        }
        Ok(Self {
            kind: ControlKind::Finite(dedup),
            dim,
        })
    }

    /// Box `[lo, hi]` componentwise; requires `lo <= hi` and finite bounds.
    pub fn bounded_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ProblemError> {
        if lo.is_empty() || lo.len() != hi.len() {
            return Err(ProblemError::BadParams("box bounds dimension mismatch".into()));
        }
        for (a, b) in lo.iter().zip(&hi) {
            if !a.is_finite() || !b.is_finite() || a > b {
                return Err(ProblemError::BadParams(format!(
                    "box bounds need lo <= hi, got [{a}, {b}]"
                )));
            }
        }
        let dim = lo.len();
        Ok(Self {
            kind: ControlKind::Box { lo, hi },
            dim,
        })
    }

    pub fn kind(&self) -> &ControlKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Metric on controls (Euclidean).
    pub fn metric(&self, a: &[f64], b: &[f64]) -> f64 {
        num::dist2(a, b)
    }

    /// Deterministic dense enumeration: `enumerate(n)` is always a prefix of
    /// `enumerate(m)` for `n <= m`. Finite sets list their points in order
    /// (clamping `n`); boxes start at the center and continue with a
    /// low-discrepancy fill, so the sequence is dense in the box as `n` grows.
    pub fn enumerate(&self, n: usize) -> Vec<Vec<f64>> {
        match &self.kind {
            ControlKind::Finite(points) => points.iter().take(n).cloned().collect(),
            ControlKind::Box { lo, hi } => {
                let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
                if n == 0 {
                    return out;
                }
                out.push(lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect());
                let mut index = 1u64;
                while out.len() < n {
                    let h = halton_point(index, self.dim);
                    index += 1;
                    let p: Vec<f64> = lo
                        .iter()
                        .zip(hi)
                        .zip(&h)
                        .map(|((a, b), t)| a + (b - a) * t)
                        .collect();
                    if !out.iter().any(|q| q == &p) {
                        out.push(p);
                    }
                }
                out
            }
        }
    }

    /// Number of points for finite sets; `None` for boxes.
    pub fn len_finite(&self) -> Option<usize> {
        match &self.kind {
            ControlKind::Finite(points) => Some(points.len()),
            ControlKind::Box { .. } => None,
        }
    }
}

/// State, Brownian, and mark dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub d: usize,
    pub m1: usize,
    pub m2: usize,
}

/// A complete exit-time control problem.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub dims: Dims,
    pub horizon_t: f64,
    pub drift_b: DriftFn,
    pub vol_sigma: SigmaFn,
    pub jump_gamma: GammaFn,
    pub running_cost_gamma: RunningCostFn,
    pub terminal_boundary_psi: TerminalFn,
    /// Declared joint Lipschitz/growth constant of (b, sigma, gamma).
    pub lipschitz_c: f64,
    /// Declared uniform ellipticity level of `n^T a n` on the boundary.
    pub boundary_ellipticity_lambda: f64,
    pub domain: DomainSpec,
    pub levy: LevyModel,
    pub controls: ControlSet,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("horizon_t", &self.horizon_t)
            .field("lipschitz_c", &self.lipschitz_c)
            .field(
                "boundary_ellipticity_lambda",
                &self.boundary_ellipticity_lambda,
            )
            .field("domain", &self.domain)
            .field("levy", &self.levy)
            .field("controls", &self.controls)
            .finish()
    }
}

impl ProblemSpec {
    /// Diffusion matrix `a = sigma sigma^T` (row-major d x d).
    pub fn diffusion_a(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let s = (self.vol_sigma)(t, x, u);
        num::gram(&s, self.dims.d, self.dims.m1)
    }

    /// A copy with the drift shifted by a constant vector; the declared
    /// Lipschitz constant grows by `|shift|` to keep the growth bound valid.
    pub fn perturb_drift(&self, shift: Vec<f64>) -> ProblemSpec {
        assert_eq!(shift.len(), self.dims.d);
        let base = self.drift_b.clone();
        let sh = shift.clone();
        let mut out = self.clone();
        out.name = format!("{}+drift_shift", self.name);
        out.drift_b = Arc::new(move |t, x, u| num::add(&base(t, x, u), &sh));
        out.lipschitz_c = self.lipschitz_c + num::norm2(&shift);
        out
    }

    /// A copy with the volatility scaled by a constant factor.
    pub fn scale_sigma(&self, factor: f64) -> ProblemSpec {
        let base = self.vol_sigma.clone();
        let mut out = self.clone();
        out.name = format!("{}+sigma_scale", self.name);
        out.vol_sigma = Arc::new(move |t, x, u| {
            base(t, x, u).iter().map(|s| factor * s).collect()
        });
        out.lipschitz_c = self.lipschitz_c * factor.abs().max(1.0);
        out
    }

    /// A copy with the running cost shifted by a constant.
    pub fn shift_running_cost(&self, c: f64) -> ProblemSpec {
        let base = self.running_cost_gamma.clone();
        let mut out = self.clone();
        out.name = format!("{}+cost_shift", self.name);
        out.running_cost_gamma = Arc::new(move |t, x, u| base(t, x, u) + c);
        out
    }

    /// A copy with the terminal/boundary data shifted by a constant.
    pub fn shift_terminal(&self, c: f64) -> ProblemSpec {
        let base = self.terminal_boundary_psi.clone();
        let mut out = self.clone();
        out.name = format!("{}+terminal_shift", self.name);
        out.terminal_boundary_psi = Arc::new(move |t, x| base(t, x) + c);
        out
    }

    /// A copy with the jump amplitude shifted by a constant vector.
    pub fn perturb_gamma(&self, shift: Vec<f64>) -> ProblemSpec {
        assert_eq!(shift.len(), self.dims.d);
        let base = self.jump_gamma.clone();
        let sh = shift.clone();
        let mut out = self.clone();
        out.name = format!("{}+gamma_shift", self.name);
        out.jump_gamma = Arc::new(move |t, x, u, z| num::add(&base(t, x, u, z), &sh));
        out.lipschitz_c = self.lipschitz_c + num::norm2(&shift);
        out
    }

    /// Structural compatibility for common-random-number comparisons: same
    /// dimensions, domain, jump atoms, control set, and horizon.
    pub fn compatible_with(&self, other: &ProblemSpec) -> bool {
        self.dims == other.dims
            && self.horizon_t == other.horizon_t
            && self.domain == other.domain
            && self.levy.atoms() == other.levy.atoms()
            && self.controls == other.controls
    }
}

/// The built-in problem families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    /// d = 1 standard Brownian motion on (-1, 1), no control, no cost,
    /// linear terminal data: the value function is exactly `x` (optional
    /// stopping of a bounded martingale).
    UncontrolledDiffusion1d,
    /// d = 1 Brownian motion with controlled drift `b = u` on (-1, 1).
    ControlledDriftInterval,
    /// d = 2 jump-diffusion on a ball: isotropic volatility, drift steered
    /// by the control, state-damped jump amplitude, quadratic control cost.
    JumpDiffusionBall,
    /// d = 1 diffusion degenerate on the middle of the interval and uniformly
    /// nondegenerate near the boundary.
    DegenerateInterior,
}

impl Family {
    pub fn from_name(name: &str) -> Option<Family> {
        match name {
            "uncontrolled_diffusion_1d" => Some(Family::UncontrolledDiffusion1d),
            "controlled_drift_interval" => Some(Family::ControlledDriftInterval),
            "jump_diffusion_ball" => Some(Family::JumpDiffusionBall),
            "degenerate_interior" => Some(Family::DegenerateInterior),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::UncontrolledDiffusion1d => "uncontrolled_diffusion_1d",
            Family::ControlledDriftInterval => "controlled_drift_interval",
            Family::JumpDiffusionBall => "jump_diffusion_ball",
            Family::DegenerateInterior => "degenerate_interior",
        }
    }
}

/// Optional overrides for [`make_problem`].
#[derive(Default, Clone)]
pub struct FamilyParams {
    pub horizon: Option<f64>,
    pub controls: Option<ControlSet>,
    pub atoms: Option<Vec<Atom>>,
}

/// Builds a named problem family with optional overrides.
pub fn make_problem(family_name: &str, params: FamilyParams) -> Result<ProblemSpec, ProblemError> {
    let family = Family::from_name(family_name)
        .ok_or_else(|| ProblemError::UnknownFamily(family_name.to_string()))?;
    let horizon = params.horizon.unwrap_or(1.0);
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(ProblemError::BadParams(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let bad = |e: crate::geometry::GeometryError| ProblemError::BadParams(e.to_string());
    let bad_levy = |e: crate::levy::LevyError| ProblemError::BadParams(e.to_string());
    let spec = match family {
        Family::UncontrolledDiffusion1d => {
            if params.atoms.is_some() {
                return Err(ProblemError::BadParams(
                    "this family has no jump component".into(),
                ));
            }
            let controls = match params.controls {
                Some(c) => check_control_dim(c, 1)?,
                None => ControlSet::finite(vec![vec![0.0]])?,
            };
            ProblemSpec {
                name: family.name().into(),
                dims: Dims { d: 1, m1: 1, m2: 1 },
                horizon_t: horizon,
                drift_b: Arc::new(|_t, _x, _u| vec![0.0]),
                vol_sigma: Arc::new(|_t, _x, _u| vec![1.0]),
                jump_gamma: Arc::new(|_t, _x, _u, _z| vec![0.0]),
                running_cost_gamma: Arc::new(|_t, _x, _u| 0.0),
                terminal_boundary_psi: Arc::new(|_t, x| x[0]),
                lipschitz_c: 1.0,
                boundary_ellipticity_lambda: 1.0,
                domain: DomainSpec::interval(-1.0, 1.0).map_err(bad)?,
                levy: LevyModel::empty(1),
                controls,
            }
        }
        Family::ControlledDriftInterval => {
            if params.atoms.is_some() {
                return Err(ProblemError::BadParams(
                    "this family has no jump component".into(),
                ));
            }
            let controls = match params.controls {
                Some(c) => check_control_dim(c, 1)?,
                None => ControlSet::finite(vec![vec![-1.0], vec![1.0]])?,
            };
            ProblemSpec {
                name: family.name().into(),
                dims: Dims { d: 1, m1: 1, m2: 1 },
                horizon_t: horizon,
                drift_b: Arc::new(|_t, _x, u| vec![u[0]]),
                vol_sigma: Arc::new(|_t, _x, _u| vec![1.0]),
                jump_gamma: Arc::new(|_t, _x, _u, _z| vec![0.0]),
                running_cost_gamma: Arc::new(|_t, _x, _u| 0.0),
                terminal_boundary_psi: Arc::new(|_t, x| x[0]),
                lipschitz_c: 1.0,
                boundary_ellipticity_lambda: 1.0,
                domain: DomainSpec::interval(-1.0, 1.0).map_err(bad)?,
                levy: LevyModel::empty(1),
                controls,
            }
        }
        Family::JumpDiffusionBall => {
            let controls = match params.controls {
                Some(c) => check_control_dim(c, 2)?,
                None => ControlSet::finite(vec![
                    vec![0.0, 0.0],
                    vec![1.0, 0.0],
                    vec![0.0, 1.0],
                    vec![-1.0, 0.0],
                    vec![0.0, -1.0],
                ])?,
            };
            let atoms = params
                .atoms
                .unwrap_or_else(|| vec![Atom::new(vec![0.25, -0.15], 2.0)]);
            let levy = LevyModel::build_with_dim(2, atoms, None).map_err(bad_levy)?;
            ProblemSpec {
                name: family.name().into(),
                dims: Dims { d: 2, m1: 2, m2: 2 },
                horizon_t: horizon,
                drift_b: Arc::new(|_t, _x, u| vec![-0.3 * u[0], -0.3 * u[1]]),
                vol_sigma: Arc::new(|_t, _x, _u| vec![0.5, 0.0, 0.0, 0.5]),
                jump_gamma: Arc::new(|_t, x, _u, z| {
                    let damp = 0.1 / (1.0 + num::dot(x, x)).sqrt();
                    z.iter().map(|&c| damp * c).collect()
                }),
                running_cost_gamma: Arc::new(|_t, x, u| {
                    0.1 * num::dot(u, u) + 0.05 / (1.0 + num::dot(x, x))
                }),
                terminal_boundary_psi: Arc::new(|_t, x| 0.5 / (1.0 + num::dot(x, x))),
                lipschitz_c: 1.0,
                boundary_ellipticity_lambda: 0.25,
                domain: DomainSpec::ball(vec![0.0, 0.0], 0.8).map_err(bad)?,
                levy,
                controls,
            }
        }
        Family::DegenerateInterior => {
            if params.atoms.is_some() {
                return Err(ProblemError::BadParams(
                    "this family has no jump component".into(),
                ));
            }
            let controls = match params.controls {
                Some(c) => check_control_dim(c, 1)?,
                None => ControlSet::finite(vec![vec![-1.0], vec![0.0], vec![1.0]])?,
            };
            ProblemSpec {
                name: family.name().into(),
                dims: Dims { d: 1, m1: 1, m2: 1 },
                horizon_t: horizon,
                drift_b: Arc::new(|_t, _x, u| vec![0.5 * u[0]]),
                vol_sigma: Arc::new(|_t, x, _u| vec![interior_ramp(x[0].abs())]),
                jump_gamma: Arc::new(|_t, _x, _u, _z| vec![0.0]),
                running_cost_gamma: Arc::new(|_t, x, _u| 0.25 / (1.0 + x[0] * x[0])),
                terminal_boundary_psi: Arc::new(|_t, x| {
                    0.4 * (std::f64::consts::FRAC_PI_2 * x[0]).sin()
                }),
                lipschitz_c: 3.0,
                boundary_ellipticity_lambda: 1.0,
                domain: DomainSpec::interval(-1.0, 1.0).map_err(bad)?,
                levy: LevyModel::empty(1),
                controls,
            }
        }
    };
    Ok(spec)
}

fn check_control_dim(c: ControlSet, want: usize) -> Result<ControlSet, ProblemError> {
    if c.dim() != want {
        return Err(ProblemError::BadParams(format!(
            "control dimension {} does not match the family's {want}",
            c.dim()
        )));
    }
    Ok(c)
}

/// Smoothstep ramp: 0 for r <= 0.25, 1 for r >= 0.75, C^1 in between with
/// maximum slope 3.
fn interior_ramp(r: f64) -> f64 {
    let s = ((r - 0.25) / 0.5).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// One line of a validation report.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CheckLine {
    pub name: String,
    /// Worst sampled margin; negative-or-zero margins satisfy the check for
    /// upper-bound style checks (see `pass`).
    pub worst_margin: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Sampled validation of the standing assumptions with quantified margins.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ValidationReport {
    pub problem: String,
    pub checks: Vec<CheckLine>,
    pub pass: bool,
}

/// Probes the uniform coefficient bounds (`|b|, |sigma| <= C`,
/// `|gamma| <= C rho`), the sampled Lipschitz ratios against `C`, the
/// boundedness of the costs, positive semidefiniteness of the diffusion
/// matrix, and boundary nondegeneracy, on `n_samples` seeded sample points.
/// Violations are reported with their margins; this function never fails.
pub fn validate_assumptions(spec: &ProblemSpec, n_samples: usize, seed: u64) -> ValidationReport {
    use rand::Rng;
    let d = spec.dims.d;
    let c = spec.lipschitz_c;
    let (lo, hi) = spec.domain.bounding_box();
    // Sample states in the 1.5x-inflated bounding box: the dynamics are
    // probed slightly beyond the domain because jumps can land there.
    // Half the samples are low-discrepancy for coverage, half are drawn from
    // the seeded stream (the report is deterministic in the seed).
    let mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut rng = crate::rng::stream_rng(seed, 0, crate::rng::NoiseChannel::Probe);
    let xs: Vec<Vec<f64>> = (1..=n_samples as u64)
        .map(|i| {
            let h: Vec<f64> = if i % 2 == 0 {
                halton_point(i / 2, d)
            } else {
                (0..d).map(|_| rng.gen::<f64>()).collect()
            };
            (0..d)
                .map(|k| mid[k] + 1.5 * (lo[k] - mid[k]) + 1.5 * (hi[k] - lo[k]) * h[k])
                .collect()
        })
        .collect();
    let controls = spec.controls.enumerate(8);
    let times: Vec<f64> = (0..5).map(|k| spec.horizon_t * k as f64 / 4.0).collect();

    let mut checks: Vec<CheckLine> = Vec::new();
    let mut push = |name: &str, worst: f64, threshold: f64| {
        checks.push(CheckLine {
            name: name.into(),
            worst_margin: worst,
            threshold,
            pass: worst <= threshold,
        });
    };

    // Uniform bounds: sup |b|, sup ||sigma||_F, sup |gamma| / rho vs C.
    let mut s_b = 0.0f64;
    let mut s_s = 0.0f64;
    let mut s_g = 0.0f64;
    // Lipschitz ratios in x on consecutive sample pairs.
    let mut l_b = 0.0f64;
    let mut l_s = 0.0f64;
    let mut l_g = 0.0f64;
    // Boundedness of costs (recorded sup; threshold infinity means
    // "finite"), and PSD of a.
    let mut sup_cost = 0.0f64;
    let mut sup_terminal = 0.0f64;
    let mut psd_ok = true;
    for &t in &times {
        for u in &controls {
            for (i, x) in xs.iter().enumerate() {
                let b = (spec.drift_b)(t, x, u);
                let s = (spec.vol_sigma)(t, x, u);
                s_b = s_b.max(num::norm2(&b));
                s_s = s_s.max(num::frobenius(&s));
                for (j, atom) in spec.levy.atoms().iter().enumerate() {
                    let rho = spec.levy.rho_at_atom(j).max(1e-300);
                    let g = (spec.jump_gamma)(t, x, u, &atom.z);
                    s_g = s_g.max(num::norm2(&g) / rho);
                }
                sup_cost = sup_cost.max((spec.running_cost_gamma)(t, x, u).abs());
                sup_terminal = sup_terminal.max((spec.terminal_boundary_psi)(t, x).abs());
                let a = spec.diffusion_a(t, x, u);
                psd_ok &= num::is_psd_within(&a, d, 1e-10);
                if i + 1 < xs.len() {
                    let y = &xs[i + 1];
                    let dx = num::dist2(x, y);
                    if dx > 1e-9 {
                        let by = (spec.drift_b)(t, y, u);
                        let sy = (spec.vol_sigma)(t, y, u);
                        l_b = l_b.max(num::dist2(&b, &by) / dx);
                        l_s = l_s.max(num::dist2(&s, &sy) / dx);
                        for (j, atom) in spec.levy.atoms().iter().enumerate() {
                            let rho = spec.levy.rho_at_atom(j).max(1e-300);
                            let gx = (spec.jump_gamma)(t, x, u, &atom.z);
                            let gy = (spec.jump_gamma)(t, y, u, &atom.z);
                            l_g = l_g.max(num::dist2(&gx, &gy) / (dx * rho));
                        }
                    }
                }
            }
        }
    }
    let tol = c + 1e-9;
    push("drift bound", s_b, tol);
    push("volatility bound", s_s, tol);
    push("drift lipschitz ratio", l_b, tol);
    push("volatility lipschitz ratio", l_s, tol);
    if !spec.levy.atoms().is_empty() {
        push("jump bound over rho", s_g, tol);
        push("jump lipschitz ratio over rho", l_g, tol);
    }
    checks.push(CheckLine {
        name: "running cost bounded".into(),
        worst_margin: sup_cost,
        threshold: f64::INFINITY,
        pass: sup_cost.is_finite(),
    });
    checks.push(CheckLine {
        name: "terminal data bounded".into(),
        worst_margin: sup_terminal,
        threshold: f64::INFINITY,
        pass: sup_terminal.is_finite(),
    });
    checks.push(CheckLine {
        name: "diffusion psd".into(),
        worst_margin: if psd_ok { 0.0 } else { 1.0 },
        threshold: 0.5,
        pass: psd_ok,
    });

    // Boundary nondegeneracy: n^T a n >= lambda at boundary samples.
    let lambda = spec.boundary_ellipticity_lambda;
    let mut worst_ellip = f64::INFINITY;
    for bpt in spec.domain.boundary_samples(200) {
        let n = spec
            .domain
            .proximal_normal(&bpt)
            .expect("boundary samples lie on the boundary");
        for &t in &times {
            for u in &controls {
                let a = spec.diffusion_a(t, &bpt, u);
                let an = num::mat_vec(&a, d, d, &n);
                worst_ellip = worst_ellip.min(num::dot(&n, &an) - lambda);
            }
        }
    }
    checks.push(CheckLine {
        name: "boundary nondegeneracy".into(),
        worst_margin: if worst_ellip.is_finite() { worst_ellip } else { 0.0 },
        threshold: f64::INFINITY,
        pass: worst_ellip >= -1e-9,
    });

    let pass = checks.iter().all(|c| c.pass);
    ValidationReport {
        problem: spec.name.clone(),
        checks,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn families_build_and_validate() {
        for name in [
            "uncontrolled_diffusion_1d",
            "controlled_drift_interval",
            "jump_diffusion_ball",
            "degenerate_interior",
        ] {
            let spec = make_problem(name, FamilyParams::default()).unwrap();
            let report = validate_assumptions(&spec, 60, 7);
            assert!(
                report.pass,
                "family {name} failed validation: {:#?}",
                report
                    .checks
                    .iter()
                    .filter(|c| !c.pass)
                    .collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn validation_is_deterministic_in_the_seed() {
        let spec = make_problem("jump_diffusion_ball", FamilyParams::default()).unwrap();
        let a = validate_assumptions(&spec, 40, 123);
        let b = validate_assumptions(&spec, 40, 123);
        for (x, y) in a.checks.iter().zip(&b.checks) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.worst_margin, y.worst_margin);
        }
    }

    #[test]
    fn unknown_family_is_rejected() {
        assert!(matches!(
            make_problem("no_such_family", FamilyParams::default()),
            Err(ProblemError::UnknownFamily(_))
        ));
    }

    #[test]
    fn bad_params_are_rejected() {
        let mut p = FamilyParams::default();
        p.horizon = Some(-1.0);
        assert!(matches!(
            make_problem("uncontrolled_diffusion_1d", p),
            Err(ProblemError::BadParams(_))
        ));
        let mut p = FamilyParams::default();
        p.controls = Some(ControlSet::finite(vec![vec![0.0, 0.0]]).unwrap());
        assert!(matches!(
            make_problem("controlled_drift_interval", p),
            Err(ProblemError::BadParams(_))
        ));
        let mut p = FamilyParams::default();
        p.atoms = Some(vec![Atom::new(vec![1.0], 1.0)]);
        assert!(matches!(
            make_problem("degenerate_interior", p),
            Err(ProblemError::BadParams(_))
        ));
    }

    #[test]
    fn planted_drift_bound_violation_is_caught_with_margin() {
        // |b| = 2C at some samples under declared C = 1: the named "drift
        // bound" check must fail with the sampled sup as its margin, and
        // unrelated checks must keep passing.
        let mut spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        spec.drift_b = Arc::new(|_t, x: &[f64], _u: &[f64]| {
            vec![if x[0] > 0.0 { 2.0 } else { 0.0 }]
        });
        let report = validate_assumptions(&spec, 60, 7);
        assert!(!report.pass);
        let bound = report
            .checks
            .iter()
            .find(|c| c.name == "drift bound")
            .unwrap();
        assert!(!bound.pass);
        assert!(
            (bound.worst_margin - 2.0).abs() < 1e-12,
            "margin {}",
            bound.worst_margin
        );
        let ellip = report
            .checks
            .iter()
            .find(|c| c.name == "boundary nondegeneracy")
            .unwrap();
        assert!(ellip.pass, "unrelated checks must keep passing");
    }

    #[test]
    fn planted_boundary_degeneracy_is_caught() {
        // Volatility that vanishes at the boundary violates lambda = 1.
        let mut spec = make_problem("uncontrolled_diffusion_1d", FamilyParams::default()).unwrap();
        spec.vol_sigma = Arc::new(|_t, x: &[f64], _u: &[f64]| vec![1.0 - x[0].abs()]);
        let report = validate_assumptions(&spec, 60, 7);
        let ellip = report
            .checks
            .iter()
            .find(|c| c.name == "boundary nondegeneracy")
            .unwrap();
        assert!(!ellip.pass);
        assert!(ellip.worst_margin < -0.9, "margin {}", ellip.worst_margin);
    }

    #[test]
    fn control_set_finite_dedupes_and_enumerates_in_order() {
        let c = ControlSet::finite(vec![vec![1.0], vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(c.len_finite(), Some(3));
        assert_eq!(c.enumerate(2), vec![vec![1.0], vec![0.0]]);
        assert_eq!(c.enumerate(10).len(), 3);
        assert!(ControlSet::finite(vec![]).is_err());
        assert!(ControlSet::finite(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn control_box_enumeration_is_nested_distinct_and_in_bounds() {
        let c = ControlSet::bounded_box(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let e8 = c.enumerate(8);
        let e16 = c.enumerate(16);
        assert_eq!(&e16[..8], &e8[..], "enumeration must be nested");
        assert_eq!(e8[0], vec![0.0, 1.0], "first point is the center");
        for p in &e16 {
            assert!(p[0] >= -1.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 2.0);
        }
        for i in 0..e16.len() {
            for j in 0..i {
                assert_ne!(e16[i], e16[j], "points must be distinct");
            }
        }
        // 1-d box: the Halton point 1/2 coincides with the center and must be
        // skipped by the dedup rule.
        let c1 = ControlSet::bounded_box(vec![0.0], vec![1.0]).unwrap();
        let e = c1.enumerate(4);
        assert_eq!(e[0], vec![0.5]);
        for i in 1..e.len() {
            assert_ne!(e[i], vec![0.5]);
        }
    }

    #[test]
    fn control_metric_is_euclidean() {
        let c = ControlSet::bounded_box(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(c.metric(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn diffusion_matrix_is_gram_of_sigma() {
        let spec = make_problem("jump_diffusion_ball", FamilyParams::default()).unwrap();
        let a = spec.diffusion_a(0.0, &[0.1, 0.2], &[0.0, 0.0]);
        assert_eq!(a, vec![0.25, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn perturbations_shift_coefficients_exactly() {
        let spec = make_problem("controlled_drift_interval", FamilyParams::default()).unwrap();
        let shifted = spec.perturb_drift(vec![0.1]);
        let b0 = (spec.drift_b)(0.3, &[0.2], &[1.0]);
        let b1 = (shifted.drift_b)(0.3, &[0.2], &[1.0]);
        assert_relative_eq!(b1[0] - b0[0], 0.1, epsilon = 1e-15);
        assert!(shifted.compatible_with(&spec));

        let costly = spec.shift_running_cost(0.25);
        let c0 = (spec.running_cost_gamma)(0.3, &[0.2], &[1.0]);
        let c1 = (costly.running_cost_gamma)(0.3, &[0.2], &[1.0]);
        assert_relative_eq!(c1 - c0, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_family_ramp_profile() {
        let spec = make_problem("degenerate_interior", FamilyParams::default()).unwrap();
        // Flat zero in the core, one at the boundary.
        assert_eq!((spec.vol_sigma)(0.0, &[0.1], &[0.0]), vec![0.0]);
        assert_eq!((spec.vol_sigma)(0.0, &[-0.2], &[0.0]), vec![0.0]);
        assert_eq!((spec.vol_sigma)(0.0, &[1.0], &[0.0]), vec![1.0]);
        assert_eq!((spec.vol_sigma)(0.0, &[-0.95], &[0.0]), vec![1.0]);
        let mid = (spec.vol_sigma)(0.0, &[0.5], &[0.0])[0];
        assert_relative_eq!(mid, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn family_horizon_override() {
        let mut p = FamilyParams::default();
        p.horizon = Some(2.5);
        let spec = make_problem("uncontrolled_diffusion_1d", p).unwrap();
        assert_eq!(spec.horizon_t, 2.5);
    }
}
