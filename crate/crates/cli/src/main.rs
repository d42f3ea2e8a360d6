//! Config-driven runner for the exit-time control toolkit.
//!
//! Subcommands: `solve` (grid solution of the terminal-boundary problem),
//! `simulate` (controlled jump-diffusion paths and a cost estimate),
//! `verify` (representation sandwich, dynamic-programming checks, coupling
//! and projection probes), `barrier` (boundary supersolution probe),
//! `cascade` (viscosity / control-subset / dilation refinement trends), and
//! `validate` (sampled standing-assumption checks).
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
//! 3 numerical error (stability violation, non-finite state).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use hjb_core::barrier;
use hjb_core::problem::{make_problem, validate_assumptions, FamilyParams, ProblemSpec};
use hjb_core::rng::PathStreams;
use hjb_core::sim::{self, PathRecord};
use hjb_core::solver::{self, CascadeStage, CascadeTable};
use hjb_core::verify::{self, McConfig, StoppingRule, VerificationReport};
use hjb_core::{Atom, ControlLaw, ControlSet, GridSpec, ValueField};

// ---------------------------------------------------------------------------
// Command line
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "hjb",
    version,
    about = "Exit-time stochastic control toolkit: solve, simulate, verify, probe"
)]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `outputs.directory` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for all parallel regions (0 = one per core).
    /// Results are identical for every worker count.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Seed override for the Monte Carlo block.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Solve the terminal-boundary problem on the configured grid.
    Solve,
    /// Record controlled paths and estimate the expected cost.
    Simulate,
    /// Run the representation, dynamic-programming, coupling, and
    /// projection checks.
    Verify,
    /// Build the boundary barrier and probe the supersolution inequality.
    Barrier,
    /// Run the viscosity / control-subset / dilation refinement cascades.
    Cascade,
    /// Check the standing assumptions on sampled points.
    Validate,
}

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    problem: ProblemBlock,
    grid: Option<GridBlock>,
    mc: Option<McBlock>,
    outputs: OutputsBlock,
    simulate: Option<SimulateBlock>,
    verify: Option<VerifyBlock>,
    barrier: Option<BarrierBlock>,
    cascade: Option<CascadeBlock>,
    validate: Option<ValidateBlock>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemBlock {
    family: String,
    horizon: Option<f64>,
    controls: Option<ControlsBlock>,
    atoms: Option<Vec<AtomBlock>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlsBlock {
    kind: String,
    points: Option<Vec<Vec<f64>>>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomBlock {
    z: Vec<f64>,
    w: f64,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct GridBlock {
    /// Number of time steps; omitted means the smallest stable count.
    time_steps: Option<usize>,
    h: f64,
    delta: f64,
    /// Artificial viscosity; omitted means none.
    eps: Option<f64>,
    /// Finite subset size used when the control set is a box.
    control_subset: Option<usize>,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct McBlock {
    n_paths: usize,
    dt: f64,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputsBlock {
    directory: String,
    /// Subset of {"csv", "json"}; omitted means both.
    formats: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateBlock {
    t0: f64,
    x0: Vec<f64>,
    /// Constant control applied along the recorded paths.
    control: Vec<f64>,
    /// Number of full path records written as CSV.
    n_record_paths: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyBlock {
    t0: f64,
    x0: Vec<f64>,
    /// Markov-policy time slabs.
    num_slabs: usize,
    /// Markov-policy spatial cell pitch.
    cell_h: f64,
    /// Interior stopping times for the dynamic-programming check.
    #[serde(default)]
    dpp_fixed_times: Vec<f64>,
    /// Erosion depths for first-exit stopping rules.
    #[serde(default)]
    dpp_erosions: Vec<f64>,
    /// Drift shifts (first coordinate) for the coupling probe.
    #[serde(default)]
    coupling_drift_shifts: Vec<f64>,
    /// Coupling margin delta; required when shifts are given.
    coupling_delta: Option<f64>,
    /// Bound on the final coupling-failure fraction; required with shifts.
    coupling_p_tol: Option<f64>,
    /// Control-subset sizes for the projection probe.
    #[serde(default)]
    projection_schedule: Vec<usize>,
    /// Bound on the final projection moment; required with a schedule.
    projection_tol: Option<f64>,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct BarrierBlock {
    n_samples: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CascadeBlock {
    /// Template mesh shared by every stage.
    time_steps: usize,
    h: f64,
    #[serde(default)]
    eps_schedule: Vec<f64>,
    #[serde(default)]
    subset_schedule: Vec<usize>,
    #[serde(default)]
    delta_schedule: Vec<f64>,
}

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields)]
struct ValidateBlock {
    n_samples: usize,
}

// ---------------------------------------------------------------------------
// Error classification → exit codes
// ---------------------------------------------------------------------------

enum RunError {
    /// Exit 2: the configuration is missing, malformed, or inconsistent.
    Config(String),
    /// Exit 1: a check ran and failed.
    Check(String),
    /// Exit 3: stability violation or non-finite numerics.
    Numerical(String),
}

fn config_err(e: impl std::fmt::Display) -> RunError {
    RunError::Config(e.to_string())
}

fn numerical_err(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

/// Solver and simulation failures are numerical; everything else that can
/// reach the runner from the verification layer stems from the config.
fn verify_err(e: verify::VerifyError) -> RunError {
    match e {
        verify::VerifyError::Sim(inner) => RunError::Numerical(inner.to_string()),
        verify::VerifyError::Solver(inner) => RunError::Numerical(inner.to_string()),
        other => RunError::Config(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Check(msg)) => {
            eprintln!("FAILED: {msg}");
            ExitCode::from(1)
        }
        Err(RunError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Numerical(msg)) => {
            eprintln!("numerical error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: &Cli) -> Result<(), RunError> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(config_err)?;
    }
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| RunError::Config("--config PATH is required".into()))?;
    let raw = fs::read_to_string(config_path)
        .map_err(|e| RunError::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let mut config: ExperimentConfig = toml::from_str(&raw).map_err(config_err)?;
    if let Some(seed) = cli.seed {
        if let Some(mc) = config.mc.as_mut() {
            mc.seed = seed;
        }
    }
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.outputs.directory));
    let formats = Formats::from_config(&config.outputs)?;
    let spec = build_spec(&config.problem)?;

    match cli.cmd {
        Cmd::Solve => cmd_solve(&config, &spec, &out_dir, &formats),
        Cmd::Simulate => cmd_simulate(&config, &spec, &out_dir, &formats),
        Cmd::Verify => cmd_verify(&config, &spec, &out_dir, &formats),
        Cmd::Barrier => cmd_barrier(&config, &spec, &out_dir, &formats),
        Cmd::Cascade => cmd_cascade(&config, &spec, &out_dir, &formats),
        Cmd::Validate => cmd_validate(&config, &spec, &out_dir, &formats),
    }
}

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

fn build_spec(block: &ProblemBlock) -> Result<ProblemSpec, RunError> {
    let controls = match &block.controls {
        None => None,
        Some(c) => Some(match c.kind.as_str() {
            "finite" => {
                let points = c
                    .points
                    .clone()
                    .ok_or_else(|| RunError::Config("finite controls need `points`".into()))?;
                ControlSet::finite(points).map_err(config_err)?
            }
            "box" => {
                let lo = c
                    .lo
                    .clone()
                    .ok_or_else(|| RunError::Config("box controls need `lo`".into()))?;
                let hi = c
                    .hi
                    .clone()
                    .ok_or_else(|| RunError::Config("box controls need `hi`".into()))?;
                ControlSet::bounded_box(lo, hi).map_err(config_err)?
            }
            other => {
                return Err(RunError::Config(format!(
                    "unknown control kind `{other}` (expected `finite` or `box`)"
                )))
            }
        }),
    };
    let atoms = block
        .atoms
        .as_ref()
        .map(|list| list.iter().map(|a| Atom { z: a.z.clone(), w: a.w }).collect());
    let params = FamilyParams {
        horizon: block.horizon,
        controls,
        atoms,
    };
    make_problem(&block.family, params).map_err(config_err)
}

fn require_grid(config: &ExperimentConfig) -> Result<GridBlock, RunError> {
    config
        .grid
        .ok_or_else(|| RunError::Config("this subcommand needs a [grid] block".into()))
}

fn require_mc(config: &ExperimentConfig) -> Result<McConfig, RunError> {
    let mc = config
        .mc
        .ok_or_else(|| RunError::Config("this subcommand needs an [mc] block with a seed".into()))?;
    Ok(McConfig {
        n_paths: mc.n_paths,
        dt: mc.dt,
        seed: mc.seed,
    })
}

/// Finite control subset the grid solver minimizes over.
fn solver_controls(spec: &ProblemSpec, grid: &GridBlock) -> Result<ControlSet, RunError> {
    if spec.controls.len_finite().is_some() {
        return Ok(spec.controls.clone());
    }
    match grid.control_subset {
        Some(n) if n >= 1 => ControlSet::finite(spec.controls.enumerate(n)).map_err(config_err),
        _ => Err(RunError::Config(
            "box control sets need grid.control_subset >= 1 for the grid solver".into(),
        )),
    }
}

fn build_grid(spec: &ProblemSpec, block: &GridBlock) -> Result<(GridSpec, f64), RunError> {
    let eps = block.eps.unwrap_or(0.0);
    let steps = match block.time_steps {
        Some(n) => n,
        None => solver::min_time_steps(spec, block.h, block.delta, eps).map_err(numerical_err)?,
    };
    let grid = GridSpec::new(spec, steps, block.h, block.delta, eps).map_err(numerical_err)?;
    Ok((grid, eps))
}

// ---------------------------------------------------------------------------
// Artifact plumbing
// ---------------------------------------------------------------------------

struct Formats {
    csv: bool,
    json: bool,
}

impl Formats {
    fn from_config(outputs: &OutputsBlock) -> Result<Self, RunError> {
        match &outputs.formats {
            None => Ok(Self { csv: true, json: true }),
            Some(list) => {
                let mut f = Self { csv: false, json: false };
                for entry in list {
                    match entry.as_str() {
                        "csv" => f.csv = true,
                        "json" => f.json = true,
                        other => {
                            return Err(RunError::Config(format!(
                                "unknown output format `{other}` (expected `csv` or `json`)"
                            )))
                        }
                    }
                }
                Ok(f)
            }
        }
    }
}

fn write_text(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    fs::create_dir_all(dir)
        .map_err(|e| RunError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| RunError::Config(format!("cannot write {}: {e}", path.display())))
}

/// Reports are serialized with the runtime zeroed so reruns produce
/// byte-identical artifacts.
fn write_report_json(
    dir: &Path,
    name: &str,
    report: &VerificationReport,
    formats: &Formats,
) -> Result<(), RunError> {
    if !formats.json {
        return Ok(());
    }
    let mut frozen = report.clone();
    frozen.runtime_seconds = 0.0;
    let body = serde_json::to_string_pretty(&frozen).map_err(config_err)?;
    write_text(dir, name, &format!("{body}\n"))
}

fn print_report(report: &VerificationReport) {
    for q in &report.quantities {
        println!(
            "{} {} :: {} = {:.6e} (tol {:.6e})",
            if q.pass { "[PASS]" } else { "[FAIL]" },
            report.name,
            q.label,
            q.value,
            q.tolerance,
        );
    }
}

fn full(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_field_csv(
    dir: &Path,
    field: &ValueField,
    formats: &Formats,
) -> Result<(), RunError> {
    if !formats.csv {
        return Ok(());
    }
    let d = field.node_position(0).len();
    let mut body = String::from("t");
    for i in 1..=d {
        let _ = write!(body, ",x_{i}");
    }
    body.push_str(",w\n");
    for level in 0..field.levels() {
        let t = field.level_time(level);
        for k in 0..field.num_nodes() {
            body.push_str(&full(t));
            for c in field.node_position(k) {
                body.push(',');
                body.push_str(&full(c));
            }
            body.push(',');
            body.push_str(&full(field.value_at_node(level, k)));
            body.push('\n');
        }
    }
    write_text(dir, "value_field.csv", &body)
}

/// One path per file: the merged time grid, states, and the control applied
/// on the step leaving each row (empty on the final row).
fn write_path_csv(
    dir: &Path,
    name: &str,
    rec: &PathRecord,
    formats: &Formats,
) -> Result<(), RunError> {
    if !formats.csv {
        return Ok(());
    }
    let d = rec.states[0].len();
    let m = rec.controls_applied.first().map_or(0, |u| u.len());
    let mut body = String::from("s");
    for i in 1..=d {
        let _ = write!(body, ",x_{i}");
    }
    for i in 1..=m {
        let _ = write!(body, ",u_{i}");
    }
    body.push('\n');
    for (i, (s, x)) in rec.times.iter().zip(&rec.states).enumerate() {
        body.push_str(&full(*s));
        for c in x {
            body.push(',');
            body.push_str(&full(*c));
        }
        for j in 0..m {
            body.push(',');
            if let Some(u) = rec.controls_applied.get(i) {
                body.push_str(&full(u[j]));
            }
        }
        body.push('\n');
    }
    write_text(dir, name, &body)
}

fn write_cascade_csv(
    dir: &Path,
    tables: &[(String, CascadeTable)],
    formats: &Formats,
) -> Result<(), RunError> {
    if !formats.csv {
        return Ok(());
    }
    let mut body = String::from("study,eps,subset_size,delta,sup_diff\n");
    for (study, table) in tables {
        for row in &table.rows {
            let _ = writeln!(
                body,
                "{study},{},{},{},{}",
                full(row.eps),
                row.subset_size,
                full(row.delta),
                full(row.sup_diff),
            );
        }
    }
    write_text(dir, "cascade_table.csv", &body)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_solve(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    out: &Path,
    formats: &Formats,
) -> Result<(), RunError> {
    let block = require_grid(config)?;
    let (grid, eps) = build_grid(spec, &block)?;
    let controls = solver_controls(spec, &block)?;
    let field = solver::solve(spec, &grid, eps, &controls).map_err(numerical_err)?;
    write_field_csv(out, &field, formats)?;
    println!(
        "[PASS] solve[{}] :: levels={} nodes={} h={:.6e} dt={:.6e} sup|w|={:.6e}",
        spec.name,
        field.levels(),
        field.num_nodes(),
        grid.spatial_h,
        field.dt(),
        field.max_abs(),
    );
    Ok(())
}

fn cmd_simulate(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    out: &Path,
    formats: &Formats,
) -> Result<(), RunError> {
    let mc = require_mc(config)?;
    let block = config
        .simulate
        .as_ref()
        .ok_or_else(|| RunError::Config("the simulate subcommand needs a [simulate] block".into()))?;
    if block.control.len() != spec.controls.dim() {
        return Err(RunError::Config(format!(
            "control has dimension {}, the problem expects {}",
            block.control.len(),
            spec.controls.dim()
        )));
    }
    if block.x0.len() != spec.dims.d {
        return Err(RunError::Config(format!(
            "x0 has dimension {}, the problem expects {}",
            block.x0.len(),
            spec.dims.d
        )));
    }
    let law = ControlLaw::Constant(block.control.clone());
    for i in 0..block.n_record_paths {
        let mut streams = PathStreams::for_path(mc.seed, i as u64);
        let rec = sim::simulate(spec, &law, block.t0, &block.x0, mc.dt, 0.0, &mut streams)
            .map_err(numerical_err)?;
        write_path_csv(out, &format!("path_{i:03}.csv"), &rec, formats)?;
    }
    let est = sim::estimate_cost(spec, &law, block.t0, &block.x0, mc.n_paths, mc.dt, mc.seed)
        .map_err(numerical_err)?;
    if formats.json {
        let body = serde_json::to_string_pretty(&est).map_err(config_err)?;
        write_text(out, "mc_estimate.json", &format!("{body}\n"))?;
    }
    println!(
        "[PASS] simulate[{}] :: cost_mean={:.6e} se={:.6e} n={} recorded={}",
        spec.name, est.mean, est.std_error, est.n_paths, block.n_record_paths,
    );
    Ok(())
}

fn cmd_verify(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    out: &Path,
    formats: &Formats,
) -> Result<(), RunError> {
    let grid_block = require_grid(config)?;
    let mc = require_mc(config)?;
    let block = config
        .verify
        .as_ref()
        .ok_or_else(|| RunError::Config("the verify subcommand needs a [verify] block".into()))?;
    if block.x0.len() != spec.dims.d {
        return Err(RunError::Config(format!(
            "x0 has dimension {}, the problem expects {}",
            block.x0.len(),
            spec.dims.d
        )));
    }
    let (grid, eps) = build_grid(spec, &grid_block)?;
    let controls = solver_controls(spec, &grid_block)?;
    let field = solver::solve(spec, &grid, eps, &controls).map_err(numerical_err)?;
    let candidates = verify::standard_candidates(&field, spec, block.num_slabs, block.cell_h)
        .map_err(verify_err)?;
    let budget = verify::calibrate_budget(
        spec,
        &grid,
        eps,
        &controls,
        block.num_slabs,
        block.cell_h,
        block.t0,
        &block.x0,
        &mc,
    )
    .map_err(verify_err)?;
    let tol_solver = budget.tol_solver(grid.spatial_h, field.dt());
    let tol_policy = budget.tol_policy(block.cell_h, spec.horizon_t / block.num_slabs as f64);
    let tol_sim = budget.tol_sim(mc.dt);
    println!(
        "[PASS] budget[{}] :: c1={:.6e} c2={:.6e} c3={:.6e} tol_solver={:.6e} tol_policy={:.6e} tol_sim={:.6e}",
        spec.name, budget.c1, budget.c2, budget.c3, tol_solver, tol_policy, tol_sim,
    );

    let mut reports: Vec<VerificationReport> = Vec::new();

    let rep = verify::representation_check(
        spec,
        &field,
        &candidates,
        block.t0,
        &block.x0,
        &mc,
        tol_solver,
        tol_policy,
        tol_sim,
    )
    .map_err(verify_err)?;
    write_report_json(out, "report_representation.json", &rep, formats)?;
    reports.push(rep);

    let mut rules: Vec<StoppingRule> = Vec::new();
    rules.extend(block.dpp_fixed_times.iter().map(|&ts| StoppingRule::FixedTime(ts)));
    rules.extend(block.dpp_erosions.iter().map(|&r| StoppingRule::FirstExitEroded(r)));
    for (i, rule) in rules.iter().enumerate() {
        let dpp = verify::dpp_check(
            spec,
            &field,
            &candidates,
            block.t0,
            &block.x0,
            rule,
            &mc,
            tol_solver + tol_policy + tol_sim,
        )
        .map_err(verify_err)?;
        write_report_json(out, &format!("report_dpp_{i}.json"), &dpp, formats)?;
        reports.push(dpp);
    }

    if !block.coupling_drift_shifts.is_empty() {
        let delta = block.coupling_delta.ok_or_else(|| {
            RunError::Config("coupling_drift_shifts needs coupling_delta".into())
        })?;
        let p_tol = block.coupling_p_tol.ok_or_else(|| {
            RunError::Config("coupling_drift_shifts needs coupling_p_tol".into())
        })?;
        let law = ControlLaw::Constant(spec.controls.enumerate(1).remove(0));
        let mut fractions = Vec::new();
        for (i, &shift) in block.coupling_drift_shifts.iter().enumerate() {
            let mut dir = vec![0.0; spec.dims.d];
            dir[0] = shift;
            let mut perturbed = spec.perturb_drift(dir);
            perturbed.name = format!("{}+drift{shift}", spec.name);
            let probe = verify::coupling_probe(
                spec, &perturbed, &law, delta, block.t0, &block.x0, &mc,
            )
            .map_err(verify_err)?;
            fractions.push(
                probe
                    .quantity("coupling_failure_fraction")
                    .map_or(f64::NAN, |q| q.value),
            );
            write_report_json(out, &format!("report_coupling_{i}.json"), &probe, formats)?;
            reports.push(probe);
        }
        let max_increase = fractions
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0f64, f64::max);
        let mut quantities = vec![];
        for (shift, p) in block.coupling_drift_shifts.iter().zip(&fractions) {
            quantities.push(verify::Quantity::info(format!("p_hat[shift={shift}]"), *p));
        }
        quantities.push(verify::Quantity::one_sided(
            "p_hat_max_increase",
            max_increase,
            1e-12,
        ));
        quantities.push(verify::Quantity::one_sided(
            "p_hat_final",
            *fractions.last().expect("nonempty shifts"),
            p_tol,
        ));
        let trend = VerificationReport {
            name: format!("coupling_trend[{}]", spec.name),
            quantities,
            seeds: vec![mc.seed],
            runtime_seconds: 0.0,
        };
        write_report_json(out, "report_coupling_trend.json", &trend, formats)?;
        reports.push(trend);
    }

    if !block.projection_schedule.is_empty() {
        let tol = block.projection_tol.ok_or_else(|| {
            RunError::Config("projection_schedule needs projection_tol".into())
        })?;
        let base = candidates[0].1.clone();
        let probe = verify::control_projection_probe(
            spec,
            &base,
            &block.projection_schedule,
            tol,
            block.t0,
            &block.x0,
            &mc,
        )
        .map_err(verify_err)?;
        write_report_json(out, "report_projection.json", &probe, formats)?;
        reports.push(probe);
    }

    let mut failures = 0usize;
    for report in &reports {
        print_report(report);
        failures += report.quantities.iter().filter(|q| !q.pass).count();
    }
    if failures > 0 {
        return Err(RunError::Check(format!(
            "{failures} verification quantities failed"
        )));
    }
    Ok(())
}

fn cmd_barrier(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    out: &Path,
    formats: &Formats,
) -> Result<(), RunError> {
    let mc = require_mc(config)?;
    let block = config
        .barrier
        .ok_or_else(|| RunError::Config("the barrier subcommand needs a [barrier] block".into()))?;
    let bar = barrier::build_barrier(spec, &spec.domain).map_err(numerical_err)?;
    let report = barrier::supersolution_probe(&bar, spec, block.n_samples, mc.seed);
    if formats.json {
        let body = serde_json::to_string_pretty(&report).map_err(config_err)?;
        write_text(out, "barrier_report.json", &format!("{body}\n"))?;
    }
    let tag = if report.pass { "[PASS]" } else { "[FAIL]" };
    println!(
        "{tag} barrier[{}] :: worst_value={:.6e} kappa={:.6e} L={:.6e} K_est={:.6e}",
        spec.name, report.worst_value, report.kappa, report.l_rate, report.k_est,
    );
    println!(
        "{tag} barrier[{}] :: frac_nonpositive={:.6e} frac_strict={:.6e} n={}",
        spec.name, report.frac_nonpositive, report.frac_strict, report.n_samples,
    );
    if !report.pass {
        return Err(RunError::Check("barrier supersolution probe failed".into()));
    }
    Ok(())
}

fn cmd_cascade(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    out: &Path,
    formats: &Formats,
) -> Result<(), RunError> {
    let block = config
        .cascade
        .as_ref()
        .ok_or_else(|| RunError::Config("the cascade subcommand needs a [cascade] block".into()))?;
    if block.eps_schedule.len() < 2
        && block.subset_schedule.len() < 2
        && block.delta_schedule.len() < 2
    {
        return Err(RunError::Config(
            "cascade needs at least one schedule with two or more stages".into(),
        ));
    }
    // Each study varies one knob along its schedule and pins the others at
    // their finest (last) value, so the final stage is the overall finest.
    let eps_floor = block.eps_schedule.last().copied().unwrap_or(0.0);
    let delta_floor = block.delta_schedule.last().copied().unwrap_or(0.0);
    let subset_cap = block
        .subset_schedule
        .last()
        .copied()
        .unwrap_or_else(|| spec.controls.len_finite().unwrap_or(16));

    let mut tables: Vec<(String, CascadeTable)> = Vec::new();
    let mut run_study = |name: &str, schedule: Vec<CascadeStage>| -> Result<(), RunError> {
        if schedule.len() < 2 {
            return Ok(());
        }
        let template = GridSpec::new(
            spec,
            block.time_steps,
            block.h,
            schedule
                .iter()
                .map(|s| s.delta)
                .fold(0.0f64, f64::max),
            schedule.iter().map(|s| s.eps).fold(0.0f64, f64::max),
        )
        .map_err(numerical_err)?;
        let table = solver::cascade_study(spec, &template, &schedule).map_err(numerical_err)?;
        tables.push((name.to_string(), table));
        Ok(())
    };

    run_study(
        "viscosity",
        block
            .eps_schedule
            .iter()
            .map(|&eps| CascadeStage {
                eps,
                subset_size: subset_cap,
                delta: delta_floor,
            })
            .collect(),
    )?;
    run_study(
        "control_subset",
        block
            .subset_schedule
            .iter()
            .map(|&n| CascadeStage {
                eps: eps_floor,
                subset_size: n,
                delta: delta_floor,
            })
            .collect(),
    )?;
    run_study(
        "dilation",
        block
            .delta_schedule
            .iter()
            .map(|&delta| CascadeStage {
                eps: eps_floor,
                subset_size: subset_cap,
                delta,
            })
            .collect(),
    )?;

    write_cascade_csv(out, &tables, formats)?;
    let mut all_pass = true;
    for (study, table) in &tables {
        let tag = if table.trend_non_increasing { "[PASS]" } else { "[FAIL]" };
        all_pass &= table.trend_non_increasing;
        let gaps: Vec<String> = table.rows.iter().map(|r| format!("{:.3e}", r.sup_diff)).collect();
        println!(
            "{tag} cascade[{}] :: {study} gaps to finest = [{}]",
            spec.name,
            gaps.join(", "),
        );
    }
    if !all_pass {
        return Err(RunError::Check("a cascade trend increased".into()));
    }
    Ok(())
}

fn cmd_validate(
    config: &ExperimentConfig,
    spec: &ProblemSpec,
    out: &Path,
    formats: &Formats,
) -> Result<(), RunError> {
    let mc = require_mc(config)?;
    let block = config
        .validate
        .ok_or_else(|| RunError::Config("the validate subcommand needs a [validate] block".into()))?;
    let report = validate_assumptions(spec, block.n_samples, mc.seed);
    if formats.json {
        let body = serde_json::to_string_pretty(&report).map_err(config_err)?;
        write_text(out, "validation_report.json", &format!("{body}\n"))?;
    }
    for check in &report.checks {
        println!(
            "{} validate[{}] :: {} worst_margin={:.6e} threshold={:.6e}",
            if check.pass { "[PASS]" } else { "[FAIL]" },
            spec.name,
            check.name,
            check.worst_margin,
            check.threshold,
        );
    }
    if !report.pass {
        return Err(RunError::Check("an assumption check failed".into()));
    }
    Ok(())
}
