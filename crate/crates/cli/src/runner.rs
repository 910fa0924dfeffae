//! Scenario assembly and the `run`, `sweep` and `verify` commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use canomap::hamilton::{energy_drift, integrate};
use canomap::invariants::{action_function, mapping_symplectic_defect, poincare_cartan_loop, LoopEnsemble};
use canomap::mapping::{canonicity_residual_with, synthesize_ulam, CanonicityOptions, CanonicityReport};
use canomap::phasecore::{verify_derivatives, DerivativeReport};
use canomap::scenarios::{ballistic_system, bilinear_coupling, constant_field_reduction, rotation_example, StraighteningProblem};
use canomap::{ControllingFunction, DynamicSystem, MappingSpec, Matrix, PhaseState, Trajectory, Vector, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{Controlling, RunConfig, Scenario};
use crate::output;
use crate::CliError;

/// Distinct vertices of the loop used for the loop-integral check.
const LOOP_VERTICES: usize = 64;
/// Grid nodes per axis for the straightening solve.
const STRAIGHTENING_NODES: usize = 41;

/// Everything a scenario contributes before the common checks.
struct Prepared {
    sys: DynamicSystem,
    traj: Trajectory,
    spec: MappingSpec,
    extras: Value,
}

fn vec_or(v: &Option<Vec<f64>>, default: Vec<f64>) -> Vector {
    Vector::from_vec(v.clone().unwrap_or(default))
}

fn initial_state(cfg: &RunConfig, x: Vec<f64>, lam: Vec<f64>) -> Result<PhaseState, CliError> {
    Ok(PhaseState::new(vec_or(&cfg.x0, x), vec_or(&cfg.lam0, lam), cfg.t0)?)
}

fn run_integration(sys: &DynamicSystem, s0: &PhaseState, cfg: &RunConfig) -> Result<Trajectory, CliError> {
    Ok(integrate(sys, s0, cfg.t1, cfg.step)?)
}

fn transition_construction(sys: &DynamicSystem, traj: &Trajectory, cfg: &RunConfig) -> Result<(ControllingFunction, Value), CliError> {
    let n = sys.dim();
    let out = synthesize_ulam(sys, traj, &Vector::from_element(n, cfg.coupling), |_, _| 0.0)?;
    let orth = out.orthogonality_defect.iter().cloned().fold(0.0, f64::max);
    let extras = json!({
        "construction": {
            "generator_defect": out.generator_defect,
            "max_orthogonality_defect": orth,
        }
    });
    Ok((out.cf, extras))
}

fn prepare(cfg: &RunConfig) -> Result<Prepared, CliError> {
    let n = cfg.dim();
    let variant = cfg.variant()?;
    match cfg.scenario {
        Scenario::Rotation => {
            // The rotation criterion holds identically only on a frozen flow.
            let sys = DynamicSystem::linear(Matrix::zeros(1, 1))?;
            let s0 = initial_state(cfg, vec![1.0], vec![0.5])?;
            let traj = run_integration(&sys, &s0, cfg)?;
            let (cf, _) = rotation_example(|_| 0.0, |_| 0.0);
            Ok(Prepared { sys, traj, spec: MappingSpec::new(variant, cf), extras: json!({}) })
        }
        Scenario::Linear => {
            let sys = DynamicSystem::linear(Matrix::identity(n, n))?;
            let s0 = initial_state(cfg, vec![1.0; n], vec![1.0; n])?;
            let traj = run_integration(&sys, &s0, cfg)?;
            let (cf, extras) = transition_construction(&sys, &traj, cfg)?;
            Ok(Prepared { sys, traj, spec: MappingSpec::new(variant, cf), extras })
        }
        Scenario::Ballistic => {
            let sys = ballistic_system(cfg.sigma)?;
            let s0 = initial_state(cfg, vec![0.0, cfg.sigma, 1.0, 0.0], vec![0.0, 1.0, 1.0, 0.0])?;
            let traj = run_integration(&sys, &s0, cfg)?;
            let (cf, extras) = transition_construction(&sys, &traj, cfg)?;
            Ok(Prepared { sys, traj, spec: MappingSpec::new(variant, cf), extras })
        }
        Scenario::Straightening => {
            let v = cfg.drift;
            let sys = DynamicSystem::new(1, move |_, _| Vector::from_element(1, v))?
                .with_jacobian(|_, _| Matrix::zeros(1, 1))
                .autonomous();
            let x0 = cfg.x0.as_ref().map_or(0.0, |x| x[0]);
            let lam0 = cfg.lam0.as_ref().map_or(1.0, |l| l[0]);
            if cfg.t0 != 0.0 {
                return Err(CliError::Config("t0 must be 0 for the straightening scenario".into()));
            }
            let h = lam0 * v;
            let c = lam0;
            let a = if c != 0.0 { h / c } else { v };
            let prob = StraighteningProblem::new(
                Vector::from_element(1, c),
                Vector::from_element(1, a),
                h,
                Vector::from_element(1, x0 + cfg.coupling),
            )?;
            let rep = constant_field_reduction(&prob, &sys, x0, lam0, cfg.t1, cfg.step, STRAIGHTENING_NODES)?;
            let extras = json!({
                "straightening": {
                    "boundary": rep.boundary,
                    "pde_residual": rep.pde_residual,
                    "hj_transformed": rep.hj_transformed,
                    "hj_literal": rep.hj_literal,
                    "compatibility": rep.compatibility,
                    "drift_error": rep.drift_error,
                    "algebraic": rep.solution.solution.algebraic,
                }
            });
            let cf = rep.solution.solution.controlling_function();
            Ok(Prepared { sys, traj: rep.extremal, spec: MappingSpec::new(variant, cf), extras })
        }
        Scenario::Custom => {
            let rows = cfg.matrix.as_ref().expect("validated");
            let m = Matrix::from_fn(n, n, |i, j| rows[i][j]);
            let sys = DynamicSystem::linear(m)?;
            let s0 = initial_state(cfg, vec![1.0; n], vec![1.0; n])?;
            let traj = run_integration(&sys, &s0, cfg)?;
            let (cf, extras) = match cfg.controlling.unwrap_or(Controlling::Bilinear) {
                Controlling::Bilinear => (bilinear_coupling(n, cfg.coupling), json!({})),
                Controlling::Rotation => (rotation_example(|_| 0.0, |_| 0.0).0, json!({})),
                Controlling::Transition => transition_construction(&sys, &traj, cfg)?,
            };
            Ok(Prepared { sys, traj, spec: MappingSpec::new(variant, cf), extras })
        }
    }
}

/// Points near the trajectory for the pointwise checks.
fn sample_points(traj: &Trajectory, count: usize, seed: u64) -> Vec<PhaseState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base = &traj.samples[rng.random_range(0..traj.len())];
            let mut p = base.clone();
            for v in p.x.iter_mut().chain(p.lam.iter_mut()) {
                *v += rng.random_range(-0.05..0.05) * v.abs().max(1.0);
            }
            p
        })
        .collect()
}

fn derivative_json(rep: &DerivativeReport) -> Value {
    let blocks: serde_json::Map<String, Value> = rep
        .blocks
        .iter()
        .map(|b| {
            (
                b.block.to_string(),
                json!({
                    "max_rel_error": b.max_rel_error,
                    "tolerance": b.tolerance,
                    "exceeds": b.exceeds(),
                    "fd_backed": b.fd_backed,
                }),
            )
        })
        .collect();
    json!({ "passed": rep.passed(), "fd_backed": rep.fd_backed, "blocks": blocks })
}

/// Result of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub verdict: Verdict,
    pub max_residual: f64,
    pub energy_drift: f64,
    pub symplectic_defect: f64,
    pub loop_drift: Option<f64>,
    pub summary: String,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.verdict {
            Verdict::Canonical => 0,
            Verdict::Violated | Verdict::Degenerate => 1,
        }
    }
}

fn loop_check(sys: &DynamicSystem, s0: &PhaseState, cfg: &RunConfig) -> Value {
    let radius = 0.01 * s0.x[0].abs().max(s0.lam[0].abs()).max(1.0);
    let result = LoopEnsemble::circle(s0, 0, radius, LOOP_VERTICES)
        .and_then(|lp| LoopEnsemble::flow(sys, lp, &[cfg.t1], cfg.step))
        .and_then(|ens| poincare_cartan_loop(sys, &ens));
    match result {
        Ok(rep) => json!({
            "vertices": LOOP_VERTICES,
            "radius": radius,
            "initial": rep.values[0],
            "final": rep.values[1],
            "drift": rep.drift,
        }),
        Err(e) => json!({ "vertices": LOOP_VERTICES, "error": e.to_string(), "drift": Value::Null }),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

/// Runs one configuration and writes its artifacts into `out_dir`.
pub fn run_to(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let prep = prepare(cfg)?;
    let Prepared { sys, traj, spec, extras } = prep;
    output::write_trajectory(&out_dir.join("trajectory.csv"), &sys, &traj)?;
    if let Some(tr) = &traj.truncation {
        return Err(CliError::Numerical(format!("integration truncated at t = {}: {}", tr.t, tr.reason)));
    }

    let opts = CanonicityOptions {
        tolerance: cfg.tolerances.canonicity,
        degenerate_tolerance: cfg.tolerances.degenerate,
    };
    let canon: CanonicityReport = canonicity_residual_with(&sys, &spec, &traj, opts)?;
    output::write_canonicity(&out_dir.join("canonicity.csv"), &canon)?;

    let energy = energy_drift(&sys, &traj)?;
    let action = action_function(&sys, &traj)?;
    let points = sample_points(&traj, cfg.points, cfg.seed);
    let defects = points
        .iter()
        .map(|p| mapping_symplectic_defect(&spec, p))
        .collect::<Result<Vec<_>, _>>()?;
    let symplectic_max = defects.iter().cloned().fold(0.0, f64::max);
    let loop_json = loop_check(&sys, traj.first(), cfg);
    let loop_drift = loop_json["drift"].as_f64();
    let sys_derivs = verify_derivatives(&sys, &points, cfg.tolerances.derivative)?;

    let mut doc = json!({
        "scenario": cfg.scenario.to_string(),
        "n": sys.dim(),
        "map_variant": spec.variant.name(),
        "verdict": canon.verdict.as_str(),
        "canonicity": {
            "max_residual": canon.max_residual,
            "jacobian_min_abs_det": canon.jacobian_min_abs_det,
            "tolerance": opts.tolerance,
            "degenerate_tolerance": opts.degenerate_tolerance,
        },
        "symplectic_defect": { "max": symplectic_max, "points": points.len(), "seed": cfg.seed },
        "energy": { "h0": energy.h0, "max_drift": energy.max_drift, "autonomous": energy.autonomous },
        "action": { "s": action.s, "ds_sum": action.ds_sum, "hj_residual": action.hj_residual },
        "loop": loop_json,
        "derivatives": { "system": derivative_json(&sys_derivs) },
        "samples": traj.len(),
        "step": traj.step,
    });
    if let (Value::Object(d), Value::Object(e)) = (&mut doc, extras) {
        d.extend(e);
    }
    output::write_json(&out_dir.join("invariants.json"), &doc)?;
    if cfg.plot {
        output::write_plot(&out_dir.join("plot.gp"), sys.dim())?;
    }
    let summary = format!("VERDICT={} max_residual={}", canon.verdict, output::float(canon.max_residual));
    Ok(RunOutcome {
        verdict: canon.verdict,
        max_residual: canon.max_residual,
        energy_drift: energy.max_drift,
        symplectic_defect: symplectic_max,
        loop_drift,
        summary,
    })
}

/// Output directory: `CANOMAP_OUT` when set, else the configured one.
pub fn output_dir(cfg: &RunConfig, env_override: Option<PathBuf>) -> PathBuf {
    env_override.unwrap_or_else(|| cfg.output_dir.clone())
}

/// One sweep entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub dir: String,
    pub outcome: Result<RunOutcome, String>,
    pub exit_code: i32,
}

/// Runs one configuration per value concurrently, each into its own
/// subdirectory, then writes `index.csv`.
pub fn sweep(cfg: &RunConfig, param: &str, values: &[String], out_dir: &Path) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("values must not be empty".into()));
    }
    let configs = values
        .iter()
        .map(|v| {
            let c = cfg.with_param(param, v)?;
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    ensure_dir(out_dir)?;
    let dirs: Vec<String> = (0..values.len()).map(|k| format!("{}_{k}", param.replace('.', "_"))).collect();
    let results: Vec<Result<RunOutcome, CliError>> = thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .zip(&dirs)
            .map(|(c, d)| {
                let dir = out_dir.join(d);
                scope.spawn(move || run_to(c, &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(dirs)
        .zip(results)
        .map(|((v, d), r)| {
            let exit_code = match &r {
                Ok(o) => o.exit_code(),
                Err(e) => e.exit_code(),
            };
            SweepRow { value: v.clone(), dir: d, outcome: r.map_err(|e| e.to_string()), exit_code }
        })
        .collect();
    let mut w = csv::Writer::from_path(out_dir.join("index.csv"))?;
    w.write_record(["value", "dir", "verdict", "max_residual", "energy_drift", "symplectic_defect", "loop_drift"])?;
    for r in &rows {
        match &r.outcome {
            Ok(o) => w.write_record([
                r.value.clone(),
                r.dir.clone(),
                o.verdict.to_string(),
                output::float(o.max_residual),
                output::float(o.energy_drift),
                output::float(o.symplectic_defect),
                o.loop_drift.map_or_else(String::new, output::float),
            ])?,
            Err(e) => w.write_record([r.value.clone(), r.dir.clone(), format!("error: {e}"), String::new(), String::new(), String::new(), String::new()])?,
        }
    }
    w.flush()?;
    Ok(rows)
}

/// Derivative checks only; writes `derivatives.json` and returns whether
/// every block passed.
pub fn verify(cfg: &RunConfig, out_dir: &Path) -> Result<bool, CliError> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let prep = prepare(cfg)?;
    if prep.traj.is_empty() {
        return Err(CliError::Numerical("empty trajectory".into()));
    }
    let points = sample_points(&prep.traj, cfg.points, cfg.seed);
    let sys = verify_derivatives(&prep.sys, &points, cfg.tolerances.derivative)?;
    let cf = verify_derivatives(&prep.spec.cf, &points, cfg.tolerances.derivative)?;
    let passed = sys.passed() && cf.passed();
    let doc = json!({
        "scenario": cfg.scenario.to_string(),
        "passed": passed,
        "system": derivative_json(&sys),
        "controlling": derivative_json(&cf),
    });
    output::write_json(&out_dir.join("derivatives.json"), &doc)?;
    Ok(passed)
}
