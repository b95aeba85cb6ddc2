use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use algebroid_mechanics::algebroid::{validate_algebroid, LieAlgebroid};
use algebroid_mechanics::dynamics::{energy, fundamental_form_residual, simulate, ConstrainedState, LagrangianSystem};
use algebroid_mechanics::integrate::{trajectory_compare, IntegratorOptions, Trajectory};
use algebroid_mechanics::optimal_control::{extremal_lagrangian_residual, simulate_extremal, ExtremalState, MechanicalLagrangian};
use algebroid_mechanics::oracle::{lift_acceleration, simulate_oracle, TangentBundleSystem};
use algebroid_mechanics::sampling::SampleBox;
use algebroid_mechanics::systems::{self, atiyah_isomorphism};
use algebroid_mechanics::Error;
use serde_json::json;

use crate::definition::{Definition, DefinitionError};
use crate::{
    Command, CompareArgs, Format, MethodArg, PmpArgs, ReduceArgs, RunArgs, SimulateArgs, SystemSource, ValidateArgs,
    EXIT_OK, EXIT_RUNTIME, EXIT_THRESHOLD, EXIT_USAGE,
};

/// Axiom residuals at or above this fail `validate`.
pub const VALIDATE_THRESHOLD: f64 = 1e-7;
pub const ORACLE_THRESHOLD: f64 = 1e-6;
pub const REDUCTION_THRESHOLD: f64 = 1e-6;
pub const HAMILTONIAN_DRIFT_THRESHOLD: f64 = 1e-8;
pub const LAGRANGIAN_RESIDUAL_THRESHOLD: f64 = 1e-7;

const DEFAULT_RK4_STEP: f64 = 0.01;
/// Extremal residuals differentiate the sampled momentum, so samples must be dense.
const PMP_MAX_STEP: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error(transparent)]
    Library(#[from] Error),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Definition(_) => EXIT_USAGE,
            CliError::Library(
                Error::InputShape { .. }
                | Error::InvalidInput(_)
                | Error::UnknownSystem(_)
                | Error::InconsistentState { .. },
            ) => EXIT_USAGE,
            CliError::Library(_) | CliError::Io(_) => EXIT_RUNTIME,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

pub fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::ListSystems => list_systems(),
        Command::Validate(a) => validate(&a),
        Command::Simulate(a) => simulate_cmd(&a),
        Command::CompareOracle(a) => compare_oracle(&a),
        Command::ReduceCompare(a) => reduce_compare(&a),
        Command::PmpCheck(a) => pmp_check(&a),
    }
}

/// A catalog entry or a definition file, reduced to what the commands need.
struct Target {
    name: String,
    algebroid: LieAlgebroid,
    base_box: SampleBox,
    system: Option<LagrangianSystem>,
    mechanical: Option<MechanicalLagrangian>,
    extremal_initial: Option<ExtremalState>,
}

fn resolve(source: &SystemSource) -> Result<Target> {
    match (&source.system, &source.definition) {
        (Some(name), None) => {
            let e = systems::build(name)?;
            Ok(Target {
                name: e.name.to_string(),
                algebroid: e.system.algebroid().clone(),
                base_box: e.base_box,
                system: Some(e.system),
                mechanical: e.mechanical,
                extremal_initial: e.extremal_initial,
            })
        }
        (None, Some(path)) => {
            let c = Definition::load(path)?.resolve()?;
            Ok(Target {
                name: c.name,
                algebroid: c.algebroid,
                base_box: c.base_box,
                system: c.system,
                mechanical: c.mechanical,
                extremal_initial: c.extremal_initial,
            })
        }
        _ => usage("exactly one of --system and --definition is required"),
    }
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("'{s}' in --initial is not a number")))
        })
        .collect()
}

fn parse_box(text: &str, dim: usize) -> Result<SampleBox> {
    let parsed = text
        .split_once(':')
        .and_then(|(lo, hi)| Some((lo.trim().parse::<f64>().ok()?, hi.trim().parse::<f64>().ok()?)));
    match parsed {
        Some((lo, hi)) if lo <= hi => Ok(SampleBox::cube(dim, lo, hi)),
        _ => usage(format!("--box expects lo:hi with lo <= hi, got '{text}'")),
    }
}

fn span(run: &RunArgs) -> Result<(f64, f64)> {
    if run.t0.is_finite() && run.t1.is_finite() && run.t1 > run.t0 {
        Ok((run.t0, run.t1))
    } else {
        usage(format!("time span requires t0 < t1, got [{}, {}]", run.t0, run.t1))
    }
}

fn options(run: &RunArgs, default_max_step: Option<f64>) -> Result<IntegratorOptions> {
    if let Some(h) = run.step {
        if !(h > 0.0 && h.is_finite()) {
            return usage(format!("--step must be positive, got {h}"));
        }
    }
    if !(run.abs_tol > 0.0 && run.rel_tol >= 0.0) {
        return usage("tolerances must be positive");
    }
    Ok(match run.method {
        MethodArg::Rk4 => IntegratorOptions::rk4(run.step.unwrap_or(DEFAULT_RK4_STEP)),
        MethodArg::Rk45 => {
            let opts = IntegratorOptions::rk45(run.abs_tol, run.rel_tol);
            match run.step.or(default_max_step) {
                Some(h) => opts.with_max_step(h),
                None => opts,
            }
        }
    })
}

fn initial_state(run: &RunArgs, sys: &LagrangianSystem) -> Result<ConstrainedState> {
    let (n, _, k) = sys.dims();
    match &run.initial {
        Some(text) => {
            let values = parse_list(text)?;
            if values.len() != n + k {
                return usage(format!("--initial needs {} values (x then w), got {}", n + k, values.len()));
            }
            Ok(ConstrainedState::from_flat(&values, n))
        }
        None => sys
            .initial_states()
            .first()
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("{} has no default initial state; pass --initial", sys.name()))),
    }
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit_json(output: &Option<PathBuf>, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    emit(output, &text)
}

fn max_abs_change(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = values.into_iter();
    let Some(first) = it.next() else { return 0.0 };
    it.map(|v| (v - first).abs()).fold(0.0, f64::max)
}

/// Splits an integration result into the trajectory and the error that cut it short.
fn split_failure(result: algebroid_mechanics::Result<Trajectory>) -> Result<(Trajectory, Option<Error>)> {
    match result {
        Ok(t) => Ok((t, None)),
        Err(Error::Integration(f)) => {
            let f = *f;
            Ok((f.partial, Some(f.error)))
        }
        Err(e) => Err(e.into()),
    }
}

fn complete(result: algebroid_mechanics::Result<Trajectory>) -> Result<Trajectory> {
    Ok(result?)
}

fn list_systems() -> Result<i32> {
    let mut text = String::new();
    for name in systems::names() {
        let (n, m, k) = systems::build(name)?.dims();
        writeln!(text, "{name} n={n} m={m} k={k}").expect("writing to a string");
    }
    emit(&None, &text)?;
    Ok(EXIT_OK)
}

fn validate(a: &ValidateArgs) -> Result<i32> {
    let target = resolve(&a.source)?;
    let sample_box = match &a.sample_box {
        Some(text) => parse_box(text, target.algebroid.base_dim())?,
        None => target.base_box.clone(),
    };
    let report = validate_algebroid(&target.algebroid, &sample_box, a.samples, a.seed)?;
    let failing = report.failing(VALIDATE_THRESHOLD);
    let max = report.max_residual();
    let axioms: serde_json::Map<String, serde_json::Value> = report
        .axioms()
        .iter()
        .map(|(name, r)| (name.to_string(), json!({"max": r.max, "worst_point": r.worst_point})))
        .collect();
    emit_json(
        &a.output,
        &json!({
            "system": target.name,
            "samples": report.samples,
            "seed": report.seed,
            "box": {"lo": sample_box.lo, "hi": sample_box.hi},
            "threshold": VALIDATE_THRESHOLD,
            "max_residual": max,
            "axioms": axioms,
            "failing": failing,
            "passed": failing.is_empty(),
        }),
    )?;
    Ok(if failing.is_empty() { EXIT_OK } else { EXIT_THRESHOLD })
}

fn simulate_cmd(a: &SimulateArgs) -> Result<i32> {
    let target = resolve(&a.source)?;
    let Some(sys) = &target.system else {
        return usage(format!("{} has no Lagrangian; a definition needs a mass matrix", target.name));
    };
    let s0 = initial_state(&a.run, sys)?;
    let (traj, failure) = split_failure(simulate(sys, &s0, span(&a.run)?, &options(&a.run, None)?))?;
    let (n, _, k) = sys.dims();
    let mut columns = vec!["t".to_string()];
    columns.extend((0..n).map(|i| format!("x_{i}")));
    columns.extend((0..k).map(|i| format!("w_{i}")));
    columns.push("energy".into());
    columns.push("ff_residual".into());
    let rows: Vec<Vec<f64>> = traj
        .times
        .iter()
        .zip(&traj.states)
        .enumerate()
        .map(|(j, (&t, s))| {
            let state = ConstrainedState::from_flat(s, n);
            let recorded = |name: &str| traj.diagnostic(name).and_then(|d| d.get(j).copied());
            let e = recorded("energy").unwrap_or_else(|| energy(sys, &state).unwrap_or(f64::NAN));
            let ff = recorded("ff_residual")
                .unwrap_or_else(|| fundamental_form_residual(sys, &state).unwrap_or(f64::NAN));
            std::iter::once(t).chain(s.iter().copied()).chain([e, ff]).collect()
        })
        .collect();
    match a.format {
        Format::Csv => {
            let mut text = columns.join(",");
            text.push('\n');
            for row in &rows {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            emit(&a.run.output, &text)?;
        }
        Format::Json => emit_json(
            &a.run.output,
            &json!({
                "system": target.name,
                "columns": columns,
                "rows": rows,
                "error": failure.as_ref().map(|e| e.to_string()),
            }),
        )?,
    }
    match failure {
        Some(e) => {
            eprintln!("error: integration stopped early: {e}");
            Ok(EXIT_RUNTIME)
        }
        None => Ok(EXIT_OK),
    }
}

fn oracle_of(name: &str) -> Result<(LagrangianSystem, TangentBundleSystem)> {
    let e = systems::build(name)?;
    match e.oracle {
        Some(o) => Ok((e.system, o)),
        None => usage(format!("{name} has no multiplier formulation")),
    }
}

fn compare_oracle(a: &CompareArgs) -> Result<i32> {
    let (sys, oracle) = oracle_of(&a.system)?;
    let s0 = initial_state(&a.run, &sys)?;
    sys.check_state(&s0)?;
    let t_span = span(&a.run)?;
    let opts = options(&a.run, None)?;
    let w = sys.subbundle();
    let n = s0.x.len();
    let zero = vec![0.0; s0.w.len()];
    let (xdot0, _) = lift_acceleration(w, &s0.x, &s0.w, &zero)?;
    let reference = complete(simulate_oracle(&oracle, &s0.x, xdot0.as_slice(), t_span, &opts))?;
    let candidate = complete(simulate(&sys, &s0, t_span, &opts))?;
    let dev = trajectory_compare(&reference, &candidate, |_, z| {
        let (xd, _) = lift_acceleration(w, &z[..n], &z[n..], &zero)?;
        Ok(z[..n].iter().chain(xd.iter()).copied().collect())
    })?;
    let passed = dev.max_dev < ORACLE_THRESHOLD;
    emit_json(
        &a.run.output,
        &json!({
            "system": a.system,
            "max_dev": dev.max_dev,
            "at_time": dev.at_time,
            "threshold": ORACLE_THRESHOLD,
            "passed": passed,
        }),
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_THRESHOLD })
}

fn reduce_compare(a: &ReduceArgs) -> Result<i32> {
    let full = systems::build("rolling_disk_full")?;
    let reduced = systems::build("rolling_disk_reduced")?;
    let bundle = full.bundle.as_ref().expect("the full disk carries its bundle");
    let s_full = initial_state(&a.run, &full.system)?;
    full.system.check_state(&s_full)?;
    let s_red = ConstrainedState::new(s_full.x[2..].to_vec(), s_full.w.clone());
    let t_span = span(&a.run)?;
    let opts = options(&a.run, None)?;
    let red = complete(simulate(&reduced.system, &s_red, t_span, &opts))?;
    let whole = complete(simulate(&full.system, &s_full, t_span, &opts))?;
    let inj = full.system.subbundle();
    let mut vertical = 0.0f64;
    let dev = trajectory_compare(&red, &whole, |_, z| {
        let (qdot, _) = lift_acceleration(inj, &z[..4], &z[4..], &[0.0, 0.0])?;
        let fibre = atiyah_isomorphism(bundle, &[2, 3], &[0, 1], &z[..4], qdot.as_slice())?;
        vertical = vertical.max(fibre[2].abs()).max(fibre[3].abs());
        Ok(vec![z[2], z[3], fibre[0], fibre[1]])
    })?;
    let w_drift = max_abs_change(red.states.iter().map(|s| s[2]))
        .max(max_abs_change(red.states.iter().map(|s| s[3])));
    let passed = dev.max_dev < REDUCTION_THRESHOLD && vertical < REDUCTION_THRESHOLD;
    emit_json(
        &a.run.output,
        &json!({
            "max_dev": dev.max_dev,
            "at_time": dev.at_time,
            "vertical_part": vertical,
            "reduced_velocity_drift": w_drift,
            "threshold": REDUCTION_THRESHOLD,
            "passed": passed,
        }),
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_THRESHOLD })
}

fn pmp_check(a: &PmpArgs) -> Result<i32> {
    let target = resolve(&a.source)?;
    let Some(mech) = &target.mechanical else {
        return usage(format!("{} has no mechanical Lagrangian", target.name));
    };
    let n = target.algebroid.base_dim();
    let e0 = match &a.run.initial {
        Some(text) => {
            let values = parse_list(text)?;
            if values.len() != 2 * n {
                return usage(format!("--initial needs {} values (x then p), got {}", 2 * n, values.len()));
            }
            ExtremalState::from_flat(&values, n)
        }
        None => match &target.extremal_initial {
            Some(e) => e.clone(),
            None => return usage(format!("{} has no default extremal; pass --initial", target.name)),
        },
    };
    let opts = options(&a.run, Some(PMP_MAX_STEP))?;
    let traj = complete(simulate_extremal(&target.algebroid, mech, &e0, span(&a.run)?, &opts))?;
    let drift = max_abs_change(traj.diagnostic("hamiltonian").expect("recorded").iter().copied());
    let stationarity = traj
        .diagnostic("stationarity")
        .expect("recorded")
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let residual = extremal_lagrangian_residual(&target.algebroid, mech, &traj)?;
    let passed = drift < HAMILTONIAN_DRIFT_THRESHOLD && residual < LAGRANGIAN_RESIDUAL_THRESHOLD;
    emit_json(
        &a.run.output,
        &json!({
            "system": target.name,
            "hamiltonian_drift": drift,
            "lagrangian_residual": residual,
            "stationarity": stationarity,
            "passed": passed,
        }),
    )?;
    Ok(if passed { EXIT_OK } else { EXIT_THRESHOLD })
}
