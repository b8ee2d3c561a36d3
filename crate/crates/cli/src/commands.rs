use std::collections::BTreeMap;
use std::path::Path;

use mflq::compensator::check_condition_rc;
use mflq::error::{Error, Result};
use mflq::examples::{
    build_mean_variance, build_speed_example, speed_compensator, speed_figure, verify_mean_variance, verify_negdef,
    verify_speed, ClosedFormBundle, MarketModel, NegdefParams, SpeedK, SpeedParams, VerificationReport,
};
use mflq::export::{ensemble_summary_table, moments_table, riccati_table, write_ensemble, Table};
use mflq::problem::{check_condition_pd, ensure_valid, validate, ProblemSpec};
use mflq::riccati::{riccati_residual, solve_full, solve_riccati, RiccatiSolution};
use mflq::schema::{compensator_to_json, load_compensator, load_law, problem_from_json, problem_to_json};
use mflq::simulation::{
    propagate_moments, simulate_particle_system, simulate_paths, FeedbackLaw, MeanField, SimOptions,
};
use mflq::TimeGrid;
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use crate::output::{sha256_hex, to_json, Artifacts};
use crate::{Cli, Command, ExampleName, EXIT_CHECK_FAILED, EXIT_OK};

struct Run {
    artifacts: Artifacts,
    config: BTreeMap<String, Value>,
    code: i32,
}

impl Run {
    fn new(command: &str) -> Self {
        let mut config = BTreeMap::new();
        config.insert("command".into(), json!(command));
        Run {
            artifacts: Artifacts::default(),
            config,
            code: EXIT_OK,
        }
    }

    fn set(&mut self, key: &str, value: Value) {
        self.config.insert(key.into(), value);
    }

    fn input(&mut self, key: &str, path: &Path) -> Result<String> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.set(
            key,
            json!({ "path": path.display().to_string(), "sha256": sha256_hex(text.as_bytes()) }),
        );
        Ok(text)
    }

    fn problem(&mut self, path: &Path) -> Result<ProblemSpec> {
        let text = self.input("problem", path)?;
        problem_from_json(&text)
    }

    fn table(&mut self, name: &str, t: &Table) {
        self.artifacts.text(name, t.to_csv());
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    if cli.grid_steps == 0 {
        return Err(Error::DomainError("--grid-steps must be positive".into()));
    }
    if cli.paths == 0 {
        return Err(Error::DomainError("--paths must be positive".into()));
    }
    let run = match &cli.command {
        Command::Validate { problem } => cmd_validate(problem)?,
        Command::Solve { problem } => cmd_solve(cli, problem)?,
        Command::CheckPd { problem, delta, tol } => cmd_check_pd(cli, problem, *delta, *tol)?,
        Command::CheckRc {
            problem,
            compensator,
            delta,
            tol,
        } => cmd_check_rc(cli, problem, compensator, *delta, *tol)?,
        Command::Simulate {
            problem,
            law,
            particles,
            dump,
        } => cmd_simulate(cli, problem, law.as_deref(), *particles, *dump)?,
        Command::Evaluate { problem, law } => cmd_evaluate(cli, problem, law)?,
        Command::Example {
            name,
            set,
            reference_steps,
        } => cmd_example(cli, *name, set, *reference_steps)?,
    };
    let hash = sha256_hex(&to_json(&run.config)?);
    run.artifacts.commit(&cli.out, &run.config, &hash, run.code)?;
    for name in run.artifacts.names() {
        say!("wrote {}", cli.out.join(name).display());
    }
    Ok(run.code)
}

fn grid_config(run: &mut Run, cli: &Cli) {
    run.set("grid_steps", json!(cli.grid_steps));
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn solve(spec: &ProblemSpec, grid: TimeGrid) -> Result<RiccatiSolution> {
    if spec.weights.ell.is_some() {
        solve_full(spec, grid)
    } else {
        solve_riccati(spec, grid)
    }
}

fn cmd_validate(problem: &Path) -> Result<Run> {
    let mut run = Run::new("validate");
    let text = run.input("problem", problem)?;
    let violations = match problem_from_json(&text) {
        Ok(spec) => validate(&spec),
        Err(Error::Validation(v)) => v,
        Err(e) => return Err(e),
    };
    if violations.is_empty() {
        say!("valid");
    } else {
        for v in &violations {
            say!("violation: {v}");
        }
        run.code = EXIT_CHECK_FAILED;
    }
    run.artifacts.json(
        "validation.json",
        &json!({ "valid": violations.is_empty(), "violations": violations }),
    )?;
    Ok(run)
}

#[derive(Serialize)]
struct SolutionSummary {
    horizon: f64,
    steps: usize,
    value0: Option<f64>,
    p0: Vec<Vec<f64>>,
    p_hat0: Vec<Vec<f64>>,
    phi0: Option<Vec<f64>>,
    min_margin: f64,
    min_margin_hat: f64,
    residuals: mflq::riccati::Residuals,
}

fn cmd_solve(cli: &Cli, problem: &Path) -> Result<Run> {
    let mut run = Run::new("solve");
    grid_config(&mut run, cli);
    let spec = run.problem(problem)?;
    ensure_valid(&spec)?;
    let grid = TimeGrid::new(spec.horizon, cli.grid_steps)?;
    let sol = solve(&spec, grid)?;
    let residuals = riccati_residual(&spec, &sol)?;
    let (m1, m2) = sol.min_margins();
    let summary = SolutionSummary {
        horizon: spec.horizon,
        steps: grid.steps(),
        value0: sol.value0,
        p0: rows(&sol.p[0]),
        p_hat0: rows(&sol.p_hat[0]),
        phi0: sol.phi.as_ref().map(|phi| phi[0].iter().copied().collect()),
        min_margin: m1,
        min_margin_hat: m2,
        residuals,
    };
    if let Some(v) = sol.value0 {
        say!("value at 0: {v:.12e}");
    }
    run.table("riccati.csv", &riccati_table(&sol));
    run.artifacts.json("solution.json", &summary)?;
    Ok(run)
}

fn cmd_check_pd(cli: &Cli, problem: &Path, delta: f64, tol: f64) -> Result<Run> {
    let mut run = Run::new("check-pd");
    grid_config(&mut run, cli);
    run.set("delta", json!(delta));
    run.set("tol", json!(tol));
    let spec = run.problem(problem)?;
    let grid = TimeGrid::new(spec.horizon, cli.grid_steps)?;
    let report = check_condition_pd(&spec, &grid, delta, tol)?;
    report_clauses("condition PD", report.pass(), &report.failed_clauses());
    if !report.pass() {
        run.code = EXIT_CHECK_FAILED;
    }
    run.artifacts.json("pd_report.json", &report)?;
    Ok(run)
}

fn cmd_check_rc(cli: &Cli, problem: &Path, compensator: &Path, delta: f64, tol: f64) -> Result<Run> {
    let mut run = Run::new("check-rc");
    grid_config(&mut run, cli);
    run.set("delta", json!(delta));
    run.set("tol", json!(tol));
    let spec = run.problem(problem)?;
    run.input("compensator", compensator)?;
    let comp = load_compensator(compensator, &spec)?;
    let grid = TimeGrid::new(spec.horizon, cli.grid_steps)?;
    let report = check_condition_rc(&spec, &comp, &grid, delta, tol)?;
    report_clauses("condition RC", report.pass(), &report.failed_clauses());
    if !report.pass() {
        run.code = EXIT_CHECK_FAILED;
    }
    run.artifacts.json("rc_report.json", &report)?;
    Ok(run)
}

fn report_clauses(name: &str, pass: bool, failed: &[String]) {
    if pass {
        say!("{name}: holds");
    } else {
        say!("{name}: fails");
        for c in failed {
            say!("  {c}");
        }
    }
}

fn law_for(
    run: &mut Run,
    spec: &ProblemSpec,
    grid: TimeGrid,
    law: Option<&Path>,
) -> Result<(FeedbackLaw, Option<f64>)> {
    match law {
        Some(path) => {
            run.input("law", path)?;
            Ok((load_law(path, spec)?, None))
        }
        None => {
            ensure_valid(spec)?;
            let sol = solve(spec, grid)?;
            Ok((FeedbackLaw::optimal(spec, &sol)?, sol.value0))
        }
    }
}

fn cmd_simulate(cli: &Cli, problem: &Path, law: Option<&Path>, particles: bool, dump: bool) -> Result<Run> {
    let mut run = Run::new("simulate");
    grid_config(&mut run, cli);
    run.set("paths", json!(cli.paths));
    run.set("seed", json!(cli.seed));
    run.set("particles", json!(particles));
    run.set("dump", json!(dump));
    let spec = run.problem(problem)?;
    let grid = TimeGrid::new(spec.horizon, cli.grid_steps)?;
    let (law, value0) = law_for(&mut run, &spec, grid, law)?;
    let moments = propagate_moments(&spec, &law, &grid)?;
    let opts = SimOptions {
        paths: cli.paths,
        seed: cli.seed,
        retain: dump,
    };
    let ens = if particles {
        simulate_particle_system(&spec, &law, &grid, opts)?
    } else {
        simulate_paths(&spec, &law, &grid, opts)?
    };
    let z = (ens.cost_estimate - moments.total_cost) / ens.cost_stderr.max(f64::MIN_POSITIVE);
    say!(
        "cost: exact {:.10e}, Monte Carlo {:.10e} +- {:.3e}",
        moments.total_cost,
        ens.cost_estimate,
        ens.cost_stderr
    );
    run.table("moments.csv", &moments_table(&moments));
    run.table("ensemble_summary.csv", &ensemble_summary_table(&ens));
    run.artifacts.json(
        "cost.json",
        &json!({
            "oracle": moments.total_cost,
            "monte_carlo": ens.cost_estimate,
            "stderr": ens.cost_stderr,
            "z_score": z,
            "value0": value0,
            "paths": ens.paths,
            "seed": ens.seed,
            "mode": match ens.mode { MeanField::Exact => "exact", MeanField::Particle => "particle" },
        }),
    )?;
    if dump {
        let mut bytes = Vec::new();
        write_ensemble(&ens, &mut bytes)?;
        run.artifacts.add("ensemble.bin", bytes);
    }
    Ok(run)
}

fn cmd_evaluate(cli: &Cli, problem: &Path, law: &Path) -> Result<Run> {
    let mut run = Run::new("evaluate");
    grid_config(&mut run, cli);
    let spec = run.problem(problem)?;
    let grid = TimeGrid::new(spec.horizon, cli.grid_steps)?;
    let (law, _) = law_for(&mut run, &spec, grid, Some(law))?;
    let moments = propagate_moments(&spec, &law, &grid)?;
    say!("cost: {:.12e}", moments.total_cost);
    run.table("moments.csv", &moments_table(&moments));
    run.artifacts
        .json("cost.json", &json!({ "oracle": moments.total_cost }))?;
    Ok(run)
}

struct Overrides(BTreeMap<String, f64>);

impl Overrides {
    fn parse(set: &[String], allowed: &[&str]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in set {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::DomainError(format!("--set expects KEY=VALUE, got '{item}'")))?;
            let k = k.trim();
            if !allowed.contains(&k) {
                return Err(Error::DomainError(format!(
                    "unknown parameter '{k}'; expected one of {}",
                    allowed.join(", ")
                )));
            }
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::DomainError(format!("parameter '{k}': '{v}' is not a number")))?;
            if !v.is_finite() {
                return Err(Error::DomainError(format!("parameter '{k}' must be finite")));
            }
            map.insert(k.to_string(), v);
        }
        Ok(Overrides(map))
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.0.get(key).copied().unwrap_or(default)
    }
}

fn cmd_example(cli: &Cli, name: ExampleName, set: &[String], reference_steps: Option<usize>) -> Result<Run> {
    let mut run = Run::new("example");
    grid_config(&mut run, cli);
    run.set("example", json!(name));
    run.set("reference_steps", json!(reference_steps));
    match name {
        ExampleName::Mv => example_mv(&mut run, cli, set)?,
        ExampleName::Speed => example_speed(&mut run, cli, set, reference_steps)?,
        ExampleName::Negdef => example_negdef(&mut run, cli, set)?,
    }
    Ok(run)
}

fn finish_example(
    run: &mut Run,
    report: &VerificationReport,
    spec: &ProblemSpec,
    sol: &RiccatiSolution,
    closed: Table,
) -> Result<()> {
    for c in &report.checks {
        say!(
            "{} {}: {:.3e} (tolerance {:.1e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    for w in &report.warnings {
        say!("warning: {w}");
    }
    if !report.pass() {
        run.code = EXIT_CHECK_FAILED;
    }
    let law = FeedbackLaw::optimal(spec, sol)?;
    let moments = propagate_moments(spec, &law, &sol.grid)?;
    run.artifacts.json("report.json", report)?;
    run.artifacts.text("problem.json", problem_to_json(spec)?);
    run.table("riccati.csv", &riccati_table(sol));
    run.table("moments.csv", &moments_table(&moments));
    run.table("closed_forms.csv", &closed);
    Ok(())
}

fn example_mv(run: &mut Run, cli: &Cli, set: &[String]) -> Result<()> {
    let o = Overrides::parse(set, &["r", "mu", "sigma", "nu", "T", "x0"])?;
    let (r, mu, sigma, nu, horizon, x0) = (
        o.get("r", 0.05),
        o.get("mu", 0.35),
        o.get("sigma", 1.0),
        o.get("nu", 1.0),
        o.get("T", 1.0),
        o.get("x0", 1.0),
    );
    run.set(
        "parameters",
        json!({ "r": r, "mu": mu, "sigma": sigma, "nu": nu, "T": horizon, "x0": x0 }),
    );
    let market = MarketModel::constant(r, &[mu], DMatrix::from_element(1, 1, sigma), 0.0);
    let grid = TimeGrid::new(horizon, cli.grid_steps)?;
    let (report, sol, bundle) = verify_mean_variance(&market, nu, horizon, x0, grid)?;
    let spec = build_mean_variance(&market, nu, horizon, x0)?;
    finish_example(run, &report, &spec, &sol, bundle.to_table())
}

fn example_speed(run: &mut Run, cli: &Cli, set: &[String], reference_steps: Option<usize>) -> Result<()> {
    let keys = ["a", "a_tilde", "b", "b_tilde", "alpha", "beta", "gamma", "T", "x0"];
    let o = Overrides::parse(set, &keys)?;
    let defaults = [0.8, 0.6, 0.4, 0.1, 0.5, 0.2, 1.0, 1.0, 1.0];
    let v: Vec<f64> = keys.iter().zip(defaults).map(|(k, d)| o.get(k, d)).collect();
    run.set(
        "parameters",
        Value::Object(keys.iter().zip(&v).map(|(k, x)| (k.to_string(), json!(x))).collect()),
    );
    let params = SpeedParams::constant(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let ex = build_speed_example(&params)?;
    let grid = TimeGrid::new(params.horizon, cli.grid_steps)?;
    let (report, sol) = verify_speed(&params, grid, reference_steps)?;
    let k = SpeedK::new(&params)?;
    let closed = Table {
        columns: vec!["t".into(), "K".into(), "beta_tilde".into()],
        rows: grid.times().map(|t| vec![t, k.value(t), k.beta_tilde(t)]).collect(),
    };
    finish_example(run, &report, &ex.spec, &sol, closed)?;

    run.set("seed", json!(cli.seed));
    let law = FeedbackLaw::optimal(&ex.spec, &sol)?;
    let opts = SimOptions {
        paths: 1,
        seed: cli.seed,
        retain: true,
    };
    let path = simulate_paths(&ex.spec, &law, &grid, opts)?.path(0)?;
    let panels = ["a", "b", "c", "d", "e"];
    for (letter, (panel, table)) in panels.iter().zip(speed_figure(&ex.spec, &sol, &path)?) {
        run.table(&format!("fig_{letter}_{panel}.csv"), &table);
    }
    run.artifacts
        .text("compensator.json", compensator_to_json(&speed_compensator(&params)?)?);
    Ok(())
}

fn example_negdef(run: &mut Run, cli: &Cli, set: &[String]) -> Result<()> {
    let keys = [
        "alpha",
        "alpha_tilde",
        "beta",
        "gamma",
        "gamma_tilde",
        "theta",
        "G",
        "T",
        "x0",
    ];
    let o = Overrides::parse(set, &keys)?;
    let defaults = [0.3, 0.2, 1.0, 0.5, 0.3, 0.4, 1.0, 1.0, 1.0];
    let v: Vec<f64> = keys.iter().zip(defaults).map(|(k, d)| o.get(k, d)).collect();
    run.set(
        "parameters",
        Value::Object(keys.iter().zip(&v).map(|(k, x)| (k.to_string(), json!(x))).collect()),
    );
    let params = NegdefParams::constant(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let grid = TimeGrid::new(params.horizon, cli.grid_steps)?;
    let (report, sol, bundle): (VerificationReport, RiccatiSolution, ClosedFormBundle) = verify_negdef(&params, grid)?;
    let spec = mflq::examples::build_negdef_example(&params)?;
    finish_example(run, &report, &spec, &sol, bundle.to_table())
}
