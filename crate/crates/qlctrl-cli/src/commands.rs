//! The four subcommand runners: `check`, `solve`, `sde`, and `expm-study`.
//!
//! Each runner builds the system and problem from the scenario, does its
//! work, writes its artifacts (always including `scenario.json`, the resolved
//! scenario, and `summary.json`, a machine-readable result record), prints a
//! short human summary on stdout, and returns a [`Failure`] carrying the exit
//! class when the run did not succeed. Artifacts that exist at failure time
//! are written before the error is returned, so a diverged solve still leaves
//! its tables behind for inspection.

use nalgebra::DVector;
use serde_json::json;

use qlctrl::{
    averaged_control_experiment, brownian_increments, gramian, kalman_rank, march_solve,
    min_energy_control, per_path_picard, picard_solve, transition, validate_system,
    ControlProblem, Error as SolverError, Grid, LtvSystem, QuasilinearSystem, SdeSystem,
    SolveReport, TargetMode,
};

use crate::artifacts::{self, vec_json, OutDir};
use crate::failure::{CliResult, Failure};
use crate::scenario::Scenario;

/// Builds the system and problem and checks that their dimensions agree.
fn build_pair(scenario: &Scenario) -> CliResult<(QuasilinearSystem, ControlProblem)> {
    let sys = scenario.system.build()?;
    let problem = scenario.problem.build()?;
    if problem.dim() != sys.dim() {
        return Err(Failure::config(format!(
            "problem: state dimension {} does not match the system dimension {}",
            problem.dim(),
            sys.dim()
        )));
    }
    Ok((sys, problem))
}

/// Straight line from the initial state to the target, sampled on the grid.
/// This is the solver's first freezing guess, so diagnosing along it reports
/// on the Gramian the first iteration will actually face.
fn line_between(problem: &ControlProblem, grid: &Grid) -> Vec<DVector<f64>> {
    let horizon = grid.horizon();
    (0..grid.len())
        .map(|k| {
            let s = if horizon > 0.0 { grid.t(k) / horizon } else { 0.0 };
            problem.initial() * (1.0 - s) + problem.target() * s
        })
        .collect()
}

/// `check`: controllability and conditioning diagnostics, no steering.
pub fn run_check(scenario: &Scenario, out: &OutDir) -> CliResult<()> {
    let (sys, problem) = build_pair(scenario)?;
    let opts = scenario.solver.to_options();
    let diag = validate_system(&sys);

    let a0 = sys.drift(0.0, problem.initial());
    let b0 = sys.input(0.0, problem.initial());
    let (rank, full_rank) = kalman_rank(&a0, &b0).map_err(Failure::from_solver)?;

    let grid = Grid::new(problem.horizon(), opts.dt).map_err(Failure::from_solver)?;
    let line = line_between(&problem, &grid);
    let ltv = LtvSystem::freeze(&sys, &grid, &line).map_err(Failure::from_solver)?;
    let tset = transition(&ltv, opts.expm).map_err(Failure::from_solver)?;
    let gram = gramian(&tset, &ltv, 0.0).map_err(Failure::from_solver)?;

    let mut witness: Option<DVector<f64>> = None;
    let steerable = match min_energy_control(&tset, &ltv, &problem) {
        Ok(_) => true,
        Err(err) if err.is_uncontrollable() => {
            if let SolverError::Uncontrollable { witness: w, .. } = &err {
                witness = Some(w.clone());
            }
            false
        }
        Err(err) => return Err(Failure::from_solver(err)),
    };

    println!("system: {} (d = {}, n = {})", sys.family(), sys.dim(), sys.inputs());
    println!(
        "kalman rank at the initial state: {rank} of {} ({})",
        sys.dim(),
        if full_rank { "full" } else { "deficient" }
    );
    println!(
        "coefficient diagnostics over {} samples: max asymmetry {:.3e}{}, min definiteness {:.3e}{}",
        diag.samples,
        diag.max_asymmetry,
        if diag.asymmetric { " (asymmetric)" } else { "" },
        diag.min_definiteness,
        if diag.indefinite { " (indefinite)" } else { "" },
    );
    println!(
        "gramian along the initial line: lambda_min {:.6e}, lambda_max {:.6e}, condition {:.3e}",
        gram.lambda_min, gram.lambda_max, gram.condition
    );
    if let Some(w) = &witness {
        let parts: Vec<String> = w.iter().map(|x| format!("{x:.6e}")).collect();
        println!("uncontrollable direction: [{}]", parts.join(", "));
    }
    println!(
        "verdict: {}",
        if steerable { "controllable on this horizon" } else { "NOT controllable on this horizon" }
    );

    let summary = json!({
        "command": "check",
        "family": sys.family(),
        "dim": sys.dim(),
        "inputs": sys.inputs(),
        "kalman_rank": rank,
        "kalman_full": full_rank,
        "diagnostics": {
            "samples": diag.samples,
            "max_asymmetry": diag.max_asymmetry,
            "min_definiteness": diag.min_definiteness,
            "asymmetric": diag.asymmetric,
            "indefinite": diag.indefinite,
        },
        "gramian": {
            "lambda_min": gram.lambda_min,
            "lambda_max": gram.lambda_max,
            "condition": gram.condition,
        },
        "controllable": steerable,
        "witness": witness.as_ref().map(vec_json),
    });
    out.write("summary.json", &pretty(&summary))?;
    out.write("scenario.json", &scenario.to_json())?;
    println!("artifacts in {}", out.path().display());

    if !steerable {
        return Err(Failure::Controllability(format!(
            "gramian is singular along the initial line (lambda_min {:.3e}, lambda_max {:.3e})",
            gram.lambda_min, gram.lambda_max
        )));
    }
    Ok(())
}

/// `solve`: exact steering by the fixed-point solver, single-shot or marching.
pub fn run_solve(scenario: &Scenario, out: &OutDir) -> CliResult<()> {
    let (sys, problem) = build_pair(scenario)?;
    if problem.mode() != TargetMode::Exact {
        return Err(Failure::config(
            "problem.mode: solve needs \"exact\" (use the sde command for in-expectation steering)",
        ));
    }
    let opts = scenario.solver.to_options();
    let report = if opts.marching {
        march_solve(&sys, &problem, &opts)
    } else {
        picard_solve(&sys, &problem, &opts)
    }
    .map_err(Failure::from_solver)?;

    write_solve_artifacts(scenario, out, &report, &problem)?;

    let miss = (report.final_state() - problem.target()).norm();
    println!(
        "{} after {} iterations over {} window{}; distance to target {:.3e}",
        if report.converged { "converged" } else { "did not converge" },
        report.iterations,
        report.windows.len() - 1,
        if report.windows.len() == 2 { "" } else { "s" },
        miss
    );
    println!("artifacts in {}", out.path().display());

    if !report.converged {
        return Err(Failure::Divergence(format!(
            "fixed-point tolerance {:.1e} not met after {} iterations (last delta {:.3e})",
            opts.tol,
            report.iterations,
            report.deltas.last().copied().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

/// Writes the trajectory/iteration tables and the solve summary.
fn write_solve_artifacts(
    scenario: &Scenario,
    out: &OutDir,
    report: &SolveReport,
    problem: &ControlProblem,
) -> CliResult<()> {
    out.write("trajectory.csv", &artifacts::trajectory_csv(report.grid(), &report.y, &report.u))?;
    out.write("iterations.csv", &artifacts::iterations_csv(report))?;
    let miss = (report.final_state() - problem.target()).norm();
    let summary = json!({
        "command": "solve",
        "marching": scenario.solver.marching,
        "converged": report.converged,
        "iterations": report.iterations,
        "windows": report.windows,
        "deltas": report.deltas,
        "final_state": vec_json(report.final_state()),
        "target": vec_json(problem.target()),
        "miss": miss,
        "control_energy": report.u.energy(),
        "control_sup": report.u.sup_norm(),
    });
    out.write("summary.json", &pretty(&summary))?;
    out.write("scenario.json", &scenario.to_json())?;
    Ok(())
}

/// `sde`: Monte Carlo averaged-control experiment plus sample trajectories.
pub fn run_sde(scenario: &Scenario, out: &OutDir) -> CliResult<()> {
    let (sys, problem) = build_pair(scenario)?;
    let stoch = scenario
        .stochastic
        .as_ref()
        .ok_or_else(|| Failure::config("stochastic: the sde command needs a stochastic block"))?;
    if problem.mode() != TargetMode::InExpectation {
        return Err(Failure::config("problem.mode: sde needs \"in-expectation\""));
    }
    if stoch.budgets.is_empty() {
        return Err(Failure::config("stochastic.budgets: need at least one iteration budget"));
    }
    if stoch.n_paths == 0 {
        return Err(Failure::config("stochastic.n_paths: need at least one path"));
    }
    let z = stoch.diffusion(sys.dim())?;
    let noise_dim = z.ncols();
    let sde = SdeSystem::new(sys, z).map_err(|e| Failure::Config(format!("stochastic: {e}")))?;
    let opts = scenario.solver.to_options();

    let report =
        averaged_control_experiment(&sde, &problem, stoch.n_paths, &stoch.budgets, stoch.seed, &opts)
            .map_err(Failure::from_solver)?;

    out.write("montecarlo.csv", &artifacts::montecarlo_csv(&report))?;
    out.write("path_finals.csv", &artifacts::path_finals_csv(&report, stoch.n_paths))?;

    // Sample trajectory tables for plotting: the first six Brownian streams,
    // each steered with its own path control at the largest budget.
    let mut sample_opts = opts.clone();
    sample_opts.max_iter = *stoch.budgets.iter().max().expect("budgets are non-empty");
    let grid = Grid::new(problem.horizon(), opts.dt).map_err(Failure::from_solver)?;
    let samples = stoch.n_paths.min(6);
    for j in 0..samples {
        let noise = brownian_increments(&grid, noise_dim, stoch.seed, j as u64);
        let (y, u) =
            per_path_picard(&sde, &problem, &noise, &sample_opts).map_err(Failure::from_solver)?;
        out.write(&format!("path_{}.csv", j + 1), &artifacts::trajectory_csv(&grid, &y, &u))?;
    }

    let pooled_miss = (&report.pooled_mean - problem.target()).norm();
    let summary = json!({
        "command": "sde",
        "seed": report.seed,
        "n_paths": stoch.n_paths,
        "budgets": report.budgets,
        "budget_means": report.budget_means.iter().map(vec_json).collect::<Vec<_>>(),
        "pooled_mean": vec_json(&report.pooled_mean),
        "target": vec_json(problem.target()),
        "pooled_miss": pooled_miss,
        "sample_trajectories": samples,
        "failures": report.failures.iter().map(|f| json!({
            "path": f.path_index,
            "budget": f.budget,
            "message": f.message,
        })).collect::<Vec<_>>(),
    });
    out.write("summary.json", &pretty(&summary))?;
    out.write("scenario.json", &scenario.to_json())?;

    for (budget, mean) in report.budgets.iter().zip(&report.budget_means) {
        println!("budget {budget}: mean final {}", fmt_vec(mean));
    }
    println!("pooled mean over {} paths: {}", stoch.n_paths * report.budgets.len(), fmt_vec(&report.pooled_mean));
    println!("distance of the pooled mean to the target: {pooled_miss:.3e}");
    if !report.failures.is_empty() {
        println!("{} path(s) failed and were excluded; see summary.json", report.failures.len());
    }
    println!("artifacts in {}", out.path().display());
    Ok(())
}

/// `expm-study`: reruns the solve once per truncation order plus once with
/// the accurate method and tabulates the reached finals.
pub fn run_expm_study(scenario: &Scenario, orders: &[usize], out: &OutDir) -> CliResult<()> {
    let (sys, problem) = build_pair(scenario)?;
    if problem.mode() != TargetMode::Exact {
        return Err(Failure::config("problem.mode: expm-study needs \"exact\""));
    }
    let base = scenario.solver.to_options();

    let solve_with = |expm: qlctrl::ExpmMethod| -> CliResult<SolveReport> {
        let mut opts = base.clone();
        opts.expm = expm;
        opts.marching = false;
        picard_solve(&sys, &problem, &opts).map_err(Failure::from_solver)
    };

    let accurate = solve_with(qlctrl::ExpmMethod::Accurate)?;
    let accurate_final = accurate.final_state().clone();
    let mut rows: Vec<(String, SolveReport)> = vec![("accurate".into(), accurate)];
    for &k in orders {
        let report = solve_with(qlctrl::ExpmMethod::Taylor(k))?;
        rows.push((format!("taylor({k})"), report));
    }

    let d = problem.dim();
    let mut table = String::from("method,converged,iterations");
    for i in 1..=d {
        table.push_str(&format!(",final_{i}"));
    }
    table.push_str(",miss,gap_to_accurate\n");
    let mut json_rows = Vec::new();
    for (label, report) in &rows {
        let fin = report.final_state();
        let miss = (fin - problem.target()).norm();
        let gap = (fin - &accurate_final).amax();
        table.push_str(&format!("{label},{},{}", report.converged, report.iterations));
        for c in 0..d {
            table.push(',');
            table.push_str(&artifacts::fmt(fin[c]));
        }
        table.push(',');
        table.push_str(&artifacts::fmt(miss));
        table.push(',');
        table.push_str(&artifacts::fmt(gap));
        table.push('\n');
        json_rows.push(json!({
            "method": label,
            "converged": report.converged,
            "iterations": report.iterations,
            "final_state": vec_json(fin),
            "miss": miss,
            "gap_to_accurate": gap,
        }));
        println!("{label}: final {}, miss {miss:.3e}, gap to accurate {gap:.3e}", fmt_vec(fin));
    }
    out.write("expm_study.csv", &table)?;
    let summary = json!({
        "command": "expm-study",
        "orders": orders,
        "target": vec_json(problem.target()),
        "rows": json_rows,
    });
    out.write("summary.json", &pretty(&summary))?;
    out.write("scenario.json", &scenario.to_json())?;
    println!("artifacts in {}", out.path().display());
    Ok(())
}

/// Short bracketed vector rendering for stdout.
fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

/// Pretty JSON with a trailing newline.
fn pretty(value: &serde_json::Value) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("summaries always serialize");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{ModeSpec, Scenario};
    use tempfile::tempdir;

    fn crowd_scenario() -> Scenario {
        serde_json::from_str(
            r#"{
                "system": { "builtin": { "name": "avoid-crowding" } },
                "problem": { "initial": [1.0, 1.0], "target": [2.0, 2.0], "horizon": 0.5 },
                "solver": { "dt": 0.01 }
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn check_passes_on_the_crowd_scenario() {
        let dir = tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        run_check(&crowd_scenario(), &out).unwrap();
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["kalman_rank"], 2);
        assert_eq!(summary["controllable"], true);
        assert!(summary["gramian"]["lambda_min"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn check_reports_a_witness_when_b_is_zero() {
        let scenario: Scenario = serde_json::from_str(
            r#"{
                "system": { "explicit": { "a": [[1.0, 0.0], [0.0, 1.0]], "b": [[0.0], [0.0]] } },
                "problem": { "initial": [1.0, 1.0], "target": [2.0, 2.0], "horizon": 0.5 },
                "solver": { "dt": 0.01 }
            }"#,
        )
        .unwrap();
        let dir = tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        let err = run_check(&scenario, &out).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["controllable"], false);
        assert_eq!(summary["kalman_full"], false);
        let witness: Vec<f64> = summary["witness"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert!(witness.iter().any(|x| x.abs() > 1e-6), "witness must be nonzero");
    }

    #[test]
    fn solve_requires_exact_mode() {
        let mut scenario = crowd_scenario();
        scenario.problem.mode = ModeSpec::InExpectation;
        let dir = tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        assert_eq!(run_solve(&scenario, &out).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn linear_scenario_converges_in_one_iteration() {
        let scenario: Scenario = serde_json::from_str(
            r#"{
                "system": { "explicit": { "a": [[1.0, 0.0], [0.0, 1.0]], "b": [[1.0, 0.0], [0.0, 1.0]] } },
                "problem": { "initial": [1.0, 1.0], "target": [2.0, 2.0], "horizon": 0.5 },
                "solver": { "dt": 0.01, "tol": 1e-10 }
            }"#,
        )
        .unwrap();
        let dir = tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        run_solve(&scenario, &out).unwrap();
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        // The coefficients never move (m = 0), so the second iteration
        // reproduces the first control exactly and the solve stops there.
        // The remaining miss is the O(dt^2) stepping error of the
        // re-simulation, not a solver residual.
        assert_eq!(summary["converged"], true);
        assert!(summary["iterations"].as_u64().unwrap() <= 2);
        assert!(summary["miss"].as_f64().unwrap() < 1e-3);
    }
}
