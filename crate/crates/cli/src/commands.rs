use anyhow::{bail, Context, Result};
use barenblatt_core::diagnostics::{
    contraction_survey, energy_estimate_check, grid_difference_rates, moment_profile, self_convergence,
    stability_check, Estimate,
};
use barenblatt_core::multiplicative::PicardSolver;
use barenblatt_core::stepper::Trajectory;
use barenblatt_core::{compute_stability_constant, Grid, Operators, PicardReport};
use serde_json::{json, Map, Value};

use crate::config::Setup;
use crate::report::{num, opt, Check, Table};

const DEFECT_TOLERANCE: f64 = 1e-10;

/// Everything a subcommand produces; written to disk only after it returns.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(&'static str, String)>,
    pub checks: Vec<Check>,
    pub details: Map<String, Value>,
    pub timings: Map<String, Value>,
    pub message: String,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn trajectory_csv(traj: &Trajectory<f64>, grid: &Grid, ops: &Operators) -> String {
    let mut t = Table::new(&[
        "step",
        "t",
        "l2_theta",
        "h1semi_theta",
        "l2_chi",
        "h1semi_chi",
        "l2_u",
        "inner_iters",
        "max_contraction_factor",
    ]);
    for r in traj.rows(grid, ops) {
        t.row([
            r.step.to_string(),
            num(r.t),
            num(r.l2_theta),
            num(r.h1semi_theta),
            num(r.l2_chi),
            num(r.h1semi_chi),
            num(r.l2_u),
            r.inner_iters.to_string(),
            num(r.max_contraction_factor),
        ]);
    }
    t.finish()
}

fn picard_csv(report: &PicardReport<f64>) -> String {
    let mut t = Table::new(&["iteration", "W_difference", "ratio"]);
    for (j, (d, r)) in report.differences.iter().zip(&report.ratios).enumerate() {
        t.row([(j + 1).to_string(), num(*d), opt(*r)]);
    }
    t.finish()
}

fn trajectory_checks(traj: &Trajectory<f64>, bound: f64) -> Vec<Check> {
    vec![
        Check::at_most("conservation_defect", traj.max_conservation_defect(), DEFECT_TOLERANCE),
        Check::at_most("balance_defect", traj.max_balance_defect(), DEFECT_TOLERANCE),
        Check::at_most("inner_contraction_factor", traj.max_contraction_factor(), bound * (1.0 + 1e-6)),
    ]
}

fn picard_checks(report: &PicardReport<f64>, tolerance: f64, slack: f64) -> Vec<Check> {
    let mut checks = vec![Check::at_most(
        "picard_final_difference",
        report.differences.last().copied().unwrap_or(f64::NAN),
        tolerance,
    )];
    if let Some(r) = report.max_ratio_from(2) {
        checks.push(Check::at_most("picard_ratio", r, report.modulus * (1.0 + slack)));
    }
    checks
}

fn picard_details(report: &PicardReport<f64>) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("picard_iterations".into(), json!(report.iterations()));
    m.insert("picard_modulus".into(), json!(report.modulus));
    m.insert("stability_constant".into(), json!(report.stability_constant));
    m
}

pub fn solve(setup: &Setup) -> Result<Outcome> {
    let p = &setup.problem;
    let grid = p.grid(setup.steps)?;
    let stepper = p.stepper(&grid)?;
    let path = p.path(&grid, setup.path_id);
    let mut out = Outcome::default();
    let traj = match &setup.multiplicative {
        Some(m) => {
            let solver = PicardSolver::new(&stepper, &m.map, m.picard)?;
            let (traj, report) = solver.solve(&p.theta0, &p.chi0, &path)?;
            out.files.push(("picard.csv", picard_csv(&report)));
            out.checks.extend(picard_checks(&report, m.picard.tolerance, setup.checks.ratio_slack));
            out.details.extend(picard_details(&report));
            out.timings.insert("picard_iteration_seconds".into(), json!(report.wall_times));
            traj
        }
        None => stepper.run_additive(&p.theta0, &p.chi0, &p.integrand(&grid)?, &path)?,
    };
    let bound = stepper.contraction_bound();
    out.files.insert(0, ("trajectory.csv", trajectory_csv(&traj, &grid, &p.ops)));
    out.checks.extend(trajectory_checks(&traj, bound));
    let last = traj.final_state();
    out.message = format!(
        "solved {} steps on path {}: |theta(T)| = {:e}, |chi(T)| = {:e}",
        setup.steps,
        setup.path_id,
        p.ops.l2_norm(&last.theta)?,
        p.ops.l2_norm(&last.chi)?
    );
    Ok(out)
}

pub fn mc(setup: &Setup) -> Result<Outcome> {
    if setup.multiplicative.is_some() {
        bail!("`mc` runs additive noise; use `picard` for a multiplicative configuration");
    }
    let rows = moment_profile(&setup.problem, setup.steps, setup.paths)?;
    let mut t = Table::new(&[
        "step",
        "t",
        "theta_l2sq",
        "theta_l2sq_se",
        "theta_h1sq",
        "theta_h1sq_se",
        "chi_l2sq",
        "chi_l2sq_se",
        "chi_h1sq",
        "chi_h1sq_se",
        "u_l2sq",
        "u_l2sq_se",
    ]);
    for r in &rows {
        let mut fields = vec![r.step.to_string(), num(r.t)];
        for e in [r.theta_l2, r.theta_h1, r.chi_l2, r.chi_h1, r.u_l2] {
            fields.push(num(e.mean));
            fields.push(num(e.std_error));
        }
        t.row(fields);
    }
    let last = rows.last().expect("at least the initial row");
    let mut out = Outcome {
        files: vec![("moments.csv", t.finish())],
        message: format!(
            "{} paths: E|theta(T)|^2 = {:e} +- {:e}",
            setup.paths, last.theta_l2.mean, last.theta_l2.std_error
        ),
        ..Outcome::default()
    };
    out.details.insert("paths".into(), json!(setup.paths));
    Ok(out)
}

fn levels(setup: &Setup, minimum: usize, what: &str) -> Result<Vec<usize>> {
    let levels = setup
        .levels
        .clone()
        .with_context(|| format!("`{what}` needs time.levels, time.dt_list or --dt-list"))?;
    if levels.len() < minimum {
        bail!("`{what}` needs at least {minimum} time levels, got {}", levels.len());
    }
    Ok(levels)
}

pub fn converge(setup: &Setup) -> Result<Outcome> {
    if setup.multiplicative.is_some() {
        bail!("`converge` runs additive noise only");
    }
    let levels = levels(setup, 3, "converge")?;
    let p = &setup.problem;
    let grid_diff = grid_difference_rates(p, &levels, setup.paths)?;
    let selfc = self_convergence(p, &levels, setup.paths)?;
    let energy = energy_estimate_check(p, &levels, setup.paths)?;

    let mut t = Table::new(&["study", "field", "dt", "error", "std_error", "slope"]);
    let studies = [
        ("grid_difference", "theta", &grid_diff.theta),
        ("grid_difference", "chi", &grid_diff.chi),
        ("self_convergence", "theta", &selfc.theta),
        ("self_convergence", "chi", &selfc.chi),
    ];
    for (study, field, r) in studies {
        for i in 0..r.dts.len() {
            t.row([
                study.to_owned(),
                field.to_owned(),
                num(r.dts[i]),
                num(r.errors[i]),
                num(r.std_errors[i]),
                opt(r.slope),
            ]);
        }
    }
    let mut e = Table::new(&["steps", "dt", "statistic", "std_error"]);
    for l in &energy.levels {
        e.row([l.steps.to_string(), num(l.dt), num(l.statistic.mean), num(l.statistic.std_error)]);
    }

    let threshold = setup.checks.slope_threshold;
    let slope = |s: Option<f64>| s.unwrap_or(f64::NAN);
    let mut out = Outcome {
        files: vec![("rates.csv", t.finish()), ("energy.csv", e.finish())],
        ..Outcome::default()
    };
    out.checks.push(Check::at_least("grid_difference_chi_slope", slope(grid_diff.chi.slope), threshold));
    out.checks.push(Check::at_least("self_convergence_theta_slope", slope(selfc.theta.slope), threshold));
    out.checks.push(Check::at_least("self_convergence_chi_slope", slope(selfc.chi.slope), threshold));
    out.checks.push(Check {
        check_name: "energy_bounded".into(),
        pass: energy.pass,
        statistic: energy.max_relative_change,
        threshold: setup.checks.energy_growth,
    });
    out.details.insert("grid_difference_theta_slope".into(), json!(grid_diff.theta.slope));
    out.message = format!(
        "slopes: grid-difference chi {}, self-convergence theta {} chi {}; energy change {:.3}",
        opt(grid_diff.chi.slope),
        opt(selfc.theta.slope),
        opt(selfc.chi.slope),
        energy.max_relative_change
    );
    Ok(out)
}

pub fn stability(setup: &Setup) -> Result<Outcome> {
    let h_hat = setup
        .h_hat
        .as_ref()
        .context("`stability` needs noise.h_hat in an additive configuration")?;
    let report = stability_check(&setup.problem, h_hat, setup.steps, setup.paths)?;
    let mut t = Table::new(&["step", "t", "lhs", "lhs_se", "rhs", "ratio", "pass"]);
    for r in &report.rows {
        t.row([
            r.step.to_string(),
            num(r.t),
            num(r.lhs.mean),
            num(r.lhs.std_error),
            num(r.rhs),
            num(r.ratio),
            r.pass.to_string(),
        ]);
    }
    // The tightest row sets the reported threshold.
    let worst = report
        .rows
        .iter()
        .filter(|r| r.rhs > 0.0)
        .max_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let threshold = worst.map_or(1.0, |r| 1.0 + 4.0 * r.lhs.std_error / r.rhs);
    let mut out = Outcome {
        files: vec![("stability.csv", t.finish())],
        message: format!("C_T = {}, max LHS/RHS = {:e}", report.c_t, report.max_ratio),
        ..Outcome::default()
    };
    out.checks.push(Check {
        check_name: "continuous_dependence".into(),
        pass: report.pass,
        statistic: report.max_ratio,
        threshold,
    });
    out.details.insert("stability_constant".into(), json!(report.c_t));
    Ok(out)
}

pub fn contraction(setup: &Setup) -> Result<Outcome> {
    if setup.multiplicative.is_some() {
        bail!("`contraction` runs additive noise only");
    }
    let levels = setup.levels.clone().unwrap_or_else(|| vec![setup.steps]);
    let rows = contraction_survey(&setup.problem, &levels, setup.paths)?;
    let mut t = Table::new(&[
        "steps",
        "dt",
        "bound",
        "max_factor",
        "mean_factor",
        "max_inner_iterations",
        "max_conservation_defect",
        "max_balance_defect",
        "pass",
    ]);
    let mut out = Outcome::default();
    for r in &rows {
        t.row([
            r.steps.to_string(),
            num(r.dt),
            num(r.bound),
            num(r.max_factor),
            num(r.mean_factor),
            r.max_inner_iterations.to_string(),
            num(r.max_conservation_defect),
            num(r.max_balance_defect),
            r.pass.to_string(),
        ]);
        out.checks.push(Check::at_most(
            format!("inner_contraction_dt_{}", num(r.dt)),
            r.max_factor,
            r.bound + 1e-6,
        ));
    }
    let max_of = |f: fn(&barenblatt_core::diagnostics::ContractionRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    out.checks.push(Check::at_most(
        "conservation_defect",
        max_of(|r| r.max_conservation_defect),
        DEFECT_TOLERANCE,
    ));
    out.checks.push(Check::at_most("balance_defect", max_of(|r| r.max_balance_defect), DEFECT_TOLERANCE));
    out.files.push(("contraction.csv", t.finish()));
    out.message = format!("{} levels, {} paths each", rows.len(), setup.paths);
    Ok(out)
}

pub fn picard(setup: &Setup) -> Result<Outcome> {
    let m = setup
        .multiplicative
        .as_ref()
        .context("`picard` needs a multiplicative noise section")?;
    let p = &setup.problem;
    let grid = p.grid(setup.steps)?;
    let stepper = p.stepper(&grid)?;
    let solver = PicardSolver::new(&stepper, &m.map, m.picard)?;
    let paths: Vec<_> = (0..setup.paths as u64).map(|id| p.path(&grid, id)).collect();
    let (trajs, report) = solver.solve_ensemble(&p.theta0, &p.chi0, &paths)?;
    let finals: Vec<f64> = trajs
        .iter()
        .map(|t| p.ops.l2_norm(&t.final_state().chi).map(|v| v * v))
        .collect::<Result<_, _>>()?;
    let chi_t = Estimate::from_samples(&finals);

    let mut out = Outcome {
        files: vec![("picard.csv", picard_csv(&report))],
        checks: picard_checks(&report, m.picard.tolerance, setup.checks.ratio_slack),
        details: picard_details(&report),
        ..Outcome::default()
    };
    out.details.insert("chi_final_l2sq_mean".into(), json!(chi_t.mean));
    out.details.insert("chi_final_l2sq_se".into(), json!(chi_t.std_error));
    out.timings.insert("picard_iteration_seconds".into(), json!(report.wall_times));
    out.message = format!(
        "Picard converged in {} sweeps over {} paths (modulus {})",
        report.iterations(),
        setup.paths,
        report.modulus
    );
    Ok(out)
}

pub fn constants(c_alpha: f64, cbar_alpha: f64, horizon: f64) -> Result<Outcome> {
    let k = compute_stability_constant(c_alpha, cbar_alpha, horizon)?;
    let mut out = Outcome::default();
    for (key, v) in [
        ("C_alpha", k.c_alpha),
        ("Cbar_alpha", k.cbar_alpha),
        ("T", k.horizon),
        ("Chat_alpha", k.c_hat),
        ("C_alpha_T", k.c_t),
    ] {
        out.details.insert(key.into(), json!(v));
    }
    out.message = format!(
        "C_alpha = {}\nCbar_alpha = {}\nT = {}\nChat_alpha = {}\nC_alpha_T = {}",
        num(k.c_alpha),
        num(k.cbar_alpha),
        num(k.horizon),
        num(k.c_hat),
        num(k.c_t)
    );
    Ok(out)
}
