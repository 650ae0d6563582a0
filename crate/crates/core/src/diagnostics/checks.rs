use super::{compute_stability_constant, mc_map, Estimate, Problem};
use crate::noise::{AdditiveIntegrand, Expr};
use crate::{Error, Real, Result};

/// One monitored time of the continuous-dependence check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRow {
    pub step: usize,
    pub t: f64,
    pub lhs: Estimate,
    pub rhs: f64,
    /// `lhs.mean / rhs`, `0` where `rhs = 0`.
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub c_t: f64,
    pub rows: Vec<StabilityRow>,
    pub max_ratio: f64,
    pub pass: bool,
}

/// Compares two solutions driven by the same paths but with integrands `h`
/// (the problem's noise) and `ĥ`:
///
/// ```text
/// LHS(t_n) = E‖Δθ_n‖² + E|Δθ_n|²_{H¹} + ¼ E‖Δχ_n‖² + ¼ E|Δχ_n|²_{H¹}
/// RHS(t_n) = C_T Σ_{k=1}^{n} dt (‖h_k - ĥ_k‖² + |h_k - ĥ_k|²_{H¹})
/// ```
///
/// A row passes when `LHS <= RHS + 4 se`.
pub fn stability_check<S: Real>(problem: &Problem<S>, h_hat: &Expr, steps: usize, paths: usize) -> Result<StabilityReport> {
    let grid = problem.grid(steps)?;
    let stepper = problem.stepper(&grid)?;
    let ops = &problem.ops;
    let h = problem.integrand(&grid)?;
    let h_hat = AdditiveIntegrand::discretize(h_hat, &grid, ops)?;
    let nl = &problem.nonlinearity;
    let c_t = compute_stability_constant(nl.lipschitz(), nl.coercivity(), problem.horizon)?.c_t.as_f64();

    let dt = grid.dt().as_f64();
    let mut rhs = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    rhs.push(0.0);
    for n in 1..=steps {
        acc += dt * ops.h1_full_sq_diff(h.value(n), h_hat.value(n)).as_f64();
        rhs.push(c_t * acc);
    }

    let quarter = S::lit(0.25);
    let samples = mc_map(paths, |id| {
        let path = problem.path(&grid, id);
        let a = stepper.run_additive(&problem.theta0, &problem.chi0, &h, &path)?;
        let b = stepper.run_additive(&problem.theta0, &problem.chi0, &h_hat, &path)?;
        Ok(a.states
            .iter()
            .zip(&b.states)
            .map(|(x, y)| {
                let th = ops.h1_full_sq_diff(&x.theta, &y.theta);
                let ch = ops.h1_full_sq_diff(&x.chi, &y.chi);
                (th + quarter * ch).as_f64()
            })
            .collect::<Vec<f64>>())
    })?;
    let lhs = Estimate::columnwise(&samples);

    let rows: Vec<StabilityRow> = lhs
        .into_iter()
        .enumerate()
        .map(|(n, lhs)| {
            let r = rhs[n];
            let margin = 4.0 * lhs.std_error;
            StabilityRow {
                step: n,
                t: grid.node(n).as_f64(),
                lhs,
                rhs: r,
                ratio: if r > 0.0 { lhs.mean / r } else { 0.0 },
                pass: lhs.mean <= r + margin,
            }
        })
        .collect();
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.pass);
    Ok(StabilityReport {
        c_t,
        rows,
        max_ratio,
        pass,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLevel {
    pub steps: usize,
    pub dt: f64,
    pub statistic: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub levels: Vec<EnergyLevel>,
    /// Largest `|S_fine - S_coarse| / S_coarse` over consecutive levels.
    pub max_relative_change: f64,
    pub pass: bool,
}

/// Discrete energy aggregate at the final time,
///
/// ```text
/// E‖θ_N‖² + Σ E‖θ_{k+1} - θ_k‖² + Σ dt E|θ_{k+1}|²_{H¹} + Σ dt E‖u_{k+1}‖²
///   + E|χ_N|²_{H¹} + ½ Σ E|χ_{k+1} - χ_k|²_{H¹},
/// ```
///
/// per level. Consecutive levels pass when
/// `|S_fine - S_coarse| <= 0.25 S_coarse + 4 sqrt(se_c² + se_f²)`.
pub fn energy_estimate_check<S: Real>(problem: &Problem<S>, steps: &[usize], paths: usize) -> Result<EnergyReport> {
    if steps.len() < 2 {
        return Err(Error::invalid("energy check needs at least 2 time levels"));
    }
    let levels = problem.levels(steps)?;
    let ops = &problem.ops;
    let half = S::lit(0.5);
    let samples = mc_map(paths, |id| {
        let trajs = problem.run_coupled(&levels, id)?;
        Ok(trajs
            .iter()
            .zip(&levels)
            .map(|(traj, level)| {
                let dt = level.grid.dt();
                let last = traj.final_state();
                let mut e = ops.l2_sq(&last.theta) + ops.h1_sq(&last.chi);
                for pair in traj.states.windows(2) {
                    let (a, b) = (&pair[0], &pair[1]);
                    let dth: Vec<S> = b.theta.iter().zip(&a.theta).map(|(&x, &y)| x - y).collect();
                    let dch: Vec<S> = b.chi.iter().zip(&a.chi).map(|(&x, &y)| x - y).collect();
                    let rate: Vec<S> = b.u_field.iter().zip(&a.u_field).map(|(&x, &y)| (x - y) / dt).collect();
                    e = e + ops.l2_sq(&dth) + dt * ops.h1_sq(&b.theta) + dt * ops.l2_sq(&rate) + half * ops.h1_sq(&dch);
                }
                e.as_f64()
            })
            .collect::<Vec<f64>>())
    })?;
    let est = Estimate::columnwise(&samples);
    let levels: Vec<EnergyLevel> = levels
        .iter()
        .zip(steps)
        .zip(est)
        .map(|((l, &n), statistic)| EnergyLevel {
            steps: n,
            dt: l.grid.dt().as_f64(),
            statistic,
        })
        .collect();
    let mut pass = true;
    let mut max_relative_change: f64 = 0.0;
    for w in levels.windows(2) {
        let (c, f) = (w[0].statistic, w[1].statistic);
        let delta = (f.mean - c.mean).abs();
        let margin = 0.25 * c.mean + 4.0 * c.std_error.hypot(f.std_error);
        pass &= delta <= margin;
        if c.mean > 0.0 {
            max_relative_change = max_relative_change.max(delta / c.mean);
        }
    }
    Ok(EnergyReport {
        levels,
        max_relative_change,
        pass,
    })
}

/// Observed inner-iteration contraction at one step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionRow {
    pub steps: usize,
    pub dt: f64,
    pub bound: f64,
    pub max_factor: f64,
    pub mean_factor: f64,
    pub max_inner_iterations: usize,
    pub max_conservation_defect: f64,
    pub max_balance_defect: f64,
    pub pass: bool,
}

/// Runs `paths` trajectories at each step count and records every empirical
/// inner contraction factor against its bound `1/(2(C̄_α~/dt - 1/2))`.
pub fn contraction_survey<S: Real>(problem: &Problem<S>, steps: &[usize], paths: usize) -> Result<Vec<ContractionRow>> {
    steps
        .iter()
        .map(|&n| {
            let grid = problem.grid(n)?;
            let stepper = problem.stepper(&grid)?;
            let h = problem.integrand(&grid)?;
            let per_path = mc_map(paths, |id| {
                let traj = stepper.run_additive(&problem.theta0, &problem.chi0, &h, &problem.path(&grid, id))?;
                let factors: Vec<f64> = traj
                    .reports
                    .iter()
                    .flat_map(|r| r.contraction_factors.iter().map(|q| q.as_f64()))
                    .collect();
                let inner = traj.reports.iter().map(|r| r.inner_iterations).max().unwrap_or(0);
                Ok((
                    factors,
                    inner,
                    traj.max_conservation_defect().as_f64(),
                    traj.max_balance_defect().as_f64(),
                ))
            })?;
            let bound = stepper.contraction_bound().as_f64();
            let all: Vec<f64> = per_path.iter().flat_map(|p| p.0.iter().copied()).collect();
            let max_factor = all.iter().copied().fold(0.0, f64::max);
            let mean_factor = if all.is_empty() { 0.0 } else { all.iter().sum::<f64>() / all.len() as f64 };
            Ok(ContractionRow {
                steps: n,
                dt: grid.dt().as_f64(),
                bound,
                max_factor,
                mean_factor,
                max_inner_iterations: per_path.iter().map(|p| p.1).max().unwrap_or(0),
                max_conservation_defect: per_path.iter().map(|p| p.2).fold(0.0, f64::max),
                max_balance_defect: per_path.iter().map(|p| p.3).fold(0.0, f64::max),
                pass: max_factor <= bound + 1e-6,
            })
        })
        .collect()
}

/// Expected squared norms at each time node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub step: usize,
    pub t: f64,
    pub theta_l2: Estimate,
    pub theta_h1: Estimate,
    pub chi_l2: Estimate,
    pub chi_h1: Estimate,
    pub u_l2: Estimate,
}

/// `E‖θ_n‖²`, `E|θ_n|²_{H¹}`, `E‖χ_n‖²`, `E|χ_n|²_{H¹}`, `E‖U_n‖²` for every `n`.
pub fn moment_profile<S: Real>(problem: &Problem<S>, steps: usize, paths: usize) -> Result<Vec<MomentRow>> {
    if paths < 2 {
        return Err(Error::invalid(format!("Monte Carlo needs at least 2 paths, got {paths}")));
    }
    let grid = problem.grid(steps)?;
    let stepper = problem.stepper(&grid)?;
    let h = problem.integrand(&grid)?;
    let ops = &problem.ops;
    let samples = mc_map(paths, |id| {
        let traj = stepper.run_additive(&problem.theta0, &problem.chi0, &h, &problem.path(&grid, id))?;
        Ok(traj
            .states
            .iter()
            .flat_map(|s| {
                [
                    ops.l2_sq(&s.theta),
                    ops.h1_sq(&s.theta),
                    ops.l2_sq(&s.chi),
                    ops.h1_sq(&s.chi),
                    ops.l2_sq(&s.u_field),
                ]
                .map(|v| v.as_f64())
            })
            .collect::<Vec<f64>>())
    })?;
    let est = Estimate::columnwise(&samples);
    Ok(est
        .chunks(5)
        .enumerate()
        .map(|(n, c)| MomentRow {
            step: n,
            t: grid.node(n).as_f64(),
            theta_l2: c[0],
            theta_h1: c[1],
            chi_l2: c[2],
            chi_h1: c[3],
            u_l2: c[4],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::tests::problem;
    use super::*;
    use crate::nonlinearity::Nonlinearity;

    #[test]
    fn identical_integrands_give_zero_lhs() {
        let p = problem("cos(pi*x)*(1+t)", 8);
        let r = stability_check(&p, &Expr::parse("cos(pi*x)*(1+t)").unwrap(), 16, 4).unwrap();
        assert!(r.rows.iter().all(|row| row.lhs.mean == 0.0 && row.rhs == 0.0));
        assert!(r.pass);
    }

    #[test]
    fn continuous_dependence_holds() {
        let p = problem("cos(pi*x)*(1+t)", 16);
        let r = stability_check(&p, &Expr::parse("cos(pi*x)").unwrap(), 32, 16).unwrap();
        assert!(r.pass);
        assert!(r.max_ratio <= 1.0);
        assert!(r.max_ratio > 0.0);
    }

    #[test]
    fn quadratic_homogeneity_for_linear_alpha() {
        let mut p = problem("cos(pi*x)*(1+t)", 16);
        p.nonlinearity = Nonlinearity::linear(0.5).unwrap();
        let one = stability_check(&p, &Expr::parse("cos(pi*x)").unwrap(), 32, 8).unwrap();
        // ĥ = h - 2 (h - cos(πx))
        let two = stability_check(&p, &Expr::parse("cos(pi*x)*(1-t)").unwrap(), 32, 8).unwrap();
        let n = one.rows.len() - 1;
        let q = two.rows[n].lhs.mean / one.rows[n].lhs.mean;
        assert!((q - 4.0).abs() < 1e-6, "ratio {q}");
    }

    #[test]
    fn zero_energy_for_zero_data() {
        let mut p = problem("0", 8);
        p.theta0 = p.ops.constant(0.0);
        p.chi0 = p.ops.constant(0.0);
        let r = energy_estimate_check(&p, &[8, 16], 3).unwrap();
        assert!(r.levels.iter().all(|l| l.statistic.mean == 0.0));
        assert!(r.pass);
    }

    #[test]
    fn deterministic_energy_converges() {
        let p = problem("0", 16);
        let r = energy_estimate_check(&p, &[64, 128], 2).unwrap();
        assert!(r.max_relative_change < 0.1);
        assert!(r.pass);
    }

    #[test]
    fn contraction_rows_within_bound() {
        let p = problem("cos(pi*x)*(1+t)", 8);
        let rows = contraction_survey(&p, &[2, 4, 8], 4).unwrap();
        for r in rows {
            assert!(r.pass, "{r:?}");
            assert!(r.max_conservation_defect <= 1e-10);
            assert!(r.max_balance_defect <= 1e-10);
        }
    }

    #[test]
    fn moments_start_at_initial_data() {
        let p = problem("cos(pi*x)", 8);
        let rows = moment_profile(&p, 8, 4).unwrap();
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[0].theta_l2.std_error, 0.0);
        assert!((rows[0].theta_l2.mean - p.ops.l2_sq(&p.theta0)).abs() < 1e-15);
    }
}
