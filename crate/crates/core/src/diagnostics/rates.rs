use super::{mc_map, Estimate, Problem};
use crate::{Error, Real, Result};

/// Errors per time level with a least-squares log-log slope.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `None` when fewer than two levels are available or some error is zero.
    pub slope: Option<f64>,
}

impl RateReport {
    /// Builds the report from estimates of squared errors.
    pub fn from_squared(dts: Vec<f64>, squared: &[Estimate]) -> Self {
        let roots: Vec<Estimate> = squared.iter().map(|e| e.sqrt()).collect();
        let errors: Vec<f64> = roots.iter().map(|e| e.mean).collect();
        let std_errors = roots.iter().map(|e| e.std_error).collect();
        let slope = fit_slope(&dts, &errors);
        Self {
            dts,
            errors,
            std_errors,
            slope,
        }
    }
}

/// Least-squares slope of `log(error)` against `log(dt)`.
pub fn fit_slope(dts: &[f64], errors: &[f64]) -> Option<f64> {
    if dts.len() != errors.len() || dts.len() < 2 || errors.iter().any(|&e| !(e > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDifferenceReport {
    pub theta: RateReport,
    pub chi: RateReport,
}

/// Distance between the piecewise linear and the piecewise constant time
/// interpolants of the discrete solution,
///
/// ```text
/// θ:  E[ Σ_k dt/3 ‖θ_{k+1} - θ_k‖² ]^{1/2}
/// χ:  E[ Σ_k dt/3 (‖χ_{k+1} - χ_k‖² + |χ_{k+1} - χ_k|²_{H¹}) ]^{1/2}
/// ```
///
/// for each level, on paths coupled through the finest level.
pub fn grid_difference_rates<S: Real>(problem: &Problem<S>, steps: &[usize], paths: usize) -> Result<GridDifferenceReport> {
    if steps.len() < 3 {
        return Err(Error::invalid("grid-difference rates need at least 3 time levels"));
    }
    let levels = problem.levels(steps)?;
    let ops = &problem.ops;
    let rows = mc_map(paths, |id| {
        let trajs = problem.run_coupled(&levels, id)?;
        let mut row = Vec::with_capacity(2 * trajs.len());
        for (traj, level) in trajs.iter().zip(&levels) {
            let w = level.grid.dt().as_f64() / 3.0;
            let (mut th, mut ch) = (0.0, 0.0);
            for pair in traj.states.windows(2) {
                let d: Vec<S> = pair[1].theta.iter().zip(&pair[0].theta).map(|(&a, &b)| a - b).collect();
                th += w * ops.l2_sq(&d).as_f64();
                ch += w * ops.h1_full_sq_diff(&pair[1].chi, &pair[0].chi).as_f64();
            }
            row.push(th);
            row.push(ch);
        }
        Ok(row)
    })?;
    let est = Estimate::columnwise(&rows);
    let dts: Vec<f64> = levels.iter().map(|l| l.grid.dt().as_f64()).collect();
    let theta: Vec<Estimate> = est.iter().step_by(2).copied().collect();
    let chi: Vec<Estimate> = est.iter().skip(1).step_by(2).copied().collect();
    Ok(GridDifferenceReport {
        theta: RateReport::from_squared(dts.clone(), &theta),
        chi: RateReport::from_squared(dts, &chi),
    })
}

/// Strong differences at `T` between consecutive levels,
/// `E‖θ^{dt}(T) - θ^{dt'}(T)‖²` and the same for `χ`, reported against the
/// coarser `dt`.
pub fn self_convergence<S: Real>(problem: &Problem<S>, steps: &[usize], paths: usize) -> Result<GridDifferenceReport> {
    if steps.len() < 2 {
        return Err(Error::invalid("self-convergence needs at least 2 time levels"));
    }
    let levels = problem.levels(steps)?;
    let ops = &problem.ops;
    let rows = mc_map(paths, |id| {
        let trajs = problem.run_coupled(&levels, id)?;
        let mut row = Vec::with_capacity(2 * (trajs.len() - 1));
        for pair in trajs.windows(2) {
            let (a, b) = (pair[0].final_state(), pair[1].final_state());
            let dth: Vec<S> = a.theta.iter().zip(&b.theta).map(|(&x, &y)| x - y).collect();
            let dch: Vec<S> = a.chi.iter().zip(&b.chi).map(|(&x, &y)| x - y).collect();
            row.push(ops.l2_sq(&dth).as_f64());
            row.push(ops.l2_sq(&dch).as_f64());
        }
        Ok(row)
    })?;
    let est = Estimate::columnwise(&rows);
    let dts: Vec<f64> = levels[..levels.len() - 1].iter().map(|l| l.grid.dt().as_f64()).collect();
    let theta: Vec<Estimate> = est.iter().step_by(2).copied().collect();
    let chi: Vec<Estimate> = est.iter().skip(1).step_by(2).copied().collect();
    Ok(GridDifferenceReport {
        theta: RateReport::from_squared(dts.clone(), &theta),
        chi: RateReport::from_squared(dts, &chi),
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::problem;
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let dts = [0.1, 0.05, 0.025];
        let errs: Vec<f64> = dts.iter().map(|d: &f64| 3.0 * d.powf(0.5)).collect();
        assert!((fit_slope(&dts, &errs).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(fit_slope(&dts, &[1.0, 0.0, 1.0]), None);
        assert_eq!(fit_slope(&[0.1], &[1.0]), None);
    }

    #[test]
    fn zero_data_gives_undefined_slope() {
        let mut p = problem("0", 8);
        p.theta0 = p.ops.constant(0.0);
        p.chi0 = p.ops.constant(0.0);
        let r = grid_difference_rates(&p, &[4, 8, 16], 4).unwrap();
        assert!(r.theta.errors.iter().chain(&r.chi.errors).all(|&e| e == 0.0));
        assert_eq!(r.chi.slope, None);
    }

    #[test]
    fn deterministic_rate_is_first_order() {
        let p = problem("0", 16);
        let r = grid_difference_rates(&p, &[16, 32, 64, 128], 2).unwrap();
        let s = r.theta.slope.unwrap();
        assert!((s - 1.0).abs() < 0.1, "slope {s}");
        let s = r.chi.slope.unwrap();
        assert!((s - 1.0).abs() < 0.1, "slope {s}");
    }

    #[test]
    fn noisy_chi_rate_at_least_half() {
        let p = problem("cos(pi*x)*(1+t)", 16);
        let r = grid_difference_rates(&p, &[16, 32, 64, 128], 32).unwrap();
        assert!(r.chi.slope.unwrap() >= 0.4);
    }

    #[test]
    fn self_convergence_identity_and_rate() {
        let p = problem("cos(pi*x)", 8);
        let levels = p.levels(&[16]).unwrap();
        let a = p.run_coupled(&levels, 3).unwrap();
        let b = p.run_coupled(&levels, 3).unwrap();
        assert_eq!(a[0].final_state(), b[0].final_state());
        assert!(self_convergence(&p, &[16], 2).is_err());

        let p = problem("0", 8);
        let r = self_convergence(&p, &[16, 32, 64, 128], 2).unwrap();
        assert!((r.theta.slope.unwrap() - 1.0).abs() < 0.15);
    }
}
