//! Monte Carlo estimators and the empirical checks built on them.
//!
//! Every estimator evaluates paths `0..M` concurrently, buffers the per-path
//! results in path order and reduces them sequentially, so results do not
//! depend on the worker count.

mod checks;
mod constants;
mod rates;

pub use checks::{
    contraction_survey, energy_estimate_check, moment_profile, stability_check, ContractionRow, EnergyLevel,
    EnergyReport, MomentRow, StabilityReport, StabilityRow,
};
pub use constants::{compute_stability_constant, StabilityConstants};
pub use rates::{fit_slope, grid_difference_rates, self_convergence, GridDifferenceReport, RateReport};

use rayon::prelude::*;

use crate::discretization::{SpatialOperators, TimeGrid};
use crate::noise::{AdditiveIntegrand, BrownianPath, Expr};
use crate::nonlinearity::Nonlinearity;
use crate::stepper::{Stepper, StepperConfig, Trajectory};
use crate::{Error, Real, Result};

/// Sample mean with its standard error `s / sqrt(M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                samples: 0,
            };
        }
        if samples.iter().all(|&x| x == samples[0]) {
            return Self {
                mean: samples[0],
                std_error: 0.0,
                samples: n,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_error,
            samples: n,
        }
    }

    /// Estimates for each column of equally long rows.
    pub fn columnwise(rows: &[Vec<f64>]) -> Vec<Self> {
        let width = rows.first().map_or(0, Vec::len);
        (0..width)
            .map(|j| Self::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
            .collect()
    }

    /// `sqrt` of the mean with the first-order propagated standard error.
    pub fn sqrt(self) -> Self {
        let root = self.mean.max(0.0).sqrt();
        let std_error = if root > 0.0 { self.std_error / (2.0 * root) } else { 0.0 };
        Self {
            mean: root,
            std_error,
            samples: self.samples,
        }
    }
}

/// Evaluates `f(path_id)` for `path_id = 0..M` in parallel and returns the
/// results in path order.
pub fn mc_map<T, F>(paths: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..paths as u64).into_par_iter().map(f).collect()
}

/// `E[f]` over `M >= 2` paths.
pub fn mc_expectation<F>(paths: usize, f: F) -> Result<Estimate>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    if paths < 2 {
        return Err(Error::invalid(format!("Monte Carlo needs at least 2 paths, got {paths}")));
    }
    Ok(Estimate::from_samples(&mc_map(paths, f)?))
}

/// Everything needed to simulate one additive-noise configuration at any step
/// count: mesh operators, data, noise expression, nonlinearity, tolerances and
/// the base seed.
#[derive(Clone)]
pub struct Problem<S> {
    pub ops: SpatialOperators<S>,
    pub horizon: S,
    pub theta0: Vec<S>,
    pub chi0: Vec<S>,
    pub noise: Expr,
    pub nonlinearity: Nonlinearity<S>,
    pub stepper: StepperConfig<S>,
    pub seed: u64,
}

impl<S: Real> std::fmt::Debug for Problem<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("nodes", &self.ops.node_count())
            .field("horizon", &self.horizon)
            .field("noise", &self.noise.source())
            .field("nonlinearity", &self.nonlinearity)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Grid and integrand of one refinement level.
#[derive(Debug, Clone)]
pub struct Level<S> {
    pub grid: TimeGrid<S>,
    pub integrand: AdditiveIntegrand<S>,
    /// Fine steps per step of this level.
    pub factor: usize,
}

impl<S: Real> Problem<S> {
    pub fn grid(&self, steps: usize) -> Result<TimeGrid<S>> {
        TimeGrid::new(self.horizon, steps)
    }

    pub fn integrand(&self, grid: &TimeGrid<S>) -> Result<AdditiveIntegrand<S>> {
        AdditiveIntegrand::discretize(&self.noise, grid, &self.ops)
    }

    pub fn path(&self, grid: &TimeGrid<S>, path_id: u64) -> BrownianPath<S> {
        BrownianPath::sample(grid, self.seed, path_id)
    }

    pub fn stepper<'a>(&'a self, grid: &'a TimeGrid<S>) -> Result<Stepper<'a, S>> {
        Stepper::new(grid, &self.ops, &self.nonlinearity, self.stepper)
    }

    pub fn run(&self, grid: &TimeGrid<S>, integrand: &AdditiveIntegrand<S>, path: &BrownianPath<S>) -> Result<Trajectory<S>> {
        self.stepper(grid)?.run_additive(&self.theta0, &self.chi0, integrand, path)
    }

    /// Levels ordered coarse to fine. Step counts must increase strictly and
    /// each must divide the next, so that paths sampled on the finest grid
    /// can be aggregated to every coarser one. Also checks the step-size
    /// restrictions on every level.
    pub fn levels(&self, steps: &[usize]) -> Result<Vec<Level<S>>> {
        let finest = *steps.last().ok_or_else(|| Error::invalid("empty list of time levels"))?;
        for w in steps.windows(2) {
            if w[1] <= w[0] || w[1] % w[0] != 0 {
                return Err(Error::invalid(format!(
                    "time levels must refine by integer factors: {} steps then {} steps",
                    w[0], w[1]
                )));
            }
        }
        steps
            .iter()
            .map(|&n| {
                let grid = self.grid(n)?;
                self.stepper(&grid)?;
                Ok(Level {
                    integrand: self.integrand(&grid)?,
                    grid,
                    factor: finest / n,
                })
            })
            .collect()
    }

    /// Trajectories of one path on every level, driven by increments sampled
    /// on the finest grid.
    pub fn run_coupled(&self, levels: &[Level<S>], path_id: u64) -> Result<Vec<Trajectory<S>>> {
        let finest = levels.last().ok_or_else(|| Error::invalid("empty list of time levels"))?;
        let fine = self.path(&finest.grid, path_id);
        levels
            .iter()
            .map(|level| {
                let path = fine.aggregate(level.factor)?;
                self.run(&level.grid, &level.integrand, &path)
            })
            .collect()
    }
}
