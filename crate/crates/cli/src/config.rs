//! Run configuration: a TOML file with the sections `mesh`, `time`,
//! `initial`, `nonlinearity`, `noise`, `picard`, `montecarlo`, `solver`,
//! `checks` and `output`. Field expressions are quoted strings in the
//! expression grammar of `barenblatt_core::Expr`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use barenblatt_core::diagnostics::Problem;
use barenblatt_core::multiplicative::MultiplicativeMap;
use barenblatt_core::stepper::check_step_size;
use barenblatt_core::{
    compute_stability_constant, Alpha, Expr, MeshSpec, NoiseMap, Operators, PicardConfig, StepperConfig,
};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshSection,
    pub time: TimeSection,
    #[serde(default)]
    pub initial: InitialSection,
    #[serde(default)]
    pub nonlinearity: NonlinearitySection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub montecarlo: MonteCarloSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    /// Cells per axis: `[n]` for an interval, `[nx, ny]` for a rectangle.
    pub cells: Vec<usize>,
    pub lengths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    #[serde(default = "one")]
    pub horizon: f64,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    /// Step counts of the refinement levels, coarse to fine.
    pub levels: Option<Vec<usize>>,
    /// Alternative to `levels`, given as step sizes.
    pub dt_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default = "zero_expr")]
    pub theta: String,
    #[serde(default = "zero_expr")]
    pub chi: String,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            theta: zero_expr(),
            chi: zero_expr(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NonlinearitySection {
    Linear {
        #[serde(default = "one")]
        slope: f64,
    },
    Saturating {
        gain: f64,
    },
    Ramp {
        knee: f64,
        inner: f64,
        outer: f64,
    },
}

impl Default for NonlinearitySection {
    fn default() -> Self {
        Self::Linear { slope: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Affine,
    Tanh,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseSection {
    Additive {
        #[serde(default = "zero_expr")]
        h: String,
        /// Second integrand for the continuous-dependence check.
        h_hat: Option<String>,
    },
    Multiplicative {
        #[serde(default = "affine")]
        map: MapKind,
        scale: f64,
        #[serde(default = "zero_expr")]
        offset: String,
    },
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self::Additive {
            h: zero_expr(),
            h_hat: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardSection {
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default = "picard_tol")]
    pub tolerance: f64,
    #[serde(default = "picard_iters")]
    pub max_iterations: usize,
    #[serde(default)]
    pub override_condition: bool,
}

impl Default for PicardSection {
    fn default() -> Self {
        Self {
            weight: 1.0,
            tolerance: picard_tol(),
            max_iterations: picard_iters(),
            override_condition: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Path simulated by `solve`.
    #[serde(default)]
    pub path_id: u64,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        Self {
            paths: default_paths(),
            seed: 0,
            path_id: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "inner_tol")]
    pub tolerance: f64,
    #[serde(default = "max_inner")]
    pub max_inner: usize,
    #[serde(default = "newton_tol")]
    pub newton_tolerance: f64,
    #[serde(default = "newton_iters")]
    pub newton_max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tolerance: inner_tol(),
            max_inner: max_inner(),
            newton_tolerance: newton_tol(),
            newton_max_iter: newton_iters(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksSection {
    /// Minimum fitted slope of the χ grid difference.
    #[serde(default = "slope_threshold")]
    pub slope_threshold: f64,
    /// Allowed relative growth of the energy statistic per halving.
    #[serde(default = "energy_growth")]
    pub energy_growth: f64,
    /// Multiplicative slack on the Picard modulus.
    #[serde(default = "ratio_slack")]
    pub ratio_slack: f64,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            slope_threshold: slope_threshold(),
            energy_growth: energy_growth(),
            ratio_slack: ratio_slack(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: out_dir() }
    }
}

fn one() -> f64 {
    1.0
}
fn zero_expr() -> String {
    "0".to_owned()
}
fn affine() -> MapKind {
    MapKind::Affine
}
fn picard_tol() -> f64 {
    1.0e-8
}
fn picard_iters() -> usize {
    15
}
fn default_paths() -> usize {
    64
}
fn inner_tol() -> f64 {
    1.0e-11
}
fn max_inner() -> usize {
    200
}
fn newton_tol() -> f64 {
    1.0e-12
}
fn newton_iters() -> usize {
    50
}
fn slope_threshold() -> f64 {
    0.4
}
fn energy_growth() -> f64 {
    0.25
}
fn ratio_slack() -> f64 {
    0.1
}
fn out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub dt_list: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub override_picard_condition: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedSource {
    Flag,
    Environment,
    Config,
}

impl SeedSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SeedSource::Flag => "flag",
            SeedSource::Environment => "env:SOLVER_SEED",
            SeedSource::Config => "config",
        }
    }
}

/// Multiplicative part of a validated configuration.
#[derive(Debug, Clone)]
pub struct Multiplicative {
    pub map: NoiseMap,
    pub picard: PicardConfig<f64>,
}

/// Fully validated run description.
#[derive(Debug, Clone)]
pub struct Setup {
    pub problem: Problem<f64>,
    pub steps: usize,
    pub levels: Option<Vec<usize>>,
    pub paths: usize,
    pub path_id: u64,
    pub seed_source: SeedSource,
    pub h_hat: Option<Expr>,
    pub multiplicative: Option<Multiplicative>,
    pub checks: ChecksSection,
    pub out_dir: PathBuf,
}

/// Reads and parses a configuration file.
pub fn parse_file(path: &Path) -> Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    let config = parse_str(&text).with_context(|| format!("in {}", path.display()))?;
    Ok((config, text))
}

pub fn parse_str(text: &str) -> Result<RunConfig> {
    Ok(toml::from_str(text)?)
}

/// Configuration rejected by validation; lists every broken condition.
#[derive(Debug)]
pub struct Violations(pub Vec<String>);

impl std::fmt::Display for Violations {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for v in &self.0 {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Violations {}

fn steps_for(horizon: f64, dt: f64) -> Option<usize> {
    if !(dt > 0.0) || !(horizon > 0.0) {
        return None;
    }
    let n = (horizon / dt).round();
    (n >= 1.0 && ((horizon / n) - dt).abs() <= 1e-9 * dt).then_some(n as usize)
}

fn parse_expr(what: &str, source: &str, dimension: usize, errors: &mut Vec<String>) -> Option<Expr> {
    match Expr::parse(source).and_then(|e| e.check_dimension(dimension).map(|_| e)) {
        Ok(e) => Some(e),
        Err(err) => {
            errors.push(format!("{what}: {err}"));
            None
        }
    }
}

impl RunConfig {
    /// Checks every condition and builds the solver inputs. `env_seed` is the
    /// value of `SOLVER_SEED`, if set.
    pub fn validate(&self, overrides: &Overrides, env_seed: Option<&str>) -> Result<Setup, Violations> {
        let mut errors = Vec::new();

        let dimension = self.mesh.cells.len();
        let lengths = self.mesh.lengths.clone().unwrap_or_else(|| vec![1.0; dimension]);
        let spec = MeshSpec {
            cells: self.mesh.cells.clone(),
            lengths,
        };
        let ops = match Operators::build(&spec) {
            Ok(ops) => Some(ops),
            Err(e) => {
                errors.push(format!("mesh: {e}"));
                None
            }
        };

        let horizon = self.time.horizon;
        if !(horizon > 0.0 && horizon.is_finite()) {
            errors.push(format!("time.horizon must be positive, got {horizon}"));
        }
        let steps = match (self.time.steps, self.time.dt) {
            (Some(n), None) if n > 0 => Some(n),
            (Some(_), None) => {
                errors.push("time.steps must be positive".to_owned());
                None
            }
            (None, Some(dt)) => {
                let n = steps_for(horizon, dt);
                if n.is_none() {
                    errors.push(format!("time.dt = {dt} does not divide the horizon {horizon}"));
                }
                n
            }
            (Some(_), Some(_)) => {
                errors.push("give either time.steps or time.dt, not both".to_owned());
                None
            }
            (None, None) => {
                errors.push("time.steps or time.dt is required".to_owned());
                None
            }
        };

        let dt_list = overrides.dt_list.as_ref().or(self.time.dt_list.as_ref());
        let levels = match (dt_list, &self.time.levels) {
            (Some(list), _) => {
                let mut out = Vec::new();
                for &dt in list {
                    match steps_for(horizon, dt) {
                        Some(n) => out.push(n),
                        None => errors.push(format!("dt = {dt} in the dt list does not divide the horizon {horizon}")),
                    }
                }
                Some(out)
            }
            (None, Some(levels)) => {
                if levels.contains(&0) {
                    errors.push("time.levels entries must be positive".to_owned());
                }
                Some(levels.clone())
            }
            (None, None) => None,
        };

        let nl = match &self.nonlinearity {
            NonlinearitySection::Linear { slope } => Alpha::linear(*slope),
            NonlinearitySection::Saturating { gain } => Alpha::saturating(*gain),
            NonlinearitySection::Ramp { knee, inner, outer } => Alpha::ramp(*knee, *inner, *outer),
        };
        let nl = match nl {
            Ok(nl) => Some(nl),
            Err(e) => {
                errors.push(format!("nonlinearity: {e}"));
                None
            }
        };

        if let Some(nl) = &nl {
            let all_steps = steps.into_iter().chain(levels.iter().flatten().copied());
            for n in all_steps.filter(|&n| n > 0) {
                let dt = horizon / n as f64;
                if let Err(e) = check_step_size(dt, nl.coercivity()) {
                    let msg = match e {
                        barenblatt_core::Error::ContractionViolated { .. } => format!(
                            "inner contraction condition dt < 1 + Cbar_alpha violated: dt = {dt}, Cbar_alpha = {}",
                            nl.coercivity()
                        ),
                        _ => format!("step solvability condition dt < 1 violated: dt = {dt}"),
                    };
                    if !errors.contains(&msg) {
                        errors.push(msg);
                    }
                }
            }
        }

        let theta0 = parse_expr("initial.theta", &self.initial.theta, dimension, &mut errors);
        let chi0 = parse_expr("initial.chi", &self.initial.chi, dimension, &mut errors);
        for (what, e) in [("initial.theta", &theta0), ("initial.chi", &chi0)] {
            if e.as_ref().is_some_and(Expr::depends_on_time) {
                errors.push(format!("{what} may not depend on t"));
            }
        }

        let (noise, h_hat, mult_src) = match &self.noise {
            NoiseSection::Additive { h, h_hat } => (
                parse_expr("noise.h", h, dimension, &mut errors),
                h_hat.as_ref().and_then(|s| parse_expr("noise.h_hat", s, dimension, &mut errors)),
                None,
            ),
            NoiseSection::Multiplicative { map, scale, offset } => {
                let offset = parse_expr("noise.offset", offset, dimension, &mut errors);
                if offset.as_ref().is_some_and(Expr::depends_on_time) {
                    errors.push("noise.offset may not depend on t".to_owned());
                }
                (Some(Expr::constant(0.0)), None, offset.map(|o| (*map, *scale, o)))
            }
        };

        let paths = overrides.paths.unwrap_or(self.montecarlo.paths);
        if paths < 2 {
            errors.push(format!("montecarlo.paths must be at least 2, got {paths}"));
        }

        let (seed, seed_source) = match (overrides.seed, env_seed) {
            (Some(s), _) => (s, SeedSource::Flag),
            (None, Some(v)) => match v.trim().parse::<u64>() {
                Ok(s) => (s, SeedSource::Environment),
                Err(_) => {
                    errors.push(format!("SOLVER_SEED must be an unsigned integer, got `{v}`"));
                    (0, SeedSource::Environment)
                }
            },
            (None, None) => (self.montecarlo.seed, SeedSource::Config),
        };

        let solver = &self.solver;
        if !(solver.tolerance >= 0.0) || solver.max_inner == 0 || !(solver.newton_tolerance > 0.0) || solver.newton_max_iter == 0 {
            errors.push("solver tolerances must be non-negative and iteration limits positive".to_owned());
        }
        let stepper = StepperConfig {
            tolerance: solver.tolerance,
            max_inner: solver.max_inner,
            newton_tolerance: solver.newton_tolerance,
            newton_max_iter: solver.newton_max_iter,
            ..StepperConfig::default()
        };

        let mut multiplicative = None;
        if let (Some((kind, scale, offset_expr)), Some(ops), Some(nl)) = (&mult_src, &ops, &nl) {
            let offset = ops.interpolate(|x| offset_expr.eval(0.0, x));
            let map = match kind {
                MapKind::Affine => MultiplicativeMap::affine(*scale, offset),
                MapKind::Tanh => MultiplicativeMap::tanh(*scale, offset),
            };
            let picard = PicardConfig {
                weight: self.picard.weight,
                tolerance: self.picard.tolerance,
                max_iterations: self.picard.max_iterations,
                override_condition: self.picard.override_condition || overrides.override_picard_condition,
            };
            match (map, compute_stability_constant(nl.lipschitz(), nl.coercivity(), horizon)) {
                (Ok(map), Ok(k)) => match picard.validate(k.c_t, map.lipschitz()) {
                    Ok(()) => {
                        multiplicative = Some(Multiplicative { map, picard })
                    }
                    Err(_) if picard.weight > 0.0 && picard.max_iterations > 0 => errors.push(format!(
                        "weighted-norm contraction condition a > 4 C_T C_H^2 violated: a = {}, 4 C_T C_H^2 = {}",
                        picard.weight,
                        4.0 * k.c_t * map.lipschitz().powi(2)
                    )),
                    Err(e) => errors.push(format!("picard: {e}")),
                },
                (Err(e), _) | (_, Err(e)) => errors.push(format!("noise map: {e}")),
            }
        }

        if !errors.is_empty() {
            return Err(Violations(errors));
        }
        let ops = ops.expect("validated");
        let (theta0, chi0) = (theta0.expect("validated"), chi0.expect("validated"));
        let problem = Problem {
            theta0: ops.interpolate(|x| theta0.eval(0.0, x)),
            chi0: ops.interpolate(|x| chi0.eval(0.0, x)),
            ops,
            horizon,
            noise: noise.expect("validated"),
            nonlinearity: nl.expect("validated"),
            stepper,
            seed,
        };
        Ok(Setup {
            problem,
            steps: steps.expect("validated"),
            levels,
            paths,
            path_id: self.montecarlo.path_id,
            seed_source,
            h_hat,
            multiplicative,
            checks: self.checks.clone(),
            out_dir: overrides.out.clone().unwrap_or_else(|| self.output.dir.clone()),
        })
    }
}
