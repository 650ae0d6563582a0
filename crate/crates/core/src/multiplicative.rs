//! State-dependent noise `H(χ) dw` through an outer Picard iteration.
//!
//! Each sweep freezes the integrand at the previous iterate,
//! `h_n = H(χ^{(k)}_n)`, and reruns the additive solver along the same
//! Brownian path. Iterates are compared in the exponentially weighted norm
//!
//! ```text
//! W(v)² = Σ_{n=1}^{N} dt e^{-a t_n} (‖v_n‖² + |v_n|²_{H¹}),
//! ```
//!
//! in which the sweep contracts with modulus `4 C_T C_H² / a`.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::diagnostics::compute_stability_constant;
use crate::discretization::{SpatialOperators, TimeGrid};
use crate::noise::{AdditiveIntegrand, BrownianPath};
use crate::stepper::{Stepper, Trajectory};
use crate::{Error, Real, Result};

type ScalarFn<S> = Arc<dyn Fn(S) -> S + Send + Sync>;

#[derive(Clone)]
enum MapKind<S> {
    Affine { scale: S },
    Pointwise { name: String, psi: ScalarFn<S>, lipschitz: S },
}

/// Noise map `H(χ) = φ(χ) + g₀` acting nodewise, with `φ` either `σ χ` or a
/// smooth scalar function with bounded derivative.
#[derive(Clone)]
pub struct MultiplicativeMap<S> {
    kind: MapKind<S>,
    offset: Vec<S>,
}

impl<S: Real> fmt::Debug for MultiplicativeMap<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiplicativeMap")
            .field("name", &self.name())
            .field("lipschitz", &self.lipschitz())
            .finish()
    }
}

impl<S: Real> MultiplicativeMap<S> {
    /// `H(χ) = σ χ + g₀`.
    pub fn affine(scale: S, offset: Vec<S>) -> Result<Self> {
        if !scale.is_finite() || offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("affine noise map needs finite scale and offset"));
        }
        Ok(Self {
            kind: MapKind::Affine { scale },
            offset,
        })
    }

    /// `H(χ) = ψ(χ) + g₀` with a caller-declared Lipschitz constant `C_H`.
    pub fn pointwise(
        name: impl Into<String>,
        psi: impl Fn(S) -> S + Send + Sync + 'static,
        lipschitz: S,
        offset: Vec<S>,
    ) -> Result<Self> {
        if !(lipschitz >= S::zero()) || !lipschitz.is_finite() {
            return Err(Error::invalid("declared Lipschitz constant of the noise map must be finite and >= 0"));
        }
        Ok(Self {
            kind: MapKind::Pointwise {
                name: name.into(),
                psi: Arc::new(psi),
                lipschitz,
            },
            offset,
        })
    }

    /// `H(χ) = s tanh(χ) + g₀`, `C_H = |s|`.
    pub fn tanh(scale: S, offset: Vec<S>) -> Result<Self> {
        Self::pointwise("tanh", move |x: S| scale * x.tanh(), scale.abs(), offset)
    }

    pub fn name(&self) -> String {
        match &self.kind {
            MapKind::Affine { .. } => "affine".to_owned(),
            MapKind::Pointwise { name, .. } => name.clone(),
        }
    }

    /// `C_H`.
    pub fn lipschitz(&self) -> S {
        match &self.kind {
            MapKind::Affine { scale } => scale.abs(),
            MapKind::Pointwise { lipschitz, .. } => *lipschitz,
        }
    }

    pub fn offset(&self) -> &[S] {
        &self.offset
    }

    pub fn evaluate(&self, chi: &[S]) -> Result<Vec<S>> {
        Error::check_len("noise map input", self.offset.len(), chi.len())?;
        Ok(match &self.kind {
            MapKind::Affine { scale } => chi.iter().zip(&self.offset).map(|(&c, &g)| *scale * c + g).collect(),
            MapKind::Pointwise { psi, .. } => chi.iter().zip(&self.offset).map(|(&c, &g)| psi(c) + g).collect(),
        })
    }
}

/// Nodewise image `H(χ)`.
pub fn evaluate_h<S: Real>(map: &MultiplicativeMap<S>, chi: &[S]) -> Result<Vec<S>> {
    map.evaluate(chi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig<S> {
    /// Exponential weight `a`.
    pub weight: S,
    pub tolerance: S,
    pub max_iterations: usize,
    /// Skip the `a > 4 C_T C_H²` check.
    pub override_condition: bool,
}

impl<S: Real> Default for PicardConfig<S> {
    fn default() -> Self {
        Self {
            weight: S::one(),
            tolerance: S::tol_floor(1.0e-8),
            max_iterations: 15,
            override_condition: false,
        }
    }
}

impl<S: Real> PicardConfig<S> {
    /// `4 C_T C_H² / a`.
    pub fn modulus(&self, c_t: S, c_h: S) -> S {
        S::lit(4.0) * c_t * c_h * c_h / self.weight
    }

    pub fn validate(&self, c_t: S, c_h: S) -> Result<()> {
        if !(self.weight > S::zero()) {
            return Err(Error::invalid("Picard weight a must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("Picard max_iterations must be positive"));
        }
        let threshold = S::lit(4.0) * c_t * c_h * c_h;
        if !self.override_condition && !(self.weight > threshold) {
            return Err(Error::invalid(format!(
                "weighted-norm contraction condition a > 4 C_T C_H^2 violated: a = {}, 4 C_T C_H^2 = {}",
                self.weight, threshold
            )));
        }
        Ok(())
    }
}

/// Per-sweep history of one Picard solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport<S> {
    /// `d_j = W(χ^{(j)} - χ^{(j-1)})`, `j = 1, 2, ...` (ensemble: root mean square over paths).
    pub differences: Vec<S>,
    /// `d_j / d_{j-1}` for `j >= 2`; `None` for `j = 1` or when `d_{j-1} = 0`.
    pub ratios: Vec<Option<S>>,
    pub wall_times: Vec<f64>,
    pub modulus: S,
    pub stability_constant: S,
    pub converged: bool,
}

impl<S: Real> PicardReport<S> {
    pub fn iterations(&self) -> usize {
        self.differences.len()
    }

    /// Largest ratio from sweep `first` on (1-based sweep index).
    pub fn max_ratio_from(&self, first: usize) -> Option<S> {
        self.ratios
            .iter()
            .enumerate()
            .filter(|(j, _)| j + 1 >= first)
            .filter_map(|(_, r)| *r)
            .reduce(S::max)
    }
}

/// `W(v)²` for a sequence of `N + 1` fields `v_0, ..., v_N`.
pub fn weighted_norm_sq<S: Real>(fields: &[Vec<S>], grid: &TimeGrid<S>, ops: &SpatialOperators<S>, weight: S) -> Result<S> {
    Error::check_len("weighted norm fields", grid.steps() + 1, fields.len())?;
    let dt = grid.dt();
    let mut acc = S::zero();
    for (n, v) in fields.iter().enumerate().skip(1) {
        Error::check_len("weighted norm field", ops.node_count(), v.len())?;
        let w = (-weight * grid.node(n)).exp();
        acc = acc + dt * w * (ops.l2_sq(v) + ops.h1_sq(v));
    }
    Ok(acc)
}

/// `W(a - b)²` for two field sequences.
pub fn weighted_difference_sq<S: Real>(
    a: &[Vec<S>],
    b: &[Vec<S>],
    grid: &TimeGrid<S>,
    ops: &SpatialOperators<S>,
    weight: S,
) -> Result<S> {
    Error::check_len("weighted difference", a.len(), b.len())?;
    let diff: Vec<Vec<S>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p - q).collect())
        .collect();
    weighted_norm_sq(&diff, grid, ops, weight)
}

/// Picard solver bound to a stepper and a noise map.
#[derive(Clone)]
pub struct PicardSolver<'a, S> {
    stepper: &'a Stepper<'a, S>,
    grid: &'a TimeGrid<S>,
    ops: &'a SpatialOperators<S>,
    map: &'a MultiplicativeMap<S>,
    config: PicardConfig<S>,
    stability_constant: S,
}

impl<S: Real> fmt::Debug for PicardSolver<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PicardSolver")
            .field("map", self.map)
            .field("config", &self.config)
            .field("stability_constant", &self.stability_constant)
            .finish_non_exhaustive()
    }
}

impl<'a, S: Real> PicardSolver<'a, S> {
    /// Validates `a > 4 C_T C_H²` with `C_T` built from the stepper's
    /// nonlinearity and horizon.
    pub fn new(
        stepper: &'a Stepper<'a, S>,
        map: &'a MultiplicativeMap<S>,
        config: PicardConfig<S>,
    ) -> Result<Self> {
        let grid = stepper.grid();
        let ops = stepper.ops();
        Error::check_len("noise map offset", ops.node_count(), map.offset().len())?;
        let nl = stepper.nonlinearity();
        let constants = compute_stability_constant(nl.lipschitz(), nl.coercivity(), grid.horizon())?;
        config.validate(constants.c_t, map.lipschitz())?;
        Ok(Self {
            stepper,
            grid,
            ops,
            map,
            config,
            stability_constant: constants.c_t,
        })
    }

    pub fn modulus(&self) -> S {
        self.config.modulus(self.stability_constant, self.map.lipschitz())
    }

    fn frozen_integrand(&self, chi: &[Vec<S>]) -> Result<AdditiveIntegrand<S>> {
        let values = chi[..self.grid.steps()]
            .iter()
            .map(|c| self.map.evaluate(c))
            .collect::<Result<Vec<_>>>()?;
        AdditiveIntegrand::from_values(values, self.grid, self.ops)
    }

    /// One sweep: `χ^{(k)} -> χ^{(k+1)}` on a single path.
    pub fn sweep(&self, theta0: &[S], chi0: &[S], chi_iterate: &[Vec<S>], path: &BrownianPath<S>) -> Result<Trajectory<S>> {
        let integrand = self.frozen_integrand(chi_iterate)?;
        self.stepper.run_additive(theta0, chi0, &integrand, path)
    }

    /// Iterates all `paths` jointly and stops once the root mean square of
    /// the per-path `W`-differences is below the tolerance.
    pub fn solve_ensemble(
        &self,
        theta0: &[S],
        chi0: &[S],
        paths: &[BrownianPath<S>],
    ) -> Result<(Vec<Trajectory<S>>, PicardReport<S>)> {
        if paths.is_empty() {
            return Err(Error::invalid("Picard solve needs at least one path"));
        }
        let initial = vec![chi0.to_vec(); self.grid.steps() + 1];
        let mut iterates: Vec<Vec<Vec<S>>> = vec![initial; paths.len()];
        let mut trajectories: Vec<Trajectory<S>> = Vec::new();
        let mut report = PicardReport {
            differences: Vec::new(),
            ratios: Vec::new(),
            wall_times: Vec::new(),
            modulus: self.modulus(),
            stability_constant: self.stability_constant,
            converged: false,
        };
        let count = S::from_usize_lossy(paths.len());
        for _ in 0..self.config.max_iterations {
            let start = Instant::now();
            let results: Vec<(Trajectory<S>, S)> = paths
                .par_iter()
                .zip(iterates.par_iter())
                .map(|(path, prev)| {
                    let traj = self.sweep(theta0, chi0, prev, path)?;
                    let next = traj.chi_fields();
                    let d2 = weighted_difference_sq(&next, prev, self.grid, self.ops, self.config.weight)?;
                    Ok((traj, d2))
                })
                .collect::<Result<_>>()?;
            let mut total = S::zero();
            trajectories.clear();
            iterates.clear();
            for (traj, d2) in results {
                total = total + d2;
                iterates.push(traj.chi_fields());
                trajectories.push(traj);
            }
            let d = (total / count).sqrt();
            let ratio = report
                .differences
                .last()
                .and_then(|&prev| (prev > S::zero()).then(|| d / prev));
            report.differences.push(d);
            report.ratios.push(ratio);
            report.wall_times.push(start.elapsed().as_secs_f64());
            if d <= self.config.tolerance {
                report.converged = true;
                return Ok((trajectories, report));
            }
        }
        Err(Error::NonConvergence {
            what: "Picard iteration",
            iterations: self.config.max_iterations,
            last: report.differences.last().map_or(f64::NAN, |d| d.as_f64()),
        })
    }

    /// Single-path Picard solve.
    pub fn solve(&self, theta0: &[S], chi0: &[S], path: &BrownianPath<S>) -> Result<(Trajectory<S>, PicardReport<S>)> {
        let (mut trajectories, report) = self.solve_ensemble(theta0, chi0, std::slice::from_ref(path))?;
        Ok((trajectories.pop().expect("one path"), report))
    }
}

/// Convenience wrapper for [`PicardSolver::solve`].
pub fn picard_solve<S: Real>(
    stepper: &Stepper<'_, S>,
    map: &MultiplicativeMap<S>,
    config: PicardConfig<S>,
    theta0: &[S],
    chi0: &[S],
    path: &BrownianPath<S>,
) -> Result<(Trajectory<S>, PicardReport<S>)> {
    PicardSolver::new(stepper, map, config)?.solve(theta0, chi0, path)
}
