//! One coupled time step of the semi-implicit scheme and whole additive-noise
//! trajectories.
//!
//! With lumped mass `M` and stiffness `K`, one step maps `(θ_n, χ_n)` to
//! `(θ_{n+1}, χ_{n+1})` solving
//!
//! ```text
//! (M + dt K) θ_{n+1}     = M (θ_n - χ_{n+1} + χ_n + h_n Δw_n)
//! M α~(u_{n+1}) + K χ_{n+1} = M θ_{n+1},   u_{n+1} = (χ_{n+1} - χ_n - h_n Δw_n) / dt
//! ```
//!
//! The pair is found by alternating the linear heat solve `f: χ~ -> θ` and
//! the monotone solve `g: θ -> χ`. For `dt < 1 + Cbar_alpha` the composition
//! contracts squared L² distances by `1 / (2 (Cbar_alpha~ / dt - 1/2))`.

use crate::discretization::{SpatialOperators, TimeGrid};
use crate::noise::{AdditiveIntegrand, BrownianPath};
use crate::nonlinearity::Nonlinearity;
use crate::{linalg, Error, Real, Result};

/// Tolerances of the inner iteration and its sub-solves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig<S> {
    /// Stop once `‖χ~_{k+1} - χ~_k‖ <= tolerance` (discrete L²).
    pub tolerance: S,
    pub max_inner: usize,
    /// Newton stops at `‖F‖ <= newton_tolerance (1 + ‖rhs‖)`.
    pub newton_tolerance: S,
    pub newton_max_iter: usize,
    pub max_halvings: usize,
    /// Relative residual demanded from every linear solve.
    pub linear_tolerance: S,
}

impl<S: Real> Default for StepperConfig<S> {
    fn default() -> Self {
        Self {
            tolerance: S::tol_floor(1.0e-11),
            max_inner: 200,
            newton_tolerance: S::tol_floor(1.0e-12),
            newton_max_iter: 50,
            max_halvings: 30,
            linear_tolerance: S::tol_floor(1.0e-12),
        }
    }
}

impl<S: Real> StepperConfig<S> {
    pub fn with_tolerance(tolerance: S) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

/// Nodal fields at time `t_n`. `u_field` holds `U_n = χ_n - B_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState<S> {
    pub step: usize,
    pub theta: Vec<S>,
    pub chi: Vec<S>,
    pub u_field: Vec<S>,
}

impl<S: Real> SystemState<S> {
    pub fn initial(theta0: Vec<S>, chi0: Vec<S>, ops: &SpatialOperators<S>) -> Result<Self> {
        Error::check_len("initial theta", ops.node_count(), theta0.len())?;
        Error::check_len("initial chi", ops.node_count(), chi0.len())?;
        Ok(Self {
            step: 0,
            u_field: chi0.clone(),
            theta: theta0,
            chi: chi0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonReport<S> {
    pub iterations: usize,
    pub residual: S,
}

/// Diagnostics of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport<S> {
    pub inner_iterations: usize,
    /// `‖χ~_{k+1} - χ~_k‖` for each inner iteration.
    pub chi_differences: Vec<S>,
    /// Squared ratios of consecutive entries of `chi_differences`.
    pub contraction_factors: Vec<S>,
    pub contraction_bound: S,
    pub theta_residual: S,
    pub newton_residual: S,
    pub newton_iterations: usize,
    /// Relative defect of `∫(θ + χ)` balance (test function 1 in the heat equation).
    pub conservation_defect: S,
    /// Relative defect of `∫α~(u) = ∫θ` (test function 1 in the Barenblatt equation).
    pub balance_defect: S,
}

impl<S: Real> StepReport<S> {
    pub fn max_contraction_factor(&self) -> S {
        self.contraction_factors.iter().copied().fold(S::zero(), S::max)
    }

    pub fn contraction_within_bound(&self) -> bool {
        self.max_contraction_factor() <= self.contraction_bound * (S::one() + S::lit(1.0e-6))
    }
}

/// States `0..=N` and the reports of the steps that produced states `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub states: Vec<SystemState<S>>,
    pub reports: Vec<StepReport<S>>,
}

/// One row of the trajectory dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub t: f64,
    pub l2_theta: f64,
    pub h1semi_theta: f64,
    pub l2_chi: f64,
    pub h1semi_chi: f64,
    pub l2_u: f64,
    pub inner_iters: usize,
    pub max_contraction_factor: f64,
}

impl<S: Real> Trajectory<S> {
    pub fn final_state(&self) -> &SystemState<S> {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn chi_fields(&self) -> Vec<Vec<S>> {
        self.states.iter().map(|s| s.chi.clone()).collect()
    }

    pub fn max_contraction_factor(&self) -> S {
        self.reports.iter().map(StepReport::max_contraction_factor).fold(S::zero(), S::max)
    }

    pub fn max_conservation_defect(&self) -> S {
        self.reports.iter().map(|r| r.conservation_defect).fold(S::zero(), S::max)
    }

    pub fn max_balance_defect(&self) -> S {
        self.reports.iter().map(|r| r.balance_defect).fold(S::zero(), S::max)
    }

    pub fn rows(&self, grid: &TimeGrid<S>, ops: &SpatialOperators<S>) -> Vec<TrajectoryRow> {
        self.states
            .iter()
            .enumerate()
            .map(|(n, s)| {
                let report = n.checked_sub(1).map(|k| &self.reports[k]);
                TrajectoryRow {
                    step: n,
                    t: grid.node(n).as_f64(),
                    l2_theta: ops.l2_sq(&s.theta).sqrt().as_f64(),
                    h1semi_theta: ops.h1_sq(&s.theta).sqrt().as_f64(),
                    l2_chi: ops.l2_sq(&s.chi).sqrt().as_f64(),
                    h1semi_chi: ops.h1_sq(&s.chi).sqrt().as_f64(),
                    l2_u: ops.l2_sq(&s.u_field).sqrt().as_f64(),
                    inner_iters: report.map_or(0, |r| r.inner_iterations),
                    max_contraction_factor: report.map_or(0.0, |r| r.max_contraction_factor().as_f64()),
                }
            })
            .collect()
    }
}

/// Shared, immutable context for stepping: grid, operators, nonlinearity and
/// tolerances. Construction enforces `dt < min(1, 1 + Cbar_alpha)`.
#[derive(Clone)]
pub struct Stepper<'a, S> {
    grid: &'a TimeGrid<S>,
    ops: &'a SpatialOperators<S>,
    nl: &'a Nonlinearity<S>,
    config: StepperConfig<S>,
}

impl<S: Real> std::fmt::Debug for Stepper<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stepper")
            .field("grid", self.grid)
            .field("nonlinearity", self.nl)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// Checks the step size restrictions for a given coercivity `Cbar_alpha`.
pub fn check_step_size<S: Real>(dt: S, coercivity: S) -> Result<()> {
    let bound = S::one() + coercivity;
    if !(dt < bound) {
        return Err(Error::ContractionViolated {
            dt: dt.as_f64(),
            bound: bound.as_f64(),
        });
    }
    if !(dt < S::one()) {
        return Err(Error::invalid(format!(
            "step solvability requires dt < 1, got dt = {dt}"
        )));
    }
    Ok(())
}

impl<'a, S: Real> Stepper<'a, S> {
    pub fn new(
        grid: &'a TimeGrid<S>,
        ops: &'a SpatialOperators<S>,
        nl: &'a Nonlinearity<S>,
        config: StepperConfig<S>,
    ) -> Result<Self> {
        check_step_size(grid.dt(), nl.coercivity())?;
        if config.max_inner == 0 || config.newton_max_iter == 0 {
            return Err(Error::invalid("iteration limits must be positive"));
        }
        Ok(Self {
            grid,
            ops,
            nl,
            config,
        })
    }

    pub fn dt(&self) -> S {
        self.grid.dt()
    }

    pub fn grid(&self) -> &'a TimeGrid<S> {
        self.grid
    }

    pub fn ops(&self) -> &'a SpatialOperators<S> {
        self.ops
    }

    pub fn nonlinearity(&self) -> &'a Nonlinearity<S> {
        self.nl
    }

    pub fn config(&self) -> &StepperConfig<S> {
        &self.config
    }

    /// `1 / (2 (Cbar_alpha~ / dt - 1/2))`.
    pub fn contraction_bound(&self) -> S {
        let half = S::lit(0.5);
        S::one() / (S::lit(2.0) * (self.nl.coercivity_tilde() / self.dt() - half))
    }

    fn check_inputs(&self, state: &SystemState<S>, h_n: &[S]) -> Result<()> {
        let p = self.ops.node_count();
        Error::check_len("state theta", p, state.theta.len())?;
        Error::check_len("state chi", p, state.chi.len())?;
        Error::check_len("integrand field", p, h_n.len())
    }

    /// Heat sub-problem: `(M + dt K) θ = M (θ_n - χ~ + χ_n + h_n Δw_n)`.
    /// Returns `θ` and the relative residual of the linear solve.
    pub fn solve_theta(&self, chi_candidate: &[S], state: &SystemState<S>, h_n: &[S], dw: S) -> Result<(Vec<S>, S)> {
        self.check_inputs(state, h_n)?;
        Error::check_len("chi candidate", self.ops.node_count(), chi_candidate.len())?;
        let m = self.ops.mass();
        let rhs: Vec<S> = (0..m.len())
            .map(|i| m[i] * (state.theta[i] - chi_candidate[i] + state.chi[i] + h_n[i] * dw))
            .collect();
        self.ops.solve_shifted(m, self.dt(), &rhs, self.config.linear_tolerance)
    }

    /// Barenblatt sub-problem for given `θ`; see [`Self::solve_chi_with_rate`].
    pub fn solve_chi(&self, theta: &[S], state: &SystemState<S>, h_n: &[S], dw: S) -> Result<(Vec<S>, NewtonReport<S>)> {
        let (chi, _, report) = self.solve_chi_with_rate(theta, state, h_n, dw, None)?;
        Ok((chi, report))
    }

    /// Solves `M α~(u) + K χ = M θ` through the substitution
    /// `χ = χ_n + h_n Δw_n + dt u` and damped Newton on
    ///
    /// ```text
    /// F(u) = M α~(u) + dt K u - (M θ - K (χ_n + h_n Δw_n)).
    /// ```
    ///
    /// The Jacobian `M diag(α~'(u)) + dt K` is SPD because `α~' >= 1`.
    /// Returns `χ`, the rate `u` and the Newton report.
    pub fn solve_chi_with_rate(
        &self,
        theta: &[S],
        state: &SystemState<S>,
        h_n: &[S],
        dw: S,
        guess: Option<&[S]>,
    ) -> Result<(Vec<S>, Vec<S>, NewtonReport<S>)> {
        self.check_inputs(state, h_n)?;
        Error::check_len("theta", self.ops.node_count(), theta.len())?;
        let p = self.ops.node_count();
        let m = self.ops.mass();
        let dt = self.dt();
        let shift: Vec<S> = (0..p).map(|i| state.chi[i] + h_n[i] * dw).collect();
        let k_shift = self.ops.apply_stiffness(&shift)?;
        let rhs: Vec<S> = (0..p).map(|i| m[i] * theta[i] - k_shift[i]).collect();
        let tol = self.config.newton_tolerance * (S::one() + linalg::norm2(&rhs));

        let mut ku = vec![S::zero(); p];
        let mut residual = |u: &[S], out: &mut Vec<S>| {
            self.ops.stiffness_into(u, &mut ku);
            out.clear();
            out.extend((0..p).map(|i| m[i] * self.nl.alpha_tilde(u[i]) + dt * ku[i] - rhs[i]));
            linalg::norm2(out)
        };

        let mut u = guess.map_or_else(|| vec![S::zero(); p], <[S]>::to_vec);
        let mut f = Vec::with_capacity(p);
        let mut f_try = Vec::with_capacity(p);
        let mut r = residual(&u, &mut f);
        let mut iterations = 0;
        while r > tol {
            if iterations == self.config.newton_max_iter {
                return Err(Error::Numerical {
                    solver: "Newton solve",
                    residual: r.as_f64(),
                    iterations,
                });
            }
            iterations += 1;
            let jac_diag: Vec<S> = (0..p).map(|i| m[i] * self.nl.alpha_tilde_prime(u[i])).collect();
            let neg_f: Vec<S> = f.iter().map(|&v| -v).collect();
            let (delta, _) = self.ops.solve_shifted(&jac_diag, dt, &neg_f, self.config.linear_tolerance)?;

            let mut step = S::one();
            let mut accepted = false;
            for _ in 0..=self.config.max_halvings {
                let trial: Vec<S> = (0..p).map(|i| u[i] + step * delta[i]).collect();
                let r_try = residual(&trial, &mut f_try);
                if r_try < r {
                    u = trial;
                    r = r_try;
                    std::mem::swap(&mut f, &mut f_try);
                    accepted = true;
                    break;
                }
                step = step * S::lit(0.5);
            }
            if !accepted {
                return Err(Error::Numerical {
                    solver: "Newton line search",
                    residual: r.as_f64(),
                    iterations,
                });
            }
        }
        let chi = (0..p).map(|i| shift[i] + dt * u[i]).collect();
        Ok((
            chi,
            u,
            NewtonReport {
                iterations,
                residual: r,
            },
        ))
    }

    /// Advances `state` by one step with increment `dw` and integrand `h_n`.
    pub fn step(&self, state: &SystemState<S>, dw: S, h_n: &[S]) -> Result<(SystemState<S>, StepReport<S>)> {
        self.check_inputs(state, h_n)?;
        let p = self.ops.node_count();
        let mut chi_iter = state.chi.clone();
        let mut rate: Option<Vec<S>> = None;
        let mut diffs: Vec<S> = Vec::new();
        let mut factors: Vec<S> = Vec::new();
        let mut newton = NewtonReport {
            iterations: 0,
            residual: S::zero(),
        };
        let mut converged = false;

        for _ in 0..self.config.max_inner {
            let (theta, _) = self.solve_theta(&chi_iter, state, h_n, dw)?;
            let (chi_new, u, report) = self.solve_chi_with_rate(&theta, state, h_n, dw, rate.as_deref())?;
            let diff: Vec<S> = (0..p).map(|i| chi_new[i] - chi_iter[i]).collect();
            let d = self.ops.l2_sq(&diff).sqrt();
            if let Some(&prev) = diffs.last() {
                if prev > S::zero() {
                    let q = d / prev;
                    factors.push(q * q);
                }
            }
            diffs.push(d);
            chi_iter = chi_new;
            rate = Some(u);
            newton = report;
            if d <= self.config.tolerance {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NonConvergence {
                what: "inner fixed-point iteration",
                iterations: self.config.max_inner,
                last: diffs.last().map_or(f64::NAN, |d| d.as_f64()),
            });
        }

        // Final heat solve against the accepted χ.
        let (theta, theta_residual) = self.solve_theta(&chi_iter, state, h_n, dw)?;
        let u = rate.expect("at least one inner iteration");

        let u_field: Vec<S> = (0..p)
            .map(|i| state.u_field[i] + (chi_iter[i] - state.chi[i]) - h_n[i] * dw)
            .collect();

        let integral = |v: &[S]| -> S { self.ops.mass().iter().zip(v).map(|(&m, &x)| m * x).sum() };
        let rel = |a: S, b: S| (a - b).abs() / S::one().max(a.abs()).max(b.abs());
        let lhs = integral(&theta) + integral(&chi_iter);
        let rhs = integral(&state.theta) + integral(&state.chi) + dw * integral(h_n);
        let conservation_defect = rel(lhs, rhs);
        let tilde: Vec<S> = u.iter().map(|&x| self.nl.alpha_tilde(x)).collect();
        let balance_defect = rel(integral(&tilde), integral(&theta));

        let next = SystemState {
            step: state.step + 1,
            theta,
            chi: chi_iter,
            u_field,
        };
        let report = StepReport {
            inner_iterations: diffs.len(),
            chi_differences: diffs,
            contraction_factors: factors,
            contraction_bound: self.contraction_bound(),
            theta_residual,
            newton_residual: newton.residual,
            newton_iterations: newton.iterations,
            conservation_defect,
            balance_defect,
        };
        Ok((next, report))
    }

    /// Runs all `N` steps along `path` with additive integrand `integrand`.
    pub fn run_additive(
        &self,
        theta0: &[S],
        chi0: &[S],
        integrand: &AdditiveIntegrand<S>,
        path: &BrownianPath<S>,
    ) -> Result<Trajectory<S>> {
        let n_steps = self.grid.steps();
        Error::check_len("path steps", n_steps, path.steps())?;
        Error::check_len("integrand steps", n_steps, integrand.steps())?;
        let mut states = Vec::with_capacity(n_steps + 1);
        let mut reports = Vec::with_capacity(n_steps);
        states.push(SystemState::initial(theta0.to_vec(), chi0.to_vec(), self.ops)?);
        for n in 0..n_steps {
            let (next, report) = self.step(&states[n], path.increment(n), integrand.value(n))?;
            states.push(next);
            reports.push(report);
        }
        Ok(Trajectory { states, reports })
    }
}

/// Convenience wrapper building a [`Stepper`] and running one trajectory.
#[allow(clippy::too_many_arguments)]
pub fn run_additive<S: Real>(
    theta0: &[S],
    chi0: &[S],
    integrand: &AdditiveIntegrand<S>,
    path: &BrownianPath<S>,
    grid: &TimeGrid<S>,
    ops: &SpatialOperators<S>,
    nl: &Nonlinearity<S>,
    config: StepperConfig<S>,
) -> Result<Trajectory<S>> {
    Stepper::new(grid, ops, nl, config)?.run_additive(theta0, chi0, integrand, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::MeshSpec;
    use crate::noise::{partial_sums, Expr};
    use approx::assert_relative_eq;

    struct Fixture {
        grid: TimeGrid<f64>,
        ops: SpatialOperators<f64>,
        nl: Nonlinearity<f64>,
    }

    fn fixture(steps: usize, cells: usize, slope: f64) -> Fixture {
        Fixture {
            grid: TimeGrid::new(1.0, steps).unwrap(),
            ops: SpatialOperators::build(&MeshSpec::interval(cells, 1.0)).unwrap(),
            nl: Nonlinearity::linear(slope).unwrap(),
        }
    }

    impl Fixture {
        fn stepper(&self) -> Stepper<'_, f64> {
            Stepper::new(&self.grid, &self.ops, &self.nl, StepperConfig::default()).unwrap()
        }
        fn state(&self, theta: Vec<f64>, chi: Vec<f64>) -> SystemState<f64> {
            SystemState::initial(theta, chi, &self.ops).unwrap()
        }
    }

    #[test]
    fn step_size_preconditions() {
        let grid = TimeGrid::new(3.0, 1).unwrap();
        let ops = SpatialOperators::build(&MeshSpec::interval(4, 1.0)).unwrap();
        let nl = Nonlinearity::linear(1.0).unwrap();
        assert!(matches!(
            Stepper::new(&grid, &ops, &nl, StepperConfig::default()),
            Err(Error::ContractionViolated { .. })
        ));
        let grid = TimeGrid::new(1.0, 1).unwrap();
        assert!(matches!(
            Stepper::new(&grid, &ops, &nl, StepperConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn theta_solve_zero_and_constant_data() {
        let fx = fixture(4, 8, 1.0);
        let st = fx.stepper();
        let zero = fx.ops.constant(0.0);
        let s0 = fx.state(zero.clone(), zero.clone());
        let (theta, rel) = st.solve_theta(&zero, &s0, &zero, 0.0).unwrap();
        assert!(theta.iter().all(|&v| v == 0.0));
        assert!(rel <= 1e-12);

        let (a, b, c) = (0.7, -0.3, 0.4);
        let s = fx.state(fx.ops.constant(a), fx.ops.constant(b));
        let h = fx.ops.constant(c);
        let (theta, _) = st.solve_theta(&fx.ops.constant(b), &s, &h, 1.0).unwrap();
        for v in theta {
            assert_relative_eq!(v, a + c, epsilon = 1e-13);
        }
    }

    #[test]
    fn theta_solve_mirror_symmetry() {
        let fx = fixture(4, 10, 1.0);
        let st = fx.stepper();
        let bump = fx.ops.interpolate(|x| (x[0] - 0.5).powi(2));
        let s = fx.state(bump.clone(), fx.ops.constant(0.1));
        let (theta, _) = st.solve_theta(&fx.ops.interpolate(|x| (x[0] - 0.5).abs()), &s, &bump, 0.3).unwrap();
        let n = theta.len();
        for i in 0..n {
            assert!((theta[i] - theta[n - 1 - i]).abs() < 1e-13);
        }
    }

    #[test]
    fn chi_solve_examples() {
        let fx = fixture(4, 8, 1.0);
        let st = fx.stepper();
        let zero = fx.ops.constant(0.0);
        let s0 = fx.state(zero.clone(), zero.clone());
        let (chi, report) = st.solve_chi(&zero, &s0, &zero, 0.0).unwrap();
        assert!(chi.iter().all(|&v| v == 0.0));
        assert_eq!(report.iterations, 0);

        // α = id: 2u = a, χ = b + dt a / 2
        let (a, b) = (0.8, 0.25);
        let s = fx.state(zero.clone(), fx.ops.constant(b));
        let (chi, _) = st.solve_chi(&fx.ops.constant(a), &s, &zero, 0.0).unwrap();
        for v in chi {
            assert_relative_eq!(v, b + fx.grid.dt() * a / 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn chi_solve_satisfies_weak_form() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let ops = SpatialOperators::build(&MeshSpec::interval(16, 1.0)).unwrap();
        let nl = Nonlinearity::saturating(2.0).unwrap();
        let st = Stepper::new(&grid, &ops, &nl, StepperConfig::default()).unwrap();
        let theta = ops.interpolate(|x| 3.0 * (std::f64::consts::PI * x[0]).cos());
        let s = SystemState::initial(ops.interpolate(|x| x[0]), ops.interpolate(|x| x[0] * x[0]), &ops).unwrap();
        let h = ops.interpolate(|x| 1.0 + x[0]);
        let dw = 0.2;
        let (chi, report) = st.solve_chi(&theta, &s, &h, dw).unwrap();
        assert!(report.iterations >= 2);
        // residual of M α~(u) + K χ - M θ against every nodal basis function
        let kchi = ops.apply_stiffness(&chi).unwrap();
        let m = ops.mass();
        let dt = grid.dt();
        let res: f64 = (0..chi.len())
            .map(|i| {
                let u = (chi[i] - s.chi[i] - h[i] * dw) / dt;
                (m[i] * nl.alpha_tilde(u) + kchi[i] - m[i] * theta[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!(res < 1e-10, "residual {res}");
    }

    #[test]
    fn zero_data_is_fixed_point() {
        let fx = fixture(4, 8, 1.0);
        let st = fx.stepper();
        let zero = fx.ops.constant(0.0);
        let s0 = fx.state(zero.clone(), zero.clone());
        let (s1, report) = st.step(&s0, 0.0, &zero).unwrap();
        assert_eq!(report.inner_iterations, 1);
        assert!(s1.theta.iter().chain(&s1.chi).all(|&v| v == 0.0));
        assert!(report.contraction_factors.is_empty());
    }

    #[test]
    fn contraction_factor_at_half_coercivity() {
        // α = x/2: Cbar_α~ = 1.5, dt = 0.75 gives bound 1/3.
        let grid = TimeGrid::new(0.75, 1).unwrap();
        let ops = SpatialOperators::build(&MeshSpec::interval(32, 1.0)).unwrap();
        let nl = Nonlinearity::linear(0.5).unwrap();
        let st = Stepper::new(&grid, &ops, &nl, StepperConfig::default()).unwrap();
        assert_relative_eq!(st.contraction_bound(), 1.0 / 3.0, epsilon = 1e-15);
        let s = SystemState::initial(
            ops.interpolate(|x| (std::f64::consts::PI * x[0]).cos() + 1.0),
            ops.interpolate(|x| x[0] * x[0]),
            &ops,
        )
        .unwrap();
        let h = ops.interpolate(|x| (2.0 * std::f64::consts::PI * x[0]).cos());
        let (_, report) = st.step(&s, 0.4, &h).unwrap();
        assert!(report.contraction_factors.len() >= 2);
        assert!(report.contraction_factors.iter().all(|&q| q <= 1.0 / 3.0 + 1e-6));
        assert!(report.contraction_within_bound());
    }

    #[test]
    fn conservation_and_balance() {
        let fx = fixture(16, 20, 1.0);
        let st = fx.stepper();
        let theta0 = fx.ops.interpolate(|x| (std::f64::consts::PI * x[0]).cos());
        let h = AdditiveIntegrand::discretize(&Expr::parse("cos(pi*x)*(1+t) + 0.5").unwrap(), &fx.grid, &fx.ops).unwrap();
        let path = crate::noise::sample_path(&fx.grid, 17, 2);
        let traj = st.run_additive(&theta0, &theta0, &h, &path).unwrap();
        assert!(traj.max_conservation_defect() <= 1e-10);
        assert!(traj.max_balance_defect() <= 1e-10);
        // explicit check of the identity on one step
        let n = 5;
        let (a, b) = (&traj.states[n], &traj.states[n + 1]);
        let lhs = fx.ops.integral(&b.theta).unwrap() + fx.ops.integral(&b.chi).unwrap();
        let rhs = fx.ops.integral(&a.theta).unwrap()
            + fx.ops.integral(&a.chi).unwrap()
            + path.increment(n) * fx.ops.integral(h.value(n)).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn u_field_is_chi_minus_noise_sum() {
        let fx = fixture(8, 8, 1.0);
        let st = fx.stepper();
        let h = AdditiveIntegrand::discretize(&Expr::parse("1 + x*t").unwrap(), &fx.grid, &fx.ops).unwrap();
        let path = crate::noise::sample_path(&fx.grid, 1, 9);
        let init = fx.ops.interpolate(|x| x[0]);
        let traj = st.run_additive(&init, &init, &h, &path).unwrap();
        let b = partial_sums(&path, &h).unwrap();
        for (n, s) in traj.states.iter().enumerate() {
            for i in 0..s.chi.len() {
                assert!((s.u_field[i] - (s.chi[i] - b.get(n)[i])).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn scalar_recursion_without_noise() {
        let fx = fixture(16, 6, 1.0);
        let st = fx.stepper();
        let path = BrownianPath::zero(&fx.grid);
        let h = AdditiveIntegrand::zero(&fx.grid, &fx.ops);
        let traj = st
            .run_additive(&fx.ops.constant(1.0), &fx.ops.constant(0.0), &h, &path)
            .unwrap();
        let dt = fx.grid.dt();
        let mut expected = 1.0;
        for s in &traj.states[1..] {
            expected /= 1.0 + dt / 2.0;
            assert!(s.theta.iter().all(|&v| (v - expected).abs() < 1e-12));
        }
    }

    #[test]
    fn mirror_symmetry_along_trajectory() {
        let fx = fixture(8, 12, 1.0);
        let st = fx.stepper();
        let init = fx.ops.interpolate(|x| (2.0 * std::f64::consts::PI * x[0]).cos());
        let h = AdditiveIntegrand::discretize(&Expr::parse("(x-0.5)^2*(1+t)").unwrap(), &fx.grid, &fx.ops).unwrap();
        let path = crate::noise::sample_path(&fx.grid, 4, 4);
        let traj = st.run_additive(&init, &init, &h, &path).unwrap();
        for s in &traj.states {
            let n = s.theta.len();
            for i in 0..n {
                assert!((s.theta[i] - s.theta[n - 1 - i]).abs() < 1e-12);
                assert!((s.chi[i] - s.chi[n - 1 - i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_trajectories() {
        let fx = fixture(8, 8, 1.0);
        let nl = Nonlinearity::saturating(0.5).unwrap();
        let h = AdditiveIntegrand::discretize(&Expr::parse("cos(pi*x)").unwrap(), &fx.grid, &fx.ops).unwrap();
        let path = crate::noise::sample_path(&fx.grid, 2, 2);
        let init = fx.ops.interpolate(|x| x[0]);
        let run = || run_additive(&init, &init, &h, &path, &fx.grid, &fx.ops, &nl, StepperConfig::default()).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn nonlinear_ramp_two_dimensional() {
        let grid = TimeGrid::new(0.5, 8).unwrap();
        let ops = SpatialOperators::build(&MeshSpec::rectangle([6, 5], [1.0, 1.0])).unwrap();
        let nl = Nonlinearity::ramp(0.2, 0.5, 2.0).unwrap();
        let h = AdditiveIntegrand::discretize(&Expr::parse("cos(pi*x)*cos(pi*y)").unwrap(), &grid, &ops).unwrap();
        let path = crate::noise::sample_path(&grid, 8, 0);
        let init = ops.interpolate(|x| (std::f64::consts::PI * x[0]).cos() + x[1] * x[1]);
        let traj = run_additive(&init, &init, &h, &path, &grid, &ops, &nl, StepperConfig::default()).unwrap();
        assert!(traj.max_conservation_defect() <= 1e-10);
        assert!(traj.reports.iter().all(StepReport::contraction_within_bound));
    }

    #[test]
    fn non_convergence_reported() {
        let fx = fixture(4, 8, 1.0);
        let cfg = StepperConfig {
            max_inner: 1,
            tolerance: 0.0,
            ..StepperConfig::default()
        };
        let st = Stepper::new(&fx.grid, &fx.ops, &fx.nl, cfg).unwrap();
        let s = fx.state(fx.ops.constant(1.0), fx.ops.constant(0.0));
        let err = st.step(&s, 0.0, &fx.ops.constant(0.0)).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }

    #[test]
    fn single_precision_step() {
        let grid = TimeGrid::new(1.0f32, 8).unwrap();
        let ops = SpatialOperators::<f32>::build(&MeshSpec::interval(8, 1.0)).unwrap();
        let nl = Nonlinearity::linear(1.0f32).unwrap();
        let st = Stepper::new(&grid, &ops, &nl, StepperConfig::default()).unwrap();
        let s = SystemState::initial(ops.constant(1.0), ops.constant(0.0), &ops).unwrap();
        let (s1, _) = st.step(&s, 0.0, &ops.constant(0.0)).unwrap();
        let expected = 1.0 / (1.0 + 0.125 / 2.0);
        for v in s1.theta {
            assert!((v - expected).abs() < 1e-4, "{v} vs {expected}");
        }
    }
}
