use barenblatt_core::noise::{partial_sums, sample_path};
use barenblatt_core::stepper::Stepper;
use barenblatt_core::{Alpha, Expr, Grid, Integrand, MeshSpec, Operators, Path, StepperConfig};

fn interval(cells: usize) -> Operators {
    Operators::build(&MeshSpec::interval(cells, 1.0)).unwrap()
}

#[test]
fn constant_data_follows_scalar_recursion_and_exponential() {
    let ops = interval(8);
    let nl = Alpha::linear(1.0).unwrap();
    for k in 4..=8 {
        let grid = Grid::new(1.0, 1 << k).unwrap();
        let stepper = Stepper::new(&grid, &ops, &nl, StepperConfig::default()).unwrap();
        let traj = stepper
            .run_additive(
                &ops.constant(1.0),
                &ops.constant(0.0),
                &Integrand::zero(&grid, &ops),
                &Path::zero(&grid),
            )
            .unwrap();
        let dt = grid.dt();
        let mut recursion = 1.0;
        for s in &traj.states[1..] {
            recursion /= 1.0 + dt / 2.0;
            assert!(s.theta.iter().all(|v| (v - recursion).abs() <= 1e-9));
        }
        let last = traj.final_state().theta[0];
        assert!((last - (-0.5f64).exp()).abs() <= 2.0 * dt);
    }
}

#[test]
fn constant_noise_closed_form_per_path() {
    let ops = interval(8);
    let nl = Alpha::linear(1.0).unwrap();
    let grid = Grid::new(1.0, 32).unwrap();
    let h = Integrand::discretize(&Expr::constant(1.0), &grid, &ops).unwrap();
    let stepper = Stepper::new(&grid, &ops, &nl, StepperConfig::default()).unwrap();
    let n = grid.steps() as i32;
    let expected = 1.0 - (1.0 + grid.dt() / 2.0).powi(-n);
    for id in 0..32 {
        let path = sample_path(&grid, 2024, id);
        let traj = stepper
            .run_additive(&ops.constant(1.0), &ops.constant(0.0), &h, &path)
            .unwrap();
        let b = partial_sums(&path, &h).unwrap();
        let last = traj.final_state();
        for i in 0..last.chi.len() {
            assert!((last.chi[i] - b.get(grid.steps())[i] - expected).abs() <= 1e-9);
            assert!((last.u_field[i] - expected).abs() <= 1e-9);
        }
    }
}

#[test]
fn rectangle_with_one_cell_across_matches_interval() {
    // Fields constant in y reduce the 2D problem to the 1D one.
    let line = interval(12);
    let plane = Operators::build(&MeshSpec::rectangle([12, 1], [1.0, 1.0])).unwrap();
    let nl = Alpha::saturating(1.0).unwrap();
    let grid = Grid::new(0.5, 16).unwrap();
    let expr = Expr::parse("cos(pi*x)*(1+t)").unwrap();
    let path = sample_path(&grid, 7, 0);
    let init = |ops: &Operators| ops.interpolate(|x| (2.0 * std::f64::consts::PI * x[0]).cos());

    let run = |ops: &Operators| {
        let stepper = Stepper::new(&grid, ops, &nl, StepperConfig::default()).unwrap();
        let h = Integrand::discretize(&expr, &grid, ops).unwrap();
        stepper.run_additive(&init(ops), &init(ops), &h, &path).unwrap()
    };
    let a = run(&line);
    let b = run(&plane);
    let (sa, sb) = (a.final_state(), b.final_state());
    for (i, &v) in sa.theta.iter().enumerate() {
        assert!((v - sb.theta[i]).abs() < 1e-9);
        assert!((v - sb.theta[i + 13]).abs() < 1e-9);
        assert!((sa.chi[i] - sb.chi[i + 13]).abs() < 1e-9);
    }
}
