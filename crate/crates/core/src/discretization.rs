//! Uniform time grid and lumped-mass P1 operators on intervals and rectangles.
//!
//! All discrete norms used elsewhere in the crate are defined here:
//!
//! * `‖v‖² = Σ_i M_i v_i²` with the lumped (row-sum) mass `M`,
//! * `|v|²_{H¹} = vᵀ K v` with the Neumann stiffness `K`.
//!
//! In 1D `K` is the usual `(1/Δx) tridiag(-1, 2, -1)` with boundary rows
//! `(1, -1)/Δx`. In 2D the operators are tensor products of the 1D ones,
//! `M = Mx ⊗ My` and `K = Kx ⊗ My + Mx ⊗ Ky`, which gives a five point stencil.

use crate::linalg::{self, Bands, CsrMatrix};
use crate::{Error, Real, Result};

/// Uniform partition `t_n = n dt` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid<S> {
    horizon: S,
    steps: usize,
    dt: S,
}

impl<S: Real> TimeGrid<S> {
    pub fn new(horizon: S, steps: usize) -> Result<Self> {
        if !(horizon > S::zero()) || !horizon.is_finite() {
            return Err(Error::invalid(format!("time horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::invalid("number of time steps must be at least 1"));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / S::from_usize_lossy(steps),
        })
    }

    pub fn horizon(&self) -> S {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> S {
        self.dt
    }

    /// `t_n`; the last node is pinned to `T` exactly.
    pub fn node(&self, n: usize) -> S {
        if n == self.steps {
            self.horizon
        } else {
            S::from_usize_lossy(n) * self.dt
        }
    }

    pub fn nodes(&self) -> Vec<S> {
        (0..=self.steps).map(|n| self.node(n)).collect()
    }

    /// Coarser grid with `steps / factor` steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.steps
            )));
        }
        Self::new(self.horizon, self.steps / factor)
    }
}

/// Uniform tensor mesh description: one entry per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshSpec {
    pub cells: Vec<usize>,
    pub lengths: Vec<f64>,
}

impl MeshSpec {
    pub fn interval(cells: usize, length: f64) -> Self {
        Self {
            cells: vec![cells],
            lengths: vec![length],
        }
    }

    pub fn rectangle(cells: [usize; 2], lengths: [f64; 2]) -> Self {
        Self {
            cells: cells.to_vec(),
            lengths: lengths.to_vec(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.cells.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.cells.len();
        if !(1..=2).contains(&d) {
            return Err(Error::invalid(format!("mesh dimension must be 1 or 2, got {d}")));
        }
        if self.lengths.len() != d {
            return Err(Error::invalid(format!(
                "mesh has {d} cell counts but {} axis lengths",
                self.lengths.len()
            )));
        }
        if let Some(axis) = self.cells.iter().position(|&c| c == 0) {
            return Err(Error::invalid(format!("axis {axis} has zero cells")));
        }
        if let Some(axis) = self.lengths.iter().position(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid(format!(
                "axis {axis} length must be positive, got {}",
                self.lengths[axis]
            )));
        }
        Ok(())
    }
}

/// Lumped mass, Neumann stiffness and node coordinates for a uniform mesh.
/// Immutable once built; share freely between concurrent path simulations.
#[derive(Debug, Clone)]
pub struct SpatialOperators<S> {
    dimension: usize,
    nodes_per_axis: [usize; 2],
    spacing: [S; 2],
    measure: S,
    mass: Vec<S>,
    stiffness: CsrMatrix<S>,
    bands: Option<Bands<S>>,
    coords: Vec<[S; 2]>,
}

fn axis_operators<S: Real>(cells: usize, length: S) -> (Vec<S>, Vec<Vec<(usize, S)>>) {
    let n = cells + 1;
    let h = length / S::from_usize_lossy(cells);
    let half = h / S::lit(2.0);
    let mut mass = vec![S::zero(); n];
    let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); n];
    let inv = S::one() / h;
    for e in 0..cells {
        let (a, b) = (e, e + 1);
        mass[a] = mass[a] + half;
        mass[b] = mass[b] + half;
        rows[a].push((a, inv));
        rows[a].push((b, -inv));
        rows[b].push((a, -inv));
        rows[b].push((b, inv));
    }
    (mass, rows)
}

impl<S: Real> SpatialOperators<S> {
    pub fn build(spec: &MeshSpec) -> Result<Self> {
        spec.validate()?;
        match spec.dimension() {
            1 => Ok(Self::build_1d(spec.cells[0], S::lit(spec.lengths[0]))),
            _ => Ok(Self::build_2d(
                [spec.cells[0], spec.cells[1]],
                [S::lit(spec.lengths[0]), S::lit(spec.lengths[1])],
            )),
        }
    }

    fn build_1d(cells: usize, length: S) -> Self {
        let (mass, rows) = axis_operators(cells, length);
        let h = length / S::from_usize_lossy(cells);
        let stiffness = CsrMatrix::from_rows(rows);
        let bands = Some(Bands::from_csr(&stiffness));
        let coords = (0..=cells)
            .map(|i| [if i == cells { length } else { S::from_usize_lossy(i) * h }, S::zero()])
            .collect();
        Self {
            dimension: 1,
            nodes_per_axis: [cells + 1, 1],
            spacing: [h, S::zero()],
            measure: length,
            mass,
            stiffness,
            bands,
            coords,
        }
    }

    fn build_2d(cells: [usize; 2], lengths: [S; 2]) -> Self {
        let (mx, kx) = axis_operators(cells[0], lengths[0]);
        let (my, ky) = axis_operators(cells[1], lengths[1]);
        let (nx, ny) = (cells[0] + 1, cells[1] + 1);
        let hx = lengths[0] / S::from_usize_lossy(cells[0]);
        let hy = lengths[1] / S::from_usize_lossy(cells[1]);
        let idx = |i: usize, j: usize| i + nx * j;
        let mut mass = vec![S::zero(); nx * ny];
        let mut rows: Vec<Vec<(usize, S)>> = vec![Vec::new(); nx * ny];
        let mut coords = vec![[S::zero(); 2]; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let p = idx(i, j);
                mass[p] = mx[i] * my[j];
                coords[p] = [
                    if i + 1 == nx { lengths[0] } else { S::from_usize_lossy(i) * hx },
                    if j + 1 == ny { lengths[1] } else { S::from_usize_lossy(j) * hy },
                ];
                for &(c, v) in &kx[i] {
                    rows[p].push((idx(c, j), v * my[j]));
                }
                for &(c, v) in &ky[j] {
                    rows[p].push((idx(i, c), mx[i] * v));
                }
            }
        }
        Self {
            dimension: 2,
            nodes_per_axis: [nx, ny],
            spacing: [hx, hy],
            measure: lengths[0] * lengths[1],
            mass,
            stiffness: CsrMatrix::from_rows(rows),
            bands: None,
            coords,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn node_count(&self) -> usize {
        self.mass.len()
    }

    pub fn nodes_per_axis(&self) -> [usize; 2] {
        self.nodes_per_axis
    }

    pub fn spacing(&self) -> [S; 2] {
        self.spacing
    }

    /// `|D|`.
    pub fn measure(&self) -> S {
        self.measure
    }

    pub fn mass(&self) -> &[S] {
        &self.mass
    }

    /// Coordinates of node `i`, one entry per spatial dimension.
    pub fn coords(&self, i: usize) -> &[S] {
        &self.coords[i][..self.dimension]
    }

    pub fn stiffness_entry(&self, i: usize, j: usize) -> S {
        self.stiffness.get(i, j)
    }

    pub fn apply_stiffness(&self, v: &[S]) -> Result<Vec<S>> {
        Error::check_len("stiffness product", self.node_count(), v.len())?;
        Ok(self.stiffness.mul(v))
    }

    pub(crate) fn stiffness_into(&self, v: &[S], out: &mut [S]) {
        self.stiffness.mul_into(v, out)
    }

    /// Nodal interpolant of `f(x)`.
    pub fn interpolate(&self, f: impl Fn(&[S]) -> S) -> Vec<S> {
        (0..self.node_count()).map(|i| f(self.coords(i))).collect()
    }

    pub fn constant(&self, c: S) -> Vec<S> {
        vec![c; self.node_count()]
    }

    fn check(&self, v: &[S]) -> Result<()> {
        Error::check_len("discrete norm", self.node_count(), v.len())
    }

    pub fn l2_inner(&self, u: &[S], v: &[S]) -> Result<S> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.inner_unchecked(u, v))
    }

    pub fn l2_norm(&self, v: &[S]) -> Result<S> {
        self.check(v)?;
        Ok(self.l2_sq(v).sqrt())
    }

    pub fn h1_seminorm(&self, v: &[S]) -> Result<S> {
        self.check(v)?;
        Ok(self.h1_sq(v).sqrt())
    }

    /// `∫_D v` under the lumped quadrature.
    pub fn integral(&self, v: &[S]) -> Result<S> {
        self.check(v)?;
        Ok(self.mass.iter().zip(v).map(|(&m, &x)| m * x).sum())
    }

    pub(crate) fn inner_unchecked(&self, u: &[S], v: &[S]) -> S {
        self.mass
            .iter()
            .zip(u.iter().zip(v))
            .map(|(&m, (&a, &b))| m * a * b)
            .sum()
    }

    pub(crate) fn l2_sq(&self, v: &[S]) -> S {
        self.mass.iter().zip(v).map(|(&m, &x)| m * x * x).sum()
    }

    /// `vᵀKv`, clamped at zero against round-off.
    pub(crate) fn h1_sq(&self, v: &[S]) -> S {
        let mut acc = S::zero();
        for (i, &vi) in v.iter().enumerate() {
            let kv: S = self.stiffness.row(i).map(|(c, k)| k * v[c]).sum();
            acc = acc + vi * kv;
        }
        acc.max(S::zero())
    }

    /// `‖v‖² + |v|²_{H¹}` on the difference `a - b`.
    pub(crate) fn h1_full_sq_diff(&self, a: &[S], b: &[S]) -> S {
        let d: Vec<S> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
        self.l2_sq(&d) + self.h1_sq(&d)
    }

    /// Solves `(diag(d) + c K) x = b` for SPD data (`d > 0`, `c ≥ 0`).
    /// Returns the solution and the achieved relative residual.
    pub(crate) fn solve_shifted(&self, d: &[S], c: S, b: &[S], rel_tol: S) -> Result<(Vec<S>, S)> {
        let x = match &self.bands {
            Some(bands) => linalg::solve_tridiagonal(bands, d, c, b)?,
            None => linalg::solve_pcg(&self.stiffness, d, c, b, S::tol_floor(1.0e-13))?,
        };
        let r = linalg::shifted_residual(&self.stiffness, d, c, &x, b);
        let bnorm = linalg::norm2(b);
        let rel = if bnorm > S::zero() {
            linalg::norm2(&r) / bnorm
        } else {
            linalg::norm2(&r)
        };
        if rel > rel_tol || !rel.is_finite() {
            return Err(Error::Numerical {
                solver: "linear solve",
                residual: rel.as_f64(),
                iterations: 1,
            });
        }
        Ok((x, rel))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(cells: usize) -> SpatialOperators<f64> {
        SpatialOperators::build(&MeshSpec::interval(cells, 1.0)).unwrap()
    }

    #[test]
    fn time_grid_examples() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = TimeGrid::new(1.0, 1).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 1.0]);
        assert_eq!(TimeGrid::new(2.0, 8).unwrap().dt(), 0.25);
    }

    #[test]
    fn time_grid_errors() {
        assert!(matches!(TimeGrid::new(0.0, 4), Err(Error::InvalidConfig(_))));
        assert!(matches!(TimeGrid::new(-1.0, 4), Err(Error::InvalidConfig(_))));
        assert!(matches!(TimeGrid::new(1.0, 0), Err(Error::InvalidConfig(_))));
        assert!(TimeGrid::new(1.0, 6).unwrap().coarsen(4).is_err());
    }

    #[test]
    fn time_grid_last_node_is_horizon() {
        let g = TimeGrid::new(0.7f64, 3).unwrap();
        assert_eq!(g.node(3), 0.7);
        assert!((g.dt() * 3.0 - 0.7).abs() <= f64::EPSILON);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn two_cell_mass_and_stiffness() {
        let ops = unit(2);
        assert_eq!(ops.mass(), &[0.25, 0.5, 0.25]);
        let expected = [[2.0, -2.0, 0.0], [-2.0, 4.0, -2.0], [0.0, -2.0, 2.0]];
        for (i, row) in expected.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_relative_eq!(ops.stiffness_entry(i, j), v);
            }
        }
    }

    #[test]
    fn mesh_errors() {
        assert!(SpatialOperators::<f64>::build(&MeshSpec::interval(0, 1.0)).is_err());
        assert!(SpatialOperators::<f64>::build(&MeshSpec::interval(4, 0.0)).is_err());
        assert!(SpatialOperators::<f64>::build(&MeshSpec::rectangle([2, 0], [1.0, 1.0])).is_err());
        let bad = MeshSpec {
            cells: vec![1, 1, 1],
            lengths: vec![1.0; 3],
        };
        assert!(SpatialOperators::<f64>::build(&bad).is_err());
    }

    #[test]
    fn norm_examples() {
        let ops = unit(16);
        let one = ops.constant(1.0);
        assert_relative_eq!(ops.l2_norm(&one).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(ops.h1_seminorm(&ops.constant(3.5)).unwrap(), 0.0);
        let lin = ops.interpolate(|x| x[0]);
        assert_relative_eq!(ops.h1_seminorm(&lin).unwrap(), 1.0, epsilon = 1e-12);
        assert!(matches!(ops.l2_norm(&[1.0; 3]), Err(Error::Shape { .. })));
        assert!(ops.l2_inner(&one, &[1.0; 2]).is_err());
    }

    #[test]
    fn operator_invariants_1d_and_2d() {
        for spec in [
            MeshSpec::interval(7, 2.5),
            MeshSpec::rectangle([4, 3], [1.0, 2.0]),
        ] {
            let ops: SpatialOperators<f64> = SpatialOperators::build(&spec).unwrap();
            let n = ops.node_count();
            let total: f64 = ops.mass().iter().sum();
            assert_relative_eq!(total, ops.measure(), epsilon = 1e-13);
            assert!(ops.mass().iter().all(|&m| m > 0.0));
            let k1 = ops.apply_stiffness(&ops.constant(1.0)).unwrap();
            assert!(k1.iter().all(|v| v.abs() < 1e-12));
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(ops.stiffness_entry(i, j), ops.stiffness_entry(j, i));
                }
            }
        }
    }

    #[test]
    fn rectangle_linear_field_gradient() {
        let ops: SpatialOperators<f64> =
            SpatialOperators::build(&MeshSpec::rectangle([5, 4], [1.0, 2.0])).unwrap();
        // |∇(x + 2y)|² = 5 integrated over area 2
        let v = ops.interpolate(|x| x[0] + 2.0 * x[1]);
        assert_relative_eq!(ops.h1_seminorm(&v).unwrap().powi(2), 10.0, epsilon = 1e-11);
        assert_eq!(ops.nodes_per_axis(), [6, 5]);
    }

    #[test]
    fn l2_norm_quadrature_is_second_order() {
        let exact = 0.2f64.sqrt();
        let err = |cells| {
            let ops = unit(cells);
            let v = ops.interpolate(|x| x[0] * x[0]);
            (ops.l2_norm(&v).unwrap() - exact).abs()
        };
        let (e1, e2) = (err(16), err(32));
        let ratio = e1 / e2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn shifted_solve_2d_uses_cg() {
        let ops: SpatialOperators<f64> =
            SpatialOperators::build(&MeshSpec::rectangle([6, 6], [1.0, 1.0])).unwrap();
        let b = ops.interpolate(|x| (3.0 * x[0]).sin() + x[1]);
        let (x, rel) = ops.solve_shifted(ops.mass(), 0.1, &b, 1e-12).unwrap();
        assert!(rel <= 1e-12);
        assert_eq!(x.len(), ops.node_count());
    }

    #[test]
    fn single_precision_operators() {
        let ops: SpatialOperators<f32> = SpatialOperators::build(&MeshSpec::interval(8, 1.0)).unwrap();
        let one = ops.constant(1.0f32);
        assert!((ops.l2_norm(&one).unwrap() - 1.0).abs() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inner_product_symmetry_and_cauchy_schwarz(
                u in proptest::collection::vec(-10.0f64..10.0, 9),
                v in proptest::collection::vec(-10.0f64..10.0, 9),
            ) {
                let ops = unit(8);
                let uv = ops.l2_inner(&u, &v).unwrap();
                let vu = ops.l2_inner(&v, &u).unwrap();
                prop_assert!((uv - vu).abs() <= 1e-12 * (1.0 + uv.abs()));
                let bound = ops.l2_norm(&u).unwrap() * ops.l2_norm(&v).unwrap();
                prop_assert!(uv.abs() <= bound * (1.0 + 1e-12) + 1e-12);
            }

            #[test]
            fn stiffness_form_is_nonnegative(v in proptest::collection::vec(-5.0f64..5.0, 20)) {
                let ops: SpatialOperators<f64> =
                    SpatialOperators::build(&MeshSpec::rectangle([4, 3], [1.0, 1.5])).unwrap();
                let kv = ops.apply_stiffness(&v).unwrap();
                let q: f64 = kv.iter().zip(&v).map(|(a, b)| a * b).sum();
                prop_assert!(q >= -1e-10);
            }
        }
    }
}
