//! Minimal sparse kernels for the SPD systems `(diag(d) + c K) x = b`.

use crate::{Error, Real, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<S> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<S>,
}

impl<S: Real> CsrMatrix<S> {
    /// Builds from per-row `(column, value)` lists. Duplicate columns are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, S)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    let end = vals.len() - 1;
                    vals[end] = vals[end] + v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.row(i).find(|&(c, _)| c == j).map_or(S::zero(), |(_, v)| v)
    }

    pub fn mul_into(&self, x: &[S], out: &mut [S]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn mul(&self, x: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.n];
        self.mul_into(x, &mut out);
        out
    }

    pub fn diagonal(&self) -> Vec<S> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

/// Tridiagonal bands `(lower, main, upper)`, with `lower[0]` and `upper[n-1]` unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Bands<S> {
    pub lower: Vec<S>,
    pub main: Vec<S>,
    pub upper: Vec<S>,
}

impl<S: Real> Bands<S> {
    pub fn from_csr(k: &CsrMatrix<S>) -> Self {
        let n = k.dim();
        let lower = (0..n).map(|i| if i > 0 { k.get(i, i - 1) } else { S::zero() }).collect();
        let main = k.diagonal();
        let upper = (0..n)
            .map(|i| if i + 1 < n { k.get(i, i + 1) } else { S::zero() })
            .collect();
        Self { lower, main, upper }
    }
}

pub fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<S: Real>(a: &[S]) -> S {
    dot(a, a).sqrt()
}

/// Residual `b - (diag(d) + c K) x`.
pub fn shifted_residual<S: Real>(k: &CsrMatrix<S>, d: &[S], c: S, x: &[S], b: &[S]) -> Vec<S> {
    let kx = k.mul(x);
    (0..x.len()).map(|i| b[i] - d[i] * x[i] - c * kx[i]).collect()
}

/// Thomas algorithm for `(diag(d) + c K) x = b` with `K` tridiagonal.
/// The system is SPD, so no pivoting is needed.
pub fn solve_tridiagonal<S: Real>(bands: &Bands<S>, d: &[S], c: S, b: &[S]) -> Result<Vec<S>> {
    let n = b.len();
    let mut cp = vec![S::zero(); n];
    let mut dp = vec![S::zero(); n];
    let mut denom = d[0] + c * bands.main[0];
    if !(denom > S::zero()) {
        return Err(Error::Numerical {
            solver: "tridiagonal solve",
            residual: f64::NAN,
            iterations: 0,
        });
    }
    if n > 1 {
        cp[0] = c * bands.upper[0] / denom;
    }
    dp[0] = b[0] / denom;
    for i in 1..n {
        let a = c * bands.lower[i];
        denom = d[i] + c * bands.main[i] - a * cp[i - 1];
        if !(denom > S::zero()) {
            return Err(Error::Numerical {
                solver: "tridiagonal solve",
                residual: f64::NAN,
                iterations: i,
            });
        }
        if i + 1 < n {
            cp[i] = c * bands.upper[i] / denom;
        }
        dp[i] = (b[i] - a * dp[i - 1]) / denom;
    }
    let mut x = dp;
    for i in (0..n.saturating_sub(1)).rev() {
        x[i] = x[i] - cp[i] * x[i + 1];
    }
    Ok(x)
}

/// Jacobi-preconditioned conjugate gradients for `(diag(d) + c K) x = b`.
pub fn solve_pcg<S: Real>(k: &CsrMatrix<S>, d: &[S], c: S, b: &[S], rel_tol: S) -> Result<Vec<S>> {
    let n = b.len();
    let kdiag = k.diagonal();
    let precond: Vec<S> = (0..n).map(|i| S::one() / (d[i] + c * kdiag[i])).collect();
    let bnorm = norm2(b);
    let mut x = vec![S::zero(); n];
    if bnorm == S::zero() {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<S> = r.iter().zip(&precond).map(|(&ri, &pi)| ri * pi).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![S::zero(); n];
    let max_iter = 10 * n + 100;
    for iter in 0..max_iter {
        k.mul_into(&p, &mut ap);
        for i in 0..n {
            ap[i] = d[i] * p[i] + c * ap[i];
        }
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] = x[i] + alpha * p[i];
            r[i] = r[i] - alpha * ap[i];
        }
        if norm2(&r) <= rel_tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * precond[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        if iter + 1 == max_iter {
            break;
        }
    }
    Err(Error::Numerical {
        solver: "conjugate gradients",
        residual: (norm2(&r) / bnorm).as_f64(),
        iterations: max_iter,
    })
}
