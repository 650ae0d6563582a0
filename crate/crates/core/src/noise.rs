//! Brownian paths on the time grid, deterministic additive integrands and the
//! left-point Itô sums `B_n = Σ_{k<n} Δw_k h_k`.
//!
//! Paths come from a ChaCha stream keyed by `(seed, path_id)`, so path `k`
//! is reproducible regardless of which thread draws it or in which order.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::discretization::{SpatialOperators, TimeGrid};
use crate::{Error, Real, Result};

/// Increments `Δw_n = w(t_{n+1}) - w(t_n)`, `n = 0..N-1`, of one Brownian path.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath<S> {
    grid: TimeGrid<S>,
    increments: Vec<S>,
    seed: u64,
    path_id: u64,
}

impl<S: Real> BrownianPath<S> {
    /// Draws `N` independent `Normal(0, dt)` increments from the stream keyed by
    /// `(seed, path_id)`.
    pub fn sample(grid: &TimeGrid<S>, seed: u64, path_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_id);
        let scale = grid.dt().sqrt();
        let increments = (0..grid.steps())
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                S::lit(z) * scale
            })
            .collect();
        Self {
            grid: *grid,
            increments,
            seed,
            path_id,
        }
    }

    /// Path with prescribed increments (used by tests and the zero-noise case).
    pub fn from_increments(grid: &TimeGrid<S>, increments: Vec<S>) -> Result<Self> {
        Error::check_len("Brownian increments", grid.steps(), increments.len())?;
        Ok(Self {
            grid: *grid,
            increments,
            seed: 0,
            path_id: 0,
        })
    }

    pub fn zero(grid: &TimeGrid<S>) -> Self {
        Self {
            grid: *grid,
            increments: vec![S::zero(); grid.steps()],
            seed: 0,
            path_id: 0,
        }
    }

    /// Coarse path whose increments are sums of `factor` consecutive fine ones.
    pub fn aggregate(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().fold(S::zero(), |acc, &x| acc + x))
            .collect();
        Ok(Self {
            grid,
            increments,
            seed: self.seed,
            path_id: self.path_id,
        })
    }

    pub fn grid(&self) -> &TimeGrid<S> {
        &self.grid
    }

    pub fn increments(&self) -> &[S] {
        &self.increments
    }

    pub fn increment(&self, n: usize) -> S {
        self.increments[n]
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_id(&self) -> u64 {
        self.path_id
    }

    /// `w(t_n)` for `n = 0..=N`, with `w(0) = 0`.
    pub fn values(&self) -> Vec<S> {
        let mut w = Vec::with_capacity(self.steps() + 1);
        let mut acc = S::zero();
        w.push(acc);
        for &dw in &self.increments {
            acc = acc + dw;
            w.push(acc);
        }
        w
    }
}

/// Per-step integrand fields `h_0, ..., h_N`; `h_0` is the zero field.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveIntegrand<S> {
    values: Vec<Vec<S>>,
}

impl<S: Real> AdditiveIntegrand<S> {
    /// Time averages `h_n = (1/dt) ∫_{t_{n-1}}^{t_n} h(s, ·) ds` by two point
    /// Gauss quadrature, exact up to cubic time dependence. `h_0 = 0`.
    pub fn discretize(expr: &Expr, grid: &TimeGrid<S>, ops: &SpatialOperators<S>) -> Result<Self> {
        expr.check_dimension(ops.dimension())?;
        let offset = grid.dt() / (S::lit(2.0) * S::lit(3.0).sqrt());
        let half = S::lit(0.5);
        let mut values = Vec::with_capacity(grid.steps() + 1);
        values.push(ops.constant(S::zero()));
        for n in 1..=grid.steps() {
            let mid = half * (grid.node(n - 1) + grid.node(n));
            let (ta, tb) = (mid - offset, mid + offset);
            values.push(ops.interpolate(|x| half * (expr.eval(ta, x) + expr.eval(tb, x))));
        }
        Ok(Self { values })
    }

    /// Integrand with explicitly given per-step fields. Accepts either `N` or
    /// `N + 1` fields; a missing last field is filled with zeros (it never
    /// enters a partial sum).
    pub fn from_values(values: Vec<Vec<S>>, grid: &TimeGrid<S>, ops: &SpatialOperators<S>) -> Result<Self> {
        let mut values = values;
        if values.len() == grid.steps() {
            values.push(ops.constant(S::zero()));
        }
        Error::check_len("integrand steps", grid.steps() + 1, values.len())?;
        for v in &values {
            Error::check_len("integrand field", ops.node_count(), v.len())?;
        }
        Ok(Self { values })
    }

    pub fn zero(grid: &TimeGrid<S>, ops: &SpatialOperators<S>) -> Self {
        Self {
            values: vec![ops.constant(S::zero()); grid.steps() + 1],
        }
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn value(&self, n: usize) -> &[S] {
        &self.values[n]
    }

    pub fn values(&self) -> &[Vec<S>] {
        &self.values
    }
}

/// `B_n = Σ_{k=0}^{n-1} Δw_k h_k` for `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePartialSums<S> {
    sums: Vec<Vec<S>>,
}

impl<S: Real> NoisePartialSums<S> {
    pub fn compute(path: &BrownianPath<S>, integrand: &AdditiveIntegrand<S>) -> Result<Self> {
        Error::check_len("partial sums", integrand.steps(), path.steps())?;
        let p = integrand.value(0).len();
        let mut sums = Vec::with_capacity(path.steps() + 1);
        let mut acc = vec![S::zero(); p];
        sums.push(acc.clone());
        for (n, &dw) in path.increments().iter().enumerate() {
            for (a, &h) in acc.iter_mut().zip(integrand.value(n)) {
                *a = *a + dw * h;
            }
            sums.push(acc.clone());
        }
        Ok(Self { sums })
    }

    pub fn get(&self, n: usize) -> &[S] {
        &self.sums[n]
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }
}

/// Free-function forms of the constructors above.
pub fn sample_path<S: Real>(grid: &TimeGrid<S>, seed: u64, path_id: u64) -> BrownianPath<S> {
    BrownianPath::sample(grid, seed, path_id)
}

pub fn aggregate_path<S: Real>(fine: &BrownianPath<S>, factor: usize) -> Result<BrownianPath<S>> {
    fine.aggregate(factor)
}

pub fn discretize_integrand<S: Real>(
    expr: &Expr,
    grid: &TimeGrid<S>,
    ops: &SpatialOperators<S>,
) -> Result<AdditiveIntegrand<S>> {
    AdditiveIntegrand::discretize(expr, grid, ops)
}

pub fn partial_sums<S: Real>(
    path: &BrownianPath<S>,
    integrand: &AdditiveIntegrand<S>,
) -> Result<NoisePartialSums<S>> {
    NoisePartialSums::compute(path, integrand)
}

// ---------------------------------------------------------------------------
// Expression mini-language
// ---------------------------------------------------------------------------

/// A scalar field `h(t, x)` (or `h(t, x, y)` in 2D) from a small grammar:
///
/// ```text
/// expr   := term (('+' | '-') term)*
/// term   := unary (('*' | '/') unary)*        divisors must be constant
/// unary  := '-' unary | power
/// power  := atom ('^' integer)?
/// atom   := number | 'pi' | 't' | 'x' | 'y' | 'cos' '(' expr ')' | '(' expr ')'
/// ```
///
/// Arguments of `cos` may not depend on `t`, so the time dependence of every
/// expression stays polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Time,
    Space(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, u32),
    Cos(Box<Node>),
}

impl Node {
    fn eval<S: Real>(&self, t: S, x: &[S]) -> S {
        match self {
            Node::Const(c) => S::lit(*c),
            Node::Time => t,
            Node::Space(i) => x.get(*i).copied().unwrap_or_else(S::zero),
            Node::Neg(a) => -a.eval(t, x),
            Node::Add(a, b) => a.eval(t, x) + b.eval(t, x),
            Node::Sub(a, b) => a.eval(t, x) - b.eval(t, x),
            Node::Mul(a, b) => a.eval(t, x) * b.eval(t, x),
            Node::Div(a, b) => a.eval(t, x) / b.eval(t, x),
            Node::Pow(a, k) => a.eval(t, x).powi(*k as i32),
            Node::Cos(a) => a.eval(t, x).cos(),
        }
    }

    fn depends_on_time(&self) -> bool {
        self.any(&|n| matches!(n, Node::Time))
    }

    fn is_constant(&self) -> bool {
        !self.any(&|n| matches!(n, Node::Time | Node::Space(_)))
    }

    fn max_axis(&self) -> Option<usize> {
        match self {
            Node::Space(i) => Some(*i),
            Node::Const(_) | Node::Time => None,
            Node::Neg(a) | Node::Pow(a, _) | Node::Cos(a) => a.max_axis(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.max_axis().max(b.max_axis())
            }
        }
    }

    fn any(&self, pred: &dyn Fn(&Node) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Node::Const(_) | Node::Time | Node::Space(_) => false,
            Node::Neg(a) | Node::Pow(a, _) | Node::Cos(a) => a.any(pred),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => a.any(pred) || b.any(pred),
        }
    }
}

impl Expr {
    pub fn parse(source: &str) -> Result<Self> {
        let tokens = tokenize(source)?;
        let mut p = Parser { tokens, pos: 0 };
        let root = p.expr()?;
        if let Some((tok, col)) = p.tokens.get(p.pos) {
            return Err(Error::Parse {
                column: *col,
                message: format!("unexpected {tok:?}"),
            });
        }
        Ok(Self {
            source: source.trim().to_string(),
            root,
        })
    }

    /// Constant expression `c`.
    pub fn constant(c: f64) -> Self {
        Self {
            source: format!("{c:?}"),
            root: Node::Const(c),
        }
    }

    pub fn eval<S: Real>(&self, t: S, x: &[S]) -> S {
        self.root.eval(t, x)
    }

    pub fn depends_on_time(&self) -> bool {
        self.root.depends_on_time()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn check_dimension(&self, dimension: usize) -> Result<()> {
        match self.root.max_axis() {
            Some(axis) if axis >= dimension => Err(Error::invalid(format!(
                "expression `{}` uses `y` on a {dimension}D mesh",
                self.source
            ))),
            _ => Ok(()),
        }
    }
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part: 1e-3, 2.5E+4
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| Error::Parse {
                column: col,
                message: format!("bad number `{text}`"),
            })?;
            out.push((Tok::Num(v), col));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), col));
            i += 1;
        } else {
            return Err(Error::Parse {
                column: col,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some((Tok::Op(c), _)) => Some(*c),
            _ => None,
        }
    }

    fn column(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or_else(|| self.tokens.last().map_or(1, |(_, c)| c + 1))
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            column: self.column(),
            message: message.into(),
        })
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.peek_op() == Some(op) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{op}`"))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let col = self.column();
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                if !rhs.is_constant() {
                    return Err(Error::Parse {
                        column: col,
                        message: "division only by constants".into(),
                    });
                }
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            match self.tokens.get(self.pos) {
                Some((Tok::Num(k), _)) if k.fract() == 0.0 && *k >= 0.0 && *k <= 64.0 => {
                    let k = *k as u32;
                    self.pos += 1;
                    return Ok(Node::Pow(Box::new(base), k));
                }
                _ => return self.err("exponent must be a non-negative integer"),
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let Some((tok, _)) = self.tokens.get(self.pos).cloned() else {
            return self.err("unexpected end of expression");
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Tok::Op('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => match name.as_str() {
                "pi" => {
                    self.pos += 1;
                    Ok(Node::Const(std::f64::consts::PI))
                }
                "t" => {
                    self.pos += 1;
                    Ok(Node::Time)
                }
                "x" => {
                    self.pos += 1;
                    Ok(Node::Space(0))
                }
                "y" => {
                    self.pos += 1;
                    Ok(Node::Space(1))
                }
                "cos" => {
                    self.pos += 1;
                    self.expect('(')?;
                    let col = self.column();
                    let arg = self.expr()?;
                    self.expect(')')?;
                    if arg.depends_on_time() {
                        return Err(Error::Parse {
                            column: col,
                            message: "cos argument may not depend on t".into(),
                        });
                    }
                    Ok(Node::Cos(Box::new(arg)))
                }
                other => self.err(format!("unknown identifier `{other}`")),
            },
            Tok::Op(c) => self.err(format!("unexpected `{c}`")),
        }
    }
}
