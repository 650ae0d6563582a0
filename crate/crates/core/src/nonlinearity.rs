//! The monotone pointwise map `alpha` and `alpha~ = Id + alpha`.
//!
//! Every nonlinearity carries a declared Lipschitz constant `C_alpha` and a
//! coercivity constant `Cbar_alpha`:
//!
//! ```text
//! |alpha(x) - alpha(y)|         <= C_alpha    |x - y|
//! (alpha(x) - alpha(y))(x - y)  >= Cbar_alpha (x - y)²
//! ```
//!
//! The step size restriction of the inner fixed point and the stability
//! constant are computed from these declared values, so a wrong declaration
//! silently voids those guarantees. [`Nonlinearity::check_properties`] audits
//! them by sampling.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Real, Result};

type ScalarFn<S> = Arc<dyn Fn(S) -> S + Send + Sync>;

#[derive(Clone)]
enum Kind<S> {
    Linear { slope: S },
    Saturating { gain: S },
    Ramp { knee: S, inner: S, outer: S },
    Custom {
        name: String,
        alpha: ScalarFn<S>,
        derivative: Option<ScalarFn<S>>,
    },
}

#[derive(Clone)]
pub struct Nonlinearity<S> {
    kind: Kind<S>,
    lipschitz: S,
    coercivity: S,
}

impl<S: Real> fmt::Debug for Nonlinearity<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name())
            .field("lipschitz", &self.lipschitz)
            .field("coercivity", &self.coercivity)
            .finish()
    }
}

fn positive<S: Real>(what: &str, v: S) -> Result<()> {
    if v > S::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} must be positive, got {v}")))
    }
}

impl<S: Real> Nonlinearity<S> {
    /// `alpha(x) = c x`, with `C_alpha = Cbar_alpha = c`.
    pub fn linear(slope: S) -> Result<Self> {
        positive("linear slope", slope)?;
        Ok(Self {
            kind: Kind::Linear { slope },
            lipschitz: slope,
            coercivity: slope,
        })
    }

    /// `alpha(x) = x + a x / (1 + |x|)`, so `1 <= alpha' <= 1 + a`.
    pub fn saturating(gain: S) -> Result<Self> {
        if !(gain >= S::zero()) || !gain.is_finite() {
            return Err(Error::invalid(format!("saturating gain must be non-negative, got {gain}")));
        }
        Ok(Self {
            kind: Kind::Saturating { gain },
            lipschitz: S::one() + gain,
            coercivity: S::one(),
        })
    }

    /// Odd piecewise-linear ramp: slope `inner` on `[-knee, knee]`, slope
    /// `outer` beyond.
    pub fn ramp(knee: S, inner: S, outer: S) -> Result<Self> {
        positive("ramp knee", knee)?;
        positive("ramp inner slope", inner)?;
        positive("ramp outer slope", outer)?;
        Ok(Self {
            kind: Kind::Ramp { knee, inner, outer },
            lipschitz: inner.max(outer),
            coercivity: inner.min(outer),
        })
    }

    /// User-supplied `alpha` with declared constants. Without a derivative the
    /// central finite difference fallback is used.
    pub fn custom(
        name: impl Into<String>,
        alpha: impl Fn(S) -> S + Send + Sync + 'static,
        derivative: Option<ScalarFn<S>>,
        lipschitz: S,
        coercivity: S,
    ) -> Result<Self> {
        positive("declared Lipschitz constant", lipschitz)?;
        positive("declared coercivity constant", coercivity)?;
        Ok(Self {
            kind: Kind::Custom {
                name: name.into(),
                alpha: Arc::new(alpha),
                derivative,
            },
            lipschitz,
            coercivity,
        })
    }

    pub fn name(&self) -> String {
        match &self.kind {
            Kind::Linear { slope } => format!("linear({slope})"),
            Kind::Saturating { gain } => format!("saturating({gain})"),
            Kind::Ramp { knee, inner, outer } => format!("ramp({knee}, {inner}, {outer})"),
            Kind::Custom { name, .. } => name.clone(),
        }
    }

    /// Declared `C_alpha`.
    pub fn lipschitz(&self) -> S {
        self.lipschitz
    }

    /// Declared `Cbar_alpha`.
    pub fn coercivity(&self) -> S {
        self.coercivity
    }

    /// Coercivity of `alpha~`, i.e. `1 + Cbar_alpha`.
    pub fn coercivity_tilde(&self) -> S {
        S::one() + self.coercivity
    }

    pub fn alpha(&self, x: S) -> S {
        match &self.kind {
            Kind::Linear { slope } => *slope * x,
            Kind::Saturating { gain } => x + *gain * x / (S::one() + x.abs()),
            Kind::Ramp { knee, inner, outer } => {
                if x.abs() <= *knee {
                    *inner * x
                } else {
                    x.signum() * (*inner * *knee + *outer * (x.abs() - *knee))
                }
            }
            Kind::Custom { alpha, .. } => alpha(x),
        }
    }

    /// Derivative of `alpha`; a generalized derivative at kinks.
    pub fn alpha_prime(&self, x: S) -> S {
        match &self.kind {
            Kind::Linear { slope } => *slope,
            Kind::Saturating { gain } => {
                let d = S::one() + x.abs();
                S::one() + *gain / (d * d)
            }
            Kind::Ramp { knee, inner, outer } => {
                if x.abs() <= *knee {
                    *inner
                } else {
                    *outer
                }
            }
            Kind::Custom {
                derivative: Some(d), ..
            } => d(x),
            Kind::Custom { alpha, .. } => {
                let h = S::lit(1.0e-6) * S::one().max(x.abs());
                (alpha(x + h) - alpha(x - h)) / (h + h)
            }
        }
    }

    pub fn alpha_tilde(&self, x: S) -> S {
        x + self.alpha(x)
    }

    pub fn alpha_tilde_prime(&self, x: S) -> S {
        S::one() + self.alpha_prime(x)
    }

    /// Samples `samples` pairs uniformly in `[-range, range]²` and reports the
    /// extreme difference quotients of `alpha`.
    pub fn check_properties(&self, range: S, samples: usize, seed: u64) -> PropertyReport<S> {
        let mut report = sample_quotients(|x| self.alpha(x), range, samples, seed);
        report.declared_lipschitz = self.lipschitz;
        report.declared_coercivity = self.coercivity;
        report.finish()
    }

    /// Same audit for `alpha~` against `1 + C_alpha` and `1 + Cbar_alpha`.
    pub fn check_tilde_properties(&self, range: S, samples: usize, seed: u64) -> PropertyReport<S> {
        let mut report = sample_quotients(|x| self.alpha_tilde(x), range, samples, seed);
        report.declared_lipschitz = S::one() + self.lipschitz;
        report.declared_coercivity = S::one() + self.coercivity;
        report.finish()
    }
}

/// Outcome of a sampled audit of declared constants.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyReport<S> {
    pub worst_lipschitz: S,
    pub worst_coercivity: S,
    pub declared_lipschitz: S,
    pub declared_coercivity: S,
    pub value_at_zero: S,
    pub monotone: bool,
    pub pass: bool,
}

impl<S: Real> PropertyReport<S> {
    fn finish(mut self) -> Self {
        let slack = S::lit(1.0e-9);
        self.pass = self.worst_lipschitz <= self.declared_lipschitz * (S::one() + slack)
            && self.worst_coercivity >= self.declared_coercivity * (S::one() - slack)
            && self.value_at_zero == S::zero()
            && self.monotone;
        self
    }
}

fn sample_quotients<S: Real>(f: impl Fn(S) -> S, range: S, samples: usize, seed: u64) -> PropertyReport<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = range.as_f64();
    let mut worst_lip = S::zero();
    let mut worst_coer = S::infinity();
    let mut monotone = true;
    for _ in 0..samples.max(1) {
        let x = S::lit(rng.random_range(-r..=r));
        let y = S::lit(rng.random_range(-r..=r));
        if x == y {
            continue;
        }
        let (fx, fy) = (f(x), f(y));
        let q = (fx - fy) / (x - y);
        worst_lip = worst_lip.max(q.abs());
        worst_coer = worst_coer.min(q);
        if (x < y && fx > fy) || (y < x && fy > fx) {
            monotone = false;
        }
    }
    PropertyReport {
        worst_lipschitz: worst_lip,
        worst_coercivity: worst_coer,
        declared_lipschitz: S::zero(),
        declared_coercivity: S::zero(),
        value_at_zero: f(S::zero()),
        monotone,
        pass: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_tilde_examples() {
        let id = Nonlinearity::linear(1.0).unwrap();
        assert_eq!(id.alpha_tilde(3.0), 6.0);
        let half = Nonlinearity::linear(0.5).unwrap();
        assert_eq!(half.alpha_tilde(2.0), 3.0);
        for nl in [
            id,
            half,
            Nonlinearity::saturating(0.25).unwrap(),
            Nonlinearity::ramp(0.5, 1.0, 3.0).unwrap(),
        ] {
            assert_eq!(nl.alpha_tilde(0.0), 0.0);
        }
    }

    #[test]
    fn constants() {
        let nl = Nonlinearity::linear(2.0).unwrap();
        assert_eq!((nl.lipschitz(), nl.coercivity(), nl.coercivity_tilde()), (2.0, 2.0, 3.0));
        let nl = Nonlinearity::ramp(1.0, 0.5, 2.0).unwrap();
        assert_eq!((nl.lipschitz(), nl.coercivity()), (2.0, 0.5));
        assert!(Nonlinearity::linear(0.0).is_err());
        assert!(Nonlinearity::saturating(-1.0).is_err());
        assert!(Nonlinearity::ramp(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn linear_passes_audit() {
        for c in [0.3, 1.0, 4.0] {
            let nl = Nonlinearity::linear(c).unwrap();
            let report = nl.check_properties(10.0, 2000, 1);
            assert!(report.pass, "{report:?}");
            assert!(nl.check_tilde_properties(10.0, 2000, 1).pass);
        }
    }

    #[test]
    fn cubic_with_wrong_constant_fails() {
        let nl = Nonlinearity::custom("cubic", |x: f64| x * x * x, None, 1.0, 1.0).unwrap();
        let report = nl.check_properties(10.0, 2000, 7);
        assert!(!report.pass);
        // x² + xy + y² ≤ 300 on [-10, 10]²
        assert!(report.worst_lipschitz > 100.0 && report.worst_lipschitz <= 300.0);
    }

    #[test]
    fn saturating_passes_with_analytic_constants() {
        let nl = Nonlinearity::saturating(0.25).unwrap();
        assert_eq!(nl.lipschitz(), 1.25);
        assert_eq!(nl.coercivity(), 1.0);
        assert!(nl.check_properties(10.0, 5000, 3).pass);
        assert!(nl.check_tilde_properties(10.0, 5000, 3).pass);
    }

    #[test]
    fn understated_coercivity_detected() {
        let nl = Nonlinearity::custom("lin", |x: f64| 0.5 * x, None, 0.5, 0.8).unwrap();
        assert!(!nl.check_properties(1.0, 100, 0).pass);
    }

    #[test]
    fn nonzero_at_origin_fails() {
        let nl = Nonlinearity::custom("shifted", |x: f64| x + 1.0, None, 1.0, 1.0).unwrap();
        let report = nl.check_properties(1.0, 100, 0);
        assert_eq!(report.value_at_zero, 1.0);
        assert!(!report.pass);
    }

    #[test]
    fn finite_difference_fallback() {
        let nl = Nonlinearity::custom("sat", |x: f64| x + 0.25 * x / (1.0 + x.abs()), None, 1.25, 1.0).unwrap();
        let exact = Nonlinearity::saturating(0.25).unwrap();
        for x in [-3.0, -0.5, 0.7, 12.0] {
            assert!((nl.alpha_prime(x) - exact.alpha_prime(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn ramp_is_continuous_at_knee() {
        let nl = Nonlinearity::ramp(0.5f64, 1.0, 3.0).unwrap();
        let below = nl.alpha(0.5);
        let above = nl.alpha(0.5 + 1e-12);
        assert!((above - below).abs() < 1e-10);
        assert_eq!(nl.alpha(-1.0), -(0.5 + 1.5));
        assert!(nl.check_properties(5.0, 2000, 9).pass);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_builtins(x in -50.0f64..50.0, y in -50.0f64..50.0, g in 0.0f64..3.0) {
                let nl = Nonlinearity::saturating(g).unwrap();
                if x < y {
                    prop_assert!(nl.alpha(x) <= nl.alpha(y));
                }
                let (lo, hi) = (x.min(y), x.max(y));
                prop_assert!(nl.alpha_tilde(hi) - nl.alpha_tilde(lo) >= 2.0 * (hi - lo) * (1.0 - 1e-12));
            }
        }
    }
}
