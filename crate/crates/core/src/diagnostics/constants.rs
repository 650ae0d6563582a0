use crate::{Error, Real, Result};

/// Constants of the continuous-dependence estimate for given `C_α`, `C̄_α`, `T`.
///
/// ```text
/// Ĉ   = (C_α² + 1) / (2 C̄_α + 1) + 2
/// E   = 1 + Ĉ T e^{Ĉ T}
/// F   = (C_α² + 1) / (C̄_α + 1/2) + T/2
/// C_T = (1 / (C̄_α + 1/2) + 1) (T/2 E F + 1) + E F + 1/2
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityConstants<S> {
    pub c_alpha: S,
    pub cbar_alpha: S,
    pub horizon: S,
    pub c_hat: S,
    pub c_t: S,
}

pub fn compute_stability_constant<S: Real>(c_alpha: S, cbar_alpha: S, horizon: S) -> Result<StabilityConstants<S>> {
    for (name, v) in [("C_alpha", c_alpha), ("Cbar_alpha", cbar_alpha), ("T", horizon)] {
        if !(v > S::zero()) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
        }
    }
    let one = S::one();
    let two = S::lit(2.0);
    let half = S::lit(0.5);
    let c2 = c_alpha * c_alpha + one;
    let c_hat = c2 / (two * cbar_alpha + one) + two;
    let e = one + c_hat * horizon * (c_hat * horizon).exp();
    let f = c2 / (cbar_alpha + half) + horizon * half;
    let c_t = (one / (cbar_alpha + half) + one) * (horizon * half * e * f + one) + e * f + half;
    if !c_t.is_finite() {
        return Err(Error::invalid(format!(
            "stability constant overflows for C_alpha = {c_alpha}, Cbar_alpha = {cbar_alpha}, T = {horizon}"
        )));
    }
    Ok(StabilityConstants {
        c_alpha,
        cbar_alpha,
        horizon,
        c_hat,
        c_t,
    })
}
