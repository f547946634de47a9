//! Normal and chi-squared tail functions and quantiles.
//!
//! Only the one and two degree-of-freedom chi-squared laws are needed, and both
//! reduce to closed forms in `erfc`/`erfc_inv` or the exponential.

use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};

fn check_prob(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "probability must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Two-sided standard normal critical value `z_{1-alpha/2}`.
pub fn normal_two_sided(alpha: f64) -> Result<f64> {
    check_prob(alpha)?;
    Ok(std::f64::consts::SQRT_2 * erfc_inv(alpha))
}

/// Upper `1 - alpha` quantile of the chi-squared law with one degree of freedom.
pub fn chi2_1_quantile(alpha: f64) -> Result<f64> {
    let z = normal_two_sided(alpha)?;
    Ok(z * z)
}

/// Upper `1 - alpha` quantile of the chi-squared law with two degrees of freedom.
pub fn chi2_2_quantile(alpha: f64) -> Result<f64> {
    check_prob(alpha)?;
    Ok(-2.0 * alpha.ln())
}

/// `P(Z^2 > x)` for `Z` standard normal.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else {
        erfc((0.5 * x).sqrt())
    }
}

/// `P(X > x)` for `X` chi-squared with two degrees of freedom.
pub fn chi2_2_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        (-0.5 * x).exp()
    }
}
