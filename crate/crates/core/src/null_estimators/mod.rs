//! Null-proportion and null-law estimators.
//!
//! Everything here is a pure function of its input slice; any sorting works
//! on a private copy.

mod efron;
mod grenander;
mod jincai;

pub use efron::{efron_empirical_null, EmpiricalNull};
pub use grenander::{grenander_nonnull_cdf, MonotoneCdf};
pub use jincai::jincai_nonnull_proportion;

use crate::error::{Error, Result};

/// Composite-null component proportions `(π₀₀, π₀₁, π₁₀)`.
///
/// `pi01` is the share with `α = 0, β ≠ 0`; `pi10` the share with
/// `α ≠ 0, β = 0`. Whatever is left over is the alternative `π₁₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullProportions {
    pub pi00: f64,
    pub pi01: f64,
    pub pi10: f64,
}

impl NullProportions {
    pub fn new(pi00: f64, pi01: f64, pi10: f64) -> Result<Self> {
        let props = Self { pi00, pi01, pi10 };
        props.validate()?;
        Ok(props)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(in_unit(self.pi00) && in_unit(self.pi01) && in_unit(self.pi10)) {
            return Err(Error::domain(format!("proportions must lie in [0, 1]: {self:?}")));
        }
        if self.total() > 1.0 + 1e-9 {
            return Err(Error::domain(format!("proportions sum above 1: {self:?}")));
        }
        Ok(())
    }

    /// `π₀₀ + π₀₁ + π₁₀`.
    pub fn total(&self) -> f64 {
        self.pi00 + self.pi01 + self.pi10
    }

    pub fn pi11(&self) -> f64 {
        (1.0 - self.total()).max(0.0)
    }

    pub fn max_component(&self) -> f64 {
        self.pi00.max(self.pi01).max(self.pi10)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("lambda must lie in (0, 1), got {lambda}")))
    }
}

/// Storey's estimate of the null proportion, `min(1, #{p > λ} / ((1-λ)J))`.
pub fn storey_pi0(pvalues: &[f64], lambda: f64) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(Error::domain("storey_pi0 needs at least one p-value"));
    }
    check_lambda(lambda)?;
    let above = pvalues.iter().filter(|&&p| p > lambda).count();
    Ok((above as f64 / ((1.0 - lambda) * pvalues.len() as f64)).min(1.0))
}

/// Significance level of the uniformity screen in [`estimate_proportions`].
pub const UNIFORMITY_LEVEL: f64 = 0.05;

/// One-sided Kolmogorov–Smirnov test of `U(0, 1)` against p-values that are
/// stochastically smaller. Returns the asymptotic p-value `exp(-2nD⁺²)`
/// with `D⁺ = max_i (i/n - p₍ᵢ₎)`.
pub fn ks_uniform_smaller_pvalue(pvalues: &[f64]) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(Error::domain("KS test needs at least one p-value"));
    }
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let d = sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| (i + 1) as f64 / n - p)
        .fold(0.0, f64::max);
    Ok((-2.0 * n * d * d).exp().min(1.0))
}

/// Estimates `(π₀₀, π₀₁, π₁₀)` from the two marginal p-value vectors.
///
/// The marginal null shares `π̂α₀ = π₀₀ + π₀₁` and `π̂β₀ = π₀₀ + π₁₀` come
/// from [`storey_pi0`], except that a margin whose p-values pass the
/// uniformity screen ([`ks_uniform_smaller_pvalue`] above
/// [`UNIFORMITY_LEVEL`]) is taken to be entirely null. The joint share is the
/// tail count `π̂₀₀ = min(1, #{pα > λ, pβ > λ} / ((1-λ)²J))`.
///
/// The single-null shares are the marginal excesses `π̂α₀ − π̂₀₀` and
/// `π̂β₀ − π̂₀₀` (floored at 0). If a margin is entirely null the other
/// single-null share is 0 and `π̂₀₀` absorbs the rest. If the three shares
/// exceed 1, `π₁₁` is taken as 0 and the shares become `1 − π̂β₀`,
/// `1 − π̂α₀` and their complement.
pub fn estimate_proportions(p_alpha: &[f64], p_beta: &[f64], lambda: f64) -> Result<NullProportions> {
    if p_alpha.len() != p_beta.len() {
        return Err(Error::domain(format!(
            "p-value vectors differ in length ({} vs {})",
            p_alpha.len(),
            p_beta.len()
        )));
    }
    let marginal = |p: &[f64]| -> Result<f64> {
        if ks_uniform_smaller_pvalue(p)? > UNIFORMITY_LEVEL {
            Ok(1.0)
        } else {
            storey_pi0(p, lambda)
        }
    };
    let alpha0 = marginal(p_alpha)?;
    let beta0 = marginal(p_beta)?;
    let both = p_alpha
        .iter()
        .zip(p_beta)
        .filter(|(&a, &b)| a > lambda && b > lambda)
        .count();
    let joint = (both as f64 / ((1.0 - lambda).powi(2) * p_alpha.len() as f64)).min(1.0);

    let all_null = NullProportions {
        pi00: 1.0,
        pi01: 0.0,
        pi10: 0.0,
    };
    if joint >= 1.0 {
        return Ok(all_null);
    }
    let props = match (alpha0 >= 1.0, beta0 >= 1.0) {
        (true, true) => all_null,
        (true, false) => {
            let pi01 = (1.0 - joint).max(0.0);
            NullProportions {
                pi00: 1.0 - pi01,
                pi01,
                pi10: 0.0,
            }
        }
        (false, true) => {
            let pi10 = (1.0 - joint).max(0.0);
            NullProportions {
                pi00: 1.0 - pi10,
                pi01: 0.0,
                pi10,
            }
        }
        (false, false) => {
            let pi01 = (alpha0 - joint).max(0.0);
            let pi10 = (beta0 - joint).max(0.0);
            if joint + pi01 + pi10 > 1.0 {
                let (pi01, pi10) = (1.0 - beta0, 1.0 - alpha0);
                let excess = pi01 + pi10;
                if excess > 1.0 {
                    NullProportions {
                        pi00: 0.0,
                        pi01: pi01 / excess,
                        pi10: pi10 / excess,
                    }
                } else {
                    NullProportions {
                        pi00: 1.0 - excess,
                        pi01,
                        pi10,
                    }
                }
            } else {
                NullProportions {
                    pi00: joint,
                    pi01,
                    pi10,
                }
            }
        }
    };
    Ok(props)
}
