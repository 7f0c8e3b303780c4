use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

const BINS: usize = 50;
const MIN_POINTS: usize = 100;

/// Fitted empirical null `N(mean, sd²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalNull {
    pub mean: f64,
    pub sd: f64,
}

/// Central-matching fit of an empirical null.
///
/// The central `center_fraction` quantile window of `zscores` is binned into
/// 50 equal bins, and a quadratic `a + b·z + c·z²` is fitted to the log
/// counts by count-weighted least squares. A normal density has
/// `log f = const - (z-δ)²/(2σ²)`, so `σ² = -1/(2c)` and `δ = -b/(2c)`.
pub fn efron_empirical_null(zscores: &[f64], center_fraction: f64) -> Result<EmpiricalNull> {
    if zscores.len() < MIN_POINTS {
        return Err(Error::domain(format!(
            "empirical null needs at least {MIN_POINTS} z-scores, got {}",
            zscores.len()
        )));
    }
    if !(center_fraction > 0.0 && center_fraction <= 1.0) {
        return Err(Error::domain(format!(
            "center_fraction must lie in (0, 1], got {center_fraction}"
        )));
    }
    if let Some(z) = zscores.iter().find(|z| !z.is_finite()) {
        return Err(Error::domain(format!("empirical null needs finite z-scores, got {z}")));
    }
    let mut sorted = zscores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let last = (sorted.len() - 1) as f64;
    let lo = sorted[(0.5 * (1.0 - center_fraction) * last).round() as usize];
    let hi = sorted[(0.5 * (1.0 + center_fraction) * last).round() as usize];
    if !(hi > lo) {
        return Err(Error::Calibration("central window of the z-scores has zero width".into()));
    }

    let width = (hi - lo) / BINS as f64;
    let mut counts = [0u64; BINS];
    for &z in sorted.iter().filter(|&&z| z >= lo && z <= hi) {
        let k = (((z - lo) / width) as usize).min(BINS - 1);
        counts[k] += 1;
    }

    // centre the abscissa for conditioning
    let mid = 0.5 * (lo + hi);
    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = Vector3::<f64>::zeros();
    let mut used = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            continue;
        }
        used += 1;
        let x = lo + (k as f64 + 0.5) * width - mid;
        let row = Vector3::new(1.0, x, x * x);
        let w = c as f64;
        xtx += w * row * row.transpose();
        xty += w * (c as f64).ln() * row;
    }
    if used < 3 {
        return Err(Error::Calibration(format!(
            "only {used} occupied histogram bins in the central window"
        )));
    }
    let coef = xtx
        .lu()
        .solve(&xty)
        .ok_or_else(|| Error::Calibration("singular central-matching system".into()))?;
    let (b, c) = (coef[1], coef[2]);
    if !(c < 0.0) || !c.is_finite() {
        return Err(Error::Calibration(format!(
            "fitted log-density is not concave (curvature {c:.3e})"
        )));
    }
    let var = -0.5 / c;
    Ok(EmpiricalNull {
        mean: mid + b * var,
        sd: var.sqrt().max(1e-3),
    })
}
