use crate::error::{Error, Result};

/// Piecewise-linear, nondecreasing, concave CDF on `[0, 1]`, stored as its
/// knots. Always starts at `(0, 0)` and ends at `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCdf {
    knots: Vec<(f64, f64)>,
}

impl MonotoneCdf {
    /// The uniform CDF `t ↦ t`.
    pub fn identity() -> Self {
        Self {
            knots: vec![(0.0, 0.0), (1.0, 1.0)],
        }
    }

    /// Builds a CDF from explicit knots. They must start at `(0, 0)`, end at
    /// `(1, 1)`, and be strictly increasing in `t` and nondecreasing in value.
    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self> {
        let ok_ends = knots.first() == Some(&(0.0, 0.0)) && knots.last() == Some(&(1.0, 1.0));
        let ok_order = knots.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        if !(ok_ends && ok_order) {
            return Err(Error::domain("CDF knots must run monotonically from (0, 0) to (1, 1)"));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if t >= 1.0 {
            return 1.0;
        }
        // first knot with x >= t
        let i = self.knots.partition_point(|&(x, _)| x < t);
        let (x1, y1) = self.knots[i];
        if x1 == t {
            return y1;
        }
        let (x0, y0) = self.knots[i - 1];
        let v = y0 + (y1 - y0) * (t - x0) / (x1 - x0);
        v.clamp(0.0, 1.0)
    }
}

/// Grenander-type estimate of the non-null p-value CDF.
///
/// The empirical CDF is deconvolved from its uniform null part,
/// `F̂₁(t) = (F̂(t) - π₀t) / (1 - π₀)`, clipped into `[0, 1]`, and then
/// replaced by its least concave majorant. The derivative of the majorant is
/// the decreasing-density MLE, so this is the integrated Grenander estimator.
pub fn grenander_nonnull_cdf(pvalues: &[f64], pi0_marginal: f64) -> Result<MonotoneCdf> {
    if pvalues.is_empty() {
        return Err(Error::domain("Grenander estimate needs at least one p-value"));
    }
    if !(0.0..1.0).contains(&pi0_marginal) {
        return Err(Error::domain(format!(
            "marginal null share must lie in [0, 1) to leave non-null mass, got {pi0_marginal}"
        )));
    }
    let mut sorted: Vec<f64> = pvalues.iter().map(|p| p.clamp(0.0, 1.0)).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let scale = 1.0 - pi0_marginal;

    // The raw curve falls between ECDF jumps, so its majorant only touches
    // the post-jump values at each distinct p-value.
    let mut points = Vec::with_capacity(sorted.len() + 2);
    points.push((0.0, 0.0));
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i];
        let mut k = i + 1;
        while k < sorted.len() && sorted[k] == t {
            k += 1;
        }
        if t > 0.0 && t < 1.0 {
            let raw = ((k as f64 / n - pi0_marginal * t) / scale).clamp(0.0, 1.0);
            points.push((t, raw));
        }
        i = k;
    }
    points.push((1.0, 1.0));

    Ok(MonotoneCdf {
        knots: upper_hull(&points),
    })
}

// Upper convex hull (monotone chain) of points sorted by x.
fn upper_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let (ax, ay) = hull[hull.len() - 2];
            let (bx, by) = hull[hull.len() - 1];
            // drop b when it lies on or below the chord a → p
            let cross = (bx - ax) * (p.1 - ay) - (by - ay) * (p.0 - ax);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}
