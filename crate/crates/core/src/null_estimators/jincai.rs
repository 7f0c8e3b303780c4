use crate::error::{Error, Result};

const FINE_STEPS: usize = 200;

/// Jin–Cai estimate of the non-null share among z-scores whose null law is
/// `N(0, 1)`.
///
/// For a frequency `t` the estimator is
///
/// ```text
/// ε̂(t) = 1 - ∫₀¹ ω(ξ) e^{(tξ)²/2} Re φ̂(tξ) dξ,   ω(ξ) = 2(1 - ξ)
/// ```
///
/// with `φ̂` the empirical characteristic function. Null components
/// contribute exactly 1 to the integral; a component `N(μ, 1)` contributes
/// the Fejér-type factor `2(1 - cos μt)/(μt)²`, which vanishes as `t` grows.
/// The estimate is the largest `ε̂(t)` over 100 equally spaced frequencies
/// in `(0, √(2γ log J)]`, clipped to `[0, 1]`; `γ < 1/2` bounds the noise
/// amplification `e^{t²/2} ≤ J^γ`.
pub fn jincai_nonnull_proportion(zscores: &[f64], gamma: f64) -> Result<f64> {
    if zscores.is_empty() {
        return Err(Error::domain("Jin-Cai estimate needs at least one z-score"));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::domain(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if let Some(z) = zscores.iter().find(|z| !z.is_finite()) {
        return Err(Error::domain(format!("Jin-Cai estimate needs finite z-scores, got {z}")));
    }
    let j = zscores.len() as f64;
    let t_max = (2.0 * gamma * j.ln()).sqrt();
    if t_max == 0.0 {
        return Ok(0.0);
    }
    let ds = t_max / FINE_STEPS as f64;

    // Re φ̂ on the fine grid s_m = m·ds via the Chebyshev recurrence
    // cos((m+1)θ) = 2cos θ cos(mθ) - cos((m-1)θ).
    let mut ecf = vec![0.0f64; FINE_STEPS + 1];
    for &z in zscores {
        let c1 = (ds * z).cos();
        let mut prev = 1.0;
        let mut cur = c1;
        ecf[0] += 1.0;
        ecf[1] += c1;
        for slot in ecf.iter_mut().skip(2) {
            let next = 2.0 * c1 * cur - prev;
            prev = cur;
            cur = next;
            *slot += cur;
        }
    }

    // running trapezoid integrals of g(s) = e^{s²/2} φ̂(s) and s·g(s)
    let g = |m: usize| {
        let s = m as f64 * ds;
        (0.5 * s * s).exp() * ecf[m] / j
    };
    let mut best = 0.0f64;
    let mut int_g = 0.0;
    let mut int_sg = 0.0;
    let mut g_prev = g(0);
    for m in 1..=FINE_STEPS {
        let g_cur = g(m);
        let (s0, s1) = ((m - 1) as f64 * ds, m as f64 * ds);
        int_g += 0.5 * ds * (g_prev + g_cur);
        int_sg += 0.5 * ds * (s0 * g_prev + s1 * g_cur);
        g_prev = g_cur;
        if m % 2 == 0 {
            let t = s1;
            // ∫₀¹ 2(1-ξ) e^{(tξ)²/2} φ̂(tξ) dξ = (2/t) ∫₀ᵗ (1 - s/t) g(s) ds
            let weighted = 2.0 / t * (int_g - int_sg / t);
            best = best.max(1.0 - weighted);
        }
    }
    Ok(best.clamp(0.0, 1.0))
}
