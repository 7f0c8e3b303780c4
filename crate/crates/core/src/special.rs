//! Normal-family distribution functions shared by every test.
//!
//! Convention: `Φ` is always the lower-tail CDF. Upper tails are computed as
//! survival functions directly (`norm_sf`), never as `1 - Φ`, so tail
//! probabilities keep their magnitude down to the subnormal range.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Lower-tail standard normal CDF. NaN propagates.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper-tail standard normal probability `P(Z > x)`.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Two-sided p-value `2(1 - Φ(|z|))` of a standard normal statistic.
#[inline]
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * norm_sf(z.abs())).min(1.0)
}

/// Checked `Φ(x)`.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("normal CDF needs a finite argument, got {x}")));
    }
    Ok(norm_cdf(x))
}

/// Checked `Φ⁻¹(p)` for `p` in the open unit interval.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    Ok(norm_quantile(p))
}

/// Unchecked `Φ⁻¹(p)`; returns ±∞ at the endpoints and NaN outside `[0, 1]`.
pub fn norm_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    if p > 0.5 {
        // 1 - p is exact for p in [0.5, 1).
        return -lower_quantile(1.0 - p);
    }
    lower_quantile(p)
}

/// Upper-tail quantile: the `x` with `P(Z > x) = q`.
pub fn norm_isf(q: f64) -> f64 {
    -norm_quantile(q)
}

// Rational starting point (Acklam) followed by Halley steps against `norm_cdf`.
fn lower_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 0.5);
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let mut x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };

    for _ in 0..2 {
        let density = norm_pdf(x);
        if density < 1e-300 {
            break;
        }
        let u = (norm_cdf(x) - p) / density;
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Two-sided tail of the product of two independent standard normals,
/// `P(|Z₁Z₂| ≥ |x|)`.
///
/// The density of `Z₁Z₂` is `K₀(|x|)/π`, so the tail equals
/// `(2/π)∫ₓ^∞ K₀`. Substituting `K₀(s) = ∫₀^∞ exp(-s cosh u) du` and
/// integrating over `s` first gives
///
/// ```text
/// F(x) = (2/π) ∫₀^∞ exp(-x cosh u) / cosh u du
/// ```
///
/// whose integrand is analytic in the strip `|Im u| < π/2`, so the plain
/// trapezoid rule converges geometrically. The step shrinks like `1/√x` to
/// track the Gaussian-width peak at `u = 0` for large `x`, and `exp(-x)` is
/// factored out so deep tails keep their relative accuracy.
pub fn product_tail(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return 1.0;
    }
    if x.is_nan() {
        return f64::NAN;
    }
    let h = if x > 23.04 { 0.6 / x.sqrt() } else { 0.125 };
    // integrand with exp(-x) removed: exp(-x (cosh u - 1)) / cosh u
    let g = |u: f64| {
        let c = u.cosh();
        // cosh u - 1 = 2 sinh²(u/2), without cancellation near 0
        let s = (0.5 * u).sinh();
        (-2.0 * x * s * s).exp() / c
    };
    let mut sum = 0.5 * g(0.0);
    let mut k = 1u32;
    loop {
        let term = g(k as f64 * h);
        sum += term;
        if term <= sum * 1e-18 || k > 100_000 {
            break;
        }
        k += 1;
    }
    (2.0 / PI) * h * sum * (-x).exp()
}

/// Checked `F(t / scale)`, where `F` is [`product_tail`].
pub fn normal_product_tail(t: f64, scale: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::domain(format!("product tail needs a finite statistic, got {t}")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::domain(format!("product tail needs scale > 0, got {scale}")));
    }
    Ok(product_tail(t / scale))
}

/// CDF of Beta(2, 1), the law of the larger of two independent uniforms.
#[inline]
pub fn beta21_cdf(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t
}

/// Two-component scale mixture `w₁·N(0,1) + w₄·N(0,1/4)` used as a null
/// reference for the magnitude of a Sobel-type statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureNormalRef {
    weight_unit: f64,
    weight_quarter: f64,
}

impl MixtureNormalRef {
    pub fn new(weight_unit: f64, weight_quarter: f64) -> Result<Self> {
        let ok = weight_unit >= 0.0
            && weight_quarter >= 0.0
            && ((weight_unit + weight_quarter) - 1.0).abs() <= 1e-9;
        if !ok {
            return Err(Error::domain(format!(
                "mixture weights must be nonnegative and sum to 1, got ({weight_unit}, {weight_quarter})"
            )));
        }
        Ok(Self {
            weight_unit,
            weight_quarter,
        })
    }

    pub fn weight_unit(&self) -> f64 {
        self.weight_unit
    }

    pub fn weight_quarter(&self) -> f64 {
        self.weight_quarter
    }

    /// Two-sided tail probability of `|stat|` under the mixture.
    #[inline]
    pub fn pvalue(&self, stat: f64) -> f64 {
        let s = stat.abs();
        let p = self.weight_unit * 2.0 * norm_sf(s) + self.weight_quarter * 2.0 * norm_sf(2.0 * s);
        p.min(1.0)
    }
}

pub fn mixture_two_sided_pvalue(stat: f64, reference: &MixtureNormalRef) -> Result<f64> {
    if !stat.is_finite() {
        return Err(Error::domain(format!("mixture p-value needs a finite statistic, got {stat}")));
    }
    Ok(reference.pvalue(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    // Composite Simpson on [a, b]; n even.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    // Φ(x) = 1/2 + ∫₀ˣ φ, by quadrature of the density only.
    fn cdf_oracle(x: f64) -> f64 {
        0.5 + simpson(|t| (-0.5 * t * t).exp() / (2.0 * PI).sqrt(), 0.0, x, 20_000)
    }

    #[test]
    fn cdf_reference_points() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        // bisection of the quadrature oracle for 0.975 lands on 1.959964
        let (mut lo, mut hi) = (1.0, 3.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cdf_oracle(mid) < 0.975 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 1.959964).abs() < 1e-6, "oracle root {lo}");
        assert!((std_normal_cdf(1.959964).unwrap() - 0.975).abs() < 1e-6);
        for &x in &[-3.0, -1.0, 0.3, 2.5] {
            assert!((norm_cdf(x) - cdf_oracle(x)).abs() < 1e-13, "x = {x}");
        }
    }

    #[test]
    fn cdf_deep_tail_stays_positive() {
        let v = std_normal_cdf(-38.0).unwrap();
        assert!(v > 0.0 && v < 1e-300, "{v}");
        assert!(norm_sf(38.0) > 0.0);
        assert!(std_normal_cdf(f64::NAN).is_err());
        assert!(std_normal_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn quantile_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert!((std_normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-5);
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(-0.1).is_err());
        for &p in &[1e-300, 1e-100, 1e-20, 1e-7, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-12] {
            let x = norm_quantile(p);
            let back = norm_cdf(x);
            assert!((back - p).abs() < 1e-12, "p = {p}");
            if p < 0.5 {
                assert!(((back - p) / p).abs() < 1e-12, "relative at p = {p}");
            }
        }
    }

    #[test]
    fn quantile_round_trip() {
        // Φ(x) sits within 1e-8 of 1.0 above x ≈ 5.6, where binary64 spacing
        // near 1 no longer resolves x to 1e-9; the upper half goes through
        // the survival pair instead.
        let mut x = -8.0;
        while x <= 8.0 {
            let lower = norm_quantile(norm_cdf(x));
            let upper = norm_isf(norm_sf(x));
            if x >= 0.0 {
                assert!((upper - x).abs() < 1e-9, "x = {x}, isf(sf) = {upper}");
            }
            if x <= 5.0 {
                assert!((lower - x).abs() < 1e-9, "x = {x}, quantile(cdf) = {lower}");
            }
            x += 0.01;
        }
    }

    #[test]
    fn product_tail_basics() {
        assert_eq!(normal_product_tail(0.0, 1.0).unwrap(), 1.0);
        assert!(normal_product_tail(1.0, 0.0).is_err());
        assert!(normal_product_tail(1.0, -2.0).is_err());
        let f1 = normal_product_tail(1.0, 1.0).unwrap();
        let f2 = normal_product_tail(2.0, 1.0).unwrap();
        assert!(f2 < f1);
        assert_eq!(product_tail(-1.5), product_tail(1.5));
        // deep tail keeps relative precision: F(x) ~ (2/π)·sqrt(π/(2x))·e^{-x}
        let x = 600.0;
        let asym = (2.0 / PI) * (PI / (2.0 * x)).sqrt() * (-x).exp() * (1.0 - 5.0 / (8.0 * x));
        assert!((product_tail(x) / asym - 1.0).abs() < 1e-5);
    }

    // Independent route: P(|Z₁Z₂| ≥ t) = 4 ∫₀^∞ φ(z) Φ̄(t/z) dz.
    #[test]
    fn product_tail_matches_conditional_route() {
        for &t in &[0.05, 0.3, 1.0, 2.5, 6.0] {
            let f = |z: f64| if z == 0.0 { 0.0 } else { 4.0 * norm_pdf(z) * norm_sf(t / z) };
            let oracle = simpson(f, 0.0, 12.0, 200_000);
            assert!((product_tail(t) - oracle).abs() < 1e-9, "t = {t}");
        }
    }

    #[test]
    fn scale_absorbs_into_argument() {
        for &t in &[0.01, 0.7, 3.0, 11.0] {
            for &s in &[0.5, 1.0, 1.3, 4.0] {
                let a = normal_product_tail(t, s).unwrap();
                let b = normal_product_tail(t / s, 1.0).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_values() {
        let unit = MixtureNormalRef::new(1.0, 0.0).unwrap();
        let quarter = MixtureNormalRef::new(0.0, 1.0).unwrap();
        let any = MixtureNormalRef::new(0.3, 0.7).unwrap();
        assert_eq!(mixture_two_sided_pvalue(0.0, &any).unwrap(), 1.0);
        let a = mixture_two_sided_pvalue(1.0, &unit).unwrap();
        assert!((a - 2.0 * (1.0 - cdf_oracle(1.0))).abs() < 1e-6);
        assert!((a - 0.3173105).abs() < 1e-6);
        let b = mixture_two_sided_pvalue(1.0, &quarter).unwrap();
        assert!((b - 0.0455003).abs() < 1e-6);
        assert!(MixtureNormalRef::new(0.5, 0.6).is_err());
        assert!(MixtureNormalRef::new(-0.1, 1.1).is_err());
        assert!(mixture_two_sided_pvalue(f64::NAN, &unit).is_err());
    }

    #[test]
    fn beta21_is_exact_square() {
        assert_eq!(beta21_cdf(0.1), 0.1 * 0.1);
        assert_eq!(beta21_cdf(1.5), 1.0);
        assert_eq!(beta21_cdf(-0.5), 0.0);
    }
}
