//! The ten acceptance criteria. Each test writes one PASS/FAIL line to
//! stderr (bypassing the test harness capture) and then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::process::Command;

use medtest::mediation::{
    maxp_pvalue, sobelcomp_crossover_threshold, sobel_pvalue, sobel_statistic, sobelcomp_pvalue, Method, MethodConfig,
    ZPair, P_FLOOR,
};
use medtest::null_estimators::{estimate_proportions, jincai_nonnull_proportion, NullProportions};
use medtest::sim::{rejection_curve, run_null_study, run_power_study, run_replicate, true_fdr_tpr, MetricReport, ScenarioConfig};
use medtest::special::{norm_cdf, normal_product_tail};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Fixed before any run; never tuned against the outcome.
const SEED: u64 = 1;

fn verdict(id: u32, title: &str, checks: &[(String, bool)]) {
    let pass = checks.iter().all(|(_, ok)| *ok);
    let detail: Vec<String> = checks
        .iter()
        .map(|(d, ok)| format!("{d}{}", if *ok { "" } else { " <-- out of range" }))
        .collect();
    let line = format!(
        "criterion {id:>2} {}: {title}; {}\n",
        if pass { "PASS" } else { "FAIL" },
        detail.join("; ")
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
    assert!(pass, "{line}");
}

fn scenario(pi: [f64; 4], n: usize, tau: f64, replicates: usize) -> ScenarioConfig {
    ScenarioConfig {
        n,
        j: 20_000,
        tau,
        pi11: pi[0],
        pi01: pi[1],
        pi10: pi[2],
        pi00: pi[3],
        seed: SEED,
        replicates,
        cutoffs: vec![1e-3],
        ..ScenarioConfig::default()
    }
}

fn ratio(report: &MetricReport, m: Method) -> f64 {
    report.get(m, Some(1e-3)).map_or(f64::NAN, |r| r.mean)
}

fn within(name: &str, value: f64, target: f64, tol: f64) -> (String, bool) {
    (
        format!("{name} {value:.3} (want {target} +/- {tol})"),
        (value - target).abs() <= tol,
    )
}

fn below(name: &str, value: f64, bound: f64) -> (String, bool) {
    (format!("{name} {value:.3} (want < {bound})"), value < bound)
}

#[test]
fn criterion_01_sparse_null_fpr() {
    let cfg = scenario([0.0, 0.001, 0.001, 0.998], 200, 0.3, 100);
    let r = run_null_study(&cfg, &MethodConfig::default()).unwrap();
    verdict(
        1,
        "sparse null 1, n=200, tau=0.3, cutoff 1e-3, J=20000, R=100",
        &[
            below("Sobel", ratio(&r, Method::Sobel), 0.05),
            below("MaxP", ratio(&r, Method::MaxP), 0.05),
            within("JT-comp", ratio(&r, Method::JtComp), 1.26, 0.20),
            within("HDMT", ratio(&r, Method::HdmtAdjusted), 1.07, 0.15),
            within("Sobel-comp", ratio(&r, Method::SobelComp), 0.91, 0.20),
        ],
    );
}

#[test]
fn criterion_02_dense_null_fpr() {
    let cfg = scenario([0.0, 0.33, 0.33, 0.34], 200, 0.1, 100);
    let r = run_null_study(&cfg, &MethodConfig::default()).unwrap();
    let dact = ratio(&r, Method::Dact);
    verdict(
        2,
        "dense null 1, n=200, tau=0.1, cutoff 1e-3, J=20000, R=100",
        &[
            within("Sobel", ratio(&r, Method::Sobel), 0.01, 0.02),
            within("MaxP", ratio(&r, Method::MaxP), 0.14, 0.05),
            within("JT-comp", ratio(&r, Method::JtComp), 3.48, 0.5),
            within("HDMT", ratio(&r, Method::HdmtAdjusted), 1.08, 0.15),
            within("Sobel-comp", ratio(&r, Method::SobelComp), 0.04, 0.03),
            (
                format!("DACT {dact:.3} (want 7.16 +/- 30%)"),
                (dact - 7.16).abs() <= 0.3 * 7.16,
            ),
        ],
    );
}

fn ks(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn criterion_03_double_null_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let pairs: Vec<ZPair> = (0..100_000)
        .map(|_| ZPair::new(rng.sample(StandardNormal), rng.sample(StandardNormal)).unwrap())
        .collect();
    let d_sobel = ks(pairs.iter().map(|&p| sobel_statistic(p)).collect(), |s| {
        2.0 * norm_cdf(2.0 * s) - 1.0
    });
    let d_max = ks(pairs.iter().map(ZPair::p_max).collect(), |t| t * t);
    verdict(
        3,
        "laws under H00 at J=1e5",
        &[
            below("KS(Sobel statistic, |N(0,1/4)|)", d_sobel, 0.01),
            below("sup|ECDF(p_max) - t^2|", d_max, 0.01),
        ],
    );
}

/// `K₀` from its ascending series below 9 and its asymptotic expansion above.
fn bessel_k0(s: f64) -> f64 {
    if s <= 9.0 {
        let q = s * s / 4.0;
        let (mut term, mut i0, mut tail, mut harmonic) = (1.0, 1.0, 0.0, 0.0);
        for k in 1..200 {
            term *= q / (k * k) as f64;
            harmonic += 1.0 / k as f64;
            i0 += term;
            tail += term * harmonic;
            if term < 1e-18 * i0 {
                break;
            }
        }
        -((s / 2.0).ln() + 0.577_215_664_901_532_9) * i0 + tail
    } else {
        let (mut c, mut sum) = (1.0, 1.0);
        for k in 1..40 {
            let next = c * -(((2 * k - 1) * (2 * k - 1)) as f64) / (8.0 * k as f64 * s);
            if next.abs() >= c.abs() || next.abs() < 1e-18 {
                break;
            }
            c = next;
            sum += c;
        }
        (PI / (2.0 * s)).sqrt() * (-s).exp() * sum
    }
}

#[allow(clippy::too_many_arguments)]
fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    let tol = (tol / 2.0).max(1e-18);
    simpson(f, a, m, fa, flm, fm, left, tol, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol, depth - 1)
}

fn adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(&f, a, b, fa, fm, fb, whole, tol, 30)
}

/// `P(|Z₁Z₂| > x)` as the integral of the density `K₀(|s|)/π` over both tails.
fn product_tail_oracle(x: f64) -> f64 {
    let density = |s: f64| bessel_k0(s) / PI;
    let mut total = 0.0;
    let mut a = x;
    while a < x + 45.0 {
        total += adaptive(density, a, a + 0.5, 1e-14);
        a += 0.5;
    }
    2.0 * total
}

#[test]
fn criterion_04_product_tail_oracle() {
    let mut worst: f64 = 0.0;
    for t in [0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
        for scale in [1.0, 1.2, 2.0] {
            let got = normal_product_tail(t, scale).unwrap();
            let want = product_tail_oracle(t / scale);
            worst = worst.max((got - want).abs());
        }
    }
    // anchor the oracle itself: the total mass is 1. Near 0 the log
    // singularity is removed by integrating over v = ln s.
    let head = adaptive(|v: f64| bessel_k0(v.exp()) * v.exp() / PI, -40.0, 0.05f64.ln(), 1e-14);
    let mass = 2.0 * head + product_tail_oracle(0.05);
    verdict(
        4,
        "normal_product_tail vs adaptive quadrature of K0(|x|)/pi",
        &[
            (format!("max abs difference {worst:.2e} (want <= 1e-8)"), worst <= 1e-8),
            (format!("oracle total mass {mass:.10}"), (mass - 1.0).abs() < 1e-6),
        ],
    );
}

/// Exact-arithmetic gap `p_sobel − p_max ≈ 2φ(T)(m − T)` with `m = min|z|`,
/// using the cancellation-free form of `m − T`.
fn analytic_gap(za: f64, zb: f64) -> f64 {
    let (m, big) = (za.abs().min(zb.abs()), za.abs().max(zb.abs()));
    let r = m.hypot(big);
    let t = m * big / r;
    let diff = m * m * m / (r * (r + big));
    2.0 * (-0.5 * t * t).exp() / (2.0 * PI).sqrt() * diff
}

#[test]
fn criterion_05_maxp_dominated_by_sobel() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut violations, mut ties, mut sub_ulp) = (0usize, 0usize, 0usize);
    for _ in 0..1_000_000 {
        // spreads from 0.1 to 10 so both tails and the centre are exercised
        let sa = 10f64.powf(rng.random_range(-1.0..1.0));
        let sb = 10f64.powf(rng.random_range(-1.0..1.0));
        let za: f64 = sa * rng.sample::<f64, _>(StandardNormal);
        let zb: f64 = sb * rng.sample::<f64, _>(StandardNormal);
        let pair = ZPair::new(za, zb).unwrap();
        let (pm, ps) = (maxp_pvalue(pair), sobel_pvalue(pair));
        if pm > ps {
            violations += 1;
        }
        if za != 0.0 && zb != 0.0 && pm == ps && ps > P_FLOOR {
            // a gap under one ulp of p cannot be represented in binary64
            if analytic_gap(za, zb) < 2.0 * f64::EPSILON * ps {
                sub_ulp += 1;
            } else {
                ties += 1;
            }
        }
    }
    verdict(
        5,
        "maxp <= sobel over 1e6 random pairs",
        &[
            (format!("{violations} violations"), violations == 0),
            (format!("{ties} ties with a representable gap"), ties == 0),
            (format!("{sub_ulp} ties whose exact gap is below one ulp (reported, not failed)"), true),
        ],
    );
}

#[test]
fn criterion_06_rank_equivalence() {
    let mut checks = Vec::new();
    for (name, pi, tau) in [
        ("dense alt", [0.2, 0.2, 0.2, 0.4], 0.3),
        ("sparse alt", [0.001, 0.001, 0.001, 0.997], 0.7),
        ("dense null", [0.0, 0.33, 0.33, 0.34], 0.3),
    ] {
        let cfg = scenario(pi, 200, tau, 3);
        for rep in 0..3 {
            let out = run_replicate(&cfg, &MethodConfig::default(), rep).unwrap();
            let p = |m| out.pvalues.values(m).unwrap();
            let same_curve = |a, b| rejection_curve(p(a), &out.labels) == rejection_curve(p(b), &out.labels);
            let same_tpr = |a, b| {
                true_fdr_tpr(p(a), &out.labels, 0.05).map(f64::to_bits)
                    == true_fdr_tpr(p(b), &out.labels, 0.05).map(f64::to_bits)
            };
            let ok1 = same_curve(Method::Sobel, Method::SobelComp) && same_tpr(Method::Sobel, Method::SobelComp);
            let ok2 = same_curve(Method::MaxP, Method::HdmtAsymptotic) && same_tpr(Method::MaxP, Method::HdmtAsymptotic);
            checks.push((format!("{name} rep {rep}: Sobel~Sobel-comp"), ok1));
            checks.push((format!("{name} rep {rep}: MaxP~HDMT-asym"), ok2));
        }
    }
    let failed: Vec<_> = checks.iter().filter(|c| !c.1).cloned().collect();
    let summary = if failed.is_empty() {
        vec![(format!("{} curve pairs identical", checks.len()), true)]
    } else {
        failed
    };
    verdict(6, "identical rejection curves for rank-equivalent pairs", &summary);
}

fn tpr(report: &MetricReport, m: Method) -> f64 {
    report.get(m, None).map_or(f64::NAN, |r| r.mean)
}

#[test]
fn criterion_07_power_ordering() {
    let methods = MethodConfig::default();
    let dense = run_power_study(&scenario([0.2, 0.2, 0.2, 0.4], 500, 0.3, 50), &methods).unwrap();
    let jt = tpr(&dense, Method::JtComp);
    let others = dense
        .rows
        .iter()
        .filter(|r| r.method != Method::JtComp && r.mean.is_finite())
        .map(|r| (r.method, r.mean))
        .collect::<Vec<_>>();
    let lowest_other = others.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);

    let sparse = run_power_study(&scenario([0.001, 0.001, 0.001, 0.997], 500, 0.7, 50), &methods).unwrap();
    let sobel = tpr(&sparse, Method::Sobel).min(tpr(&sparse, Method::SobelComp));
    let hdmt_maxp = [Method::MaxP, Method::HdmtAsymptotic, Method::HdmtAdjusted]
        .iter()
        .map(|&m| tpr(&sparse, m))
        .fold(f64::NEG_INFINITY, f64::max);
    verdict(
        7,
        "power ordering at J=20000, R=50, n=500",
        &[
            (
                format!("dense alt tau=0.3: JT-comp {jt:.3} < lowest other {lowest_other:.3}"),
                jt < lowest_other,
            ),
            (
                format!("sparse alt tau=0.7: Sobel/Sobel-comp {sobel:.3} >= HDMT/MaxP {hdmt_maxp:.3}"),
                sobel >= hdmt_maxp,
            ),
        ],
    );
}

#[test]
fn criterion_08_sobelcomp_crossover() {
    let h00 = NullProportions::new(1.0, 0.0, 0.0).unwrap();
    let sobelcomp = |za: f64, zb: f64| sobelcomp_pvalue(ZPair::new(za, zb).unwrap(), &h00).unwrap();
    let hdmt = |za: f64, zb: f64| ZPair::new(za, zb).unwrap().p_max().powi(2);
    let mut checks = Vec::new();
    for za in [0.5, 1.0, 1.5, 2.0, 3.0] {
        let t = sobelcomp_crossover_threshold(za).unwrap();
        let mut ok = t.is_finite() && t > 0.0;
        // the threshold is only binding past |z_beta| >= |z_alpha|
        if t > za {
            let (above, below) = (t * (1.0 + 1e-6), t * (1.0 - 1e-6));
            ok &= sobelcomp(za, above) < hdmt(za, above);
            ok &= sobelcomp(za, below) >= hdmt(za, below);
        }
        let mut zb = t.max(za) * (1.0 + 1e-9);
        while zb <= 100.0 {
            ok &= sobelcomp(za, zb) < hdmt(za, zb);
            zb += 0.01;
        }
        checks.push((format!("z_alpha {za}: threshold {t:.6}"), ok));
    }
    verdict(8, "Sobel-comp below HDMT past the threshold under H00", &checks);
}

#[test]
fn criterion_09_proportion_recovery() {
    let cfg = ScenarioConfig {
        n: 1000,
        j: 100_000,
        tau: 0.7,
        pi01: 0.33,
        pi10: 0.33,
        pi00: 0.34,
        seed: SEED,
        replicates: 1,
        ..ScenarioConfig::default()
    };
    let methods = MethodConfig {
        methods: vec![Method::Sobel],
        ..MethodConfig::default()
    };
    let out = run_replicate(&cfg, &methods, 0).unwrap();
    let pa: Vec<f64> = out.table.pairs().iter().map(ZPair::p_alpha).collect();
    let pb: Vec<f64> = out.table.pairs().iter().map(ZPair::p_beta).collect();
    let est = estimate_proportions(&pa, &pb, 0.5).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let z: Vec<f64> = (0..100_000)
        .map(|i| rng.sample::<f64, _>(StandardNormal) + if i % 2 == 0 { 0.0 } else { 3.0 })
        .collect();
    let jc = jincai_nonnull_proportion(&z, 0.3).unwrap();
    verdict(
        9,
        "proportion recovery",
        &[
            within("pi00", est.pi00, 0.34, 0.05),
            within("pi01", est.pi01, 0.33, 0.05),
            within("pi10", est.pi10, 0.33, 0.05),
            within("Jin-Cai 50/50", jc, 0.5, 0.05),
        ],
    );
}

#[test]
fn criterion_10_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sparse.cfg");
    std::fs::write(
        &config,
        "n = 200\nj = 3000\ntau = 0.3\npi00 = 0.998\npi01 = 0.001\npi10 = 0.001\nseed = 1\nreplicates = 6\n",
    )
    .unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("out{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_medtest"))
            .args(["simulate", "--mode", "null", "--qq", "--emit-summary", "--threads", threads])
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        ["report.csv", "qq.csv", "summary.csv"].map(|f| std::fs::read(out.join(f)).unwrap())
    };
    let (one, many) = (run("1"), run("4"));
    let checks: Vec<(String, bool)> = ["report.csv", "qq.csv", "summary.csv"]
        .iter()
        .zip(one.iter().zip(&many))
        .map(|(name, (a, b))| (format!("{name} ({} bytes) identical for 1 vs 4 threads", a.len()), a == b))
        .collect();
    verdict(10, "simulate output independent of worker count", &checks);
}
