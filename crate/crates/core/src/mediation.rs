//! The composite-null mediation tests.
//!
//! Every method maps a mediator's `(Z_α, Z_β)` pair to a p-value for
//! `H₀: αβ = 0`. Three of them (HDMT, Sobel-comp, DACT) also need
//! cross-mediator estimates, which [`run_all_methods`] computes once before
//! the per-row map.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::null_estimators::{
    efron_empirical_null, estimate_proportions, grenander_nonnull_cdf, jincai_nonnull_proportion,
    MonotoneCdf, NullProportions,
};
use crate::special::{norm_cdf, norm_isf, norm_quantile, norm_sf, product_tail, two_sided_p, MixtureNormalRef};

/// Smallest p-value any method reports.
pub const P_FLOOR: f64 = 1e-300;

#[inline]
fn floor_p(p: f64) -> f64 {
    p.clamp(P_FLOOR, 1.0)
}

/// Wald statistics for `α = 0` (mediator model) and `β = 0` (outcome model).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZPair {
    pub z_alpha: f64,
    pub z_beta: f64,
}

impl ZPair {
    pub fn new(z_alpha: f64, z_beta: f64) -> Result<Self> {
        if !(z_alpha.is_finite() && z_beta.is_finite()) {
            return Err(Error::domain(format!(
                "z-statistics must be finite, got ({z_alpha}, {z_beta})"
            )));
        }
        Ok(Self { z_alpha, z_beta })
    }

    pub fn p_alpha(&self) -> f64 {
        two_sided_p(self.z_alpha)
    }

    pub fn p_beta(&self) -> f64 {
        two_sided_p(self.z_beta)
    }

    pub fn p_max(&self) -> f64 {
        self.p_alpha().max(self.p_beta())
    }
}

/// Per-mediator z-pairs with optional feature identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pairs: Vec<ZPair>,
    ids: Option<Vec<String>>,
}

impl SummaryTable {
    pub fn new(pairs: Vec<ZPair>, ids: Option<Vec<String>>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::domain("summary table has no rows"));
        }
        if let Some(ids) = &ids {
            if ids.len() != pairs.len() {
                return Err(Error::domain(format!(
                    "{} identifiers for {} rows",
                    ids.len(),
                    pairs.len()
                )));
            }
            let mut seen = HashSet::with_capacity(ids.len());
            if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
                return Err(Error::domain(format!("duplicate identifier {dup:?}")));
            }
        }
        Ok(Self { pairs, ids })
    }

    pub fn pairs(&self) -> &[ZPair] {
        &self.pairs
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Identifier of row `i`; 1-based row number when the table has none.
    pub fn id(&self, i: usize) -> String {
        match &self.ids {
            Some(ids) => ids[i].clone(),
            None => (i + 1).to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sobel,
    MaxP,
    JtComp,
    HdmtAsymptotic,
    HdmtAdjusted,
    SobelComp,
    Dact,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Sobel,
        Method::MaxP,
        Method::JtComp,
        Method::HdmtAsymptotic,
        Method::HdmtAdjusted,
        Method::SobelComp,
        Method::Dact,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Sobel => "sobel",
            Method::MaxP => "maxp",
            Method::JtComp => "jtcomp",
            Method::HdmtAsymptotic => "hdmt_asymptotic",
            Method::HdmtAdjusted => "hdmt_adjusted",
            Method::SobelComp => "sobelcomp",
            Method::Dact => "dact",
        }
    }

    /// Column name in p-value CSV output.
    pub fn column(self) -> &'static str {
        match self {
            Method::Sobel => "p_sobel",
            Method::MaxP => "p_maxp",
            Method::JtComp => "p_jtcomp",
            Method::HdmtAsymptotic => "p_hdmt_asym",
            Method::HdmtAdjusted => "p_hdmt_adj",
            Method::SobelComp => "p_sobelcomp",
            Method::Dact => "p_dact",
        }
    }

    fn needs_storey_proportions(self) -> bool {
        matches!(
            self,
            Method::HdmtAsymptotic | Method::HdmtAdjusted | Method::SobelComp
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s.trim().to_ascii_lowercase().as_str() {
            "sobel" => Method::Sobel,
            "maxp" => Method::MaxP,
            "jtcomp" | "jt-comp" => Method::JtComp,
            "hdmt_asymptotic" | "hdmt_asym" => Method::HdmtAsymptotic,
            "hdmt_adjusted" | "hdmt_adj" | "hdmt" => Method::HdmtAdjusted,
            "sobelcomp" | "sobel-comp" => Method::SobelComp,
            "dact" => Method::Dact,
            other => return Err(Error::domain(format!("unknown method {other:?}"))),
        };
        Ok(m)
    }
}

/// Magnitude of Sobel's statistic, `|z_α z_β| / √(z_α² + z_β²)`.
pub fn sobel_statistic(pair: ZPair) -> f64 {
    let (a, b) = (pair.z_alpha.abs(), pair.z_beta.abs());
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    a * (b / a.hypot(b))
}

/// Sobel's test against `N(0, 1)`.
pub fn sobel_pvalue(pair: ZPair) -> f64 {
    floor_p(two_sided_p(sobel_statistic(pair)))
}

/// Joint significance test: `max(p_α, p_β)` read against `U(0, 1)`.
pub fn maxp_pvalue(pair: ZPair) -> f64 {
    floor_p(pair.p_max())
}

/// Variance scales for the approximate JT-comp p-value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JtCompReference {
    sd_alpha: f64,
    sd_beta: f64,
    /// At least one supplied variance was below 1 and was raised to 1.
    pub clamped: bool,
}

impl JtCompReference {
    pub fn new(var_z_alpha: f64, var_z_beta: f64) -> Result<Self> {
        if !(var_z_alpha.is_finite() && var_z_beta.is_finite()) {
            return Err(Error::domain(format!(
                "JT-comp variances must be finite, got ({var_z_alpha}, {var_z_beta})"
            )));
        }
        let clamped = var_z_alpha < 1.0 || var_z_beta < 1.0;
        Ok(Self {
            sd_alpha: var_z_alpha.max(1.0).sqrt(),
            sd_beta: var_z_beta.max(1.0).sqrt(),
            clamped,
        })
    }

    /// `F(zαzβ/√Var zβ) + F(zαzβ/√Var zα) − F(zαzβ)` with `F` the normal
    /// product tail.
    pub fn pvalue(&self, pair: ZPair) -> f64 {
        let prod = pair.z_alpha * pair.z_beta;
        let p = product_tail(prod / self.sd_beta) + product_tail(prod / self.sd_alpha)
            - product_tail(prod);
        floor_p(p)
    }
}

pub fn jtcomp_pvalue(pair: ZPair, var_z_alpha: f64, var_z_beta: f64) -> Result<f64> {
    Ok(JtCompReference::new(var_z_alpha, var_z_beta)?.pvalue(pair))
}

/// HDMT p-value under the asymptotic mixture `(π₀₁+π₁₀)U(0,1) + π₀₀Beta(2,1)`.
pub fn hdmt_pvalue_asymptotic(p_max: f64, props: &NullProportions) -> f64 {
    let p = p_max.clamp(0.0, 1.0);
    floor_p((props.pi01 + props.pi10) * p + props.pi00 * p * p)
}

/// Finite-sample HDMT p-value, with the power of each marginal test under
/// its alternative estimated by a Grenander CDF.
pub fn hdmt_pvalue_adjusted(
    p_max: f64,
    props: &NullProportions,
    cdf_beta_given_h01: &MonotoneCdf,
    cdf_alpha_given_h10: &MonotoneCdf,
) -> f64 {
    let p = p_max.clamp(0.0, 1.0);
    let v = props.pi01 * p * cdf_beta_given_h01.eval(p)
        + props.pi10 * p * cdf_alpha_given_h10.eval(p)
        + props.pi00 * p * p;
    floor_p(v)
}

/// Null reference for Sobel-comp: `(π₀₁+π₁₀)N(0,1) + π₀₀N(0,1/4)`, with
/// the weights renormalised over the null share.
pub fn sobelcomp_reference(props: &NullProportions) -> Result<MixtureNormalRef> {
    let total = props.total();
    if !(total > 0.0) {
        return Err(Error::domain("Sobel-comp needs a positive null share"));
    }
    MixtureNormalRef::new((props.pi01 + props.pi10) / total, props.pi00 / total)
}

pub fn sobelcomp_pvalue(pair: ZPair, props: &NullProportions) -> Result<f64> {
    let reference = sobelcomp_reference(props)?;
    Ok(floor_p(reference.pvalue(sobel_statistic(pair))))
}

/// `|z_β|` beyond which the `H₀₀` Sobel-comp p-value `2(1-Φ(2T))` drops
/// below the `H₀₀` HDMT p-value `p_max²`, for `|z_β| ≥ |z_α|`.
///
/// With `q = Φ̄⁻¹(2Φ̄(|z_α|)²)` (upper-tail inverse) the condition is
/// `2T > q`, i.e. `|z_β| > (4/q² − 1/z_α²)^{-1/2}`. Returns `+∞` if the
/// bracket is not positive.
pub fn sobelcomp_crossover_threshold(z_alpha: f64) -> Result<f64> {
    if !z_alpha.is_finite() || z_alpha == 0.0 {
        return Err(Error::domain(format!(
            "threshold needs a finite nonzero z_alpha, got {z_alpha}"
        )));
    }
    let tail = norm_sf(z_alpha.abs());
    let q = norm_isf(2.0 * tail * tail);
    let bracket = 4.0 / (q * q) - 1.0 / (z_alpha * z_alpha);
    if bracket > 0.0 {
        Ok(bracket.powf(-0.5))
    } else {
        Ok(f64::INFINITY)
    }
}

/// DACT composite statistic `π₀₁p_α + π₁₀p_β + π₀₀p_max²`.
pub fn dact_statistic(pair: ZPair, props: &NullProportions) -> f64 {
    let (pa, pb) = (pair.p_alpha(), pair.p_beta());
    let pm = pa.max(pb);
    props.pi01 * pa + props.pi10 * pb + props.pi00 * pm * pm
}

/// Empirical-null calibration did not succeed; the raw statistics are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationFailed {
    pub reason: String,
    pub uncalibrated: Vec<f64>,
}

/// Maps DACT statistics to p-values.
///
/// Near a vertex of the simplex (some proportion `≥ 1 − epsilon`) the
/// statistic is close to uniform and is returned as is. Otherwise the
/// statistics are sent through `Φ⁻¹`, an empirical null `N(δ, σ²)` is
/// fitted to the result, and `Φ((z − δ)/σ)` is returned.
pub fn dact_calibrate(
    stats: &[f64],
    props: &NullProportions,
    epsilon: f64,
    center_fraction: f64,
) -> std::result::Result<Vec<f64>, CalibrationFailed> {
    let fail = |reason: String| CalibrationFailed {
        reason,
        uncalibrated: stats.to_vec(),
    };
    if stats.is_empty() {
        return Err(fail("no statistics to calibrate".into()));
    }
    if props.max_component() >= 1.0 - epsilon {
        return Ok(stats.iter().map(|&s| floor_p(s)).collect());
    }
    let z: Vec<f64> = stats
        .iter()
        .map(|&s| norm_quantile(s.clamp(1e-15, 1.0 - 1e-15)))
        .collect();
    let null = efron_empirical_null(&z, center_fraction).map_err(|e| fail(e.to_string()))?;
    Ok(z
        .iter()
        .map(|&v| floor_p(norm_cdf((v - null.mean) / null.sd)))
        .collect())
}

/// Knobs for [`run_all_methods`].
#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub methods: Vec<Method>,
    /// Storey threshold for the marginal and joint null shares.
    pub lambda: f64,
    /// Jin–Cai frequency range parameter.
    pub gamma: f64,
    /// DACT uses the uniform approximation when a proportion is within this of 1.
    pub dact_epsilon: f64,
    pub center_fraction: f64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            lambda: 0.5,
            gamma: 0.3,
            dact_epsilon: 0.05,
            center_fraction: 0.5,
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.methods.is_empty() {
            problems.push("no methods selected".to_string());
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            problems.push(format!("lambda must lie in (0, 1), got {}", self.lambda));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            problems.push(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.dact_epsilon >= 0.0 && self.dact_epsilon < 1.0) {
            problems.push(format!("dact_epsilon must lie in [0, 1), got {}", self.dact_epsilon));
        }
        if !(self.center_fraction > 0.0 && self.center_fraction <= 1.0) {
            problems.push(format!(
                "center_fraction must lie in (0, 1], got {}",
                self.center_fraction
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodColumn {
    Values(Vec<f64>),
    Failed {
        reason: String,
        uncalibrated: Option<Vec<f64>>,
    },
}

impl MethodColumn {
    pub fn values(&self) -> Option<&[f64]> {
        match self {
            MethodColumn::Values(v) => Some(v),
            MethodColumn::Failed { .. } => None,
        }
    }
}

/// Per-method p-value columns aligned with the rows of a [`SummaryTable`].
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    rows: usize,
    columns: Vec<(Method, MethodColumn)>,
    pub warnings: Vec<String>,
    /// Storey-path proportions used by HDMT and Sobel-comp.
    pub proportions: Option<NullProportions>,
    /// Jin–Cai-path proportions used by DACT.
    pub dact_proportions: Option<NullProportions>,
    /// Sample variances of `(z_α, z_β)` across rows.
    pub z_variances: (f64, f64),
}

impl PValueMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn methods(&self) -> impl Iterator<Item = Method> + '_ {
        self.columns.iter().map(|(m, _)| *m)
    }

    pub fn column(&self, method: Method) -> Option<&MethodColumn> {
        self.columns.iter().find(|(m, _)| *m == method).map(|(_, c)| c)
    }

    /// P-values of `method`, or `None` when it was not run or failed.
    pub fn values(&self, method: Method) -> Option<&[f64]> {
        self.column(method).and_then(MethodColumn::values)
    }

    pub fn columns(&self) -> &[(Method, MethodColumn)] {
        &self.columns
    }
}

fn sample_variance(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    Some(v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// DACT weights from the two marginal non-null shares, assuming the α and β
/// null indicators are independent, normalised over the null cases.
fn dact_proportions(z_alpha: &[f64], z_beta: &[f64], gamma: f64) -> Result<NullProportions> {
    let null_a = 1.0 - jincai_nonnull_proportion(z_alpha, gamma)?;
    let null_b = 1.0 - jincai_nonnull_proportion(z_beta, gamma)?;
    let w01 = null_a * (1.0 - null_b);
    let w10 = (1.0 - null_a) * null_b;
    let w00 = null_a * null_b;
    let total = w01 + w10 + w00;
    if !(total > 0.0) {
        return Err(Error::Calibration(
            "no null share left in either marginal (Jin-Cai estimates are 1)".into(),
        ));
    }
    NullProportions::new(w00 / total, w01 / total, w10 / total)
}

/// Runs every requested method over `table`.
///
/// Global estimates (proportions, z variances, Grenander CDFs) are computed
/// once, then rows are mapped in parallel. A method whose estimator fails is
/// reported as a failed column; the others still run.
pub fn run_all_methods(table: &SummaryTable, config: &MethodConfig) -> Result<PValueMatrix> {
    config.validate()?;
    let pairs = table.pairs();
    let rows = pairs.len();
    let mut warnings = Vec::new();

    let p_alpha: Vec<f64> = pairs.iter().map(ZPair::p_alpha).collect();
    let p_beta: Vec<f64> = pairs.iter().map(ZPair::p_beta).collect();
    let p_max: Vec<f64> = p_alpha.iter().zip(&p_beta).map(|(a, b)| a.max(*b)).collect();
    let z_alpha: Vec<f64> = pairs.iter().map(|p| p.z_alpha).collect();
    let z_beta: Vec<f64> = pairs.iter().map(|p| p.z_beta).collect();

    let var_a = sample_variance(&z_alpha);
    let var_b = sample_variance(&z_beta);
    let z_variances = (var_a.unwrap_or(f64::NAN), var_b.unwrap_or(f64::NAN));

    let props = if config.methods.iter().any(|m| m.needs_storey_proportions()) {
        Some(estimate_proportions(&p_alpha, &p_beta, config.lambda))
    } else {
        None
    };
    if rows < 100
        && config
            .methods
            .iter()
            .any(|m| m.needs_storey_proportions() || *m == Method::Dact)
    {
        warnings.push(format!(
            "only {rows} mediators: proportion estimates for HDMT, Sobel-comp and DACT are unreliable"
        ));
    }

    let mut columns = Vec::with_capacity(config.methods.len());
    let mut dact_props = None;
    let mut ordered = config.methods.clone();
    ordered.sort();
    ordered.dedup();
    for method in ordered {
        let column = match method {
            Method::Sobel => MethodColumn::Values(pairs.par_iter().map(|&p| sobel_pvalue(p)).collect()),
            Method::MaxP => MethodColumn::Values(p_max.iter().map(|&p| floor_p(p)).collect()),
            Method::JtComp => {
                let (va, vb) = match (var_a, var_b) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        warnings.push("JT-comp: fewer than two rows, z variances taken as 1".into());
                        (1.0, 1.0)
                    }
                };
                if va > 1.5 || vb > 1.5 {
                    warnings.push(format!(
                        "JT-comp: sample variance of z_alpha ({va:.3}) or z_beta ({vb:.3}) exceeds 1.5; \
                         its approximation is unreliable here"
                    ));
                }
                match JtCompReference::new(va, vb) {
                    Ok(reference) => {
                        if reference.clamped {
                            warnings.push(format!(
                                "JT-comp: z variance below 1 ({va:.3}, {vb:.3}) raised to 1"
                            ));
                        }
                        MethodColumn::Values(pairs.par_iter().map(|&p| reference.pvalue(p)).collect())
                    }
                    Err(e) => MethodColumn::Failed {
                        reason: e.to_string(),
                        uncalibrated: None,
                    },
                }
            }
            Method::HdmtAsymptotic | Method::HdmtAdjusted | Method::SobelComp => {
                match props.as_ref().expect("proportions computed for mixture methods") {
                    Err(e) => MethodColumn::Failed {
                        reason: e.to_string(),
                        uncalibrated: None,
                    },
                    Ok(pr) => mixture_column(method, pr, pairs, &p_alpha, &p_beta, &p_max),
                }
            }
            Method::Dact => match dact_proportions(&z_alpha, &z_beta, config.gamma) {
                Err(e) => MethodColumn::Failed {
                    reason: e.to_string(),
                    uncalibrated: None,
                },
                Ok(pr) => {
                    dact_props = Some(pr);
                    let stats: Vec<f64> = pairs.par_iter().map(|&p| dact_statistic(p, &pr)).collect();
                    match dact_calibrate(&stats, &pr, config.dact_epsilon, config.center_fraction) {
                        Ok(v) => MethodColumn::Values(v),
                        Err(f) => {
                            warnings.push(format!("DACT: {}", f.reason));
                            MethodColumn::Failed {
                                reason: f.reason,
                                uncalibrated: Some(f.uncalibrated),
                            }
                        }
                    }
                }
            },
        };
        columns.push((method, column));
    }

    Ok(PValueMatrix {
        rows,
        columns,
        warnings,
        proportions: props.and_then(|r| r.ok()),
        dact_proportions: dact_props,
        z_variances,
    })
}

fn mixture_column(
    method: Method,
    props: &NullProportions,
    pairs: &[ZPair],
    p_alpha: &[f64],
    p_beta: &[f64],
    p_max: &[f64],
) -> MethodColumn {
    match method {
        Method::HdmtAsymptotic => {
            MethodColumn::Values(p_max.iter().map(|&p| hdmt_pvalue_asymptotic(p, props)).collect())
        }
        Method::HdmtAdjusted => {
            let nonnull_cdf = |p: &[f64], pi0: f64| {
                if pi0 < 1.0 {
                    grenander_nonnull_cdf(p, pi0)
                } else {
                    Ok(MonotoneCdf::identity())
                }
            };
            let cdfs = nonnull_cdf(p_beta, props.pi00 + props.pi10)
                .and_then(|b| nonnull_cdf(p_alpha, props.pi00 + props.pi01).map(|a| (b, a)));
            match cdfs {
                Ok((cdf_b, cdf_a)) => MethodColumn::Values(
                    p_max
                        .par_iter()
                        .map(|&p| hdmt_pvalue_adjusted(p, props, &cdf_b, &cdf_a))
                        .collect(),
                ),
                Err(e) => MethodColumn::Failed {
                    reason: e.to_string(),
                    uncalibrated: None,
                },
            }
        }
        Method::SobelComp => match sobelcomp_reference(props) {
            Ok(reference) => MethodColumn::Values(
                pairs
                    .par_iter()
                    .map(|&p| floor_p(reference.pvalue(sobel_statistic(p))))
                    .collect(),
            ),
            Err(e) => MethodColumn::Failed {
                reason: e.to_string(),
                uncalibrated: None,
            },
        },
        _ => unreachable!("not a mixture method"),
    }
}
