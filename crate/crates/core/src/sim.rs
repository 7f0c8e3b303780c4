//! Monte Carlo scenarios for the mediation tests: coefficient and data
//! generation, null (FPR) studies and power (TPR at true FDR) studies.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, replicate, mediator, purpose)`, so results do not depend on how
//! replicates and mediators are scheduled across threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mediation::{run_all_methods, Method, MethodConfig, PValueMatrix, SummaryTable, ZPair};
use crate::regression::{Dataset, MediatorFitter};

pub const DEFAULT_CUTOFFS: [f64; 5] = [1e-3, 1e-4, 1e-5, 1e-6, 5e-7];

/// Level of the realised false discovery proportion used for TPR.
pub const TRUE_FDR_LEVEL: f64 = 0.05;

const PURPOSE_MEDIATOR: u64 = 0;
const PURPOSE_EXPOSURE: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseLabel {
    H00,
    H01,
    H10,
    H11,
}

impl CaseLabel {
    pub fn is_null(self) -> bool {
        self != CaseLabel::H11
    }
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    pub j: usize,
    /// SD of non-zero `β`; non-zero `α` has SD `√5·τ`.
    pub tau: f64,
    /// When set, noise variances are solved so each model has this R².
    pub r2: Option<f64>,
    pub pi11: f64,
    pub pi01: f64,
    pub pi10: f64,
    pub pi00: f64,
    pub beta_x: f64,
    pub seed: u64,
    pub replicates: usize,
    pub cutoffs: Vec<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n: 200,
            j: 20_000,
            tau: 0.3,
            r2: None,
            pi11: 0.0,
            pi01: 0.0,
            pi10: 0.0,
            pi00: 1.0,
            beta_x: 1.0,
            seed: 1,
            replicates: 100,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
        }
    }
}

impl ScenarioConfig {
    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n < 50 {
            problems.push(format!("n must be at least 50, got {}", self.n));
        }
        if self.j == 0 {
            problems.push("J must be at least 1".to_string());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            problems.push(format!("tau must be positive, got {}", self.tau));
        }
        if let Some(r2) = self.r2 {
            if !(r2 > 0.0 && r2 < 1.0) {
                problems.push(format!("r2 must lie in (0, 1), got {r2}"));
            }
        }
        let props = [
            ("pi11", self.pi11),
            ("pi01", self.pi01),
            ("pi10", self.pi10),
            ("pi00", self.pi00),
        ];
        for (name, v) in props {
            if !(0.0..=1.0).contains(&v) {
                problems.push(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        let sum: f64 = props.iter().map(|(_, v)| v).sum();
        if (sum - 1.0).abs() > 1e-9 {
            problems.push(format!("proportions must sum to 1, got {sum}"));
        }
        if !self.beta_x.is_finite() {
            problems.push(format!("beta_x must be finite, got {}", self.beta_x));
        }
        if self.replicates == 0 {
            problems.push("replicates must be at least 1".to_string());
        }
        for &c in &self.cutoffs {
            if !(c > 0.0 && c < 1.0) {
                problems.push(format!("cutoff {c} is not in (0, 1)"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.j < 100 {
            w.push(format!(
                "J = {} is below 100; proportion estimates will be unreliable",
                self.j
            ));
        }
        w
    }
}

/// Random stream for one `(replicate, index, purpose)` cell of a seed.
pub fn substream(seed: u64, replicate: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&replicate.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(&purpose.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficient {
    pub alpha: f64,
    pub beta: f64,
    pub label: CaseLabel,
}

/// Draws one mediator's case and coefficients.
pub fn draw_coefficient<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Coefficient {
    let u: f64 = rng.random();
    let label = if u < config.pi11 {
        CaseLabel::H11
    } else if u < config.pi11 + config.pi01 {
        CaseLabel::H01
    } else if u < config.pi11 + config.pi01 + config.pi10 {
        CaseLabel::H10
    } else {
        CaseLabel::H00
    };
    let sd_alpha = 5f64.sqrt() * config.tau;
    let mut normal = || rng.sample::<f64, _>(StandardNormal);
    let (alpha, beta) = match label {
        CaseLabel::H00 => (0.0, 0.0),
        CaseLabel::H01 => (0.0, config.tau * normal()),
        CaseLabel::H10 => (sd_alpha * normal(), 0.0),
        CaseLabel::H11 => {
            let a = sd_alpha * normal();
            (a, config.tau * normal())
        }
    };
    Coefficient { alpha, beta, label }
}

/// Coefficients of every mediator in a replicate.
pub fn draw_coefficients(config: &ScenarioConfig, replicate: u64) -> Vec<Coefficient> {
    (0..config.j as u64)
        .map(|j| draw_coefficient(config, &mut substream(config.seed, replicate, j, PURPOSE_MEDIATOR)))
        .collect()
}

/// Noise SDs `(σ_M, σ_Y)` for a mediator.
///
/// Without `r2` both are 1. With it, `σ_M` is solved from
/// `R² = α²/(α² + σ_M²)` when `α ≠ 0`, and `σ_Y` from
/// `R² = V/(V + σ_Y²)`, `V = Var(βM + β_X X) = (αβ + β_X)² + β²σ_M²`, when
/// `β ≠ 0`. A zero coefficient keeps unit variance in that model.
pub fn noise_sds(config: &ScenarioConfig, coef: &Coefficient) -> (f64, f64) {
    let Some(r2) = config.r2 else {
        return (1.0, 1.0);
    };
    let odds = (1.0 - r2) / r2;
    let sd_m = if coef.alpha != 0.0 {
        (coef.alpha * coef.alpha * odds).sqrt()
    } else {
        1.0
    };
    let sd_y = if coef.beta != 0.0 {
        let total = coef.alpha * coef.beta + config.beta_x;
        let v = total * total + coef.beta * coef.beta * sd_m * sd_m;
        (v * odds).sqrt()
    } else {
        1.0
    };
    (sd_m, sd_y)
}

/// Shared exposure of a replicate, `X ~ N(0, 1)`.
pub fn draw_exposure(config: &ScenarioConfig, replicate: u64) -> Vec<f64> {
    let mut rng = substream(config.seed, replicate, 0, PURPOSE_EXPOSURE);
    (0..config.n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws mediator `j` of a replicate: its coefficients, then
/// `M = αX + ε_M` and its own outcome `Y = βM + β_X X + ε_Y`.
pub fn generate_mediator(
    config: &ScenarioConfig,
    exposure: &[f64],
    replicate: u64,
    j: u64,
) -> (Coefficient, Vec<f64>, Vec<f64>) {
    let mut rng = substream(config.seed, replicate, j, PURPOSE_MEDIATOR);
    let coef = draw_coefficient(config, &mut rng);
    let (sd_m, sd_y) = noise_sds(config, &coef);
    let m: Vec<f64> = exposure
        .iter()
        .map(|&x| coef.alpha * x + sd_m * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = exposure
        .iter()
        .zip(&m)
        .map(|(&x, &mj)| coef.beta * mj + config.beta_x * x + sd_y * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (coef, m, y)
}

/// A fully materialised replicate. Each mediator comes with its own outcome
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReplicate {
    pub exposure: Vec<f64>,
    pub coefficients: Vec<Coefficient>,
    pub mediators: DMatrix<f64>,
    pub outcomes: DMatrix<f64>,
}

impl SimReplicate {
    /// The single-mediator dataset `(X, Y_j, M_j)`.
    pub fn dataset(&self, j: usize) -> Result<Dataset> {
        let n = self.exposure.len();
        Dataset::new(
            self.exposure.clone(),
            self.outcomes.column(j).iter().copied().collect(),
            DMatrix::from_column_slice(n, 1, self.mediators.column(j).as_slice()),
            None,
        )
    }
}

pub fn generate_dataset(config: &ScenarioConfig, replicate: u64) -> Result<SimReplicate> {
    config.validate()?;
    let exposure = draw_exposure(config, replicate);
    let n = config.n;
    let mut mediators = DMatrix::zeros(n, config.j);
    let mut outcomes = DMatrix::zeros(n, config.j);
    let mut coefficients = Vec::with_capacity(config.j);
    for j in 0..config.j {
        let (c, m, y) = generate_mediator(config, &exposure, replicate, j as u64);
        mediators.column_mut(j).copy_from_slice(&m);
        outcomes.column_mut(j).copy_from_slice(&y);
        coefficients.push(c);
    }
    Ok(SimReplicate {
        exposure,
        coefficients,
        mediators,
        outcomes,
    })
}

/// Everything produced by one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateOutput {
    /// Labels of the mediators whose fits succeeded, aligned with `table`.
    pub labels: Vec<CaseLabel>,
    pub table: SummaryTable,
    pub pvalues: PValueMatrix,
    pub fit_failures: usize,
}

/// Generates, fits and tests one replicate without materialising the
/// mediator matrix.
pub fn run_replicate(config: &ScenarioConfig, methods: &MethodConfig, replicate: u64) -> Result<ReplicateOutput> {
    let exposure = draw_exposure(config, replicate);
    let fitter = MediatorFitter::new(&exposure, &DMatrix::zeros(config.n, 0), None)?;
    let fits: Vec<(CaseLabel, Option<ZPair>)> = (0..config.j as u64)
        .into_par_iter()
        .map(|j| {
            let (coef, m, y) = generate_mediator(config, &exposure, replicate, j);
            let y_resid = fitter.outcome_residual(&y);
            let pair = fitter
                .fit(&m, &y_resid, j as usize, "")
                .ok()
                .and_then(|f| f.zpair().ok());
            (coef.label, pair)
        })
        .collect();
    let mut labels = Vec::with_capacity(fits.len());
    let mut pairs = Vec::with_capacity(fits.len());
    let mut ids = Vec::with_capacity(fits.len());
    for (j, (label, pair)) in fits.iter().enumerate() {
        if let Some(p) = pair {
            labels.push(*label);
            pairs.push(*p);
            ids.push(format!("M{}", j + 1));
        }
    }
    let fit_failures = fits.len() - pairs.len();
    let table = SummaryTable::new(pairs, Some(ids))?;
    let pvalues = run_all_methods(&table, methods)?;
    Ok(ReplicateOutput {
        labels,
        table,
        pvalues,
        fit_failures,
    })
}

/// Aggregated metric for one method: at a cutoff (FPR ratio) or at the
/// true-FDR level (TPR).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: Method,
    /// `None` marks a TPR row.
    pub cutoff: Option<f64>,
    /// Mean over replicates where the method ran; NaN if it never did.
    pub mean: f64,
    /// Sample SD over the same replicates; NaN with fewer than two.
    pub sd: f64,
    pub n_failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub replicates: usize,
    /// Power replicates without any `H11` mediator.
    pub skipped_replicates: usize,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn get(&self, method: Method, cutoff: Option<f64>) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.cutoff == cutoff)
    }
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        f64::NAN
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, sd)
}

/// `#{p < cutoff} / (len · cutoff)`.
pub fn fpr_ratio(pvalues: &[f64], cutoff: f64) -> f64 {
    let hits = pvalues.iter().filter(|&&p| p < cutoff).count();
    hits as f64 / (pvalues.len() as f64 * cutoff)
}

/// Cumulative `(rejections, false rejections)` after each group of tied
/// p-values, in increasing p order.
pub fn rejection_curve(pvalues: &[f64], labels: &[CaseLabel]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..pvalues.len()).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let mut curve = Vec::new();
    let (mut rejected, mut false_rej) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        rejected += 1;
        if labels[i].is_null() {
            false_rej += 1;
        }
        let group_ends = order.get(k + 1).is_none_or(|&next| pvalues[next] != pvalues[i]);
        if group_ends {
            curve.push((rejected, false_rej));
        }
    }
    curve
}

/// TPR at the largest threshold whose realised FDP is at most `level`.
/// `None` when there are no alternatives.
pub fn true_fdr_tpr(pvalues: &[f64], labels: &[CaseLabel], level: f64) -> Option<f64> {
    let alternatives = labels.iter().filter(|l| !l.is_null()).count();
    if alternatives == 0 {
        return None;
    }
    let best = rejection_curve(pvalues, labels)
        .into_iter()
        .filter(|&(r, v)| v as f64 <= level * r as f64)
        .map(|(r, v)| r - v)
        .next_back()
        .unwrap_or(0);
    Some(best as f64 / alternatives as f64)
}

fn replicate_outputs(
    config: &ScenarioConfig,
    methods: &MethodConfig,
) -> Result<Vec<ReplicateOutput>> {
    (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| run_replicate(config, methods, r))
        .collect()
}

fn base_warnings(config: &ScenarioConfig, outputs: &[ReplicateOutput]) -> Vec<String> {
    let mut warnings = config.warnings();
    let fit_failures: usize = outputs.iter().map(|o| o.fit_failures).sum();
    if fit_failures > 0 {
        warnings.push(format!("{fit_failures} mediator fits failed and were dropped"));
    }
    warnings
}

/// FPR/cutoff ratios for every method and cutoff, averaged over replicates.
pub fn run_null_study(config: &ScenarioConfig, methods: &MethodConfig) -> Result<MetricReport> {
    config.validate()?;
    methods.validate()?;
    if config.pi11 != 0.0 {
        return Err(Error::Config(vec![format!(
            "a null study needs pi11 = 0, got {}",
            config.pi11
        )]));
    }
    let outputs = replicate_outputs(config, methods)?;
    let mut rows = Vec::new();
    for method in sorted_methods(methods) {
        for &cutoff in &config.cutoffs {
            let mut ratios = Vec::with_capacity(outputs.len());
            let mut failures = 0;
            for out in &outputs {
                match out.pvalues.values(method) {
                    Some(p) => ratios.push(fpr_ratio(p, cutoff)),
                    None => failures += 1,
                }
            }
            let (mean, sd) = mean_sd(&ratios);
            rows.push(MetricRow {
                method,
                cutoff: Some(cutoff),
                mean,
                sd,
                n_failures: failures,
            });
        }
    }
    Ok(MetricReport {
        rows,
        replicates: outputs.len(),
        skipped_replicates: 0,
        warnings: base_warnings(config, &outputs),
    })
}

/// Mean TPR at true FDR 0.05 for every method.
pub fn run_power_study(config: &ScenarioConfig, methods: &MethodConfig) -> Result<MetricReport> {
    config.validate()?;
    methods.validate()?;
    if !(config.pi11 > 0.0) {
        return Err(Error::Config(vec!["a power study needs pi11 > 0".to_string()]));
    }
    let outputs = replicate_outputs(config, methods)?;
    let usable: Vec<&ReplicateOutput> = outputs
        .iter()
        .filter(|o| o.labels.iter().any(|l| !l.is_null()))
        .collect();
    let skipped = outputs.len() - usable.len();
    let mut rows = Vec::new();
    for method in sorted_methods(methods) {
        let mut tprs = Vec::with_capacity(usable.len());
        let mut failures = 0;
        for out in &usable {
            match out.pvalues.values(method) {
                Some(p) => tprs.extend(true_fdr_tpr(p, &out.labels, TRUE_FDR_LEVEL)),
                None => failures += 1,
            }
        }
        let (mean, sd) = mean_sd(&tprs);
        rows.push(MetricRow {
            method,
            cutoff: None,
            mean,
            sd,
            n_failures: failures,
        });
    }
    let mut warnings = base_warnings(config, &outputs);
    if skipped > 0 {
        warnings.push(format!("{skipped} replicates drew no H11 mediator and were skipped"));
    }
    Ok(MetricReport {
        rows,
        replicates: outputs.len(),
        skipped_replicates: skipped,
        warnings,
    })
}

fn sorted_methods(methods: &MethodConfig) -> Vec<Method> {
    let mut m = methods.methods.clone();
    m.sort();
    m.dedup();
    m
}

/// QQ points `(expected, observed)` in `−log₁₀` scale, observed sorted
/// ascending by p and expected at `(i − 0.5)/J`.
pub fn qq_export(pvalues: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pvalues.is_empty() {
        return Err(Error::domain("QQ export needs at least one p-value"));
    }
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let j = sorted.len() as f64;
    Ok(sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| (-((i as f64 + 0.5) / j).log10(), -p.log10()))
        .collect())
}
