//! Least-squares fits of the mediator model `M_j ~ 1 + X + C` and the
//! outcome model `Y ~ 1 + X + M_j + C`, reduced to Wald statistics.
//!
//! Both models share the base design `[1, X, C]`. It is factored once; each
//! mediator then costs two projections onto it, and the outcome-model slope
//! for `M_j` comes from the residualised regression (Frisch–Waugh–Lovell).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mediation::{SummaryTable, ZPair};

/// Residual variance floor used when a fit is exact.
pub const SIGMA2_FLOOR: f64 = 1e-30;

/// A column is treated as dependent when the part of it orthogonal to the
/// earlier columns is this small relative to its norm.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub sigma2: f64,
    pub df: usize,
    /// Residuals vanished to rounding level and `sigma2` was floored.
    pub exact_fit: bool,
}

fn column_name(names: Option<&[String]>, k: usize) -> String {
    names
        .and_then(|n| n.get(k).cloned())
        .unwrap_or_else(|| format!("x{k}"))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Thin QR of a design with the rank check applied.
struct Factor {
    /// Columns of the thin `Q`.
    q: Vec<Vec<f64>>,
    /// Inverse of the upper-triangular `R`.
    rinv: DMatrix<f64>,
}

impl Factor {
    fn new(design: &DMatrix<f64>, names: Option<&[String]>) -> Result<Self> {
        let (n, p) = design.shape();
        if p == 0 {
            return Err(Error::domain("design has no columns"));
        }
        if n <= p {
            return Err(Error::domain(format!(
                "design has {n} rows for {p} columns; need at least {}",
                p + 1
            )));
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("design contains non-finite values"));
        }
        let qr = design.clone().qr();
        let r = qr.r();
        for k in 0..p {
            let norm = design.column(k).norm();
            if r[(k, k)].abs() <= RANK_TOL * norm || norm == 0.0 {
                return Err(Error::RankDeficient {
                    column: k,
                    name: column_name(names, k),
                });
            }
        }
        let rinv = r
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::domain("triangular factor is singular"))?;
        let qm = qr.q();
        let q = (0..p).map(|k| qm.column(k).iter().copied().collect()).collect();
        Ok(Self { q, rinv })
    }

    fn cols(&self) -> usize {
        self.q.len()
    }

    /// `Qᵀv` and the residual `v − QQᵀv`.
    fn project(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut resid = v.to_vec();
        let mut coef = Vec::with_capacity(self.q.len());
        for qk in &self.q {
            let c = dot(qk, &resid);
            for (r, qi) in resid.iter_mut().zip(qk) {
                *r -= c * qi;
            }
            coef.push(c);
        }
        (coef, resid)
    }

    /// Row `k` of `R⁻¹` dotted with `Qᵀy` gives coefficient `k`.
    fn coefficient(&self, qty: &[f64], k: usize) -> f64 {
        (k..self.cols()).map(|i| self.rinv[(k, i)] * qty[i]).sum()
    }

    /// `√((RᵀR)⁻¹)_kk`.
    fn unit_se(&self, k: usize) -> f64 {
        self.rinv.row(k).norm()
    }
}

/// A fit counts as exact when the residual norm is at rounding level
/// relative to the response norm.
const EXACT_FIT_REL: f64 = 1e-12;

fn floored_sigma2(rss: f64, response_ss: f64, df: usize) -> (f64, bool) {
    let s2 = rss / df as f64;
    if rss <= EXACT_FIT_REL * EXACT_FIT_REL * response_ss || s2 <= SIGMA2_FLOOR {
        (SIGMA2_FLOOR, true)
    } else {
        (s2, false)
    }
}

/// Ordinary least squares through a Householder QR.
///
/// `names` labels the design columns in rank-deficiency errors.
pub fn ols_fit(response: &[f64], design: &DMatrix<f64>, names: Option<&[String]>) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if response.len() != n {
        return Err(Error::domain(format!(
            "response has {} rows, design has {n}",
            response.len()
        )));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("response contains non-finite values"));
    }
    let f = Factor::new(design, names)?;
    let (qty, resid) = f.project(response);
    let df = n - p;
    let (sigma2, exact_fit) = floored_sigma2(dot(&resid, &resid), dot(response, response), df);
    let sigma = sigma2.sqrt();
    Ok(OlsFit {
        coefficients: (0..p).map(|k| f.coefficient(&qty, k)).collect(),
        std_errors: (0..p).map(|k| sigma * f.unit_se(k)).collect(),
        sigma2,
        df,
        exact_fit,
    })
}

/// Exposure `X`, outcome `Y`, mediators `M` (`n × J`) and covariates `C`
/// (`n × q`, possibly `q = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub exposure: Vec<f64>,
    pub outcome: Vec<f64>,
    pub mediators: DMatrix<f64>,
    pub covariates: DMatrix<f64>,
    pub mediator_names: Option<Vec<String>>,
    pub covariate_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        exposure: Vec<f64>,
        outcome: Vec<f64>,
        mediators: DMatrix<f64>,
        covariates: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = exposure.len();
        let covariates = covariates.unwrap_or_else(|| DMatrix::zeros(n, 0));
        let data = Self {
            exposure,
            outcome,
            mediators,
            covariates,
            mediator_names: None,
            covariate_names: None,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn with_names(mut self, mediators: Option<Vec<String>>, covariates: Option<Vec<String>>) -> Result<Self> {
        self.mediator_names = mediators;
        self.covariate_names = covariates;
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.exposure.len()
    }

    pub fn num_mediators(&self) -> usize {
        self.mediators.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let q = self.covariates.ncols();
        if self.outcome.len() != n || self.mediators.nrows() != n || self.covariates.nrows() != n {
            return Err(Error::domain(format!(
                "inconsistent row counts: exposure {n}, outcome {}, mediators {}, covariates {}",
                self.outcome.len(),
                self.mediators.nrows(),
                self.covariates.nrows()
            )));
        }
        if n <= q + 3 {
            return Err(Error::domain(format!(
                "{n} observations leave no residual degrees of freedom with {q} covariates"
            )));
        }
        if self.mediators.ncols() == 0 {
            return Err(Error::domain("dataset has no mediators"));
        }
        if let Some(names) = &self.mediator_names {
            if names.len() != self.mediators.ncols() {
                return Err(Error::domain("mediator name count does not match columns"));
            }
        }
        if let Some(names) = &self.covariate_names {
            if names.len() != q {
                return Err(Error::domain("covariate name count does not match columns"));
            }
        }
        Ok(())
    }
}

/// Estimates and Wald statistics for one mediator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediatorFit {
    pub alpha_hat: f64,
    pub se_alpha: f64,
    pub z_alpha: f64,
    pub beta_hat: f64,
    pub se_beta: f64,
    pub z_beta: f64,
    /// Either model fitted exactly and its residual variance was floored.
    pub exact_fit: bool,
}

impl MediatorFit {
    pub fn zpair(&self) -> Result<ZPair> {
        ZPair::new(self.z_alpha, self.z_beta)
    }
}

/// Fits both models for any number of mediators against a fixed exposure
/// and covariate block.
pub struct MediatorFitter {
    base: Factor,
    n: usize,
}

impl MediatorFitter {
    pub fn new(exposure: &[f64], covariates: &DMatrix<f64>, covariate_names: Option<&[String]>) -> Result<Self> {
        let n = exposure.len();
        let q = covariates.ncols();
        if covariates.nrows() != n {
            return Err(Error::domain("covariate rows do not match exposure length"));
        }
        if n <= q + 3 {
            return Err(Error::domain(format!(
                "{n} observations leave no residual degrees of freedom with {q} covariates"
            )));
        }
        let mut design = DMatrix::zeros(n, q + 2);
        design.column_mut(0).fill(1.0);
        design.set_column(1, &DVector::from_column_slice(exposure));
        for k in 0..q {
            design.set_column(k + 2, &covariates.column(k));
        }
        let mut names = vec!["intercept".to_string(), "exposure".to_string()];
        names.extend((0..q).map(|k| {
            covariate_names
                .and_then(|c| c.get(k).cloned())
                .unwrap_or_else(|| format!("covariate {}", k + 1))
        }));
        Ok(Self {
            base: Factor::new(&design, Some(&names))?,
            n,
        })
    }

    /// Residual of `y` on the base design, for reuse across mediators that
    /// share an outcome.
    pub fn outcome_residual(&self, y: &[f64]) -> Vec<f64> {
        self.base.project(y).1
    }

    /// Fits mediator `m` given the residualised outcome. `column` and
    /// `name` only label errors.
    pub fn fit(&self, m: &[f64], y_resid: &[f64], column: usize, name: &str) -> Result<MediatorFit> {
        let n = self.n;
        let p = self.base.cols();
        if m.len() != n || y_resid.len() != n {
            return Err(Error::domain("vector length does not match the design"));
        }
        if m.iter().chain(y_resid).any(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite values in mediator {name}")));
        }

        let (qtm, m_resid) = self.base.project(m);
        let rss_m = dot(&m_resid, &m_resid);
        let (s2_m, exact_m) = floored_sigma2(rss_m, dot(m, m), n - p);
        let alpha_hat = self.base.coefficient(&qtm, 1);
        let se_alpha = s2_m.sqrt() * self.base.unit_se(1);

        let m_norm = dot(m, m).sqrt();
        let mm = rss_m.sqrt();
        if mm <= RANK_TOL * m_norm || m_norm == 0.0 {
            return Err(Error::RankDeficient {
                column,
                name: name.to_string(),
            });
        }
        let beta_hat = dot(&m_resid, y_resid) / rss_m;
        let rss_y: f64 = y_resid
            .iter()
            .zip(&m_resid)
            .map(|(y, r)| (y - beta_hat * r).powi(2))
            .sum();
        let (s2_y, exact_y) = floored_sigma2(rss_y, dot(y_resid, y_resid), n - p - 1);
        let se_beta = s2_y.sqrt() / mm;

        Ok(MediatorFit {
            alpha_hat,
            se_alpha,
            z_alpha: alpha_hat / se_alpha,
            beta_hat,
            se_beta,
            z_beta: beta_hat / se_beta,
            exact_fit: exact_m || exact_y,
        })
    }
}

/// Per-mediator fits with the failures kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub fits: Vec<std::result::Result<MediatorFit, Error>>,
    pub names: Option<Vec<String>>,
}

impl FitResult {
    pub fn failure_mask(&self) -> Vec<bool> {
        self.fits.iter().map(|f| f.is_err()).collect()
    }

    pub fn num_failed(&self) -> usize {
        self.fits.iter().filter(|f| f.is_err()).count()
    }

    /// Summary table over the successful mediators, and their column indices.
    pub fn summary_table(&self) -> Result<(SummaryTable, Vec<usize>)> {
        let mut pairs = Vec::new();
        let mut kept = Vec::new();
        for (j, fit) in self.fits.iter().enumerate() {
            if let Ok(f) = fit {
                pairs.push(f.zpair()?);
                kept.push(j);
            }
        }
        let ids = Some(match &self.names {
            Some(names) => kept.iter().map(|&j| names[j].clone()).collect(),
            None => kept.iter().map(|&j| format!("M{}", j + 1)).collect(),
        });
        Ok((SummaryTable::new(pairs, ids)?, kept))
    }
}

/// Fits both models for every mediator column of `data`.
pub fn compute_zpairs(data: &Dataset) -> Result<FitResult> {
    data.validate()?;
    let fitter = MediatorFitter::new(&data.exposure, &data.covariates, data.covariate_names.as_deref())?;
    if data.outcome.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("outcome contains non-finite values"));
    }
    let y_resid = fitter.outcome_residual(&data.outcome);
    let fits = (0..data.num_mediators())
        .into_par_iter()
        .map(|j| {
            let name = data
                .mediator_names
                .as_ref()
                .map(|n| n[j].clone())
                .unwrap_or_else(|| format!("M{}", j + 1));
            fitter.fit(data.mediators.column(j).as_slice(), &y_resid, j, &name)
        })
        .collect();
    Ok(FitResult {
        fits,
        names: data.mediator_names.clone(),
    })
}
