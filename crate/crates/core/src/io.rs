//! File formats, the scenario config parser and the method recommendation.
//!
//! All writers are locale independent: numbers go through Rust's own
//! formatting, p-values and statistics with 17 significant digits so a
//! write/read cycle is exact for binary64.

use std::fmt;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::mediation::{Method, MethodColumn, MethodConfig, PValueMatrix, SummaryTable, ZPair};
use crate::null_estimators::{estimate_proportions, NullProportions};
use crate::regression::{compute_zpairs, Dataset};
use crate::sim::{MetricReport, ScenarioConfig};
use crate::{Error, Result};

/// Default cut on `π̂₀₁` and `π̂₁₀` below which a null counts as sparse.
pub const DEFAULT_SPARSITY_THRESHOLD: f64 = 0.01;

/// 17 significant digits, lowercase exponent; `NA` for NaN.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v:.16e}")
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            column: len as usize + 1,
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => Error::Parse {
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

fn write_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io.to_string()),
        other => Error::Io(format!("{other:?}")),
    }
}

/// An input file in either of the two accepted layouts.
#[derive(Debug, Clone, PartialEq)]
pub enum InputTable {
    /// `id, z_alpha, z_beta` (the `id` column is optional).
    Summary(SummaryTable),
    /// `y, x, m_*, c_*`: the `m_` and `c_` prefixes mark the mediator and
    /// covariate blocks, whose widths are read off the header.
    Raw(Dataset),
}

/// Reads either layout, picking it from the header.
pub fn parse_input<R: Read>(reader: R) -> Result<InputTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec));
    }
    if header.iter().any(|h| h == "z_alpha" || h == "z_beta") {
        parse_summary(&header, &rows).map(InputTable::Summary)
    } else {
        parse_raw(&header, &rows).map(InputTable::Raw)
    }
}

pub fn read_input(path: &std::path::Path) -> Result<InputTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_input(std::io::BufReader::new(file))
}

fn header_error(message: String) -> Error {
    Error::Parse {
        line: 1,
        column: 0,
        message,
    }
}

fn find_column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn number(rec: &csv::StringRecord, line: usize, column: usize) -> Result<f64> {
    let field = rec.get(column).unwrap_or("");
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Parse {
            line,
            column: column + 1,
            message: format!("non-finite value {field:?}"),
        }),
        Err(_) => Err(Error::Parse {
            line,
            column: column + 1,
            message: format!("not a number: {field:?}"),
        }),
    }
}

fn parse_summary(header: &[String], rows: &[(usize, csv::StringRecord)]) -> Result<SummaryTable> {
    let za = find_column(header, "z_alpha").ok_or_else(|| header_error("missing column z_alpha".into()))?;
    let zb = find_column(header, "z_beta").ok_or_else(|| header_error("missing column z_beta".into()))?;
    let id = find_column(header, "id");
    if let Some(extra) = header
        .iter()
        .find(|h| !matches!(h.as_str(), "id" | "z_alpha" | "z_beta"))
    {
        return Err(header_error(format!("unexpected column {extra:?} in summary input")));
    }
    if rows.is_empty() {
        return Err(header_error("summary input has no data rows".into()));
    }
    let mut pairs = Vec::with_capacity(rows.len());
    let mut ids = Vec::with_capacity(rows.len());
    for (line, rec) in rows {
        pairs.push(ZPair::new(number(rec, *line, za)?, number(rec, *line, zb)?)?);
        if let Some(c) = id {
            ids.push(rec.get(c).unwrap_or("").to_string());
        }
    }
    SummaryTable::new(pairs, id.map(|_| ids))
}

fn parse_raw(header: &[String], rows: &[(usize, csv::StringRecord)]) -> Result<Dataset> {
    let y = find_column(header, "y");
    let x = find_column(header, "x");
    let (Some(y), Some(x)) = (y, x) else {
        return Err(header_error(
            "header is neither summary (id, z_alpha, z_beta) nor raw (y, x, m_*, c_*)".into(),
        ));
    };
    let mut med = Vec::new();
    let mut cov = Vec::new();
    for (k, h) in header.iter().enumerate() {
        if h.starts_with("m_") {
            med.push(k);
        } else if h.starts_with("c_") {
            cov.push(k);
        } else if k != x && k != y {
            return Err(Error::Parse {
                line: 1,
                column: k + 1,
                message: format!("unexpected column {h:?} in raw input"),
            });
        }
    }
    if med.is_empty() {
        return Err(header_error("raw input has no m_ columns".into()));
    }
    let n = rows.len();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let mut m = DMatrix::zeros(n, med.len());
    let mut c = DMatrix::zeros(n, cov.len());
    for (i, (line, rec)) in rows.iter().enumerate() {
        xs.push(number(rec, *line, x)?);
        ys.push(number(rec, *line, y)?);
        for (j, &k) in med.iter().enumerate() {
            m[(i, j)] = number(rec, *line, k)?;
        }
        for (j, &k) in cov.iter().enumerate() {
            c[(i, j)] = number(rec, *line, k)?;
        }
    }
    let names = |cols: &[usize]| cols.iter().map(|&k| header[k].clone()).collect::<Vec<_>>();
    Dataset::new(xs, ys, m, Some(c))?.with_names(Some(names(&med)), Some(names(&cov)))
}

/// Turns an input into a summary table; raw inputs are fitted first and
/// mediators whose fit failed are dropped with a warning.
pub fn to_summary(input: InputTable) -> Result<(SummaryTable, Vec<String>)> {
    match input {
        InputTable::Summary(t) => Ok((t, Vec::new())),
        InputTable::Raw(data) => {
            let fits = compute_zpairs(&data)?;
            let mut warnings = Vec::new();
            for fit in &fits.fits {
                if let Err(e) = fit {
                    warnings.push(format!("dropped mediator: {e}"));
                }
            }
            if fits.num_failed() == fits.fits.len() {
                return Err(Error::domain("every mediator fit failed"));
            }
            let (table, _) = fits.summary_table()?;
            Ok((table, warnings))
        }
    }
}

pub fn write_summary<W: Write>(writer: W, table: &SummaryTable) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["id", "z_alpha", "z_beta"]).map_err(write_error)?;
    for (i, p) in table.pairs().iter().enumerate() {
        w.write_record([table.id(i), format_number(p.z_alpha), format_number(p.z_beta)])
            .map_err(write_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-test Bonferroni threshold controlling the FWER at `level`.
pub fn bonferroni_threshold(level: f64, tests: usize) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) || tests == 0 {
        return Err(Error::domain(format!(
            "FWER level must lie in (0, 1) with at least one test, got {level} and {tests}"
        )));
    }
    Ok(level / tests as f64)
}

/// Benjamini–Hochberg step-up rejections at level `q`.
pub fn benjamini_hochberg(pvalues: &[f64], q: f64) -> Vec<bool> {
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let cut = order
        .iter()
        .enumerate()
        .filter(|(k, &i)| pvalues[i] <= q * (k + 1) as f64 / m as f64)
        .map(|(k, _)| k + 1)
        .next_back()
        .unwrap_or(0);
    let mut reject = vec![false; m];
    for &i in &order[..cut] {
        reject[i] = true;
    }
    reject
}

/// Options for [`write_pvalues`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reporting {
    pub fwer: f64,
    /// Adds `bh_*` flag columns at this FDR level. Plain Benjamini–Hochberg
    /// on the composite p-values, offered as a convenience only.
    pub bh: Option<f64>,
}

/// Writes `id`, one `p_*` column per method, then `sig_*` Bonferroni flags
/// and the optional `bh_*` flags. Failed methods print `NA`. Returns the
/// Bonferroni threshold used.
pub fn write_pvalues<W: Write>(
    writer: W,
    table: &SummaryTable,
    matrix: &PValueMatrix,
    reporting: Reporting,
) -> Result<f64> {
    if table.len() != matrix.rows() {
        return Err(Error::domain("p-value matrix does not match the summary table"));
    }
    let threshold = bonferroni_threshold(reporting.fwer, matrix.rows())?;
    if let Some(q) = reporting.bh {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::domain(format!("BH level must lie in (0, 1), got {q}")));
        }
    }
    let cols = matrix.columns();
    let bh: Vec<Option<Vec<bool>>> = cols
        .iter()
        .map(|(_, c)| reporting.bh.zip(c.values()).map(|(q, v)| benjamini_hochberg(v, q)))
        .collect();

    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let mut header = vec!["id".to_string()];
    header.extend(cols.iter().map(|(m, _)| m.column().to_string()));
    // flags share the suffix of their p-value column
    let suffix = |m: &Method| m.column().trim_start_matches("p_");
    header.extend(cols.iter().map(|(m, _)| format!("sig_{}", suffix(m))));
    if reporting.bh.is_some() {
        header.extend(cols.iter().map(|(m, _)| format!("bh_{}", suffix(m))));
    }
    w.write_record(&header).map_err(write_error)?;

    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    let mut record = Vec::with_capacity(header.len());
    for i in 0..matrix.rows() {
        record.clear();
        record.push(table.id(i));
        for (_, c) in cols {
            record.push(c.values().map_or("NA".into(), |v| format_number(v[i])));
        }
        for (_, c) in cols {
            record.push(c.values().map_or("NA".into(), |v| flag(v[i] <= threshold)));
        }
        if reporting.bh.is_some() {
            for b in &bh {
                record.push(b.as_ref().map_or("NA".into(), |b| flag(b[i])));
            }
        }
        w.write_record(&record).map_err(write_error)?;
    }
    w.flush()?;
    Ok(threshold)
}

/// Reads the `p_*` columns of a file written by [`write_pvalues`].
pub fn read_pvalues<R: Read>(reader: R) -> Result<Vec<(Method, Vec<Option<f64>>)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let mut cols: Vec<(usize, Method, Vec<Option<f64>>)> = header
        .iter()
        .enumerate()
        .filter_map(|(k, h)| Method::ALL.iter().find(|m| m.column() == h).map(|&m| (k, m, Vec::new())))
        .collect();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        for (k, _, v) in cols.iter_mut() {
            v.push(match rec.get(*k) {
                Some("NA") => None,
                _ => Some(number(&rec, line, *k)?),
            });
        }
    }
    Ok(cols.into_iter().map(|(_, m, v)| (m, v)).collect())
}

/// Writes a null-study report (`cutoff`, `mean_ratio`) or a power-study
/// report (`cutoff = fdr05`, `tpr`).
pub fn write_metric_report<W: Write>(writer: W, report: &MetricReport) -> Result<()> {
    let power = report.rows.iter().any(|r| r.cutoff.is_none());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    let value = if power { "tpr" } else { "mean_ratio" };
    w.write_record(["method", "cutoff", value, "sd", "n_failures"]).map_err(write_error)?;
    for row in &report.rows {
        let cutoff = row.cutoff.map_or("fdr05".to_string(), |c| format!("{c:e}"));
        w.write_record([
            row.method.tag().to_string(),
            cutoff,
            format_number(row.mean),
            format_number(row.sd),
            row.n_failures.to_string(),
        ])
        .map_err(write_error)?;
    }
    w.flush()?;
    Ok(())
}

/// QQ points in `−log₁₀` scale, one block per method.
pub fn write_qq<W: Write>(writer: W, points: &[(Method, Vec<(f64, f64)>)]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(["method", "expected", "observed"]).map_err(write_error)?;
    for (method, pts) in points {
        for (e, o) in pts {
            w.write_record([method.tag().to_string(), format_number(*e), format_number(*o)])
                .map_err(write_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses `key = value` lines into a scenario and method settings.
///
/// Blank lines and `#` comments are skipped. Every problem in the file,
/// including those found by the two validators, is reported together.
pub fn parse_config(text: &str) -> Result<(ScenarioConfig, MethodConfig)> {
    let mut sc = ScenarioConfig::default();
    let mut mc = MethodConfig::default();
    let mut problems = Vec::new();
    let mut seen = std::collections::HashSet::new();

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            problems.push(format!("line {line_no}: expected key = value"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            problems.push(format!("line {line_no}: duplicate key {key:?}"));
            continue;
        }
        let float = |p: &mut Vec<String>| -> Option<f64> {
            value
                .parse::<f64>()
                .map_err(|_| p.push(format!("line {line_no}: {key} must be a number, got {value:?}")))
                .ok()
        };
        let int = |p: &mut Vec<String>| -> Option<u64> {
            value
                .parse::<u64>()
                .map_err(|_| p.push(format!("line {line_no}: {key} must be a non-negative integer, got {value:?}")))
                .ok()
        };
        let p = &mut problems;
        match key {
            "n" => sc.n = int(p).map_or(sc.n, |v| v as usize),
            "j" => sc.j = int(p).map_or(sc.j, |v| v as usize),
            "replicates" => sc.replicates = int(p).map_or(sc.replicates, |v| v as usize),
            "seed" => sc.seed = int(p).unwrap_or(sc.seed),
            "tau" => sc.tau = float(p).unwrap_or(sc.tau),
            "r2" => sc.r2 = if value == "none" { None } else { float(p).or(sc.r2) },
            "pi11" => sc.pi11 = float(p).unwrap_or(sc.pi11),
            "pi01" => sc.pi01 = float(p).unwrap_or(sc.pi01),
            "pi10" => sc.pi10 = float(p).unwrap_or(sc.pi10),
            "pi00" => sc.pi00 = float(p).unwrap_or(sc.pi00),
            "beta_x" => sc.beta_x = float(p).unwrap_or(sc.beta_x),
            "lambda" => mc.lambda = float(p).unwrap_or(mc.lambda),
            "gamma" => mc.gamma = float(p).unwrap_or(mc.gamma),
            "dact_epsilon" => mc.dact_epsilon = float(p).unwrap_or(mc.dact_epsilon),
            "center_fraction" => mc.center_fraction = float(p).unwrap_or(mc.center_fraction),
            "cutoffs" => match value.split(',').map(|s| s.trim().parse::<f64>()).collect() {
                Ok(v) => sc.cutoffs = v,
                Err(_) => p.push(format!("line {line_no}: cutoffs must be a comma-separated list of numbers")),
            },
            "methods" => match parse_methods(value) {
                Ok(v) => mc.methods = v,
                Err(e) => p.push(format!("line {line_no}: {e}")),
            },
            _ => p.push(format!("line {line_no}: unknown key {key:?}")),
        }
    }
    for result in [sc.validate(), mc.validate()] {
        match result {
            Err(Error::Config(v)) => problems.extend(v),
            Err(e) => problems.push(e.to_string()),
            Ok(()) => {}
        }
    }
    if problems.is_empty() {
        Ok((sc, mc))
    } else {
        Err(Error::Config(problems))
    }
}

/// Comma-separated method names; `all` selects every method.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    if list.trim() == "all" {
        return Ok(Method::ALL.to_vec());
    }
    let mut out = Vec::new();
    let mut bad = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match name.parse::<Method>() {
            Ok(m) if !out.contains(&m) => out.push(m),
            Ok(_) => {}
            Err(_) => bad.push(name.to_string()),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Config(vec![format!("unknown methods: {}", bad.join(", "))]));
    }
    if out.is_empty() {
        return Err(Error::Config(vec!["no methods selected".into()]));
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecommendedMethod {
    SobelComp,
    Hdmt,
}

impl fmt::Display for RecommendedMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecommendedMethod::SobelComp => "sobelcomp",
            RecommendedMethod::Hdmt => "hdmt",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    pub method: RecommendedMethod,
    pub rationale: String,
    pub proportions: NullProportions,
}

/// Sobel-comp when both single-effect shares are below `threshold`,
/// HDMT otherwise.
pub fn recommend(props: NullProportions, threshold: f64) -> Result<Recommendation> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::domain(format!("sparsity threshold must lie in (0, 1), got {threshold}")));
    }
    props.validate()?;
    let sparse = props.pi01 < threshold && props.pi10 < threshold;
    let (method, rationale) = if sparse {
        (
            RecommendedMethod::SobelComp,
            format!(
                "pi01 = {:.4} and pi10 = {:.4} are both below {threshold}: the null is sparse, \
                 where Sobel-comp keeps its size and gains power",
                props.pi01, props.pi10
            ),
        )
    } else {
        (
            RecommendedMethod::Hdmt,
            format!(
                "pi01 = {:.4}, pi10 = {:.4}: at least one single-effect share reaches {threshold}, \
                 where HDMT is the method that keeps its size",
                props.pi01, props.pi10
            ),
        )
    };
    Ok(Recommendation {
        method,
        rationale,
        proportions: props,
    })
}

pub fn recommend_for_table(table: &SummaryTable, lambda: f64, threshold: f64) -> Result<Recommendation> {
    let pa: Vec<f64> = table.pairs().iter().map(ZPair::p_alpha).collect();
    let pb: Vec<f64> = table.pairs().iter().map(ZPair::p_beta).collect();
    recommend(estimate_proportions(&pa, &pb, lambda)?, threshold)
}

/// Reason text for every failed column, for printing next to warnings.
pub fn failure_notes(matrix: &PValueMatrix) -> Vec<String> {
    matrix
        .columns()
        .iter()
        .filter_map(|(m, c)| match c {
            MethodColumn::Failed { reason, .. } => Some(format!("{m} failed: {reason}")),
            MethodColumn::Values(_) => None,
        })
        .collect()
}
