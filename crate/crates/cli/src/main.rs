use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use medtest::io::{
    failure_notes, parse_config, parse_methods, read_input, recommend_for_table, to_summary, write_metric_report,
    write_pvalues, write_qq, write_summary, Reporting, DEFAULT_SPARSITY_THRESHOLD,
};
use medtest::mediation::{run_all_methods, MethodConfig};
use medtest::sim::{qq_export, run_null_study, run_power_study, run_replicate};
use medtest::{Error, Result};

#[derive(Parser)]
#[command(name = "medtest", version, about = "Composite-null tests for high-dimensional mediation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute composite-null p-values for every mediator in a file.
    Test {
        /// Summary (id, z_alpha, z_beta) or raw (y, x, m_*, c_*) CSV.
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated methods, or "all".
        #[arg(long, default_value = "all")]
        methods: String,
        /// FWER level for the Bonferroni flags.
        #[arg(long, default_value_t = 0.05)]
        fwer: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[arg(long, default_value_t = 0.3)]
        gamma: f64,
        #[arg(long, default_value_t = 0.05)]
        dact_epsilon: f64,
        /// Also flag Benjamini-Hochberg rejections at this FDR level.
        #[arg(long)]
        bh: Option<f64>,
        /// Output CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a null (FPR) or power (TPR) simulation study.
    Simulate {
        /// key = value scenario file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Output directory; created if missing.
        #[arg(long)]
        out: PathBuf,
        /// Write QQ points of the first replicate to qq.csv.
        #[arg(long)]
        qq: bool,
        /// Write the first replicate's z-statistics to summary.csv.
        #[arg(long)]
        emit_summary: bool,
        /// Worker threads; all cores when absent. Results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Suggest Sobel-comp or HDMT from the estimated null proportions.
    Recommend {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SPARSITY_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Null,
    Power,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Test {
            input,
            methods,
            fwer,
            lambda,
            gamma,
            dact_epsilon,
            bh,
            out,
        } => cmd_test(&input, &methods, fwer, lambda, gamma, dact_epsilon, bh, out.as_deref()),
        Command::Simulate {
            config,
            mode,
            out,
            qq,
            emit_summary,
            threads,
        } => cmd_simulate(&config, mode, &out, qq, emit_summary, threads),
        Command::Recommend {
            input,
            threshold,
            lambda,
        } => cmd_recommend(&input, threshold, lambda),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn warn(lines: &[String]) {
    for w in lines {
        eprintln!("warning: {w}");
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[allow(clippy::too_many_arguments)]
fn cmd_test(
    input: &Path,
    methods: &str,
    fwer: f64,
    lambda: f64,
    gamma: f64,
    dact_epsilon: f64,
    bh: Option<f64>,
    out: Option<&Path>,
) -> Result<()> {
    let config = MethodConfig {
        methods: parse_methods(methods)?,
        lambda,
        gamma,
        dact_epsilon,
        ..MethodConfig::default()
    };
    config.validate()?;
    let (table, mut warnings) = to_summary(read_input(input)?)?;
    let matrix = run_all_methods(&table, &config)?;
    warnings.extend(matrix.warnings.iter().cloned());
    warnings.extend(failure_notes(&matrix));
    let reporting = Reporting { fwer, bh };
    let threshold = match out {
        Some(path) => {
            let mut w = create(path)?;
            let t = write_pvalues(&mut w, &table, &matrix, reporting)?;
            w.flush()?;
            t
        }
        None => write_pvalues(io::stdout().lock(), &table, &matrix, reporting)?,
    };
    warn(&warnings);
    eprintln!(
        "Bonferroni threshold: {threshold:.3e} (FWER {fwer} over {} mediators)",
        table.len()
    );
    if let Some(q) = bh {
        eprintln!("bh_* columns: Benjamini-Hochberg at {q} on the composite p-values, a convenience report");
    }
    Ok(())
}

fn cmd_simulate(
    config: &Path,
    mode: Mode,
    out: &Path,
    qq: bool,
    emit_summary: bool,
    threads: Option<usize>,
) -> Result<()> {
    let text = fs::read_to_string(config).map_err(|e| Error::Io(format!("{}: {e}", config.display())))?;
    let (scenario, methods) = parse_config(&text)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Error::Config(vec!["--threads must be at least 1".into()]));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Error::Io(e.to_string()))?;
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;

    pool.install(|| -> Result<()> {
        let report = match mode {
            Mode::Null => run_null_study(&scenario, &methods)?,
            Mode::Power => run_power_study(&scenario, &methods)?,
        };
        let mut w = create(&out.join("report.csv"))?;
        write_metric_report(&mut w, &report)?;
        w.flush()?;
        warn(&report.warnings);

        if qq || emit_summary {
            let first = run_replicate(&scenario, &methods, 0)?;
            if qq {
                let points = first
                    .pvalues
                    .columns()
                    .iter()
                    .filter_map(|(m, c)| c.values().map(|v| qq_export(v).map(|p| (*m, p))))
                    .collect::<Result<Vec<_>>>()?;
                let mut w = create(&out.join("qq.csv"))?;
                write_qq(&mut w, &points)?;
                w.flush()?;
            }
            if emit_summary {
                let mut w = create(&out.join("summary.csv"))?;
                write_summary(&mut w, &first.table)?;
                w.flush()?;
            }
        }
        Ok(())
    })
}

fn cmd_recommend(input: &Path, threshold: f64, lambda: f64) -> Result<()> {
    let (table, warnings) = to_summary(read_input(input)?)?;
    warn(&warnings);
    if table.len() < 100 {
        warn(&[format!("J = {} is below 100; proportion estimates will be unreliable", table.len())]);
    }
    let rec = recommend_for_table(&table, lambda, threshold)?;
    let p = rec.proportions;
    let mut out = io::stdout().lock();
    writeln!(out, "method: {}", rec.method)?;
    writeln!(out, "pi00: {:.6}", p.pi00)?;
    writeln!(out, "pi01: {:.6}", p.pi01)?;
    writeln!(out, "pi10: {:.6}", p.pi10)?;
    writeln!(out, "rationale: {}", rec.rationale)?;
    Ok(())
}
