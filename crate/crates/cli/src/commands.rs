use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use transport_core::ate::{
    drlearner_fit, drlearner_pseudo, eif_ate, eif_ate_variant, gformula_ate, ipw_ate, psi_sp_d, solve_beta_d, Variant,
};
use transport_core::cmr::{
    cmr_estimate_with, cmr_variant, gformula_cmr, psi_sp_r, single_source_cmr, solve_beta_r, OneStepDivisor,
    RatioEstimate,
};
use transport_core::data::{load_csv, Loaded, Mode};
use transport_core::nuisance::{fit_nuisances, Basis, FittedNuisances, ModelSpec, NuisanceTable, WeightChoice};
use transport_core::report::EstimateReport;
use transport_core::simlab::{emit_table, preset, run_grid, Execution, GridConfig, Layout, ORACLE_DRAWS, DEFAULT_SIZES};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] transport_core::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if !e.is_data_error() => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "transport-meta", version, about = "Transport trial results to a target population")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Target-population average treatment effect.
    EstimateAte(EstimateArgs<AteEstimator>),
    /// Target-population causal mean ratio.
    EstimateCmr(CmrArgs),
    /// DR-learner regression of the CATE on covariates.
    Drlearner(DrArgs),
    /// Run a simulation grid and write summary tables.
    Simulate(SimArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// CSV with columns g, s, a, y, x1..xp.
    #[arg(long)]
    input: PathBuf,
    /// JSON model spec; main-effects models when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// optimal, constant or custom:λ1,λ0.
    #[arg(long, default_value = "optimal")]
    weights: WeightChoice,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    ci: f64,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs<E: ValueEnum + Clone + Send + Sync + 'static> {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    estimator: Option<E>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AteEstimator {
    Eif,
    Gformula,
    Ipw,
    Pooled,
    Armwise,
    /// Plug-in from a linear CATE solved on its efficient score.
    PsiSp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CmrEstimator {
    Cmr,
    Gformula,
    Pooled,
    Armwise,
    SingleSource,
    /// Plug-in from a log-linear ratio solved on its efficient score.
    PsiSp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Divisor {
    Psi1,
    LogPsi1,
}

#[derive(Debug, Args)]
struct CmrArgs {
    #[command(flatten)]
    inner: EstimateArgs<CmrEstimator>,
    /// Scaling of the one-step correction on the log scale.
    #[arg(long, value_enum, default_value = "psi1")]
    onestep_divisor: Divisor,
}

#[derive(Debug, Args)]
struct DrArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated regression terms, e.g. "1,x1,x2"; all main effects
    /// when omitted.
    #[arg(long)]
    basis: Option<String>,
}

#[derive(Debug, Args)]
struct SimArgs {
    /// table1, table2 or table3.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// JSON grid config (layout plus scenario list).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Replications per cell (overrides the grid config).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample sizes for a preset.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Covariate draws for the ground truth.
    #[arg(long)]
    oracle_draws: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::EstimateAte(a) => estimate_ate(a),
        Command::EstimateCmr(a) => estimate_cmr(a),
        Command::Drlearner(a) => drlearner(a),
        Command::Simulate(a) => simulate(a),
    }
}

fn check_level(ci: f64) -> Result<()> {
    if !(ci > 0.0 && ci < 1.0) {
        return Err(CliError::Usage(format!("--ci must lie in (0,1), got {ci}")));
    }
    Ok(())
}

struct Prepared {
    loaded: Loaded,
    fitted: FittedNuisances,
    table: NuisanceTable,
}

fn prepare(c: &Common, mode: Mode) -> Result<Prepared> {
    check_level(c.ci)?;
    c.weights.validate()?;
    let loaded = load_csv(&c.input, mode)?;
    let spec = match &c.spec {
        Some(p) => serde_json::from_str::<ModelSpec>(&fs::read_to_string(p)?)?,
        None => ModelSpec::linear(mode, loaded.data.p()),
    };
    let fitted = fit_nuisances(&loaded.data, &spec)?;
    let table = fitted.evaluate(&loaded.data)?;
    for s in table.status.iter().filter(|s| !s.converged) {
        log::warn!("nuisance {} did not converge (gradient {:.3e})", s.name, s.gradient_norm);
    }
    Ok(Prepared { loaded, fitted, table })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn header(p: &Prepared) -> String {
    let d = &p.loaded.data;
    format!("n          {} (target {}, trials {})\n", d.n(), d.n_target(), d.m())
}

fn linear_start(fitted: &FittedNuisances, basis: &Basis) -> Vec<f64> {
    let o = &fitted.outcome;
    basis
        .terms
        .iter()
        .map(|t| o.effect.terms.iter().position(|u| u == t).map_or(0.0, |k| o.effect_coef[k]))
        .collect()
}

fn estimate_ate(a: EstimateArgs<AteEstimator>) -> Result<String> {
    let p = prepare(&a.common, Mode::Difference)?;
    let (data, table) = (&p.loaded.data, &p.table);
    let mut report: EstimateReport = match a.estimator.unwrap_or(AteEstimator::Eif) {
        AteEstimator::Eif => eif_ate(data, table, &a.common.weights)?,
        AteEstimator::Gformula => gformula_ate(data, table)?,
        AteEstimator::Ipw => ipw_ate(data, table, None)?,
        AteEstimator::Pooled => eif_ate_variant(data, table, Variant::Pooled)?,
        AteEstimator::Armwise => eif_ate_variant(data, table, Variant::Armwise)?,
        AteEstimator::PsiSp => {
            let lin = Basis::linear(data.p());
            let cate = solve_beta_d(data, table, &lin, &linear_start(&p.fitted, &lin))?;
            psi_sp_d(data, &cate)?
        }
    };
    report.set_level(a.common.ci)?;
    if let Some(out) = &a.common.out {
        write_json(out, &report)?;
    }
    let mut s = format!("estimator  {}\n", report.estimator);
    let _ = writeln!(s, "psi_hat    {:.6}", report.psi_hat);
    if let (Some(se), Some((lo, hi))) = (report.se, report.ci) {
        let _ = writeln!(s, "se         {se:.6}");
        let _ = writeln!(s, "{:<10} [{lo:.6}, {hi:.6}]", format!("{}% CI", 100.0 * report.ci_level));
    }
    s.push_str(&header(&p));
    Ok(s)
}

fn estimate_cmr(a: CmrArgs) -> Result<String> {
    let c = &a.inner.common;
    let p = prepare(c, Mode::Ratio)?;
    let (data, table) = (&p.loaded.data, &p.table);
    let divisor = match a.onestep_divisor {
        Divisor::Psi1 => OneStepDivisor::Psi1Init,
        Divisor::LogPsi1 => OneStepDivisor::LogPsi1Init,
    };
    let mut report: RatioEstimate = match a.inner.estimator.unwrap_or(CmrEstimator::Cmr) {
        CmrEstimator::Cmr => cmr_estimate_with(data, table, &c.weights, divisor)?,
        CmrEstimator::Gformula => gformula_cmr(data, table)?,
        CmrEstimator::Pooled => cmr_variant(data, table, Variant::Pooled)?,
        CmrEstimator::Armwise => cmr_variant(data, table, Variant::Armwise)?,
        CmrEstimator::SingleSource => single_source_cmr(data, table)?,
        CmrEstimator::PsiSp => {
            let lin = Basis::linear(data.p());
            let fit = solve_beta_r(data, table, &lin, &linear_start(&p.fitted, &lin))?;
            psi_sp_r(data, &fit)?
        }
    };
    report.set_level(c.ci)?;
    if let Some(out) = &c.out {
        write_json(out, &report)?;
    }
    let mut s = format!("estimator  {}\n", report.estimator);
    let _ = writeln!(s, "psi_hat    {:.6}", report.psi_hat);
    if let (Some(se), Some((lo, hi))) = (report.se, report.ci) {
        let _ = writeln!(s, "se         {se:.6}");
        let _ = writeln!(s, "{:<10} [{lo:.6}, {hi:.6}]", format!("{}% CI", 100.0 * report.ci_level));
    }
    s.push_str(&header(&p));
    Ok(s)
}

#[derive(Serialize)]
struct DrReport<'a> {
    basis: &'a Basis,
    coefficients: &'a [f64],
    weights: String,
    rows: &'a [usize],
    pseudo_outcomes: &'a [f64],
}

fn drlearner(a: DrArgs) -> Result<String> {
    let p = prepare(&a.common, Mode::Difference)?;
    let data = &p.loaded.data;
    let basis = match &a.basis {
        Some(b) => {
            let terms: Vec<&str> = b.split(',').map(str::trim).collect();
            Basis::parse(&terms)?
        }
        None => Basis::linear(data.p()),
    };
    let pseudo = drlearner_pseudo(data, &p.table, &a.common.weights)?;
    let fit = drlearner_fit(data, &pseudo, &basis)?;
    if let Some(out) = &a.common.out {
        write_json(
            out,
            &DrReport {
                basis: &fit.basis,
                coefficients: &fit.coefficients,
                weights: a.common.weights.to_string(),
                rows: &pseudo.rows,
                pseudo_outcomes: &pseudo.zeta,
            },
        )?;
    }
    let mut s = String::from("DR-learner CATE coefficients\n");
    let names = serde_json::to_value(&fit.basis)?;
    for (k, c) in fit.coefficients.iter().enumerate() {
        let name = names.get(k).and_then(|v| v.as_str()).unwrap_or("?").to_string();
        let _ = writeln!(s, "  {name:<8} {c:.6}");
    }
    s.push_str(&header(&p));
    Ok(s)
}

fn simulate(a: SimArgs) -> Result<String> {
    let (mut grid, name) = match (&a.preset, &a.spec) {
        (Some(p), None) => {
            let layout: Layout = p.parse()?;
            let sizes = a.sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec());
            (preset(layout, &sizes, a.reps.unwrap_or(1000), a.seed.unwrap_or(1)), p.clone())
        }
        (None, Some(path)) => {
            let grid: GridConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("grid").to_string();
            (grid, name)
        }
        _ => return Err(CliError::Usage("simulate needs exactly one of --preset or --spec".into())),
    };
    for c in &mut grid.scenarios {
        if a.spec.is_some() {
            if let Some(r) = a.reps {
                c.reps = r;
            }
            if let Some(s) = a.seed {
                c.seed = s;
            }
        }
        if let Some(d) = a.oracle_draws {
            c.oracle_draws = Some(d);
        }
    }
    let exec = match a.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(k) => Execution::Threads(k),
        None => Execution::Parallel,
    };
    let results = run_grid(&grid, exec)?;
    let failures: usize = results.iter().map(|r| r.failures.len()).sum();
    if failures > 0 {
        log::warn!("{failures} replication(s) failed and were excluded; see the JSON summary");
    }
    let rows: Vec<_> = results.iter().map(|r| r.summary.clone()).collect();
    let table = emit_table(&rows, grid.layout);
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join(format!("{name}.csv")), &table.csv)?;
    fs::write(a.out.join(format!("{name}.txt")), &table.text)?;
    #[derive(Serialize)]
    struct Cell<'a> {
        summary: &'a transport_core::simlab::SummaryRow,
        failures: &'a [(usize, String)],
    }
    let cells: Vec<Cell> = results.iter().map(|r| Cell { summary: &r.summary, failures: &r.failures }).collect();
    write_json(&a.out.join(format!("{name}.json")), &cells)?;
    let draws = grid.scenarios.first().and_then(|c| c.oracle_draws).unwrap_or(ORACLE_DRAWS);
    log::info!("ground truth from {draws} covariate draws");
    Ok(table.text)
}
