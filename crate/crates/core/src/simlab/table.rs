//! Preset grids and table rendering.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dgp::DgpSpec;
use super::exec::Execution;
use super::scenario::{run_scenario, EstimatorId, Misspec, ScenarioConfig, ScenarioResult};
use crate::data::Mode;
use crate::error::{Error, Result};
use crate::nuisance::WeightChoice;

pub const DEFAULT_SIZES: [usize; 2] = [1250, 5000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// ATE: RMSE and SE on the natural scale.
    Table1,
    /// CMR: RMSE and SE in units of 10⁻².
    Table2,
    Table3,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Layout::Table1),
            "table2" => Ok(Layout::Table2),
            "table3" => Ok(Layout::Table3),
            _ => Err(Error::InvalidParameter(format!("unknown preset {s:?}; expected table1, table2 or table3"))),
        }
    }
}

impl Layout {
    fn spread_scale(&self) -> f64 {
        match self {
            Layout::Table1 => 1.0,
            Layout::Table2 | Layout::Table3 => 100.0,
        }
    }
}

/// A scenario grid plus how to lay out its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub layout: Layout,
    pub scenarios: Vec<ScenarioConfig>,
}

fn cell(label: String, dgp: &DgpSpec, n: usize, reps: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        label,
        dgp: dgp.clone(),
        n,
        reps,
        seed,
        misspec: Misspec::default(),
        weights: WeightChoice::Optimal,
        estimator: EstimatorId::Eif,
        oracle_draws: None,
    }
}

/// ATE under four specification scenarios: all correct, outcome wrong,
/// weighting stack wrong, everything wrong.
pub fn table1_scenario(k: usize, n: usize, reps: usize, seed: u64) -> ScenarioConfig {
    let mut c = cell(format!("n={n} s{k}"), &DgpSpec::difference(), n, reps, seed);
    let stack = Misspec { propensity: true, affiliation: true, selection: true, ..Default::default() };
    match k {
        1 => {}
        2 => c.misspec.outcome = true,
        3 => {
            c.misspec = stack;
            c.weights = WeightChoice::Constant;
        }
        _ => {
            c.misspec = Misspec { outcome: true, ..stack };
            c.weights = WeightChoice::Constant;
        }
    }
    c
}

/// CMR with every nuisance correct under four weight functions.
pub fn table2_scenario(k: usize, n: usize, reps: usize, seed: u64) -> ScenarioConfig {
    let mut c = cell(format!("n={n} w{k}"), &DgpSpec::ratio(), n, reps, seed);
    c.estimator = EstimatorId::Cmr;
    c.weights = match k {
        1 => WeightChoice::Optimal,
        2 => WeightChoice::Constant,
        3 => WeightChoice::Custom { lambda1: 1.0, lambda0: 10.0 },
        _ => WeightChoice::Custom { lambda1: 10.0, lambda0: 1.0 },
    };
    c
}

/// Parametric ratio: scenarios 1–4 cross correct/wrong Q0 and e under a
/// wrong V; scenario 5 has everything correct.
pub fn table3_scenario(k: usize, n: usize, reps: usize, seed: u64) -> ScenarioConfig {
    let mut c = cell(format!("n={n} s{k}"), &DgpSpec::ratio(), n, reps, seed);
    c.estimator = EstimatorId::PsiSpR;
    c.misspec.variance = k != 5;
    c.misspec.outcome = k == 2 || k == 4;
    c.misspec.propensity = k == 3 || k == 4;
    c
}

pub fn preset(layout: Layout, sizes: &[usize], reps: usize, seed: u64) -> GridConfig {
    let (count, make): (usize, fn(usize, usize, usize, u64) -> ScenarioConfig) = match layout {
        Layout::Table1 => (4, table1_scenario),
        Layout::Table2 => (4, table2_scenario),
        Layout::Table3 => (5, table3_scenario),
    };
    let scenarios = sizes.iter().flat_map(|&n| (1..=count).map(move |k| make(k, n, reps, seed))).collect();
    GridConfig { layout, scenarios }
}

pub fn run_grid(grid: &GridConfig, exec: Execution) -> Result<Vec<ScenarioResult>> {
    grid.scenarios.iter().map(|c| run_scenario(c, exec)).collect()
}

/// CSV and aligned-text renderings of the same table.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTable {
    pub csv: String,
    pub text: String,
}

const STATS: [&str; 5] = ["Mean", "Bias", "RMSE", "Coverage", "SE"];

/// Values in display units: bias ×10⁻², coverage in %, RMSE and SE scaled
/// per layout.
pub fn display_values(row: &super::scenario::SummaryRow, layout: Layout) -> [Option<f64>; 5] {
    let k = layout.spread_scale();
    [Some(row.mean), Some(row.bias), Some(row.rmse * k), row.coverage, row.se_mean.map(|s| s * k)]
}

pub fn emit_table(rows: &[super::scenario::SummaryRow], layout: Layout) -> RenderedTable {
    let mut csv = String::from("stat");
    for r in rows {
        csv.push(',');
        csv.push_str(&quote(&r.label));
    }
    csv.push('\n');
    if rows.is_empty() {
        return RenderedTable { text: csv.clone(), csv };
    }
    let vals: Vec<[Option<f64>; 5]> = rows.iter().map(|r| display_values(r, layout)).collect();
    for (j, stat) in STATS.iter().enumerate() {
        csv.push_str(stat);
        for v in &vals {
            csv.push(',');
            if let Some(x) = v[j] {
                // Shortest representation that parses back exactly.
                let _ = write!(csv, "{x:?}");
            }
        }
        csv.push('\n');
    }

    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(8);
    let mut text = format!("{:<8}", "");
    for r in rows {
        let _ = write!(text, "  {:>width$}", r.label);
    }
    text.push('\n');
    for (j, stat) in STATS.iter().enumerate() {
        let _ = write!(text, "{stat:<8}");
        for v in &vals {
            match v[j] {
                Some(x) => {
                    let _ = write!(text, "  {x:>width$.2}");
                }
                None => {
                    let _ = write!(text, "  {:>width$}", "-");
                }
            }
        }
        text.push('\n');
    }
    RenderedTable { csv, text }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Parsed form of an emitted CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

pub fn parse_table_csv(text: &str) -> Result<ParsedTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let columns = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let name = rec.get(0).unwrap_or_default().to_string();
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>().map(Some).map_err(|_| Error::InvalidData(format!("bad table value {f:?}")))
                }
            })
            .collect::<Result<_>>()?;
        rows.push((name, vals));
    }
    Ok(ParsedTable { columns, rows })
}

/// Mode of a preset's DGP.
pub fn layout_mode(layout: Layout) -> Mode {
    match layout {
        Layout::Table1 => Mode::Difference,
        Layout::Table2 | Layout::Table3 => Mode::Ratio,
    }
}
