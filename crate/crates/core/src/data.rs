//! Pooled target-plus-trials dataset, CSV interchange and covariate support.
//!
//! The CSV schema is fixed: columns `g,s,a,y,x1..xp`, one row per subject,
//! empty cell meaning "absent". `g = 1` marks the target population; `s` is
//! the 1-based trial id and is present exactly on source rows.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{AffiliationModel, Segmentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Transport of the mean difference (target ATE).
    Difference,
    /// Transport of the mean ratio (target causal mean ratio).
    Ratio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub g: u8,
    /// 1-based trial id, present iff `g == 0`.
    pub s: Option<usize>,
    pub a: Option<u8>,
    pub y: Option<f64>,
    pub x: Vec<f64>,
}

impl Observation {
    pub fn source(s: usize, a: u8, y: f64, x: Vec<f64>) -> Self {
        Observation { g: 0, s: Some(s), a: Some(a), y: Some(y), x }
    }

    pub fn target(y: Option<f64>, x: Vec<f64>, mode: Mode) -> Self {
        let a = match mode {
            Mode::Difference => None,
            Mode::Ratio => Some(0),
        };
        Observation { g: 1, s: None, a, y, x }
    }

    pub fn is_target(&self) -> bool {
        self.g == 1
    }

    /// 0-based trial index of a source row.
    pub fn trial(&self) -> Option<usize> {
        self.s.map(|s| s - 1)
    }

    pub fn treated(&self) -> bool {
        self.a == Some(1)
    }

    pub fn a_f64(&self) -> f64 {
        f64::from(self.a.unwrap_or(0))
    }

    pub fn y_or_zero(&self) -> f64 {
        self.y.unwrap_or(0.0)
    }
}

/// Immutable pooled sample. Construction validates every row and the
/// per-trial invariants (each trial non-empty with both arms).
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset {
    rows: Vec<Observation>,
    m: usize,
    p: usize,
    mode: Mode,
}

impl StudyDataset {
    pub fn new(rows: Vec<Observation>, mode: Mode) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.x.len());
        let mut m = 0;
        for (i, r) in rows.iter().enumerate() {
            validate_row(i + 1, r, mode, p)?;
            if let Some(s) = r.s {
                m = m.max(s);
            }
        }
        let ds = StudyDataset { rows, m, p, mode };
        ds.check_invariants()?;
        Ok(ds)
    }

    fn check_invariants(&self) -> Result<()> {
        if self.n_target() == 0 {
            return Err(Error::InvalidData("no target-population rows (g=1)".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidData("no source-trial rows (g=0)".into()));
        }
        let mut arms = vec![[0usize; 2]; self.m];
        for r in self.source_rows() {
            arms[r.s.unwrap() - 1][r.a.unwrap() as usize] += 1;
        }
        for (k, c) in arms.iter().enumerate() {
            if c[0] + c[1] == 0 {
                return Err(Error::InvalidData(format!("trial {} has no rows", k + 1)));
            }
            if c[0] == 0 || c[1] == 0 {
                return Err(Error::InvalidData(format!(
                    "trial {} lacks a treatment arm (control {}, treated {})",
                    k + 1,
                    c[0],
                    c[1]
                )));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_target(&self) -> usize {
        self.rows.iter().filter(|r| r.is_target()).count()
    }

    /// `n1 / n`.
    pub fn alpha_hat(&self) -> f64 {
        self.n_target() as f64 / self.n() as f64
    }

    pub fn source_rows(&self) -> impl Iterator<Item = &Observation> {
        self.rows.iter().filter(|r| !r.is_target())
    }

    pub fn target_rows(&self) -> impl Iterator<Item = &Observation> {
        self.rows.iter().filter(|r| r.is_target())
    }

    pub fn trial_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.m];
        for r in self.source_rows() {
            sizes[r.s.unwrap() - 1] += 1;
        }
        sizes
    }
}

fn validate_row(row: usize, r: &Observation, mode: Mode, p: usize) -> Result<()> {
    let bad = |msg: &str| Err(Error::InvalidRow { row, msg: msg.to_string() });
    if r.x.len() != p {
        return bad(&format!("expected {p} covariates, found {}", r.x.len()));
    }
    if r.x.iter().any(|v| !v.is_finite()) {
        return bad("non-finite covariate");
    }
    match r.g {
        1 => {
            if r.s.is_some() {
                return bad("trial id on target row");
            }
            if mode == Mode::Ratio {
                if r.a == Some(1) {
                    return bad("treated unit in target");
                }
                if r.a != Some(0) {
                    return bad("target row in ratio mode must carry a=0");
                }
                if r.y.is_none() {
                    return bad("target row in ratio mode must carry an outcome");
                }
            }
        }
        0 => {
            match r.s {
                None => return bad("missing trial id on source row"),
                Some(0) => return bad("trial id 0 outside 1..m"),
                Some(_) => {}
            }
            match r.a {
                Some(0 | 1) => {}
                Some(_) => return bad("treatment must be 0 or 1"),
                None => return bad("missing treatment on source row"),
            }
            if r.y.is_none() {
                return bad("missing outcome on source row");
            }
        }
        _ => return bad("g must be 0 or 1"),
    }
    if let Some(y) = r.y {
        if !y.is_finite() {
            return bad("non-finite outcome");
        }
        if mode == Mode::Ratio && y < 0.0 {
            return bad("negative outcome in ratio mode");
        }
    }
    Ok(())
}

/// A loaded dataset together with non-fatal findings.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub data: StudyDataset,
    pub warnings: Vec<String>,
}

pub fn load_csv<P: AsRef<Path>>(path: P, mode: Mode) -> Result<Loaded> {
    let file = std::fs::File::open(path)?;
    read_csv(file, mode)
}

pub fn read_csv<R: Read>(reader: R, mode: Mode) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (ig, is, ia, iy) = (col("g")?, col("s")?, col("a")?, col("y")?);
    let mut ix = Vec::new();
    while let Some(pos) = headers.iter().position(|h| h == format!("x{}", ix.len() + 1)) {
        ix.push(pos);
    }
    if ix.is_empty() {
        return Err(Error::MissingColumn("x1".into()));
    }

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 1;
        let field = |j: usize| rec.get(j).map(str::trim).filter(|s| !s.is_empty());
        let parse_f = |j: usize, name: &str| -> Result<Option<f64>> {
            field(j)
                .map(|v| {
                    v.parse::<f64>().map_err(|_| Error::InvalidRow {
                        row: line,
                        msg: format!("cannot parse {name}={v:?}"),
                    })
                })
                .transpose()
        };
        let parse_u = |j: usize, name: &str| -> Result<Option<usize>> {
            field(j)
                .map(|v| {
                    v.parse::<usize>().map_err(|_| Error::InvalidRow {
                        row: line,
                        msg: format!("cannot parse {name}={v:?}"),
                    })
                })
                .transpose()
        };
        let g = parse_u(ig, "g")?.ok_or_else(|| Error::InvalidRow { row: line, msg: "missing g".into() })?;
        if g > 1 {
            return Err(Error::InvalidRow { row: line, msg: "g must be 0 or 1".into() });
        }
        let s = parse_u(is, "s")?;
        let a = parse_u(ia, "a")?;
        if matches!(a, Some(v) if v > 1) {
            return Err(Error::InvalidRow { row: line, msg: "treatment must be 0 or 1".into() });
        }
        let mut a = a.map(|v| v as u8);
        let mut y = parse_f(iy, "y")?;
        let mut x = Vec::with_capacity(ix.len());
        for (k, &j) in ix.iter().enumerate() {
            x.push(parse_f(j, &format!("x{}", k + 1))?.ok_or_else(|| Error::InvalidRow {
                row: line,
                msg: format!("missing x{}", k + 1),
            })?);
        }
        if g == 1 {
            match mode {
                Mode::Difference => {
                    if y.is_some() {
                        warnings.push(format!("row {line}: outcome on target row ignored in difference mode"));
                        y = None;
                    }
                    if a.is_some() {
                        warnings.push(format!("row {line}: treatment on target row ignored in difference mode"));
                        a = None;
                    }
                }
                Mode::Ratio => {
                    if a.is_none() {
                        a = Some(0);
                    }
                }
            }
        }
        rows.push(Observation { g: g as u8, s, a, y, x });
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Loaded {
        data: StudyDataset::new(rows, mode)?,
        warnings,
    })
}

pub fn write_csv<W: Write>(data: &StudyDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["g".to_string(), "s".into(), "a".into(), "y".into()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    wtr.write_record(&header)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in data.rows() {
        let mut rec = vec![
            r.g.to_string(),
            opt(r.s.map(|v| v.to_string())),
            opt(r.a.map(|v| v.to_string())),
            opt(r.y.map(|v| v.to_string())),
        ];
        rec.extend(r.x.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv<P: AsRef<Path>>(data: &StudyDataset, path: P) -> Result<()> {
    write_csv(data, std::fs::File::create(path)?)
}

pub const DEFAULT_SUPPORT_TAU: f64 = 1e-3;

#[derive(Debug, Clone)]
enum SupportRule {
    Threshold { eta: AffiliationModel, tau: f64 },
    Segments(Segmentation),
}

/// Which trials cover a covariate value, plus the target rows for which no
/// trial is eligible (overlap violations). Violations are reported, never
/// trimmed.
#[derive(Debug, Clone)]
pub struct SupportMap {
    rule: SupportRule,
    m: usize,
    pub violations: Vec<usize>,
}

impl SupportMap {
    pub fn tau(&self) -> Option<f64> {
        match &self.rule {
            SupportRule::Threshold { tau, .. } => Some(*tau),
            SupportRule::Segments(_) => None,
        }
    }

    /// 1-based ids of the trials eligible at `x`.
    pub fn eligible(&self, x: &[f64]) -> Vec<usize> {
        match &self.rule {
            SupportRule::Threshold { eta, tau } => eta
                .probs(x)
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > *tau)
                .map(|(k, _)| k + 1)
                .collect(),
            SupportRule::Segments(seg) => seg.allowed_at(x).to_vec(),
        }
    }

    pub fn is_eligible(&self, x: &[f64], s: usize) -> bool {
        s >= 1 && s <= self.m && self.eligible(x).contains(&s)
    }

    fn with_violations(rule: SupportRule, m: usize, data: &StudyDataset) -> Self {
        let mut map = SupportMap { rule, m, violations: Vec::new() };
        map.violations = data
            .rows()
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_target() && map.eligible(&r.x).is_empty())
            .map(|(i, _)| i)
            .collect();
        map
    }
}

/// Eligibility by thresholding the fitted affiliation probabilities.
pub fn build_support_map(data: &StudyDataset, eta: &AffiliationModel, tau: f64) -> SupportMap {
    let rule = SupportRule::Threshold { eta: eta.clone(), tau };
    SupportMap::with_violations(rule, data.m(), data)
}

/// Eligibility from known segment rules (e.g. the simulation's hard
/// thresholds) instead of a fitted model.
pub fn support_from_rule(data: &StudyDataset, rule: Segmentation) -> SupportMap {
    SupportMap::with_violations(SupportRule::Segments(rule), data.m(), data)
}
