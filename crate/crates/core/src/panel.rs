//! Panel ingestion and persistence.
//!
//! A panel is a balanced T x n matrix of observations (rows are periods,
//! columns are units) together with a partition of units into blocks used by
//! the cross-sectional dependence estimators.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::SymMat;

pub const RESULT_SCHEMA: &str = "shortpanel-fa/1";

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow { path: String, row: usize, expected: usize, found: usize },
    #[error("{path}: cell (period {period}, unit {unit}) is not a finite number: {value:?}")]
    BadCell { path: String, period: String, unit: String, value: String },
    #[error("{path}: no data rows")]
    Empty { path: String },
    #[error("unit {unit} has no block assignment")]
    MissingBlock { unit: String },
    #[error("block file names unknown unit {unit}")]
    UnknownUnit { unit: String },
    #[error("panel needs at least 2 units, found {n}")]
    TooFewUnits { n: usize },
    #[error("{path}: duplicate entry for unit {unit}")]
    DuplicateUnit { path: String, unit: String },
    #[error("factor file dimensions do not conform to the panel: {detail}")]
    FactorShape { detail: String },
}

/// Balanced panel: T periods by n units, with a block id per unit.
#[derive(Debug, Clone)]
pub struct Panel {
    y: DMatrix<f64>,
    blocks: Vec<usize>,
    n_blocks: usize,
    pub unit_ids: Vec<String>,
    pub period_labels: Vec<String>,
}

impl Panel {
    /// Builds a panel from a T x n matrix and per-unit block ids (any usize
    /// labels; they are compacted to 0..n_blocks).
    pub fn from_matrix(y: DMatrix<f64>, blocks: Vec<usize>) -> Result<Self, PanelError> {
        let n = y.ncols();
        if n < 2 {
            return Err(PanelError::TooFewUnits { n });
        }
        assert_eq!(blocks.len(), n, "one block id per unit");
        let mut relabel = BTreeMap::new();
        for &b in &blocks {
            let next = relabel.len();
            relabel.entry(b).or_insert(next);
        }
        let compact: Vec<usize> = blocks.iter().map(|b| relabel[b]).collect();
        let n_blocks = relabel.len();
        let unit_ids = (0..n).map(|i| format!("u{}", i + 1)).collect();
        let period_labels = (0..y.nrows()).map(|t| format!("t{}", t + 1)).collect();
        Ok(Panel { y, blocks: compact, n_blocks, unit_ids, period_labels })
    }

    /// Panel with every unit in its own block (cross-sectional independence).
    pub fn with_singleton_blocks(y: DMatrix<f64>) -> Result<Self, PanelError> {
        let n = y.ncols();
        Self::from_matrix(y, (0..n).collect())
    }

    pub fn t(&self) -> usize {
        self.y.nrows()
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn blocks(&self) -> &[usize] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    /// Cross-sectional mean and the demeaned observation matrix.
    pub fn demean(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n() as f64;
        let ybar = DVector::from_fn(self.t(), |t, _| self.y.row(t).sum() / n);
        let mut yt = self.y.clone();
        for t in 0..self.t() {
            for i in 0..self.n() {
                yt[(t, i)] -= ybar[t];
            }
        }
        (ybar, yt)
    }

    /// Sample cross-sectional variance matrix `Vy = Ytilde Ytilde' / n`.
    pub fn sample_covariance(&self) -> (DVector<f64>, DMatrix<f64>, SymMat) {
        let (ybar, yt) = self.demean();
        let vy = &yt * yt.transpose() / self.n() as f64;
        (ybar, yt, SymMat::symmetrize(&vy))
    }

    /// Writes the panel back to CSV in the canonical layout.
    pub fn write_csv(&self, path: &Path) -> Result<(), PanelError> {
        let mut f = std::fs::File::create(path).map_err(|e| PanelError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut header = String::from("period");
        for id in &self.unit_ids {
            header.push(',');
            header.push_str(id);
        }
        let to_io = |e| PanelError::Io { path: path.display().to_string(), source: e };
        writeln!(f, "{header}").map_err(to_io)?;
        for t in 0..self.t() {
            let mut row = self.period_labels[t].clone();
            for i in 0..self.n() {
                row.push(',');
                row.push_str(&format!("{}", self.y[(t, i)]));
            }
            writeln!(f, "{row}").map_err(to_io)?;
        }
        Ok(())
    }
}

/// Loads a panel from `panel.csv` (header `period,unit1,...`) and
/// `blocks.csv` (header `unit,block`).
pub fn load_panel(panel_csv: &Path, blocks_csv: &Path) -> Result<Panel, PanelError> {
    let pstr = panel_csv.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(panel_csv)
        .map_err(|e| PanelError::Csv { path: pstr.clone(), source: e })?;

    let header = rdr
        .headers()
        .map_err(|e| PanelError::Csv { path: pstr.clone(), source: e })?
        .clone();
    if header.len() < 3 {
        return Err(PanelError::TooFewUnits { n: header.len().saturating_sub(1) });
    }
    let unit_ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let n = unit_ids.len();

    let mut period_labels = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ridx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| PanelError::Csv { path: pstr.clone(), source: e })?;
        if rec.len() != n + 1 {
            return Err(PanelError::RaggedRow {
                path: pstr.clone(),
                row: ridx + 2,
                expected: n + 1,
                found: rec.len(),
            });
        }
        let label = rec[0].trim().to_string();
        let mut row = Vec::with_capacity(n);
        for (i, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.trim().parse().unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(PanelError::BadCell {
                    path: pstr.clone(),
                    period: label,
                    unit: unit_ids[i].clone(),
                    value: field.to_string(),
                });
            }
            row.push(v);
        }
        period_labels.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(PanelError::Empty { path: pstr });
    }
    let t = rows.len();
    let y = DMatrix::from_fn(t, n, |r, c| rows[r][c]);

    // block file
    let bstr = blocks_csv.display().to_string();
    let mut brdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(blocks_csv)
        .map_err(|e| PanelError::Csv { path: bstr.clone(), source: e })?;
    let mut block_of: BTreeMap<String, String> = BTreeMap::new();
    for rec in brdr.records() {
        let rec = rec.map_err(|e| PanelError::Csv { path: bstr.clone(), source: e })?;
        let unit = rec.get(0).unwrap_or("").trim().to_string();
        let code = rec.get(1).unwrap_or("").trim().to_string();
        if block_of.insert(unit.clone(), code).is_some() {
            return Err(PanelError::DuplicateUnit { path: bstr.clone(), unit });
        }
    }
    for unit in block_of.keys() {
        if !unit_ids.contains(unit) {
            return Err(PanelError::UnknownUnit { unit: unit.clone() });
        }
    }
    let mut codes: BTreeMap<&str, usize> = BTreeMap::new();
    let mut blocks = Vec::with_capacity(n);
    for unit in &unit_ids {
        let code = block_of
            .get(unit)
            .ok_or_else(|| PanelError::MissingBlock { unit: unit.clone() })?;
        let next = codes.len();
        let id = *codes.entry(code.as_str()).or_insert(next);
        blocks.push(id);
    }
    let n_blocks = codes.len();

    Ok(Panel { y, blocks, n_blocks, unit_ids, period_labels })
}

/// Observed factor construction inputs: per-unit characteristic weights and
/// the risk-free rate path.
#[derive(Debug, Clone)]
pub struct ObservedFactorData {
    /// One T x k_O matrix of weights per unit.
    pub z: Vec<DMatrix<f64>>,
    pub riskfree: DVector<f64>,
}

impl ObservedFactorData {
    pub fn k_o(&self) -> usize {
        self.z.first().map(|m| m.ncols()).unwrap_or(0)
    }
}

/// Loads long-format `factors.csv` (`unit,period,z1..zkO`) and `riskfree.csv`
/// (`period,rf`) against an existing panel.
pub fn load_observed_factors(
    panel: &Panel,
    factors_csv: &Path,
    riskfree_csv: &Path,
) -> Result<ObservedFactorData, PanelError> {
    let fstr = factors_csv.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(factors_csv)
        .map_err(|e| PanelError::Csv { path: fstr.clone(), source: e })?;
    let k_o = rdr
        .headers()
        .map_err(|e| PanelError::Csv { path: fstr.clone(), source: e })?
        .len()
        .saturating_sub(2);
    if k_o == 0 {
        return Err(PanelError::FactorShape { detail: "factors.csv needs z columns".into() });
    }
    let unit_index: BTreeMap<&str, usize> = panel
        .unit_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let period_index: BTreeMap<&str, usize> = panel
        .period_labels
        .iter()
        .enumerate()
        .map(|(t, s)| (s.as_str(), t))
        .collect();
    let mut z = vec![DMatrix::zeros(panel.t(), k_o); panel.n()];
    let mut seen = vec![0usize; panel.n()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| PanelError::Csv { path: fstr.clone(), source: e })?;
        let unit = rec.get(0).unwrap_or("").trim();
        let period = rec.get(1).unwrap_or("").trim();
        let &i = unit_index
            .get(unit)
            .ok_or_else(|| PanelError::UnknownUnit { unit: unit.to_string() })?;
        let &t = period_index.get(period).ok_or_else(|| PanelError::FactorShape {
            detail: format!("unknown period {period}"),
        })?;
        for j in 0..k_o {
            let field = rec.get(2 + j).unwrap_or("");
            let v: f64 = field.trim().parse().unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(PanelError::BadCell {
                    path: fstr.clone(),
                    period: period.to_string(),
                    unit: unit.to_string(),
                    value: field.to_string(),
                });
            }
            z[i][(t, j)] = v;
        }
        seen[i] += 1;
    }
    if let Some(i) = seen.iter().position(|&c| c != panel.t()) {
        return Err(PanelError::FactorShape {
            detail: format!(
                "unit {} has {} factor rows, expected {}",
                panel.unit_ids[i], seen[i], panel.t()
            ),
        });
    }

    let rstr = riskfree_csv.display().to_string();
    let mut rrdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(riskfree_csv)
        .map_err(|e| PanelError::Csv { path: rstr.clone(), source: e })?;
    let mut rf = DVector::zeros(panel.t());
    let mut filled = vec![false; panel.t()];
    for rec in rrdr.records() {
        let rec = rec.map_err(|e| PanelError::Csv { path: rstr.clone(), source: e })?;
        let period = rec.get(0).unwrap_or("").trim();
        let &t = period_index.get(period).ok_or_else(|| PanelError::FactorShape {
            detail: format!("unknown period {period} in riskfree file"),
        })?;
        let field = rec.get(1).unwrap_or("");
        let v: f64 = field.trim().parse().unwrap_or(f64::NAN);
        if !v.is_finite() {
            return Err(PanelError::BadCell {
                path: rstr.clone(),
                period: period.to_string(),
                unit: "rf".into(),
                value: field.to_string(),
            });
        }
        rf[t] = v;
        filled[t] = true;
    }
    if filled.iter().any(|&f| !f) {
        return Err(PanelError::FactorShape { detail: "riskfree file misses periods".into() });
    }
    Ok(ObservedFactorData { z, riskfree: rf })
}
