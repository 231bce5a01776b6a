//! Dataset and hyperparameter types plus load-time validation.
//!
//! A [`Dataset`] holds the covariate matrix, the optional binary outcome, and
//! the per-row population labels. [`validate_dataset`] turns an untyped parsed
//! table into a `Dataset`, reporting every violating cell rather than the
//! first one found.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, Violation};

/// Reserved CSV column holding the population label (values `S` / `T`).
pub const POP_COLUMN: &str = "__pop";
/// Reserved CSV column holding the binary outcome (values `0` / `1`).
pub const OUTCOME_COLUMN: &str = "__y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Population {
    Source,
    Target,
}

impl Population {
    pub fn label(self) -> &'static str {
        match self {
            Population::Source => "S",
            Population::Target => "T",
        }
    }

    pub fn parse(s: &str) -> Option<Population> {
        match s {
            "S" => Some(Population::Source),
            "T" => Some(Population::Target),
            _ => None,
        }
    }
}

/// Name and kind of one covariate column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
}

/// What the dataset is being validated for. Fitting requires an outcome;
/// the hierarchical model additionally requires a non-empty target partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidateMode {
    Scoring,
    FitPooled,
    FitHierarchical,
}

/// An untyped parsed table: header names and raw cell text, as read from CSV.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Validated dataset. Covariates are column-ordered as in `columns`;
/// binary columns contain exactly 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<ColumnMeta>,
    x: Array2<f64>,
    y: Option<Vec<u8>>,
    pop: Vec<Population>,
}

impl Dataset {
    /// Assemble a dataset directly from typed parts, checking the invariants.
    pub fn new(
        columns: Vec<ColumnMeta>,
        x: Array2<f64>,
        y: Option<Vec<u8>>,
        pop: Vec<Population>,
    ) -> Result<Dataset> {
        if columns.is_empty() {
            return Err(Error::dimension("dataset needs at least one covariate column"));
        }
        if x.ncols() != columns.len() {
            return Err(Error::dimension(format!(
                "covariate matrix has {} columns but {} column descriptors",
                x.ncols(),
                columns.len()
            )));
        }
        if pop.len() != x.nrows() {
            return Err(Error::dimension(format!(
                "{} rows but {} population labels",
                x.nrows(),
                pop.len()
            )));
        }
        if let Some(y) = &y {
            if y.len() != x.nrows() {
                return Err(Error::dimension(format!(
                    "{} rows but {} outcome values",
                    x.nrows(),
                    y.len()
                )));
            }
            if let Some(bad) = y.iter().find(|&&v| v > 1) {
                return Err(Error::invalid(format!("outcome values must be 0/1, got {bad}")));
            }
        }
        let mut violations = Vec::new();
        check_cells(&columns, &x, &mut violations);
        if !violations.is_empty() {
            return Err(Error::Validation(violations));
        }
        Ok(Dataset { columns, x, y, pop })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn columns(&self) -> &[ColumnMeta] {
        &self.columns
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> Option<&[u8]> {
        self.y.as_deref()
    }

    pub fn populations(&self) -> &[Population] {
        &self.pop
    }

    pub fn count_population(&self, pop: Population) -> usize {
        self.pop.iter().filter(|&&p| p == pop).count()
    }

    /// Row indices belonging to `pop`, in dataset order.
    pub fn population_rows(&self, pop: Population) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.pop[i] == pop).collect()
    }

    /// Dataset restricted to the given rows, in the given order.
    /// Panics if an index is out of range.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            columns: self.columns.clone(),
            x: self.x.select(ndarray::Axis(0), rows),
            y: self.y.as_ref().map(|y| rows.iter().map(|&i| y[i]).collect()),
            pop: rows.iter().map(|&i| self.pop[i]).collect(),
        }
    }

    /// SHA-256 over the covariate names and kinds; persisted with fitted
    /// models and checked again at predict time.
    pub fn schema_hash(&self) -> String {
        schema_hash(&self.columns)
    }

    /// Re-render as an untyped table (used by the idempotency check and the
    /// CSV writer). Floats use shortest round-trip formatting.
    pub fn to_raw(&self) -> RawTable {
        let mut headers = vec![POP_COLUMN.to_string()];
        if self.y.is_some() {
            headers.push(OUTCOME_COLUMN.to_string());
        }
        headers.extend(self.columns.iter().map(|c| c.name.clone()));
        let rows = (0..self.n_rows())
            .map(|i| {
                let mut row = vec![self.pop[i].label().to_string()];
                if let Some(y) = &self.y {
                    row.push(y[i].to_string());
                }
                row.extend(self.x.row(i).iter().map(|v| format_cell(*v)));
                row
            })
            .collect();
        RawTable { headers, rows }
    }
}

/// Shortest decimal form that round-trips; integers drop the fraction.
pub fn format_cell(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains(['.', 'e', 'E', 'n', 'i']) {
        s.push_str(".0");
        // Keep binary 0/1 as bare integers so the reader sees valid values.
        if v == 0.0 || v == 1.0 {
            s.truncate(s.len() - 2);
        }
    }
    s
}

pub fn schema_hash(columns: &[ColumnMeta]) -> String {
    let mut hasher = Sha256::new();
    for c in columns {
        hasher.update(c.name.as_bytes());
        hasher.update([0u8]);
        hasher.update(match c.kind {
            ColumnKind::Continuous => b"c",
            ColumnKind::Binary => b"b",
        });
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn check_cells(columns: &[ColumnMeta], x: &Array2<f64>, violations: &mut Vec<Violation>) {
    for (j, col) in columns.iter().enumerate() {
        for i in 0..x.nrows() {
            let v = x[(i, j)];
            if !v.is_finite() {
                violations.push(Violation {
                    line: Some(i + 2),
                    column: col.name.clone(),
                    message: format!("non-finite value {v}"),
                });
            } else if col.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                violations.push(Violation {
                    line: Some(i + 2),
                    column: col.name.clone(),
                    message: format!("binary column contains {v}, expected 0 or 1"),
                });
            }
        }
    }
}

/// Validate an untyped table against column metadata. Collects every
/// violation (line numbers are 1-based CSV lines counting the header).
pub fn validate_dataset(raw: &RawTable, metadata: &[ColumnMeta], mode: ValidateMode) -> Result<Dataset> {
    let mut violations = Vec::new();

    let mut seen = std::collections::HashSet::new();
    for h in &raw.headers {
        if !seen.insert(h.as_str()) {
            violations.push(Violation {
                line: Some(1),
                column: h.clone(),
                message: "duplicate header name".into(),
            });
        }
    }

    let pop_idx = raw.headers.iter().position(|h| h == POP_COLUMN);
    if pop_idx.is_none() {
        violations.push(Violation {
            line: Some(1),
            column: POP_COLUMN.into(),
            message: "required population column missing".into(),
        });
    }
    let y_idx = raw.headers.iter().position(|h| h == OUTCOME_COLUMN);
    if y_idx.is_none() && mode != ValidateMode::Scoring {
        violations.push(Violation {
            line: Some(1),
            column: OUTCOME_COLUMN.into(),
            message: "outcome column required when fitting".into(),
        });
    }

    // Map each covariate header to its metadata entry, preserving file order.
    let mut columns = Vec::new();
    let mut col_file_idx = Vec::new();
    for (idx, h) in raw.headers.iter().enumerate() {
        if h == POP_COLUMN || h == OUTCOME_COLUMN {
            continue;
        }
        match metadata.iter().find(|m| &m.name == h) {
            Some(m) => {
                columns.push(m.clone());
                col_file_idx.push(idx);
            }
            None => violations.push(Violation {
                line: Some(1),
                column: h.clone(),
                message: "column missing from metadata".into(),
            }),
        }
    }
    for m in metadata {
        if !raw.headers.iter().any(|h| h == &m.name) {
            violations.push(Violation {
                line: Some(1),
                column: m.name.clone(),
                message: "metadata column not present in table".into(),
            });
        }
    }
    if columns.is_empty() {
        violations.push(Violation {
            line: Some(1),
            column: "<table>".into(),
            message: "no covariate columns".into(),
        });
    }

    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }

    let n = raw.rows.len();
    let p = columns.len();
    let mut x = Array2::<f64>::zeros((n, p));
    let mut y = y_idx.map(|_| Vec::with_capacity(n));
    let mut pop = Vec::with_capacity(n);

    for (i, row) in raw.rows.iter().enumerate() {
        let line = i + 2;
        if row.len() != raw.headers.len() {
            violations.push(Violation {
                line: Some(line),
                column: "<row>".into(),
                message: format!("expected {} fields, found {}", raw.headers.len(), row.len()),
            });
            continue;
        }
        if let Some(pi) = pop_idx {
            match Population::parse(row[pi].trim()) {
                Some(p) => pop.push(p),
                None => {
                    violations.push(Violation {
                        line: Some(line),
                        column: POP_COLUMN.into(),
                        message: format!("unknown population label {:?} (expected S or T)", row[pi]),
                    });
                    pop.push(Population::Source); // placeholder; errors reported
                }
            }
        }
        if let (Some(yi), Some(yv)) = (y_idx, y.as_mut()) {
            match row[yi].trim() {
                "0" => yv.push(0u8),
                "1" => yv.push(1u8),
                other => {
                    violations.push(Violation {
                        line: Some(line),
                        column: OUTCOME_COLUMN.into(),
                        message: format!("outcome must be 0 or 1, got {other:?}"),
                    });
                    yv.push(0);
                }
            }
        }
        for (j, (&fi, col)) in col_file_idx.iter().zip(&columns).enumerate() {
            let cell = row[fi].trim();
            if cell.is_empty() {
                violations.push(Violation {
                    line: Some(line),
                    column: col.name.clone(),
                    message: "missing value".into(),
                });
                continue;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    if col.kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                        violations.push(Violation {
                            line: Some(line),
                            column: col.name.clone(),
                            message: format!("binary column contains {cell}, expected 0 or 1"),
                        });
                    }
                    x[(i, j)] = v;
                }
                _ => violations.push(Violation {
                    line: Some(line),
                    column: col.name.clone(),
                    message: format!("not a finite number: {cell:?}"),
                }),
            }
        }
    }

    match mode {
        ValidateMode::Scoring => {}
        ValidateMode::FitPooled | ValidateMode::FitHierarchical => {
            if n == 0 {
                violations.push(Violation {
                    line: None,
                    column: "<table>".into(),
                    message: "cannot fit on an empty dataset".into(),
                });
            }
        }
    }
    if mode == ValidateMode::FitHierarchical
        && !pop.is_empty()
        && !pop.iter().any(|&p| p == Population::Target)
    {
        violations.push(Violation {
            line: None,
            column: POP_COLUMN.into(),
            message: "hierarchical fit requires at least one target row".into(),
        });
    }

    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Dataset::new(columns, x, y, pop)
}

/// Gamma prior in shape/rate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }
}

/// Model and chain hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Factor count K.
    pub n_factors: usize,
    /// Prior precision of the global loadings rows.
    pub global_precision: f64,
    /// Prior precision of source loadings around the global rows.
    pub source_precision: f64,
    /// Prior precision of target loadings around the global rows.
    pub target_precision: f64,
    /// Inverse-gamma shape/rate parameter v for idiosyncratic variances.
    pub noise_df: f64,
    /// When set, the population precisions get this Gamma prior and are
    /// sampled instead of held fixed.
    pub precision_prior: Option<GammaPrior>,
    pub iters: usize,
    pub burnin: usize,
    pub thin: usize,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            n_factors: 20,
            global_precision: 1.0,
            source_precision: 1.0,
            target_precision: 1.0,
            noise_df: 2.0,
            precision_prior: None,
            iters: 3000,
            burnin: 1000,
            thin: 2,
            seed: 0,
        }
    }
}

/// Default Gamma prior used when precision learning is switched on.
pub const DEFAULT_PRECISION_PRIOR: GammaPrior = GammaPrior { shape: 2.0, rate: 2.0 };

impl Hyperparameters {
    /// Check invariants against the latent dimension P' (outcome included).
    pub fn validate(&self, p_latent: usize) -> Result<()> {
        if self.n_factors == 0 {
            return Err(Error::invalid("n_factors must be positive"));
        }
        if self.n_factors > p_latent {
            return Err(Error::invalid(format!(
                "n_factors = {} exceeds column count {}",
                self.n_factors, p_latent
            )));
        }
        for (name, v) in [
            ("global_precision", self.global_precision),
            ("source_precision", self.source_precision),
            ("target_precision", self.target_precision),
            ("noise_df", self.noise_df),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be strictly positive, got {v}")));
            }
        }
        if let Some(p) = &self.precision_prior {
            if !(p.shape > 0.0 && p.rate > 0.0) {
                return Err(Error::invalid(format!(
                    "precision prior needs positive shape and rate, got shape {} rate {}",
                    p.shape, p.rate
                )));
            }
        }
        if self.iters <= self.burnin {
            return Err(Error::invalid(format!(
                "iters ({}) must exceed burnin ({})",
                self.iters, self.burnin
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if (self.iters - self.burnin) / self.thin == 0 {
            return Err(Error::invalid(
                "chain settings retain zero samples; lower burnin or thin",
            ));
        }
        Ok(())
    }
}

/// Per-column standardization statistics fitted on training data.
/// Continuous columns are centered and scaled to unit variance; binary
/// columns pass through unchanged (mean 0, sd 1 stored as identity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn identity(p: usize) -> Standardizer {
        Standardizer { means: vec![0.0; p], sds: vec![1.0; p] }
    }

    pub fn fit(dataset: &Dataset) -> Standardizer {
        let n = dataset.n_rows() as f64;
        let p = dataset.n_covariates();
        let mut means = vec![0.0; p];
        let mut sds = vec![1.0; p];
        for (j, col) in dataset.columns().iter().enumerate() {
            if col.kind != ColumnKind::Continuous {
                continue;
            }
            let column = dataset.x().column(j);
            let mean = column.sum() / n;
            let var = column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means[j] = mean;
            // Constant columns pass through centered rather than dividing by 0.
            sds[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
        }
        Standardizer { means, sds }
    }

    pub fn apply_row(&self, row: &ArrayView1<f64>) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.means.len());
        row.iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for j in 0..self.means.len() {
            let (m, s) = (self.means[j], self.sds[j]);
            out.column_mut(j).mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}
