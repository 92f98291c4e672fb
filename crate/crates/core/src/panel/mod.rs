//! Cohort assignment, cell-mean aggregation and the cohort × year estimation panel.

mod cohort;
mod io;
mod summary;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use cohort::{cohort_key, CohortKey, CohortScheme};
pub use io::{read_panel_csv, write_panel_csv};
pub use summary::{summarize, VariableSummary};

use crate::ingest::MicroRecord;

#[derive(Debug, thiserror::Error)]
pub enum PanelError {
    #[error("birth year {0} outside the cohort range")]
    OutOfRange(i32),
    #[error("unknown panel variable {0:?}")]
    UnknownVariable(String),
    #[error("invalid cohort scheme: {0}")]
    InvalidScheme(String),
    #[error("panel has no cells")]
    Empty,
    #[error("panel file: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cell-mean variables produced by aggregation, in column order.
pub const BASE_VARIABLES: [&str; 8] = ["health", "edu", "living", "flowt", "income", "hos", "bed", "doc"];

/// Cohort-year cell: member count and one mean per panel variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelCell {
    pub key: CohortKey,
    pub year: i32,
    pub n: usize,
    /// Aligned with [`PseudoPanel::variables`]; `None` marks a missing value.
    pub values: Vec<Option<f64>>,
}

/// Cohort × year grid of cell means.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPanel {
    variables: Vec<String>,
    cells: Vec<PanelCell>,
    index: BTreeMap<(CohortKey, i32), usize>,
}

/// Splits `L.x` / `L2.x` into (order, base name); plain names have order 0.
pub fn parse_lag(name: &str) -> (usize, &str) {
    if let Some(rest) = name.strip_prefix('L') {
        if let Some((digits, base)) = rest.split_once('.') {
            if digits.is_empty() {
                return (1, base);
            }
            if let Ok(order) = digits.parse::<usize>() {
                return (order, base);
            }
        }
    }
    (0, name)
}

pub fn lag_name(variable: &str, order: usize) -> String {
    if order == 1 {
        format!("L.{variable}")
    } else {
        format!("L{order}.{variable}")
    }
}

impl PseudoPanel {
    /// Builds a panel from cells; duplicates of a (key, year) pair are rejected.
    pub fn from_cells(variables: Vec<String>, mut cells: Vec<PanelCell>) -> Result<Self, PanelError> {
        cells.sort_by(|a, b| (a.key, a.year).cmp(&(b.key, b.year)));
        let mut index = BTreeMap::new();
        for (i, c) in cells.iter().enumerate() {
            if c.values.len() != variables.len() {
                return Err(PanelError::Format(format!(
                    "cell {} {} has {} values for {} variables",
                    c.key,
                    c.year,
                    c.values.len(),
                    variables.len()
                )));
            }
            if c.n == 0 {
                return Err(PanelError::Format(format!("cell {} {} has n = 0", c.key, c.year)));
            }
            if index.insert((c.key, c.year), i).is_some() {
                return Err(PanelError::Format(format!("duplicate cell {} {}", c.key, c.year)));
            }
        }
        Ok(Self {
            variables,
            cells,
            index,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn cells(&self) -> &[PanelCell] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn keys(&self) -> Vec<CohortKey> {
        let set: BTreeSet<CohortKey> = self.cells.iter().map(|c| c.key).collect();
        set.into_iter().collect()
    }

    pub fn years(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.cells.iter().map(|c| c.year).collect();
        set.into_iter().collect()
    }

    pub fn cell(&self, key: CohortKey, year: i32) -> Option<&PanelCell> {
        self.index.get(&(key, year)).map(|&i| &self.cells[i])
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn has_variable(&self, name: &str) -> bool {
        if self.variable_index(name).is_some() {
            return true;
        }
        let (order, base) = parse_lag(name);
        order > 0 && self.variable_index(base).is_some()
    }

    /// Value of `name` for (key, year). Lag names without a materialized
    /// column are resolved from the predecessor cell; `Ok(None)` is a missing value.
    pub fn value(&self, key: CohortKey, year: i32, name: &str) -> Result<Option<f64>, PanelError> {
        if let Some(j) = self.variable_index(name) {
            return Ok(self.cell(key, year).and_then(|c| c.values[j]));
        }
        let (order, base) = parse_lag(name);
        match (order, self.variable_index(base)) {
            (o, Some(j)) if o > 0 => Ok(self.cell(key, year - o as i32).and_then(|c| c.values[j])),
            _ => Err(PanelError::UnknownVariable(name.to_string())),
        }
    }

    /// Materializes the `order`-th lag of `variable` as a new column.
    pub fn add_lag(&self, variable: &str, order: usize) -> Result<Self, PanelError> {
        let j = self
            .variable_index(variable)
            .ok_or_else(|| PanelError::UnknownVariable(variable.to_string()))?;
        if order == 0 {
            return Err(PanelError::UnknownVariable(format!("lag order 0 of {variable}")));
        }
        let name = lag_name(variable, order);
        let mut out = self.clone();
        let existing = out.variable_index(&name);
        if existing.is_none() {
            out.variables.push(name);
        }
        for i in 0..out.cells.len() {
            let (key, year) = (out.cells[i].key, out.cells[i].year);
            let lag = self.cell(key, year - order as i32).and_then(|c| c.values[j]);
            match existing {
                Some(e) => out.cells[i].values[e] = lag,
                None => out.cells[i].values.push(lag),
            }
        }
        Ok(out)
    }

    /// Cells whose count is below `min_n`.
    pub fn check_cell_sizes(&self, min_n: usize) -> Vec<CellSizeWarning> {
        self.cells
            .iter()
            .filter(|c| c.n < min_n)
            .map(|c| CellSizeWarning {
                key: c.key,
                year: c.year,
                n: c.n,
            })
            .collect()
    }

    /// Keeps the cells whose key satisfies `keep`.
    pub fn filter_keys(&self, keep: impl Fn(&CohortKey) -> bool) -> Self {
        let cells: Vec<PanelCell> = self.cells.iter().filter(|c| keep(&c.key)).cloned().collect();
        Self::from_cells(self.variables.clone(), cells).expect("subset of a valid panel")
    }

    /// Total micro records behind the panel.
    pub fn total_n(&self) -> usize {
        self.cells.iter().map(|c| c.n).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSizeWarning {
    pub key: CohortKey,
    pub year: i32,
    pub n: usize,
}

pub fn check_cell_sizes(panel: &PseudoPanel, min_n: usize) -> Vec<CellSizeWarning> {
    panel.check_cell_sizes(min_n)
}

#[derive(Default, Clone)]
struct Accum {
    n: usize,
    sums: [f64; 5],
    city_n: usize,
    city: [f64; 3],
}

/// Aggregates micro records to cohort-year cell means.
///
/// Records outside the scheme's birth range are skipped and counted in the
/// second tuple element.
pub fn aggregate_with(records: &[MicroRecord], scheme: &CohortScheme) -> Result<(PseudoPanel, usize), PanelError> {
    scheme.validate()?;
    let mut acc: BTreeMap<(CohortKey, i32), Accum> = BTreeMap::new();
    let mut skipped = 0;
    for r in records {
        let key = match scheme.key(r) {
            Ok(k) => k,
            Err(PanelError::OutOfRange(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let a = acc.entry((key, r.survey_year)).or_default();
        a.n += 1;
        let vals = [
            if r.has_health_record { 1.0 } else { 0.0 },
            r.edu_years(),
            r.living,
            r.flowt,
            r.log_income(),
        ];
        for (s, v) in a.sums.iter_mut().zip(vals) {
            *s += v;
        }
        if let Some(c) = r.city {
            a.city_n += 1;
            for (s, v) in a.city.iter_mut().zip([c.hos, c.bed, c.doc]) {
                *s += v;
            }
        }
    }
    let cells = acc
        .into_iter()
        .map(|((key, year), a)| {
            let n = a.n as f64;
            let mut values: Vec<Option<f64>> = a.sums.iter().map(|s| Some(s / n)).collect();
            let cn = a.city_n as f64;
            values.extend(a.city.iter().map(|s| if a.city_n > 0 { Some(s / cn) } else { None }));
            PanelCell {
                key,
                year,
                n: a.n,
                values,
            }
        })
        .collect();
    let vars = BASE_VARIABLES.iter().map(|s| s.to_string()).collect();
    Ok((PseudoPanel::from_cells(vars, cells)?, skipped))
}

/// Aggregates under the default five-year cohort scheme.
pub fn aggregate(records: &[MicroRecord]) -> Result<PseudoPanel, PanelError> {
    aggregate_with(records, &CohortScheme::default()).map(|(p, _)| p)
}
