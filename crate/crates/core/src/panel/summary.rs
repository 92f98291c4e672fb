use serde::{Deserialize, Serialize};

use super::{PanelError, PseudoPanel};
use crate::numerics::{mean, sample_sd};

/// Descriptive statistics of one panel variable over cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub name: String,
    /// Cells with a value.
    pub obs_cells: usize,
    /// Micro records behind those cells.
    pub obs_micro: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Unweighted cell-level statistics for every panel variable with at least one value.
pub fn summarize(panel: &PseudoPanel) -> Result<Vec<VariableSummary>, PanelError> {
    if panel.is_empty() {
        return Err(PanelError::Empty);
    }
    let mut out = Vec::new();
    for (j, name) in panel.variables().iter().enumerate() {
        let mut values = Vec::new();
        let mut obs_micro = 0;
        for c in panel.cells() {
            if let Some(v) = c.values[j] {
                values.push(v);
                obs_micro += c.n;
            }
        }
        let Some(m) = mean(&values) else { continue };
        out.push(VariableSummary {
            name: name.clone(),
            obs_cells: values.len(),
            obs_micro,
            mean: m,
            sd: sample_sd(&values).unwrap_or(0.0),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        });
    }
    Ok(out)
}
