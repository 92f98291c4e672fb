//! Cohort-level subgroup splits for heterogeneity analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ingest::Gender;
use crate::panel::{CohortKey, PseudoPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Gender,
    Generation,
    Education,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Gender => "gender",
            Axis::Generation => "generation",
            Axis::Education => "education",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A set of whole cohorts and the panel restricted to them.
#[derive(Debug, Clone)]
pub struct Subgroup {
    pub axis: Axis,
    pub label: String,
    pub keys: BTreeSet<CohortKey>,
    pub panel: PseudoPanel,
}

impl Subgroup {
    pub fn name(&self) -> String {
        format!("{}={}", self.axis, self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRules {
    /// First birth bin of the younger generation.
    pub generation_boundary: i32,
    /// Cohorts with pooled mean schooling at or below this are "basic".
    pub education_boundary: f64,
    /// Width of the birth bins, for the generation labels.
    pub bin_width: i32,
}

impl Default for SplitRules {
    fn default() -> Self {
        Self {
            generation_boundary: 1975,
            education_boundary: 11.0,
            bin_width: 5,
        }
    }
}

/// Subgroups along `axis`; empty groups are dropped and reported in the warnings.
pub fn split_subgroups(panel: &PseudoPanel, axis: Axis, rules: &SplitRules) -> (Vec<Subgroup>, Vec<String>) {
    let mut warnings = Vec::new();
    let keys = panel.keys();
    let assign: Vec<(String, Vec<CohortKey>)> = match axis {
        Axis::Gender => [Gender::Male, Gender::Female]
            .into_iter()
            .map(|g| {
                let ks = keys.iter().copied().filter(|k| k.gender == g).collect();
                (g.as_str().to_string(), ks)
            })
            .collect(),
        Axis::Generation => {
            let (older, younger) = generation_labels(&keys, rules);
            let (old, young): (Vec<_>, Vec<_>) = keys
                .iter()
                .copied()
                .partition(|k| k.birth_bin < rules.generation_boundary);
            vec![(older, old), (younger, young)]
        }
        Axis::Education => {
            let means = cohort_education(panel);
            let mut basic = Vec::new();
            let mut higher = Vec::new();
            for k in &keys {
                let Some(&m) = means.get(k) else {
                    warnings.push(format!(
                        "cohort {k} has no education values; left out of the education split"
                    ));
                    continue;
                };
                if m == rules.education_boundary {
                    warnings.push(format!(
                        "cohort {k} has mean schooling exactly {}; classed as basic",
                        rules.education_boundary
                    ));
                }
                if m <= rules.education_boundary {
                    basic.push(*k);
                } else {
                    higher.push(*k);
                }
            }
            vec![("basic".into(), basic), ("higher".into(), higher)]
        }
    };
    let mut groups = Vec::new();
    for (label, ks) in assign {
        if ks.is_empty() {
            warnings.push(format!("subgroup {axis}={label} is empty and was skipped"));
            continue;
        }
        let set: BTreeSet<CohortKey> = ks.into_iter().collect();
        let sub = panel.filter_keys(|k| set.contains(k));
        groups.push(Subgroup {
            axis,
            label,
            keys: set,
            panel: sub,
        });
    }
    (groups, warnings)
}

/// Member-weighted mean schooling of each cohort over all survey years.
pub fn cohort_education(panel: &PseudoPanel) -> BTreeMap<CohortKey, f64> {
    let Some(j) = panel.variable_index("edu") else {
        return BTreeMap::new();
    };
    let mut acc: BTreeMap<CohortKey, (f64, f64)> = BTreeMap::new();
    for c in panel.cells() {
        if let Some(v) = c.values[j] {
            let e = acc.entry(c.key).or_default();
            e.0 += v * c.n as f64;
            e.1 += c.n as f64;
        }
    }
    acc.into_iter()
        .filter(|(_, (_, n))| *n > 0.0)
        .map(|(k, (s, n))| (k, s / n))
        .collect()
}

/// Birth-year span labels for the older and younger generations, e.g. "1955-1974".
pub fn generation_labels(keys: &[CohortKey], rules: &SplitRules) -> (String, String) {
    let boundary = rules.generation_boundary;
    let first = keys.iter().map(|k| k.birth_bin).min().unwrap_or(boundary);
    let last = keys
        .iter()
        .map(|k| k.birth_bin + rules.bin_width - 1)
        .max()
        .unwrap_or(boundary);
    (
        format!("{}-{}", first.min(boundary), boundary - 1),
        format!("{}-{}", boundary, last.max(boundary)),
    )
}
