//! Cohort education profiles by birth bin and gender.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::subgroup::SplitRules;
use crate::ingest::Gender;
use crate::panel::{PanelError, PseudoPanel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EducationProfile {
    pub birth_bin: i32,
    pub generation: String,
    pub male: f64,
    pub female: f64,
    /// Male minus female.
    pub gender_gap: f64,
    pub all: f64,
    /// Micro records behind the bin.
    pub n: usize,
}

/// Member-weighted mean schooling per birth bin, pooled over regions and years.
/// Bins lacking either gender are omitted with a warning.
pub fn education_profiles(
    panel: &PseudoPanel,
    rules: &SplitRules,
) -> Result<(Vec<EducationProfile>, Vec<String>), PanelError> {
    if panel.is_empty() {
        return Err(PanelError::Empty);
    }
    let j = panel
        .variable_index("edu")
        .ok_or_else(|| PanelError::UnknownVariable("edu".into()))?;
    let (older, younger) = super::subgroup::generation_labels(&panel.keys(), rules);
    // bin -> gender -> (weighted sum, weight)
    let mut acc: BTreeMap<i32, BTreeMap<Gender, (f64, usize)>> = BTreeMap::new();
    for c in panel.cells() {
        if let Some(v) = c.values[j] {
            let e = acc.entry(c.key.birth_bin).or_default().entry(c.key.gender).or_default();
            e.0 += v * c.n as f64;
            e.1 += c.n;
        }
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (bin, by_gender) in acc {
        let get = |g| by_gender.get(&g).filter(|(_, n)| *n > 0).copied();
        let (Some((sm, nm)), Some((sf, nf))) = (get(Gender::Male), get(Gender::Female)) else {
            warnings.push(format!("birth bin {bin} lacks one gender; profile row omitted"));
            continue;
        };
        let (male, female) = (sm / nm as f64, sf / nf as f64);
        rows.push(EducationProfile {
            birth_bin: bin,
            generation: if bin < rules.generation_boundary {
                older.clone()
            } else {
                younger.clone()
            },
            male,
            female,
            gender_gap: male - female,
            all: (sm + sf) / (nm + nf) as f64,
            n: nm + nf,
        });
    }
    Ok((rows, warnings))
}

pub fn write_profiles_csv<W: Write>(rows: &[EducationProfile], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
