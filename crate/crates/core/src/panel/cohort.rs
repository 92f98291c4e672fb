use std::fmt;

use serde::{Deserialize, Serialize};

use super::PanelError;
use crate::ingest::{Gender, MicroRecord, Region};

/// Birth-bin × gender × region cohort identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CohortKey {
    /// First birth year of the bin.
    pub birth_bin: i32,
    pub gender: Gender,
    pub region: Region,
}

impl fmt::Display for CohortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.birth_bin, self.gender, self.region)
    }
}

/// How birth years are grouped into cohorts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortScheme {
    pub bin_width: i32,
    pub birth_min: i32,
    pub birth_max: i32,
}

impl Default for CohortScheme {
    fn default() -> Self {
        Self {
            bin_width: 5,
            birth_min: 1955,
            birth_max: 1999,
        }
    }
}

impl CohortScheme {
    pub fn validate(&self) -> Result<(), PanelError> {
        let span = self.birth_max - self.birth_min + 1;
        if self.bin_width <= 0 || span <= 0 || span % self.bin_width != 0 {
            return Err(PanelError::InvalidScheme(format!(
                "bin width {} must divide birth range {}..={}",
                self.bin_width, self.birth_min, self.birth_max
            )));
        }
        Ok(())
    }

    pub fn bin_of(&self, birth_year: i32) -> Result<i32, PanelError> {
        if birth_year < self.birth_min || birth_year > self.birth_max {
            return Err(PanelError::OutOfRange(birth_year));
        }
        Ok(self.birth_min + self.bin_width * ((birth_year - self.birth_min) / self.bin_width))
    }

    pub fn bins(&self) -> Vec<i32> {
        (self.birth_min..=self.birth_max)
            .step_by(self.bin_width as usize)
            .collect()
    }

    /// Every possible key, in sort order.
    pub fn all_keys(&self) -> Vec<CohortKey> {
        let mut keys = Vec::new();
        for birth_bin in self.bins() {
            for gender in Gender::ALL {
                for region in Region::ALL {
                    keys.push(CohortKey {
                        birth_bin,
                        gender,
                        region,
                    });
                }
            }
        }
        keys
    }

    pub fn key(&self, record: &MicroRecord) -> Result<CohortKey, PanelError> {
        Ok(CohortKey {
            birth_bin: self.bin_of(record.birth_year)?,
            gender: record.gender,
            region: record.region,
        })
    }
}

/// Cohort of a record under the default five-year scheme.
pub fn cohort_key(record: &MicroRecord) -> Result<CohortKey, PanelError> {
    CohortScheme::default().key(record)
}
