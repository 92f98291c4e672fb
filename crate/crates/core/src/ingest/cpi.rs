use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::IngestError;

pub const CPI_BASE_YEAR: i32 = 2014;

/// Consumer price index by calendar year, expressed relative to [`CPI_BASE_YEAR`].
#[derive(Debug, Clone, PartialEq)]
pub struct CpiTable {
    index: BTreeMap<i32, f64>,
}

impl CpiTable {
    pub fn new(index: BTreeMap<i32, f64>) -> Result<Self, IngestError> {
        if let Some((year, v)) = index.iter().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(IngestError::InvalidValue {
                field: format!("cpi[{year}]"),
                value: v.to_string(),
            });
        }
        Ok(Self { index })
    }

    /// Reads a `year,index` CSV with a header row.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut index = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            let year_s = row.get(0).unwrap_or("").trim();
            let idx_s = row.get(1).unwrap_or("").trim();
            let year: i32 = year_s.parse().map_err(|_| IngestError::InvalidValue {
                field: "cpi year".into(),
                value: year_s.into(),
            })?;
            let v: f64 = idx_s.parse().map_err(|_| IngestError::InvalidValue {
                field: "cpi index".into(),
                value: idx_s.into(),
            })?;
            index.insert(year, v);
        }
        Self::new(index)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["year", "index"])?;
        for (y, v) in self.iter() {
            w.write_record([y.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn get(&self, year: i32) -> Result<f64, IngestError> {
        self.index.get(&year).copied().ok_or(IngestError::MissingCpiYear(year))
    }

    /// Fails with the first of `years` that has no index value.
    pub fn require_years(&self, years: impl IntoIterator<Item = i32>) -> Result<(), IngestError> {
        self.get(CPI_BASE_YEAR)?;
        for y in years {
            self.get(y)?;
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (i32, f64)> + '_ {
        self.index.iter().map(|(&y, &v)| (y, v))
    }
}

/// Converts a nominal amount to base-year prices.
pub fn deflate_income(nominal: f64, year: i32, cpi: &CpiTable) -> Result<f64, IngestError> {
    let base = cpi.get(CPI_BASE_YEAR)?;
    let current = cpi.get(year)?;
    if year == CPI_BASE_YEAR {
        return Ok(nominal);
    }
    Ok(nominal * (base / current))
}
