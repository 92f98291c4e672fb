use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IngestError, MicroRecord, RegionMap, Reject};

/// Provincial health-supply covariates for one survey year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CityCovariates {
    /// Total number of hospitals.
    pub hos: f64,
    /// Beds per 1,000 people.
    pub bed: f64,
    /// Practising doctors per 1,000 people.
    pub doc: f64,
}

/// Covariates keyed by (canonical province, year).
#[derive(Debug, Clone, Default)]
pub struct CovariateTable {
    rows: BTreeMap<(String, i32), CityCovariates>,
}

impl CovariateTable {
    pub fn insert(&mut self, province: &str, year: i32, cov: CityCovariates) {
        self.rows.insert((province.to_string(), year), cov);
    }

    pub fn get(&self, province: &str, year: i32) -> Option<CityCovariates> {
        self.rows.get(&(province.to_string(), year)).copied()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, i32, CityCovariates)> {
        self.rows.iter().map(|((p, y), c)| (p.as_str(), *y, *c))
    }

    /// Reads `province,year,hos,bed,doc`; province names are canonicalized through `regions`.
    pub fn from_csv_path(path: impl AsRef<Path>, regions: &RegionMap) -> Result<Self, IngestError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let idx = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
        };
        let (ip, iy, ih, ib, id) = (idx("province")?, idx("year")?, idx("hos")?, idx("bed")?, idx("doc")?);
        let mut table = Self::default();
        for row in rdr.records() {
            let row = row?;
            let field = |i: usize| row.get(i).unwrap_or("").trim();
            let num = |i: usize, name: &str| -> Result<f64, IngestError> {
                field(i).parse().map_err(|_| IngestError::InvalidValue {
                    field: name.into(),
                    value: field(i).into(),
                })
            };
            let (province, _) = regions.lookup(field(ip))?;
            let year: i32 = field(iy).parse().map_err(|_| IngestError::InvalidValue {
                field: "year".into(),
                value: field(iy).into(),
            })?;
            table.insert(
                province,
                year,
                CityCovariates {
                    hos: num(ih, "hos")?,
                    bed: num(ib, "bed")?,
                    doc: num(id, "doc")?,
                },
            );
        }
        Ok(table)
    }

    /// Writes `province,year,hos,bed,doc` in key order.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), IngestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["province", "year", "hos", "bed", "doc"])?;
        for (p, y, c) in self.iter() {
            w.write_record([
                p.to_string(),
                y.to_string(),
                c.hos.to_string(),
                c.bed.to_string(),
                c.doc.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Fills missing city covariates; records without a match are dropped and reported.
    pub fn join(&self, records: Vec<MicroRecord>) -> (Vec<MicroRecord>, Vec<Reject>) {
        let mut kept = Vec::with_capacity(records.len());
        let mut rejects = Vec::new();
        for mut r in records {
            if r.city.is_none() {
                r.city = self.get(&r.province, r.survey_year);
            }
            if r.city.is_some() {
                kept.push(r);
            } else {
                rejects.push(Reject {
                    line: r.source_line,
                    reason: format!("no city covariates for {} in {}", r.province, r.survey_year),
                });
            }
        }
        (kept, rejects)
    }
}
