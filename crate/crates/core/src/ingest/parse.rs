use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CityCovariates, EducationLevel, Gender, IngestError, MicroRecord, RegionMap};

/// Canonical variable names; the first nine are required in every micro file.
pub const CANONICAL_COLUMNS: [&str; 12] = [
    "survey_year",
    "birth_year",
    "gender",
    "province",
    "education_level",
    "has_health_record",
    "living",
    "flowt",
    "income",
    "hos",
    "bed",
    "doc",
];
const REQUIRED: usize = 9;
const CITY: [&str; 3] = ["hos", "bed", "doc"];

/// Maps canonical variable names to the column names used by a source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    columns: BTreeMap<String, String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self::identity()
    }
}

impl Schema {
    /// Every required canonical name maps to a column of the same name.
    pub fn identity() -> Self {
        Self {
            columns: CANONICAL_COLUMNS[..REQUIRED]
                .iter()
                .map(|c| (c.to_string(), c.to_string()))
                .collect(),
        }
    }

    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut schema = Self::identity();
        for (canonical, source) in pairs {
            let canonical = canonical.into();
            if !CANONICAL_COLUMNS.contains(&canonical.as_str()) {
                return Err(IngestError::Schema(format!("unknown canonical variable {canonical:?}")));
            }
            schema.columns.insert(canonical, source.into());
        }
        Ok(schema)
    }

    /// Reads a two-column `canonical,source` CSV.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut pairs = Vec::new();
        for row in rdr.records() {
            let row = row?;
            pairs.push((
                row.get(0).unwrap_or("").trim().to_string(),
                row.get(1).unwrap_or("").trim().to_string(),
            ));
        }
        Self::from_pairs(pairs)
    }

    pub fn source(&self, canonical: &str) -> Option<&str> {
        self.columns.get(canonical).map(String::as_str)
    }

    fn maps_city(&self) -> bool {
        CITY.iter().any(|c| self.columns.contains_key(*c))
    }
}

#[derive(Debug, Clone)]
pub struct ParseOptions {
    pub survey_years: RangeInclusive<i32>,
    pub birth_years: RangeInclusive<i32>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            survey_years: 2014..=2018,
            birth_years: 1955..=1999,
        }
    }
}

/// A source line that did not become a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedMicro {
    pub records: Vec<MicroRecord>,
    pub rejects: Vec<Reject>,
}

pub fn parse_micro_csv(
    path: impl AsRef<Path>,
    schema: &Schema,
    regions: &RegionMap,
    opts: &ParseOptions,
) -> Result<ParsedMicro, IngestError> {
    let file = std::fs::File::open(path)?;
    parse_micro_reader(file, schema, regions, opts)
}

/// Parses micro-data; malformed rows are rejected with a reason and parsing continues.
pub fn parse_micro_reader<R: Read>(
    reader: R,
    schema: &Schema,
    regions: &RegionMap,
    opts: &ParseOptions,
) -> Result<ParsedMicro, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |source: &str| headers.iter().position(|h| h.trim() == source);

    let mut idx: BTreeMap<&str, usize> = BTreeMap::new();
    for canonical in &CANONICAL_COLUMNS[..REQUIRED] {
        let source = schema
            .source(canonical)
            .ok_or_else(|| IngestError::Schema(format!("no mapping for {canonical}")))?;
        let i = find(source).ok_or_else(|| IngestError::MissingColumn(source.to_string()))?;
        idx.insert(canonical, i);
    }
    let city_idx = if schema.maps_city() {
        let mut out = [0usize; 3];
        for (slot, canonical) in out.iter_mut().zip(CITY) {
            let source = schema.source(canonical).unwrap_or(canonical);
            *slot = find(source).ok_or_else(|| IngestError::MissingColumn(source.to_string()))?;
        }
        Some(out)
    } else {
        match (find("hos"), find("bed"), find("doc")) {
            (Some(h), Some(b), Some(d)) => Some([h, b, d]),
            _ => None,
        }
    };

    let mut out = ParsedMicro::default();
    for row in rdr.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                out.rejects.push(Reject {
                    line,
                    reason: format!("malformed row: {e}"),
                });
                continue;
            }
        };
        let line = row.position().map_or(0, |p| p.line());
        match parse_row(&row, &idx, city_idx, regions, opts) {
            Ok(mut rec) => {
                rec.source_line = line;
                out.records.push(rec);
            }
            Err(reason) => out.rejects.push(Reject { line, reason }),
        }
    }
    Ok(out)
}

fn parse_row(
    row: &csv::StringRecord,
    idx: &BTreeMap<&str, usize>,
    city_idx: Option<[usize; 3]>,
    regions: &RegionMap,
    opts: &ParseOptions,
) -> Result<MicroRecord, String> {
    let field = |i: usize, name: &str| -> Result<&str, String> {
        match row.get(i).map(str::trim) {
            Some(v) if !v.is_empty() && !v.eq_ignore_ascii_case("na") => Ok(v),
            _ => Err(format!("missing value for {name}")),
        }
    };
    let get = |name: &str| field(idx[name], name);
    let int = |name: &str| -> Result<i32, String> {
        let v = get(name)?;
        v.parse::<i32>()
            .or_else(|_| {
                v.parse::<f64>()
                    .ok()
                    .filter(|f| f.fract() == 0.0)
                    .map(|f| f as i32)
                    .ok_or(())
            })
            .map_err(|_| format!("invalid {name}: {v:?}"))
    };
    let real = |i: usize, name: &str| -> Result<f64, String> {
        let v = field(i, name)?;
        let x: f64 = v.parse().map_err(|_| format!("invalid {name}: {v:?}"))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(format!("non-finite {name}: {v:?}"))
        }
    };

    let survey_year = int("survey_year")?;
    if !opts.survey_years.contains(&survey_year) {
        return Err(format!(
            "survey_year {survey_year} outside {}..={}",
            opts.survey_years.start(),
            opts.survey_years.end()
        ));
    }
    let birth_year = int("birth_year")?;
    if !opts.birth_years.contains(&birth_year) {
        return Err(format!(
            "birth_year {birth_year} outside {}..={}",
            opts.birth_years.start(),
            opts.birth_years.end()
        ));
    }
    let gender: Gender = get("gender")?.parse().map_err(|e: IngestError| e.to_string())?;
    let (province, region) = regions.lookup(get("province")?).map_err(|e| e.to_string())?;
    let education = EducationLevel::parse(get("education_level")?).map_err(|e| e.to_string())?;
    let flag = get("has_health_record")?;
    let has_health_record = match flag.to_ascii_lowercase().as_str() {
        "1" | "yes" | "true" => true,
        "0" | "no" | "false" => false,
        _ => return Err(format!("invalid has_health_record: {flag:?}")),
    };
    let living = real(idx["living"], "living")?;
    let flowt = real(idx["flowt"], "flowt")?;
    let income = real(idx["income"], "income")?;
    if living < 0.0 || flowt < 0.0 {
        return Err("negative living or flowt".into());
    }
    if income <= 0.0 {
        return Err(format!("non-positive income {income}"));
    }
    let city = match city_idx {
        Some([h, b, d]) => Some(CityCovariates {
            hos: real(h, "hos")?,
            bed: real(b, "bed")?,
            doc: real(d, "doc")?,
        }),
        None => None,
    };

    Ok(MicroRecord {
        survey_year,
        birth_year,
        gender,
        province: province.to_string(),
        region,
        education,
        has_health_record,
        living,
        flowt,
        income,
        real_income: income,
        city,
        source_line: 0,
    })
}

/// Writes records with the column names of `schema`; city columns are written
/// only when every record carries them.
pub fn write_micro_csv<W: Write>(records: &[MicroRecord], schema: &Schema, writer: W) -> Result<(), IngestError> {
    let with_city = !records.is_empty() && records.iter().all(|r| r.city.is_some());
    let ncols = if with_city { CANONICAL_COLUMNS.len() } else { REQUIRED };
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = CANONICAL_COLUMNS[..ncols]
        .iter()
        .map(|c| schema.source(c).unwrap_or(c))
        .collect();
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.survey_year.to_string(),
            r.birth_year.to_string(),
            r.gender.to_string(),
            r.province.clone(),
            r.education.label().to_string(),
            if r.has_health_record { "1" } else { "0" }.to_string(),
            r.living.to_string(),
            r.flowt.to_string(),
            r.income.to_string(),
        ];
        if with_city {
            let c = r.city.expect("checked above");
            row.extend([c.hos.to_string(), c.bed.to_string(), c.doc.to_string()]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rejects<W: Write>(rejects: &[Reject], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["line_number", "reason"])?;
    for r in rejects {
        w.write_record([r.line.to_string(), r.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}
