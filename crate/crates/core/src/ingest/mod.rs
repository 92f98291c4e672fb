//! Survey micro-data ingestion and construction of the analysis variables.

mod covariates;
mod cpi;
mod parse;
mod region;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::percentile;

pub use covariates::{CityCovariates, CovariateTable};
pub use cpi::{deflate_income, CpiTable, CPI_BASE_YEAR};
pub use parse::{
    parse_micro_csv, parse_micro_reader, write_micro_csv, write_rejects, ParseOptions, ParsedMicro, Reject, Schema,
    CANONICAL_COLUMNS,
};
pub use region::{region_of, Region, RegionMap};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("unknown education category {0:?}")]
    UnknownCategory(String),
    #[error("unknown province {0:?}")]
    UnknownProvince(String),
    #[error("CPI table has no entry for year {0}")]
    MissingCpiYear(i32),
    #[error("no records to process")]
    EmptyInput,
    #[error("input header lacks mapped column {0:?}")]
    MissingColumn(String),
    #[error("invalid value {value:?} for {field}")]
    InvalidValue { field: String, value: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Gender {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" | "1" => Ok(Gender::Male),
            "female" | "f" | "2" => Ok(Gender::Female),
            _ => Err(IngestError::InvalidValue {
                field: "gender".into(),
                value: s.to_string(),
            }),
        }
    }
}

/// Highest completed education level as recorded by the survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EducationLevel {
    None,
    Elementary,
    JuniorHigh,
    HighSchool,
    College,
    Undergraduate,
    Postgraduate,
}

impl EducationLevel {
    pub const ALL: [EducationLevel; 7] = [
        EducationLevel::None,
        EducationLevel::Elementary,
        EducationLevel::JuniorHigh,
        EducationLevel::HighSchool,
        EducationLevel::College,
        EducationLevel::Undergraduate,
        EducationLevel::Postgraduate,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EducationLevel::None => "none",
            EducationLevel::Elementary => "elementary",
            EducationLevel::JuniorHigh => "junior_high",
            EducationLevel::HighSchool => "high_school",
            EducationLevel::College => "college",
            EducationLevel::Undergraduate => "undergraduate",
            EducationLevel::Postgraduate => "postgraduate",
        }
    }

    /// Parses a canonical label or one of the common survey spellings.
    pub fn parse(label: &str) -> Result<Self, IngestError> {
        let norm: String = label
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        let level = match norm.as_str() {
            "none" | "no_schooling" | "illiterate" => EducationLevel::None,
            "elementary" | "primary" | "primary_school" => EducationLevel::Elementary,
            "junior_high" | "junior_high_school" | "middle_school" => EducationLevel::JuniorHigh,
            "high_school" | "senior_high" | "senior_high_school" | "technical_secondary" => EducationLevel::HighSchool,
            "college" | "junior_college" | "university_college" => EducationLevel::College,
            "undergraduate" | "bachelor" | "university_undergraduate" => EducationLevel::Undergraduate,
            "postgraduate" | "graduate" | "master" | "doctorate" => EducationLevel::Postgraduate,
            _ => return Err(IngestError::UnknownCategory(label.to_string())),
        };
        Ok(level)
    }

    pub fn years(self) -> f64 {
        match self {
            EducationLevel::None => 0.0,
            EducationLevel::Elementary => 6.0,
            EducationLevel::JuniorHigh => 9.0,
            EducationLevel::HighSchool => 12.0,
            EducationLevel::College => 15.0,
            EducationLevel::Undergraduate => 16.0,
            EducationLevel::Postgraduate => 19.0,
        }
    }
}

/// Years of schooling for a survey education label.
pub fn education_years(label: &str) -> Result<f64, IngestError> {
    EducationLevel::parse(label).map(EducationLevel::years)
}

/// One survey respondent in one survey wave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroRecord {
    pub survey_year: i32,
    pub birth_year: i32,
    pub gender: Gender,
    /// Canonical province name.
    pub province: String,
    pub region: Region,
    pub education: EducationLevel,
    pub has_health_record: bool,
    /// Number of people living together.
    pub living: f64,
    /// Years since the respondent moved.
    pub flowt: f64,
    /// Nominal total household income as reported.
    pub income: f64,
    /// Household income in base-year prices; equals `income` until deflated.
    pub real_income: f64,
    pub city: Option<CityCovariates>,
    /// 1-based line in the source file, 0 for generated records.
    #[serde(skip)]
    pub source_line: u64,
}

impl MicroRecord {
    pub fn edu_years(&self) -> f64 {
        self.education.years()
    }

    pub fn log_income(&self) -> f64 {
        self.real_income.ln()
    }
}

/// Rewrites `real_income` for every record in base-year prices.
pub fn deflate_records(records: &mut [MicroRecord], cpi: &CpiTable) -> Result<(), IngestError> {
    for r in records.iter_mut() {
        r.real_income = deflate_income(r.income, r.survey_year, cpi)?;
    }
    Ok(())
}

/// Lower and upper pooled real-income percentiles used for trimming.
pub const TRIM_LOWER_PCT: f64 = 7.5;
pub const TRIM_UPPER_PCT: f64 = 97.5;

/// Drops records whose real income lies strictly outside the pooled
/// [7.5th, 97.5th] percentile band.
pub fn trim_by_income(records: Vec<MicroRecord>) -> Result<Vec<MicroRecord>, IngestError> {
    if records.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let incomes: Vec<f64> = records.iter().map(|r| r.real_income).collect();
    let (lo, hi) = income_bounds(&incomes)?;
    Ok(records
        .into_iter()
        .filter(|r| r.real_income >= lo && r.real_income <= hi)
        .collect())
}

pub fn income_bounds(incomes: &[f64]) -> Result<(f64, f64), IngestError> {
    let p = |q| {
        percentile(incomes, q).map_err(|e| match e {
            crate::numerics::NumericsError::EmptyInput => IngestError::EmptyInput,
            other => IngestError::InvalidValue {
                field: "income".into(),
                value: other.to_string(),
            },
        })
    };
    Ok((p(TRIM_LOWER_PCT)?, p(TRIM_UPPER_PCT)?))
}
