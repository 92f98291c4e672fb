mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::micro;
use proptest::prelude::*;
use pseudopanel::ingest::{
    deflate_income, education_years, income_bounds, parse_micro_reader, region_of, trim_by_income, write_micro_csv,
    CpiTable, EducationLevel, Gender, IngestError, MicroRecord, ParseOptions, Region, RegionMap, Schema,
};

fn cpi() -> CpiTable {
    CpiTable::new(BTreeMap::from([(2014, 100.0), (2015, 102.0), (2016, 104.0)])).unwrap()
}

fn with_income(v: f64) -> MicroRecord {
    let mut r = micro(2014, 1980, Gender::Male, Region::East, EducationLevel::HighSchool, true);
    r.income = v;
    r.real_income = v;
    r
}

fn retained(incomes: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let recs = incomes.into_iter().map(with_income).collect();
    trim_by_income(recs)
        .unwrap()
        .into_iter()
        .map(|r| r.real_income)
        .collect()
}

const HEADER: &str = "survey_year,birth_year,gender,province,education_level,has_health_record,living,flowt,income";

fn parse(body: &str) -> pseudopanel::ingest::ParsedMicro {
    let text = format!("{HEADER}\n{body}");
    parse_micro_reader(
        text.as_bytes(),
        &Schema::default(),
        &RegionMap::default(),
        &ParseOptions::default(),
    )
    .unwrap()
}

#[test]
fn education_mapping_table() {
    let expected = [
        ("none", 0.0),
        ("elementary", 6.0),
        ("junior_high", 9.0),
        ("high_school", 12.0),
        ("college", 15.0),
        ("undergraduate", 16.0),
        ("postgraduate", 19.0),
    ];
    for (label, years) in expected {
        assert_eq!(education_years(label).unwrap(), years, "{label}");
    }
    let distinct: BTreeSet<u64> = EducationLevel::ALL.iter().map(|l| l.years().to_bits()).collect();
    assert_eq!(distinct.len(), 7);
    assert!(matches!(
        education_years("PhD-ish"),
        Err(IngestError::UnknownCategory(_))
    ));
}

#[test]
fn region_examples_and_partition() {
    let map = RegionMap::default();
    assert_eq!(region_of("Hebei", &map).unwrap(), Region::East);
    assert_eq!(region_of("Shanxi", &map).unwrap(), Region::Central);
    assert_eq!(region_of("Tibet", &map).unwrap(), Region::West);
    assert!(matches!(
        region_of("Atlantis", &map),
        Err(IngestError::UnknownProvince(_))
    ));
    let counts: Vec<usize> = [Region::East, Region::Central, Region::West]
        .iter()
        .map(|&r| map.provinces(r).len())
        .collect();
    assert_eq!(counts, [13, 6, 12]);
    let all: BTreeSet<&str> = [Region::East, Region::Central, Region::West]
        .iter()
        .flat_map(|&r| map.provinces(r))
        .collect();
    assert_eq!(all.len(), 31);
}

#[test]
fn deflation_examples() {
    let t = cpi();
    assert_eq!(deflate_income(1000.0, 2014, &t).unwrap(), 1000.0);
    assert!((deflate_income(1020.0, 2015, &t).unwrap() - 1000.0).abs() < 1e-9);
    assert!((deflate_income(500.0, 2016, &t).unwrap() - 480.769_230_769).abs() < 1e-6);
    assert!(matches!(
        deflate_income(1.0, 2017, &t),
        Err(IngestError::MissingCpiYear(2017))
    ));
}

#[test]
fn trimming_thousand_integers() {
    let kept = retained((1..=1000).map(f64::from));
    assert_eq!(kept.len(), 900);
    assert_eq!(kept.first(), Some(&76.0));
    assert_eq!(kept.last(), Some(&975.0));
}

#[test]
fn trimming_forty_integers_against_rank_oracle() {
    // Linear interpolation between order statistics at (n - 1) p / 100.
    let v: Vec<f64> = (1..=40).map(f64::from).collect();
    let q = |p: f64| {
        let h = 39.0 * p / 100.0;
        let lo = h.floor() as usize;
        v[lo] + (h - lo as f64) * (v[lo + 1] - v[lo])
    };
    assert!((q(7.5) - 3.925).abs() < 1e-12);
    assert!((q(97.5) - 39.025).abs() < 1e-12);
    let kept = retained(v.iter().copied());
    assert_eq!(kept, (4..=39).map(f64::from).collect::<Vec<_>>());
}

#[test]
fn trimming_keeps_identical_incomes_and_rejects_empty() {
    assert_eq!(retained(std::iter::repeat(250.0).take(17)).len(), 17);
    assert!(matches!(trim_by_income(Vec::new()), Err(IngestError::EmptyInput)));
}

#[test]
fn parse_well_formed_rows() {
    let out = parse(
        "2014,1980,male,Hebei,high_school,1,3,2.5,52000\n\
         2016,1961,female,Shanxi,none,0,2,10,31000\n\
         2018,1999,male,Tibet,postgraduate,1,1,0.5,88000\n",
    );
    assert_eq!(out.records.len(), 3);
    assert!(out.rejects.is_empty());
    assert_eq!(out.records[1].region, Region::Central);
    assert_eq!(out.records[2].edu_years(), 19.0);
}

#[test]
fn parse_rejects_and_continues() {
    let out = parse(
        "2014,1980,male,Hebei,PhD-ish,1,3,2.5,52000\n\
         2012,1980,male,Hebei,college,1,3,2.5,52000\n\
         2015,1975,female,Henan,college,0,4,1,40000\n",
    );
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.rejects.len(), 2);
    assert!(
        out.rejects[0].reason.contains("unknown education category"),
        "{}",
        out.rejects[0].reason
    );
    assert!(out.rejects[1].reason.contains("survey_year 2012"));
    assert_eq!(out.rejects[0].line, 2);
}

#[test]
fn parse_requires_mapped_columns() {
    let text = "survey_year,birth_year\n2014,1980\n";
    let err = parse_micro_reader(
        text.as_bytes(),
        &Schema::default(),
        &RegionMap::default(),
        &ParseOptions::default(),
    );
    assert!(matches!(err, Err(IngestError::MissingColumn(_))));
}

#[test]
fn schema_renames_source_columns() {
    let schema = Schema::from_pairs([("income", "household_income"), ("living", "cohabitants")]).unwrap();
    let text =
        "survey_year,birth_year,gender,province,education_level,has_health_record,cohabitants,flowt,household_income\n\
                2017,1990,f,Beijing,bachelor,yes,2,3,60000\n";
    let out = parse_micro_reader(
        text.as_bytes(),
        &schema,
        &RegionMap::default(),
        &ParseOptions::default(),
    )
    .unwrap();
    assert_eq!(out.records.len(), 1);
    assert_eq!(out.records[0].living, 2.0);
    assert_eq!(out.records[0].income, 60000.0);
}

fn record_strategy() -> impl Strategy<Value = MicroRecord> {
    (
        2014i32..=2018,
        1955i32..=1999,
        any::<bool>(),
        0usize..31,
        0usize..7,
        any::<bool>(),
        0.0f64..12.0,
        0.0f64..40.0,
        1.0f64..1e6,
    )
        .prop_map(|(year, birth, male, p, e, h, living, flowt, income)| {
            let map = RegionMap::default();
            let provinces: Vec<&str> = [Region::East, Region::Central, Region::West]
                .iter()
                .flat_map(|&r| map.provinces(r))
                .collect();
            let (name, region) = map.lookup(provinces[p]).unwrap();
            MicroRecord {
                survey_year: year,
                birth_year: birth,
                gender: if male { Gender::Male } else { Gender::Female },
                province: name.to_string(),
                region,
                education: EducationLevel::ALL[e],
                has_health_record: h,
                living,
                flowt,
                income,
                real_income: income,
                city: None,
                source_line: 0,
            }
        })
}

proptest! {
    #[test]
    fn base_year_identity_and_linearity(x in 0.01f64..1e7, a in 0.01f64..100.0, year in 2014i32..=2016) {
        let t = cpi();
        prop_assert_eq!(deflate_income(x, 2014, &t).unwrap(), x);
        let lhs = deflate_income(a * x, year, &t).unwrap();
        let rhs = a * deflate_income(x, year, &t).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }

    #[test]
    fn trimming_is_idempotent_under_its_bounds(v in prop::collection::vec(1.0f64..1e5, 50..300)) {
        // Re-deriving percentiles from the trimmed sample would cut another tail,
        // so idempotence is checked against the bounds of the first pass.
        let (lo, hi) = income_bounds(&v).unwrap();
        let once = retained(v);
        prop_assert!(once.iter().all(|&x| x >= lo && x <= hi));
        let again: Vec<f64> = once.iter().copied().filter(|&x| x >= lo && x <= hi).collect();
        prop_assert_eq!(again, once);
    }

    #[test]
    fn trimming_retains_about_ninety_percent(v in prop::collection::vec(1.0f64..1e5, 400..800)) {
        let frac = retained(v.iter().copied()).len() as f64 / v.len() as f64;
        prop_assert!((0.89..=0.91).contains(&frac), "retained {frac}");
    }

    #[test]
    fn write_then_parse_round_trips(recs in prop::collection::vec(record_strategy(), 1..20)) {
        let mut buf = Vec::new();
        write_micro_csv(&recs, &Schema::default(), &mut buf).unwrap();
        let back = parse_micro_reader(&buf[..], &Schema::default(), &RegionMap::default(), &ParseOptions::default()).unwrap();
        prop_assert!(back.rejects.is_empty(), "{:?}", back.rejects);
        prop_assert_eq!(back.records.len(), recs.len());
        for (a, b) in recs.iter().zip(&back.records) {
            prop_assert_eq!(a.survey_year, b.survey_year);
            prop_assert_eq!(a.birth_year, b.birth_year);
            prop_assert_eq!(a.gender, b.gender);
            prop_assert_eq!(&a.province, &b.province);
            prop_assert_eq!(a.education, b.education);
            prop_assert_eq!(a.has_health_record, b.has_health_record);
            prop_assert_eq!(a.living.to_bits(), b.living.to_bits());
            prop_assert_eq!(a.flowt.to_bits(), b.flowt.to_bits());
            prop_assert_eq!(a.income.to_bits(), b.income.to_bits());
        }
    }
}
