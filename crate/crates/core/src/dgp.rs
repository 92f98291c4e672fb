//! Synthetic survey micro-data with known cohort-level parameters.
//!
//! Individuals are drawn per cohort-year cell. Every member of a cell holds a
//! health record with the same probability, linear in the cell means of
//! education and the controls, the cohort effect, a cell shock and the previous
//! year's cell mean, clamped to `[0.01, 0.99]`. Means are taken over the records
//! that survive income trimming, so the ingested panel follows the linear
//! dynamic model exactly in expectation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{
    deflate_income, income_bounds, CityCovariates, CovariateTable, CpiTable, EducationLevel, Gender, IngestError,
    MicroRecord, Region, RegionMap,
};
use crate::panel::{CohortKey, CohortScheme};

#[derive(Debug, thiserror::Error)]
pub enum DgpError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Effects of the control variables on the individual probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlEffects {
    pub living: f64,
    pub flowt: f64,
    pub income: f64,
    pub hos: f64,
    pub bed: f64,
    pub doc: f64,
}

impl ControlEffects {
    pub const ZERO: ControlEffects = ControlEffects {
        living: 0.0,
        flowt: 0.0,
        income: 0.0,
        hos: 0.0,
        bed: 0.0,
        doc: 0.0,
    };

    fn apply(&self, x: &Controls) -> f64 {
        self.living * x.living
            + self.flowt * x.flowt
            + self.income * x.income
            + self.hos * x.hos
            + self.bed * x.bed
            + self.doc * x.doc
    }
}

impl Default for ControlEffects {
    fn default() -> Self {
        Self {
            living: 0.05,
            flowt: -0.01,
            income: -0.05,
            hos: -2e-6,
            bed: -0.02,
            doc: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Controls {
    living: f64,
    flowt: f64,
    income: f64,
    hos: f64,
    bed: f64,
    doc: f64,
}

/// Means and cell-level standard deviations of the covariates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateMoments {
    pub living_mean: f64,
    pub living_sd: f64,
    pub flowt_mean: f64,
    pub flowt_sd: f64,
    /// Log real household income.
    pub income_mean: f64,
    pub income_sd: f64,
    pub hos_mean: f64,
    pub hos_sd: f64,
    pub bed_mean: f64,
    pub bed_sd: f64,
    pub doc_mean: f64,
    pub doc_sd: f64,
}

impl Default for CovariateMoments {
    fn default() -> Self {
        Self {
            living_mean: 2.905,
            living_sd: 0.4553,
            flowt_mean: 5.5998,
            flowt_sd: 2.0231,
            income_mean: 8.5697,
            income_sd: 0.1599,
            hos_mean: 33747.15,
            hos_sd: 6950.85,
            bed_mean: 5.3439,
            bed_sd: 0.4776,
            doc_mean: 2.0262,
            doc_sd: 0.2782,
        }
    }
}

/// Parameters of the synthetic data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgpParams {
    pub alpha: f64,
    pub beta_edu: f64,
    pub beta_controls: ControlEffects,
    /// Coefficient on the previous year's cell mean.
    pub rho: f64,
    pub sigma_lambda: f64,
    /// Standard deviation of the cohort-year shock.
    pub sigma_eps: f64,
    /// Correlation of the cohort effect with the cohort's education level.
    pub gamma: f64,
    /// Individuals drawn per cohort-year cell.
    pub cell_size: usize,
    pub periods: usize,
    pub first_year: i32,
    pub scheme: CohortScheme,
    /// Cohort education for the middle birth bin.
    pub edu_center: f64,
    /// Change in cohort education per later birth bin.
    pub edu_slope: f64,
    pub edu_gender_gap: f64,
    pub edu_region_gap: f64,
    /// Standard deviation of cohort-year education shocks.
    pub edu_shock_sd: f64,
    pub covariates: CovariateMoments,
    /// Mean health record rate targeted by [`DgpParams::calibrate_alpha`].
    pub target_health: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        let mut p = Self {
            alpha: 0.0,
            beta_edu: 0.08,
            beta_controls: ControlEffects::default(),
            rho: 0.0,
            sigma_lambda: 0.05,
            sigma_eps: 0.02,
            gamma: 0.0,
            cell_size: 200,
            periods: 5,
            first_year: 2014,
            scheme: CohortScheme::default(),
            edu_center: 9.0,
            edu_slope: 0.8,
            edu_gender_gap: 0.1,
            edu_region_gap: 0.05,
            edu_shock_sd: 0.15,
            covariates: CovariateMoments::default(),
            target_health: 0.3546,
        };
        p.calibrate_alpha();
        p
    }
}

/// Clipping band of the individual health-record probability.
pub const PROB_FLOOR: f64 = 0.01;
pub const PROB_CEIL: f64 = 0.99;

/// Synthetic CPI path with 2014 = 100.
pub const SYNTHETIC_CPI: [(i32, f64); 5] = [
    (2014, 100.0),
    (2015, 101.4),
    (2016, 103.4),
    (2017, 105.0),
    (2018, 107.2),
];

impl DgpParams {
    /// Sets `alpha` so that the stationary mean health rate equals `target_health`.
    pub fn calibrate_alpha(&mut self) {
        let edu = self.mean_cohort_edu();
        self.alpha = (1.0 - self.rho) * self.target_health - self.beta_edu * edu - self.controls_at_means();
    }

    fn controls_at_means(&self) -> f64 {
        let c = &self.covariates;
        let b = &self.beta_controls;
        b.living * c.living_mean
            + b.flowt * c.flowt_mean
            + b.income * c.income_mean
            + b.hos * c.hos_mean
            + b.bed * c.bed_mean
            + b.doc * c.doc_mean
    }

    /// Long-run health rate of a cohort with a zero cohort effect and controls
    /// at their means. Outside the clipping band the cell means stop following
    /// the linear model.
    pub fn stationary_health(&self, key: &CohortKey) -> f64 {
        (self.alpha + self.beta_edu * self.cohort_edu(key) + self.controls_at_means()) / (1.0 - self.rho)
    }

    /// Cohorts whose long-run rate falls outside the clipping band.
    pub fn clipped_cohorts(&self) -> Vec<CohortKey> {
        self.scheme
            .all_keys()
            .into_iter()
            .filter(|k| {
                let m = self.stationary_health(k);
                !(PROB_FLOOR..=PROB_CEIL).contains(&m)
            })
            .collect()
    }

    pub fn with_calibrated_alpha(mut self) -> Self {
        self.calibrate_alpha();
        self
    }

    pub fn n_cohorts(&self) -> usize {
        self.scheme.all_keys().len()
    }

    pub fn years(&self) -> Vec<i32> {
        (0..self.periods as i32).map(|t| self.first_year + t).collect()
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        let finite = [
            self.alpha,
            self.beta_edu,
            self.rho,
            self.sigma_lambda,
            self.sigma_eps,
            self.gamma,
            self.edu_center,
            self.edu_slope,
            self.edu_shock_sd,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(DgpError::InvalidParams("non-finite parameter".into()));
        }
        if self.sigma_lambda < 0.0 || self.sigma_eps < 0.0 || self.edu_shock_sd < 0.0 {
            return Err(DgpError::InvalidParams("scale parameters must be non-negative".into()));
        }
        if self.rho.abs() >= 1.0 {
            return Err(DgpError::InvalidParams(format!("|rho| = {} is not below 1", self.rho)));
        }
        if !(-1.0..=1.0).contains(&self.gamma) {
            return Err(DgpError::InvalidParams(format!("gamma {} outside [-1, 1]", self.gamma)));
        }
        if self.cell_size == 0 {
            return Err(DgpError::InvalidParams("cell size must be at least 1".into()));
        }
        if self.periods < 2 {
            return Err(DgpError::InvalidParams("need at least two periods".into()));
        }
        let years = self.years();
        if years.iter().any(|y| !SYNTHETIC_CPI.iter().any(|(cy, _)| cy == y)) {
            return Err(DgpError::InvalidParams(format!(
                "survey years must lie in {}..={}",
                SYNTHETIC_CPI[0].0,
                SYNTHETIC_CPI[SYNTHETIC_CPI.len() - 1].0
            )));
        }
        self.scheme
            .validate()
            .map_err(|e| DgpError::InvalidParams(e.to_string()))
    }

    /// Expected education of a cohort before year shocks.
    pub fn cohort_edu(&self, key: &CohortKey) -> f64 {
        let bins = self.scheme.bins();
        let idx = bins.iter().position(|&b| b == key.birth_bin).unwrap_or(0) as f64;
        let mid = (bins.len() as f64 - 1.0) / 2.0;
        let gender = match key.gender {
            Gender::Male => 0.5,
            Gender::Female => -0.5,
        };
        let region = match key.region {
            Region::East => 1.0,
            Region::Central => 0.0,
            Region::West => -1.0,
        };
        self.edu_center + self.edu_slope * (idx - mid) + self.edu_gender_gap * gender + self.edu_region_gap * region
    }

    fn mean_cohort_edu(&self) -> f64 {
        let keys = self.scheme.all_keys();
        keys.iter().map(|k| self.cohort_edu(k)).sum::<f64>() / keys.len() as f64
    }
}

/// Generated micro-data with the auxiliary tables needed to ingest it.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<MicroRecord>,
    pub cpi: CpiTable,
    pub covariates: CovariateTable,
    /// True cohort effects.
    pub cohort_effects: BTreeMap<CohortKey, f64>,
}

impl SyntheticData {
    /// Deflates, trims and aggregates the records into a cohort panel, as the
    /// ingestion pipeline does.
    pub fn to_panel(&self) -> Result<crate::panel::PseudoPanel, DgpError> {
        self.to_panel_with(&CohortScheme::default())
    }

    pub fn to_panel_with(&self, scheme: &CohortScheme) -> Result<crate::panel::PseudoPanel, DgpError> {
        let mut records = self.records.clone();
        crate::ingest::deflate_records(&mut records, &self.cpi)?;
        let records = crate::ingest::trim_by_income(records)?;
        crate::panel::aggregate_with(&records, scheme)
            .map(|(p, _)| p)
            .map_err(|e| DgpError::InvalidParams(e.to_string()))
    }
}

pub fn synthetic_cpi() -> CpiTable {
    CpiTable::new(SYNTHETIC_CPI.into_iter().collect()).expect("positive constants")
}

/// Draws a synthetic survey from `params` with a ChaCha generator seeded by `seed`.
pub fn generate_synthetic(params: &DgpParams, seed: u64) -> Result<SyntheticData, DgpError> {
    generate_with_rng(params, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn generate_with_rng<R: Rng>(params: &DgpParams, rng: &mut R) -> Result<SyntheticData, DgpError> {
    params.validate()?;
    let keys = params.scheme.all_keys();
    let years = params.years();
    let regions = RegionMap::default();
    let cpi = synthetic_cpi();
    let m = &params.covariates;

    let mut covariates = CovariateTable::default();
    for region in Region::ALL {
        for province in regions.provinces(region) {
            let hos = (m.hos_mean + m.hos_sd * normal(rng)).max(1000.0);
            let bed = (m.bed_mean + m.bed_sd * normal(rng)).max(0.5);
            let doc = (m.doc_mean + m.doc_sd * normal(rng)).max(0.2);
            for (t, &year) in years.iter().enumerate() {
                let t = t as f64 - (years.len() as f64 - 1.0) / 2.0;
                covariates.insert(
                    province,
                    year,
                    CityCovariates {
                        hos: hos * (1.0 + 0.01 * t),
                        bed: bed + 0.05 * t,
                        doc: doc + 0.03 * t,
                    },
                );
            }
        }
    }

    // Cohort effects, correlated with standardized cohort education.
    let mu: Vec<f64> = keys.iter().map(|k| params.cohort_edu(k)).collect();
    let mu_mean = mu.iter().sum::<f64>() / mu.len() as f64;
    let mu_sd = (mu.iter().map(|v| (v - mu_mean).powi(2)).sum::<f64>() / mu.len() as f64).sqrt();
    let cohort_effects: BTreeMap<CohortKey, f64> = keys
        .iter()
        .zip(&mu)
        .map(|(k, &m)| {
            let z = if mu_sd > 0.0 { (m - mu_mean) / mu_sd } else { 0.0 };
            let xi = normal(rng);
            let lambda = params.sigma_lambda * (params.gamma * z + (1.0 - params.gamma * params.gamma).sqrt() * xi);
            (*k, lambda)
        })
        .collect();

    // Covariates and education for every individual; health follows once trimming is known.
    struct Draft {
        record: MicroRecord,
        controls: Controls,
        edu: f64,
    }
    let mut drafts: Vec<Vec<Draft>> = Vec::with_capacity(keys.len() * years.len());
    let mut cohort_controls = Vec::with_capacity(keys.len());
    for (ki, key) in keys.iter().enumerate() {
        let a_living = normal(rng);
        let a_flowt = normal(rng);
        let a_income = normal(rng);
        cohort_controls.push(region_controls(
            params,
            &covariates,
            &regions,
            key.region,
            &years,
            Controls {
                living: m.living_mean + 0.8 * m.living_sd * a_living,
                flowt: m.flowt_mean + 0.8 * m.flowt_sd * a_flowt,
                income: m.income_mean + 0.8 * m.income_sd * a_income,
                ..Controls::default()
            },
        ));
        for &year in &years {
            let cell_mean = |a: f64, mean: f64, sd: f64, rng: &mut R| mean + sd * (0.8 * a + 0.6 * normal(rng));
            let living_m = cell_mean(a_living, m.living_mean, m.living_sd, rng);
            let flowt_m = cell_mean(a_flowt, m.flowt_mean, m.flowt_sd, rng).max(0.5);
            let income_m = cell_mean(a_income, m.income_mean, m.income_sd, rng);
            let edu_m = (mu[ki] + params.edu_shock_sd * normal(rng)).clamp(0.0, 19.0);
            let provinces = regions.provinces(key.region);
            let deflator = cpi.get(year)? / 100.0;
            let mut cell = Vec::with_capacity(params.cell_size);
            for _ in 0..params.cell_size {
                let province = provinces[rng.random_range(0..provinces.len())];
                let city = covariates.get(province, year).expect("generated above");
                let education = draw_education(edu_m, rng);
                let living = (living_m + 0.8 * normal(rng)).round().max(1.0);
                let flowt = (flowt_m + 2.0 * normal(rng)).max(0.0);
                let log_real = income_m + 0.6 * normal(rng);
                let nominal = log_real.exp() * deflator;
                let birth_year = key.birth_bin + rng.random_range(0..params.scheme.bin_width);
                cell.push(Draft {
                    record: MicroRecord {
                        survey_year: year,
                        birth_year,
                        gender: key.gender,
                        province: province.to_string(),
                        region: key.region,
                        education,
                        has_health_record: false,
                        living,
                        flowt,
                        income: nominal,
                        real_income: nominal,
                        city: Some(city),
                        source_line: 0,
                    },
                    controls: Controls {
                        living,
                        flowt,
                        income: 0.0,
                        hos: city.hos,
                        bed: city.bed,
                        doc: city.doc,
                    },
                    edu: education.years(),
                });
            }
            drafts.push(cell);
        }
    }

    // Deflate exactly as ingestion does and find the retained records.
    for d in drafts.iter_mut().flatten() {
        let real = deflate_income(d.record.income, d.record.survey_year, &cpi)?;
        d.record.real_income = real;
        d.controls.income = real.ln();
    }
    let incomes: Vec<f64> = drafts.iter().flatten().map(|d| d.record.real_income).collect();
    let (lo, hi) = income_bounds(&incomes)?;
    let kept = |d: &Draft| d.record.real_income >= lo && d.record.real_income <= hi;

    let mut records = Vec::with_capacity(incomes.len());
    let n_eff = params.cell_size as f64 * 0.9;
    for (ki, key) in keys.iter().enumerate() {
        let lambda = cohort_effects[key];
        let base = params.alpha + params.beta_edu * mu[ki] + lambda + cohort_controls[ki];
        // Pre-sample path started at the stationary mean and run to forget it.
        let mut lag = base / (1.0 - params.rho);
        for _ in 0..50 {
            let sampling = (lag * (1.0 - lag)).max(0.0).sqrt() / n_eff.sqrt();
            let shock = params.sigma_eps * normal(rng) + sampling * normal(rng);
            lag = (base + params.rho * lag + shock).clamp(PROB_FLOOR, PROB_CEIL);
        }
        for t in 0..years.len() {
            let cell = &mut drafts[ki * years.len() + t];
            let retained: Vec<&Draft> = cell.iter().filter(|d| kept(d)).collect();
            let n = retained.len().max(1) as f64;
            let edu_mean = retained.iter().map(|d| d.edu).sum::<f64>() / n;
            let mut x = Controls::default();
            for d in &retained {
                x.living += d.controls.living / n;
                x.flowt += d.controls.flowt / n;
                x.income += d.controls.income / n;
                x.hos += d.controls.hos / n;
                x.bed += d.controls.bed / n;
                x.doc += d.controls.doc / n;
            }
            let eps = params.sigma_eps * normal(rng);
            let p = (params.alpha
                + params.rho * lag
                + params.beta_edu * edu_mean
                + params.beta_controls.apply(&x)
                + lambda
                + eps)
                .clamp(PROB_FLOOR, PROB_CEIL);
            let (mut sum, mut count) = (0.0, 0usize);
            for d in cell.iter_mut() {
                d.record.has_health_record = rng.random::<f64>() < p;
                if kept(d) {
                    sum += f64::from(u8::from(d.record.has_health_record));
                    count += 1;
                }
            }
            if count > 0 {
                lag = sum / count as f64;
            }
        }
    }
    for cell in drafts {
        records.extend(cell.into_iter().map(|d| d.record));
    }
    Ok(SyntheticData {
        records,
        cpi,
        covariates,
        cohort_effects,
    })
}

/// Expected control contribution for a cohort: its own individual-control
/// centers plus the average provincial covariates of its region.
fn region_controls(
    params: &DgpParams,
    table: &CovariateTable,
    regions: &RegionMap,
    region: Region,
    years: &[i32],
    mut x: Controls,
) -> f64 {
    let mut n = 0.0;
    for province in regions.provinces(region) {
        for &year in years {
            if let Some(c) = table.get(province, year) {
                x.hos += c.hos;
                x.bed += c.bed;
                x.doc += c.doc;
                n += 1.0;
            }
        }
    }
    if n > 0.0 {
        x.hos /= n;
        x.bed /= n;
        x.doc /= n;
    }
    params.beta_controls.apply(&x)
}

/// Picks one of the two schooling levels bracketing `mean` so that the expected
/// years of schooling equal `mean`.
fn draw_education<R: Rng>(mean: f64, rng: &mut R) -> EducationLevel {
    let ladder = EducationLevel::ALL;
    if mean <= ladder[0].years() {
        return ladder[0];
    }
    for pair in ladder.windows(2) {
        let (lo, hi) = (pair[0].years(), pair[1].years());
        if mean <= hi {
            let p_hi = (mean - lo) / (hi - lo);
            return if rng.random::<f64>() < p_hi { pair[1] } else { pair[0] };
        }
    }
    ladder[ladder.len() - 1]
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Cohort-level AR(1) panel `y_ct = α + ρ y_c,t−1 + β x_ct + λ_c + ε_ct` with an
/// exogenous regressor, drawn without micro-data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohortArParams {
    pub alpha: f64,
    pub rho: f64,
    pub beta: f64,
    pub sigma_lambda: f64,
    pub sigma_eps: f64,
    /// Standard deviation of the regressor.
    pub sigma_x: f64,
    pub periods: usize,
}

impl Default for CohortArParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            rho: 0.3,
            beta: 0.08,
            sigma_lambda: 0.05,
            sigma_eps: 0.02,
            sigma_x: 0.3,
            periods: 5,
        }
    }
}

/// Draws the cohort AR(1) panel with variables `health` and `edu`, one row per
/// cohort key and year starting in 2014; initial values are stationary.
pub fn generate_cohort_ar<R: Rng>(params: &CohortArParams, rng: &mut R) -> Result<crate::panel::PseudoPanel, DgpError> {
    if params.rho.abs() >= 1.0 || params.periods < 2 {
        return Err(DgpError::InvalidParams(
            "need |rho| < 1 and at least two periods".into(),
        ));
    }
    let eps = Normal::new(0.0, params.sigma_eps.max(0.0)).map_err(|e| DgpError::InvalidParams(e.to_string()))?;
    let keys = CohortScheme::default().all_keys();
    let mut cells = Vec::new();
    for key in keys {
        let lambda = params.sigma_lambda * normal(rng);
        let x_mean = 10.0 + normal(rng);
        let mean_y = (params.alpha + params.beta * x_mean + lambda) / (1.0 - params.rho);
        let sd_y = params.sigma_eps / (1.0 - params.rho * params.rho).sqrt();
        let mut y = mean_y + sd_y * normal(rng);
        for t in 0..params.periods {
            let x = x_mean + params.sigma_x * normal(rng);
            y = params.alpha + params.rho * y + params.beta * x + lambda + eps.sample(rng);
            cells.push(crate::panel::PanelCell {
                key,
                year: 2014 + t as i32,
                n: 1,
                values: vec![Some(y), Some(x)],
            });
        }
    }
    crate::panel::PseudoPanel::from_cells(vec!["health".into(), "edu".into()], cells)
        .map_err(|e| DgpError::InvalidParams(e.to_string()))
}
