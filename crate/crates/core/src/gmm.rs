//! Difference and system GMM for dynamic cohort panels.
//!
//! Rows are stacked per cohort: first-differenced equations first, then (for
//! system GMM) level equations. Instruments are built per row from the panel so
//! that missing lags simply contribute zeros.

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::model::{inference, EstimationError, EstimationResult, Method, ModelSpec, INTERCEPT};
use crate::numerics::{chi_square_sf, generalized_inverse, invert_spd, normal_sf, symmetric_eigen, NumericsError};
use crate::panel::{parse_lag, CohortKey, PanelError, PseudoPanel};
use crate::static_models::squared_corr;
use crate::{Matrix, SymmetricMatrix};

/// Which transformed equations enter the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Equations {
    Difference,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Step {
    OneStep,
    TwoStep,
}

impl Step {
    pub fn from_count(n: u8) -> Option<Self> {
        match n {
            1 => Some(Step::OneStep),
            2 => Some(Step::TwoStep),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Step::OneStep => "onestep",
            Step::TwoStep => "twostep",
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A variable instrumented with its own lags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmStyle {
    /// Base panel variable, e.g. `health` for the lagged dependent variable.
    pub variable: String,
    /// Shallowest level lag used in the difference equation (at least 2 for a
    /// predetermined variable). The level equation uses the difference dated
    /// one period later.
    #[serde(default = "default_min_lag")]
    pub min_lag: usize,
    /// Deepest lag; `None` uses every available period.
    #[serde(default)]
    pub max_lag: Option<usize>,
    #[serde(default = "default_true")]
    pub collapse: bool,
}

fn default_min_lag() -> usize {
    2
}

fn default_true() -> bool {
    true
}

impl GmmStyle {
    pub fn new(variable: &str, collapse: bool) -> Self {
        Self {
            variable: variable.to_string(),
            min_lag: 2,
            max_lag: None,
            collapse,
        }
    }
}

/// Instrument configuration for one GMM estimation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSpec {
    #[serde(default)]
    pub gmm: Vec<GmmStyle>,
    /// Variables entering directly: differenced in the difference equation and in
    /// levels in the level equation, as separate columns.
    #[serde(default)]
    pub iv: Vec<String>,
    #[serde(default = "default_equations")]
    pub equations: Equations,
}

fn default_equations() -> Equations {
    Equations::System
}

impl InstrumentSpec {
    pub fn new(gmm: Vec<GmmStyle>, iv: &[&str], equations: Equations) -> Self {
        Self {
            gmm,
            iv: iv.iter().map(|s| s.to_string()).collect(),
            equations,
        }
    }

    fn validate(&self, panel: &PseudoPanel) -> Result<(), EstimationError> {
        for g in &self.gmm {
            if g.min_lag < 1 {
                return Err(EstimationError::InvalidSpec(format!(
                    "gmm-style lag depth for {:?} must be at least 1",
                    g.variable
                )));
            }
            if g.max_lag.is_some_and(|m| m < g.min_lag) {
                return Err(EstimationError::InvalidSpec(format!(
                    "gmm-style maximum lag below minimum for {:?}",
                    g.variable
                )));
            }
        }
        for name in self.gmm.iter().map(|g| &g.variable).chain(&self.iv) {
            if !panel.has_variable(name) {
                return Err(PanelError::UnknownVariable(name.clone()).into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Column {
    GmmDiff { var: String, lag: usize, year: Option<i32> },
    GmmLevel { var: String, lag: usize, year: Option<i32> },
    IvDiff(String),
    IvLevel(String),
    Const,
}

impl Column {
    fn label(&self) -> String {
        match self {
            Column::GmmDiff { var, lag, year: None } => format!("gmm-diff({var}, L{lag})"),
            Column::GmmDiff {
                var,
                lag,
                year: Some(y),
            } => format!("gmm-diff({var}, L{lag}, {y})"),
            Column::GmmLevel { var, lag, year: None } => format!("gmm-level(D.{var}, L{lag})"),
            Column::GmmLevel {
                var,
                lag,
                year: Some(y),
            } => {
                format!("gmm-level(D.{var}, L{lag}, {y})")
            }
            Column::IvDiff(v) => format!("iv-diff(D.{v})"),
            Column::IvLevel(v) => format!("iv-level({v})"),
            Column::Const => "iv-level(const)".into(),
        }
    }
}

/// Stacked equations of one cohort.
#[derive(Debug, Clone)]
pub struct CohortBlock {
    pub key: CohortKey,
    /// Year of each row; difference rows come first.
    pub years: Vec<i32>,
    pub n_diff: usize,
    pub y: Vec<f64>,
    pub x: Matrix,
    pub z: Matrix,
}

impl CohortBlock {
    fn len(&self) -> usize {
        self.y.len()
    }

    /// One-step weighting kernel: 2 on the diagonal and −1 between adjacent years
    /// for difference rows, identity for level rows.
    fn h_matrix(&self) -> Matrix {
        let r = self.len();
        let mut h = Matrix::zeros(r, r);
        for i in 0..r {
            if i < self.n_diff {
                h[(i, i)] = 2.0;
                for j in 0..self.n_diff {
                    if (self.years[i] - self.years[j]).abs() == 1 {
                        h[(i, j)] = -1.0;
                    }
                }
            } else {
                h[(i, i)] = 1.0;
            }
        }
        h
    }

    fn residuals(&self, beta: &[f64]) -> Vec<f64> {
        self.x.matvec(beta).iter().zip(&self.y).map(|(f, y)| y - f).collect()
    }
}

/// Instrumented stacked data ready for estimation.
#[derive(Debug, Clone)]
pub struct GmmData {
    pub equations: Equations,
    pub param_names: Vec<String>,
    pub instrument_labels: Vec<String>,
    pub blocks: Vec<CohortBlock>,
}

/// Builds the stacked equations and instrument matrix for `model` on `panel`.
pub fn build_instruments(
    panel: &PseudoPanel,
    model: &ModelSpec,
    iv: &InstrumentSpec,
) -> Result<GmmData, EstimationError> {
    model.validate(panel)?;
    iv.validate(panel)?;
    if model.include_cohort_dummies || model.weights {
        return Err(EstimationError::InvalidSpec(
            "GMM takes neither cohort dummies nor cell weights".into(),
        ));
    }
    let years = panel.years();
    let Some(&first_year) = years.first() else {
        return Err(PanelError::Empty.into());
    };
    if years.len() < 3 {
        return Err(EstimationError::TooFewPeriods {
            needed: 3,
            available: years.len(),
        });
    }
    let system = iv.equations == Equations::System;

    let mut param_names = Vec::new();
    if system {
        param_names.push(INTERCEPT.to_string());
    }
    param_names.extend(model.regressors.iter().cloned());
    let p = param_names.len();

    // Levels of the model variables, by cohort and year.
    let level_row = |key: CohortKey, year: i32| -> Result<Option<(f64, Vec<f64>)>, PanelError> {
        let Some(y) = panel.value(key, year, &model.dependent)? else {
            return Ok(None);
        };
        let mut x = Vec::with_capacity(p);
        if system {
            x.push(1.0);
        }
        for r in &model.regressors {
            match panel.value(key, year, r)? {
                Some(v) => x.push(v),
                None => return Ok(None),
            }
        }
        Ok(Some((y, x)))
    };

    struct RawRow {
        year: i32,
        diff: bool,
        y: f64,
        x: Vec<f64>,
    }
    let mut raw: BTreeMap<CohortKey, Vec<RawRow>> = BTreeMap::new();
    for key in panel.keys() {
        let mut levels = BTreeMap::new();
        for &year in &years {
            if let Some(row) = level_row(key, year)? {
                levels.insert(year, row);
            }
        }
        let mut rows = Vec::new();
        for (&year, (y, x)) in &levels {
            if let Some((y0, x0)) = levels.get(&(year - 1)) {
                rows.push(RawRow {
                    year,
                    diff: true,
                    y: y - y0,
                    x: x.iter().zip(x0).map(|(a, b)| a - b).collect(),
                });
            }
        }
        if system {
            for (&year, (y, x)) in &levels {
                rows.push(RawRow {
                    year,
                    diff: false,
                    y: *y,
                    x: x.clone(),
                });
            }
        }
        if !rows.is_empty() {
            raw.insert(key, rows);
        }
    }
    let diff_years: Vec<i32> = {
        let mut v: Vec<i32> = raw.values().flatten().filter(|r| r.diff).map(|r| r.year).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let level_years: Vec<i32> = {
        let mut v: Vec<i32> = raw.values().flatten().filter(|r| !r.diff).map(|r| r.year).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    if diff_years.is_empty() {
        return Err(EstimationError::TooFewPeriods {
            needed: 3,
            available: years.len(),
        });
    }

    // Instrument columns.
    let mut columns = Vec::new();
    for g in &iv.gmm {
        let deepest = |year: i32| -> usize {
            let avail = (year - first_year).max(0) as usize;
            g.max_lag.map_or(avail, |m| m.min(avail))
        };
        if g.collapse {
            let max = diff_years.iter().map(|&t| deepest(t)).max().unwrap_or(0);
            for lag in g.min_lag..=max {
                columns.push(Column::GmmDiff {
                    var: g.variable.clone(),
                    lag,
                    year: None,
                });
            }
        } else {
            for &t in &diff_years {
                for lag in g.min_lag..=deepest(t) {
                    columns.push(Column::GmmDiff {
                        var: g.variable.clone(),
                        lag,
                        year: Some(t),
                    });
                }
            }
        }
    }
    if system {
        for g in &iv.gmm {
            let lag = g.min_lag - 1;
            // Δv dated t − lag needs the level one period earlier.
            let usable: Vec<i32> = level_years
                .iter()
                .copied()
                .filter(|&t| t - lag as i32 - 1 >= first_year)
                .collect();
            if g.collapse {
                if !usable.is_empty() {
                    columns.push(Column::GmmLevel {
                        var: g.variable.clone(),
                        lag,
                        year: None,
                    });
                }
            } else {
                for t in usable {
                    columns.push(Column::GmmLevel {
                        var: g.variable.clone(),
                        lag,
                        year: Some(t),
                    });
                }
            }
        }
    }
    for v in &iv.iv {
        columns.push(Column::IvDiff(v.clone()));
    }
    if system {
        for v in &iv.iv {
            columns.push(Column::IvLevel(v.clone()));
        }
        columns.push(Column::Const);
    }

    let value = |key: CohortKey, year: i32, var: &str| -> Result<f64, PanelError> {
        Ok(panel.value(key, year, var)?.unwrap_or(0.0))
    };
    let diff_value = |key: CohortKey, year: i32, var: &str| -> Result<f64, PanelError> {
        match (panel.value(key, year, var)?, panel.value(key, year - 1, var)?) {
            (Some(a), Some(b)) => Ok(a - b),
            _ => Ok(0.0),
        }
    };

    let l = columns.len();
    let mut blocks = Vec::with_capacity(raw.len());
    for (key, rows) in raw {
        let r = rows.len();
        let mut z = Matrix::zeros(r, l);
        for (i, row) in rows.iter().enumerate() {
            for (j, col) in columns.iter().enumerate() {
                z[(i, j)] = match (col, row.diff) {
                    (Column::GmmDiff { var, lag, year }, true) => {
                        if year.is_some_and(|y| y != row.year) {
                            0.0
                        } else {
                            value(key, row.year - *lag as i32, var)?
                        }
                    }
                    (Column::GmmLevel { var, lag, year }, false) => {
                        if year.is_some_and(|y| y != row.year) {
                            0.0
                        } else {
                            diff_value(key, row.year - *lag as i32, var)?
                        }
                    }
                    (Column::IvDiff(v), true) => diff_value(key, row.year, v)?,
                    (Column::IvLevel(v), false) => value(key, row.year, v)?,
                    (Column::Const, false) => 1.0,
                    _ => 0.0,
                };
            }
        }
        let n_diff = rows.iter().filter(|r| r.diff).count();
        let x = Matrix::from_rows(&rows.iter().map(|r| r.x.clone()).collect::<Vec<_>>())
            .map_err(EstimationError::Numerics)?;
        blocks.push(CohortBlock {
            key,
            years: rows.iter().map(|r| r.year).collect(),
            n_diff,
            y: rows.iter().map(|r| r.y).collect(),
            x,
            z,
        });
    }

    let labels: Vec<String> = columns.iter().map(Column::label).collect();
    for (j, label) in labels.iter().enumerate() {
        let empty = blocks.iter().all(|b| (0..b.len()).all(|i| b.z[(i, j)] == 0.0));
        if empty {
            return Err(EstimationError::EmptyInstrumentColumn(label.clone()));
        }
    }
    if l < p {
        return Err(EstimationError::UnderIdentified {
            instruments: l,
            params: p,
        });
    }
    Ok(GmmData {
        equations: iv.equations,
        param_names,
        instrument_labels: labels,
        blocks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverIdTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SerialTest {
    pub order: usize,
    pub z: f64,
    pub p_value: f64,
}

/// GMM estimate with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmResult {
    pub estimation: EstimationResult,
    pub step: Step,
    pub equations: Equations,
    pub n_instruments: usize,
    pub instrument_labels: Vec<String>,
    pub n_diff_rows: usize,
    pub n_level_rows: usize,
    pub hansen: OverIdTest,
    pub ar1: Option<SerialTest>,
    pub ar2: Option<SerialTest>,
    /// Weighting matrix of the reported step.
    pub weighting_matrix: SymmetricMatrix,
    /// Two-step standard errors carry the finite-sample correction.
    pub corrected: bool,
}

impl GmmResult {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.estimation.coef(name)
    }
}

/// Difference GMM: first-differenced equations only.
pub fn estimate_diff_gmm(
    panel: &PseudoPanel,
    model: &ModelSpec,
    iv: &InstrumentSpec,
    step: Step,
) -> Result<GmmResult, EstimationError> {
    let iv = InstrumentSpec {
        equations: Equations::Difference,
        ..iv.clone()
    };
    build_instruments(panel, model, &iv)?.estimate(step)
}

/// System GMM: difference and level equations stacked, intercept in the level equation.
pub fn estimate_sys_gmm(
    panel: &PseudoPanel,
    model: &ModelSpec,
    iv: &InstrumentSpec,
    step: Step,
) -> Result<GmmResult, EstimationError> {
    let iv = InstrumentSpec {
        equations: Equations::System,
        ..iv.clone()
    };
    build_instruments(panel, model, &iv)?.estimate(step)
}

/// Linear GMM `β = (A'WA)⁻¹A'Wb` with `A = Z'X`, `b = Z'y` for a given weighting matrix.
pub fn gmm_with_weight(x: &Matrix, y: &[f64], z: &Matrix, w: &SymmetricMatrix) -> Result<Vec<f64>, EstimationError> {
    if z.cols() < x.cols() {
        return Err(EstimationError::UnderIdentified {
            instruments: z.cols(),
            params: x.cols(),
        });
    }
    let a = z.tr_matmul(x);
    let b = z.tr_matvec(y);
    Ok(Moments { a, b }.solve(w)?.0)
}

struct Moments {
    a: Matrix,
    b: Vec<f64>,
}

impl Moments {
    /// Returns β and `(A'WA)⁻¹`.
    fn solve(&self, w: &SymmetricMatrix) -> Result<(Vec<f64>, SymmetricMatrix), EstimationError> {
        let wa = w.as_mat().matmul(&self.a);
        let m = self.a.tr_matmul(&wa);
        let (d, scaled) = equilibrate(&m);
        let inner = invert_spd(&SymmetricMatrix::from_mat(&scaled).map_err(EstimationError::Numerics)?).map_err(
            |e| match e {
                NumericsError::RankDeficient(j) => {
                    EstimationError::RankDeficient(format!("parameter #{j} not identified"))
                }
                other => EstimationError::Numerics(other),
            },
        )?;
        let m_inv = unscale(&d, inner.as_mat())?;
        let rhs = wa.tr_matvec(&self.b);
        Ok((m_inv.as_mat().matvec(&rhs), m_inv))
    }
}

impl GmmData {
    pub fn n_instruments(&self) -> usize {
        self.instrument_labels.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    /// Multiplies instrument column `j` by `factor` in every block.
    pub fn scale_instrument(&mut self, j: usize, factor: f64) {
        for b in &mut self.blocks {
            for i in 0..b.len() {
                b.z[(i, j)] *= factor;
            }
        }
    }

    fn moments(&self) -> Moments {
        let (l, p) = (self.n_instruments(), self.n_params());
        let mut a = Matrix::zeros(l, p);
        let mut b = vec![0.0; l];
        for blk in &self.blocks {
            a.add_assign(&blk.z.tr_matmul(&blk.x));
            for (acc, v) in b.iter_mut().zip(blk.z.tr_matvec(&blk.y)) {
                *acc += v;
            }
        }
        Moments { a, b }
    }

    /// `Σ Z_i' u_i u_i' Z_i`
    fn residual_outer(&self, resid: &[Vec<f64>]) -> Matrix {
        let l = self.n_instruments();
        let mut s = Matrix::zeros(l, l);
        for (blk, u) in self.blocks.iter().zip(resid) {
            let zu = blk.z.tr_matvec(u);
            for i in 0..l {
                if zu[i] == 0.0 {
                    continue;
                }
                for j in 0..l {
                    s[(i, j)] += zu[i] * zu[j];
                }
            }
        }
        s
    }

    fn residuals(&self, beta: &[f64]) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| b.residuals(beta)).collect()
    }

    fn moment_vector(&self, resid: &[Vec<f64>]) -> Vec<f64> {
        let mut g = vec![0.0; self.n_instruments()];
        for (blk, u) in self.blocks.iter().zip(resid) {
            for (acc, v) in g.iter_mut().zip(blk.z.tr_matvec(u)) {
                *acc += v;
            }
        }
        g
    }

    pub fn estimate(&self, step: Step) -> Result<GmmResult, EstimationError> {
        let (l, p) = (self.n_instruments(), self.n_params());
        if l < p {
            return Err(EstimationError::UnderIdentified {
                instruments: l,
                params: p,
            });
        }
        let n_rows: usize = self.blocks.iter().map(|b| b.len()).sum();
        if n_rows < p {
            return Err(EstimationError::InsufficientObservations {
                rows: n_rows,
                params: p,
            });
        }
        let mut notes = Vec::new();
        let mom = self.moments();

        let mut s1 = Matrix::zeros(l, l);
        for blk in &self.blocks {
            let hz = blk.h_matrix().matmul(&blk.z);
            s1.add_assign(&blk.z.tr_matmul(&hz));
        }
        let w1 = invert_weight(&s1, "one-step", &mut notes)?;
        let (beta1, m1_inv) = mom.solve(&w1)?;
        let u1 = self.residuals(&beta1);
        let s_u1 = self.residual_outer(&u1);
        let v1 = sandwich(&mom.a, &w1, &m1_inv, &s_u1)?;

        let w2 = invert_weight(&s_u1, "two-step", &mut notes)?;
        let (beta2, m2_inv) = mom.solve(&w2)?;
        let u2 = self.residuals(&beta2);
        let g2 = self.moment_vector(&u2);

        let df = l - p;
        let hansen = if df == 0 {
            notes.push("just identified: Hansen statistic is zero".into());
            OverIdTest {
                statistic: 0.0,
                df,
                p_value: 1.0,
            }
        } else {
            let j = w2.as_mat().quad_form(&g2).max(0.0);
            OverIdTest {
                statistic: j,
                df,
                p_value: chi_square_sf(j, df).map_err(EstimationError::Numerics)?,
            }
        };

        let (beta, cov, resid, w, corrected) = match step {
            Step::OneStep => (beta1, v1, u1, w1, false),
            Step::TwoStep => {
                let d = self.windmeijer_d(&mom.a, &w2, &m2_inv, &u1, &g2);
                let v2 = m2_inv.as_mat();
                let dv2 = d.matmul(v2);
                let vc = v2
                    .add(&dv2)
                    .add(&dv2.transpose())
                    .add(&d.matmul(v1.as_mat()).matmul(&d.transpose()));
                let vc = SymmetricMatrix::from_mat(&vc).map_err(EstimationError::Numerics)?;
                (beta2, vc, u2, w2, true)
            }
        };

        let ar = |m: usize, notes: &mut Vec<String>| -> Option<SerialTest> {
            match self.ar_statistic(m, &resid, &mom.a, &w, &cov) {
                Ok(t) => Some(t),
                Err(e) => {
                    notes.push(format!("AR({m}) not reported: {e}"));
                    None
                }
            }
        };
        let ar1 = ar(1, &mut notes);
        let ar2 = ar(2, &mut notes);

        let n_diff: usize = self.blocks.iter().map(|b| b.n_diff).sum();
        let n_level = n_rows - n_diff;
        let n_obs = match self.equations {
            Equations::Difference => n_diff,
            Equations::System => n_level,
        };
        // Fit on the equation that defines the reported rows.
        let (mut obs, mut fit, mut flat) = (Vec::new(), Vec::new(), Vec::new());
        for (blk, u) in self.blocks.iter().zip(&resid) {
            let range = match self.equations {
                Equations::Difference => 0..blk.n_diff,
                Equations::System => blk.n_diff..blk.len(),
            };
            for i in range {
                obs.push(blk.y[i]);
                fit.push(blk.y[i] - u[i]);
            }
            flat.extend(u.iter().copied());
        }
        let ssr: f64 = obs.iter().zip(&fit).map(|(a, b)| (a - b).powi(2)).sum();
        let df_resid = n_obs.saturating_sub(p);
        let (std_errors, t_stats, p_values) = inference(&beta, &cov, None);
        let rows = self
            .blocks
            .iter()
            .flat_map(|b| {
                let range = match self.equations {
                    Equations::Difference => 0..b.n_diff,
                    Equations::System => b.n_diff..b.len(),
                };
                range.map(move |i| (b.key, b.years[i]))
            })
            .collect();
        for n in &notes {
            warn!("{n}");
        }
        let estimation = EstimationResult {
            method: match self.equations {
                Equations::Difference => Method::DiffGmm,
                Equations::System => Method::SysGmm,
            },
            names: self.param_names.clone(),
            coefficients: beta,
            std_errors,
            t_stats,
            p_values,
            covariance: cov,
            r_squared: squared_corr(&obs, &fit),
            r_squared_within: None,
            residuals: flat,
            n_obs,
            n_cohorts: self.blocks.len(),
            df_resid,
            sigma2: if df_resid > 0 { ssr / df_resid as f64 } else { f64::NAN },
            cohort_dummies: false,
            robust: true,
            notes,
            rows,
        };
        Ok(GmmResult {
            estimation,
            step,
            equations: self.equations,
            n_instruments: l,
            instrument_labels: self.instrument_labels.clone(),
            n_diff_rows: n_diff,
            n_level_rows: n_level,
            hansen,
            ar1,
            ar2,
            weighting_matrix: w,
            corrected,
        })
    }

    /// Finite-sample correction matrix; column k is the derivative of the two-step
    /// estimate with respect to the k-th one-step coefficient.
    fn windmeijer_d(
        &self,
        a: &Matrix,
        w2: &SymmetricMatrix,
        m2_inv: &SymmetricMatrix,
        u1: &[Vec<f64>],
        g2: &[f64],
    ) -> Matrix {
        let (l, p) = (self.n_instruments(), self.n_params());
        let w2g = w2.as_mat().matvec(g2);
        let left = m2_inv.as_mat().matmul(&a.transpose()).matmul(w2.as_mat());
        let mut d = Matrix::zeros(p, p);
        for k in 0..p {
            let mut ds = Matrix::zeros(l, l);
            for (blk, u) in self.blocks.iter().zip(u1) {
                let zx = blk.z.tr_matvec(&blk.x.col(k));
                let zu = blk.z.tr_matvec(u);
                for i in 0..l {
                    for j in 0..l {
                        ds[(i, j)] += zx[i] * zu[j] + zu[i] * zx[j];
                    }
                }
            }
            let col = left.matvec(&ds.matvec(&w2g));
            for i in 0..p {
                d[(i, k)] = col[i];
            }
        }
        d
    }

    /// Arellano–Bond test for order-`m` serial correlation in the differenced residuals.
    fn ar_statistic(
        &self,
        m: usize,
        resid: &[Vec<f64>],
        a: &Matrix,
        w: &SymmetricMatrix,
        v: &SymmetricMatrix,
    ) -> Result<SerialTest, EstimationError> {
        let (l, p) = (self.n_instruments(), self.n_params());
        let mut d0 = 0.0;
        let mut sum_sq = 0.0;
        let mut xw = vec![0.0; p];
        let mut zuuw = vec![0.0; l];
        let mut pairs = 0usize;
        for (blk, u) in self.blocks.iter().zip(resid) {
            let mut lagged = vec![0.0; blk.len()];
            for i in 0..blk.n_diff {
                let target = blk.years[i] - m as i32;
                if let Some(j) = (0..blk.n_diff).find(|&j| blk.years[j] == target) {
                    lagged[i] = u[j];
                    pairs += 1;
                }
            }
            let wu: f64 = lagged.iter().zip(u).map(|(a, b)| a * b).sum();
            d0 += wu;
            sum_sq += wu * wu;
            for (acc, v) in xw.iter_mut().zip(blk.x.tr_matvec(&lagged)) {
                *acc += v;
            }
            let zu = blk.z.tr_matvec(u);
            for (acc, v) in zuuw.iter_mut().zip(zu) {
                *acc += v * wu;
            }
        }
        if pairs == 0 {
            return Err(EstimationError::InsufficientPeriods(format!(
                "no differenced residual pairs {m} period(s) apart"
            )));
        }
        let m_inv = {
            let wa = w.as_mat().matmul(a);
            let m = SymmetricMatrix::from_mat(&a.tr_matmul(&wa)).map_err(EstimationError::Numerics)?;
            invert_spd(&m).map_err(EstimationError::Numerics)?
        };
        let proj = m_inv.as_mat().matmul(&a.transpose()).matmul(w.as_mat()).matvec(&zuuw);
        let cross: f64 = xw.iter().zip(&proj).map(|(a, b)| a * b).sum();
        let var = sum_sq - 2.0 * cross + v.as_mat().quad_form(&xw);
        if !(var > 0.0) {
            return Err(EstimationError::InsufficientPeriods(format!(
                "non-positive variance {var:.3e}"
            )));
        }
        let z = d0 / var.sqrt();
        Ok(SerialTest {
            order: m,
            z,
            p_value: (2.0 * normal_sf(z.abs())).min(1.0),
        })
    }
}

/// Inverts a moment covariance, falling back to the generalized inverse.
fn invert_weight(s: &Matrix, stage: &str, notes: &mut Vec<String>) -> Result<SymmetricMatrix, EstimationError> {
    // Equilibrate first so that instruments on large scales (counts of
    // hospitals next to shares) do not make a well-posed matrix look singular.
    let (d, scaled) = equilibrate(s);
    let scaled = SymmetricMatrix::from_mat(&scaled).map_err(EstimationError::Numerics)?;
    let inner = match invert_spd(&scaled) {
        Ok(w) if w.as_mat().is_finite() => w,
        _ => {
            let cond = symmetric_eigen(&scaled).condition_number();
            notes.push(format!(
                "{stage} weighting matrix is singular (condition number {cond:.3e} after scaling); using generalized inverse"
            ));
            generalized_inverse(&scaled)
        }
    };
    unscale(&d, inner.as_mat())
}

/// `D S D` with `D = diag(S)^(-1/2)`; non-positive diagonal entries are left unscaled.
fn equilibrate(s: &Matrix) -> (Vec<f64>, Matrix) {
    let l = s.rows();
    let d: Vec<f64> = (0..l)
        .map(|i| {
            let v = s[(i, i)];
            if v > 0.0 && v.is_finite() {
                v.sqrt().recip()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = Matrix::from_fn(l, l, |i, j| d[i] * s[(i, j)] * d[j]);
    (d, scaled)
}

/// Maps an inverse of `D S D` back to an inverse of `S`.
fn unscale(d: &[f64], inner: &Matrix) -> Result<SymmetricMatrix, EstimationError> {
    let l = d.len();
    let w = Matrix::from_fn(l, l, |i, j| d[i] * inner[(i, j)] * d[j]);
    SymmetricMatrix::from_mat(&w).map_err(EstimationError::Numerics)
}

/// `M⁻¹ A'W S W A M⁻¹`
fn sandwich(
    a: &Matrix,
    w: &SymmetricMatrix,
    m_inv: &SymmetricMatrix,
    s: &Matrix,
) -> Result<SymmetricMatrix, EstimationError> {
    let bread = m_inv.as_mat().matmul(&a.transpose()).matmul(w.as_mat());
    let v = bread.matmul(s).matmul(&bread.transpose());
    SymmetricMatrix::from_mat(&v).map_err(EstimationError::Numerics)
}

/// Panel variables a GMM specification reads, including lag bases.
pub fn required_variables(model: &ModelSpec, iv: &InstrumentSpec) -> Vec<String> {
    let mut out: Vec<String> = std::iter::once(&model.dependent)
        .chain(&model.regressors)
        .chain(&iv.iv)
        .map(|n| parse_lag(n).1.to_string())
        .chain(iv.gmm.iter().map(|g| g.variable.clone()))
        .collect();
    out.sort();
    out.dedup();
    out
}
