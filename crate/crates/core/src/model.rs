//! Model specifications, model-ready data extraction and estimation results.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::{two_sided_p, NumericsError};
use crate::panel::{CohortKey, PanelError, PseudoPanel};
use crate::SymmetricMatrix;

#[derive(Debug, thiserror::Error)]
pub enum EstimationError {
    #[error("only {rows} usable rows for {params} parameters")]
    InsufficientObservations { rows: usize, params: usize },
    #[error("regressor matrix is rank deficient at column {0:?}")]
    RankDeficient(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("every cohort has fewer than two usable rows")]
    SingletonCohorts(Vec<CohortKey>),
    #[error("estimates are not comparable: {0}")]
    MismatchedSpecs(String),
    #[error("model is under-identified: {instruments} instruments for {params} parameters")]
    UnderIdentified { instruments: usize, params: usize },
    #[error("need at least {needed} periods, panel has {available}")]
    TooFewPeriods { needed: usize, available: usize },
    #[error("instrument column {0:?} is identically zero")]
    EmptyInstrumentColumn(String),
    #[error("serial correlation test needs more periods: {0}")]
    InsufficientPeriods(String),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Numerics(NumericsError),
}

impl EstimationError {
    /// Maps a numerical failure onto the named column of the design.
    pub(crate) fn from_numerics(e: NumericsError, names: &[String]) -> Self {
        match e {
            NumericsError::RankDeficient(j) => {
                EstimationError::RankDeficient(names.get(j).cloned().unwrap_or_else(|| format!("#{j}")))
            }
            NumericsError::Underdetermined { rows, cols } => {
                EstimationError::InsufficientObservations { rows, params: cols }
            }
            other => EstimationError::Numerics(other),
        }
    }
}

/// Dependent variable, regressors and estimation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dependent: String,
    /// Regressor names; `L.x` refers to the first lag of panel variable `x`.
    pub regressors: Vec<String>,
    #[serde(default)]
    pub include_cohort_dummies: bool,
    /// Weight cells by their member count.
    #[serde(default)]
    pub weights: bool,
    /// Heteroskedasticity-robust (HC1) standard errors.
    #[serde(default)]
    pub robust: bool,
}

impl ModelSpec {
    pub fn new(dependent: &str, regressors: &[&str]) -> Self {
        Self {
            dependent: dependent.to_string(),
            regressors: regressors.iter().map(|s| s.to_string()).collect(),
            include_cohort_dummies: false,
            weights: false,
            robust: false,
        }
    }

    pub fn with_cohort_dummies(mut self, on: bool) -> Self {
        self.include_cohort_dummies = on;
        self
    }

    pub fn validate(&self, panel: &PseudoPanel) -> Result<(), EstimationError> {
        if self.regressors.iter().any(|r| *r == self.dependent) {
            return Err(EstimationError::InvalidSpec(format!(
                "dependent {:?} listed among regressors",
                self.dependent
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in std::iter::once(&self.dependent).chain(&self.regressors) {
            if !panel.has_variable(name) {
                return Err(PanelError::UnknownVariable(name.clone()).into());
            }
            if !seen.insert(name) {
                return Err(EstimationError::InvalidSpec(format!("{name:?} listed twice")));
            }
        }
        Ok(())
    }
}

/// Rows of the panel on which every model variable is observed.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub rows: Vec<(CohortKey, i32)>,
    pub y: Vec<f64>,
    /// One inner vector per row, aligned with `names` (no intercept).
    pub x: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub cell_n: Vec<usize>,
}

impl ModelData {
    pub fn extract(panel: &PseudoPanel, spec: &ModelSpec) -> Result<Self, EstimationError> {
        spec.validate(panel)?;
        let mut data = ModelData {
            rows: Vec::new(),
            y: Vec::new(),
            x: Vec::new(),
            names: spec.regressors.clone(),
            cell_n: Vec::new(),
        };
        'cells: for cell in panel.cells() {
            let Some(y) = panel.value(cell.key, cell.year, &spec.dependent)? else {
                continue;
            };
            let mut xs = Vec::with_capacity(spec.regressors.len());
            for r in &spec.regressors {
                match panel.value(cell.key, cell.year, r)? {
                    Some(v) => xs.push(v),
                    None => continue 'cells,
                }
            }
            data.rows.push((cell.key, cell.year));
            data.y.push(y);
            data.x.push(xs);
            data.cell_n.push(cell.n);
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Row indices grouped by cohort, cohorts in key order.
    pub fn groups(&self) -> BTreeMap<CohortKey, Vec<usize>> {
        let mut g: BTreeMap<CohortKey, Vec<usize>> = BTreeMap::new();
        for (i, (k, _)) in self.rows.iter().enumerate() {
            g.entry(*k).or_default().push(i);
        }
        g
    }

    pub fn n_cohorts(&self) -> usize {
        self.groups().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ols,
    OlsCohortDummies,
    FixedEffects,
    RandomEffects,
    DiffGmm,
    SysGmm,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Ols => "OLS",
            Method::OlsCohortDummies => "OLS+FE dummies",
            Method::FixedEffects => "FEM",
            Method::RandomEffects => "REM",
            Method::DiffGmm => "Diff-GMM",
            Method::SysGmm => "Sys-GMM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Name used for the intercept in every result.
pub const INTERCEPT: &str = "const";
/// Prefix of cohort dummy coefficient names.
pub const COHORT_DUMMY_PREFIX: &str = "cohort:";

/// Coefficients, covariance and fit statistics of one estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: Method,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub covariance: SymmetricMatrix,
    /// Overall R²; for FE and RE the squared correlation of fitted and observed values.
    pub r_squared: f64,
    pub r_squared_within: Option<f64>,
    pub residuals: Vec<f64>,
    pub n_obs: usize,
    pub n_cohorts: usize,
    pub df_resid: usize,
    pub sigma2: f64,
    pub cohort_dummies: bool,
    pub robust: bool,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<(CohortKey, i32)>,
}

impl EstimationResult {
    pub fn coef(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.coefficients[i])
    }

    pub fn se(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.std_errors[i])
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.p_values[i])
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// 95% confidence interval using the same reference distribution as the p-values.
    pub fn conf_int(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.index(name)?;
        let crit = if self.df_resid > 0 && !matches!(self.method, Method::DiffGmm | Method::SysGmm) {
            use statrs::distribution::{ContinuousCDF, StudentsT};
            StudentsT::new(0.0, 1.0, self.df_resid as f64)
                .map(|d| d.inverse_cdf(0.975))
                .unwrap_or(1.959_963_984_540_054)
        } else {
            1.959_963_984_540_054
        };
        let (b, s) = (self.coefficients[i], self.std_errors[i]);
        Some((b - crit * s, b + crit * s))
    }
}

/// Fills standard errors, t statistics and p-values from a covariance matrix.
pub(crate) fn inference(
    coefficients: &[f64],
    covariance: &SymmetricMatrix,
    df: Option<usize>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let se: Vec<f64> = (0..coefficients.len())
        .map(|i| covariance[(i, i)].max(0.0).sqrt())
        .collect();
    let t: Vec<f64> = coefficients.iter().zip(&se).map(|(b, s)| b / s).collect();
    let p = t.iter().map(|&t| two_sided_p(t, df)).collect();
    (se, t, p)
}
