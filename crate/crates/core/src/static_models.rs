//! Pooled OLS, LSDV, within fixed effects, random effects GLS and the Hausman test.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::model::{
    inference, EstimationError, EstimationResult, Method, ModelData, ModelSpec, COHORT_DUMMY_PREFIX, INTERCEPT,
};
use crate::numerics::{chi_square_sf, generalized_inverse, solve_least_squares, symmetric_eigen, LeastSquares};
use crate::panel::{CohortKey, PseudoPanel};
use crate::{Matrix, SymmetricMatrix};

/// Pooled least squares with an intercept, optionally with one dummy per cohort
/// (the first cohort in key order is the omitted base).
pub fn estimate_ols(panel: &PseudoPanel, spec: &ModelSpec) -> Result<EstimationResult, EstimationError> {
    let data = ModelData::extract(panel, spec)?;
    ols_on(&data, spec)
}

pub(crate) fn ols_on(data: &ModelData, spec: &ModelSpec) -> Result<EstimationResult, EstimationError> {
    let n = data.len();
    let groups = data.groups();
    let dummy_keys: Vec<CohortKey> = if spec.include_cohort_dummies {
        groups.keys().skip(1).copied().collect()
    } else {
        Vec::new()
    };
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(data.names.iter().cloned());
    names.extend(dummy_keys.iter().map(|k| format!("{COHORT_DUMMY_PREFIX}{k}")));
    let k = names.len();
    if n < k + 1 {
        return Err(EstimationError::InsufficientObservations { rows: n, params: k });
    }
    let dummy_col: BTreeMap<CohortKey, usize> = dummy_keys
        .iter()
        .enumerate()
        .map(|(j, key)| (*key, 1 + data.names.len() + j))
        .collect();
    let mut x = Matrix::zeros(n, k);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for (j, v) in data.x[i].iter().enumerate() {
            x[(i, 1 + j)] = *v;
        }
        if let Some(&c) = dummy_col.get(&data.rows[i].0) {
            x[(i, c)] = 1.0;
        }
    }
    let w = row_weights(data, spec);
    let fit = weighted_fit(&x, &data.y, w.as_deref(), &names)?;

    let df = n - k;
    let sigma2 = fit.ssr / df as f64;
    let covariance = coefficient_covariance(&fit, sigma2, spec.robust, n, df)?;
    let residuals: Vec<f64> = data.y.iter().zip(x.matvec(&fit.beta)).map(|(y, f)| y - f).collect();
    let r_squared = 1.0 - fit.ssr / weighted_tss(&data.y, w.as_deref());
    let (std_errors, t_stats, p_values) = inference(&fit.beta, &covariance, Some(df));
    Ok(EstimationResult {
        method: if spec.include_cohort_dummies {
            Method::OlsCohortDummies
        } else {
            Method::Ols
        },
        names,
        coefficients: fit.beta,
        std_errors,
        t_stats,
        p_values,
        covariance,
        r_squared,
        r_squared_within: None,
        residuals,
        n_obs: n,
        n_cohorts: groups.len(),
        df_resid: df,
        sigma2,
        cohort_dummies: spec.include_cohort_dummies,
        robust: spec.robust,
        notes: Vec::new(),
        rows: data.rows.clone(),
    })
}

/// Within estimator: cohort-demeaned least squares. Cohorts with fewer than two
/// usable rows are dropped with a warning.
pub fn estimate_fe_within(panel: &PseudoPanel, spec: &ModelSpec) -> Result<EstimationResult, EstimationError> {
    let data = ModelData::extract(panel, spec)?;
    let (data, notes) = drop_singletons(data)?;
    fe_on(&data, spec, notes)
}

fn fe_on(data: &ModelData, spec: &ModelSpec, mut notes: Vec<String>) -> Result<EstimationResult, EstimationError> {
    let n = data.len();
    let k = data.names.len();
    let groups = data.groups();
    let g = groups.len();
    if k == 0 {
        return Err(EstimationError::InvalidSpec(
            "within estimator needs at least one regressor".into(),
        ));
    }
    if n < g + k + 1 {
        return Err(EstimationError::InsufficientObservations { rows: n, params: g + k });
    }
    let w = row_weights(data, spec);
    let (y_dm, x_dm) = demean(data, &groups, w.as_deref(), |_| 1.0);
    let fit = weighted_fit(&x_dm, &y_dm, w.as_deref(), &data.names)?;
    let df = n - g - k;
    let sigma2 = fit.ssr / df as f64;
    let slope_cov = coefficient_covariance(&fit, sigma2, spec.robust, n, df)?;

    // Intercept as the (weighted) grand mean of y net of the slopes.
    let (y_bar, x_bar) = grand_means(data, w.as_deref());
    let intercept = y_bar - dot(&x_bar, &fit.beta);
    let total_w: f64 = w.as_ref().map_or(n as f64, |w| w.iter().sum());
    let vx = slope_cov.as_mat().matvec(&x_bar);
    let mut full = Matrix::zeros(k + 1, k + 1);
    full[(0, 0)] = sigma2 / total_w + dot(&x_bar, &vx);
    for i in 0..k {
        full[(0, i + 1)] = -vx[i];
        full[(i + 1, 0)] = -vx[i];
        for j in 0..k {
            full[(i + 1, j + 1)] = slope_cov[(i, j)];
        }
    }
    let covariance = SymmetricMatrix::from_mat(&full).map_err(EstimationError::Numerics)?;
    let mut coefficients = vec![intercept];
    coefficients.extend(&fit.beta);
    let mut names = vec![INTERCEPT.to_string()];
    names.extend(data.names.iter().cloned());

    let fitted: Vec<f64> = data.x.iter().map(|row| intercept + dot(row, &fit.beta)).collect();
    let residuals = x_dm.matvec(&fit.beta).iter().zip(&y_dm).map(|(f, y)| y - f).collect();
    let within_tss = weighted_ss(&y_dm, w.as_deref());
    let r_squared_within = if within_tss > 0.0 {
        (1.0 - fit.ssr / within_tss).clamp(0.0, 1.0)
    } else {
        notes.push("dependent variable has no within-cohort variation".into());
        0.0
    };
    let (std_errors, t_stats, p_values) = inference(&coefficients, &covariance, Some(df));
    Ok(EstimationResult {
        method: Method::FixedEffects,
        names,
        coefficients,
        std_errors,
        t_stats,
        p_values,
        covariance,
        r_squared: squared_corr(&data.y, &fitted),
        r_squared_within: Some(r_squared_within),
        residuals,
        n_obs: n,
        n_cohorts: g,
        df_resid: df,
        sigma2,
        cohort_dummies: true,
        robust: spec.robust,
        notes,
        rows: data.rows.clone(),
    })
}

/// Variance components behind a random-effects fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub sigma2_e: f64,
    pub sigma2_lambda: f64,
    /// Harmonic mean of the per-cohort row counts.
    pub t_harmonic: f64,
}

/// Feasible GLS with Swamy–Arora variance components adapted to unbalanced cohorts.
pub fn estimate_re_gls(panel: &PseudoPanel, spec: &ModelSpec) -> Result<EstimationResult, EstimationError> {
    Ok(re_with_components(panel, spec)?.0)
}

pub fn re_with_components(
    panel: &PseudoPanel,
    spec: &ModelSpec,
) -> Result<(EstimationResult, VarianceComponents), EstimationError> {
    if spec.weights {
        return Err(EstimationError::InvalidSpec(
            "cell-count weights are not supported for random effects".into(),
        ));
    }
    let data = ModelData::extract(panel, spec)?;
    let (data, mut notes) = drop_singletons(data)?;
    let n = data.len();
    let k = data.names.len();
    let groups = data.groups();
    let g = groups.len();
    if g < k + 2 {
        return Err(EstimationError::InsufficientObservations { rows: g, params: k + 1 });
    }
    let unweighted = ModelSpec {
        robust: false,
        ..spec.clone()
    };
    let fe = fe_on(&data, &unweighted, Vec::new())?;
    let sigma2_e = fe.sigma2;

    // Between regression on cohort means.
    let mut xb = Matrix::zeros(g, k + 1);
    let mut yb = vec![0.0; g];
    let mut t_counts = Vec::with_capacity(g);
    for (row, idx) in groups.values().enumerate() {
        let t = idx.len() as f64;
        xb[(row, 0)] = 1.0;
        for &i in idx {
            yb[row] += data.y[i] / t;
            for j in 0..k {
                xb[(row, j + 1)] += data.x[i][j] / t;
            }
        }
        t_counts.push(t);
    }
    let mut between_names = vec![INTERCEPT.to_string()];
    between_names.extend(data.names.iter().cloned());
    let between = solve_least_squares(&xb, &yb).map_err(|e| EstimationError::from_numerics(e, &between_names))?;
    let sigma2_b = between.ssr() / (g - k - 1) as f64;
    let t_harmonic = g as f64 / t_counts.iter().map(|t| 1.0 / t).sum::<f64>();
    let mut sigma2_lambda = sigma2_b - sigma2_e / t_harmonic;
    if sigma2_lambda < 0.0 {
        let msg = format!("negative cohort-effect variance estimate {sigma2_lambda:.3e} clamped to zero");
        warn!("{msg}");
        notes.push(msg);
        sigma2_lambda = 0.0;
    }

    let theta: BTreeMap<CohortKey, f64> = groups
        .iter()
        .zip(&t_counts)
        .map(|((key, _), &t)| {
            let denom = t * sigma2_lambda + sigma2_e;
            let th = if denom > 0.0 {
                1.0 - (sigma2_e / denom).sqrt()
            } else {
                0.0
            };
            (*key, th)
        })
        .collect();
    let (y_qd, x_qd) = demean(&data, &groups, None, |key| theta[&key]);
    let mut xs = Matrix::zeros(n, k + 1);
    for i in 0..n {
        xs[(i, 0)] = 1.0 - theta[&data.rows[i].0];
        for j in 0..k {
            xs[(i, j + 1)] = x_qd[(i, j)];
        }
    }
    let names = between_names;
    let fit = weighted_fit(&xs, &y_qd, None, &names)?;
    let df = n - k - 1;
    let covariance = coefficient_covariance(&fit, sigma2_e, spec.robust, n, df)?;

    let fitted: Vec<f64> = data
        .x
        .iter()
        .map(|row| fit.beta[0] + dot(row, &fit.beta[1..]))
        .collect();
    let residuals: Vec<f64> = data.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let (y_w, x_w) = demean(&data, &groups, None, |_| 1.0);
    let within_fit = x_w.matvec(&fit.beta[1..]);
    let (std_errors, t_stats, p_values) = inference(&fit.beta, &covariance, Some(df));
    let result = EstimationResult {
        method: Method::RandomEffects,
        names,
        coefficients: fit.beta,
        std_errors,
        t_stats,
        p_values,
        covariance,
        r_squared: squared_corr(&data.y, &fitted),
        r_squared_within: Some(squared_corr(&y_w, &within_fit)),
        residuals,
        n_obs: n,
        n_cohorts: g,
        df_resid: df,
        sigma2: sigma2_e,
        cohort_dummies: false,
        robust: spec.robust,
        notes,
        rows: data.rows.clone(),
    };
    Ok((
        result,
        VarianceComponents {
            sigma2_e,
            sigma2_lambda,
            t_harmonic,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HausmanResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Coefficients compared, in order.
    pub compared: Vec<String>,
    pub notes: Vec<String>,
}

/// Hausman contrast of fixed and random effects on their common slope coefficients,
/// using the generalized inverse of the variance difference.
pub fn hausman_test(fe: &EstimationResult, re: &EstimationResult) -> Result<HausmanResult, EstimationError> {
    if fe.rows != re.rows || fe.n_obs != re.n_obs {
        return Err(EstimationError::MismatchedSpecs(format!(
            "estimated on different rows ({} vs {})",
            fe.n_obs, re.n_obs
        )));
    }
    let compared: Vec<(usize, usize, String)> = fe
        .names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.as_str() != INTERCEPT && !n.starts_with(COHORT_DUMMY_PREFIX))
        .filter_map(|(i, n)| re.index(n).map(|j| (i, j, n.clone())))
        .collect();
    if compared.is_empty() {
        return Err(EstimationError::MismatchedSpecs("no common slope coefficients".into()));
    }
    let m = compared.len();
    let d: Vec<f64> = compared
        .iter()
        .map(|&(i, j, _)| fe.coefficients[i] - re.coefficients[j])
        .collect();
    let diff = Matrix::from_fn(m, m, |a, b| {
        let (fi, ri, _) = &compared[a];
        let (fj, rj, _) = &compared[b];
        fe.covariance[(*fi, *fj)] - re.covariance[(*ri, *rj)]
    });
    let diff = SymmetricMatrix::from_mat(&diff).map_err(EstimationError::Numerics)?;
    let eig = symmetric_eigen(&diff);
    let rank = eig.rank();
    let mut notes = Vec::new();
    if eig.values.iter().any(|&v| v < -eig.cutoff()) {
        notes.push("variance difference is not positive semidefinite".into());
    }
    let pinv = generalized_inverse(&diff);
    let mut statistic = pinv.as_mat().quad_form(&d);
    if statistic < 0.0 {
        notes.push(format!("negative statistic {statistic:.4} set to zero"));
        statistic = 0.0;
    }
    let p_value = if rank == 0 {
        notes.push("variance difference has rank zero".into());
        statistic = 0.0;
        1.0
    } else {
        chi_square_sf(statistic, rank).map_err(EstimationError::Numerics)?
    };
    Ok(HausmanResult {
        statistic,
        df: rank,
        p_value,
        compared: compared.into_iter().map(|(_, _, n)| n).collect(),
        notes,
    })
}

fn drop_singletons(data: ModelData) -> Result<(ModelData, Vec<String>), EstimationError> {
    let groups = data.groups();
    let singles: Vec<CohortKey> = groups
        .iter()
        .filter(|(_, idx)| idx.len() < 2)
        .map(|(k, _)| *k)
        .collect();
    if singles.is_empty() {
        return Ok((data, Vec::new()));
    }
    if singles.len() == groups.len() {
        return Err(EstimationError::SingletonCohorts(singles));
    }
    let msg = format!(
        "dropped {} cohort(s) with a single usable row: {}",
        singles.len(),
        singles.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", ")
    );
    warn!("{msg}");
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| !singles.contains(&data.rows[i].0))
        .collect();
    let out = ModelData {
        rows: keep.iter().map(|&i| data.rows[i]).collect(),
        y: keep.iter().map(|&i| data.y[i]).collect(),
        x: keep.iter().map(|&i| data.x[i].clone()).collect(),
        names: data.names,
        cell_n: keep.iter().map(|&i| data.cell_n[i]).collect(),
    };
    Ok((out, vec![msg]))
}

fn row_weights(data: &ModelData, spec: &ModelSpec) -> Option<Vec<f64>> {
    spec.weights.then(|| data.cell_n.iter().map(|&n| n as f64).collect())
}

/// Subtracts `theta(key)` times the (weighted) cohort mean from y and every regressor.
fn demean(
    data: &ModelData,
    groups: &BTreeMap<CohortKey, Vec<usize>>,
    w: Option<&[f64]>,
    theta: impl Fn(CohortKey) -> f64,
) -> (Vec<f64>, Matrix) {
    let k = data.names.len();
    let mut y = data.y.clone();
    let mut x = Matrix::from_rows(&data.x).unwrap_or_else(|_| Matrix::zeros(data.len(), k));
    if data.is_empty() {
        return (y, x);
    }
    for (key, idx) in groups {
        let th = theta(*key);
        let total: f64 = idx.iter().map(|&i| w.map_or(1.0, |w| w[i])).sum();
        let wi = |i: usize| w.map_or(1.0, |w| w[i]) / total;
        let y_mean: f64 = idx.iter().map(|&i| wi(i) * data.y[i]).sum();
        let x_mean: Vec<f64> = (0..k)
            .map(|j| idx.iter().map(|&i| wi(i) * data.x[i][j]).sum())
            .collect();
        for &i in idx {
            y[i] -= th * y_mean;
            for j in 0..k {
                x[(i, j)] -= th * x_mean[j];
            }
        }
    }
    (y, x)
}

fn grand_means(data: &ModelData, w: Option<&[f64]>) -> (f64, Vec<f64>) {
    let k = data.names.len();
    let total: f64 = (0..data.len()).map(|i| w.map_or(1.0, |w| w[i])).sum();
    let mut y = 0.0;
    let mut x = vec![0.0; k];
    for i in 0..data.len() {
        let wi = w.map_or(1.0, |w| w[i]) / total;
        y += wi * data.y[i];
        for j in 0..k {
            x[j] += wi * data.x[i][j];
        }
    }
    (y, x)
}

struct Fit {
    beta: Vec<f64>,
    ssr: f64,
    /// `(X'WX)⁻¹`
    xtx_inv: SymmetricMatrix,
    /// Rows of the (weighted) design and their (weighted) residuals, for robust covariances.
    design: Matrix,
    resid: Vec<f64>,
}

/// Least squares on rows scaled by `sqrt(w)`.
fn weighted_fit(x: &Matrix, y: &[f64], w: Option<&[f64]>, names: &[String]) -> Result<Fit, EstimationError> {
    let (xs, ys) = match w {
        None => (x.clone(), y.to_vec()),
        Some(w) => {
            let s: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
            (
                Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] * s[i]),
                y.iter().zip(&s).map(|(a, b)| a * b).collect(),
            )
        }
    };
    let ls: LeastSquares<f64> = solve_least_squares(&xs, &ys).map_err(|e| EstimationError::from_numerics(e, names))?;
    Ok(Fit {
        ssr: ls.ssr(),
        xtx_inv: ls.xtx_inverse(),
        beta: ls.beta.clone(),
        design: xs,
        resid: ls.residuals,
    })
}

fn coefficient_covariance(
    fit: &Fit,
    sigma2: f64,
    robust: bool,
    n: usize,
    df: usize,
) -> Result<SymmetricMatrix, EstimationError> {
    let bread = fit.xtx_inv.as_mat();
    let cov = if robust {
        let scaled = Matrix::from_fn(fit.design.rows(), fit.design.cols(), |i, j| {
            fit.design[(i, j)] * fit.resid[i]
        });
        let meat = scaled.tr_matmul(&scaled);
        bread.matmul(&meat).matmul(bread).scale(n as f64 / df as f64)
    } else {
        bread.scale(sigma2)
    };
    SymmetricMatrix::from_mat(&cov).map_err(EstimationError::Numerics)
}

fn weighted_tss(y: &[f64], w: Option<&[f64]>) -> f64 {
    let total: f64 = w.map_or(y.len() as f64, |w| w.iter().sum());
    let mean: f64 = y
        .iter()
        .enumerate()
        .map(|(i, v)| w.map_or(1.0, |w| w[i]) * v)
        .sum::<f64>()
        / total;
    y.iter()
        .enumerate()
        .map(|(i, v)| w.map_or(1.0, |w| w[i]) * (v - mean).powi(2))
        .sum()
}

fn weighted_ss(y: &[f64], w: Option<&[f64]>) -> f64 {
    y.iter().enumerate().map(|(i, v)| w.map_or(1.0, |w| w[i]) * v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn squared_corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab * sab / (saa * sbb)).clamp(0.0, 1.0)
}
