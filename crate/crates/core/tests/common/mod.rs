//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use pseudopanel::ingest::{EducationLevel, Gender, MicroRecord, Region};
use pseudopanel::panel::{CohortKey, CohortScheme, PanelCell, PseudoPanel};
use pseudopanel::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn std_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller, kept here so fixtures do not depend on the crate's samplers.
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Solves the normal equations `X'X b = X'y` by Gauss-Jordan elimination with
/// partial pivoting.
pub fn normal_equations(x: &Matrix, y: &[f64]) -> Vec<f64> {
    let (n, k) = (x.rows(), x.cols());
    let mut a = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = (0..n).map(|r| x[(r, i)] * x[(r, j)]).sum();
        }
        a[i][k] = (0..n).map(|r| x[(r, i)] * y[r]).sum();
    }
    solve_augmented(a)
}

pub fn solve_augmented(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let k = a.len();
    for c in 0..k {
        let p = (c..k)
            .max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap())
            .unwrap();
        a.swap(c, p);
        let piv = a[c][c];
        for v in a[c].iter_mut() {
            *v /= piv;
        }
        for r in 0..k {
            if r != c {
                let f = a[r][c];
                let row_c = a[c].clone();
                for (v, w) in a[r].iter_mut().zip(row_c) {
                    *v -= f * w;
                }
            }
        }
    }
    a.into_iter().map(|row| row[k]).collect()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn all_keys() -> Vec<CohortKey> {
    CohortScheme::default().all_keys()
}

/// Balanced panel with variables `y, x1..xk` over `n_cohorts` keys and `periods`
/// years from 2014. Regressors get a cohort component so FE and pooled OLS differ.
pub fn random_panel<R: Rng>(rng: &mut R, n_cohorts: usize, periods: usize, k: usize) -> PseudoPanel {
    let keys = all_keys();
    let beta: Vec<f64> = (0..k).map(|_| std_normal(rng)).collect();
    let mut cells = Vec::new();
    for key in keys.into_iter().take(n_cohorts) {
        let effect = std_normal(rng);
        let xbar: Vec<f64> = (0..k).map(|_| std_normal(rng) + 0.5 * effect).collect();
        for t in 0..periods {
            let x: Vec<f64> = xbar.iter().map(|m| m + std_normal(rng)).collect();
            let y = 1.0 + effect + x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + 0.3 * std_normal(rng);
            let mut values = vec![Some(y)];
            values.extend(x.into_iter().map(Some));
            cells.push(PanelCell {
                key,
                year: 2014 + t as i32,
                n: 100 + t,
                values,
            });
        }
    }
    let mut vars = vec!["y".to_string()];
    vars.extend((1..=k).map(|j| format!("x{j}")));
    PseudoPanel::from_cells(vars, cells).unwrap()
}

pub fn regressor_names(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("x{j}")).collect()
}

pub fn micro(year: i32, birth: i32, gender: Gender, region: Region, edu: EducationLevel, health: bool) -> MicroRecord {
    MicroRecord {
        survey_year: year,
        birth_year: birth,
        gender,
        province: "Hebei".into(),
        region,
        education: edu,
        has_health_record: health,
        living: 3.0,
        flowt: 5.0,
        income: 5000.0,
        real_income: 5000.0,
        city: None,
        source_line: 0,
    }
}

/// Balanced panel over the first `n_cohorts` keys; `f(cohort, t)` yields the
/// values of `vars` for that cell.
pub fn build_panel(
    n_cohorts: usize,
    periods: usize,
    vars: &[&str],
    mut f: impl FnMut(usize, usize) -> Vec<f64>,
) -> PseudoPanel {
    let mut cells = Vec::new();
    for (c, key) in all_keys().into_iter().take(n_cohorts).enumerate() {
        for t in 0..periods {
            let values = f(c, t).into_iter().map(Some).collect();
            cells.push(PanelCell {
                key,
                year: 2014 + t as i32,
                n: 150,
                values,
            });
        }
    }
    PseudoPanel::from_cells(vars.iter().map(|s| s.to_string()).collect(), cells).unwrap()
}

/// Cohort-level dynamic process
/// `y_t = a + ρ y_{t−1} + β x_t + λ_c + u_t`, `u_t = φ u_{t−1} + ε_t`,
/// burned in so the retained periods start near stationarity.
#[derive(Debug, Clone, Copy)]
pub struct Dynamic {
    pub alpha: f64,
    pub rho: f64,
    pub beta: f64,
    pub sigma_lambda: f64,
    pub sigma_eps: f64,
    pub phi: f64,
    pub n_cohorts: usize,
    pub periods: usize,
}

impl Default for Dynamic {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            rho: 0.3,
            beta: 0.08,
            sigma_lambda: 0.05,
            sigma_eps: 0.02,
            phi: 0.0,
            n_cohorts: 54,
            periods: 5,
        }
    }
}

impl Dynamic {
    /// Variables: `health`, `edu`, and `z`, an instrument correlated with `u_t`.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> PseudoPanel {
        const BURN: usize = 50;
        let mut rows: Vec<Vec<(f64, f64, f64)>> = Vec::new();
        for _ in 0..self.n_cohorts {
            let lambda = self.sigma_lambda * std_normal(rng);
            let xbar = 10.0 + std_normal(rng);
            let mut y = (self.alpha + self.beta * xbar + lambda) / (1.0 - self.rho);
            let mut u = 0.0;
            let mut kept = Vec::new();
            for t in 0..BURN + self.periods {
                let x = xbar + 0.3 * std_normal(rng);
                u = self.phi * u + self.sigma_eps * std_normal(rng);
                y = self.alpha + self.rho * y + self.beta * x + lambda + u;
                if t >= BURN {
                    kept.push((y, x, u + self.sigma_eps * std_normal(rng)));
                }
            }
            rows.push(kept);
        }
        build_panel(self.n_cohorts, self.periods, &["health", "edu", "z"], |c, t| {
            let (y, x, z) = rows[c][t];
            vec![y, x, z]
        })
        .add_lag("health", 1)
        .unwrap()
    }
}
