//! Acceptance checks. Each criterion prints one PASS/FAIL line; the process
//! exits nonzero when any criterion fails.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use pseudopanel::dgp::{generate_cohort_ar, generate_with_rng, CohortArParams, ControlEffects, DgpParams};
use pseudopanel::gmm::{
    build_instruments, estimate_diff_gmm, estimate_sys_gmm, Equations, GmmStyle, InstrumentSpec, Step,
};
use pseudopanel::ingest::{education_years, trim_by_income, EducationLevel, Gender, MicroRecord, Region, RegionMap};
use pseudopanel::model::ModelSpec;
use pseudopanel::montecarlo::{rate, run_replications, McSummary};
use pseudopanel::panel::{CohortScheme, PanelCell, PseudoPanel};
use pseudopanel::pipeline::{run, Axis, RunConfig};
use pseudopanel::static_models::{estimate_fe_within, estimate_ols};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const CONTROLS: [&str; 6] = ["living", "flowt", "income", "hos", "bed", "doc"];

fn static_spec() -> ModelSpec {
    let mut regs = vec!["edu"];
    regs.extend(CONTROLS);
    ModelSpec::new("health", &regs)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    let (u1, u2): (f64, f64) = (rng.random::<f64>().max(1e-300), rng.random());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Panel with cohort effects correlated with the regressors.
fn random_panel<R: Rng>(rng: &mut R, k: usize) -> PseudoPanel {
    let n_cohorts = rng.random_range(5..=54);
    let periods = rng.random_range(2..=6);
    let mut cells = Vec::new();
    for key in CohortScheme::default().all_keys().into_iter().take(n_cohorts) {
        let effect = normal(rng);
        for t in 0..periods {
            let x: Vec<f64> = (0..k).map(|_| normal(rng) + 0.5 * effect).collect();
            let y = 1.0 + effect + x.iter().enumerate().map(|(j, v)| (j as f64 - 1.0) * v).sum::<f64>() + normal(rng);
            let mut values = vec![Some(y)];
            values.extend(x.into_iter().map(Some));
            cells.push(PanelCell {
                key,
                year: 2014 + t,
                n: 100,
                values,
            });
        }
    }
    let mut vars = vec!["y".to_string()];
    vars.extend((1..=k).map(|j| format!("x{j}")));
    PseudoPanel::from_cells(vars, cells).unwrap()
}

/// Solves (X'X)b = X'y by Gauss-Jordan elimination with partial pivoting.
fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = rows[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += r[i] * r[j];
            }
            a[i][k] += r[i] * yi;
        }
    }
    for c in 0..k {
        let p = (c..k).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        let d = a[c][c];
        for v in &mut a[c] {
            *v /= d;
        }
        for r in 0..k {
            if r != c {
                let f = a[r][c];
                for j in 0..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    a.iter().map(|row| row[k]).collect()
}

fn criterion_1() -> Outcome {
    let mut rng = pseudopanel::montecarlo::replication_rng(101, 0);
    let (mut fe_gap, mut ols_gap) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let panel = random_panel(&mut rng, k);
        let names: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let spec = ModelSpec::new("y", &refs);
        let fe = estimate_fe_within(&panel, &spec).unwrap();
        let lsdv = estimate_ols(&panel, &spec.clone().with_cohort_dummies(true)).unwrap();
        let ols = estimate_ols(&panel, &spec).unwrap();

        let mut rows = Vec::new();
        let mut y = Vec::new();
        for c in panel.cells() {
            let mut row = vec![1.0];
            row.extend(c.values[1..].iter().map(|v| v.unwrap()));
            rows.push(row);
            y.push(c.values[0].unwrap());
        }
        let oracle = normal_equations(&rows, &y);
        for (j, name) in names.iter().enumerate() {
            fe_gap = fe_gap.max((fe.coef(name).unwrap() - lsdv.coef(name).unwrap()).abs());
            ols_gap = ols_gap.max((ols.coef(name).unwrap() - oracle[j + 1]).abs());
        }
        ols_gap = ols_gap.max((ols.coef("const").unwrap() - oracle[0]).abs());
    }
    outcome(
        fe_gap < 1e-8 && ols_gap < 1e-8,
        format!("max |FE - LSDV| = {fe_gap:.2e}, max |OLS - normal equations| = {ols_gap:.2e} over 100 panels"),
    )
}

fn criterion_2() -> Outcome {
    let p = DgpParams {
        beta_edu: 0.08,
        ..DgpParams::default()
    }
    .with_calibrated_alpha();
    let draws = run_replications(500, 202, |_, r| {
        let panel = generate_with_rng(&p, r).unwrap().to_panel().unwrap();
        let fe = estimate_fe_within(&panel, &static_spec()).unwrap();
        let (lo, hi) = fe.conf_int("edu").unwrap();
        (fe.coef("edu").unwrap(), lo <= 0.08 && 0.08 <= hi)
    });
    let s = McSummary::new(&draws.iter().map(|d| d.0).collect::<Vec<_>>(), 0.08);
    let coverage = rate(draws.iter().map(|d| d.1));
    outcome(
        s.bias.abs() < 0.005 && (0.92..=0.98).contains(&coverage),
        format!(
            "FE edu bias {:+.5} (MC SE {:.5}), 95% CI coverage {coverage:.3}, 500 reps",
            s.bias, s.mc_se
        ),
    )
}

fn criterion_3() -> Outcome {
    let p = DgpParams {
        gamma: -0.8,
        sigma_lambda: 0.15,
        beta_controls: ControlEffects::ZERO,
        ..DgpParams::default()
    }
    .with_calibrated_alpha();
    let spec = ModelSpec::new("health", &["edu"]);
    let below = run_replications(200, 303, |_, r| {
        let panel = generate_with_rng(&p, r).unwrap().to_panel().unwrap();
        let ols = estimate_ols(&panel, &spec).unwrap().coef("edu").unwrap();
        let fe = estimate_fe_within(&panel, &spec).unwrap().coef("edu").unwrap();
        ols < fe
    });
    let share = rate(below);
    outcome(
        share >= 0.95,
        format!(
            "pooled OLS below FE in {:.1}% of 200 reps (gamma -0.8, sigma_lambda 0.15)",
            100.0 * share
        ),
    )
}

fn ar_design() -> (CohortArParams, ModelSpec, InstrumentSpec) {
    let p = CohortArParams {
        rho: 0.3,
        periods: 5,
        ..CohortArParams::default()
    };
    let model = ModelSpec::new("health", &["L.health", "edu"]);
    let iv = InstrumentSpec::new(vec![GmmStyle::new("health", true)], &["edu"], Equations::System);
    (p, model, iv)
}

fn criterion_4() -> Outcome {
    let (p, model, iv) = ar_design();
    let lsdv_spec = model.clone().with_cohort_dummies(true);
    let draws = run_replications(500, 404, |_, r| {
        let panel = generate_cohort_ar(&p, r).unwrap().add_lag("health", 1).unwrap();
        let sys = estimate_sys_gmm(&panel, &model, &iv, Step::TwoStep).unwrap();
        let lsdv = estimate_ols(&panel, &lsdv_spec).unwrap();
        (sys.coef("L.health").unwrap(), lsdv.coef("L.health").unwrap())
    });
    let sys = McSummary::new(&draws.iter().map(|d| d.0).collect::<Vec<_>>(), p.rho);
    let lsdv = McSummary::new(&draws.iter().map(|d| d.1).collect::<Vec<_>>(), p.rho);
    outcome(
        sys.bias.abs() < lsdv.bias.abs() && sys.bias.abs() < 0.05,
        format!("rho bias: sys-GMM {:+.4}, LSDV {:+.4}, 500 reps", sys.bias, lsdv.bias),
    )
}

fn criterion_5() -> Outcome {
    let (p, model, iv) = ar_design();
    let tests = run_replications(500, 505, |_, r| {
        let panel = generate_cohort_ar(&p, r).unwrap().add_lag("health", 1).unwrap();
        let g = estimate_sys_gmm(&panel, &model, &iv, Step::TwoStep).unwrap();
        (g.hansen.p_value, g.ar1.unwrap().p_value, g.ar2.unwrap().p_value)
    });
    let hansen = rate(tests.iter().map(|t| t.0 < 0.05));
    let ar1 = rate(tests.iter().map(|t| t.1 < 0.05));
    let ar2 = rate(tests.iter().map(|t| t.2 < 0.05));
    outcome(
        (0.02..=0.10).contains(&hansen) && ar1 >= 0.90 && ar2 <= 0.10,
        format!("rejection at 5%: Hansen {hansen:.3}, AR(1) {ar1:.3}, AR(2) {ar2:.3}, 500 reps"),
    )
}

fn criterion_6() -> Outcome {
    let (p, model, iv) = ar_design();
    let mut rng = pseudopanel::montecarlo::replication_rng(606, 0);
    let panel = generate_cohort_ar(&p, &mut rng).unwrap().add_lag("health", 1).unwrap();
    let only_lag = ModelSpec::new("health", &["L.health"]);
    let diff_cols = |collapse| {
        let spec = InstrumentSpec::new(vec![GmmStyle::new("health", collapse)], &[], Equations::Difference);
        build_instruments(&panel, &only_lag, &spec).unwrap().n_instruments()
    };
    let (collapsed, full) = (diff_cols(true), diff_cols(false));
    let diff_iv = InstrumentSpec {
        equations: Equations::Difference,
        ..iv.clone()
    };
    let diff_rows = estimate_diff_gmm(&panel, &model, &diff_iv, Step::TwoStep)
        .unwrap()
        .estimation
        .n_obs;
    let sys_rows = estimate_sys_gmm(&panel, &model, &iv, Step::TwoStep)
        .unwrap()
        .estimation
        .n_obs;
    let static_rows = estimate_fe_within(&panel, &model).unwrap().n_obs;
    outcome(
        collapsed == 3 && full == 6 && diff_rows == 162 && sys_rows == 216 && static_rows == 216,
        format!(
            "instrument columns {collapsed} collapsed / {full} full; rows diff {diff_rows}, system {sys_rows}, static {static_rows}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let table = [
        ("none", 0.0),
        ("elementary", 6.0),
        ("junior_high", 9.0),
        ("high_school", 12.0),
        ("college", 15.0),
        ("undergraduate", 16.0),
        ("postgraduate", 19.0),
    ];
    let matched = table
        .iter()
        .filter(|(l, y)| education_years(l).ok() == Some(*y))
        .count();
    let categories = EducationLevel::ALL.len();

    let map = RegionMap::default();
    let counts: Vec<usize> = Region::ALL.iter().map(|&r| map.provinces(r).len()).collect();
    let distinct: BTreeSet<&str> = Region::ALL.iter().flat_map(|&r| map.provinces(r)).collect();

    let records: Vec<MicroRecord> = (1..=1000)
        .map(|i| MicroRecord {
            survey_year: 2014,
            birth_year: 1980,
            gender: Gender::Male,
            province: "Hebei".into(),
            region: Region::East,
            education: EducationLevel::HighSchool,
            has_health_record: true,
            living: 3.0,
            flowt: 5.0,
            income: i as f64,
            real_income: i as f64,
            city: None,
            source_line: i,
        })
        .collect();
    let kept: Vec<f64> = trim_by_income(records).unwrap().iter().map(|r| r.real_income).collect();
    let expected: Vec<f64> = (76..=975).map(f64::from).collect();
    outcome(
        matched == 7 && categories == 7 && counts == [13, 6, 12] && distinct.len() == 31 && kept == expected,
        format!(
            "education {matched}/7 categories; regions {counts:?} over {} provinces; trimming keeps {}..{} ({} values)",
            distinct.len(),
            kept.first().copied().unwrap_or(f64::NAN),
            kept.last().copied().unwrap_or(f64::NAN),
            kept.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let manifests: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let mut cfg = RunConfig::synthetic_default();
            cfg.output_dir = d.path().to_path_buf();
            run(&cfg).unwrap();
            std::fs::read(d.path().join("manifest.json")).unwrap()
        })
        .collect();
    outcome(
        manifests[0] == manifests[1],
        format!(
            "two full study runs, manifests of {} bytes identical: {}",
            manifests[0].len(),
            manifests[0] == manifests[1]
        ),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::synthetic_default();
    cfg.output_dir = dir.path().to_path_buf();
    let report = run(&cfg).unwrap();
    let rows = |axis: Axis| -> Vec<(String, usize, bool)> {
        report
            .heterogeneity
            .iter()
            .filter(|g| g.axis == axis)
            .map(|g| {
                let n = g.result.as_ref().map_or(0, |r| r.estimation.n_obs);
                let reported = g.reference_rows.is_none_or(|r| r == n) || g.deviation.is_some();
                (g.label.clone(), n, reported)
            })
            .collect()
    };
    let gender = rows(Axis::Gender);
    let education = rows(Axis::Education);
    let counts = |v: &[(String, usize, bool)]| v.iter().map(|g| g.1).collect::<Vec<_>>();
    let all_reported = gender.iter().chain(&education).all(|g| g.2);
    let bins_basic = report
        .profiles
        .iter()
        .filter(|p| p.all <= cfg.heterogeneity.education_boundary)
        .count();
    outcome(
        counts(&gender) == [108, 108] && counts(&education) == [162, 54] && all_reported,
        format!(
            "gender rows {:?}, education rows {:?} (basic = {bins_basic} of {} bins); deviations reported: {all_reported}",
            counts(&gender),
            counts(&education),
            report.profiles.len()
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Option<Duration>); 9] = [
        (
            1,
            "static oracle equivalence",
            criterion_1,
            Some(Duration::from_secs(10)),
        ),
        (
            2,
            "static Monte Carlo recovery",
            criterion_2,
            Some(Duration::from_secs(120)),
        ),
        (3, "cohort-effect underestimation", criterion_3, None),
        (4, "dynamic bias ordering", criterion_4, Some(Duration::from_secs(300))),
        (5, "diagnostic calibration", criterion_5, Some(Duration::from_secs(300))),
        (6, "instrument bookkeeping", criterion_6, None),
        (7, "ingestion fidelity", criterion_7, None),
        (8, "determinism", criterion_8, None),
        (9, "subgroup accounting", criterion_9, None),
    ];
    let mut failed = Vec::new();
    for (id, name, check, limit) in criteria {
        let start = Instant::now();
        let out = check();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = out.pass && in_time;
        let budget = limit.map(|l| format!(" (limit {}s)", l.as_secs())).unwrap_or_default();
        println!(
            "{} criterion {id} {name}: {}; {:.1}s{budget}",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
