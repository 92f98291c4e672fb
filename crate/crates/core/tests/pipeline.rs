use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use pseudopanel::ingest::{Gender, IngestError};
use pseudopanel::pipeline::{
    education_profiles, prepare_panel, run, split_subgroups, Axis, PipelineErrorKind, Report, RunConfig, SplitRules,
    Stage, StageStatus,
};

fn synthetic_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::synthetic_default();
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// One full synthetic study shared by the read-only tests.
fn study() -> &'static (tempfile::TempDir, Report) {
    static STUDY: OnceLock<(tempfile::TempDir, Report)> = OnceLock::new();
    STUDY.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let report = run(&synthetic_config(dir.path())).unwrap();
        (dir, report)
    })
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn as_f64s(v: &serde_json::Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn synthetic_study_fills_every_table() {
    let (_, report) = study();
    assert!(report.complete);
    assert!(report.stages.iter().all(|(_, s)| *s == StageStatus::Completed));
    assert!(!report.descriptive.is_empty());
    assert_eq!(report.static_models.len(), 4);
    for col in &report.static_models {
        assert_eq!(col.outcome.estimation().n_obs, 216, "{}", col.label);
    }
    assert!(report.hausman.is_some());
    assert!(!report.dynamic.is_empty());
    assert_eq!(report.heterogeneity.len(), 6);
    assert!(report.heterogeneity.iter().all(|g| g.result.is_some()));
    assert!(report
        .warnings
        .iter()
        .any(|w| w.contains("reuse the dynamic regressor set")));
}

#[test]
fn artifacts_exist_and_manifest_lists_them() {
    let (dir, _) = study();
    let manifest = read_json(&dir.path().join("manifest.json"));
    let artifacts = manifest["artifacts"].as_object().unwrap();
    for name in [
        "panel.csv",
        "descriptive.csv",
        "education_profiles.csv",
        "static.csv",
        "static.json",
        "dynamic.csv",
        "dynamic.json",
        "heterogeneity.json",
        "report.txt",
        "rejects.csv",
        "input/micro.csv",
    ] {
        assert!(artifacts.contains_key(name), "{name}");
        assert!(dir.path().join(name).is_file(), "{name}");
    }
    assert_eq!(manifest["row_counts"]["static_rows:FEM"], 216);
    assert_eq!(manifest["row_counts"]["panel_cohorts"], 54);
}

#[test]
fn reported_coefficients_match_their_artifacts_exactly() {
    let (dir, report) = study();
    let statics = read_json(&dir.path().join("static.json"));
    let models = statics["models"].as_array().unwrap();
    assert_eq!(models.len(), report.static_models.len());
    for (col, json) in report.static_models.iter().zip(models) {
        assert_eq!(json["label"], col.label.as_str());
        let est = col.outcome.estimation();
        assert_eq!(as_f64s(&json["outcome"]["coefficients"]), est.coefficients);
        assert_eq!(as_f64s(&json["outcome"]["std_errors"]), est.std_errors);
    }
    let h = report.hausman.as_ref().unwrap();
    assert_eq!(statics["hausman"]["statistic"].as_f64().unwrap(), h.statistic);

    let dynamic = read_json(&dir.path().join("dynamic.json"));
    for (col, json) in report.dynamic.iter().zip(dynamic["columns"].as_array().unwrap()) {
        let est = col.outcome.estimation();
        let coefs = match col.outcome.gmm() {
            Some(_) => &json["outcome"]["estimation"]["coefficients"],
            None => &json["outcome"]["coefficients"],
        };
        assert_eq!(as_f64s(coefs), est.coefficients, "{}", col.label);
    }

    let groups = read_json(&dir.path().join("heterogeneity.json"));
    for (g, json) in report.heterogeneity.iter().zip(groups.as_array().unwrap()) {
        let r = g.result.as_ref().unwrap();
        assert_eq!(
            as_f64s(&json["result"]["estimation"]["coefficients"]),
            r.estimation.coefficients
        );
        assert_eq!(
            json["result"]["hansen"]["statistic"].as_f64().unwrap(),
            r.hansen.statistic
        );
    }

    // The CSV table carries the same values.
    let mut csv = csv::Reader::from_path(dir.path().join("static.csv")).unwrap();
    let mut checked = 0;
    for row in csv.records() {
        let row = row.unwrap();
        let col = report.static_models.iter().find(|c| c.label == row[0]).unwrap();
        let coef: f64 = row[3].parse().unwrap();
        assert_eq!(Some(coef), col.outcome.estimation().coef(&row[2]));
        checked += 1;
    }
    assert_eq!(
        checked,
        report
            .static_models
            .iter()
            .map(|c| c.outcome.estimation().names.len())
            .sum::<usize>()
    );
}

#[test]
fn report_text_is_the_serialized_report() {
    let (dir, report) = study();
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert_eq!(text, pseudopanel::pipeline::render_report(report));
    assert!(text.contains("Cohort Number"));
}

#[test]
fn static_only_config_skips_later_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_config(dir.path());
    cfg.stages = vec![Stage::Static];
    let report = run(&cfg).unwrap();
    assert_eq!(report.status(Stage::Static), Some(&StageStatus::Completed));
    assert_eq!(report.status(Stage::Dynamic), Some(&StageStatus::Skipped));
    assert_eq!(report.status(Stage::Heterogeneity), Some(&StageStatus::Skipped));
    assert!(report.dynamic.is_empty() && report.heterogeneity.is_empty());
    assert!(!dir.path().join("dynamic.json").exists());
    let text = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("stage dynamic: skipped"));
}

#[test]
fn missing_cpi_year_fails_at_ingest() {
    let src = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_config(src.path());
    cfg.stages = vec![Stage::Ingest];
    run(&cfg).unwrap();
    let input = src.path().join("input");
    let cpi = std::fs::read_to_string(input.join("cpi.csv")).unwrap();
    let cut: String = cpi
        .lines()
        .filter(|l| !l.starts_with("2016"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(input.join("cpi_cut.csv"), cut).unwrap();

    let out = tempfile::tempdir().unwrap();
    let toml = format!(
        "output_dir = {:?}\n[input]\nmicro = {:?}\ncpi = {:?}\ncovariates = {:?}\n",
        out.path(),
        input.join("micro.csv"),
        input.join("cpi_cut.csv"),
        input.join("covariates.csv"),
    );
    let cfg = RunConfig::from_toml_str(&toml).unwrap();
    let err = run(&cfg).unwrap_err();
    assert_eq!(err.stage, "ingest");
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(
        err.kind,
        PipelineErrorKind::Ingest(IngestError::MissingCpiYear(2016))
    ));
    let partial = err.partial.unwrap();
    assert!(!partial.complete);
    assert!(matches!(partial.status(Stage::Ingest), Some(StageStatus::Failed(_))));
    assert_eq!(partial.status(Stage::Panel), Some(&StageStatus::NotRun));
    let manifest = read_json(&out.path().join("manifest.json"));
    assert_eq!(manifest["complete"], false);
}

#[test]
fn file_input_reproduces_the_synthetic_panel() {
    let src = tempfile::tempdir().unwrap();
    let mut cfg = synthetic_config(src.path());
    cfg.stages = vec![Stage::Panel];
    run(&cfg).unwrap();
    let input = src.path().join("input");
    let out = tempfile::tempdir().unwrap();
    let toml = format!(
        "output_dir = {:?}\nstages = [\"panel\"]\n[input]\nmicro = {:?}\ncpi = {:?}\ncovariates = {:?}\n",
        out.path(),
        input.join("micro.csv"),
        input.join("cpi.csv"),
        input.join("covariates.csv"),
    );
    run(&RunConfig::from_toml_str(&toml).unwrap()).unwrap();
    let a = std::fs::read(src.path().join("panel.csv")).unwrap();
    let b = std::fs::read(out.path().join("panel.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = synthetic_config(a.path());
    cfg.stages = vec![Stage::Static, Stage::Dynamic];
    run(&cfg).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    run(&cfg).unwrap();
    for f in [
        "manifest.json",
        "report.txt",
        "static.json",
        "dynamic.json",
        "panel.csv",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn seed_changes_the_manifest() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = synthetic_config(a.path());
    cfg.stages = vec![Stage::Panel];
    run(&cfg).unwrap();
    cfg.output_dir = b.path().to_path_buf();
    cfg.seed += 1;
    run(&cfg).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("manifest.json")).unwrap(),
        std::fs::read(b.path().join("manifest.json")).unwrap()
    );
}

#[test]
fn subgroups_partition_the_cohorts() {
    let prepared = prepare_panel(&RunConfig::synthetic_default()).unwrap();
    let panel = &prepared.panel;
    let all: BTreeSet<_> = panel.keys().into_iter().collect();
    let rules = SplitRules::default();
    let mut sizes = Vec::new();
    for axis in [Axis::Gender, Axis::Generation, Axis::Education] {
        let (groups, _) = split_subgroups(panel, axis, &rules);
        let mut union = BTreeSet::new();
        let mut cells = 0;
        for g in &groups {
            assert!(g.keys.iter().all(|k| union.insert(*k)), "{axis:?} overlaps");
            cells += g.panel.len();
        }
        assert_eq!(union, all, "{axis:?}");
        assert_eq!(cells, panel.len());
        sizes.push(groups.iter().map(|g| g.keys.len()).collect::<Vec<_>>());
    }
    assert_eq!(sizes[0], vec![27, 27]);
    assert_eq!(sizes[1], vec![24, 30]);
    let (gender, _) = split_subgroups(panel, Axis::Gender, &rules);
    assert!(gender[0].keys.iter().all(|k| k.gender == Gender::Male));
}

#[test]
fn education_profiles_rise_with_birth_year() {
    let prepared = prepare_panel(&RunConfig::synthetic_default()).unwrap();
    let (rows, warnings) = education_profiles(&prepared.panel, &SplitRules::default()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(rows.len(), 9);
    for w in rows.windows(2) {
        assert!(w[1].birth_bin > w[0].birth_bin);
        assert!(w[1].all > w[0].all, "{} -> {}", w[0].all, w[1].all);
    }
}

#[test]
fn equal_schooling_by_gender_gives_zero_gap() {
    let mut cfg = RunConfig::synthetic_default();
    let dgp = cfg.synthetic.as_mut().unwrap();
    dgp.edu_gender_gap = 0.0;
    dgp.edu_shock_sd = 0.0;
    dgp.cell_size = 120;
    let prepared = prepare_panel(&cfg).unwrap();
    // Individuals still draw schooling categories at random, so compare the
    // gap with its sampling noise rather than with zero.
    let (rows, _) = education_profiles(&prepared.panel, &SplitRules::default()).unwrap();
    let mean_gap = rows.iter().map(|r| r.gender_gap).sum::<f64>() / rows.len() as f64;
    assert!(mean_gap.abs() < 0.1, "{mean_gap}");
}

#[test]
fn config_rejects_unknown_keys() {
    let err = RunConfig::from_toml_str("seed = 1\ncolour = \"blue\"\n").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("colour"));
    assert!(RunConfig::from_toml_str("[cohort]\nbin_width = 5\nwidth = 3\n").is_err());
    assert!(RunConfig::from_toml_str("[synthetic]\nrho = 0.3\nroh = 0.3\n").is_err());
}

#[test]
fn config_requires_exactly_one_source() {
    let both = "[synthetic]\n[input]\nmicro = \"a.csv\"\ncpi = \"b.csv\"\n";
    let err = run(&RunConfig::from_toml_str(both).unwrap()).unwrap_err();
    assert_eq!(err.stage, "config");
    let err = run(&RunConfig::from_toml_str("seed = 3\n").unwrap()).unwrap_err();
    assert_eq!(err.stage, "config");
    let missing = "[input]\nmicro = \"/nonexistent/micro.csv\"\ncpi = \"/nonexistent/cpi.csv\"\n";
    let err = run(&RunConfig::from_toml_str(missing).unwrap()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn persistent_design_reports_clipped_cohorts() {
    let mut cfg = RunConfig::synthetic_default();
    let dgp = cfg.synthetic.as_mut().unwrap();
    dgp.rho = 0.3;
    dgp.calibrate_alpha();
    assert!(!dgp.clipped_cohorts().is_empty());
    let prepared = prepare_panel(&cfg).unwrap();
    assert!(prepared.warnings.iter().any(|w| w.contains("long-run health rate")));
    assert!(prepare_panel(&RunConfig::synthetic_default())
        .unwrap()
        .warnings
        .is_empty());
}
