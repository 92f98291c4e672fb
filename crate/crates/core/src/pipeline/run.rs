use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{hex, DynamicEstimator, RunConfig, Stage};
use super::profiles::{education_profiles, write_profiles_csv};
use super::report::render_report;
use super::subgroup::{split_subgroups, Axis, SplitRules};
use super::{
    IngestSummary, LabeledOutcome, ModelOutcome, PanelSummary, PipelineError, PipelineErrorKind, Report, StageStatus,
    SubgroupOutcome,
};
use crate::dgp::{generate_synthetic, generate_with_rng, DgpParams, PROB_CEIL, PROB_FLOOR};
use crate::gmm::{estimate_diff_gmm, estimate_sys_gmm, Equations, Step};
use crate::ingest::{
    deflate_records, income_bounds, parse_micro_csv, trim_by_income, write_micro_csv, write_rejects, CovariateTable,
    CpiTable, MicroRecord, ParseOptions, RegionMap, Reject, Schema,
};
use crate::model::{EstimationResult, ModelSpec};
use crate::montecarlo::{rate, run_replications, McSummary};
use crate::panel::{aggregate_with, parse_lag, summarize, write_panel_csv, PseudoPanel};
use crate::static_models::{estimate_fe_within, estimate_ols, estimate_re_gls, hausman_test};

type StageResult<T> = Result<T, PipelineErrorKind>;

/// Files written under the output directory, with their SHA-256 digests.
struct Artifacts {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Artifacts {
    fn new(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.hashes.insert(rel.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }

    fn write_with<E>(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>) -> StageResult<()>
    where
        PipelineErrorKind: From<E>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> StageResult<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)?;
        Ok(())
    }
}

/// Deterministic record of a run: no timestamps and no absolute paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub complete: bool,
    pub stages: Vec<(Stage, StageStatus)>,
    pub row_counts: BTreeMap<String, usize>,
    /// Artifact path relative to the output directory → SHA-256.
    pub artifacts: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

/// Ingested and aggregated data ready for estimation.
#[derive(Debug, Clone)]
pub struct PreparedPanel {
    pub panel: PseudoPanel,
    pub records: Vec<MicroRecord>,
    pub rejects: Vec<Reject>,
    pub ingest: IngestSummary,
    pub summary: PanelSummary,
    pub warnings: Vec<String>,
}

fn parse_options(config: &RunConfig) -> ParseOptions {
    ParseOptions {
        survey_years: config.cohort.survey_first..=config.cohort.survey_last,
        birth_years: config.cohort.birth_min..=config.cohort.birth_max,
    }
}

/// Validates the synthetic section against the cohort settings and returns
/// warnings about the design.
fn check_synthetic(config: &RunConfig, dgp: &DgpParams) -> Result<Vec<String>, PipelineError> {
    if dgp.scheme != config.cohort.scheme() {
        return Err(PipelineError::config(
            "[synthetic] cohort scheme differs from [cohort] settings",
        ));
    }
    let years = dgp.years();
    let survey = config.cohort.survey_first..=config.cohort.survey_last;
    if years.iter().any(|y| !survey.contains(y)) {
        return Err(PipelineError::config(
            "[synthetic] years fall outside the survey range of [cohort]",
        ));
    }
    let clipped = dgp.clipped_cohorts();
    if clipped.is_empty() {
        return Ok(Vec::new());
    }
    Ok(vec![format!(
        "synthetic design: {} cohort(s) have a long-run health rate outside [{PROB_FLOOR}, {PROB_CEIL}] \
         (first: {}); clipping makes their cell means nonlinear in the regressors",
        clipped.len(),
        clipped[0]
    )])
}

/// Parses, joins, deflates and trims the micro-data. In synthetic mode the
/// generated survey is written to `input/` first when artifacts are kept, and
/// then read back through the same parser as real files.
fn ingest_stage(
    config: &RunConfig,
    mut out: Option<&mut Artifacts>,
) -> StageResult<(Vec<MicroRecord>, Vec<Reject>, IngestSummary)> {
    let opts = parse_options(config);
    let (records, mut rejects, cpi, covariates, source) = if let Some(dgp) = &config.synthetic {
        let data = generate_synthetic(dgp, config.seed)?;
        let stripped: Vec<MicroRecord> = data
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| MicroRecord {
                city: None,
                source_line: i as u64 + 2,
                ..r.clone()
            })
            .collect();
        match out.as_deref_mut() {
            Some(arts) => {
                let schema = Schema::identity();
                arts.write_with("input/micro.csv", |b| write_micro_csv(&stripped, &schema, b))?;
                arts.write_with("input/cpi.csv", |b| data.cpi.write_csv(b))?;
                arts.write_with("input/covariates.csv", |b| data.covariates.write_csv(b))?;
                let regions = RegionMap::default();
                let parsed = parse_micro_csv(arts.path("input/micro.csv"), &schema, &regions, &opts)?;
                let cpi = CpiTable::from_csv_path(arts.path("input/cpi.csv"))?;
                let cov = CovariateTable::from_csv_path(arts.path("input/covariates.csv"), &regions)?;
                (parsed.records, parsed.rejects, cpi, Some(cov), "synthetic")
            }
            None => (stripped, Vec::new(), data.cpi, Some(data.covariates), "synthetic"),
        }
    } else {
        let input = config
            .input
            .as_ref()
            .ok_or_else(|| PipelineErrorKind::Config("no input".into()))?;
        let regions = match &input.regions {
            Some(p) => RegionMap::from_csv_path(p)?,
            None => RegionMap::default(),
        };
        let schema = match &input.schema {
            Some(p) => Schema::from_csv_path(p)?,
            None => Schema::identity(),
        };
        let parsed = parse_micro_csv(&input.micro, &schema, &regions, &opts)?;
        let cpi = CpiTable::from_csv_path(&input.cpi)?;
        let cov = match &input.covariates {
            Some(p) => Some(CovariateTable::from_csv_path(p, &regions)?),
            None => None,
        };
        (parsed.records, parsed.rejects, cpi, cov, "files")
    };
    let parsed = records.len() + rejects.len();
    let rejected_parse = rejects.len();
    let survey_years: BTreeSet<i32> = records.iter().map(|r| r.survey_year).collect();
    cpi.require_years(survey_years.iter().copied())?;

    let records = match covariates {
        Some(table) => {
            let (kept, missing) = table.join(records);
            rejects.extend(missing);
            kept
        }
        None => records,
    };
    let rejected_covariates = rejects.len() - rejected_parse;
    let mut records = records;
    deflate_records(&mut records, &cpi)?;
    let incomes: Vec<f64> = records.iter().map(|r| r.real_income).collect();
    let (lo, hi) = income_bounds(&incomes)?;
    let before = records.len();
    let records = trim_by_income(records)?;
    rejects.sort_by_key(|r| r.line);
    let summary = IngestSummary {
        source: source.into(),
        parsed,
        rejected_parse,
        rejected_covariates,
        trimmed: before - records.len(),
        retained: records.len(),
        income_lower: lo,
        income_upper: hi,
        survey_years: survey_years.into_iter().collect(),
    };
    if let Some(arts) = out {
        arts.write_with("rejects.csv", |b| write_rejects(&rejects, b))?;
    }
    Ok((records, rejects, summary))
}

/// Every lagged name referenced by the configured models.
fn lag_terms(config: &RunConfig) -> BTreeSet<(String, usize)> {
    config
        .model
        .static_regressors
        .iter()
        .chain(&config.model.dynamic_regressors)
        .filter_map(|name| {
            let (order, base) = parse_lag(name);
            (order > 0).then(|| (base.to_string(), order))
        })
        .collect()
}

fn panel_stage(config: &RunConfig, records: &[MicroRecord]) -> StageResult<(PseudoPanel, PanelSummary, Vec<String>)> {
    let (mut panel, _) = aggregate_with(records, &config.cohort.scheme())?;
    for (base, order) in lag_terms(config) {
        if panel.has_variable(&base) {
            panel = panel.add_lag(&base, order)?;
        }
    }
    let small = panel.check_cell_sizes(config.cohort.min_cell_size);
    let mut warnings = Vec::new();
    if !small.is_empty() {
        warnings.push(format!(
            "{} cells have fewer than {} members (smallest: {} in {} {})",
            small.len(),
            config.cohort.min_cell_size,
            small.iter().map(|w| w.n).min().unwrap_or(0),
            small[0].key,
            small[0].year
        ));
    }
    let summary = PanelSummary {
        cells: panel.len(),
        cohorts: panel.keys().len(),
        years: panel.years(),
        micro_records: panel.total_n(),
        small_cells: small.len(),
    };
    Ok((panel, summary, warnings))
}

/// Ingests and aggregates in memory, without writing artifacts.
pub fn prepare_panel(config: &RunConfig) -> Result<PreparedPanel, PipelineError> {
    config.validate()?;
    let mut warnings = match &config.synthetic {
        Some(dgp) => check_synthetic(config, dgp)?,
        None => Vec::new(),
    };
    let (records, rejects, ingest) = ingest_stage(config, None).map_err(|e| PipelineError::new("ingest", e))?;
    let (panel, summary, panel_warnings) = panel_stage(config, &records).map_err(|e| PipelineError::new("panel", e))?;
    warnings.extend(panel_warnings);
    Ok(PreparedPanel {
        panel,
        records,
        rejects,
        ingest,
        summary,
        warnings,
    })
}

fn static_spec(config: &RunConfig) -> ModelSpec {
    ModelSpec {
        dependent: config.model.dependent.clone(),
        regressors: config.model.static_regressors.clone(),
        include_cohort_dummies: false,
        weights: config.model.weights,
        robust: config.model.robust,
    }
}

fn dynamic_spec(config: &RunConfig) -> ModelSpec {
    ModelSpec {
        dependent: config.model.dependent.clone(),
        regressors: config.model.dynamic_regressors.clone(),
        include_cohort_dummies: false,
        weights: false,
        robust: false,
    }
}

fn labeled(label: String, iv_group: Option<String>, outcome: ModelOutcome) -> LabeledOutcome {
    LabeledOutcome {
        label,
        iv_group,
        outcome,
    }
}

fn note_warnings(label: &str, r: &EstimationResult, warnings: &mut Vec<String>) {
    warnings.extend(r.notes.iter().map(|n| format!("{label}: {n}")));
}

fn static_stage(
    config: &RunConfig,
    panel: &PseudoPanel,
    warnings: &mut Vec<String>,
) -> StageResult<(Vec<LabeledOutcome>, crate::static_models::HausmanResult)> {
    let spec = static_spec(config);
    let ols = estimate_ols(panel, &spec)?;
    let lsdv = estimate_ols(panel, &spec.clone().with_cohort_dummies(true))?;
    let re_spec = ModelSpec {
        weights: false,
        ..spec.clone()
    };
    if spec.weights {
        warnings.push("random effects ignore cell weights and are fit unweighted".into());
    }
    let re = estimate_re_gls(panel, &re_spec)?;
    let fe = estimate_fe_within(panel, &spec)?;
    let fe_for_test = if spec.weights {
        estimate_fe_within(panel, &re_spec)?
    } else {
        fe.clone()
    };
    let hausman = hausman_test(&fe_for_test, &re)?;
    warnings.extend(hausman.notes.iter().map(|n| format!("Hausman: {n}")));
    let cols: Vec<LabeledOutcome> = [ols, lsdv, re, fe]
        .into_iter()
        .map(|r| {
            note_warnings(r.method.label(), &r, warnings);
            labeled(r.method.label().to_string(), None, ModelOutcome::Static(r))
        })
        .collect();
    Ok((cols, hausman))
}

fn gmm_label(equations: Equations, step: Step, group: &str) -> String {
    let kind = match equations {
        Equations::Difference => "Diff-GMM",
        Equations::System => "Sys-GMM",
    };
    format!("{kind} {step} ({group})")
}

fn run_gmm(
    config: &RunConfig,
    panel: &PseudoPanel,
    equations: Equations,
    steps: u8,
    group: &str,
) -> StageResult<LabeledOutcome> {
    let step = Step::from_count(steps)
        .ok_or_else(|| PipelineErrorKind::Config(format!("steps must be 1 or 2, got {steps}")))?;
    let iv = config.iv_group(group).map_err(|e| e.kind)?.spec(equations);
    let spec = dynamic_spec(config);
    let result = match equations {
        Equations::Difference => estimate_diff_gmm(panel, &spec, &iv, step)?,
        Equations::System => estimate_sys_gmm(panel, &spec, &iv, step)?,
    };
    Ok(labeled(
        gmm_label(equations, step, group),
        Some(group.to_string()),
        ModelOutcome::Gmm(result),
    ))
}

fn dynamic_stage(
    config: &RunConfig,
    panel: &PseudoPanel,
    warnings: &mut Vec<String>,
) -> StageResult<Vec<LabeledOutcome>> {
    let mut cols = Vec::new();
    for col in &config.dynamic {
        let out = match col.estimator {
            DynamicEstimator::Ols => {
                let r = estimate_ols(panel, &dynamic_spec(config))?;
                labeled("OLS".into(), None, ModelOutcome::Static(r))
            }
            DynamicEstimator::DiffGmm | DynamicEstimator::SysGmm => {
                let eq = if col.estimator == DynamicEstimator::DiffGmm {
                    Equations::Difference
                } else {
                    Equations::System
                };
                let group = col.iv_group.as_deref().unwrap_or_default();
                run_gmm(config, panel, eq, col.steps, group)?
            }
        };
        note_warnings(&out.label, out.outcome.estimation(), warnings);
        cols.push(out);
    }
    Ok(cols)
}

/// Mean coefficient on the lagged dependent variable over the columns that have one.
fn lag_average(config: &RunConfig, cols: &[LabeledOutcome]) -> Option<f64> {
    let lag = crate::panel::lag_name(&config.model.dependent, 1);
    let vals: Vec<f64> = cols.iter().filter_map(|c| c.outcome.estimation().coef(&lag)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Row counts of the reference subgroup tabulation.
fn reference_rows(axis: Axis, label: &str) -> Option<usize> {
    match (axis, label) {
        (Axis::Gender, "male" | "female") => Some(108),
        (Axis::Generation, "1955-1974" | "1975-1999") => Some(72),
        (Axis::Education, "basic") => Some(162),
        (Axis::Education, "higher") => Some(54),
        _ => None,
    }
}

fn split_rules(config: &RunConfig) -> SplitRules {
    SplitRules {
        generation_boundary: config.heterogeneity.generation_boundary,
        education_boundary: config.heterogeneity.education_boundary,
        bin_width: config.cohort.bin_width,
    }
}

fn heterogeneity_stage(
    config: &RunConfig,
    panel: &PseudoPanel,
    warnings: &mut Vec<String>,
) -> StageResult<Vec<SubgroupOutcome>> {
    let rules = split_rules(config);
    let h = &config.heterogeneity;
    warnings.push(format!(
        "subgroup models reuse the dynamic regressor set ({})",
        config.model.dynamic_regressors.join(", ")
    ));
    let mut subgroups = Vec::new();
    for &axis in &h.axes {
        let (groups, w) = split_subgroups(panel, axis, &rules);
        warnings.extend(w);
        subgroups.extend(groups);
    }
    // Subgroups are independent; the indexed collect keeps configuration order.
    let results: Vec<StageResult<LabeledOutcome>> = subgroups
        .par_iter()
        .map(|g| run_gmm(config, &g.panel, Equations::System, h.steps, &h.iv_group))
        .collect();
    let mut out = Vec::new();
    for (g, res) in subgroups.iter().zip(results) {
        let reference = reference_rows(g.axis, &g.label);
        let mut outcome = SubgroupOutcome {
            axis: g.axis,
            label: g.label.clone(),
            n_cohorts: g.keys.len(),
            reference_rows: reference,
            deviation: None,
            result: None,
            error: None,
        };
        match res {
            Ok(l) => {
                let gmm = l.outcome.gmm().cloned().expect("system GMM result");
                let rows = gmm.estimation.n_obs;
                if let Some(r) = reference.filter(|&r| r != rows) {
                    let d = format!("{rows} estimation rows against {r} in the reference tabulation");
                    warnings.push(format!("{}: {d}", g.name()));
                    outcome.deviation = Some(d);
                }
                note_warnings(&g.name(), &gmm.estimation, warnings);
                outcome.result = Some(gmm);
            }
            Err(e) => {
                warnings.push(format!("{}: estimation failed: {e}", g.name()));
                outcome.error = Some(e.to_string());
            }
        }
        out.push(outcome);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ResultRow<'a> {
    column: &'a str,
    method: &'a str,
    term: &'a str,
    coef: f64,
    se: f64,
    t: f64,
    p: f64,
    n_obs: usize,
}

fn write_results_csv<'a>(
    cols: impl IntoIterator<Item = (&'a str, &'a EstimationResult)>,
    buf: &mut Vec<u8>,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(buf);
    for (column, r) in cols {
        for (i, term) in r.names.iter().enumerate() {
            w.serialize(ResultRow {
                column,
                method: r.method.label(),
                term,
                coef: r.coefficients[i],
                se: r.std_errors[i],
                t: r.t_stats[i],
                p: r.p_values[i],
                n_obs: r.n_obs,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_descriptive(rows: &[crate::panel::VariableSummary], buf: &mut Vec<u8>) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(buf);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn wants(config: &RunConfig, stage: Stage) -> bool {
    config.stages.contains(&stage)
}

/// Whether `stage` has to run: it was requested or a later stage needs it.
fn needed(config: &RunConfig, stage: Stage) -> bool {
    config.stages.iter().any(|s| *s >= stage)
}

/// Runs the configured study and writes every artifact to the output directory.
///
/// On failure the partial report, marked incomplete, is written as well and
/// returned inside the error.
pub fn run(config: &RunConfig) -> Result<Report, PipelineError> {
    config.validate()?;
    let design_warnings = match &config.synthetic {
        Some(dgp) => check_synthetic(config, dgp)?,
        None => Vec::new(),
    };
    let mut arts = Artifacts::new(&config.output_dir).map_err(|e| PipelineError::new("output", e))?;
    let order = [
        Stage::Ingest,
        Stage::Panel,
        Stage::Static,
        Stage::Dynamic,
        Stage::Heterogeneity,
    ];
    let mut report = Report {
        complete: false,
        config_hash: config.fingerprint(),
        seed: config.seed,
        stages: order
            .iter()
            .map(|&s| {
                let st = if needed(config, s) {
                    StageStatus::NotRun
                } else {
                    StageStatus::Skipped
                };
                (s, st)
            })
            .collect(),
        ingest: None,
        panel: None,
        descriptive: Vec::new(),
        static_models: Vec::new(),
        hausman: None,
        dynamic: Vec::new(),
        lag_average: None,
        heterogeneity: Vec::new(),
        profiles: Vec::new(),
        warnings: design_warnings,
    };
    let mut counts = BTreeMap::new();
    let outcome = run_stages(config, &mut arts, &mut report, &mut counts);
    if let Err((stage, kind)) = &outcome {
        if let Some(slot) = report.stages.iter_mut().find(|(s, _)| s.label() == *stage) {
            slot.1 = StageStatus::Failed(kind.to_string());
        }
    } else {
        report.complete = true;
    }
    let finish = finish(&mut arts, &report, counts);
    match outcome {
        Err((stage, kind)) => Err(PipelineError {
            stage,
            kind,
            partial: Some(Box::new(report)),
        }),
        Ok(()) => {
            finish.map_err(|e| PipelineError::new("output", e))?;
            Ok(report)
        }
    }
}

fn set_status(report: &mut Report, stage: Stage, status: StageStatus) {
    if let Some(slot) = report.stages.iter_mut().find(|(s, _)| *s == stage) {
        slot.1 = status;
    }
}

fn run_stages(
    config: &RunConfig,
    arts: &mut Artifacts,
    report: &mut Report,
    counts: &mut BTreeMap<String, usize>,
) -> Result<(), (&'static str, PipelineErrorKind)> {
    let tag = |stage: Stage| move |e: PipelineErrorKind| (stage.label(), e);

    let (records, _rejects, ingest) = ingest_stage(config, Some(arts)).map_err(tag(Stage::Ingest))?;
    counts.insert("parsed".into(), ingest.parsed);
    counts.insert("rejected".into(), ingest.rejected_parse + ingest.rejected_covariates);
    counts.insert("trimmed".into(), ingest.trimmed);
    counts.insert("retained".into(), ingest.retained);
    report.ingest = Some(ingest);
    set_status(report, Stage::Ingest, StageStatus::Completed);
    if !needed(config, Stage::Panel) {
        arts.write_with("micro_clean.csv", |b| write_micro_csv(&records, &Schema::identity(), b))
            .map_err(tag(Stage::Ingest))?;
        return Ok(());
    }

    let panel = (|| -> StageResult<PseudoPanel> {
        let (panel, summary, w) = panel_stage(config, &records)?;
        report.warnings.extend(w);
        arts.write_with("panel.csv", |b| write_panel_csv(&panel, b))?;
        report.descriptive = summarize(&panel)?;
        arts.write_with("descriptive.csv", |b| write_descriptive(&report.descriptive, b))?;
        let (profiles, w) = education_profiles(&panel, &split_rules(config))?;
        report.warnings.extend(w);
        arts.write_with("education_profiles.csv", |b| write_profiles_csv(&profiles, b))?;
        report.profiles = profiles;
        counts.insert("panel_cells".into(), summary.cells);
        counts.insert("panel_cohorts".into(), summary.cohorts);
        report.panel = Some(summary);
        Ok(panel)
    })()
    .map_err(tag(Stage::Panel))?;
    set_status(report, Stage::Panel, StageStatus::Completed);

    if wants(config, Stage::Static) {
        (|| -> StageResult<()> {
            let (cols, hausman) = static_stage(config, &panel, &mut report.warnings)?;
            arts.write_with("static.csv", |b| {
                write_results_csv(cols.iter().map(|c| (c.label.as_str(), c.outcome.estimation())), b)
            })?;
            #[derive(Serialize)]
            struct StaticArtifact<'a> {
                models: &'a [LabeledOutcome],
                hausman: &'a crate::static_models::HausmanResult,
            }
            arts.write_json(
                "static.json",
                &StaticArtifact {
                    models: &cols,
                    hausman: &hausman,
                },
            )?;
            for c in &cols {
                counts.insert(format!("static_rows:{}", c.label), c.outcome.estimation().n_obs);
            }
            report.static_models = cols;
            report.hausman = Some(hausman);
            Ok(())
        })()
        .map_err(tag(Stage::Static))?;
        set_status(report, Stage::Static, StageStatus::Completed);
    }

    if wants(config, Stage::Dynamic) {
        (|| -> StageResult<()> {
            let cols = dynamic_stage(config, &panel, &mut report.warnings)?;
            let avg = lag_average(config, &cols);
            arts.write_with("dynamic.csv", |b| {
                write_results_csv(cols.iter().map(|c| (c.label.as_str(), c.outcome.estimation())), b)
            })?;
            #[derive(Serialize)]
            struct DynamicArtifact<'a> {
                columns: &'a [LabeledOutcome],
                lag_average: Option<f64>,
            }
            arts.write_json(
                "dynamic.json",
                &DynamicArtifact {
                    columns: &cols,
                    lag_average: avg,
                },
            )?;
            for c in &cols {
                counts.insert(format!("dynamic_rows:{}", c.label), c.outcome.estimation().n_obs);
            }
            report.dynamic = cols;
            report.lag_average = avg;
            Ok(())
        })()
        .map_err(tag(Stage::Dynamic))?;
        set_status(report, Stage::Dynamic, StageStatus::Completed);
    }

    if wants(config, Stage::Heterogeneity) {
        (|| -> StageResult<()> {
            let groups = heterogeneity_stage(config, &panel, &mut report.warnings)?;
            let labels: Vec<String> = groups.iter().map(|g| format!("{}={}", g.axis, g.label)).collect();
            arts.write_with("heterogeneity.csv", |b| {
                write_results_csv(
                    groups
                        .iter()
                        .zip(&labels)
                        .filter_map(|(g, l)| g.result.as_ref().map(|r| (l.as_str(), &r.estimation))),
                    b,
                )
            })?;
            arts.write_json("heterogeneity.json", &groups)?;
            for (g, l) in groups.iter().zip(&labels) {
                if let Some(r) = &g.result {
                    counts.insert(format!("subgroup_rows:{l}"), r.estimation.n_obs);
                }
            }
            report.heterogeneity = groups;
            Ok(())
        })()
        .map_err(tag(Stage::Heterogeneity))?;
        set_status(report, Stage::Heterogeneity, StageStatus::Completed);
    }
    Ok(())
}

/// Writes report.txt and manifest.json.
fn finish(arts: &mut Artifacts, report: &Report, row_counts: BTreeMap<String, usize>) -> StageResult<()> {
    arts.write("report.txt", render_report(report).as_bytes())?;
    let manifest = Manifest {
        config_hash: report.config_hash.clone(),
        seed: report.seed,
        complete: report.complete,
        stages: report.stages.clone(),
        row_counts,
        artifacts: arts.hashes.clone(),
        warnings: report.warnings.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(arts.path("manifest.json"), bytes)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    Ols,
    Fe,
    Re,
    DiffGmm,
    SysGmm,
}

impl ModelChoice {
    pub fn is_gmm(self) -> bool {
        matches!(self, ModelChoice::DiffGmm | ModelChoice::SysGmm)
    }
}

/// A single estimation outside the full ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRequest {
    pub model: ModelChoice,
    pub steps: u8,
    pub iv_group: String,
    /// Estimate separately in each subgroup along this axis.
    pub subgroup: Option<Axis>,
}

impl Default for EstimateRequest {
    fn default() -> Self {
        Self {
            model: ModelChoice::Fe,
            steps: 2,
            iv_group: "second".into(),
            subgroup: None,
        }
    }
}

fn estimate_on(config: &RunConfig, panel: &PseudoPanel, req: &EstimateRequest) -> StageResult<LabeledOutcome> {
    let spec = static_spec(config);
    let stat = |r: EstimationResult| labeled(r.method.label().to_string(), None, ModelOutcome::Static(r));
    Ok(match req.model {
        ModelChoice::Ols => stat(estimate_ols(panel, &spec)?),
        ModelChoice::Fe => stat(estimate_fe_within(panel, &spec)?),
        ModelChoice::Re => stat(estimate_re_gls(panel, &ModelSpec { weights: false, ..spec })?),
        ModelChoice::DiffGmm => run_gmm(config, panel, Equations::Difference, req.steps, &req.iv_group)?,
        ModelChoice::SysGmm => run_gmm(config, panel, Equations::System, req.steps, &req.iv_group)?,
    })
}

/// Builds the panel and runs one model, on the full panel or per subgroup.
/// Results go to `estimate.csv` / `estimate.json` under the output directory.
pub fn estimate_one(config: &RunConfig, req: &EstimateRequest) -> Result<Vec<LabeledOutcome>, PipelineError> {
    if req.model.is_gmm() {
        config.iv_group(&req.iv_group)?;
    }
    let prepared = prepare_panel(config)?;
    let panels: Vec<(String, PseudoPanel)> = match req.subgroup {
        None => vec![("all".into(), prepared.panel)],
        Some(axis) => {
            let (groups, w) = split_subgroups(&prepared.panel, axis, &split_rules(config));
            for m in w {
                log::warn!("{m}");
            }
            groups.into_iter().map(|g| (g.name(), g.panel)).collect()
        }
    };
    let mut out = Vec::new();
    for (name, panel) in panels {
        let mut l = estimate_on(config, &panel, req).map_err(|e| PipelineError::new("estimate", e))?;
        if req.subgroup.is_some() {
            l.label = format!("{} [{name}]", l.label);
        }
        out.push(l);
    }
    let mut arts = Artifacts::new(&config.output_dir).map_err(|e| PipelineError::new("output", e))?;
    (|| -> StageResult<()> {
        arts.write_with("estimate.csv", |b| {
            write_results_csv(out.iter().map(|c| (c.label.as_str(), c.outcome.estimation())), b)
        })?;
        arts.write_json("estimate.json", &out)
    })()
    .map_err(|e| PipelineError::new("output", e))?;
    Ok(out)
}

/// Monte Carlo distribution of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSummary {
    pub term: String,
    pub truth: Option<f64>,
    pub summary: McSummary,
    /// Share of replications whose 95% interval covers the truth.
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub model: ModelChoice,
    pub reps: usize,
    pub failures: usize,
    pub seed: u64,
    pub terms: Vec<TermSummary>,
}

fn true_value(dgp: &DgpParams, dependent: &str, term: &str) -> Option<f64> {
    let c = &dgp.beta_controls;
    match term {
        "edu" => Some(dgp.beta_edu),
        "living" => Some(c.living),
        "flowt" => Some(c.flowt),
        "income" => Some(c.income),
        "hos" => Some(c.hos),
        "bed" => Some(c.bed),
        "doc" => Some(c.doc),
        t if t == crate::panel::lag_name(dependent, 1) => Some(dgp.rho),
        t if parse_lag(t).0 > 0 => Some(0.0),
        _ => None,
    }
}

/// Re-draws the synthetic survey `reps` times and re-estimates the model on each draw.
pub fn simulate(config: &RunConfig, reps: usize, req: &EstimateRequest) -> Result<SimulationSummary, PipelineError> {
    config.validate()?;
    let dgp = config
        .synthetic
        .clone()
        .ok_or_else(|| PipelineError::config("simulation needs a [synthetic] section"))?;
    if req.model.is_gmm() {
        config.iv_group(&req.iv_group)?;
    }
    for w in check_synthetic(config, &dgp)? {
        log::warn!("{w}");
    }
    let scheme = config.cohort.scheme();
    let draws: Vec<Option<EstimationResult>> = run_replications(reps, config.seed, |_, rng| {
        let data = generate_with_rng(&dgp, rng).ok()?;
        let mut panel = data.to_panel_with(&scheme).ok()?;
        for (base, order) in lag_terms(config) {
            panel = panel.add_lag(&base, order).ok()?;
        }
        estimate_on(config, &panel, req)
            .ok()
            .map(|l| l.outcome.estimation().clone())
    });
    let ok: Vec<&EstimationResult> = draws.iter().flatten().collect();
    let failures = reps - ok.len();
    let Some(first) = ok.first() else {
        return Err(PipelineError::new(
            "simulate",
            PipelineErrorKind::Config("every replication failed".into()),
        ));
    };
    let terms = first
        .names
        .iter()
        .filter(|n| !n.starts_with(crate::model::COHORT_DUMMY_PREFIX))
        .map(|term| {
            let est: Vec<f64> = ok.iter().filter_map(|r| r.coef(term)).collect();
            let truth = true_value(&dgp, &config.model.dependent, term);
            let coverage = truth.map(|t| {
                rate(
                    ok.iter()
                        .filter_map(|r| r.conf_int(term))
                        .map(|(lo, hi)| lo <= t && t <= hi),
                )
            });
            TermSummary {
                term: term.clone(),
                truth,
                summary: McSummary::new(&est, truth.unwrap_or(f64::NAN)),
                coverage,
            }
        })
        .collect();
    let summary = SimulationSummary {
        model: req.model,
        reps,
        failures,
        seed: config.seed,
        terms,
    };
    let mut arts = Artifacts::new(&config.output_dir).map_err(|e| PipelineError::new("output", e))?;
    (|| -> StageResult<()> {
        arts.write_json("simulation.json", &summary)?;
        arts.write_with("simulation.csv", |b| -> Result<(), csv::Error> {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["rep", "term", "estimate", "se"])?;
            for (rep, r) in draws.iter().enumerate() {
                let Some(r) = r else { continue };
                for (i, term) in r.names.iter().enumerate() {
                    w.write_record([
                        rep.to_string(),
                        term.clone(),
                        r.coefficients[i].to_string(),
                        r.std_errors[i].to_string(),
                    ])?;
                }
            }
            w.flush()?;
            Ok(())
        })
    })()
    .map_err(|e| PipelineError::new("output", e))?;
    Ok(summary)
}
