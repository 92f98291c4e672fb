//! Aligned-text rendering of the study tables.

use std::fmt::Write as _;

use super::run::SimulationSummary;
use super::{LabeledOutcome, Report, Stage, StageStatus, SubgroupOutcome};
use crate::gmm::{GmmResult, SerialTest};
use crate::model::{EstimationResult, COHORT_DUMMY_PREFIX, INTERCEPT};

/// Three significant digits; scientific notation for very small or large magnitudes.
pub fn format_number(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{x:.2e}");
    }
    let decimals = (2 - a.log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Significance marker: *** p<0.01, ** p<0.05, * p<0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// A row-labelled text table with right-aligned value columns.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<(String, Vec<String>)>,
    pub footnotes: Vec<String>,
}

impl Table {
    pub fn new(title: impl Into<String>, headers: Vec<String>) -> Self {
        Self {
            title: title.into(),
            headers,
            ..Self::default()
        }
    }

    pub fn row(&mut self, label: impl Into<String>, cells: Vec<String>) {
        self.rows.push((label.into(), cells));
    }

    pub fn render(&self) -> String {
        let label_w = self
            .rows
            .iter()
            .map(|(l, _)| l.chars().count())
            .max()
            .unwrap_or(0)
            .max(8);
        let widths: Vec<usize> = self
            .headers
            .iter()
            .enumerate()
            .map(|(j, h)| {
                self.rows
                    .iter()
                    .filter_map(|(_, c)| c.get(j))
                    .map(|c| c.chars().count())
                    .chain([h.chars().count()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let total = label_w + widths.iter().map(|w| w + 2).sum::<usize>();
        let mut out = String::new();
        let rule = "-".repeat(total);
        let _ = writeln!(out, "{}", self.title);
        let _ = writeln!(out, "{rule}");
        let _ = write!(out, "{:label_w$}", "");
        for (h, w) in self.headers.iter().zip(&widths) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        let _ = writeln!(out, "{rule}");
        for (label, cells) in &self.rows {
            let _ = write!(out, "{label:label_w$}");
            for (j, w) in widths.iter().enumerate() {
                let c = cells.get(j).map(String::as_str).unwrap_or("");
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "{rule}");
        for f in &self.footnotes {
            let _ = writeln!(out, "{f}");
        }
        out
    }
}

fn is_slope(name: &str) -> bool {
    name != INTERCEPT && !name.starts_with(COHORT_DUMMY_PREFIX)
}

/// Slope names in first-seen order across the columns.
fn slope_names<'a>(results: impl IntoIterator<Item = &'a EstimationResult>) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in results {
        for n in &r.names {
            if is_slope(n) && !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    names
}

/// Coefficient, SE and t rows for `name`.
fn coefficient_rows(table: &mut Table, label: &str, name: &str, results: &[Option<&EstimationResult>]) {
    let pick = |f: &dyn Fn(&EstimationResult, usize) -> String| -> Vec<String> {
        results
            .iter()
            .map(|r| match r.and_then(|r| r.index(name).map(|i| (r, i))) {
                Some((r, i)) => f(r, i),
                None => String::new(),
            })
            .collect()
    };
    table.row(
        label,
        pick(&|r, i| format!("{}{}", format_number(r.coefficients[i]), stars(r.p_values[i]))),
    );
    table.row("  SE", pick(&|r, i| format!("({})", format_number(r.std_errors[i]))));
    table.row("  t", pick(&|r, i| format!("[{}]", format_number(r.t_stats[i]))));
}

fn descriptive_table(report: &Report) -> Table {
    let headers = ["Obs", "Cells", "Mean", "SD", "Min", "Max"].map(String::from).to_vec();
    let mut t = Table::new("Descriptive statistics (cohort-year cell means)", headers);
    for v in &report.descriptive {
        t.row(
            v.name.clone(),
            vec![
                v.obs_micro.to_string(),
                v.obs_cells.to_string(),
                format_number(v.mean),
                format_number(v.sd),
                format_number(v.min),
                format_number(v.max),
            ],
        );
    }
    t
}

fn static_table(report: &Report) -> Table {
    let cols = &report.static_models;
    let headers = cols.iter().map(|c| c.label.clone()).collect();
    let mut t = Table::new("Static models", headers);
    let results: Vec<Option<&EstimationResult>> = cols.iter().map(|c| Some(c.outcome.estimation())).collect();
    for name in slope_names(results.iter().flatten().copied()) {
        coefficient_rows(&mut t, &name, &name, &results);
    }
    coefficient_rows(&mut t, "Constant", INTERCEPT, &results);
    let each = |f: &dyn Fn(&EstimationResult) -> String| -> Vec<String> {
        results.iter().map(|r| r.map(f).unwrap_or_default()).collect()
    };
    t.row(
        "Cohort Fixed",
        each(&|r| {
            match r.method {
                crate::model::Method::RandomEffects => "Random",
                _ if r.cohort_dummies => "Yes",
                crate::model::Method::FixedEffects => "Yes",
                _ => "No",
            }
            .into()
        }),
    );
    t.row("Cohort Number", each(&|r| r.n_obs.to_string()));
    t.row("Cohorts", each(&|r| r.n_cohorts.to_string()));
    t.row("R2 overall", each(&|r| format_number(r.r_squared)));
    t.row(
        "R2 within",
        each(&|r| r.r_squared_within.map(format_number).unwrap_or_default()),
    );
    if let Some(h) = &report.hausman {
        let fe_col = cols
            .iter()
            .position(|c| c.outcome.estimation().method == crate::model::Method::FixedEffects);
        let mut stat = vec![String::new(); cols.len()];
        let mut p = vec![String::new(); cols.len()];
        if let Some(j) = fe_col {
            stat[j] = format!("{} (df {})", format_number(h.statistic), h.df);
            p[j] = format_number(h.p_value);
        }
        t.row("Hausman chi2", stat);
        t.row("Hausman p", p);
    }
    t.footnotes
        .push("*** p<0.01, ** p<0.05, * p<0.1; SE in parentheses, t in brackets".into());
    t
}

/// Rows shared by the dynamic and heterogeneity tables.
fn dynamic_rows(t: &mut Table, cols: &[(Option<&LabeledOutcome>, Option<&str>)]) {
    let results: Vec<Option<&EstimationResult>> = cols.iter().map(|(c, _)| c.map(|c| c.outcome.estimation())).collect();
    for name in slope_names(results.iter().flatten().copied()) {
        coefficient_rows(t, &name, &name, &results);
    }
    coefficient_rows(t, "Constant", INTERCEPT, &results);
    let each = |f: &dyn Fn(&LabeledOutcome) -> String| -> Vec<String> {
        cols.iter()
            .map(|(c, err)| match (c, err) {
                (Some(c), _) => f(c),
                (None, Some(_)) => "failed".into(),
                (None, None) => String::new(),
            })
            .collect()
    };
    let gmm_or = |f: &dyn Fn(&GmmResult) -> String| -> Vec<String> {
        each(&|c| c.outcome.gmm().map(f).unwrap_or_else(|| "-".into()))
    };
    t.row("Step", gmm_or(&|g| g.step.label().into()));
    t.row("IV", each(&|c| c.iv_group.clone().unwrap_or_else(|| "-".into())));
    t.row("Instruments", gmm_or(&|g| g.n_instruments.to_string()));
    t.row(
        "Hansen J",
        gmm_or(&|g| format!("{} (df {})", format_number(g.hansen.statistic), g.hansen.df)),
    );
    t.row("Hansen p", gmm_or(&|g| format_number(g.hansen.p_value)));
    let ar = |s: Option<SerialTest>| s.map(|s| format_number(s.p_value)).unwrap_or_else(|| "n/a".into());
    t.row("AR(1) p", gmm_or(&|g| ar(g.ar1)));
    t.row("AR(2) p", gmm_or(&|g| ar(g.ar2)));
    t.row("Cohort Number", each(&|c| c.outcome.estimation().n_obs.to_string()));
}

fn dynamic_table(report: &Report) -> Table {
    let headers = report.dynamic.iter().map(|c| c.label.clone()).collect();
    let mut t = Table::new("Dynamic models", headers);
    let cols: Vec<_> = report.dynamic.iter().map(|c| (Some(c), None)).collect();
    dynamic_rows(&mut t, &cols);
    if let Some(avg) = report.lag_average {
        t.footnotes.push(format!(
            "Mean lagged-dependent coefficient across columns: {} (descriptive only, not an estimator)",
            format_number(avg)
        ));
    }
    t.footnotes
        .push("*** p<0.01, ** p<0.05, * p<0.1; AR and Hansen rows are p-values".into());
    t
}

fn heterogeneity_table(groups: &[SubgroupOutcome]) -> Table {
    let headers = groups.iter().map(|g| g.label.clone()).collect();
    let mut t = Table::new("Heterogeneity (system GMM by subgroup)", headers);
    let wrapped: Vec<Option<LabeledOutcome>> = groups
        .iter()
        .map(|g| {
            g.result.as_ref().map(|r| LabeledOutcome {
                label: g.label.clone(),
                iv_group: None,
                outcome: super::ModelOutcome::Gmm(r.clone()),
            })
        })
        .collect();
    let cols: Vec<_> = wrapped
        .iter()
        .zip(groups)
        .map(|(w, g)| (w.as_ref(), g.error.as_deref()))
        .collect();
    dynamic_rows(&mut t, &cols);
    t.rows.retain(|(l, _)| l != "IV");
    t.row(
        "Reference rows",
        groups
            .iter()
            .map(|g| g.reference_rows.map(|r| r.to_string()).unwrap_or_else(|| "-".into()))
            .collect(),
    );
    for g in groups {
        if let Some(d) = &g.deviation {
            t.footnotes.push(format!("DEVIATION {}={}: {d}", g.axis, g.label));
        }
        if let Some(e) = &g.error {
            t.footnotes.push(format!("FAILED {}={}: {e}", g.axis, g.label));
        }
    }
    t
}

fn section(out: &mut String, report: &Report, stage: Stage, body: impl FnOnce() -> String) {
    match report.status(stage) {
        Some(StageStatus::Completed) => out.push_str(&body()),
        Some(status) => {
            let _ = writeln!(out, "{stage} section: {status}");
        }
        None => {}
    }
    out.push('\n');
}

/// Full text report: provenance, the four tables and the warnings.
pub fn render_report(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Pseudo-panel study report");
    let _ = writeln!(
        out,
        "status: {}",
        if report.complete { "complete" } else { "INCOMPLETE" }
    );
    let _ = writeln!(out, "config hash: {}", report.config_hash);
    let _ = writeln!(out, "seed: {}", report.seed);
    if let Some(i) = &report.ingest {
        let _ = writeln!(
            out,
            "rows: {} parsed, {} rejected, {} without covariates, {} trimmed, {} retained ({})",
            i.parsed, i.rejected_parse, i.rejected_covariates, i.trimmed, i.retained, i.source
        );
    }
    if let Some(p) = &report.panel {
        let _ = writeln!(
            out,
            "panel: {} cells, {} cohorts, years {:?}, {} cells below the minimum size",
            p.cells, p.cohorts, p.years, p.small_cells
        );
    }
    for (stage, status) in &report.stages {
        let _ = writeln!(out, "stage {stage}: {status}");
    }
    out.push('\n');

    section(&mut out, report, Stage::Panel, || descriptive_table(report).render());
    section(&mut out, report, Stage::Static, || static_table(report).render());
    section(&mut out, report, Stage::Dynamic, || dynamic_table(report).render());
    section(&mut out, report, Stage::Heterogeneity, || {
        let mut axes: Vec<_> = report.heterogeneity.iter().map(|g| g.axis).collect();
        axes.dedup();
        let mut s = String::new();
        for axis in axes {
            let groups: Vec<_> = report
                .heterogeneity
                .iter()
                .filter(|g| g.axis == axis)
                .cloned()
                .collect();
            let mut t = heterogeneity_table(&groups);
            t.title = format!("{} by {axis}", t.title);
            s.push_str(&t.render());
            s.push('\n');
        }
        s
    });

    if !report.warnings.is_empty() {
        let _ = writeln!(out, "Warnings");
        for w in &report.warnings {
            let _ = writeln!(out, "  - {w}");
        }
    }
    out
}

/// Table of ad hoc estimates, one column per outcome.
pub fn render_outcomes(title: &str, outcomes: &[LabeledOutcome]) -> String {
    let headers = outcomes.iter().map(|c| c.label.clone()).collect();
    let mut t = Table::new(title, headers);
    let cols: Vec<_> = outcomes.iter().map(|c| (Some(c), None)).collect();
    dynamic_rows(&mut t, &cols);
    t.row(
        "R2 overall",
        outcomes
            .iter()
            .map(|c| format_number(c.outcome.estimation().r_squared))
            .collect(),
    );
    t.footnotes.push("*** p<0.01, ** p<0.05, * p<0.1".into());
    t.render()
}

/// Monte Carlo summary, one row per coefficient.
pub fn render_simulation(sim: &SimulationSummary) -> String {
    let headers = ["Truth", "Mean", "Bias", "SD", "MC SE", "RMSE", "Coverage"]
        .map(String::from)
        .to_vec();
    let mut t = Table::new(
        format!(
            "Monte Carlo: {} replications ({} failed), seed {}",
            sim.reps, sim.failures, sim.seed
        ),
        headers,
    );
    let opt = |v: Option<f64>| v.map(format_number).unwrap_or_else(|| "-".into());
    for term in &sim.terms {
        let s = &term.summary;
        let known = term.truth.is_some();
        t.row(
            term.term.clone(),
            vec![
                opt(term.truth),
                format_number(s.mean),
                if known { format_number(s.bias) } else { "-".into() },
                format_number(s.sd),
                format_number(s.mc_se),
                if known { format_number(s.rmse) } else { "-".into() },
                opt(term.coverage),
            ],
        );
    }
    t.render()
}
