//! Study orchestration: ingestion, panel construction, the model ladder,
//! subgroup runs and report emission, driven by one [`RunConfig`].

mod config;
mod profiles;
mod report;
mod run;
mod subgroup;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use config::{
    CohortSettings, DynamicColumn, DynamicEstimator, HeterogeneitySettings, InputPaths, IvGroup, ModelSettings,
    RunConfig, SimulateSettings, Stage,
};
pub use profiles::{education_profiles, write_profiles_csv, EducationProfile};
pub use report::{format_number, render_outcomes, render_report, render_simulation, stars, Table};
pub use run::{
    estimate_one, prepare_panel, run, simulate, EstimateRequest, Manifest, ModelChoice, PreparedPanel,
    SimulationSummary, TermSummary,
};
pub use subgroup::{cohort_education, generation_labels, split_subgroups, Axis, SplitRules, Subgroup};

use crate::dgp::DgpError;
use crate::gmm::GmmResult;
use crate::ingest::IngestError;
use crate::model::{EstimationError, EstimationResult};
use crate::panel::{PanelError, VariableSummary};
use crate::static_models::HausmanResult;

#[derive(Debug, thiserror::Error)]
pub enum PipelineErrorKind {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Dgp(#[from] DgpError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// A failure tagged with the stage that raised it. When a report had been
/// started, the incomplete report is attached and was already written to disk.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {kind}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub kind: PipelineErrorKind,
    pub partial: Option<Box<Report>>,
}

impl PipelineError {
    pub fn new(stage: &'static str, kind: impl Into<PipelineErrorKind>) -> Self {
        Self {
            stage,
            kind: kind.into(),
            partial: None,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self::new("config", PipelineErrorKind::Config(msg.into()))
    }

    /// Process exit status for the CLI, distinct per stage.
    pub fn exit_code(&self) -> i32 {
        match self.stage {
            "config" => 2,
            "ingest" => 3,
            "panel" => 4,
            "static" | "dynamic" | "heterogeneity" | "estimate" | "simulate" => 5,
            _ => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Skipped,
    Failed(String),
    /// Not reached because an earlier stage failed.
    NotRun,
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageStatus::Completed => f.write_str("completed"),
            StageStatus::Skipped => f.write_str("skipped"),
            StageStatus::Failed(e) => write!(f, "failed: {e}"),
            StageStatus::NotRun => f.write_str("not run"),
        }
    }
}

/// Result of one estimator run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelOutcome {
    Static(EstimationResult),
    Gmm(GmmResult),
}

impl ModelOutcome {
    pub fn estimation(&self) -> &EstimationResult {
        match self {
            ModelOutcome::Static(e) => e,
            ModelOutcome::Gmm(g) => &g.estimation,
        }
    }

    pub fn gmm(&self) -> Option<&GmmResult> {
        match self {
            ModelOutcome::Static(_) => None,
            ModelOutcome::Gmm(g) => Some(g),
        }
    }
}

/// A table column: display label, instrument group and the estimate behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledOutcome {
    pub label: String,
    pub iv_group: Option<String>,
    pub outcome: ModelOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupOutcome {
    pub axis: Axis,
    pub label: String,
    pub n_cohorts: usize,
    /// Rows in the reference tabulation for this subgroup, when there is one.
    pub reference_rows: Option<usize>,
    /// Set when the estimation rows differ from `reference_rows`.
    pub deviation: Option<String>,
    pub result: Option<GmmResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub source: String,
    pub parsed: usize,
    pub rejected_parse: usize,
    pub rejected_covariates: usize,
    pub trimmed: usize,
    pub retained: usize,
    /// Real-income trimming bounds.
    pub income_lower: f64,
    pub income_upper: f64,
    pub survey_years: Vec<i32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub cells: usize,
    pub cohorts: usize,
    pub years: Vec<i32>,
    pub micro_records: usize,
    pub small_cells: usize,
}

/// Everything a study run produced, in report order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub complete: bool,
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<(Stage, StageStatus)>,
    pub ingest: Option<IngestSummary>,
    pub panel: Option<PanelSummary>,
    pub descriptive: Vec<VariableSummary>,
    pub static_models: Vec<LabeledOutcome>,
    pub hausman: Option<HausmanResult>,
    pub dynamic: Vec<LabeledOutcome>,
    /// Unweighted mean of the lagged-dependent coefficient across dynamic
    /// columns; a descriptive summary, not an estimator.
    pub lag_average: Option<f64>,
    pub heterogeneity: Vec<SubgroupOutcome>,
    pub profiles: Vec<EducationProfile>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn status(&self, stage: Stage) -> Option<&StageStatus> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, st)| st)
    }
}
