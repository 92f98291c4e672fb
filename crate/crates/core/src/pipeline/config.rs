use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::dgp::DgpParams;
use crate::gmm::{GmmStyle, InstrumentSpec};
use crate::panel::CohortScheme;

/// Full study configuration, read from TOML. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Estimation stages after ingestion and panel construction.
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    /// Survey files; exclusive with `synthetic`.
    #[serde(default)]
    pub input: Option<InputPaths>,
    /// Generate the survey from a known process instead of reading files.
    #[serde(default)]
    pub synthetic: Option<DgpParams>,
    #[serde(default)]
    pub cohort: CohortSettings,
    #[serde(default)]
    pub model: ModelSettings,
    /// Named instrument sets referenced by the dynamic ladder.
    #[serde(default = "default_iv_groups")]
    pub iv_groups: BTreeMap<String, IvGroup>,
    #[serde(default = "default_dynamic")]
    pub dynamic: Vec<DynamicColumn>,
    #[serde(default)]
    pub heterogeneity: HeterogeneitySettings,
    #[serde(default)]
    pub simulate: SimulateSettings,
}

fn default_seed() -> u64 {
    20_240_607
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Static, Stage::Dynamic, Stage::Heterogeneity]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Panel,
    Static,
    Dynamic,
    Heterogeneity,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Panel => "panel",
            Stage::Static => "static",
            Stage::Dynamic => "dynamic",
            Stage::Heterogeneity => "heterogeneity",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub micro: PathBuf,
    pub cpi: PathBuf,
    /// Province × year `hos`, `bed`, `doc`; optional when the micro file carries them.
    #[serde(default)]
    pub covariates: Option<PathBuf>,
    /// Two-column `canonical,source` mapping of micro-data column names.
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Two-column `province,region` table replacing the built-in map.
    #[serde(default)]
    pub regions: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CohortSettings {
    pub bin_width: i32,
    pub birth_min: i32,
    pub birth_max: i32,
    /// Cells below this count are reported as warnings.
    pub min_cell_size: usize,
    pub survey_first: i32,
    pub survey_last: i32,
}

impl Default for CohortSettings {
    fn default() -> Self {
        let s = CohortScheme::default();
        Self {
            bin_width: s.bin_width,
            birth_min: s.birth_min,
            birth_max: s.birth_max,
            min_cell_size: 100,
            survey_first: 2014,
            survey_last: 2018,
        }
    }
}

impl CohortSettings {
    pub fn scheme(&self) -> CohortScheme {
        CohortScheme {
            bin_width: self.bin_width,
            birth_min: self.birth_min,
            birth_max: self.birth_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub dependent: String,
    pub static_regressors: Vec<String>,
    pub dynamic_regressors: Vec<String>,
    /// Heteroskedasticity-robust standard errors for the static models.
    pub robust: bool,
    /// Weight static OLS and FE by cell counts.
    pub weights: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let controls = ["flowt", "income", "living", "hos", "doc", "bed"];
        let mut static_regressors = vec!["edu".to_string(), "L.edu".to_string()];
        static_regressors.extend(controls.iter().map(|s| s.to_string()));
        let mut dynamic_regressors = vec!["L.health".to_string()];
        dynamic_regressors.extend(static_regressors.iter().cloned());
        Self {
            dependent: "health".into(),
            static_regressors,
            dynamic_regressors,
            robust: false,
            weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IvGroup {
    #[serde(default)]
    pub gmm: Vec<GmmStyle>,
    #[serde(default)]
    pub iv: Vec<String>,
}

impl IvGroup {
    pub fn spec(&self, equations: crate::gmm::Equations) -> InstrumentSpec {
        InstrumentSpec {
            gmm: self.gmm.clone(),
            iv: self.iv.clone(),
            equations,
        }
    }
}

fn default_iv_groups() -> BTreeMap<String, IvGroup> {
    let gmm = vec![GmmStyle::new("health", true), GmmStyle::new("edu", true)];
    let iv = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    BTreeMap::from([
        (
            "first".to_string(),
            IvGroup {
                gmm: gmm.clone(),
                iv: iv(&["edu", "hos", "doc", "income", "bed"]),
            },
        ),
        (
            "second".to_string(),
            IvGroup {
                gmm,
                iv: iv(&["edu", "hos", "income", "doc", "bed", "living"]),
            },
        ),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DynamicEstimator {
    Ols,
    DiffGmm,
    SysGmm,
}

/// One column of the dynamic table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicColumn {
    pub estimator: DynamicEstimator,
    /// 1 or 2; ignored for OLS.
    #[serde(default = "default_steps")]
    pub steps: u8,
    #[serde(default)]
    pub iv_group: Option<String>,
}

fn default_steps() -> u8 {
    2
}

fn default_dynamic() -> Vec<DynamicColumn> {
    let col = |estimator, steps, group: &str| DynamicColumn {
        estimator,
        steps,
        iv_group: Some(group.to_string()),
    };
    vec![
        DynamicColumn {
            estimator: DynamicEstimator::Ols,
            steps: 1,
            iv_group: None,
        },
        col(DynamicEstimator::DiffGmm, 2, "first"),
        col(DynamicEstimator::SysGmm, 1, "second"),
        col(DynamicEstimator::SysGmm, 2, "first"),
        col(DynamicEstimator::SysGmm, 2, "second"),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeterogeneitySettings {
    pub axes: Vec<super::subgroup::Axis>,
    pub generation_boundary: i32,
    pub education_boundary: f64,
    pub steps: u8,
    pub iv_group: String,
}

impl Default for HeterogeneitySettings {
    fn default() -> Self {
        use super::subgroup::Axis;
        Self {
            axes: vec![Axis::Gender, Axis::Generation, Axis::Education],
            generation_boundary: 1975,
            education_boundary: 11.0,
            steps: 2,
            iv_group: "second".into(),
        }
    }
}

/// Monte Carlo settings used by the `simulate` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSettings {
    pub reps: usize,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self { reps: 200 }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::config(e.to_string()))
    }

    /// Reads a config file; relative input and output paths are resolved against its directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    fn resolve_relative(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(input) = &mut self.input {
            fix(&mut input.micro);
            fix(&mut input.cpi);
            for p in [&mut input.covariates, &mut input.schema, &mut input.regions]
                .into_iter()
                .flatten()
            {
                fix(p);
            }
        }
    }

    /// A study on default synthetic data.
    pub fn synthetic_default() -> Self {
        Self {
            seed: default_seed(),
            output_dir: default_output_dir(),
            stages: default_stages(),
            input: None,
            synthetic: Some(DgpParams::default()),
            cohort: CohortSettings::default(),
            model: ModelSettings::default(),
            iv_groups: default_iv_groups(),
            dynamic: default_dynamic(),
            heterogeneity: HeterogeneitySettings::default(),
            simulate: SimulateSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match (&self.input, &self.synthetic) {
            (Some(_), Some(_)) => return Err(PipelineError::config("set either [input] or [synthetic], not both")),
            (None, None) => return Err(PipelineError::config("one of [input] or [synthetic] is required")),
            (Some(input), None) => {
                let mut paths = vec![&input.micro, &input.cpi];
                paths.extend([&input.covariates, &input.schema, &input.regions].into_iter().flatten());
                for p in paths {
                    if !p.is_file() {
                        return Err(PipelineError::config(format!(
                            "input file {} does not exist",
                            p.display()
                        )));
                    }
                }
            }
            (None, Some(dgp)) => dgp.validate().map_err(|e| PipelineError::config(e.to_string()))?,
        }
        let c = &self.cohort;
        if c.bin_width <= 0 || (c.birth_max - c.birth_min + 1) % c.bin_width != 0 {
            return Err(PipelineError::config(format!(
                "bin width {} does not divide the birth range {}..={}",
                c.bin_width, c.birth_min, c.birth_max
            )));
        }
        if c.survey_first > c.survey_last {
            return Err(PipelineError::config("survey year range is empty"));
        }
        for col in &self.dynamic {
            if col.estimator != DynamicEstimator::Ols {
                let g = col
                    .iv_group
                    .as_deref()
                    .ok_or_else(|| PipelineError::config("GMM columns need an iv_group"))?;
                self.iv_group(g)?;
                if !matches!(col.steps, 1 | 2) {
                    return Err(PipelineError::config(format!(
                        "steps must be 1 or 2, got {}",
                        col.steps
                    )));
                }
            }
        }
        if self.stages.contains(&Stage::Heterogeneity) {
            self.iv_group(&self.heterogeneity.iv_group)?;
        }
        Ok(())
    }

    pub fn iv_group(&self, name: &str) -> Result<&IvGroup, PipelineError> {
        self.iv_groups
            .get(name)
            .ok_or_else(|| PipelineError::config(format!("unknown iv group {name:?}")))
    }

    /// SHA-256 of the canonical serialization, ignoring the output directory.
    pub fn fingerprint(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = PathBuf::new();
        let text = serde_json::to_string(&canon).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
