//! TOML run configuration. Every command-line flag has a twin here; flags
//! given on the command line take precedence.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub input: InputSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub model: ModelSection,
    /// Model grid for replicate studies; defaults to one cell built from `[model]`.
    #[serde(default)]
    pub grid: Vec<GridSection>,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub study: StudySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    pub data: Option<PathBuf>,
    /// Repeated measures kept per subject, earliest first.
    pub visit_cap: Option<usize>,
    /// Last period index; inferred from the data when absent.
    pub n_periods: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// 1 or 2.
    pub scenario: Option<u8>,
    pub counts: Option<[usize; 3]>,
    pub n_periods: Option<u32>,
    pub beta_tr: Option<f64>,
    pub group_covariates: Option<[[f64; 3]; 3]>,
    pub trend: Option<[f64; 2]>,
    pub rate_floor: Option<f64>,
    pub noise_sd: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Option<String>,
    pub classes: Option<usize>,
    pub class_range: Option<[usize; 2]>,
    pub poly_order: Option<usize>,
    pub covariates: Option<bool>,
    /// Map raw scores onto the three-level none-mild/moderate/severe scale.
    pub categorize: Option<bool>,
    /// `ladder` or `min_bic`.
    pub rule: Option<String>,
    pub score_min: Option<i32>,
    pub score_max: Option<i32>,
    pub n_categories: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub label: String,
    pub family: Option<String>,
    pub class_range: Option<[usize; 2]>,
    pub poly_order: Option<usize>,
    pub covariates: Option<bool>,
    pub rule: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub starts: Option<usize>,
    pub max_iter: Option<usize>,
    /// `em` or `direct`.
    pub mode: Option<String>,
    /// `loglik` or `triple`.
    pub convergence: Option<String>,
    pub tol_ll: Option<f64>,
    pub tol_param: Option<f64>,
    pub tol_grad: Option<f64>,
    pub perturbation_scale: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    pub replicates: Option<usize>,
    pub workers: Option<usize>,
    pub master_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }
}
