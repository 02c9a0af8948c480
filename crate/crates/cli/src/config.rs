//! Run configuration: a JSON file whose keys follow the solution-argument names.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use countreg_core::data::{ModelTerms, Transformation};
use countreg_core::estimator::optim::{OptimMethod, OptimOptions};
use countreg_core::estimator::{FitSettings, ObjectiveKind};
use countreg_core::likelihood::{DrawGenerator, DrawSettings};
use countreg_core::objective::Objectives;
use countreg_core::search::{Algorithm, DeParams, HsParams, Limits, PitchRule, SaParams};
use countreg_core::spec::{
    expand_level_codes, levels_up_to, ConstraintSet, Dispersion, Distribution, FactorConstraint, FactorLevel,
    ManualFit,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// `complexity_level`: a single code (that level and all below) or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexityLevel {
    Max(u8),
    List(Vec<u8>),
}

/// `model_types` is written either flat (`[0, 1]`) or nested (`[[0, 1]]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelTypes {
    Flat(Vec<u8>),
    Nested(Vec<Vec<u8>>),
}

impl ModelTypes {
    fn codes(&self) -> Vec<u8> {
        match self {
            ModelTypes::Flat(v) => v.clone(),
            ModelTypes::Nested(v) => v.iter().flatten().copied().collect(),
        }
    }
}

/// One entry of the `variable_decisions` block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariableDecision {
    pub levels: Vec<u8>,
    #[serde(default)]
    pub transformations: Vec<String>,
    #[serde(default)]
    pub distributions: Vec<String>,
}

fn d_obj1() -> String {
    "bic".into()
}
fn d_obj2() -> Option<String> {
    Some("mspe".into())
}
fn d_test() -> f64 {
    0.3
}
fn d_complexity() -> ComplexityLevel {
    ComplexityLevel::Max(6)
}
fn d_model_types() -> ModelTypes {
    ModelTypes::Flat(vec![0, 1])
}
fn d_distributions() -> Vec<String> {
    ["t", "u", "n", "ln_n", "tn_n"].map(String::from).to_vec()
}
fn d_transformations() -> Vec<String> {
    ["no", "sqrt", "log", "arcsinh"].map(String::from).to_vec()
}
fn d_max_time() -> f64 {
    3600.0
}
fn d_max_iter() -> usize {
    1000
}
fn d_wip() -> usize {
    50
}
fn d_method() -> String {
    "L-BFGS-B".into()
}
fn d_max_char() -> usize {
    25
}
fn d_verbose() -> u8 {
    1
}
fn d_draws() -> usize {
    200
}
fn d_draw_type() -> String {
    "halton".into()
}
fn d_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: PathBuf,
    pub model_terms: ModelTerms,
    #[serde(rename = "_obj_1", default = "d_obj1")]
    pub first_objective: String,
    #[serde(rename = "_obj_2", default = "d_obj2")]
    pub second_objective: Option<String>,
    #[serde(default = "d_test")]
    pub test_percentage: f64,
    #[serde(default = "d_complexity", alias = "test_complexity")]
    pub complexity_level: ComplexityLevel,
    #[serde(default = "d_model_types")]
    pub model_types: ModelTypes,
    #[serde(rename = "_distributions", default = "d_distributions")]
    pub distributions: Vec<String>,
    #[serde(rename = "_transformations", default = "d_transformations")]
    pub transformations: Vec<String>,
    #[serde(default)]
    pub algorithm: Option<String>,

    #[serde(rename = "_hms", default)]
    pub hms: Option<usize>,
    #[serde(rename = "_hmcr", default)]
    pub hmcr: Option<f64>,
    #[serde(rename = "_par", default)]
    pub par: Option<f64>,
    #[serde(rename = "_mpai", default)]
    pub mpai: Option<usize>,
    #[serde(default)]
    pub pitch_adjust: Option<PitchRule>,
    #[serde(rename = "_AI", default)]
    pub ai: Option<i64>,
    #[serde(rename = "_cr", default)]
    pub cr: Option<f64>,
    #[serde(rename = "_pop_size", default)]
    pub pop_size: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(rename = "_ts", default, alias = "STEPS_PER_TEMP")]
    pub steps_per_temp: Option<usize>,
    #[serde(rename = "INTL_ACPT", default)]
    pub initial_acceptance: Option<f64>,
    #[serde(rename = "_num_intl_slns", default)]
    pub n_initial: Option<usize>,
    #[serde(rename = "_crossover_perc", default)]
    pub crossover_perc: Option<f64>,

    #[serde(rename = "_max_time", default = "d_max_time")]
    pub max_time: f64,
    #[serde(rename = "_max_iter", default = "d_max_iter")]
    pub max_iter: usize,
    /// Iterations without acceptance before stopping.
    #[serde(rename = "_WIP", default = "d_wip")]
    pub max_no_improvement: usize,
    #[serde(default = "d_method")]
    pub method_ll: String,
    #[serde(rename = "_max_characteristics", default = "d_max_char")]
    pub max_characteristics: usize,
    #[serde(default = "d_verbose")]
    pub verbose: u8,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_draws")]
    pub n_draws: usize,
    #[serde(default = "d_draw_type")]
    pub draw_type: String,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    #[serde(default, rename = "Manual_Fit")]
    pub manual_fit: Option<ManualFit>,
    #[serde(default, rename = "Manuel_Fit", skip_serializing)]
    pub manuel_fit: Option<ManualFit>,
    #[serde(default)]
    pub variable_decisions: BTreeMap<String, VariableDecision>,
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Names of the hyperparameters each algorithm reads.
pub fn hyperparameter_names(algorithm: &str) -> &'static [&'static str] {
    match algorithm {
        "hs" => &["_hms", "_hmcr", "_par", "_mpai", "pitch_adjust"],
        "de" => &["_AI", "_cr", "_pop_size"],
        "sa" => &["alpha", "_ts", "STEPS_PER_TEMP", "INTL_ACPT", "_num_intl_slns", "_crossover_perc"],
        _ => &[],
    }
}

impl RunConfig {
    /// Parses `text`; a relative data path is resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig, CliError> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(config_error)?;
        if cfg.manuel_fit.is_some() {
            if cfg.manual_fit.is_some() {
                return Err(CliError::Config("both Manual_Fit and Manuel_Fit given".into()));
            }
            eprintln!("note: 'Manuel_Fit' is deprecated, use 'Manual_Fit'");
            cfg.manual_fit = cfg.manuel_fit.take();
        }
        if cfg.data.is_relative() {
            cfg.data = base.join(&cfg.data);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base)
    }

    /// Pretty JSON with every default filled in.
    pub fn echo(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.objectives()?;
        if !(0.0..1.0).contains(&self.test_percentage) {
            return Err(config_error(format!(
                "test_percentage must be in [0, 1), got {}",
                self.test_percentage
            )));
        }
        if self.verbose > 2 {
            return Err(config_error(format!("verbose must be 0, 1 or 2, got {}", self.verbose)));
        }
        if !(self.max_time >= 0.0) {
            return Err(config_error("_max_time must be non-negative"));
        }
        if self.n_draws == 0 {
            return Err(config_error("n_draws must be at least 1"));
        }
        self.fit_settings()?;
        self.base_constraints()?;
        if let Some(a) = &self.algorithm {
            self.search_algorithm(a)?;
        }
        Ok(())
    }

    pub fn objectives(&self) -> Result<Objectives, CliError> {
        let first: ObjectiveKind = self.first_objective.to_ascii_lowercase().parse().map_err(config_error)?;
        let second = match &self.second_objective {
            Some(s) => Some(s.to_ascii_lowercase().parse::<ObjectiveKind>().map_err(config_error)?),
            None => None,
        };
        if second == Some(first) {
            return Err(config_error("_obj_1 and _obj_2 must differ"));
        }
        Ok(Objectives { first, second })
    }

    pub fn fit_settings(&self) -> Result<FitSettings, CliError> {
        let method: OptimMethod = self.method_ll.parse().map_err(config_error)?;
        let generator = match self.draw_type.to_ascii_lowercase().as_str() {
            "halton" => DrawGenerator::Halton,
            "pseudorandom" | "random" => DrawGenerator::Pseudorandom,
            other => return Err(config_error(format!("unknown draw_type {other}"))),
        };
        Ok(FitSettings {
            method,
            optim: OptimOptions::default(),
            draws: DrawSettings {
                generator,
                n_draws: self.n_draws,
                seed: self.seed,
                ..Default::default()
            },
            standard_errors: true,
        })
    }

    pub fn limits(&self) -> Limits {
        Limits {
            max_iter: self.max_iter,
            max_time: Duration::from_secs_f64(self.max_time),
            max_no_improvement: self.max_no_improvement,
        }
    }

    /// Algorithm name as run: the configured one, else harmony search.
    pub fn algorithm_name(&self) -> &str {
        self.algorithm.as_deref().unwrap_or("hs")
    }

    pub fn search_algorithm(&self, name: &str) -> Result<Algorithm, CliError> {
        let alg = match name.to_ascii_lowercase().as_str() {
            "hs" => {
                let d = HsParams::default();
                let hp = HsParams {
                    hms: self.hms.or(self.pop_size).unwrap_or(d.hms),
                    hmcr: self.hmcr.unwrap_or(d.hmcr),
                    par: self.par.unwrap_or(d.par),
                    mpai: self.mpai.unwrap_or(d.mpai),
                    pitch_rule: self.pitch_adjust.unwrap_or(d.pitch_rule),
                };
                hp.validate().map_err(config_error)?;
                Algorithm::Hs(hp)
            }
            "de" => {
                let d = DeParams::default();
                let hp = DeParams {
                    ai: self.ai.unwrap_or(d.ai),
                    cr: self.cr.unwrap_or(d.cr),
                    pop_size: self.pop_size.unwrap_or(d.pop_size),
                };
                hp.validate().map_err(config_error)?;
                Algorithm::De(hp)
            }
            "sa" => {
                let d = SaParams::default();
                let hp = SaParams {
                    alpha: self.alpha.unwrap_or(d.alpha),
                    steps_per_temp: self.steps_per_temp.unwrap_or(d.steps_per_temp),
                    initial_acceptance: self.initial_acceptance.unwrap_or(d.initial_acceptance),
                    n_initial: self.n_initial.unwrap_or(d.n_initial),
                    extra_move_prob: self.crossover_perc.unwrap_or(d.extra_move_prob),
                };
                hp.validate().map_err(config_error)?;
                Algorithm::Sa(hp)
            }
            other => return Err(config_error(format!("unknown algorithm {other}; use hs, de or sa"))),
        };
        Ok(alg)
    }

    fn base_constraints(&self) -> Result<ConstraintSet, CliError> {
        let levels = match &self.complexity_level {
            ComplexityLevel::Max(m) => levels_up_to(*m),
            ComplexityLevel::List(v) => expand_level_codes(v),
        }
        .map_err(config_error)?;
        if levels.is_empty() {
            return Err(config_error("complexity_level admits no level"));
        }
        let model_types = self
            .model_types
            .codes()
            .into_iter()
            .map(Dispersion::from_code)
            .collect::<Result<Vec<_>, _>>()
            .map_err(config_error)?;
        if model_types.is_empty() {
            return Err(config_error("model_types is empty"));
        }
        Ok(ConstraintSet {
            default: FactorConstraint {
                levels,
                transformations: parse_transformations(&self.transformations)?,
                distributions: parse_distributions(&self.distributions)?,
            },
            factors: BTreeMap::new(),
            model_types,
            max_characteristics: self.max_characteristics,
        })
    }

    /// Full constraint set for a dataset with the given candidate factors.
    pub fn constraints(&self, factor_names: &[&str]) -> Result<ConstraintSet, CliError> {
        parse_constraints(&self.variable_decisions, self.base_constraints()?, factor_names)
    }
}

fn parse_transformations(v: &[String]) -> Result<Vec<Transformation>, CliError> {
    let mut out: Vec<Transformation> = v.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(config_error)?;
    out.dedup();
    if out.is_empty() {
        return Err(config_error("_transformations is empty"));
    }
    Ok(out)
}

fn parse_distributions(v: &[String]) -> Result<Vec<Distribution>, CliError> {
    let out: Vec<Distribution> = v.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(config_error)?;
    if out.is_empty() {
        return Err(config_error("_distributions is empty"));
    }
    Ok(out)
}

/// Applies a `variable_decisions` block on top of `base`. Factors without an entry keep the
/// global settings; empty transformation or distribution lists in an entry inherit them too.
pub fn parse_constraints(
    block: &BTreeMap<String, VariableDecision>,
    mut base: ConstraintSet,
    factor_names: &[&str],
) -> Result<ConstraintSet, CliError> {
    for (name, d) in block {
        if !factor_names.contains(&name.as_str()) {
            return Err(config_error(format!("variable_decisions: unknown factor {name}")));
        }
        let levels: Vec<FactorLevel> = expand_level_codes(&d.levels).map_err(config_error)?;
        if levels.is_empty() {
            return Err(config_error(format!("variable_decisions: {name} has no admissible level")));
        }
        let transformations = if d.transformations.is_empty() {
            base.default.transformations.clone()
        } else {
            parse_transformations(&d.transformations)?
        };
        let distributions = if d.distributions.is_empty() {
            base.default.distributions.clone()
        } else {
            parse_distributions(&d.distributions)?
        };
        base.factors.insert(
            name.clone(),
            FactorConstraint {
                levels,
                transformations,
                distributions,
            },
        );
    }
    Ok(base)
}
