//! Resolution of command-line flags over configuration-file values into the
//! library's configuration types.

use std::path::PathBuf;

use lcga::simulate::ScenarioConfig;
use lcga::{Backend, CategoryMap, Convergence, Family, FitConfig, ModelSpec, Scenario, SelectionRule};
use serde::Serialize;

use crate::cli::{Common, ConvergenceArg, EstimationArgs, FamilyArg, ModeArg, ModelArgs, RuleArg};
use crate::config::{FileConfig, FitSection, GridSection, ModelSection, ScenarioSection};
use crate::error::{CliError, CliResult};

pub const DEFAULT_VISIT_CAP: usize = 12;
pub const DEFAULT_POLY_ORDER: usize = 2;
pub const DEFAULT_CLASS_RANGE: (usize, usize) = (1, 4);
pub const DEFAULT_CLASSES: usize = 3;
pub const DEFAULT_SCORE_BOUNDS: (i32, i32) = (0, 10);
pub const DEFAULT_PROBIT_CATEGORIES: usize = 3;
pub const DEFAULT_REPLICATES: usize = 10;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

/// Model template and class range after merging flags and config.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSettings {
    pub spec: ModelSpec,
    pub k_min: usize,
    pub k_max: usize,
    pub rule: SelectionRule,
    pub categorize: Option<CategoryMap>,
    /// Bounds of the scores as they appear in the input file.
    pub raw_bounds: (i32, i32),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataSettings {
    pub path: PathBuf,
    pub visit_cap: usize,
    pub n_periods: Option<u32>,
}

pub fn out_dir(common: &Common, cfg: &FileConfig) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| cfg.output.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn workers(common: &Common, cfg: &FileConfig) -> Option<usize> {
    common.workers.or(cfg.study.workers)
}

pub fn parse_family(text: &str) -> CliResult<FamilyArg> {
    match text {
        "cnorm" => Ok(FamilyArg::Cnorm),
        "probit" => Ok(FamilyArg::Probit),
        other => Err(input(format!("unknown family `{other}` (expected cnorm or probit)"))),
    }
}

pub fn parse_rule(text: &str) -> CliResult<RuleArg> {
    match text {
        "ladder" => Ok(RuleArg::Ladder),
        "min_bic" | "min-bic" => Ok(RuleArg::MinBic),
        other => Err(input(format!("unknown rule `{other}` (expected ladder or min_bic)"))),
    }
}

/// Accepts `a..b`, `a..=b`, `a-b` and `a:b`.
pub fn parse_class_range(text: &str) -> CliResult<(usize, usize)> {
    let bad = || input(format!("invalid class range `{text}` (expected e.g. 1..4)"));
    let (a, b) = ["..=", "..", "-", ":"]
        .iter()
        .find_map(|sep| text.split_once(sep))
        .ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || b < a {
        return Err(bad());
    }
    Ok((a, b))
}

fn rule_of(arg: RuleArg) -> SelectionRule {
    match arg {
        RuleArg::Ladder => SelectionRule::BayesFactorLadder,
        RuleArg::MinBic => SelectionRule::MinBic,
    }
}

fn family_of(arg: FamilyArg, categorize: Option<&CategoryMap>, m: &ModelSection) -> CliResult<Family> {
    Ok(match arg {
        FamilyArg::Cnorm => {
            let (min, max) = match categorize {
                Some(map) => (1, map.n_categories() as i32),
                None => (
                    m.score_min.unwrap_or(DEFAULT_SCORE_BOUNDS.0),
                    m.score_max.unwrap_or(DEFAULT_SCORE_BOUNDS.1),
                ),
            };
            Family::CensoredNormal { min, max }
        }
        FamilyArg::Probit => {
            let n_categories = match categorize {
                Some(map) => {
                    if let Some(n) = m.n_categories.filter(|&n| n != map.n_categories()) {
                        return Err(input(format!(
                            "n_categories = {n} conflicts with the {}-level categorization",
                            map.n_categories()
                        )));
                    }
                    map.n_categories()
                }
                None => m.n_categories.unwrap_or(DEFAULT_PROBIT_CATEGORIES),
            };
            Family::CumulativeProbit { n_categories }
        }
    })
}

/// `single` asks for one class count (the `fit` command); otherwise a range.
pub fn model_settings(args: &ModelArgs, common: &Common, cfg: &FileConfig, single: bool) -> CliResult<ModelSettings> {
    let m = &cfg.model;
    let categorize_on = common.categorize.map(|s| s.on()).or(m.categorize).unwrap_or(false);
    let categorize = categorize_on.then(CategoryMap::default);
    let family_arg = match args.family {
        Some(f) => f,
        None => m
            .family
            .as_deref()
            .map(parse_family)
            .transpose()?
            .unwrap_or(FamilyArg::Cnorm),
    };
    let family = family_of(family_arg, categorize.as_ref(), m)?;
    let (k_min, k_max) = if let Some(k) = args.classes {
        (k, k)
    } else if let Some(r) = &args.class_range {
        parse_class_range(r)?
    } else if let Some(k) = m.classes.filter(|_| single || m.class_range.is_none()) {
        (k, k)
    } else if let Some([a, b]) = m.class_range {
        (a, b)
    } else if single {
        (DEFAULT_CLASSES, DEFAULT_CLASSES)
    } else {
        DEFAULT_CLASS_RANGE
    };
    if k_min == 0 || k_max < k_min {
        return Err(input(format!("invalid class range {k_min}..{k_max}")));
    }
    if single && k_min != k_max {
        return Err(input("fit takes a single class count; use select for a range"));
    }
    let rule = match args.rule {
        Some(r) => r,
        None => m
            .rule
            .as_deref()
            .map(parse_rule)
            .transpose()?
            .unwrap_or(RuleArg::Ladder),
    };
    let covariates = args.covariates.map(|s| s.on()).or(m.covariates).unwrap_or(false);
    let poly_order = args.poly_order.or(m.poly_order).unwrap_or(DEFAULT_POLY_ORDER);
    let spec = ModelSpec::new(family, k_min, poly_order, covariates)?;
    let raw_bounds = match &categorize {
        Some(map) => (map.domain_min, map.domain_max()),
        None => family.outcome_range(),
    };
    Ok(ModelSettings {
        spec,
        k_min,
        k_max,
        rule: rule_of(rule),
        categorize,
        raw_bounds,
    })
}

pub fn fit_config(args: &EstimationArgs, seed: Option<u64>, f: &FitSection) -> CliResult<FitConfig> {
    let defaults = FitConfig::default();
    let mode = match args.mode {
        Some(m) => m,
        None => match f.mode.as_deref() {
            None => ModeArg::Em,
            Some("em") => ModeArg::Em,
            Some("direct") => ModeArg::Direct,
            Some(other) => return Err(input(format!("unknown mode `{other}` (expected em or direct)"))),
        },
    };
    let convergence = match args.convergence {
        Some(c) => c,
        None => match f.convergence.as_deref() {
            None => ConvergenceArg::Loglik,
            Some("loglik") => ConvergenceArg::Loglik,
            Some("triple") => ConvergenceArg::Triple,
            Some(other) => {
                return Err(input(format!(
                    "unknown convergence `{other}` (expected loglik or triple)"
                )))
            }
        },
    };
    let tol_ll = f.tol_ll.unwrap_or(Convergence::DEFAULT_TOL_LL);
    let convergence = match convergence {
        ConvergenceArg::Loglik => Convergence::LoglikOnly { tol_ll },
        ConvergenceArg::Triple => Convergence::Triple {
            tol_param: f.tol_param.unwrap_or(Convergence::DEFAULT_TOL_PARAM),
            tol_ll,
            tol_grad: f.tol_grad.unwrap_or(Convergence::DEFAULT_TOL_GRAD),
        },
    };
    let config = FitConfig {
        n_starts: args.starts.or(f.starts).unwrap_or(defaults.n_starts),
        max_iter: args.max_iter.or(f.max_iter).unwrap_or(defaults.max_iter),
        mode: match mode {
            ModeArg::Em => Backend::Em,
            ModeArg::Direct => Backend::Direct,
        },
        convergence,
        perturbation_scale: f.perturbation_scale.unwrap_or(defaults.perturbation_scale),
        seed: seed.or(f.seed).unwrap_or(defaults.seed),
    };
    config.validate()?;
    Ok(config)
}

pub fn data_settings(data: Option<&PathBuf>, cfg: &FileConfig) -> CliResult<DataSettings> {
    let path = data
        .cloned()
        .or_else(|| cfg.input.data.clone())
        .ok_or_else(|| input("no input data: pass --data or set [input] data"))?;
    let visit_cap = cfg.input.visit_cap.unwrap_or(DEFAULT_VISIT_CAP);
    if visit_cap == 0 {
        return Err(input("visit_cap must be at least 1"));
    }
    Ok(DataSettings {
        path,
        visit_cap,
        n_periods: cfg.input.n_periods,
    })
}

pub fn scenario_config(
    scenario: Option<u8>,
    counts: Option<&[usize]>,
    seed: Option<u64>,
    s: &ScenarioSection,
) -> CliResult<ScenarioConfig> {
    let which = match scenario.or(s.scenario).unwrap_or(1) {
        1 => Scenario::One,
        2 => Scenario::Two,
        other => return Err(input(format!("scenario must be 1 or 2, got {other}"))),
    };
    let mut c = ScenarioConfig::for_scenario(which);
    if let Some(counts) = counts {
        if counts.len() != 3 {
            return Err(input(format!("--counts needs three values, got {}", counts.len())));
        }
        c.n_per_group = [counts[0], counts[1], counts[2]];
    } else if let Some(counts) = s.counts {
        c.n_per_group = counts;
    }
    if let Some(v) = s.n_periods {
        c.n_periods = v;
    }
    if let Some(v) = s.beta_tr {
        c.beta_tr = v;
    }
    if let Some(v) = s.group_covariates {
        c.group_covariates = v;
    }
    if let Some(v) = s.trend {
        c.trend = v;
    }
    if let Some(v) = s.rate_floor {
        c.rate_floor = v;
    }
    if let Some(v) = s.noise_sd {
        c.noise_sd = v;
    }
    c.seed = seed.or(s.seed).unwrap_or(0);
    c.validate()?;
    Ok(c)
}

/// Study grid: the `[[grid]]` cells, each inheriting unset fields from the
/// resolved `[model]` settings, or a single cell equal to that model.
pub fn study_grid(base: &ModelSettings, cells: &[GridSection]) -> CliResult<Vec<lcga::study::GridCell>> {
    let base_cell = || lcga::study::GridCell {
        label: "model".into(),
        spec: base.spec,
        k_min: base.k_min,
        k_max: base.k_max,
        rule: base.rule,
    };
    if cells.is_empty() {
        return Ok(vec![base_cell()]);
    }
    cells
        .iter()
        .map(|g| {
            let family = match g.family.as_deref().map(parse_family).transpose()? {
                None => base.spec.family,
                Some(arg) => family_of(arg, base.categorize.as_ref(), &ModelSection::default())?,
            };
            let (k_min, k_max) = match g.class_range {
                Some([a, b]) => (a, b),
                None => (base.k_min, base.k_max),
            };
            let rule = match g.rule.as_deref() {
                Some(r) => rule_of(parse_rule(r)?),
                None => base.rule,
            };
            let spec = ModelSpec::new(
                family,
                k_min.max(1),
                g.poly_order.unwrap_or(base.spec.poly_order),
                g.covariates.unwrap_or(base.spec.membership_covariates),
            )?;
            Ok(lcga::study::GridCell {
                label: g.label.clone(),
                spec,
                k_min,
                k_max,
                rule,
            })
        })
        .collect()
}
