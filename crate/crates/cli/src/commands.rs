//! The five subcommands.

use std::path::{Path, PathBuf};

use lcga::selection::SelectionReport;
use lcga::simulate::{simulate, GROUP_NAMES};
use lcga::study::{run_replicate_study, StudyConfig, StudyOutcome};
use lcga::{
    categorize, class_search, correct_classification_rate, multi_start_fit, par, posterior_from_params,
    posterior_probs, probit_category_probs, Family, FitResult, FitStatus, LongitudinalDataset, ModelSpec, ParameterSet,
    PosteriorMatrix,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cli::{FitArgs, PlotArgs, SimulateArgs, StudyArgs};
use crate::config::FileConfig;
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_path, IngestReport};
use crate::output::{file_sha256, num, Run};
use crate::settings::{self, DataSettings, ModelSettings, DEFAULT_REPLICATES};

pub const DATA_FILE: &str = "data.csv";
pub const FIT_FILE: &str = "fit.json";
pub const POSTERIOR_FILE: &str = "posterior.csv";
pub const SELECTION_FILE: &str = "selection.csv";
pub const SELECTION_JSON: &str = "selection.json";
pub const TRAJECTORY_FILE: &str = "mean-trajectory-per-class.csv";
pub const CATEGORY_FILE: &str = "category-probability-curves.csv";

/// Writes a dataset in the long format accepted by `--data`.
fn write_dataset(run: &mut Run, name: &str, data: &LongitudinalDataset) -> CliResult<()> {
    let mut out = run.csv(name)?;
    let p = data.covariate_dim();
    let with_truth = data.true_classes().is_some();
    let mut header = vec!["subject_id".to_string(), "time".into(), "score".into()];
    header.extend((1..=p).map(|j| format!("z{j}")));
    if with_truth {
        header.push("true_class".into());
    }
    out.row(&header)?;
    for s in data.subjects() {
        for (&t, &y) in s.times.iter().zip(&s.scores) {
            let mut row = vec![s.subject_id.clone(), t.to_string(), y.to_string()];
            row.extend(s.covariates.iter().map(|&z| num(z)));
            if with_truth {
                row.push(s.true_class.map_or(String::new(), |c| (c + 1).to_string()));
            }
            out.row(&row)?;
        }
    }
    out.finish()
}

pub fn simulate_cmd(args: &SimulateArgs) -> CliResult<()> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let scenario = settings::scenario_config(args.scenario, args.counts.as_deref(), args.common.seed, &cfg.scenario)?;
    let categorize_on = args
        .common
        .categorize
        .map(|s| s.on())
        .or(cfg.model.categorize)
        .unwrap_or(false);
    let map = categorize_on.then(lcga::CategoryMap::default);
    let data = par::with_workers(settings::workers(&args.common, &cfg), || simulate(&scenario))?;
    let data = match &map {
        Some(m) => categorize(&data, m)?,
        None => data,
    };
    let snapshot = json!({ "scenario": scenario, "categorize": map });
    let mut run = Run::start(
        &settings::out_dir(&args.common, &cfg),
        "simulate",
        scenario.seed,
        &snapshot,
        &[],
    )?;
    write_dataset(&mut run, DATA_FILE, &data)?;
    run.finish()
}

struct Loaded {
    data: LongitudinalDataset,
    report: IngestReport,
    digest: String,
    path: PathBuf,
}

fn load_data(ds: &DataSettings, model: &ModelSettings) -> CliResult<Loaded> {
    let ingested = ingest_path(&ds.path, model.raw_bounds, ds.visit_cap, ds.n_periods)?;
    let data = match &model.categorize {
        Some(map) => categorize(&ingested.data, map)?,
        None => ingested.data,
    };
    if model.spec.membership_covariates && data.covariate_dim() == 0 {
        return Err(CliError::Input(
            "covariates are on but the data has no covariate columns".into(),
        ));
    }
    Ok(Loaded {
        data,
        report: ingested.report,
        digest: file_sha256(&ds.path)?,
        path: ds.path.clone(),
    })
}

/// Everything a fit or class search needs after resolving flags and config.
struct FitJob {
    cfg: FileConfig,
    model: ModelSettings,
    fit: lcga::FitConfig,
    loaded: Loaded,
    out_dir: PathBuf,
    workers: Option<usize>,
}

fn prepare_fit_job(args: &FitArgs, single: bool) -> CliResult<FitJob> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let model = settings::model_settings(&args.model, &args.common, &cfg, single)?;
    let fit = settings::fit_config(&args.estimation, args.common.seed, &cfg.fit)?;
    let ds = settings::data_settings(args.data.as_ref(), &cfg)?;
    let loaded = load_data(&ds, &model)?;
    Ok(FitJob {
        out_dir: settings::out_dir(&args.common, &cfg),
        workers: settings::workers(&args.common, &cfg),
        cfg,
        model,
        fit,
        loaded,
    })
}

impl FitJob {
    fn start_run(&self, command: &str) -> CliResult<Run> {
        let snapshot = json!({
            "model": self.model,
            "fit": self.fit,
            "input": self.cfg.input,
        });
        Run::start(
            &self.out_dir,
            command,
            self.fit.seed,
            &snapshot,
            &[(self.loaded.path.as_path(), self.loaded.digest.clone())],
        )
    }
}

/// Parameters and fit summary as written to `fit.json`. Wall time goes to
/// the manifest so that this file is reproducible.
fn fit_document(fit: &FitResult, post: &PosteriorMatrix, data: &LongitudinalDataset, report: &IngestReport) -> Value {
    let mut doc = serde_json::to_value(fit).expect("fit results serialize");
    let map = doc.as_object_mut().expect("object");
    map.remove("wall_time");
    map.insert("status".into(), json!(fit.status.label()));
    map.insert("bic".into(), json!(fit.bic()));
    map.insert("aic".into(), json!(fit.aic()));
    map.insert("bic_sample_size".into(), json!("n_subjects"));
    map.insert("thresholds".into(), json!(fit.params.thresholds()));
    map.insert("sigma".into(), json!(fit.params.sigma()));
    map.insert("relative_entropy".into(), json!(post.relative_entropy));
    map.insert("ingest".into(), json!(report));
    let classes = data
        .true_classes()
        .and_then(|truth| correct_classification_rate(post, &truth).ok());
    map.insert("classification_vs_true_class".into(), json!(classes));
    doc
}

fn write_posterior(run: &mut Run, data: &LongitudinalDataset, post: &PosteriorMatrix) -> CliResult<()> {
    let mut out = run.csv(POSTERIOR_FILE)?;
    let k = post.n_classes();
    let mut header = vec!["subject_id".to_string()];
    header.extend((1..=k).map(|c| format!("p{c}")));
    header.push("modal_class".into());
    out.row(&header)?;
    for (s, (row, &modal)) in data.subjects().iter().zip(post.probs.iter().zip(&post.modal)) {
        let mut fields = vec![s.subject_id.clone()];
        fields.extend(row.iter().map(|&p| num(p)));
        fields.push((modal + 1).to_string());
        out.row(&fields)?;
    }
    out.finish()
}

fn write_fit_outputs(run: &mut Run, fit: &FitResult, loaded: &Loaded) -> CliResult<()> {
    let post = posterior_probs(fit, &fit.spec, &loaded.data)?;
    run.json(FIT_FILE, &fit_document(fit, &post, &loaded.data, &loaded.report))?;
    write_posterior(run, &loaded.data, &post)
}

pub fn fit_cmd(args: &FitArgs) -> CliResult<()> {
    let job = prepare_fit_job(args, true)?;
    let fit = par::with_workers(job.workers, || {
        multi_start_fit(&job.model.spec, &job.loaded.data, &job.fit)
    })?;
    let mut run = job.start_run("fit")?;
    run.record_fit_time(format!("K={}", fit.spec.n_classes), fit.wall_time.as_secs_f64());
    write_fit_outputs(&mut run, &fit, &job.loaded)?;
    run.finish()?;
    if fit.status == FitStatus::Converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "fit ended with status {} after {} iterations",
            fit.status, fit.n_iter
        )))
    }
}

fn write_selection(run: &mut Run, report: &SelectionReport) -> CliResult<()> {
    let meta = format!(
        "n_subjects={} n_observations={} bic_sample_size=n_subjects chosen_k={}",
        report.n_subjects,
        report.n_observations,
        report.chosen_k.map_or("none".into(), |k| k.to_string())
    );
    let mut out = run.csv_with_comments(SELECTION_FILE, &[meta])?;
    out.row(["nclass", "loglik", "n_params", "AIC", "BIC", "status"])?;
    for r in &report.rows {
        out.row([
            r.n_classes.to_string(),
            num(r.loglik),
            r.n_params.to_string(),
            num(r.aic),
            num(r.bic),
            r.status.label().to_string(),
        ])?;
    }
    out.finish()?;
    let two_dbic: Vec<Value> = report
        .rows
        .windows(2)
        .map(|w| {
            json!({
                "from": w[0].n_classes,
                "to": w[1].n_classes,
                "two_delta_bic": lcga::bayes_factor_2dbic(w[0].bic, w[1].bic),
            })
        })
        .collect();
    let mut doc = serde_json::to_value(report).expect("reports serialize");
    let map = doc.as_object_mut().expect("object");
    map.insert("bic_sample_size".into(), json!("n_subjects"));
    map.insert("consecutive_two_delta_bic".into(), json!(two_dbic));
    run.json(SELECTION_JSON, &doc)
}

pub fn select_cmd(args: &FitArgs) -> CliResult<()> {
    let job = prepare_fit_job(args, false)?;
    let m = &job.model;
    let report = par::with_workers(job.workers, || {
        class_search(&m.spec, &job.loaded.data, m.k_min, m.k_max, &job.fit, m.rule)
    })?;
    let mut run = job.start_run("select")?;
    for fit in &report.fits {
        run.record_fit_time(format!("K={}", fit.spec.n_classes), fit.wall_time.as_secs_f64());
    }
    write_selection(&mut run, &report)?;
    if let Some(fit) = report.chosen_fit() {
        write_fit_outputs(&mut run, fit, &job.loaded)?;
    }
    run.finish()?;
    match report.chosen_k {
        Some(_) => Ok(()),
        None => Err(CliError::NotConverged(format!(
            "no class count in {}..{} converged",
            m.k_min, m.k_max
        ))),
    }
}

fn write_study(run: &mut Run, cfg: &StudyConfig, out: &StudyOutcome) -> CliResult<()> {
    let mut rows = run.csv("replicates.csv")?;
    rows.row([
        "replicate",
        "seed",
        "cell",
        "nclass",
        "loglik",
        "n_params",
        "AIC",
        "BIC",
        "status",
        "chosen",
        "error",
    ])?;
    let mut cells: Vec<_> = out.cells.iter().collect();
    cells.sort_by_key(|c| (c.replicate, c.cell));
    for c in &cells {
        let label = &cfg.grid[c.cell].label;
        if let Some(err) = &c.error {
            let mut fields = vec![c.replicate.to_string(), c.seed.to_string(), label.clone()];
            fields.extend(std::iter::repeat_n(String::new(), 7));
            fields.push(err.clone());
            rows.row(&fields)?;
        }
        for r in &c.rows {
            rows.row([
                c.replicate.to_string(),
                c.seed.to_string(),
                label.clone(),
                r.n_classes.to_string(),
                num(r.loglik),
                r.n_params.to_string(),
                num(r.aic),
                num(r.bic),
                r.status.label().to_string(),
                (c.chosen_k == Some(r.n_classes)).to_string(),
                String::new(),
            ])?;
        }
    }
    rows.finish()?;

    let mut chosen = run.csv("chosen-k.csv")?;
    chosen.row(["cell", "nclass", "count", "fraction"])?;
    for a in &out.aggregates {
        for &(k, count) in &a.chosen_counts {
            chosen.row([
                a.label.clone(),
                k.to_string(),
                count.to_string(),
                num(a.chosen_fraction(k)),
            ])?;
        }
        let n = a.n_replicates as f64;
        chosen.row([
            a.label.clone(),
            "none".into(),
            a.n_unselected.to_string(),
            num(a.n_unselected as f64 / n),
        ])?;
        chosen.row([
            a.label.clone(),
            "failed".into(),
            a.n_failed.to_string(),
            num(a.n_failed as f64 / n),
        ])?;
    }
    chosen.finish()?;

    let mut bic = run.csv("mean-bic.csv")?;
    bic.row(["cell", "nclass", "mean_loglik", "mean_BIC", "n_converged"])?;
    for a in &out.aggregates {
        for &(k, mean_bic, mean_ll, n) in &a.mean_bic {
            bic.row([
                a.label.clone(),
                k.to_string(),
                num(mean_ll),
                num(mean_bic),
                n.to_string(),
            ])?;
        }
    }
    bic.finish()?;

    let mut rates = run.csv("classification-rates.csv")?;
    rates.row(["cell", "group", "mean_rate", "n_scored"])?;
    for a in &out.aggregates {
        for (g, &r) in a.mean_rates.iter().enumerate() {
            let name = GROUP_NAMES
                .get(g)
                .map_or_else(|| format!("class{}", g + 1), |s| s.to_string());
            rates.row([a.label.clone(), name, num(r), a.n_scored.to_string()])?;
        }
        rates.row([
            a.label.clone(),
            "overall".into(),
            num(a.mean_overall_rate),
            a.n_scored.to_string(),
        ])?;
    }
    rates.finish()?;

    let mut timing = run.csv("timing.csv")?;
    timing.row(["cell", "nclass", "mean_seconds", "max_seconds", "n_fits"])?;
    for t in &out.timing {
        timing.row([
            t.label.clone(),
            t.n_classes.to_string(),
            num(t.mean_seconds),
            num(t.max_seconds),
            t.n_fits.to_string(),
        ])?;
    }
    timing.finish()?;

    run.json(
        "study.json",
        &json!({
            "aggregates": out.aggregates,
            "failure_fraction": out.failure_fraction,
            "max_failure_fraction": lcga::study::MAX_FAILURE_FRACTION,
        }),
    )
}

pub fn study_cmd(args: &StudyArgs) -> CliResult<()> {
    let cfg = FileConfig::load(args.common.config.as_deref())?;
    let model = settings::model_settings(&args.model, &args.common, &cfg, false)?;
    let fit = settings::fit_config(&args.estimation, None, &cfg.fit)?;
    let scenario = settings::scenario_config(args.scenario, args.counts.as_deref(), None, &cfg.scenario)?;
    let master_seed = args.common.seed.or(cfg.study.master_seed).unwrap_or(0);
    let study = StudyConfig {
        scenario,
        categorize: model.categorize.clone(),
        grid: settings::study_grid(&model, &cfg.grid)?,
        fit,
        replicates: args.replicates.or(cfg.study.replicates).unwrap_or(DEFAULT_REPLICATES),
        master_seed,
    };
    study.validate()?;
    let workers = settings::workers(&args.common, &cfg);
    let outcome = run_replicate_study(&study, workers)?;
    let mut run = Run::start(
        &settings::out_dir(&args.common, &cfg),
        "study",
        master_seed,
        &study,
        &[],
    )?;
    for c in &outcome.cells {
        for (r, s) in c.rows.iter().zip(&c.fit_seconds) {
            run.record_fit_time(
                format!(
                    "replicate={} cell={} K={}",
                    c.replicate, study.grid[c.cell].label, r.n_classes
                ),
                *s,
            );
        }
    }
    write_study(&mut run, &study, &outcome)?;
    run.finish()?;
    if outcome.too_many_failures() {
        Err(CliError::NotConverged(format!(
            "{:.1}% of replicate cells failed (limit {:.0}%)",
            100.0 * outcome.failure_fraction,
            100.0 * lcga::study::MAX_FAILURE_FRACTION
        )))
    } else {
        Ok(())
    }
}

/// The parts of `fit.json` needed to evaluate curves.
#[derive(Debug, Deserialize, Serialize)]
pub struct StoredFit {
    pub spec: ModelSpec,
    pub params: ParameterSet,
}

fn read_stored_fit(path: &Path) -> CliResult<StoredFit> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let stored: StoredFit =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    stored.spec.validate()?;
    Ok(stored)
}

/// Fitted class means and, with data, the observed mean score of the
/// subjects modally assigned to each class.
fn write_trajectories(
    run: &mut Run,
    stored: &StoredFit,
    data: Option<&LongitudinalDataset>,
    periods: u32,
) -> CliResult<()> {
    let k = stored.spec.n_classes;
    let observed = match data {
        Some(d) => {
            let post = posterior_from_params(&stored.params, &stored.spec, d)?;
            let mut sums = vec![vec![(0.0, 0usize); periods as usize]; k];
            for (s, &c) in d.subjects().iter().zip(&post.modal) {
                for (&t, &y) in s.times.iter().zip(&s.scores) {
                    let cell = &mut sums[c][t as usize - 1];
                    cell.0 += y as f64;
                    cell.1 += 1;
                }
            }
            Some(sums)
        }
        None => None,
    };
    let mut out = run.csv(TRAJECTORY_FILE)?;
    out.row(["class", "time", "fitted_mean", "observed_mean", "n_observed"])?;
    for c in 0..k {
        for t in 1..=periods {
            let (obs, n) = match &observed {
                Some(sums) => {
                    let (s, n) = sums[c][t as usize - 1];
                    (if n > 0 { num(s / n as f64) } else { "NA".into() }, n.to_string())
                }
                None => ("NA".into(), "0".into()),
            };
            out.row([
                (c + 1).to_string(),
                t.to_string(),
                num(stored.params.mean(c, t as f64)),
                obs,
                n,
            ])?;
        }
    }
    out.finish()
}

fn write_category_curves(run: &mut Run, stored: &StoredFit, periods: u32) -> CliResult<()> {
    let Some(eta) = stored.params.thresholds() else {
        return Ok(());
    };
    let m = eta.len() + 1;
    let mut out = run.csv(CATEGORY_FILE)?;
    let mut header = vec!["class".to_string(), "time".into()];
    header.extend((1..=m).map(|j| format!("p{j}")));
    out.row(&header)?;
    for c in 0..stored.spec.n_classes {
        for t in 1..=periods {
            let probs = probit_category_probs(&eta, stored.params.mean(c, t as f64))?;
            let mut row = vec![(c + 1).to_string(), t.to_string()];
            row.extend(probs.iter().map(|&p| num(p)));
            out.row(&row)?;
        }
    }
    out.finish()
}

pub fn plotdata_cmd(args: &PlotArgs) -> CliResult<()> {
    let fa = &args.fit;
    let cfg = FileConfig::load(fa.common.config.as_deref())?;
    let out_dir = settings::out_dir(&fa.common, &cfg);
    let data_given = fa.data.is_some() || cfg.input.data.is_some();
    let (stored, loaded, mut run) = match &args.fit_file {
        Some(path) => {
            let stored = read_stored_fit(path)?;
            let mut inputs = vec![(path.as_path(), file_sha256(path)?)];
            let loaded = if data_given {
                let model = ModelSettings {
                    spec: stored.spec,
                    k_min: stored.spec.n_classes,
                    k_max: stored.spec.n_classes,
                    rule: lcga::SelectionRule::BayesFactorLadder,
                    categorize: settings::model_settings(&fa.model, &fa.common, &cfg, false)?.categorize,
                    raw_bounds: (0, 0),
                };
                let model = ModelSettings {
                    raw_bounds: match &model.categorize {
                        Some(map) => (map.domain_min, map.domain_max()),
                        None => stored.spec.family.outcome_range(),
                    },
                    ..model
                };
                Some(load_data(&settings::data_settings(fa.data.as_ref(), &cfg)?, &model)?)
            } else {
                None
            };
            if let Some(l) = &loaded {
                inputs.push((l.path.as_path(), l.digest.clone()));
            }
            let snapshot = json!({ "fit": stored, "input": cfg.input });
            let run = Run::start(&out_dir, "plotdata", 0, &snapshot, &inputs)?;
            (stored, loaded, run)
        }
        None => {
            let job = prepare_fit_job(fa, true)?;
            let fit = par::with_workers(job.workers, || {
                multi_start_fit(&job.model.spec, &job.loaded.data, &job.fit)
            })?;
            let mut run = job.start_run("plotdata")?;
            run.record_fit_time(format!("K={}", fit.spec.n_classes), fit.wall_time.as_secs_f64());
            write_fit_outputs(&mut run, &fit, &job.loaded)?;
            let stored = StoredFit {
                spec: fit.spec,
                params: fit.params.clone(),
            };
            (stored, Some(job.loaded), run)
        }
    };
    if let Some(l) = &loaded {
        stored.params.validate(&stored.spec, l.data.covariate_dim())?;
        if let Family::CumulativeProbit { n_categories } = stored.spec.family {
            if l.data.score_bounds() != (1, n_categories as i32) {
                return Err(CliError::Input(
                    "data categories do not match the stored probit model".into(),
                ));
            }
        }
    }
    let periods = match &loaded {
        Some(l) => l.data.max_time(),
        None => stored.params.time_scale.round().max(1.0) as u32,
    };
    write_trajectories(&mut run, &stored, loaded.as_ref().map(|l| &l.data), periods)?;
    write_category_curves(&mut run, &stored, periods)?;
    run.finish()
}
