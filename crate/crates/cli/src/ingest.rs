//! Long-format CSV ingestion: one row per subject visit.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use lcga::{LongitudinalDataset, SubjectRecord};
use serde::Serialize;

use crate::error::{CliError, CliResult};

const REQUIRED: [&str; 3] = ["subject_id", "time", "score"];
const TRUE_CLASS: &str = "true_class";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IngestReport {
    pub n_rows: usize,
    pub n_subjects_read: usize,
    /// Subjects dropped because a row had a missing required field.
    pub n_excluded: usize,
    /// Visits dropped by the per-subject cap.
    pub n_visits_capped: usize,
    pub covariate_names: Vec<String>,
}

#[derive(Debug)]
pub struct Ingested {
    pub data: LongitudinalDataset,
    pub report: IngestReport,
}

#[derive(Default)]
struct Pending {
    visits: Vec<(u32, i32)>,
    covariates: Option<Vec<f64>>,
    true_class: Option<usize>,
    excluded: bool,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na")
}

fn bad(line: u64, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("line {line}: {msg}"))
}

pub fn ingest_path(
    path: &Path,
    score_bounds: (i32, i32),
    visit_cap: usize,
    n_periods: Option<u32>,
) -> CliResult<Ingested> {
    let file =
        std::fs::File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    ingest(file, score_bounds, visit_cap, n_periods)
}

/// Parses `subject_id,time,score[,z1..zp][,true_class]`. Lines starting
/// with `#` are comments. A subject with any missing required value is
/// excluded and counted; a present but unparsable value is an error. Each
/// subject keeps its `visit_cap` earliest visits.
pub fn ingest<R: Read>(
    reader: R,
    score_bounds: (i32, i32),
    visit_cap: usize,
    n_periods: Option<u32>,
) -> CliResult<Ingested> {
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = csv
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read header: {e}")))?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < 3 || names[..3] != REQUIRED {
        return Err(CliError::Input(format!(
            "header must start with subject_id,time,score; found `{}`",
            names.join(",")
        )));
    }
    let class_col = names.iter().position(|&n| n == TRUE_CLASS);
    if class_col.is_some_and(|c| c != names.len() - 1) {
        return Err(CliError::Input("true_class must be the last column".into()));
    }
    let cov_cols: Vec<usize> = (3..class_col.unwrap_or(names.len())).collect();
    let covariate_names = cov_cols.iter().map(|&c| names[c].to_string()).collect();

    let mut order: Vec<String> = Vec::new();
    let mut subjects: HashMap<String, Pending> = HashMap::new();
    let mut n_rows = 0;
    for record in csv.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            bad(line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        n_rows += 1;
        let id = record.get(0).unwrap_or("").to_string();
        if is_missing(&id) {
            return Err(bad(line, "missing subject_id"));
        }
        let entry = subjects.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Pending::default()
        });
        let required: Vec<&str> = [1, 2].iter().chain(&cov_cols).map(|&c| &record[c]).collect();
        if required.iter().any(|f| is_missing(f)) {
            entry.excluded = true;
            continue;
        }
        let time: u32 = record[1]
            .parse()
            .map_err(|_| bad(line, format!("time `{}` is not a positive integer", &record[1])))?;
        if time == 0 {
            return Err(bad(line, "time must be at least 1"));
        }
        let score: i32 = record[2]
            .parse()
            .map_err(|_| bad(line, format!("score `{}` is not an integer", &record[2])))?;
        if score < score_bounds.0 || score > score_bounds.1 {
            return Err(bad(
                line,
                format!("score {score} outside [{}, {}]", score_bounds.0, score_bounds.1),
            ));
        }
        let covariates = cov_cols
            .iter()
            .map(|&c| {
                record[c]
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(line, format!("{} `{}` is not a finite number", names[c], &record[c])))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        match &entry.covariates {
            None => entry.covariates = Some(covariates),
            Some(prev) if *prev != covariates => {
                return Err(bad(
                    line,
                    format!("subject {id}: baseline covariates change between rows"),
                ))
            }
            Some(_) => {}
        }
        if let Some(c) = class_col {
            if !is_missing(&record[c]) {
                let label: usize = record[c]
                    .parse()
                    .ok()
                    .filter(|&v: &usize| v >= 1)
                    .ok_or_else(|| bad(line, format!("true_class `{}` is not a positive integer", &record[c])))?;
                match entry.true_class {
                    Some(prev) if prev != label - 1 => {
                        return Err(bad(line, format!("subject {id}: true_class changes between rows")))
                    }
                    _ => entry.true_class = Some(label - 1),
                }
            }
        }
        if entry.visits.iter().any(|v| v.0 == time) {
            return Err(bad(line, format!("subject {id}: duplicate time {time}")));
        }
        entry.visits.push((time, score));
    }

    let n_subjects_read = order.len();
    let mut n_excluded = 0;
    let mut n_visits_capped = 0;
    let mut records = Vec::new();
    for id in order {
        let mut p = subjects.remove(&id).expect("recorded subject");
        if p.excluded || p.visits.is_empty() {
            n_excluded += 1;
            continue;
        }
        p.visits.sort_by_key(|v| v.0);
        if p.visits.len() > visit_cap {
            n_visits_capped += p.visits.len() - visit_cap;
            p.visits.truncate(visit_cap);
        }
        records.push(SubjectRecord {
            subject_id: id,
            times: p.visits.iter().map(|v| v.0).collect(),
            scores: p.visits.iter().map(|v| v.1).collect(),
            covariates: p.covariates.unwrap_or_default(),
            true_class: p.true_class,
        });
    }
    if records.is_empty() {
        return Err(CliError::Input(format!(
            "no subjects remain after excluding {n_excluded} of {n_subjects_read} with missing values"
        )));
    }
    let observed_max = records
        .iter()
        .filter_map(|s| s.times.last().copied())
        .max()
        .unwrap_or(1);
    let max_time = match n_periods {
        Some(t) if t < observed_max => {
            return Err(CliError::Input(format!("time {observed_max} exceeds n_periods = {t}")))
        }
        Some(t) => t,
        None => observed_max,
    };
    let data = LongitudinalDataset::new(records, max_time, score_bounds)?;
    Ok(Ingested {
        data,
        report: IngestReport {
            n_rows,
            n_subjects_read,
            n_excluded,
            n_visits_capped,
            covariate_names,
        },
    })
}
