//! Run manifest and output writers. Every file written carries the
//! manifest hash: CSV files on a leading `#` comment line, JSON files in a
//! `manifest_sha256` key.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

fn out_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

#[derive(Clone, Debug, Serialize)]
pub struct FitTime {
    pub label: String,
    pub seconds: f64,
}

/// Identity of a run. The hash covers the command, software version, seed,
/// resolved configuration and input-file digests, so reruns with the same
/// inputs reproduce it; timestamps and wall times are recorded beside it.
pub struct Run {
    dir: PathBuf,
    identity: Value,
    hash: String,
    started_unix: f64,
    outputs: Vec<String>,
    fit_times: Vec<FitTime>,
}

impl Run {
    pub fn start(
        dir: &Path,
        command: &str,
        seed: u64,
        config: &impl Serialize,
        inputs: &[(&Path, String)],
    ) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
        let config = serde_json::to_value(config).map_err(|e| CliError::Output(e.to_string()))?;
        let inputs: Vec<Value> = inputs
            .iter()
            .map(|(path, digest)| json!({ "file": path.file_name().map(|n| n.to_string_lossy()), "sha256": digest }))
            .collect();
        let identity = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": config,
            "inputs": inputs,
        });
        let hash = sha256_hex(identity.to_string().as_bytes());
        Ok(Self {
            dir: dir.to_path_buf(),
            identity,
            hash,
            started_unix: unix_now(),
            outputs: Vec::new(),
            fit_times: Vec::new(),
        })
    }

    pub fn record_fit_time(&mut self, label: impl Into<String>, seconds: f64) {
        self.fit_times.push(FitTime {
            label: label.into(),
            seconds,
        });
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.dir.join(name)
    }

    /// CSV writer whose first line is the manifest-hash comment.
    pub fn csv(&mut self, name: &str) -> CliResult<CsvOut> {
        self.csv_with_comments(name, &[])
    }

    /// As [`Run::csv`], followed by extra `#` metadata lines.
    pub fn csv_with_comments(&mut self, name: &str, comments: &[String]) -> CliResult<CsvOut> {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| out_err(&path, e))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "# manifest_sha256={}", self.hash).map_err(|e| out_err(&path, e))?;
        for line in comments {
            writeln!(buf, "# {line}").map_err(|e| out_err(&path, e))?;
        }
        Ok(CsvOut {
            writer: csv::Writer::from_writer(buf),
            path,
        })
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> CliResult<()> {
        let path = self.path(name);
        let mut value = serde_json::to_value(value).map_err(|e| out_err(&path, e))?;
        if let Value::Object(map) = &mut value {
            map.insert("manifest_sha256".into(), Value::String(self.hash.clone()));
        }
        write_json(&path, &value)
    }

    pub fn finish(mut self) -> CliResult<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut manifest = self.identity.clone();
        let map = manifest.as_object_mut().expect("identity is an object");
        map.insert("manifest_sha256".into(), Value::String(self.hash.clone()));
        map.insert("started_unix".into(), json!(self.started_unix));
        map.insert("finished_unix".into(), json!(unix_now()));
        map.insert("fit_wall_seconds".into(), json!(std::mem::take(&mut self.fit_times)));
        map.insert("outputs".into(), json!(self.outputs));
        write_json(&path, &manifest)
    }
}

fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| out_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| out_err(path, e))
}

pub struct CsvOut {
    writer: csv::Writer<BufWriter<File>>,
    path: PathBuf,
}

impl CsvOut {
    pub fn row<I, T>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| out_err(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.writer.flush().map_err(|e| out_err(&self.path, e))
    }
}

/// Shortest round-trip formatting; `NA` for non-finite values.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}
