use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use layerscope::cnn::{argmax, Metrics};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Context;
use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Summary of one subcommand run. Everything except `timings` is a pure
/// function of the config bytes, flags and inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub dataset_sizes: BTreeMap<String, usize>,
    pub metrics: serde_json::Value,
    pub warnings: Vec<String>,
    /// Files written, relative to the output root where possible.
    pub outputs: Vec<String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, ctx: &Context) -> Self {
        Self {
            command: command.into(),
            config_hash: ctx.config_hash.clone(),
            seeds: BTreeMap::from([("seed".to_string(), ctx.seed)]),
            dataset_sizes: BTreeMap::new(),
            metrics: serde_json::Value::Null,
            warnings: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.timings.entry(stage.into()).or_insert(0.0) += t0.elapsed().as_secs_f64();
        out
    }

    pub fn output(&mut self, ctx: &Context, path: &Path) {
        let shown = path.strip_prefix(&ctx.out).unwrap_or(path);
        self.outputs.push(shown.to_string_lossy().replace('\\', "/"));
    }

    /// The report with the timing section cleared.
    pub fn without_timings(&self) -> Self {
        Self { timings: BTreeMap::new(), ..self.clone() }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("report values serialise");
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

/// One row of a probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbRow {
    pub path: String,
    pub label: Option<String>,
    pub probs: Vec<f64>,
}

/// Writes `path,label,p_<class>...`, one row per image.
pub fn write_probabilities(path: &Path, classes: &[String], rows: &[ProbRow]) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["path".to_string(), "label".to_string()];
    header.extend(classes.iter().map(|c| format!("p_{c}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![r.path.clone(), r.label.clone().unwrap_or_default()];
        rec.extend(r.probs.iter().map(|p| p.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_probabilities(path: &Path) -> Result<(Vec<String>, Vec<ProbRow>), CliError> {
    let bad = |message: String| CliError::Csv { path: path.to_path_buf(), message };
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "path" || &header[1] != "label" {
        return Err(bad("expected a path,label,p_<class>... header".into()));
    }
    let classes: Vec<String> = header.iter().skip(2).map(|h| h.strip_prefix("p_").unwrap_or(h).to_string()).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let probs = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| bad(format!("row {}: {e}", rows.len() + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        let label = (!rec[1].is_empty()).then(|| rec[1].to_string());
        rows.push(ProbRow { path: rec[0].to_string(), label, probs });
    }
    Ok((classes, rows))
}

/// Mean probability vector of the rows carrying one true label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub count: usize,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilitySummary {
    pub classes: Vec<String>,
    /// Keyed by true label; rows without a label are grouped under "".
    pub mean_probabilities: BTreeMap<String, ClassProbabilities>,
    /// Argmax confusion over labelled rows whose label is a model class.
    pub metrics: Option<Metrics>,
}

/// Column means per true label, plus the argmax confusion.
pub fn summarize_probabilities(classes: &[String], rows: &[ProbRow]) -> Result<ProbabilitySummary, CliError> {
    let k = classes.len();
    let mut sums: BTreeMap<String, (usize, Vec<f64>)> = BTreeMap::new();
    let (mut truth, mut predicted) = (Vec::new(), Vec::new());
    for r in rows {
        if r.probs.len() != k {
            return Err(CliError::Config(format!("{}: {} probabilities for {k} classes", r.path, r.probs.len())));
        }
        let key = r.label.clone().unwrap_or_default();
        let slot = sums.entry(key).or_insert_with(|| (0, vec![0.0; k]));
        slot.0 += 1;
        for (s, p) in slot.1.iter_mut().zip(&r.probs) {
            *s += p;
        }
        if let Some(t) = r.label.as_ref().and_then(|l| classes.iter().position(|c| c == l)) {
            truth.push(t);
            predicted.push(argmax(&r.probs));
        }
    }
    let mean_probabilities = sums
        .into_iter()
        .map(|(label, (count, s))| (label, ClassProbabilities { count, mean: s.iter().map(|v| v / count as f64).collect() }))
        .collect();
    let metrics = if truth.is_empty() {
        None
    } else {
        Some(Metrics::from_predictions(&truth, &predicted, k).map_err(layerscope::Error::from)?)
    };
    Ok(ProbabilitySummary { classes: classes.to_vec(), mean_probabilities, metrics })
}

/// `true,<class>...` rows of the normalised confusion.
pub fn confusion_csv(classes: &[String], normalized: &[Vec<f64>]) -> String {
    let mut s = format!("true,{}\n", classes.join(","));
    for (c, row) in classes.iter().zip(normalized) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&format!("{c},{}\n", cells.join(",")));
    }
    s
}
