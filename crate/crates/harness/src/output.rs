//! Result files: records.jsonl, aggregate.csv, traces, resolved config.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use twr_core::detectors::StepRecord;
use twr_core::metrics::{aggregate, Aggregate, Estimate, TrialRecord};

use crate::config::{DetectorEntry, ExperimentConfig};
use crate::error::{io, HarnessError, Result};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const CONFIG_FILE: &str = "resolved_config.json";

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, contents).map_err(|e| io(path, e))
}

/// Identity of a record within an experiment.
pub type CellKey = (String, u64, usize, bool);

pub fn cell_key(r: &TrialRecord) -> CellKey {
    (r.detector.clone(), r.threshold.to_bits(), r.trial, r.lambda.is_some())
}

/// Reads every well-formed line of a records file. A missing file reads as
/// empty; a torn final line from an interrupted run is ignored.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path, e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io(path, e))?;
        if let Ok(r) = serde_json::from_str::<TrialRecord>(&line) {
            out.push(r);
        }
    }
    Ok(out)
}

fn record_line(r: &TrialRecord) -> String {
    serde_json::to_string(r).expect("records serialize")
}

/// Appends records as they are produced.
pub struct RecordLog {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl RecordLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, records: &[TrialRecord]) -> Result<()> {
        for r in records {
            writeln!(self.writer, "{}", record_line(r)).map_err(|e| io(&self.path, e))?;
        }
        self.writer.flush().map_err(|e| io(&self.path, e))
    }
}

/// Orders records by trial, then detector order, stream kind and threshold,
/// dropping duplicates.
pub fn canonical(records: Vec<TrialRecord>, detectors: &[DetectorEntry]) -> Vec<TrialRecord> {
    let rank: BTreeMap<&str, usize> = detectors.iter().enumerate().map(|(i, d)| (d.name(), i)).collect();
    let mut seen = HashSet::new();
    let mut out: Vec<TrialRecord> = records.into_iter().filter(|r| seen.insert(cell_key(r))).collect();
    out.sort_by(|a, b| {
        let ra = rank.get(a.detector.as_str()).copied().unwrap_or(usize::MAX);
        let rb = rank.get(b.detector.as_str()).copied().unwrap_or(usize::MAX);
        (a.trial, ra, &a.detector, a.lambda.is_none())
            .cmp(&(b.trial, rb, &b.detector, b.lambda.is_none()))
            .then(a.threshold.total_cmp(&b.threshold))
    });
    out
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&record_line(r));
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

/// One aggregate per (detector, threshold), in detector then grid order.
pub fn aggregate_all(records: &[TrialRecord], detectors: &[&str], grid: &[f64]) -> Vec<Aggregate> {
    let mut cells: BTreeMap<(String, u64), Vec<TrialRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.detector.clone(), r.threshold.to_bits())).or_default().push(r.clone());
    }
    let mut out = Vec::new();
    for d in detectors {
        for &b in grid {
            if let Some(cell) = cells.get(&(d.to_string(), b.to_bits())) {
                out.push(aggregate(d, b, cell));
            }
        }
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn est(e: &Option<Estimate>) -> [String; 2] {
    [fmt_opt(e.map(|e| e.value)), fmt_opt(e.map(|e| e.stderr))]
}

pub const AGGREGATE_HEADER: [&str; 15] = [
    "detector",
    "B",
    "n_trials",
    "n_censored",
    "pfa",
    "pfa_stderr",
    "add",
    "add_stderr",
    "far",
    "far_stderr",
    "far_is_bound",
    "cadd",
    "cadd_stderr",
    "regret",
    "regret_stderr",
];

pub fn aggregate_csv(rows: &[Aggregate]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Config(format!("csv encoding failed: {e}"));
    w.write_record(AGGREGATE_HEADER).map_err(csv_err)?;
    for a in rows {
        let [pfa, pfa_se] = est(&a.pfa);
        let [add, add_se] = est(&a.add);
        let [cadd, cadd_se] = est(&a.cadd);
        let [regret, regret_se] = est(&a.regret);
        let far = fmt_opt(a.far.map(|f| f.value));
        let far_se = fmt_opt(a.far.map(|f| f.stderr));
        let far_bound = a.far.map(|f| f.is_bound.to_string()).unwrap_or_default();
        w.write_record([
            a.detector.clone(),
            a.threshold.to_string(),
            a.n_trials.to_string(),
            a.n_censored.to_string(),
            pfa,
            pfa_se,
            add,
            add_se,
            far,
            far_se,
            far_bound,
            cadd,
            cadd_se,
            regret,
            regret_se,
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Config(format!("csv encoding failed: {e}")))
}

pub const TRACE_HEADER: [&str; 12] = [
    "t",
    "detector",
    "S",
    "L_raw",
    "L_penalized",
    "kl_estimate",
    "Delta",
    "p0",
    "D_bar",
    "mu",
    "s",
    "fired",
];

/// Per-step trace of one detector; `fired` marks steps whose level is above
/// `fire_level`.
pub fn trace_csv(detector: &str, trace: &[StepRecord], fire_level: f64) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| HarnessError::Config(format!("csv encoding failed: {e}"));
    w.write_record(TRACE_HEADER).map_err(csv_err)?;
    for r in trace {
        w.write_record([
            r.t.to_string(),
            detector.to_string(),
            r.statistic.to_string(),
            r.llr.to_string(),
            r.llr_penalized.to_string(),
            fmt_opt(r.kl_estimate),
            r.delta.map(|d| d.to_string()).unwrap_or_default(),
            fmt_opt(r.p0),
            fmt_opt(r.d_bar),
            fmt_opt(r.mu),
            fmt_opt(r.s),
            u8::from(r.level > fire_level).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| HarnessError::Config(format!("csv encoding failed: {e}")))
}

/// Writes the resolved config and reports whether an earlier run in `dir`
/// used the same one (and may therefore be resumed).
pub fn echo_config(dir: &Path, cfg: &ExperimentConfig) -> Result<bool> {
    let path = dir.join(CONFIG_FILE);
    let text = cfg.to_json() + "\n";
    let same = fs::read_to_string(&path).map(|old| old == text).unwrap_or(false);
    write_file(&path, text.as_bytes())?;
    Ok(same)
}
