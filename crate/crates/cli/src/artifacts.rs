//! Run output files and their parsers.

use std::path::Path;

use amalgam_core::training::{Evaluation, GateSummary, GradCheckReport};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub experts: Vec<String>,
    pub examples: usize,
    pub accuracy: f64,
    pub f1: f64,
    /// Absent when the evaluation set holds a single class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub oov_tokens: Vec<usize>,
}

impl MetricsReport {
    pub fn new(variant: String, experts: Vec<String>, eval: &Evaluation, oov_tokens: Vec<usize>) -> Self {
        let m = &eval.metrics;
        MetricsReport {
            variant,
            experts,
            examples: eval.predictions.len(),
            accuracy: m.accuracy,
            f1: m.f1,
            auc: m.auc,
            tp: m.counts.tp,
            fp: m.counts.fp,
            tn: m.counts.tn,
            fn_: m.counts.fn_,
            oov_tokens,
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("metrics serialize")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("malformed metrics report")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub example_id: usize,
    pub label: usize,
    pub predicted: usize,
    pub score: f64,
}

pub fn predictions_csv(eval: &Evaluation) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, p) in eval.predictions.iter().enumerate() {
        w.serialize(PredictionRow {
            example_id: i,
            label: p.label,
            predicted: p.predicted,
            score: p.score,
        })
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .context("malformed predictions table")
}

/// Gate weights per example with the summary appended as `# key = value`
/// comment lines.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTable {
    pub rows: Vec<Vec<f64>>,
    pub mean_entropy: f64,
    pub mean_alpha: Vec<f64>,
}

impl GateTable {
    pub fn new(rows: Vec<Vec<f64>>, summary: &GateSummary) -> Self {
        GateTable {
            rows,
            mean_entropy: summary.mean_entropy,
            mean_alpha: summary.mean_alpha.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let n = self.mean_alpha.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = std::iter::once("example_id".to_string())
            .chain((1..=n).map(|i| format!("alpha_{i}")))
            .collect();
        w.write_record(&header).expect("in-memory write");
        for (i, row) in self.rows.iter().enumerate() {
            let record: Vec<String> = std::iter::once(i.to_string()).chain(row.iter().map(f64::to_string)).collect();
            w.write_record(&record).expect("in-memory write");
        }
        let mut out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8");
        out.push_str(&format!("# mean_entropy = {}\n", self.mean_entropy));
        for (i, a) in self.mean_alpha.iter().enumerate() {
            out.push_str(&format!("# mean_alpha_{} = {a}\n", i + 1));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let header = reader.headers()?.clone();
        let n = header.len().saturating_sub(1);
        let expected: Vec<String> = std::iter::once("example_id".to_string())
            .chain((1..=n).map(|i| format!("alpha_{i}")))
            .collect();
        if n == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            bail!("gate table header must be example_id,alpha_1,…,alpha_n");
        }
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            if record[0].parse::<usize>().ok() != Some(i) {
                bail!("gate table row {} has example_id {:?}", i + 1, &record[0]);
            }
            let row = record.iter().skip(1).map(str::parse).collect::<Result<Vec<f64>, _>>()?;
            rows.push(row);
        }
        let mut mean_entropy = None;
        let mut mean_alpha = vec![None; n];
        for line in text.lines().filter_map(|l| l.strip_prefix("# ")) {
            let (key, value) = line.split_once(" = ").context("malformed gate summary line")?;
            let value: f64 = value.parse()?;
            match key.strip_prefix("mean_alpha_").map(str::parse::<usize>) {
                Some(Ok(i)) if (1..=n).contains(&i) => mean_alpha[i - 1] = Some(value),
                _ if key == "mean_entropy" => mean_entropy = Some(value),
                _ => bail!("unknown gate summary key {key:?}"),
            }
        }
        Ok(GateTable {
            rows,
            mean_entropy: mean_entropy.context("gate table lacks mean_entropy")?,
            mean_alpha: mean_alpha
                .into_iter()
                .collect::<Option<_>>()
                .context("gate table lacks a mean_alpha line")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckFile {
    pub variant: String,
    pub h: f64,
    pub tol: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

impl GradCheckFile {
    pub fn new(variant: String, h: f64, report: &GradCheckReport) -> Self {
        GradCheckFile {
            variant,
            h,
            tol: report.tol,
            checked: report.checked,
            max_rel_error: report.max_rel_error,
            worst_param: report.worst_param.clone(),
            analytic: report.analytic,
            numeric: report.numeric,
            passed: report.passed(),
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("malformed gradcheck report")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureEntry {
    pub tau: f64,
    pub mean_entropy: f64,
    pub mean_alpha: Vec<f64>,
    /// One row of bin counts per expert.
    pub histogram: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub experts: Vec<String>,
    pub examples: usize,
    pub bins: usize,
    pub temperature: Vec<TemperatureEntry>,
}

impl GateReport {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("malformed gate report")
    }
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
