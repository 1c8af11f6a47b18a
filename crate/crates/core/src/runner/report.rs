//! Result files, empirical listener data and prediction-vs-measurement
//! panels.
//!
//! Files written by [`emit_reports`]:
//!
//! - `matrices/<condition>.csv`: `train_snr,test_snr,rate,count`
//! - `summary.csv`: one row per condition with SRT, uncertainty and status
//! - `gains.csv`: Lombard gains
//! - `run_manifest.json`: configuration hash, seed, version and the
//!   effective configuration
//!
//! [`emit_evaluation`] adds `panels.csv`, `lines.csv` (identity and
//! regression line per panel) and `scatter_<panel>.csv`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{lombard_gains, ConditionKey, ConditionResult, ExperimentConfig, LombardGain, ResultBundle};
use crate::corpus::Effort;
use crate::error::{Error, Result};
use crate::sim::{srt_with_method, RecognitionMatrix};
use crate::stats::{mean_listener_gain, regression_line, summarize, EvalSummary, PairedItem, PairedSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    feature: String,
    speaker: String,
    language: String,
    effort: Effort,
    noise: String,
    status: String,
    srt_db: Option<f64>,
    sigma_sim_db: Option<f64>,
    winning_train_snr_db: Option<f64>,
    detail: String,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde(format!("{}: {other:?}", path.display())),
    }
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn write_file(path: &Path, text: &str) -> Result<PathBuf> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

const SUMMARY_HEADER: [&str; 10] = [
    "feature",
    "speaker",
    "language",
    "effort",
    "noise",
    "status",
    "srt_db",
    "sigma_sim_db",
    "winning_train_snr_db",
    "detail",
];
const GAINS_HEADER: [&str; 6] = ["feature", "speaker", "language", "noise", "gain_db", "sigma_db"];

/// Per-condition table; identical runs give identical bytes.
pub fn summary_csv(bundle: &ResultBundle) -> String {
    let rows: Vec<SummaryRow> = bundle
        .conditions
        .iter()
        .map(|c| SummaryRow {
            feature: c.key.feature.clone(),
            speaker: c.key.speaker.clone(),
            language: c.key.language.clone(),
            effort: c.key.effort,
            noise: c.key.noise.clone(),
            status: if c.failure.is_some() { "failed" } else { "ok" }.into(),
            srt_db: c.srt.as_ref().map(|s| s.srt_db),
            sigma_sim_db: c.srt.as_ref().map(|s| s.sigma_sim),
            winning_train_snr_db: c.srt.as_ref().map(|s| s.winning_train_snr),
            detail: c.failure.clone().unwrap_or_default(),
        })
        .collect();
    to_csv(&rows, &SUMMARY_HEADER)
}

/// Machine-readable record of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub conditions: usize,
    pub failed: Vec<String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

/// Writes matrices, summary, gains and the run manifest into `out`.
pub fn emit_reports(bundle: &ResultBundle, cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let mdir = out.join("matrices");
    fs::create_dir_all(&mdir).map_err(|e| Error::io(&mdir, e))?;
    let mut written = Vec::new();
    for c in &bundle.conditions {
        if let Some(m) = &c.matrix {
            let p = mdir.join(format!("{}.csv", c.key.file_stem()));
            m.write_csv(&p)?;
            written.push(p);
        }
    }
    written.push(write_file(&out.join("summary.csv"), &summary_csv(bundle))?);
    written.push(write_file(&out.join("gains.csv"), &to_csv(&bundle.gains, &GAINS_HEADER))?);
    let manifest = RunManifest {
        tool: "fade".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        conditions: bundle.conditions.len(),
        failed: bundle.failed().map(|c| c.key.to_string()).collect(),
        config: cfg.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Serde(e.to_string()))?;
    written.push(write_file(&out.join("run_manifest.json"), &(json + "\n"))?);
    Ok(written)
}

/// Reads a result directory written by [`emit_reports`]. SRTs are
/// recomputed from the matrices with the recorded SRT settings.
pub fn load_results(dir: &Path) -> Result<(ResultBundle, RunManifest)> {
    let manifest = RunManifest::load(dir.join("run_manifest.json"))?;
    let rows: Vec<SummaryRow> = read_csv(&dir.join("summary.csv"))?;
    let mut conditions = Vec::with_capacity(rows.len());
    for r in rows {
        let key = ConditionKey {
            feature: r.feature,
            speaker: r.speaker,
            language: r.language,
            effort: r.effort,
            noise: r.noise,
        };
        let mpath = dir.join("matrices").join(format!("{}.csv", key.file_stem()));
        let matrix = if mpath.is_file() { Some(RecognitionMatrix::read_csv(&mpath)?) } else { None };
        let srt = match (&matrix, r.status.as_str()) {
            (Some(m), "ok") => Some(srt_with_method(m, manifest.config.srt.criterion, manifest.config.srt.method)?),
            _ => None,
        };
        let failure = (r.status != "ok").then(|| r.detail.clone());
        conditions.push(ConditionResult { key, matrix, srt, failure });
    }
    let gains = lombard_gains(&conditions);
    Ok((ResultBundle { conditions, gains }, manifest))
}

/// Listener SRTs of one speech condition in one noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEntry {
    pub speaker: String,
    pub language: String,
    pub effort: Effort,
    pub noise: String,
    pub srt_db: f64,
    pub sem_db: f64,
    pub listeners: usize,
}

/// One listener's plain and Lombard SRT for the same speaker, language and
/// noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListenerGainRow {
    pub speaker: String,
    pub language: String,
    pub noise: String,
    pub listener: String,
    pub srt_plain_db: f64,
    pub srt_lombard_db: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmpiricalTable {
    pub entries: Vec<EmpiricalEntry>,
    pub listeners: Vec<ListenerGainRow>,
}

const EMPIRICAL_HEADER: [&str; 7] = ["speaker", "language", "effort", "noise", "srt_db", "sem_db", "listeners"];
const LISTENER_HEADER: [&str; 6] = ["speaker", "language", "noise", "listener", "srt_plain_db", "srt_lombard_db"];

type SpeechKey = (String, String, Effort, String);

impl EmpiricalTable {
    pub fn new(entries: Vec<EmpiricalEntry>, listeners: Vec<ListenerGainRow>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !(e.sem_db >= 0.0) || !e.srt_db.is_finite() || e.listeners == 0 {
                return Err(Error::Evaluation(format!(
                    "empirical entry {}/{}/{}/{} needs a finite SRT, sem ≥ 0 and at least one listener",
                    e.speaker, e.language, e.effort, e.noise
                )));
            }
            if !seen.insert(Self::key(e)) {
                return Err(Error::Evaluation(format!(
                    "duplicate empirical entry {}/{}/{}/{}",
                    e.speaker, e.language, e.effort, e.noise
                )));
            }
        }
        if listeners.iter().any(|l| !(l.srt_plain_db.is_finite() && l.srt_lombard_db.is_finite())) {
            return Err(Error::Evaluation("listener SRTs must be finite".into()));
        }
        Ok(EmpiricalTable { entries, listeners })
    }

    fn key(e: &EmpiricalEntry) -> SpeechKey {
        (e.speaker.clone(), e.language.clone(), e.effort, e.noise.clone())
    }

    pub fn read(table: &Path, listeners: Option<&Path>) -> Result<Self> {
        let entries = read_csv(table)?;
        let listeners = listeners.map(read_csv).transpose()?.unwrap_or_default();
        EmpiricalTable::new(entries, listeners)
    }

    pub fn write(&self, table: &Path, listeners: Option<&Path>) -> Result<()> {
        write_file(table, &to_csv(&self.entries, &EMPIRICAL_HEADER))?;
        if let Some(p) = listeners {
            write_file(p, &to_csv(&self.listeners, &LISTENER_HEADER))?;
        }
        Ok(())
    }

    fn find(&self, speaker: &str, language: &str, effort: Effort, noise: &str) -> Option<&EmpiricalEntry> {
        self.entries
            .iter()
            .find(|e| e.speaker == speaker && e.language == language && e.effort == effort && e.noise == noise)
    }

    /// Mean and sem of the gain: from per-listener rows when present,
    /// otherwise the difference of the mean SRTs with combined sems.
    fn gain(&self, speaker: &str, language: &str, noise: &str) -> Option<Result<(f64, f64)>> {
        let pairs: Vec<(f64, f64)> = self
            .listeners
            .iter()
            .filter(|l| l.speaker == speaker && l.language == language && l.noise == noise)
            .map(|l| (l.srt_plain_db, l.srt_lombard_db))
            .collect();
        if !pairs.is_empty() {
            return Some(mean_listener_gain(&pairs));
        }
        let p = self.find(speaker, language, Effort::Plain, noise)?;
        let l = self.find(speaker, language, Effort::Lombard, noise)?;
        Some(Ok((p.srt_db - l.srt_db, p.sem_db.hypot(l.sem_db))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelKind {
    Srt,
    Gain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: String,
    pub feature: String,
    pub kind: PanelKind,
    pub series: PairedSeries,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub panels: Vec<Panel>,
}

/// One SRT panel and one gain panel per feature type. SRT panels use one
/// degree of freedom per point; gain panels use half of the SRT panel's.
pub fn evaluate(bundle: &ResultBundle, emp: &EmpiricalTable) -> Result<Evaluation> {
    let mut unmatched = Vec::new();
    for c in &bundle.conditions {
        if emp.find(&c.key.speaker, &c.key.language, c.key.effort, &c.key.noise).is_none() {
            unmatched.push(format!("simulated {}", c.key));
        }
    }
    for e in &emp.entries {
        let hit = bundle.conditions.iter().any(|c| {
            c.key.speaker == e.speaker
                && c.key.language == e.language
                && c.key.effort == e.effort
                && c.key.noise == e.noise
        });
        if !hit {
            unmatched.push(format!("empirical {}/{}/{}/{}", e.speaker, e.language, e.effort, e.noise));
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::Evaluation(format!("unmatched conditions: {}", unmatched.join(", "))));
    }
    let mut features: Vec<&str> = Vec::new();
    for c in &bundle.conditions {
        if !features.contains(&c.key.feature.as_str()) {
            features.push(&c.key.feature);
        }
    }
    let mut panels = Vec::new();
    for f in features {
        let srt_items: Vec<PairedItem> = bundle
            .conditions
            .iter()
            .filter(|c| c.key.feature == f)
            .filter_map(|c| {
                let s = c.srt.as_ref()?;
                let e = emp.find(&c.key.speaker, &c.key.language, c.key.effort, &c.key.noise)?;
                Some(PairedItem {
                    label: format!("{}/{}/{}/{}", c.key.speaker, c.key.language, c.key.effort, c.key.noise),
                    sim: s.srt_db,
                    emp: e.srt_db,
                    sigma_sim: s.sigma_sim,
                    sigma_emp: e.sem_db,
                })
            })
            .collect();
        if srt_items.is_empty() {
            continue;
        }
        let srt_dof = srt_items.len();
        panels.push(panel(format!("srt_{f}"), f, PanelKind::Srt, srt_items, srt_dof)?);
        let mut gain_items = Vec::new();
        for g in bundle.gains.iter().filter(|g: &&LombardGain| g.feature == f) {
            let Some(eg) = emp.gain(&g.speaker, &g.language, &g.noise) else { continue };
            let (mean, sem) = eg?;
            gain_items.push(PairedItem {
                label: format!("{}/{}/{}", g.speaker, g.language, g.noise),
                sim: g.gain_db,
                emp: mean,
                sigma_sim: g.sigma_db,
                sigma_emp: sem,
            });
        }
        if !gain_items.is_empty() {
            panels.push(panel(format!("gain_{f}"), f, PanelKind::Gain, gain_items, (srt_dof / 2).max(1))?);
        }
    }
    Ok(Evaluation { panels })
}

fn panel(name: String, feature: &str, kind: PanelKind, items: Vec<PairedItem>, dof: usize) -> Result<Panel> {
    let series = PairedSeries::new(items)?;
    let summary = summarize(&series, dof)?;
    Ok(Panel { name, feature: feature.to_string(), kind, series, summary })
}

#[derive(Serialize)]
struct PanelRow<'a> {
    panel: &'a str,
    feature: &'a str,
    kind: PanelKind,
    n: usize,
    dof: usize,
    pearson_r: Option<f64>,
    rms_db: f64,
    bias_mean_db: f64,
    bias_intercept_db: Option<f64>,
    regression_slope: Option<f64>,
    chi2_per_dof: Option<f64>,
}

#[derive(Serialize)]
struct LineRow<'a> {
    panel: &'a str,
    line: &'a str,
    slope: f64,
    intercept: f64,
}

#[derive(Serialize)]
struct ScatterRow<'a> {
    label: &'a str,
    sim_db: f64,
    emp_db: f64,
    sigma_sim_db: f64,
    sigma_emp_db: f64,
}

/// Writes `panels.csv`, `lines.csv` and one scatter file per panel.
pub fn emit_evaluation(eval: &Evaluation, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    let rows: Vec<PanelRow> = eval
        .panels
        .iter()
        .map(|p| PanelRow {
            panel: &p.name,
            feature: &p.feature,
            kind: p.kind,
            n: p.summary.n,
            dof: p.summary.dof,
            pearson_r: p.summary.pearson_r,
            rms_db: p.summary.rms_db,
            bias_mean_db: p.summary.bias_db,
            bias_intercept_db: p.summary.bias_intercept_db,
            regression_slope: p.summary.regression_slope,
            chi2_per_dof: p.summary.chi2_per_dof,
        })
        .collect();
    let header = [
        "panel",
        "feature",
        "kind",
        "n",
        "dof",
        "pearson_r",
        "rms_db",
        "bias_mean_db",
        "bias_intercept_db",
        "regression_slope",
        "chi2_per_dof",
    ];
    written.push(write_file(&out.join("panels.csv"), &to_csv(&rows, &header))?);
    let mut lines = Vec::new();
    for p in &eval.panels {
        lines.push(LineRow { panel: &p.name, line: "identity", slope: 1.0, intercept: 0.0 });
        if let Ok((slope, intercept)) = regression_line(&p.series) {
            lines.push(LineRow { panel: &p.name, line: "regression", slope, intercept });
        }
    }
    written.push(write_file(&out.join("lines.csv"), &to_csv(&lines, &["panel", "line", "slope", "intercept"]))?);
    for p in &eval.panels {
        let rows: Vec<ScatterRow> = p
            .series
            .items
            .iter()
            .map(|i| ScatterRow {
                label: &i.label,
                sim_db: i.sim,
                emp_db: i.emp,
                sigma_sim_db: i.sigma_sim,
                sigma_emp_db: i.sigma_emp,
            })
            .collect();
        let header = ["label", "sim_db", "emp_db", "sigma_sim_db", "sigma_emp_db"];
        written.push(write_file(&out.join(format!("scatter_{}.csv", p.name)), &to_csv(&rows, &header))?);
    }
    Ok(written)
}
