//! Run directories and cross-run comparison tables.
//!
//! `write_run` lays out one training run as CSV/JSON files; `load_run` and
//! `compare_runs` read them back without touching any training code.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::centroids::snapshot_header;
use crate::confidence::{write_score_dump, SCORE_DUMP_HEADER};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::eval::{pca_2d, HISTOGRAM_BINS};
use crate::trainer::{Ablation, TrainConfig, TrainOutcome};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const LOSS_FILE: &str = "loss.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const BANKS_FILE: &str = "banks.csv";
pub const SILHOUETTE_FILE: &str = "silhouette.csv";
pub const PCA_FILE: &str = "pca.csv";
pub const FEATURES_FILE: &str = "features.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub label: String,
    pub config: TrainConfig,
    pub dataset_fingerprint: String,
    pub outputs: Vec<String>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub map: f64,
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    pub mean_silhouette: f64,
    pub ics_vanilla: Option<f64>,
    pub ics_cgc: Option<f64>,
    pub num_clusters: usize,
    pub num_outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub ablation: String,
    pub beta: f64,
    pub schedule: String,
    pub epochs: usize,
    pub degenerate_epochs: usize,
    #[serde(rename = "final")]
    pub last: Option<FinalMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    #[serde(rename = "C")]
    pub num_clusters: usize,
    pub outliers: usize,
    pub mean_silhouette: f64,
    pub delta: Option<f64>,
    pub mean_loss: Option<f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub top1: f64,
    pub learning_rate: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    #[serde(rename = "mAP")]
    pub map: f64,
    pub top1: f64,
    pub top5: f64,
    pub top10: f64,
    pub ics_vanilla: Option<f64>,
    pub ics_cgc: Option<f64>,
    pub mean_silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub epoch: usize,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

pub fn ablation_name(config: &TrainConfig) -> &'static str {
    let flags = (config.use_cgc, config.use_cgl);
    Ablation::ALL
        .into_iter()
        .find(|a| a.flags() == flags)
        .map(Ablation::name)
        .unwrap_or("baseline")
}

/// Hash of label, config and dataset; identical inputs give identical ids.
pub fn run_id(label: &str, config: &TrainConfig, fingerprint: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(config)?);
    h.update([0]);
    h.update(fingerprint.as_bytes());
    Ok(hex::encode(h.finalize())[..16].to_string())
}

fn bin_edges(bin: usize) -> (f64, f64) {
    let width = 2.0 / HISTOGRAM_BINS as f64;
    (-1.0 + bin as f64 * width, -1.0 + (bin + 1) as f64 * width)
}

fn top(cmc: &std::collections::BTreeMap<usize, f64>, k: usize) -> f64 {
    cmc.get(&k).copied().unwrap_or(f64::NAN)
}

pub fn summarize(label: &str, config: &TrainConfig, outcome: &TrainOutcome) -> RunSummary {
    let last = outcome
        .timeline
        .last()
        .zip(outcome.traces.last())
        .map(|(m, t)| FinalMetrics {
            map: m.map,
            top1: top(&m.cmc, 1),
            top5: top(&m.cmc, 5),
            top10: top(&m.cmc, 10),
            mean_silhouette: m.mean_silhouette,
            ics_vanilla: m.ics_vanilla,
            ics_cgc: m.ics_cgc,
            num_clusters: t.num_clusters,
            num_outliers: t.num_outliers,
        });
    RunSummary {
        label: label.to_string(),
        ablation: ablation_name(config).to_string(),
        beta: config.beta,
        schedule: config.effective_schedule().label(),
        epochs: config.epochs,
        degenerate_epochs: outcome.degenerate_epochs(),
        last,
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes every per-run file into `dir` (created if missing) and returns
/// the manifest that lists them.
pub fn write_run(
    dir: &Path,
    label: &str,
    dataset: &Dataset,
    config: &TrainConfig,
    outcome: &TrainOutcome,
) -> Result<RunManifest> {
    fs::create_dir_all(dir)?;
    let fingerprint = dataset.fingerprint();

    let trace: Vec<TraceRow> = outcome
        .traces
        .iter()
        .zip(&outcome.timeline)
        .map(|(t, m)| TraceRow {
            epoch: t.epoch,
            num_clusters: t.num_clusters,
            outliers: t.num_outliers,
            mean_silhouette: t.mean_silhouette,
            delta: t.delta,
            mean_loss: t.mean_loss(),
            map: m.map,
            top1: top(&m.cmc, 1),
            learning_rate: t.learning_rate,
            degenerate: t.degenerate,
        })
        .collect();
    write_rows(&dir.join(TRACE_FILE), &trace)?;

    let mut w = csv::Writer::from_path(dir.join(LOSS_FILE))?;
    w.write_record(["epoch", "iteration", "loss"])?;
    for t in &outcome.traces {
        for (k, l) in t.loss_curve.iter().enumerate() {
            w.write_record([t.epoch.to_string(), k.to_string(), l.to_string()])?;
        }
    }
    w.flush()?;

    let metrics: Vec<MetricsRow> = outcome
        .timeline
        .iter()
        .map(|m| MetricsRow {
            epoch: m.epoch,
            map: m.map,
            top1: top(&m.cmc, 1),
            top5: top(&m.cmc, 5),
            top10: top(&m.cmc, 10),
            ics_vanilla: m.ics_vanilla,
            ics_cgc: m.ics_cgc,
            mean_silhouette: m.mean_silhouette,
        })
        .collect();
    write_rows(&dir.join(METRICS_FILE), &metrics)?;

    let hist: Vec<HistogramRow> = outcome
        .timeline
        .iter()
        .flat_map(|m| {
            m.silhouette_histogram
                .iter()
                .enumerate()
                .map(|(bin, &count)| {
                    let (lower, upper) = bin_edges(bin);
                    HistogramRow {
                        epoch: m.epoch,
                        bin,
                        lower,
                        upper,
                        count,
                    }
                })
        })
        .collect();
    write_rows(&dir.join(HISTOGRAM_FILE), &hist)?;

    let d = outcome.store.dim();
    let mut w = csv::Writer::from_path(dir.join(BANKS_FILE))?;
    w.write_record(snapshot_header(d))?;
    for (epoch, s) in outcome.snapshots.iter().enumerate() {
        if let Some(bank) = &s.bank {
            bank.write_snapshot(&mut w, epoch)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(SILHOUETTE_FILE))?;
    w.write_record(SCORE_DUMP_HEADER)?;
    for (epoch, s) in outcome.snapshots.iter().enumerate() {
        write_score_dump(&mut w, epoch, &s.assignment, &s.confidence)?;
    }
    w.flush()?;

    let features = outcome.store.features();
    let mut w = csv::Writer::from_path(dir.join(FEATURES_FILE))?;
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..d).map(|j| format!("f_{j}")));
    w.write_record(&header)?;
    for (i, row) in features.iter_rows().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|x| format!("{x:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let coords = pca_2d(features)?;
    let mut w = csv::Writer::from_path(dir.join(PCA_FILE))?;
    w.write_record(["sample_id", "identity", "x", "y"])?;
    for i in 0..coords.rows() {
        w.write_record([
            i.to_string(),
            dataset.truth.identities[i].to_string(),
            coords.get(i, 0).to_string(),
            coords.get(i, 1).to_string(),
        ])?;
    }
    w.flush()?;

    write_json(&dir.join(SUMMARY_FILE), &summarize(label, config, outcome))?;

    let manifest = RunManifest {
        run_id: run_id(label, config, &fingerprint)?,
        label: label.to_string(),
        config: config.clone(),
        dataset_fingerprint: fingerprint,
        outputs: [
            TRACE_FILE,
            LOSS_FILE,
            METRICS_FILE,
            HISTOGRAM_FILE,
            BANKS_FILE,
            SILHOUETTE_FILE,
            FEATURES_FILE,
            PCA_FILE,
            SUMMARY_FILE,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
        version: VERSION.to_string(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A run directory read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub summary: RunSummary,
    pub metrics: Vec<MetricsRow>,
    pub histogram: Vec<HistogramRow>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

pub fn load_run(dir: &Path) -> Result<RunRecord> {
    Ok(RunRecord {
        dir: dir.to_path_buf(),
        manifest: read_json(&dir.join(MANIFEST_FILE))?,
        summary: read_json(&dir.join(SUMMARY_FILE))?,
        metrics: read_rows(&dir.join(METRICS_FILE))?,
        histogram: read_rows(&dir.join(HISTOGRAM_FILE))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub run: String,
    pub run_id: String,
    pub ablation: String,
    pub beta: f64,
    pub schedule: String,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub top10: Option<f64>,
    pub mean_silhouette: Option<f64>,
    pub ics_vanilla: Option<f64>,
    pub ics_cgc: Option<f64>,
    pub degenerate_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub run: String,
    pub strategy: String,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    pub top1: Option<f64>,
    pub top5: Option<f64>,
    pub top10: Option<f64>,
    pub ics_cgc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcsRow {
    pub run: String,
    pub epoch: usize,
    pub ics_vanilla: Option<f64>,
    pub ics_cgc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHistogramRow {
    pub run: String,
    pub epoch: usize,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Comparison {
    pub dataset_fingerprint: String,
    pub ablation: Vec<AblationRow>,
    /// Runs that use the confidence-guided bank, keyed by threshold strategy.
    pub delta: Vec<DeltaRow>,
    pub ics: Vec<IcsRow>,
    pub histograms: Vec<RunHistogramRow>,
}

pub const ABLATION_TABLE: &str = "ablation.csv";
pub const DELTA_TABLE: &str = "delta_strategies.csv";
pub const ICS_TABLE: &str = "ics_timeline.csv";
pub const HISTOGRAM_TABLE: &str = "histograms.csv";

/// Merges runs trained on one dataset into comparison tables.
pub fn compare_runs(runs: &[RunRecord]) -> Result<Comparison> {
    let first = runs.first().ok_or(Error::EmptyInput)?;
    let fingerprint = &first.manifest.dataset_fingerprint;
    if let Some(other) = runs
        .iter()
        .find(|r| &r.manifest.dataset_fingerprint != fingerprint)
    {
        return Err(Error::Incompatible(format!(
            "{} was trained on dataset {}, {} on {}",
            first.dir.display(),
            fingerprint,
            other.dir.display(),
            other.manifest.dataset_fingerprint
        )));
    }
    let mut out = Comparison {
        dataset_fingerprint: fingerprint.clone(),
        ..Comparison::default()
    };
    for r in runs {
        let s = &r.summary;
        let last = s.last.as_ref();
        let run = s.label.clone();
        out.ablation.push(AblationRow {
            run: run.clone(),
            run_id: r.manifest.run_id.clone(),
            ablation: s.ablation.clone(),
            beta: s.beta,
            schedule: s.schedule.clone(),
            map: last.map(|m| m.map),
            top1: last.map(|m| m.top1),
            top5: last.map(|m| m.top5),
            top10: last.map(|m| m.top10),
            mean_silhouette: last.map(|m| m.mean_silhouette),
            ics_vanilla: last.and_then(|m| m.ics_vanilla),
            ics_cgc: last.and_then(|m| m.ics_cgc),
            degenerate_epochs: s.degenerate_epochs,
        });
        if r.manifest.config.use_cgc {
            out.delta.push(DeltaRow {
                run: run.clone(),
                strategy: s.schedule.clone(),
                map: last.map(|m| m.map),
                top1: last.map(|m| m.top1),
                top5: last.map(|m| m.top5),
                top10: last.map(|m| m.top10),
                ics_cgc: last.and_then(|m| m.ics_cgc),
            });
        }
        out.ics.extend(r.metrics.iter().map(|m| IcsRow {
            run: run.clone(),
            epoch: m.epoch,
            ics_vanilla: m.ics_vanilla,
            ics_cgc: m.ics_cgc,
        }));
        out.histograms
            .extend(r.histogram.iter().map(|h| RunHistogramRow {
                run: run.clone(),
                epoch: h.epoch,
                bin: h.bin,
                lower: h.lower,
                upper: h.upper,
                count: h.count,
            }));
    }
    Ok(out)
}

/// Writes the four comparison tables into `dir` and returns their paths.
pub fn write_comparison(dir: &Path, cmp: &Comparison) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = [ABLATION_TABLE, DELTA_TABLE, ICS_TABLE, HISTOGRAM_TABLE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_table(&paths[0], &cmp.ablation, ABLATION_HEADER)?;
    write_table(&paths[1], &cmp.delta, DELTA_HEADER)?;
    write_table(&paths[2], &cmp.ics, ICS_HEADER)?;
    write_table(&paths[3], &cmp.histograms, HIST_HEADER)?;
    Ok(paths)
}

const ABLATION_HEADER: &[&str] = &[
    "run",
    "run_id",
    "ablation",
    "beta",
    "schedule",
    "mAP",
    "top1",
    "top5",
    "top10",
    "mean_silhouette",
    "ics_vanilla",
    "ics_cgc",
    "degenerate_epochs",
];
const DELTA_HEADER: &[&str] = &["run", "strategy", "mAP", "top1", "top5", "top10", "ics_cgc"];
const ICS_HEADER: &[&str] = &["run", "epoch", "ics_vanilla", "ics_cgc"];
const HIST_HEADER: &[&str] = &["run", "epoch", "bin", "lower", "upper", "count"];

// serde only emits a header once a row exists; empty tables still get one
fn write_table<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
