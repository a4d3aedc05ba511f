use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use crate::controller::Decision;
use crate::metrics::MetricRecord;
use crate::model::{save_checkpoint, CheckpointHeader, VaeParams};
use crate::pruning::PruneEvent;
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const DECISIONS_FILE: &str = "decisions.jsonl";
pub const EVENTS_FILE: &str = "prune_events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Wall-clock seconds spent in each phase of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_secs: f64,
    pub train_secs: f64,
    pub eval_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub init_latent_dim: usize,
    pub final_latent_dim: usize,
    /// Epoch at which the latent size was frozen, if it was.
    pub stopping_epoch: Option<usize>,
    pub final_metrics: MetricRecord,
    /// Mean training loss of the last epoch.
    pub final_train_loss: f64,
    pub timings: Timings,
}

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct RunLog {
    pub config: RunConfig,
    pub records: Vec<MetricRecord>,
    pub train_losses: Vec<f64>,
    pub decisions: Vec<Decision>,
    pub prune_events: Vec<PruneEvent>,
    pub summary: RunSummary,
    pub model: VaeParams,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io("creating", path, e))?))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io("writing", path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("writing", path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Serializes records as CSV with the header
/// `epoch,latent_dim,silhouette,fid_recon,fid_gen,recon_loss,kl,elbo`.
pub fn metrics_csv(records: &[MetricRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(["epoch", "latent_dim", "silhouette", "fid_recon", "fid_gen", "recon_loss", "kl", "elbo"])
            .map_err(|e| Error::Format(e.to_string()))?;
    }
    for r in records {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

impl RunLog {
    /// Writes metrics, decisions, prune events, summary, resolved config and
    /// the final checkpoint into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io("creating output directory", dir, e))?;
        write_bytes(&dir.join(METRICS_FILE), &metrics_csv(&self.records)?)?;
        write_bytes(&dir.join(DECISIONS_FILE), &jsonl(&self.decisions)?)?;
        write_bytes(&dir.join(EVENTS_FILE), &jsonl(&self.prune_events)?)?;
        write_bytes(&dir.join(CONFIG_FILE), self.config.to_toml_string()?.as_bytes())?;

        let summary_path = dir.join(SUMMARY_FILE);
        let summary = serde_json::json!({
            "summary": self.summary,
            "config": self.config,
        });
        let mut f = create(&summary_path)?;
        serde_json::to_writer_pretty(&mut f, &summary).map_err(|e| Error::Format(e.to_string()))?;
        f.write_all(b"\n").map_err(|e| Error::io("writing", &summary_path, e))?;
        f.flush().map_err(|e| Error::io("writing", &summary_path, e))?;

        let header = CheckpointHeader::for_model(&self.model, self.summary.epochs as u64, self.summary.seed);
        save_checkpoint(dir.join(CHECKPOINT_FILE), &header, &self.model)
    }
}

/// Per-metric series `epoch,latent_dim,value` and the prune annotations, for
/// an external plotter. Returns the written paths.
pub fn emit_plot_data(log: &RunLog, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io("creating plot directory", dir, e))?;
    type Getter = fn(&MetricRecord) -> f64;
    let series: [(&str, Getter); 4] = [
        ("silhouette", |r| r.silhouette),
        ("fid_recon", |r| r.fid_recon),
        ("fid_gen", |r| r.fid_gen),
        ("recon_loss", |r| r.recon_loss),
    ];
    let mut written = Vec::new();
    for (name, get) in series {
        let path = dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["epoch", "latent_dim", "value"]).map_err(|e| csv_error(&path, e))?;
        for r in &log.records {
            w.serialize((r.epoch, r.latent_dim, get(r))).map_err(|e| csv_error(&path, e))?;
        }
        write_bytes(&path, &w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
        written.push(path);
    }

    let path = dir.join("prune_events.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "old_latent_dim", "new_latent_dim", "strategy", "removed_indices"])
        .map_err(|e| csv_error(&path, e))?;
    for ev in &log.prune_events {
        let removed: Vec<String> = ev.removed_indices.iter().map(usize::to_string).collect();
        let strategy = serde_json::to_value(ev.strategy).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record([
            ev.epoch.to_string(),
            ev.old_nz.to_string(),
            ev.new_nz.to_string(),
            strategy.as_str().unwrap_or_default().to_string(),
            removed.join(" "),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    write_bytes(&path, &w.into_inner().map_err(|e| Error::Format(e.to_string()))?)?;
    written.push(path);
    Ok(written)
}
