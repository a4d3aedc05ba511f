//! Experiment runners: adaptive compression, a fixed latent size, and a grid
//! of fixed sizes, with logging and plot-data output.

mod config;
mod log;

pub use self::config::{DatasetSpec, Mode, RunConfig};
pub use self::log::{
    emit_plot_data, metrics_csv, read_metrics_csv, RunLog, RunSummary, Timings, CHECKPOINT_FILE, CONFIG_FILE,
    DECISIONS_FILE, EVENTS_FILE, METRICS_FILE, SUMMARY_FILE,
};

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::controller::{Action, ScheduleState};
use crate::data::{batch_indices, DatasetSplit};
use crate::metrics::Evaluator;
use crate::model::{backward_and_step, elbo_loss, init_model, per_dimension_kl, OptimizerState};
use crate::numerics::RngState;
use crate::pruning::{prune_with_optimizer, select_prune_indices, PruneStrategy};
use crate::{Error, Result};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const PRUNE_STREAM: u64 = 3;

/// Runs whatever `config.mode` asks for. Grid runs return the table; the
/// others their log.
pub enum RunOutput {
    Single(Box<RunLog>),
    Grid(GridTable),
}

pub fn run(config: &RunConfig) -> Result<RunOutput> {
    match config.mode {
        Mode::Ald => run_ald(config).map(|l| RunOutput::Single(Box::new(l))),
        Mode::Fixed => run_fixed(config).map(|l| RunOutput::Single(Box::new(l))),
        Mode::Grid => run_grid(config).map(RunOutput::Grid),
    }
}

fn require_mode(config: &RunConfig, mode: Mode) -> Result<()> {
    if config.mode != mode {
        return Err(Error::Config(format!("expected mode {mode}, config has {}", config.mode)));
    }
    config.validate()
}

/// Trains with the compression controller active.
pub fn run_ald(config: &RunConfig) -> Result<RunLog> {
    require_mode(config, Mode::Ald)?;
    let split = config.dataset.load()?;
    let log = train(config, &split, config.init_dim, true)?;
    finish(log, config.out.as_deref())
}

/// Trains at the single latent size in `config.fixed_dims`.
pub fn run_fixed(config: &RunConfig) -> Result<RunLog> {
    require_mode(config, Mode::Fixed)?;
    let split = config.dataset.load()?;
    let log = train(config, &split, config.fixed_dims[0], false)?;
    finish(log, config.out.as_deref())
}

fn finish(log: RunLog, out: Option<&Path>) -> Result<RunLog> {
    if let Some(dir) = out {
        log.write(dir)?;
        emit_plot_data(&log, dir.join("plot"))?;
    }
    Ok(log)
}

fn train(config: &RunConfig, split: &DatasetSplit, init_dim: usize, adaptive: bool) -> Result<RunLog> {
    let started = Instant::now();
    let root = RngState::new(config.seed);
    let mut model = init_model(split.d, config.hidden, init_dim, &mut root.stream(INIT_STREAM))?;
    let mut optimizer = OptimizerState::new(&model, config.adam());
    let evaluator = Evaluator::new(&split.val_x, split.k_classes, config.eval_n, config.eval_seed, config.extractor)?;
    let mut shuffle = root.stream(SHUFFLE_STREAM);
    let mut noise = root.stream(NOISE_STREAM);
    let mut prune_rng = root.stream(PRUNE_STREAM);
    let mut schedule = if adaptive {
        Some(ScheduleState::new(config.controller, init_dim)?)
    } else {
        None
    };

    let mut records = Vec::with_capacity(config.epochs);
    let mut train_losses = Vec::with_capacity(config.epochs);
    let mut timings = Timings::default();

    for epoch in 0..config.epochs {
        let t = Instant::now();
        let mut total = 0.0;
        for (b, idx) in batch_indices(split.train_x.rows(), config.batch_size, &mut shuffle)?.iter().enumerate() {
            let batch = split.train_x.select_rows(idx);
            let out = elbo_loss(&model, &batch, &mut noise).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!(
                    "training diverged at epoch {epoch}, batch {b}, latent dim {}: {m}",
                    model.latent_dim()
                )),
                other => other,
            })?;
            total += out.loss * batch.rows() as f64;
            backward_and_step(&mut model, &out.cache, &mut optimizer)?;
        }
        let train_loss = total / split.train_x.rows() as f64;
        train_losses.push(train_loss);
        timings.train_secs += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let record = evaluator.evaluate(&model, epoch)?;
        timings.eval_secs += t.elapsed().as_secs_f64();
        ::log::debug!(
            "epoch {epoch}: n_z {} loss {train_loss:.4} silhouette {:.4} fid_recon {:.4} fid_gen {:.4}",
            record.latent_dim,
            record.silhouette,
            record.fid_recon,
            record.fid_gen
        );

        if let Some(state) = schedule.as_mut() {
            state.record_epoch(&record)?;
            match state.decide(epoch)? {
                Action::Prune(n) => {
                    let kl = match config.prune_strategy {
                        PruneStrategy::LowestKl => {
                            let (mu, logvar) = model.encode(evaluator.batch())?;
                            Some(per_dimension_kl(&mu, &logvar))
                        }
                        PruneStrategy::Random => None,
                    };
                    let indices =
                        select_prune_indices(model.latent_dim(), n, config.prune_strategy, kl.as_deref(), &mut prune_rng)?;
                    let (pruned, event) = prune_with_optimizer(model, &mut optimizer, &indices)?;
                    model = pruned;
                    ::log::info!("epoch {epoch}: latent dim {} -> {}", event.old_nz, event.new_nz);
                    state.record_prune(event.at_epoch(epoch).with_strategy(config.prune_strategy))?;
                }
                Action::Freeze => ::log::info!("epoch {epoch}: latent dim frozen at {}", model.latent_dim()),
                Action::Continue => {}
            }
        }
        records.push(record);
    }
    timings.total_secs = started.elapsed().as_secs_f64();

    let (decisions, prune_events, stopping_epoch) = match schedule {
        Some(s) => (s.decisions().to_vec(), s.prune_log().to_vec(), s.frozen_at()),
        None => (Vec::new(), Vec::new(), None),
    };
    let summary = RunSummary {
        mode: config.mode,
        seed: config.seed,
        epochs: config.epochs,
        init_latent_dim: init_dim,
        final_latent_dim: model.latent_dim(),
        stopping_epoch,
        final_metrics: records.last().cloned().expect("at least one epoch"),
        final_train_loss: *train_losses.last().expect("at least one epoch"),
        timings,
    };
    Ok(RunLog {
        config: config.clone(),
        records,
        train_losses,
        decisions,
        prune_events,
        summary,
        model,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub latent_dim: usize,
    pub seed: u64,
    pub silhouette: f64,
    pub fid_recon: f64,
    pub fid_gen: f64,
    pub recon_loss: f64,
    pub secs: f64,
}

/// Per-dimension averages over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMean {
    pub latent_dim: usize,
    pub runs: usize,
    pub silhouette: f64,
    pub fid_recon: f64,
    pub fid_gen: f64,
    pub recon_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
    pub means: Vec<GridMean>,
    pub total_secs: f64,
}

impl GridTable {
    /// Dimension with the lowest mean generation Fréchet distance.
    pub fn best_dim_by_fid_gen(&self) -> Option<usize> {
        self.means
            .iter()
            .min_by(|a, b| a.fid_gen.total_cmp(&b.fid_gen))
            .map(|m| m.latent_dim)
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io("creating output directory", dir, e))?;
        fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in rows {
                w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
            }
            w.into_inner().map_err(|e| Error::Format(e.to_string()))
        }
        for (name, bytes) in [("grid.csv", to_csv(&self.rows)?), ("grid_means.csv", to_csv(&self.means)?)] {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io("writing", &path, e))?;
        }
        Ok(())
    }
}

/// One fixed-size run per dimension in `config.fixed_dims` and per seed in
/// `config.seed .. config.seed + config.num_seeds`, run one after another.
pub fn run_grid(config: &RunConfig) -> Result<GridTable> {
    require_mode(config, Mode::Grid)?;
    let started = Instant::now();
    let split = config.dataset.load()?;
    let mut rows = Vec::new();
    for &dim in &config.fixed_dims {
        for seed in (0..config.num_seeds as u64).map(|i| config.seed + i) {
            let run_config = config.fixed_at(dim, seed);
            let log = train(&run_config, &split, dim, false)?;
            if let Some(out) = &config.out {
                finish_into(&log, &out.join(format!("dim{dim}_seed{seed}")))?;
            }
            let m = &log.summary.final_metrics;
            rows.push(GridRow {
                latent_dim: dim,
                seed,
                silhouette: m.silhouette,
                fid_recon: m.fid_recon,
                fid_gen: m.fid_gen,
                recon_loss: m.recon_loss,
                secs: log.summary.timings.total_secs,
            });
        }
    }
    let means = config
        .fixed_dims
        .iter()
        .map(|&dim| {
            let of_dim: Vec<&GridRow> = rows.iter().filter(|r| r.latent_dim == dim).collect();
            let n = of_dim.len() as f64;
            let mean = |f: fn(&GridRow) -> f64| of_dim.iter().map(|r| f(r)).sum::<f64>() / n;
            GridMean {
                latent_dim: dim,
                runs: of_dim.len(),
                silhouette: mean(|r| r.silhouette),
                fid_recon: mean(|r| r.fid_recon),
                fid_gen: mean(|r| r.fid_gen),
                recon_loss: mean(|r| r.recon_loss),
            }
        })
        .collect();
    let table = GridTable {
        rows,
        means,
        total_secs: started.elapsed().as_secs_f64(),
    };
    if let Some(out) = &config.out {
        table.write(out)?;
    }
    Ok(table)
}

fn finish_into(log: &RunLog, dir: &Path) -> Result<()> {
    log.write(dir)?;
    emit_plot_data(log, dir.join("plot")).map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::FeatureExtractor;

    fn tiny(mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            dataset: DatasetSpec::Blobs {
                n_per_class: 20,
                k_classes: 3,
                d: 8,
                spread: 0.05,
                seed: 1,
            },
            init_dim: 8,
            fixed_dims: vec![2],
            hidden: 8,
            epochs: 12,
            batch_size: 16,
            eval_n: 30,
            extractor: FeatureExtractor::IdentityFlatten,
            ..Default::default()
        }
    }

    #[test]
    fn fixed_run_logs_every_epoch() {
        let log = run_fixed(&tiny(Mode::Fixed)).unwrap();
        assert_eq!(log.records.len(), 12);
        assert!(log.records.iter().all(|r| r.latent_dim == 2 && r.fid_gen.is_finite()));
        assert!(log.prune_events.is_empty());
    }

    #[test]
    fn ald_run_prunes_at_evaluation_epochs() {
        let log = run_ald(&tiny(Mode::Ald)).unwrap();
        assert_eq!(log.records.len(), 12);
        assert_eq!(log.records[5].latent_dim, 8);
        assert_eq!(log.records[6].latent_dim, 3);
        assert_eq!(log.prune_events.len(), 2);
        assert_eq!(log.summary.final_latent_dim, 2);
    }

    #[test]
    fn wrong_mode_is_rejected() {
        assert!(run_ald(&tiny(Mode::Fixed)).is_err());
        assert!(run_fixed(&tiny(Mode::Ald)).is_err());
    }
}
