use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;

use latent_shrink::harness::{run, DatasetSpec, Mode, RunConfig, RunOutput};
use latent_shrink::metrics::FeatureExtractor;
use latent_shrink::pruning::PruneStrategy;

/// Train a VAE whose latent space shrinks during training, a fixed-size
/// baseline, or a grid of fixed sizes.
///
/// Flags override values from `--config`.
#[derive(Parser, Debug)]
#[command(name = "latent-shrink", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ald, fixed or grid.
    #[arg(long)]
    mode: Option<Mode>,
    /// blobs or idx.
    #[arg(long)]
    dataset: Option<String>,
    /// IDX image file (idx dataset).
    #[arg(long)]
    images: Option<PathBuf>,
    /// IDX label file (idx dataset).
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    val_images: Option<PathBuf>,
    #[arg(long)]
    val_labels: Option<PathBuf>,
    #[arg(long)]
    k_classes: Option<usize>,
    /// Use only the first N training rows.
    #[arg(long)]
    max_train: Option<usize>,
    #[arg(long)]
    blob_n_per_class: Option<usize>,
    #[arg(long)]
    blob_d: Option<usize>,
    #[arg(long)]
    blob_spread: Option<f64>,
    #[arg(long)]
    blob_seed: Option<u64>,
    #[arg(long)]
    init_dim: Option<usize>,
    /// Comma-separated latent sizes for fixed and grid modes.
    #[arg(long, value_delimiter = ',')]
    fixed_dims: Option<Vec<usize>>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    decrease: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    slowdown_window: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_seed: Option<u64>,
    #[arg(long)]
    eval_n: Option<usize>,
    /// identity, projection:DIM or projection:DIM:SEED.
    #[arg(long)]
    extractor: Option<FeatureExtractor>,
    /// random or lowest_kl.
    #[arg(long)]
    prune_strategy: Option<PruneStrategy>,
    /// Seeds per dimension in grid mode.
    #[arg(long)]
    num_seeds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

fn resolve(cli: Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    set!(cfg.mode, cli.mode);
    set!(cfg.init_dim, cli.init_dim);
    set!(cfg.fixed_dims, cli.fixed_dims);
    set!(cfg.hidden, cli.hidden);
    set!(cfg.controller.patience, cli.patience);
    set!(cfg.controller.decrease, cli.decrease);
    set!(cfg.controller.window, cli.window);
    set!(cfg.controller.slowdown_window, cli.slowdown_window);
    set!(cfg.epochs, cli.epochs);
    set!(cfg.batch_size, cli.batch_size);
    set!(cfg.lr, cli.lr);
    set!(cfg.seed, cli.seed);
    set!(cfg.eval_seed, cli.eval_seed);
    set!(cfg.eval_n, cli.eval_n);
    set!(cfg.extractor, cli.extractor);
    set!(cfg.prune_strategy, cli.prune_strategy);
    set!(cfg.num_seeds, cli.num_seeds);
    if cli.out.is_some() {
        cfg.out = cli.out;
    }

    let kind = match cli.dataset.as_deref() {
        Some(k) => k.to_string(),
        None if cli.images.is_some() => "idx".into(),
        None => match cfg.dataset {
            DatasetSpec::Blobs { .. } => "blobs".into(),
            DatasetSpec::Idx { .. } => "idx".into(),
        },
    };
    cfg.dataset = match (kind.as_str(), cfg.dataset) {
        ("blobs", previous) => {
            let base = match previous {
                blobs @ DatasetSpec::Blobs { .. } => blobs,
                DatasetSpec::Idx { .. } => DatasetSpec::default(),
            };
            let DatasetSpec::Blobs { n_per_class, k_classes, d, spread, seed } = base else {
                unreachable!()
            };
            DatasetSpec::Blobs {
                n_per_class: cli.blob_n_per_class.unwrap_or(n_per_class),
                k_classes: cli.k_classes.unwrap_or(k_classes),
                d: cli.blob_d.unwrap_or(d),
                spread: cli.blob_spread.unwrap_or(spread),
                seed: cli.blob_seed.unwrap_or(seed),
            }
        }
        ("idx" | "mnist", previous) => {
            let (images, labels, val_images, val_labels, k_classes, max_train) = match previous {
                DatasetSpec::Idx { images, labels, val_images, val_labels, k_classes, max_train } => {
                    (Some(images), Some(labels), val_images, val_labels, k_classes, max_train)
                }
                DatasetSpec::Blobs { .. } => (None, None, None, None, None, None),
            };
            DatasetSpec::Idx {
                images: cli.images.or(images).context("--images is required for an idx dataset")?,
                labels: cli.labels.or(labels).context("--labels is required for an idx dataset")?,
                val_images: cli.val_images.or(val_images),
                val_labels: cli.val_labels.or(val_labels),
                k_classes: cli.k_classes.or(k_classes),
                max_train: cli.max_train.or(max_train),
            }
        }
        (other, _) => bail!("unknown dataset {other:?}; expected blobs or idx"),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> anyhow::Result<()> {
    let cfg = resolve(Cli::parse())?;
    match run(&cfg)? {
        RunOutput::Single(log) => {
            println!("{}", serde_json::to_string_pretty(&log.summary)?);
        }
        RunOutput::Grid(table) => {
            println!("latent_dim,runs,silhouette,fid_recon,fid_gen,recon_loss");
            for m in &table.means {
                println!(
                    "{},{},{:.6},{:.6},{:.6},{:.6}",
                    m.latent_dim, m.runs, m.silhouette, m.fid_recon, m.fid_gen, m.recon_loss
                );
            }
            if let Some(best) = table.best_dim_by_fid_gen() {
                println!("best latent dim by fid_gen: {best}");
            }
        }
    }
    Ok(())
}
