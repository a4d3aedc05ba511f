//! Per-epoch evaluation: K-means on posterior means, silhouette score,
//! Fréchet distances of reconstructions and generations, and validation
//! reconstruction loss.

mod frechet;
mod kmeans;
mod silhouette;

pub use frechet::{extract_features, frechet_distance, frechet_from_moments, FeatureExtractor, PreparedExtractor};
pub use kmeans::{kmeans, ClusterAssignment};
pub use silhouette::silhouette_score;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::DatasetSplit;
use crate::model::{gaussian_kl, softplus, VaeParams};
use crate::numerics::{mean_and_covariance, standard_normal_matrix, Matrix, RngState};
use crate::{Error, Result};

/// Default size of the evaluation batch.
pub const DEFAULT_EVAL_N: usize = 500;

const CLUSTER_STREAM: u64 = 1;
const GENERATE_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 3;

/// The quantities observed at the end of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub latent_dim: usize,
    pub silhouette: f64,
    pub fid_recon: f64,
    pub fid_gen: f64,
    /// Bernoulli NLL of reconstructions from the posterior means, summed over
    /// pixels and averaged over the evaluation batch.
    pub recon_loss: f64,
    pub kl: f64,
    /// `-(recon_loss + kl)`, evaluated at the posterior mean.
    pub elbo: f64,
}

/// What evaluation needs from a model.
pub trait Autoencoder {
    fn latent_dim(&self) -> usize;

    fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)>;

    fn decode(&self, z: &Matrix) -> Result<Matrix>;

    /// Reconstruction means for latent `z` and the batch-averaged Bernoulli
    /// NLL of `x` under them.
    fn reconstruct(&self, x: &Matrix, z: &Matrix) -> Result<(Matrix, f64)> {
        let probs = self.decode(z)?;
        let nll = bernoulli_nll(x, &probs)?;
        Ok((probs, nll))
    }

    fn generate(&self, n: usize, rng: &mut RngState) -> Result<Matrix> {
        self.decode(&standard_normal_matrix(rng, n, self.latent_dim()))
    }
}

impl Autoencoder for VaeParams {
    fn latent_dim(&self) -> usize {
        VaeParams::latent_dim(self)
    }

    fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
        VaeParams::encode(self, x)
    }

    fn decode(&self, z: &Matrix) -> Result<Matrix> {
        VaeParams::decode(self, z)
    }

    fn reconstruct(&self, x: &Matrix, z: &Matrix) -> Result<(Matrix, f64)> {
        let logits = self.decode_logits(z)?;
        if logits.shape() != x.shape() {
            return Err(Error::Shape("reconstruction shape differs from data".into()));
        }
        let nll = logits
            .data()
            .iter()
            .zip(x.data())
            .map(|(&l, &t)| softplus(l) - t * l)
            .sum::<f64>()
            / x.rows() as f64;
        let probs = logits.map(crate::model::sigmoid);
        Ok((probs, nll))
    }

    fn generate(&self, n: usize, rng: &mut RngState) -> Result<Matrix> {
        VaeParams::generate(self, n, rng)
    }
}

/// `-Σ [x ln p + (1-x) ln(1-p)]` per row, averaged over rows, with `p`
/// clamped away from 0 and 1 and `0·ln 0` taken as 0.
pub fn bernoulli_nll(x: &Matrix, probs: &Matrix) -> Result<f64> {
    if x.shape() != probs.shape() {
        return Err(Error::Shape(format!(
            "data {:?} vs probabilities {:?}",
            x.shape(),
            probs.shape()
        )));
    }
    const CLAMP: f64 = 1e-12;
    let mut total = 0.0;
    for (&t, &p) in x.data().iter().zip(probs.data()) {
        let p = p.clamp(CLAMP, 1.0 - CLAMP);
        if t > 0.0 {
            total -= t * p.ln();
        }
        if t < 1.0 {
            total -= (1.0 - t) * (1.0 - p).ln();
        }
    }
    Ok(total / x.rows().max(1) as f64)
}

/// Fixed evaluation context for one run.
///
/// The evaluation batch, its features and the feature projection are chosen
/// once from the evaluation seed; every call to [`Evaluator::evaluate`]
/// restarts the clustering and generation streams from that seed, so frozen
/// parameters always yield the same record.
#[derive(Clone, Debug)]
pub struct Evaluator {
    batch: Matrix,
    k_classes: usize,
    seed: u64,
    extractor: PreparedExtractor,
    ref_mean: Vec<f64>,
    ref_cov: Matrix,
}

impl Evaluator {
    pub fn new(val_x: &Matrix, k_classes: usize, eval_n: usize, eval_seed: u64, extractor: FeatureExtractor) -> Result<Self> {
        let available = val_x.rows();
        let n = if available < eval_n {
            log::warn!("validation set has {available} rows; evaluating on all of them instead of {eval_n}");
            available
        } else {
            eval_n
        };
        if n < k_classes.max(2) {
            return Err(Error::InvalidArgument(format!(
                "evaluation batch of {n} rows is too small for {k_classes} clusters"
            )));
        }
        let mut rng = RngState::new(eval_seed).stream(BATCH_STREAM);
        let picked = index::sample(&mut rng, available, n).into_vec();
        let batch = val_x.select_rows(&picked);
        let extractor = PreparedExtractor::new(extractor, val_x.cols())?;
        let (ref_mean, ref_cov) = mean_and_covariance(&extractor.apply(&batch)?)?;
        Ok(Self {
            batch,
            k_classes,
            seed: eval_seed,
            extractor,
            ref_mean,
            ref_cov,
        })
    }

    pub fn batch(&self) -> &Matrix {
        &self.batch
    }

    pub fn k_classes(&self) -> usize {
        self.k_classes
    }

    fn fid_to_reference(&self, images: &Matrix) -> Result<f64> {
        let (mean, cov) = mean_and_covariance(&self.extractor.apply(images)?)?;
        frechet_from_moments(&self.ref_mean, &self.ref_cov, &mean, &cov)
    }

    pub fn evaluate<M: Autoencoder + ?Sized>(&self, model: &M, epoch: usize) -> Result<MetricRecord> {
        let base = RngState::new(self.seed);
        let (mu, logvar) = model.encode(&self.batch)?;

        let clusters = kmeans(&mu, self.k_classes, &mut base.stream(CLUSTER_STREAM))?;
        // All means on top of each other: no cluster structure to score.
        let silhouette = if clusters.distinct_labels() < 2 {
            0.0
        } else {
            silhouette_score(&mu, &clusters.labels)?
        };

        let (recon, recon_loss) = model.reconstruct(&self.batch, &mu)?;
        let kl = mu
            .row_iter()
            .zip(logvar.row_iter())
            .map(|(m, lv)| gaussian_kl(m, lv))
            .sum::<f64>()
            / mu.rows() as f64;
        let fid_recon = self.fid_to_reference(&recon)?;
        let generated = model.generate(self.batch.rows(), &mut base.stream(GENERATE_STREAM))?;
        let fid_gen = self.fid_to_reference(&generated)?;

        let record = MetricRecord {
            epoch,
            latent_dim: model.latent_dim(),
            silhouette,
            fid_recon,
            fid_gen,
            recon_loss,
            kl,
            elbo: -(recon_loss + kl),
        };
        let finite = [record.silhouette, record.fid_recon, record.fid_gen, record.recon_loss, record.kl]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite(format!("metrics at epoch {epoch}: {record:?}")));
        }
        Ok(record)
    }
}

/// One-shot evaluation of `model` on the validation half of `split`.
pub fn evaluate_epoch<M: Autoencoder + ?Sized>(
    model: &M,
    split: &DatasetSplit,
    eval_n: usize,
    extractor: FeatureExtractor,
    eval_seed: u64,
    epoch: usize,
) -> Result<MetricRecord> {
    Evaluator::new(&split.val_x, split.k_classes, eval_n, eval_seed, extractor)?.evaluate(model, epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use crate::model::init_model;

    /// decode ∘ encode is the identity; latent = data.
    struct PerfectAutoencoder {
        d: usize,
    }

    impl Autoencoder for PerfectAutoencoder {
        fn latent_dim(&self) -> usize {
            self.d
        }
        fn encode(&self, x: &Matrix) -> Result<(Matrix, Matrix)> {
            Ok((x.clone(), Matrix::zeros(x.rows(), x.cols())))
        }
        fn decode(&self, z: &Matrix) -> Result<Matrix> {
            Ok(z.clone())
        }
    }

    fn self_nll(x: &Matrix) -> f64 {
        let mut total = 0.0;
        for &v in x.data() {
            if v > 0.0 && v < 1.0 {
                total -= v * v.ln() + (1.0 - v) * (1.0 - v).ln();
            }
        }
        total / x.rows() as f64
    }

    #[test]
    fn untrained_model_gives_finite_record() {
        let split = make_blobs(50, 3, 8, 0.05, 1).unwrap();
        let p = init_model(8, 6, 3, &mut RngState::new(0)).unwrap();
        let rec = evaluate_epoch(&p, &split, 500, FeatureExtractor::IdentityFlatten, 4, 0).unwrap();
        assert_eq!(rec.latent_dim, 3);
        assert!((-1.0..=1.0).contains(&rec.silhouette));
        assert!(rec.fid_recon >= 0.0 && rec.fid_gen >= 0.0);
    }

    #[test]
    fn perfect_autoencoder_stub() {
        let split = make_blobs(40, 3, 6, 0.05, 2).unwrap();
        let ev = Evaluator::new(&split.val_x, 3, 500, 7, FeatureExtractor::IdentityFlatten).unwrap();
        let rec = ev.evaluate(&PerfectAutoencoder { d: 6 }, 0).unwrap();
        assert!(rec.fid_recon <= 1e-8, "{}", rec.fid_recon);
        assert!((rec.recon_loss - self_nll(ev.batch())).abs() <= 1e-9);
        assert!(rec.silhouette > 0.5);
    }

    #[test]
    fn repeated_evaluation_is_identical() {
        let split = make_blobs(30, 2, 5, 0.1, 3).unwrap();
        let p = init_model(5, 4, 2, &mut RngState::new(1)).unwrap();
        let ev = Evaluator::new(&split.val_x, 2, 500, 11, FeatureExtractor::default()).unwrap();
        assert_eq!(ev.evaluate(&p, 3).unwrap(), ev.evaluate(&p, 3).unwrap());
    }

    #[test]
    fn nll_of_half_probabilities() {
        let x = Matrix::filled(2, 4, 0.5);
        let nll = bernoulli_nll(&x, &x).unwrap();
        assert!((nll - 4.0 * 2f64.ln()).abs() < 1e-12);
    }
}
