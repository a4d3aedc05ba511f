//! Structural removal of latent neurons.
//!
//! Removing latent coordinate `j` deletes row `j` (and bias entry `j`) of the
//! mean and log-variance heads and column `j` of the decoder input layer. The
//! surviving weights are copied over unchanged, so decoding a pruned latent is
//! exactly decoding the original latent with zeros at the removed positions.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::model::{OptimizerState, VaeParams, LATENT_FLOOR};
use crate::numerics::RngState;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStrategy {
    #[default]
    Random,
    /// Drop the coordinates whose average posterior KL is smallest.
    LowestKl,
}

impl std::str::FromStr for PruneStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "lowest_kl" | "lowest-kl" => Ok(Self::LowestKl),
            other => Err(Error::Config(format!("unknown prune strategy {other:?}"))),
        }
    }
}

/// Audit record of one pruning action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub epoch: usize,
    pub removed_indices: Vec<usize>,
    pub old_nz: usize,
    pub new_nz: usize,
    pub strategy: PruneStrategy,
}

impl PruneEvent {
    pub fn at_epoch(mut self, epoch: usize) -> Self {
        self.epoch = epoch;
        self
    }

    pub fn with_strategy(mut self, strategy: PruneStrategy) -> Self {
        self.strategy = strategy;
        self
    }
}

/// Picks `n` latent coordinates to remove.
///
/// `per_dim_kl` is required for [`PruneStrategy::LowestKl`] and ignored
/// otherwise. The result is sorted ascending.
pub fn select_prune_indices(
    latent_dim: usize,
    n: usize,
    strategy: PruneStrategy,
    per_dim_kl: Option<&[f64]>,
    rng: &mut RngState,
) -> Result<Vec<usize>> {
    if latent_dim < LATENT_FLOOR || n > latent_dim - LATENT_FLOOR {
        return Err(Error::WouldViolateFloor {
            requested: n,
            latent_dim,
        });
    }
    let mut picked = match strategy {
        PruneStrategy::Random => index::sample(rng, latent_dim, n).into_vec(),
        PruneStrategy::LowestKl => {
            let kl = per_dim_kl.ok_or_else(|| {
                Error::InvalidArgument("lowest_kl pruning needs per-dimension KL values".into())
            })?;
            if kl.len() != latent_dim {
                return Err(Error::Shape(format!(
                    "{} KL values for latent dim {latent_dim}",
                    kl.len()
                )));
            }
            let mut order: Vec<usize> = (0..latent_dim).collect();
            // stable sort keeps lower indices first among ties
            order.sort_by(|&a, &b| kl[a].total_cmp(&kl[b]));
            order.truncate(n);
            order
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

fn normalize_indices(indices: &[usize], latent_dim: usize) -> Result<Vec<usize>> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != indices.len() {
        return Err(Error::InvalidArgument("duplicate prune indices".into()));
    }
    if let Some(&bad) = sorted.iter().find(|&&i| i >= latent_dim) {
        return Err(Error::IndexOutOfRange { index: bad, latent_dim });
    }
    if latent_dim - sorted.len() < LATENT_FLOOR {
        return Err(Error::WouldViolateFloor {
            requested: sorted.len(),
            latent_dim,
        });
    }
    Ok(sorted)
}

/// Removes the latent coordinates `indices` from `params`.
///
/// The returned event carries epoch 0 and the random strategy; callers tag it
/// with [`PruneEvent::at_epoch`] / [`PruneEvent::with_strategy`].
pub fn prune_latent(params: VaeParams, indices: &[usize]) -> Result<(VaeParams, PruneEvent)> {
    let old_nz = params.latent_dim();
    let sorted = normalize_indices(indices, old_nz)?;
    let pruned = if sorted.is_empty() {
        params
    } else {
        params.without_latent(&sorted)
    };
    let new_nz = pruned.latent_dim();
    Ok((
        pruned,
        PruneEvent {
            epoch: 0,
            removed_indices: sorted,
            old_nz,
            new_nz,
            strategy: PruneStrategy::Random,
        },
    ))
}

/// Prunes parameters and the optimizer's moment buffers with one index set.
pub fn prune_with_optimizer(
    params: VaeParams,
    optimizer: &mut OptimizerState,
    indices: &[usize],
) -> Result<(VaeParams, PruneEvent)> {
    let (pruned, event) = prune_latent(params, indices)?;
    if !event.removed_indices.is_empty() {
        optimizer.slice_latent(&event.removed_indices);
    }
    Ok((pruned, event))
}

/// Maps indices given in the coordinates of an already-pruned model back to
/// the coordinates before `earlier` was removed.
pub fn to_original_coordinates(earlier: &[usize], later: &[usize]) -> Vec<usize> {
    let mut sorted_earlier = earlier.to_vec();
    sorted_earlier.sort_unstable();
    let survivors: Vec<usize> = (0..)
        .filter(|i| sorted_earlier.binary_search(i).is_err())
        .take(later.iter().max().map_or(0, |m| m + 1))
        .collect();
    later.iter().map(|&j| survivors[j]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, AdamConfig};
    use crate::numerics::Matrix;

    #[test]
    fn random_selection_is_deterministic_and_distinct() {
        let a = select_prune_indices(10, 3, PruneStrategy::Random, None, &mut RngState::new(4)).unwrap();
        let b = select_prune_indices(10, 3, PruneStrategy::Random, None, &mut RngState::new(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&i| i < 10));
    }

    #[test]
    fn lowest_kl_breaks_ties_by_index() {
        let kl = [0.9, 0.1, 0.5, 0.1];
        let picked = select_prune_indices(4, 2, PruneStrategy::LowestKl, Some(&kl), &mut RngState::new(0)).unwrap();
        assert_eq!(picked, vec![1, 3]);
        assert!(select_prune_indices(4, 1, PruneStrategy::LowestKl, None, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn floor_is_enforced() {
        assert!(matches!(
            select_prune_indices(3, 2, PruneStrategy::Random, None, &mut RngState::new(0)),
            Err(Error::WouldViolateFloor { .. })
        ));
        let p = init_model(4, 3, 3, &mut RngState::new(0)).unwrap();
        assert!(prune_latent(p, &[0, 1]).is_err());
    }

    #[test]
    fn empty_prune_is_identity() {
        let p = init_model(4, 3, 3, &mut RngState::new(0)).unwrap();
        let (q, ev) = prune_latent(p.clone(), &[]).unwrap();
        assert_eq!(p, q);
        assert_eq!((ev.old_nz, ev.new_nz), (3, 3));
    }

    #[test]
    fn shapes_after_removing_index_two() {
        let p = init_model(6, 4, 5, &mut RngState::new(1)).unwrap();
        let (q, ev) = prune_latent(p.clone(), &[2]).unwrap();
        assert_eq!(q.mu_head().weight().shape(), (4, 4));
        assert_eq!(q.logvar_head().bias().len(), 4);
        assert_eq!(q.decoder_input().weight().shape(), (4, 4));
        assert_eq!(q.mu_head().weight().row(2), p.mu_head().weight().row(3));
        assert_eq!(q.decoder_input().weight().get(1, 2), p.decoder_input().weight().get(1, 3));
        assert_eq!(ev.removed_indices, vec![2]);
        assert_eq!(ev.new_nz, 4);
        assert_eq!(q.encoder_hidden(), p.encoder_hidden());
        assert_eq!(q.output_layer(), p.output_layer());
    }

    #[test]
    fn bad_indices_rejected() {
        let p = init_model(4, 3, 5, &mut RngState::new(0)).unwrap();
        assert!(matches!(prune_latent(p.clone(), &[5]), Err(Error::IndexOutOfRange { .. })));
        assert!(prune_latent(p, &[1, 1]).is_err());
    }

    #[test]
    fn optimizer_moments_follow_the_weights() {
        let mut rng = RngState::new(3);
        let mut p = init_model(5, 4, 4, &mut rng).unwrap();
        let x = Matrix::filled(3, 5, 0.25);
        let mut opt = OptimizerState::new(&p, AdamConfig::default());
        let out = crate::model::elbo_loss(&p, &x, &mut rng).unwrap();
        crate::model::backward_and_step(&mut p, &out.cache, &mut opt).unwrap();
        let m_before = opt.first_moment().mu_head().weight().row(3).to_vec();
        let (q, _) = prune_with_optimizer(p, &mut opt, &[1]).unwrap();
        assert_eq!(opt.first_moment().mu_head().weight().shape(), q.mu_head().weight().shape());
        assert_eq!(opt.first_moment().mu_head().weight().row(2), m_before.as_slice());
        let mut q = q;
        let out = crate::model::elbo_loss(&q, &x, &mut rng).unwrap();
        crate::model::backward_and_step(&mut q, &out.cache, &mut opt).unwrap();
    }

    #[test]
    fn coordinate_mapping() {
        // original 0..6, drop {1, 4} -> survivors [0, 2, 3, 5]
        assert_eq!(to_original_coordinates(&[4, 1], &[0, 3, 1]), vec![0, 5, 2]);
        assert_eq!(to_original_coordinates(&[], &[2]), vec![2]);
    }
}
