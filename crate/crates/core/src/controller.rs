//! The compression schedule: metric histories, trailing-window slopes, the
//! fast-then-slow decrease and the freeze rule.
//!
//! Every `patience` epochs (epochs are 0-based; epoch 0 is never an
//! evaluation epoch) the controller looks at the least-squares slopes of the
//! last `window` values of the four curves. When all four are strictly
//! positive the latent size is frozen for the rest of the run. Otherwise, a
//! rising silhouette over the last `slowdown_window` values drops the
//! per-step decrease to 1, and the latent space shrinks by the current
//! decrease, never below [`LATENT_FLOOR`].

use serde::{Deserialize, Serialize};

use crate::metrics::MetricRecord;
use crate::model::LATENT_FLOOR;
use crate::numerics::least_squares_slope;
use crate::pruning::PruneEvent;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Epochs between decisions.
    pub patience: usize,
    /// Latent neurons removed per decision before the slow-down.
    pub decrease: usize,
    /// Trailing window for the freeze test.
    pub window: usize,
    /// Trailing window for the silhouette slow-down test.
    pub slowdown_window: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            patience: 5,
            decrease: 5,
            window: 20,
            slowdown_window: 10,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} must be at least 1")));
        if self.patience == 0 {
            return bad("patience");
        }
        if self.decrease == 0 {
            return bad("decrease");
        }
        // A one-point slope is undefined.
        if self.window < 2 || self.slowdown_window < 2 {
            return Err(Error::Config("slope windows must be at least 2".into()));
        }
        Ok(())
    }

    pub fn is_evaluation_epoch(&self, epoch: usize) -> bool {
        epoch > 0 && epoch.is_multiple_of(self.patience)
    }
}

/// Trailing-window slopes of the four monitored curves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub recon_loss: f64,
    pub silhouette: f64,
    pub fid_recon: f64,
    pub fid_gen: f64,
}

impl SlopeReport {
    pub fn all_positive(&self) -> bool {
        self.recon_loss > 0.0 && self.silhouette > 0.0 && self.fid_recon > 0.0 && self.fid_gen > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action", content = "n")]
pub enum Action {
    Continue,
    Prune(usize),
    Freeze,
}

/// One decision as it appears in a run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub epoch: usize,
    pub action: Action,
    /// Latent size when the decision was taken.
    pub latent_dim: usize,
    pub latent_decrease: usize,
    pub slopes: Option<SlopeReport>,
    pub slowdown_slope: Option<f64>,
}

/// Append-only metric curves, one value per recorded epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricHistory {
    pub epochs: Vec<usize>,
    pub silhouette: Vec<f64>,
    pub recon_loss: Vec<f64>,
    pub fid_recon: Vec<f64>,
    pub fid_gen: Vec<f64>,
}

impl MetricHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

fn tail(xs: &[f64], n: usize) -> &[f64] {
    &xs[xs.len() - n..]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    config: ControllerConfig,
    latent_dim: usize,
    latent_decrease: usize,
    compressing: bool,
    frozen_at: Option<usize>,
    history: MetricHistory,
    prune_log: Vec<PruneEvent>,
    decisions: Vec<Decision>,
    last_decided: Option<usize>,
}

impl ScheduleState {
    pub fn new(config: ControllerConfig, init_latent_dim: usize) -> Result<Self> {
        config.validate()?;
        if init_latent_dim < LATENT_FLOOR {
            return Err(Error::LatentFloor {
                floor: LATENT_FLOOR,
                detail: format!("initial latent dim {init_latent_dim}"),
            });
        }
        Ok(Self {
            config,
            latent_dim: init_latent_dim,
            latent_decrease: config.decrease,
            compressing: true,
            frozen_at: None,
            history: MetricHistory::default(),
            prune_log: Vec::new(),
            decisions: Vec::new(),
            last_decided: None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn latent_decrease(&self) -> usize {
        self.latent_decrease
    }

    pub fn is_compressing(&self) -> bool {
        self.compressing
    }

    /// Epoch at which the latent size was frozen.
    pub fn frozen_at(&self) -> Option<usize> {
        self.frozen_at
    }

    pub fn history(&self) -> &MetricHistory {
        &self.history
    }

    pub fn prune_log(&self) -> &[PruneEvent] {
        &self.prune_log
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn record_epoch(&mut self, record: &MetricRecord) -> Result<()> {
        if let Some(&last) = self.history.epochs.last() {
            if record.epoch <= last {
                return Err(Error::EpochOrder { got: record.epoch, last });
            }
        }
        let h = &mut self.history;
        h.epochs.push(record.epoch);
        h.silhouette.push(record.silhouette);
        h.recon_loss.push(record.recon_loss);
        h.fid_recon.push(record.fid_recon);
        h.fid_gen.push(record.fid_gen);
        Ok(())
    }

    /// Slopes over the last `window` records, or `None` until that many exist.
    pub fn compute_slopes(&self) -> Option<SlopeReport> {
        let w = self.config.window;
        let h = &self.history;
        if h.len() < w {
            return None;
        }
        let slope = |xs: &[f64]| least_squares_slope(tail(xs, w)).expect("window of at least 2");
        Some(SlopeReport {
            recon_loss: slope(&h.recon_loss),
            silhouette: slope(&h.silhouette),
            fid_recon: slope(&h.fid_recon),
            fid_gen: slope(&h.fid_gen),
        })
    }

    /// Silhouette slope over the last `slowdown_window` records.
    pub fn slowdown_slope(&self) -> Option<f64> {
        let w = self.config.slowdown_window;
        (self.history.len() >= w).then(|| least_squares_slope(tail(&self.history.silhouette, w)).expect("window of at least 2"))
    }

    /// Decision for `epoch`, which must be the most recently recorded epoch.
    ///
    /// A returned `Prune(n)` is expected to be applied and reported through
    /// [`ScheduleState::record_prune`] before the next decision.
    pub fn decide(&mut self, epoch: usize) -> Result<Action> {
        match self.history.epochs.last() {
            Some(&last) if last == epoch => {}
            Some(&last) => return Err(Error::EpochOrder { got: epoch, last }),
            None => {
                return Err(Error::InvalidArgument(format!("no metrics recorded before deciding epoch {epoch}")))
            }
        }
        if let Some(last) = self.last_decided {
            if epoch <= last {
                return Err(Error::EpochOrder { got: epoch, last });
            }
        }
        if let Some(pending) = self.decisions.last().and_then(|d| match d.action {
            Action::Prune(n) if self.prune_log.last().is_none_or(|e| e.epoch != d.epoch) => Some((d.epoch, n)),
            _ => None,
        }) {
            return Err(Error::InvalidArgument(format!(
                "prune of {} at epoch {} was never recorded",
                pending.1, pending.0
            )));
        }
        self.last_decided = Some(epoch);

        if !self.compressing || !self.config.is_evaluation_epoch(epoch) {
            return Ok(Action::Continue);
        }
        let slopes = self.compute_slopes();
        let slowdown_slope = self.slowdown_slope();
        let action = if slopes.is_some_and(|s| s.all_positive()) {
            self.compressing = false;
            self.frozen_at = Some(epoch);
            Action::Freeze
        } else {
            if slowdown_slope.is_some_and(|s| s > 0.0) && self.latent_decrease > 1 {
                self.latent_decrease = 1;
            }
            match self.latent_decrease.min(self.latent_dim - LATENT_FLOOR) {
                0 => Action::Continue,
                n => Action::Prune(n),
            }
        };
        self.decisions.push(Decision {
            epoch,
            action,
            latent_dim: self.latent_dim,
            latent_decrease: self.latent_decrease,
            slopes,
            slowdown_slope,
        });
        Ok(action)
    }

    /// Registers a prune that carried out the last `Prune` decision.
    pub fn record_prune(&mut self, event: PruneEvent) -> Result<()> {
        let expected = match self.decisions.last() {
            Some(Decision { epoch, action: Action::Prune(n), .. }) if *epoch == event.epoch => *n,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "no pending prune decision for epoch {}",
                    event.epoch
                )))
            }
        };
        if self.prune_log.last().is_some_and(|e| e.epoch == event.epoch) {
            return Err(Error::InvalidArgument(format!("prune at epoch {} already recorded", event.epoch)));
        }
        if event.old_nz != self.latent_dim || event.new_nz + expected != event.old_nz || event.removed_indices.len() != expected
        {
            return Err(Error::InvalidArgument(format!(
                "prune event {}→{} does not match decision to remove {expected} of {}",
                event.old_nz, event.new_nz, self.latent_dim
            )));
        }
        self.latent_dim = event.new_nz;
        self.prune_log.push(event);
        Ok(())
    }
}

/// Result of driving the controller over a recorded metric stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub stopping_epoch: Option<usize>,
    pub final_latent_dim: usize,
    pub trace: Vec<(usize, Action)>,
    pub state: ScheduleState,
}

/// Runs the controller over `stream` without any model. Prunes are taken to
/// remove the highest-numbered latent indices.
pub fn replay(stream: &[MetricRecord], config: ControllerConfig, init_latent_dim: usize) -> Result<Replay> {
    let mut state = ScheduleState::new(config, init_latent_dim)?;
    let mut trace = Vec::with_capacity(stream.len());
    for record in stream {
        state.record_epoch(record)?;
        let action = state.decide(record.epoch)?;
        if let Action::Prune(n) = action {
            let old = state.latent_dim();
            state.record_prune(PruneEvent {
                epoch: record.epoch,
                removed_indices: (old - n..old).collect(),
                old_nz: old,
                new_nz: old - n,
                strategy: Default::default(),
            })?;
        }
        trace.push((record.epoch, action));
    }
    Ok(Replay {
        stopping_epoch: state.frozen_at(),
        final_latent_dim: state.latent_dim(),
        trace,
        state,
    })
}
