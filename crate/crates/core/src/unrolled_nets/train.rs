//! Two-phase layer-wise training.
//!
//! For every depth `k = 1..=K` the trainer runs two stages on the network
//! truncated to `k` layers:
//!
//! * phase A updates only layer `k−1` at rate `α₀`;
//! * phase B updates layers `0..k` at rate `α₁ = ratio·α₀`.
//!
//! Each stage starts a fresh Adam state. The loss is the per-sample mean of
//! `‖X̃ᵏ − X̃♮‖²_F`.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::forward::{backward, forward_batch, loss, GradScope};
use super::{Arch, NetParams};
use crate::batch::StackedBatch;
use crate::rng::derive_seed;
use crate::signal_model::{draw_sample, PreambleMatrix, SnrDb};
use crate::{metrics, Error, RMat, Result};

const SEED_TRAIN_STEP: u64 = 0x7472_6169;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Only the newest layer is trained.
    NewLayer,
    /// All layers up to the newest are fine-tuned.
    FineTune,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::NewLayer => "A",
            Phase::FineTune => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    /// `α₀`.
    pub lr0: f64,
    /// `α₁ / α₀`.
    pub fine_tune_ratio: f64,
    pub steps_per_phase: usize,
    pub adam: AdamConfig,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            lr0: 5e-4,
            fine_tune_ratio: 0.2,
            steps_per_phase: 400,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr0)));
        }
        if !(self.fine_tune_ratio > 0.0 && self.fine_tune_ratio.is_finite()) {
            return Err(Error::invalid("fine-tune ratio must be positive"));
        }
        Ok(())
    }
}

/// Draws a new batch of in-distribution samples for every optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct FreshSampler {
    pub preamble: PreambleMatrix,
    pub m: usize,
    pub activity_prob: f64,
    pub snr_db: SnrDb,
    pub batch_size: usize,
    pub seed: u64,
}

impl FreshSampler {
    /// Batch number `index`; a pure function of the sampler and `index`.
    pub fn batch(&self, index: u64) -> Result<StackedBatch> {
        let base = derive_seed(self.seed, SEED_TRAIN_STEP, index);
        let samples = (0..self.batch_size)
            .map(|i| draw_sample(&self.preamble, self.m, self.activity_prob, self.snr_db, derive_seed(base, 0, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(StackedBatch::from_samples(self.m, &samples))
    }
}

/// Where training samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleSource {
    /// The same batch at every step (deterministic full-batch gradients).
    Fixed(StackedBatch),
    /// A fresh batch at every step.
    Fresh(FreshSampler),
}

impl SampleSource {
    fn batch(&self, index: u64) -> Result<Cow<'_, StackedBatch>> {
        match self {
            SampleSource::Fixed(b) => Ok(Cow::Borrowed(b)),
            SampleSource::Fresh(f) => f.batch(index).map(Cow::Owned),
        }
    }

    fn check(&self, params: &NetParams) -> Result<()> {
        let (nl, ll, empty) = match self {
            SampleSource::Fixed(b) => (b.n_lifted(), b.l_lifted(), b.is_empty()),
            SampleSource::Fresh(f) => (2 * f.preamble.devices(), 2 * f.preamble.len(), f.batch_size == 0),
        };
        if empty {
            return Err(Error::invalid("training needs at least one sample per step"));
        }
        if (nl, ll) != (params.n_lifted, params.l_lifted) {
            return Err(Error::invalid(format!(
                "training data has lifted dims (2N, 2L) = ({nl}, {ll}), network expects ({}, {})",
                params.n_lifted, params.l_lifted
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    /// `0..2K`.
    pub stage: usize,
    /// Network depth `k` trained in this stage (1-based).
    pub depth: usize,
    pub phase: Phase,
    pub lr: f64,
    /// Loss before each optimizer step.
    pub losses: Vec<f64>,
    /// Loss after the last step, on the last step's batch.
    pub final_loss: f64,
    /// Validation NMSE (dB) at depth `k` after the stage.
    pub val_nmse_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub arch: Arch,
    pub k_layers: usize,
    pub schedule: TrainSchedule,
    pub stages: Vec<StageLog>,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

impl TrainLog {
    pub fn new(arch: Arch, k_layers: usize, schedule: TrainSchedule) -> Self {
        Self {
            arch,
            k_layers,
            schedule,
            stages: Vec::new(),
            diverged: None,
        }
    }
}

fn val_nmse(params: &NetParams, s: &RMat, val: Option<&StackedBatch>, depth: usize) -> Result<Option<f64>> {
    match val {
        Some(v) => {
            let tr = forward_batch(params, s, v, depth)?;
            Ok(Some(metrics::nmse(tr.output(), &v.x_true)?))
        }
        None => Ok(None),
    }
}

/// Trains `params` in place with the two-phase schedule.
///
/// `log` is filled as training proceeds, so it holds the stages completed
/// so far when a divergence aborts the run.
pub fn train_layerwise(
    params: &mut NetParams,
    s: &RMat,
    source: &SampleSource,
    schedule: &TrainSchedule,
    validation: Option<&StackedBatch>,
    log: &mut TrainLog,
) -> Result<()> {
    schedule.validate()?;
    source.check(params)?;
    let k_total = params.k_layers();
    let mut draw = 0u64;
    for depth in 1..=k_total {
        for phase in [Phase::NewLayer, Phase::FineTune] {
            let stage = 2 * (depth - 1) + usize::from(phase == Phase::FineTune);
            let (lr, scope, active) = match phase {
                Phase::NewLayer => (schedule.lr0, GradScope::LastLayer, depth - 1..depth),
                Phase::FineTune => (schedule.lr0 * schedule.fine_tune_ratio, GradScope::AllLayers, 0..depth),
            };
            let mut adam = AdamState::new(params, schedule.adam);
            let mut losses = Vec::with_capacity(schedule.steps_per_phase);
            let mut last_batch = None;
            for step in 0..schedule.steps_per_phase {
                let batch = source.batch(draw)?;
                draw += 1;
                let trace = forward_batch(params, s, &batch, depth)?;
                let value = loss(&trace, &batch.x_true)?;
                if !value.is_finite() {
                    return Err(diverged(log, stage, phase, step, value, losses, lr, depth));
                }
                losses.push(value);
                let grads = backward(params, &trace, s, &batch.y, &batch.x_true, scope)?;
                adam.step(params, &grads, lr, active.clone());
                last_batch = Some(batch);
            }
            let final_loss = match &last_batch {
                Some(b) => loss(&forward_batch(params, s, b, depth)?, &b.x_true)?,
                None => {
                    let b = source.batch(draw)?;
                    loss(&forward_batch(params, s, &b, depth)?, &b.x_true)?
                }
            };
            if !final_loss.is_finite() {
                let steps = losses.len();
                return Err(diverged(log, stage, phase, steps, final_loss, losses, lr, depth));
            }
            let val = val_nmse(params, s, validation, depth)?;
            log::info!(
                "{} stage {stage} (depth {depth}, phase {}): loss {:.4e} -> {:.4e}{}",
                params.arch,
                phase.label(),
                losses.first().copied().unwrap_or(final_loss),
                final_loss,
                val.map(|v| format!(", val nmse {v:.2} dB")).unwrap_or_default()
            );
            log.stages.push(StageLog {
                stage,
                depth,
                phase,
                lr,
                losses,
                final_loss,
                val_nmse_db: val,
            });
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn diverged(
    log: &mut TrainLog,
    stage: usize,
    phase: Phase,
    step: usize,
    value: f64,
    losses: Vec<f64>,
    lr: f64,
    depth: usize,
) -> Error {
    let phase_name = match phase {
        Phase::NewLayer => "new layer",
        Phase::FineTune => "fine tune",
    };
    log::error!("training diverged at stage {stage} ({phase_name}), step {step}: loss {value}");
    log.stages.push(StageLog {
        stage,
        depth,
        phase,
        lr,
        losses,
        final_loss: value,
        val_nmse_db: None,
    });
    log.diverged = Some(format!("stage {stage}, step {step}: loss {value}"));
    Error::Diverged {
        stage,
        phase: phase_name,
        step,
        loss: value,
    }
}
