//! End-to-end training with the temperature/unroll warm-up schedule.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape};
use crate::data::EncodedSequence;
use crate::error::{Error, Result};
use crate::mask::{structure_matrix, MaskSettings, StructureMode};
use crate::metrics::{prediction_metrics, PredictionMetrics};
use crate::model::{CausalKtModel, ModelSpec};
use crate::sinkhorn::{hardness, sinkhorn_array, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// `value = init + increment · k` after `k` completed periods.
    Additive,
    /// `value = init · increment^k`.
    Multiplicative,
    /// Temperature and unroll stay at their initial values.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init_temperature: f64,
    pub init_unroll: usize,
    pub temperature_increment: f64,
    pub unroll_increment: usize,
    pub schedule_period_epochs: usize,
    pub schedule: ScheduleMode,
    pub alpha_start: f64,
    pub alpha_increment: f64,
    pub alpha_cap: f64,
    pub structure_mode: StructureMode,
    pub kappa: f64,
    /// `None` trains the one-hot input variant.
    pub embedding_dim: Option<usize>,
    pub seed: u64,
    pub grad_clip: f64,
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 5e-4,
            init_temperature: 2.0,
            init_unroll: 5,
            temperature_increment: 2.0,
            unroll_increment: 5,
            schedule_period_epochs: 10,
            schedule: ScheduleMode::Additive,
            alpha_start: 1.0,
            alpha_increment: 1.0,
            alpha_cap: 10.0,
            structure_mode: StructureMode::Learnable,
            kappa: 0.45,
            embedding_dim: Some(32),
            seed: 0,
            grad_clip: 5.0,
            heldout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.schedule_period_epochs == 0 {
            return bad("schedule_period_epochs must be at least 1".into());
        }
        if !(self.alpha_start > 0.0 && self.alpha_cap > 0.0 && self.alpha_increment >= 0.0) {
            return bad("alpha schedule must be positive".into());
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa must lie in (0, 1), got {}", self.kappa));
        }
        if self.embedding_dim == Some(0) {
            return bad("embedding_dim must be at least 1".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive".into());
        }
        if !(0.0..1.0).contains(&self.heldout_fraction) {
            return bad("heldout_fraction must lie in [0, 1)".into());
        }
        if !(self.temperature_increment >= 0.0) {
            return bad("temperature_increment must be non-negative".into());
        }
        self.settings_for_epoch(0).validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    /// Mask settings in effect during `epoch` (0-based).
    pub fn settings_for_epoch(&self, epoch: usize) -> MaskSettings {
        let k = epoch / self.schedule_period_epochs.max(1);
        let (temperature, unroll) = match self.schedule {
            ScheduleMode::Additive => (
                self.init_temperature + self.temperature_increment * k as f64,
                self.init_unroll + self.unroll_increment * k,
            ),
            ScheduleMode::Multiplicative => (
                self.init_temperature * self.temperature_increment.powi(k as i32),
                self.init_unroll * self.unroll_increment.pow(k as u32),
            ),
            ScheduleMode::Fixed => (self.init_temperature, self.init_unroll),
        };
        let alpha = (self.alpha_start + self.alpha_increment * k as f64).min(self.alpha_cap);
        MaskSettings {
            mode: self.structure_mode,
            alpha,
            sinkhorn: SinkhornConfig {
                temperature,
                unroll,
            },
        }
    }

    /// Settings after the last trained epoch; used for extraction.
    pub fn final_settings(&self) -> MaskSettings {
        self.settings_for_epoch(self.epochs.saturating_sub(1))
    }

    pub fn model_spec(&self, num_skills: usize) -> ModelSpec {
        ModelSpec {
            num_skills,
            embedding_dim: self.embedding_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub hardness: f64,
    pub l_sparsity: f64,
    pub temperature: f64,
    pub unroll: usize,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,loss,hardness,L_sparsity,temperature,unroll\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.loss, r.hardness, r.l_sparsity, r.temperature, r.unroll
        ));
    }
    out
}

/// Everything a run produces; enough to resume or to extract a graph.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CausalKtModel,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub history: Vec<HistoryRow>,
    pub epochs_completed: usize,
    pub skipped_sequences: usize,
}

/// Fraction of strictly-lower structure entries below `kappa`.
pub fn structure_sparsity(model: &CausalKtModel, settings: &MaskSettings, kappa: f64) -> Result<f64> {
    let c = model.num_skills();
    if c < 2 {
        return Ok(0.0);
    }
    let l = structure_matrix(model.structure_logits(), settings.mode, settings.alpha)?;
    let mut below = 0usize;
    for i in 0..c {
        for k in 0..i {
            below += usize::from(l.get(i, k) < kappa);
        }
    }
    Ok(below as f64 / (c * (c - 1) / 2) as f64)
}

pub fn ordering_hardness(model: &CausalKtModel, settings: &MaskSettings) -> Result<f64> {
    Ok(hardness(&sinkhorn_array(model.ordering_logits(), settings.sinkhorn)?))
}

/// Trains a freshly initialized model on `sequences` over `num_skills`
/// skills.
pub fn train(sequences: &[EncodedSequence], num_skills: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::Contract("training needs at least one sequence".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = CausalKtModel::init(config.model_spec(num_skills), &mut rng)?;
    let mut optimizer = Adam::new(model.params(), config.learning_rate);

    let usable: Vec<&EncodedSequence> = sequences.iter().filter(|s| s.len() >= 2).collect();
    let skipped = sequences.len() - usable.len();
    if skipped > 0 {
        log::warn!("skipping {skipped} sequences with fewer than two events");
    }
    if usable.is_empty() {
        return Err(Error::Contract("no sequence has at least two events".into()));
    }

    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    for epoch in 0..config.epochs {
        let settings = config.settings_for_epoch(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&EncodedSequence> = chunk.iter().map(|&i| usable[i]).collect();
            let mut tape = Tape::new();
            let fw = model.forward(&mut tape, &settings)?;
            let Some(loss) = model.batch_loss(&mut tape, &fw, &batch)? else {
                continue;
            };
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {} batch {b}",
                    epoch + 1
                )));
            }
            let mut grads = tape.backward(loss)?.param_grads(model.params());
            grads.clip_global_norm(config.grad_clip);
            optimizer.step(model.params_mut(), &grads)?;
            loss_sum += value * batch.len() as f64;
            seen += batch.len();
        }
        let row = HistoryRow {
            epoch: epoch + 1,
            loss: loss_sum / seen.max(1) as f64,
            hardness: ordering_hardness(&model, &settings)?,
            l_sparsity: structure_sparsity(&model, &settings, config.kappa)?,
            temperature: settings.sinkhorn.temperature,
            unroll: settings.sinkhorn.unroll,
        };
        log::info!(
            "epoch {} loss {:.5} hardness {:.4} L sparsity {:.3} temperature {} unroll {}",
            row.epoch,
            row.loss,
            row.hardness,
            row.l_sparsity,
            row.temperature,
            row.unroll
        );
        history.push(row);
    }

    Ok(TrainOutcome {
        model,
        optimizer,
        rng,
        history,
        epochs_completed: config.epochs,
        skipped_sequences: skipped,
    })
}

/// Log-loss, AUC and accuracy over every predicted event of `heldout`.
pub fn evaluate_prediction(
    model: &CausalKtModel,
    settings: &MaskSettings,
    heldout: &[EncodedSequence],
) -> Result<PredictionMetrics> {
    if heldout.is_empty() {
        return Err(Error::Contract("held-out set is empty".into()));
    }
    let preds = model.predict(settings, heldout, 256)?;
    prediction_metrics(&preds)
}
