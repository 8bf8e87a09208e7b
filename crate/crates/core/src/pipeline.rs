//! Checkpoints, graph extraction and cutoff sweeps.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Array, ParamStore};
use crate::data::{encode, split_by_student, EncodedSequence, ResponseSequence, SkillIndex};
use crate::error::{Error, Result};
use crate::export::{align, LabeledGraph};
use crate::graph::AdjacencyMatrix;
use crate::mask::{extract_adjacency, structure_matrix, MaskSettings};
use crate::metrics::{structural_f1, StructuralScore};
use crate::model::{CausalKtModel, ModelSpec};
use crate::sinkhorn::{round_to_permutation, sinkhorn_array, Permutation};
use crate::trainer::{TrainConfig, TrainOutcome};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
const FORMAT: &str = "causal-kt-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub spec: ModelSpec,
    pub skill_index: SkillIndex,
    /// Mask settings of the last trained epoch.
    pub settings: MaskSettings,
    pub epochs_completed: usize,
    pub params: ParamStore,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn new(outcome: &TrainOutcome, config: &TrainConfig, skill_index: &SkillIndex) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: config.clone(),
            spec: *outcome.model.spec(),
            skill_index: skill_index.clone(),
            settings: config.final_settings(),
            epochs_completed: outcome.epochs_completed,
            params: outcome.model.params().clone(),
            optimizer: outcome.optimizer.clone(),
            rng: outcome.rng.clone(),
        }
    }

    pub fn model(&self) -> Result<CausalKtModel> {
        CausalKtModel::from_params(self.spec, self.params.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.skill_index.len() != ck.spec.num_skills {
            return Err(Error::Checkpoint(format!(
                "skill index has {} entries for {} skills",
                ck.skill_index.len(),
                ck.spec.num_skills
            )));
        }
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// The learned structure read out of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    /// Soft ordering matrix `P`.
    pub soft_ordering: Array,
    /// Hard ordering; entry `i` is the position of skill `i`.
    pub ordering: Permutation,
    /// `L` in ordering-position space.
    pub structure: Array,
}

impl Extraction {
    pub fn new(model: &CausalKtModel, settings: &MaskSettings) -> Result<Self> {
        let soft_ordering = sinkhorn_array(model.ordering_logits(), settings.sinkhorn)?;
        let ordering = round_to_permutation(&soft_ordering)?;
        let structure = structure_matrix(model.structure_logits(), settings.mode, settings.alpha)?;
        Ok(Extraction {
            soft_ordering,
            ordering,
            structure,
        })
    }

    pub fn adjacency(&self, kappa: f64) -> Result<AdjacencyMatrix> {
        extract_adjacency(&self.structure, &self.ordering, kappa)
    }
}

/// Encoded training and held-out sequences over a shared skill index.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub index: SkillIndex,
    pub train: Vec<EncodedSequence>,
    pub heldout: Vec<EncodedSequence>,
}

/// Encodes responses and splits them by student.
///
/// With a sidecar `index`, every skill id in the log must already appear in
/// it; otherwise the index is built from the log.
pub fn prepare_data(
    sequences: &[ResponseSequence],
    index: Option<SkillIndex>,
    heldout_fraction: f64,
    seed: u64,
) -> Result<PreparedData> {
    let index = match index {
        Some(ix) => ix,
        None => SkillIndex::from_ids(
            sequences
                .iter()
                .flat_map(|s| s.events.iter().map(|e| e.skill_id.as_str())),
        ),
    };
    let encoded = encode(sequences, &index)?;
    let (train, heldout) = split_by_student(&encoded, heldout_fraction, seed);
    Ok(PreparedData { index, train, heldout })
}

/// Parses `start:stop:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::Config(format!("grid must look like start:stop:step, got {spec:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kappa: f64,
    pub score: StructuralScore,
}

/// Structural scores of the graphs extracted at each cutoff.
pub fn sweep_kappa(
    extraction: &Extraction,
    index: &SkillIndex,
    truth: &LabeledGraph,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&kappa| {
            let pred = LabeledGraph::from_adjacency(&extraction.adjacency(kappa)?, index);
            let (p, t) = align(&pred, truth)?;
            Ok(SweepRow {
                kappa,
                score: structural_f1(&p, &t)?,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("kappa,precision,recall,f1\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.kappa, r.score.precision, r.score.recall, r.score.f1
        ));
    }
    out
}
