//! The causal knowledge-tracing model: parameters, batched forward pass and
//! sequence loss.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, ParamId, ParamStore, Tape, Var};
use crate::data::EncodedSequence;
use crate::error::{Error, Result};
use crate::gru::{ensure_finite, gru_step, mask_weights, GruStep, GruVars};
use crate::heads::{encode_input, predict_logits, HeadVars, InputVars};
use crate::mask::{build_mask, MaskSettings, MaskVars};

/// Architecture sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub num_skills: usize,
    /// Skill embedding width; `None` selects one-hot inputs.
    pub embedding_dim: Option<usize>,
}

impl ModelSpec {
    /// GRU input width: the embedding width, or `C` for one-hot inputs.
    pub fn input_dim(&self) -> usize {
        self.embedding_dim.unwrap_or(self.num_skills)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_skills == 0 {
            return Err(Error::Config("model needs at least one skill".into()));
        }
        if self.embedding_dim == Some(0) {
            return Err(Error::Config("embedding_dim must be at least 1".into()));
        }
        Ok(())
    }
}

pub const ORDERING: &str = "ordering_logits";
pub const STRUCTURE: &str = "structure_logits";
const GRU_NAMES: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];
const EMBEDDING: &str = "embedding";
const OFFSET: &str = "correctness_offset";
const PROJ_W: &str = "input_proj_w";
const PROJ_B: &str = "input_proj_b";
const HEAD_EMB: &str = "head_w_emb";
const HEAD_STATE: &str = "head_w_state";
const HEAD_BIAS: &str = "head_bias";

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    ordering: ParamId,
    structure: ParamId,
    gru: [ParamId; 9],
    embedding: Option<[ParamId; 4]>,
    head_emb: Option<ParamId>,
    head_state: ParamId,
    head_bias: ParamId,
}

impl Ids {
    fn resolve(store: &ParamStore, spec: &ModelSpec) -> Result<Self> {
        let c = spec.num_skills;
        let d = spec.input_dim();
        let get = |name: &str, shape: (usize, usize)| -> Result<ParamId> {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if store.get(id).shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    store.get(id).shape()
                )));
            }
            Ok(id)
        };
        let gru_shape = |i: usize| match i {
            0..=2 => (c, c),
            3..=5 => (c, d),
            _ => (1, c),
        };
        let mut gru = [ParamId(0); 9];
        for (i, name) in GRU_NAMES.iter().enumerate() {
            gru[i] = get(name, gru_shape(i))?;
        }
        let (embedding, head_emb) = match spec.embedding_dim {
            Some(e) => (
                Some([
                    get(EMBEDDING, (c, e))?,
                    get(OFFSET, (1, e))?,
                    get(PROJ_W, (e, d))?,
                    get(PROJ_B, (1, d))?,
                ]),
                Some(get(HEAD_EMB, (e, 1))?),
            ),
            None => (None, None),
        };
        Ok(Ids {
            ordering: get(ORDERING, (c, c))?,
            structure: get(STRUCTURE, (c, c))?,
            gru,
            embedding,
            head_emb,
            head_state: get(HEAD_STATE, (c, 1))?,
            head_bias: get(HEAD_BIAS, (1, 1))?,
        })
    }
}

/// Parameters plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalKtModel {
    spec: ModelSpec,
    params: ParamStore,
    ids: Ids,
}

/// Every node the forward pass needs, built once per batch.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub mask: MaskVars,
    pub gru: GruVars,
    pub masked_gru: GruVars,
    step: GruStep,
    input: InputVars,
    head: HeadVars,
}

/// One predicted event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub correct: bool,
}

impl CausalKtModel {
    /// Fresh parameters. Recurrent, input and projection matrices are uniform
    /// in `±1/√fan_in`; ordering and structure logits are `N(0, 0.1²)`;
    /// embeddings are `N(0, 1)`; biases start at zero.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let c = spec.num_skills;
        let d = spec.input_dim();
        let uniform = |r: usize, k: usize, fan_in: usize, rng: &mut R| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            Array::from_fn(r, k, |_, _| rng.random_range(-bound..=bound))
        };
        let small = Normal::new(0.0, 0.1).expect("valid normal");
        let unit = Normal::new(0.0, 1.0).expect("valid normal");

        let mut store = ParamStore::new();
        store.insert(ORDERING, Array::from_fn(c, c, |_, _| small.sample(rng)));
        store.insert(STRUCTURE, Array::from_fn(c, c, |_, _| small.sample(rng)));
        for name in &GRU_NAMES[..3] {
            let w = uniform(c, c, c, rng);
            store.insert(*name, w);
        }
        for name in &GRU_NAMES[3..6] {
            let u = uniform(c, d, d, rng);
            store.insert(*name, u);
        }
        for name in &GRU_NAMES[6..] {
            store.insert(*name, Array::zeros(1, c));
        }
        if let Some(e) = spec.embedding_dim {
            store.insert(EMBEDDING, Array::from_fn(c, e, |_, _| unit.sample(rng)));
            store.insert(OFFSET, Array::from_fn(1, e, |_, _| unit.sample(rng)));
            let w = uniform(e, d, e, rng);
            store.insert(PROJ_W, w);
            store.insert(PROJ_B, Array::zeros(1, d));
            let w = uniform(e, 1, e + c, rng);
            store.insert(HEAD_EMB, w);
        }
        let w = uniform(c, 1, spec.embedding_dim.unwrap_or(0) + c, rng);
        store.insert(HEAD_STATE, w);
        store.insert(HEAD_BIAS, Array::zeros(1, 1));
        Self::from_params(spec, store)
    }

    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let ids = Ids::resolve(&params, &spec)?;
        Ok(CausalKtModel { spec, params, ids })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn num_skills(&self) -> usize {
        self.spec.num_skills
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn ordering_logits(&self) -> &Array {
        self.params.get(self.ids.ordering)
    }

    pub fn structure_logits(&self) -> &Array {
        self.params.get(self.ids.structure)
    }

    /// Loads `store`'s values (defaults to the model's own) and builds the
    /// mask, masked GRU weights and heads on `tape`.
    pub fn forward_with(&self, tape: &mut Tape, store: &ParamStore, settings: &MaskSettings) -> Result<Forward> {
        let ids = &self.ids;
        let ordering = tape.param(store, ids.ordering);
        let structure = tape.param(store, ids.structure);
        let mask = build_mask(tape, ordering, structure, settings)?;
        let g: Vec<Var> = ids.gru.iter().map(|&id| tape.param(store, id)).collect();
        let gru = GruVars {
            w_z: g[0],
            w_r: g[1],
            w_h: g[2],
            u_z: g[3],
            u_r: g[4],
            u_h: g[5],
            b_z: g[6],
            b_r: g[7],
            b_h: g[8],
        };
        let masked_gru = mask_weights(tape, &gru, mask.mask)?;
        let step = GruStep::new(tape, &masked_gru);
        let (input, table) = match ids.embedding {
            Some([table, offset, proj_w, proj_b]) => {
                let table = tape.param(store, table);
                (
                    InputVars::Embedding {
                        table,
                        offset: tape.param(store, offset),
                        proj_w: tape.param(store, proj_w),
                        proj_b: tape.param(store, proj_b),
                    },
                    Some(table),
                )
            }
            None => (
                InputVars::OneHot {
                    num_skills: self.spec.num_skills,
                },
                None,
            ),
        };
        let head = HeadVars {
            table,
            w_emb: ids.head_emb.map(|id| tape.param(store, id)),
            w_state: tape.param(store, ids.head_state),
            bias: tape.param(store, ids.head_bias),
        };
        Ok(Forward {
            mask,
            gru,
            masked_gru,
            step,
            input,
            head,
        })
    }

    pub fn forward(&self, tape: &mut Tape, settings: &MaskSettings) -> Result<Forward> {
        self.forward_with(tape, &self.params, settings)
    }

    /// Runs a batch through the GRU. For every step `t` with at least one
    /// sequence still predicting event `t + 1`, calls `on_step` with the logits
    /// for the next events and, per row, the `(label, sequence length)` of
    /// the next event or `None` for rows with nothing to predict.
    fn run_batch(
        &self,
        tape: &mut Tape,
        fw: &Forward,
        batch: &[&EncodedSequence],
        mut on_step: impl FnMut(&mut Tape, Var, &[Option<(bool, usize)>]) -> Result<()>,
    ) -> Result<()> {
        let b = batch.len();
        let max_len = batch.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut h = tape.constant(Array::zeros(b, self.spec.num_skills));
        for t in 0..max_len.saturating_sub(1) {
            let (skills, correct): (Vec<usize>, Vec<bool>) = batch
                .iter()
                .map(|s| s.steps.get(t).map_or((0, true), |e| (e.skill, e.correct)))
                .unzip();
            let x = encode_input(tape, &skills, &correct, &fw.input)?;
            h = gru_step(tape, h, x, &fw.step)?;
            ensure_finite(tape, h, t + 1)?;

            let next: Vec<Option<(bool, usize)>> = batch
                .iter()
                .map(|s| s.steps.get(t + 1).map(|e| (e.correct, s.len())))
                .collect();
            let next_skills: Vec<usize> = batch
                .iter()
                .map(|s| s.steps.get(t + 1).map_or(0, |e| e.skill))
                .collect();
            let logits = predict_logits(tape, h, &next_skills, &fw.head)?;
            on_step(tape, logits, &next)?;
        }
        Ok(())
    }

    /// Mean over sequences of the per-sequence mean negative log-likelihood,
    /// predicting event `t` from the state after events `1..t−1`. Sequences
    /// shorter than 2 are ignored; `None` when nothing is left.
    pub fn batch_loss(&self, tape: &mut Tape, fw: &Forward, batch: &[&EncodedSequence]) -> Result<Option<Var>> {
        let usable: Vec<&EncodedSequence> = batch.iter().copied().filter(|s| s.len() >= 2).collect();
        if usable.is_empty() {
            return Ok(None);
        }
        let n_seq = usable.len() as f64;
        let mut total: Option<Var> = None;
        self.run_batch(tape, fw, &usable, |tape, logits, next| {
            let targets: Vec<f64> = next
                .iter()
                .map(|n| n.map_or(0.0, |(c, _)| if c { 1.0 } else { 0.0 }))
                .collect();
            let weights: Vec<f64> = next
                .iter()
                .map(|n| n.map_or(0.0, |(_, len)| 1.0 / ((len - 1) as f64 * n_seq)))
                .collect();
            let step_loss = tape.bce_with_logits(logits, &targets, &weights)?;
            total = Some(match total {
                None => step_loss,
                Some(acc) => tape.add(acc, step_loss)?,
            });
            Ok(())
        })?;
        Ok(total)
    }

    /// Loss of a single sequence; `None` for sequences shorter than 2.
    pub fn sequence_loss(&self, tape: &mut Tape, fw: &Forward, seq: &EncodedSequence) -> Result<Option<Var>> {
        self.batch_loss(tape, fw, &[seq])
    }

    /// Mean loss over `sequences` in batches, forward only.
    pub fn mean_loss(&self, settings: &MaskSettings, sequences: &[EncodedSequence], batch_size: usize) -> Result<f64> {
        let usable: Vec<&EncodedSequence> = sequences.iter().filter(|s| s.len() >= 2).collect();
        if usable.is_empty() {
            return Err(Error::Contract("no sequence with at least two events".into()));
        }
        let mut sum = 0.0;
        for chunk in usable.chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            let fw = self.forward(&mut tape, settings)?;
            let loss = self.batch_loss(&mut tape, &fw, chunk)?.expect("chunk is non-empty");
            sum += tape.value(loss).item()? * chunk.len() as f64;
        }
        Ok(sum / usable.len() as f64)
    }

    /// Probability of every predicted event (`t ≥ 2`) in `sequences`.
    pub fn predict(
        &self,
        settings: &MaskSettings,
        sequences: &[EncodedSequence],
        batch_size: usize,
    ) -> Result<Vec<Prediction>> {
        let usable: Vec<&EncodedSequence> = sequences.iter().filter(|s| s.len() >= 2).collect();
        let mut out = Vec::new();
        for chunk in usable.chunks(batch_size.max(1)) {
            let mut tape = Tape::new();
            let fw = self.forward(&mut tape, settings)?;
            let mut per_row: Vec<Vec<Prediction>> = vec![Vec::new(); chunk.len()];
            self.run_batch(&mut tape, &fw, chunk, |tape, logits, next| {
                let z = tape.value(logits);
                for (row, n) in next.iter().enumerate() {
                    if let Some((correct, _)) = n {
                        let p = 1.0 / (1.0 + (-z.get(row, 0)).exp());
                        per_row[row].push(Prediction {
                            probability: p,
                            correct: *correct,
                        });
                    }
                }
                Ok(())
            })?;
            out.extend(per_row.into_iter().flatten());
        }
        Ok(out)
    }

    /// Same model with skill `i` renamed to `map[i]`: every skill-indexed
    /// axis is permuted. Ordering logits are permuted along rows only, which
    /// relabels `M = P L Pᵀ` consistently.
    pub fn relabel_skills(&self, map: &[usize]) -> Result<Self> {
        if map.len() != self.spec.num_skills {
            return Err(Error::Dimension {
                op: "relabel_skills",
                lhs: (map.len(), 1),
                rhs: (self.spec.num_skills, 1),
            });
        }
        crate::sinkhorn::Permutation::from_map(map.to_vec())?;
        let one_hot = self.spec.embedding_dim.is_none();
        let mut store = ParamStore::new();
        for (_, name, a) in self.params.iter() {
            // Structure logits live in ordering-position space and stay put.
            let rows_are_skills = matches!(
                name,
                ORDERING | "w_z" | "w_r" | "w_h" | "u_z" | "u_r" | "u_h" | EMBEDDING | HEAD_STATE
            );
            let cols_are_skills = match name {
                "w_z" | "w_r" | "w_h" | "b_z" | "b_r" | "b_h" => true,
                "u_z" | "u_r" | "u_h" => one_hot,
                _ => false,
            };
            let mut out = a.clone();
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    let ri = if rows_are_skills { map[i] } else { i };
                    let cj = if cols_are_skills { map[j] } else { j };
                    out.set(ri, cj, a.get(i, j));
                }
            }
            store.insert(name, out);
        }
        Self::from_params(self.spec, store)
    }
}
