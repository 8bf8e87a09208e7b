//! Input encoding and response prediction.
//!
//! With embeddings, the GRU input for an answer to skill `c` is
//! `(e_c ± d) W_in + b_in`, adding `d` for a correct answer and subtracting it
//! otherwise. Without embeddings the input is the `C`-length one-hot vector
//! with `±1` at `c`.
//!
//! The output head reads `[e_c, h̃]` where `h̃` keeps only entry `c` of the
//! knowledge state. The single affine layer over the concatenation is stored
//! as two weight blocks, `w_emb` for `e_c` and `w_state` for `h̃`.

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub enum InputVars {
    Embedding {
        /// `C×D_e`; row `c` is the embedding of skill `c`.
        table: Var,
        /// `1×D_e` correctness offset.
        offset: Var,
        /// `D_e×D_in`.
        proj_w: Var,
        /// `1×D_in`.
        proj_b: Var,
    },
    OneHot {
        num_skills: usize,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    /// Embedding table shared with the input, absent in one-hot mode.
    pub table: Option<Var>,
    /// `D_e×1`.
    pub w_emb: Option<Var>,
    /// `C×1`.
    pub w_state: Var,
    /// `1×1`.
    pub bias: Var,
}

fn check_skills(skills: &[usize], num_skills: usize) -> Result<()> {
    match skills.iter().find(|&&s| s >= num_skills) {
        Some(s) => Err(Error::UnknownSkill(format!("index {s} (have {num_skills} skills)"))),
        None => Ok(()),
    }
}

fn signs(correct: &[bool]) -> Array {
    Array::column_vector(correct.iter().map(|&c| if c { 1.0 } else { -1.0 }).collect())
}

/// Batched GRU inputs, one row per `(skill, correct)` pair.
pub fn encode_input(tape: &mut Tape, skills: &[usize], correct: &[bool], vars: &InputVars) -> Result<Var> {
    if skills.len() != correct.len() {
        return Err(Error::Dimension {
            op: "encode_input",
            lhs: (skills.len(), 1),
            rhs: (correct.len(), 1),
        });
    }
    match *vars {
        InputVars::Embedding {
            table,
            offset,
            proj_w,
            proj_b,
        } => {
            check_skills(skills, tape.value(table).rows())?;
            let e = tape.gather_rows(table, skills)?;
            let s = tape.constant(signs(correct));
            let signed = tape.matmul(s, offset)?;
            let shifted = tape.add(e, signed)?;
            let proj = tape.matmul(shifted, proj_w)?;
            tape.add_row_broadcast(proj, proj_b)
        }
        InputVars::OneHot { num_skills } => {
            check_skills(skills, num_skills)?;
            let mut x = Array::zeros(skills.len(), num_skills);
            for (row, (&s, &c)) in skills.iter().zip(correct).enumerate() {
                x.set(row, s, if c { 1.0 } else { -1.0 });
            }
            Ok(tape.constant(x))
        }
    }
}

/// `h̃`: each row of `h` with every entry except the queried skill zeroed.
pub fn masked_state(tape: &mut Tape, h: Var, skills: &[usize]) -> Result<Var> {
    let (b, c) = tape.value(h).shape();
    if b != skills.len() {
        return Err(Error::Dimension {
            op: "masked_state",
            lhs: (b, c),
            rhs: (skills.len(), 1),
        });
    }
    check_skills(skills, c)?;
    let mut onehot = Array::zeros(b, c);
    for (row, &s) in skills.iter().enumerate() {
        onehot.set(row, s, 1.0);
    }
    let sel = tape.constant(onehot);
    tape.mul(h, sel)
}

/// Logit of a correct answer to `skills[r]` given state row `r`; `B×1`.
pub fn predict_logits(tape: &mut Tape, h: Var, skills: &[usize], head: &HeadVars) -> Result<Var> {
    let h_tilde = masked_state(tape, h, skills)?;
    let mut logits = tape.matmul(h_tilde, head.w_state)?;
    if let (Some(table), Some(w_emb)) = (head.table, head.w_emb) {
        let e = tape.gather_rows(table, skills)?;
        let from_emb = tape.matmul(e, w_emb)?;
        logits = tape.add(logits, from_emb)?;
    }
    tape.add_row_broadcast(logits, head.bias)
}

/// Probability of a correct answer; `B×1` with entries in `(0, 1)`.
pub fn predict_response(tape: &mut Tape, h: Var, skills: &[usize], head: &HeadVars) -> Result<Var> {
    let z = predict_logits(tape, h, skills, head)?;
    Ok(tape.sigmoid(z))
}
