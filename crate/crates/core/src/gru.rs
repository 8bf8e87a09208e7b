//! GRU transition whose recurrent matrices are masked by `M`.
//!
//! States are batched as `B×C` matrices, one row per student and one column
//! per skill. With `W'` the masked recurrent matrix and row vectors `h`, `x`:
//!
//! ```text
//! z  = sigmoid(h W'_zᵀ + x U_zᵀ + b_z)
//! r  = sigmoid(h W'_rᵀ + x U_rᵀ + b_r)
//! h̃  = tanh(r ⊙ (h W'ᵀ) + x Uᵀ + b)
//! h' = (1 − z) ⊙ h + z ⊙ h̃
//! ```
//!
//! The reset gate multiplies the recurrent product row-wise, so every path
//! from `h_j` into `h'_i` passes through row `i` of a masked matrix and
//! `∂h'_i/∂h_j = 0` whenever `M_ij = 0` (for `i ≠ j`).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// GRU weights loaded onto a tape.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

/// `W'_* = M ⊙ W_*` for the three recurrent matrices; input projections and
/// biases pass through.
pub fn mask_weights(tape: &mut Tape, g: &GruVars, mask: Var) -> Result<GruVars> {
    Ok(GruVars {
        w_z: tape.mul(mask, g.w_z)?,
        w_r: tape.mul(mask, g.w_r)?,
        w_h: tape.mul(mask, g.w_h)?,
        ..*g
    })
}

/// Transposed weights ready for batched row-vector products.
#[derive(Clone, Copy, Debug)]
pub struct GruStep {
    wz_t: Var,
    wr_t: Var,
    wh_t: Var,
    uz_t: Var,
    ur_t: Var,
    uh_t: Var,
    b_z: Var,
    b_r: Var,
    b_h: Var,
}

impl GruStep {
    pub fn new(tape: &mut Tape, g: &GruVars) -> Self {
        GruStep {
            wz_t: tape.transpose(g.w_z),
            wr_t: tape.transpose(g.w_r),
            wh_t: tape.transpose(g.w_h),
            uz_t: tape.transpose(g.u_z),
            ur_t: tape.transpose(g.u_r),
            uh_t: tape.transpose(g.u_h),
            b_z: g.b_z,
            b_r: g.b_r,
            b_h: g.b_h,
        }
    }
}

fn affine(tape: &mut Tape, h: Var, w_t: Var, x: Var, u_t: Var, b: Var) -> Result<Var> {
    let hw = tape.matmul(h, w_t)?;
    let xu = tape.matmul(x, u_t)?;
    let s = tape.add(hw, xu)?;
    tape.add_row_broadcast(s, b)
}

/// One transition for a batch: `h_prev` is `B×C`, `x` is `B×D_in`.
pub fn gru_step(tape: &mut Tape, h_prev: Var, x: Var, w: &GruStep) -> Result<Var> {
    let pre_z = affine(tape, h_prev, w.wz_t, x, w.uz_t, w.b_z)?;
    let z = tape.sigmoid(pre_z);
    let pre_r = affine(tape, h_prev, w.wr_t, x, w.ur_t, w.b_r)?;
    let r = tape.sigmoid(pre_r);

    let hw = tape.matmul(h_prev, w.wh_t)?;
    let gated = tape.mul(r, hw)?;
    let xu = tape.matmul(x, w.uh_t)?;
    let s = tape.add(gated, xu)?;
    let pre_h = tape.add_row_broadcast(s, w.b_h)?;
    let candidate = tape.tanh(pre_h);

    let keep = tape.mul(z, h_prev)?;
    let write = tape.mul(z, candidate)?;
    let leak = tape.sub(h_prev, keep)?;
    tape.add(leak, write)
}

pub(crate) fn ensure_finite(tape: &Tape, h: Var, step: usize) -> Result<()> {
    if !tape.value(h).is_finite() {
        return Err(Error::Numerical(format!("non-finite knowledge state at step {step}")));
    }
    Ok(())
}

/// States `h_1..h_T` from repeated [`gru_step`] starting at `h0`.
pub fn unroll_sequence(tape: &mut Tape, inputs: &[Var], h0: Var, w: &GruStep) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(Error::Contract("cannot unroll an empty sequence".into()));
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut h = h0;
    for (t, &x) in inputs.iter().enumerate() {
        h = gru_step(tape, h, x, w)?;
        ensure_finite(tape, h, t + 1)?;
        states.push(h);
    }
    Ok(states)
}
