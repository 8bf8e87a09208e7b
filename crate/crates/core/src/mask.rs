//! Permuted causal mask `M = P L Pᵀ`.
//!
//! `P` is a Sinkhorn-relaxed permutation (causal ordering) and `L` is lower
//! triangular with unit diagonal (causal structure). `M[i][j]` gates how much
//! the previous state of skill `j` may influence the new state of skill `i`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::sinkhorn::{sinkhorn, Permutation, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StructureMode {
    /// Strictly-lower part of `L` fixed to ones.
    FixedDense,
    /// Strictly-lower part is `sigmoid(alpha · L̄)`.
    Learnable,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSettings {
    pub mode: StructureMode,
    pub alpha: f64,
    pub sinkhorn: SinkhornConfig,
}

impl MaskSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        self.sinkhorn.validate()
    }
}

/// Nodes produced while building the mask.
#[derive(Clone, Copy, Debug)]
pub struct MaskVars {
    pub ordering: Var,
    pub structure: Var,
    pub mask: Var,
}

pub fn strictly_lower_ones(n: usize) -> Array {
    Array::from_fn(n, n, |i, k| if i > k { 1.0 } else { 0.0 })
}

pub fn lower_ones(n: usize) -> Array {
    Array::from_fn(n, n, |i, k| if i >= k { 1.0 } else { 0.0 })
}

/// Builds `L` on the tape. `structure_logits` is ignored in fixed-dense mode.
pub fn build_l(
    tape: &mut Tape,
    structure_logits: Var,
    mode: StructureMode,
    alpha: f64,
) -> Result<Var> {
    let (n, cols) = tape.value(structure_logits).shape();
    if n != cols {
        return Err(Error::Dimension {
            op: "build_l",
            lhs: (n, cols),
            rhs: (cols, n),
        });
    }
    match mode {
        StructureMode::FixedDense => Ok(tape.constant(lower_ones(n))),
        StructureMode::Learnable => {
            let scaled = tape.scale(structure_logits, alpha);
            let soft = tape.sigmoid(scaled);
            let below = tape.constant(strictly_lower_ones(n));
            let lower = tape.mul(soft, below)?;
            let diag = tape.constant(Array::identity(n));
            tape.add(lower, diag)
        }
    }
}

/// Builds `P`, `L` and `M = P L Pᵀ` on the tape.
pub fn build_mask(
    tape: &mut Tape,
    ordering_logits: Var,
    structure_logits: Var,
    settings: &MaskSettings,
) -> Result<MaskVars> {
    settings.validate()?;
    let ordering = sinkhorn(tape, ordering_logits, settings.sinkhorn)?;
    let structure = build_l(tape, structure_logits, settings.mode, settings.alpha)?;
    let pl = tape.matmul(ordering, structure)?;
    let pt = tape.transpose(ordering);
    let mask = tape.matmul(pl, pt)?;
    Ok(MaskVars {
        ordering,
        structure,
        mask,
    })
}

/// Forward-only `L` from structure logits.
pub fn structure_matrix(structure_logits: &Array, mode: StructureMode, alpha: f64) -> Result<Array> {
    let mut tape = Tape::new();
    let l = tape.constant(structure_logits.clone());
    let out = build_l(&mut tape, l, mode, alpha)?;
    Ok(tape.value(out).clone())
}

/// `P A Pᵀ` for the hard permutation `P` with ones at `(i, perm[i])`:
/// entry `(i, j)` of the result is `a[perm[i]][perm[j]]`.
pub fn conjugate(a: &Array, perm: &Permutation) -> Array {
    Array::from_fn(a.rows(), a.cols(), |i, j| a.get(perm.apply(i), perm.apply(j)))
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Config(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    Ok(())
}

/// Binarizes a mask-like matrix: entries `>= kappa` become edges, the
/// diagonal is dropped.
pub fn threshold_adjacency(m: &Array, kappa: f64) -> Result<AdjacencyMatrix> {
    check_kappa(kappa)?;
    if m.rows() != m.cols() {
        return Err(Error::Dimension {
            op: "threshold_adjacency",
            lhs: m.shape(),
            rhs: (m.cols(), m.rows()),
        });
    }
    let n = m.rows();
    let mut adj = AdjacencyMatrix::empty(n);
    for i in 0..n {
        for k in 0..n {
            if i != k && m.get(i, k) >= kappa {
                adj.set(i, k, true);
            }
        }
    }
    Ok(adj)
}

/// Reported prerequisite graph: threshold the learned `L` at `kappa`, keep
/// only its strictly-lower part, and relabel into skill indices through the
/// hard ordering.
pub fn extract_adjacency(l: &Array, ordering: &Permutation, kappa: f64) -> Result<AdjacencyMatrix> {
    check_kappa(kappa)?;
    if l.rows() != ordering.len() || l.cols() != ordering.len() {
        return Err(Error::Dimension {
            op: "extract_adjacency",
            lhs: l.shape(),
            rhs: (ordering.len(), ordering.len()),
        });
    }
    let binary = Array::from_fn(l.rows(), l.cols(), |i, k| {
        if i > k && l.get(i, k) >= kappa {
            1.0
        } else {
            0.0
        }
    });
    threshold_adjacency(&conjugate(&binary, ordering), 0.5)
}
