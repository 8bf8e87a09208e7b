//! Structural and predictive evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::model::Prediction;

/// Directed relationship of an unordered pair `(i, j)` with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelationshipClass {
    None,
    /// `i → j` only.
    Forward,
    /// `j → i` only.
    Backward,
    Bidirectional,
}

impl RelationshipClass {
    pub fn of(a: &AdjacencyMatrix, i: usize, j: usize) -> Self {
        match (a.has_edge(i, j), a.has_edge(j, i)) {
            (false, false) => RelationshipClass::None,
            (true, false) => RelationshipClass::Forward,
            (false, true) => RelationshipClass::Backward,
            (true, true) => RelationshipClass::Bidirectional,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Pairwise F1 between predicted and true prerequisite graphs.
///
/// Every unordered pair is classified in both graphs. Recall counts exact
/// class matches among pairs related in the truth; precision counts exact
/// matches among pairs related in the prediction.
pub fn structural_f1(pred: &AdjacencyMatrix, truth: &AdjacencyMatrix) -> Result<StructuralScore> {
    if pred.size() != truth.size() {
        return Err(Error::Dimension {
            op: "structural_f1",
            lhs: (pred.size(), pred.size()),
            rhs: (truth.size(), truth.size()),
        });
    }
    let n = pred.size();
    let (mut truth_pairs, mut pred_pairs, mut matches) = (0usize, 0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let p = RelationshipClass::of(pred, i, j);
            let t = RelationshipClass::of(truth, i, j);
            let related_t = t != RelationshipClass::None;
            let related_p = p != RelationshipClass::None;
            truth_pairs += usize::from(related_t);
            pred_pairs += usize::from(related_p);
            matches += usize::from(related_t && p == t);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(matches, pred_pairs);
    let recall = ratio(matches, truth_pairs);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(StructuralScore {
        precision,
        recall,
        f1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub log_loss: f64,
    pub auc: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// ROC AUC by the rank-sum statistic; ties share their average rank.
/// Returns 0.5 when only one class is present.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut k = 0;
    while k < idx.len() {
        let mut end = k + 1;
        while end < idx.len() && scores[idx[end]] == scores[idx[k]] {
            end += 1;
        }
        // Ranks k+1..=end share their mean.
        let mean_rank = (k + 1 + end) as f64 / 2.0;
        rank_sum_pos += mean_rank * idx[k..end].iter().filter(|&&i| labels[i]).count() as f64;
        k = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

pub fn prediction_metrics(preds: &[Prediction]) -> Result<PredictionMetrics> {
    if preds.is_empty() {
        return Err(Error::Contract("no predictions to evaluate".into()));
    }
    let n = preds.len() as f64;
    let log_loss = -preds
        .iter()
        .map(|p| if p.correct { p.probability.ln() } else { (1.0 - p.probability).ln() })
        .sum::<f64>()
        / n;
    let accuracy = preds
        .iter()
        .filter(|p| (p.probability >= 0.5) == p.correct)
        .count() as f64
        / n;
    let scores: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let labels: Vec<bool> = preds.iter().map(|p| p.correct).collect();
    Ok(PredictionMetrics {
        log_loss,
        auc: roc_auc(&scores, &labels),
        accuracy,
        count: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> AdjacencyMatrix {
        AdjacencyMatrix::from_edges(n, edges.iter().copied()).unwrap()
    }

    #[test]
    fn identical_graphs_score_one() {
        let a = graph(4, &[(0, 1), (2, 3), (3, 2)]);
        let s = structural_f1(&a, &a).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let s = structural_f1(&AdjacencyMatrix::empty(3), &graph(3, &[(0, 1)])).unwrap();
        assert_eq!((s.recall, s.f1), (0.0, 0.0));
    }

    #[test]
    fn worked_three_skill_example() {
        // Skills 1, 2, 3 map to indices 0, 1, 2.
        let truth = graph(3, &[(0, 1), (1, 2)]);
        let pred = graph(3, &[(0, 1), (2, 1)]);
        let s = structural_f1(&pred, &truth).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));
    }

    #[test]
    fn size_mismatch_is_an_error() {
        assert!(structural_f1(&AdjacencyMatrix::empty(2), &AdjacencyMatrix::empty(3)).is_err());
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.5, 0.5, 0.5, 0.5], &[true, false, true, false]), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]), 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]), 0.0);
        // One of four positive/negative pairs is misordered.
        assert_eq!(roc_auc(&[0.9, 0.3, 0.4, 0.1], &[true, true, false, false]), 0.75);
    }

    #[test]
    fn constant_predictor_metrics() {
        let preds: Vec<Prediction> = (0..10)
            .map(|i| Prediction {
                probability: 0.5,
                correct: i % 3 == 0,
            })
            .collect();
        let m = prediction_metrics(&preds).unwrap();
        assert!((m.log_loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(m.auc, 0.5);
        assert!(prediction_metrics(&[]).is_err());
    }

    fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> AdjacencyMatrix {
        let p: f64 = rng.random_range(0.0..0.6);
        let mut a = AdjacencyMatrix::empty(n);
        for i in 0..n {
            for k in 0..n {
                if i != k && rng.random_bool(p) {
                    a.set(i, k, true);
                }
            }
        }
        a
    }

    proptest! {
        #[test]
        fn f1_is_bounded_and_relabeling_invariant(seed in 0u64..5000, n in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_graph(&mut rng, n), random_graph(&mut rng, n));
            let s = structural_f1(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.f1));
            let mut map: Vec<usize> = (0..n).collect();
            map.shuffle(&mut rng);
            let s2 = structural_f1(&a.relabel(&map), &b.relabel(&map)).unwrap();
            prop_assert!((s.f1 - s2.f1).abs() < 1e-12);
            if a.num_edges() > 0 {
                prop_assert_eq!(structural_f1(&a, &a).unwrap().f1, 1.0);
            }
        }
    }
}
