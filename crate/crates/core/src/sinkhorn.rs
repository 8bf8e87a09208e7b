//! Sinkhorn relaxation of a permutation matrix.
//!
//! Logits are shifted by their global maximum, scaled by the temperature and
//! exponentiated; the result is then alternately row- and column-normalized
//! `unroll` times. Columns are normalized last, so column sums are 1 up to
//! rounding while row sums converge with more rounds.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};

/// Denominators below this are treated as degenerate.
pub const DENOMINATOR_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub temperature: f64,
    pub unroll: usize,
}

impl SinkhornConfig {
    pub fn new(temperature: f64, unroll: usize) -> Result<Self> {
        let cfg = SinkhornConfig {
            temperature,
            unroll,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "sinkhorn temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.unroll == 0 {
            return Err(Error::Config("sinkhorn unroll must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_denominators(tape: &Tape, sums: Var, what: &str) -> Result<()> {
    if let Some(s) = tape
        .value(sums)
        .data()
        .iter()
        .find(|s| !(**s >= DENOMINATOR_FLOOR))
    {
        return Err(Error::Numerical(format!(
            "sinkhorn {what} sum {s:e} below floor; lower the temperature or rescale the logits"
        )));
    }
    Ok(())
}

/// Differentiable Sinkhorn operator on the tape.
pub fn sinkhorn(tape: &mut Tape, logits: Var, cfg: SinkhornConfig) -> Result<Var> {
    cfg.validate()?;
    let (r, c) = tape.value(logits).shape();
    if r != c {
        return Err(Error::Dimension {
            op: "sinkhorn",
            lhs: (r, c),
            rhs: (c, r),
        });
    }
    if !tape.value(logits).is_finite() {
        return Err(Error::Numerical("sinkhorn logits are not finite".into()));
    }
    let max = tape.global_max(logits)?;
    let shifted = tape.sub_scalar(logits, max)?;
    let scaled = tape.scale(shifted, cfg.temperature);
    let mut p = tape.exp(scaled);
    for _ in 0..cfg.unroll {
        let rows = tape.row_sum(p)?;
        check_denominators(tape, rows, "row")?;
        let inv = tape.recip(rows);
        p = tape.mul_col_broadcast(p, inv)?;
        let cols = tape.col_sum(p)?;
        check_denominators(tape, cols, "column")?;
        let inv = tape.recip(cols);
        p = tape.mul_row_broadcast(p, inv)?;
    }
    Ok(p)
}

/// Forward-only convenience wrapper around [`sinkhorn`].
pub fn sinkhorn_array(logits: &Array, cfg: SinkhornConfig) -> Result<Array> {
    let mut tape = Tape::new();
    let v = tape.constant(logits.clone());
    let p = sinkhorn(&mut tape, v, cfg)?;
    Ok(tape.value(p).clone())
}

/// Mean over rows of the row maximum. Equals 1 exactly for a permutation
/// matrix and `1/C` for the uniform doubly stochastic matrix.
pub fn hardness(p: &Array) -> f64 {
    if p.rows() == 0 {
        return 0.0;
    }
    let total: f64 = (0..p.rows())
        .map(|i| p.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    total / p.rows() as f64
}

/// A bijection `row → column`, i.e. the hard permutation matrix with a one
/// at `(i, map[i])`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &j in &map {
            if j >= n || seen[j] {
                return Err(Error::Domain {
                    op: "permutation",
                    reason: format!("{map:?} is not a bijection on 0..{n}"),
                });
            }
            seen[j] = true;
        }
        Ok(Permutation(map))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    #[inline]
    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Permutation(inv)
    }

    pub fn to_matrix(&self) -> Array {
        let n = self.0.len();
        let mut m = Array::zeros(n, n);
        for (i, &j) in self.0.iter().enumerate() {
            m.set(i, j, 1.0);
        }
        m
    }
}

/// Hard assignment maximizing `Σ p[i][π(i)]`, solved exactly with the
/// Kuhn–Munkres potentials method in `O(C³)`.
///
/// Rounding happens once per extraction, so the cubic cost is acceptable even
/// for a couple of thousand skills.
pub fn round_to_permutation(p: &Array) -> Result<Permutation> {
    let (n, cols) = p.shape();
    if n != cols {
        return Err(Error::Dimension {
            op: "round_to_permutation",
            lhs: (n, cols),
            rhs: (n, n),
        });
    }
    if !p.is_finite() {
        return Err(Error::Domain {
            op: "round_to_permutation",
            reason: "non-finite entry".into(),
        });
    }
    // 1-based arrays with a dummy column 0, minimizing the cost -p.
    let cost = |i: usize, j: usize| -p.get(i - 1, j - 1);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        }
    }
    let mut map = vec![0; n];
    for j in 1..=n {
        map[owner[j] - 1] = j - 1;
    }
    Ok(Permutation(map))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::ParamStore;
    use crate::gradcheck::{max_relative_error, numeric_gradient};

    fn cfg(t: f64, u: usize) -> SinkhornConfig {
        SinkhornConfig::new(t, u).unwrap()
    }

    fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Array {
        Array::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_skill_is_one() {
        for logit in [-3.0, 0.0, 17.0] {
            let p = sinkhorn_array(&Array::scalar(logit), cfg(4.0, 3)).unwrap();
            assert_eq!(p.item().unwrap(), 1.0);
        }
    }

    #[test]
    fn diagonal_dominant_logits_converge_to_identity() {
        let n = 5;
        let logits = Array::from_fn(n, n, |i, j| if i == j { 10.0 } else { -10.0 });
        let p = sinkhorn_array(&logits, cfg(10.0, 20)).unwrap();
        let id = Array::identity(n);
        for (a, b) in p.data().iter().zip(id.data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn uniform_logits_give_uniform_matrix() {
        for n in [2, 3, 4, 7, 10] {
            for (t, u) in [(0.5, 1), (10.0, 5), (3.0, 20)] {
                let p = sinkhorn_array(&Array::filled(n, n, 0.37), cfg(t, u)).unwrap();
                for &x in p.data() {
                    assert!((x - 1.0 / n as f64).abs() <= 1e-15, "n={n} got {x}");
                }
            }
        }
    }

    #[test]
    fn rejects_non_square_and_bad_config() {
        let mut t = Tape::new();
        let v = t.constant(Array::zeros(2, 3));
        assert!(matches!(sinkhorn(&mut t, v, cfg(1.0, 1)), Err(Error::Dimension { .. })));
        assert!(SinkhornConfig::new(0.0, 3).is_err());
        assert!(SinkhornConfig::new(1.0, 0).is_err());
    }

    #[test]
    fn underflowing_row_is_a_numerical_error() {
        // Row 1 sits 1000 below the max; at temperature 10 every entry underflows.
        let logits = Array::from_rows(&[[0.0, 0.0], [-1000.0, -1000.0]]);
        assert!(matches!(
            sinkhorn_array(&logits, cfg(10.0, 2)),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn row_sum_error_shrinks_with_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = random_logits(&mut rng, 6);
        let row_err = |u| {
            let p = sinkhorn_array(&logits, cfg(3.0, u)).unwrap();
            (0..6)
                .map(|i| (p.row(i).iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max)
        };
        let errs: Vec<f64> = [1, 2, 4, 8, 16].iter().map(|&u| row_err(u)).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0], "{errs:?}");
        }
    }

    #[test]
    fn hardness_values() {
        let perm = Permutation::from_map(vec![2, 0, 1]).unwrap().to_matrix();
        assert_eq!(hardness(&perm), 1.0);
        assert!((hardness(&Array::filled(4, 4, 0.25)) - 0.25).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = sinkhorn_array(&random_logits(&mut rng, 8), cfg(20.0, 50)).unwrap();
        log::info!("hardness at temperature 20: {}", hardness(&p));
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_to_permutation(&Array::identity(4)).unwrap(), Permutation::identity(4));
        let swap = round_to_permutation(&Array::from_rows(&[[0.1, 0.9], [0.9, 0.1]])).unwrap();
        assert!(round_to_permutation(&Array::zeros(2, 3)).is_err());
        assert!(round_to_permutation(&Array::from_rows(&[[f64::NAN]])).is_err());
        // Greedy would grab the 0.9 and be forced into 0.9 + 0.0.
        let trap = Array::from_rows(&[[0.9, 0.8], [0.8, 0.0]]);
        assert_eq!(round_to_permutation(&trap).unwrap().as_slice(), &[1, 0]);
        assert_eq!(swap.as_slice(), &[1, 0]);
    }

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn rounding_agrees_with_brute_force() {
        let perms = all_permutations(5);
        assert_eq!(perms.len(), 120);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let trials = 200;
        let mut agree = 0;
        for _ in 0..trials {
            let logits = random_logits(&mut rng, 5);
            let p = sinkhorn_array(&logits, cfg(1.0, 50)).unwrap();
            let score = |m: &[usize]| m.iter().enumerate().map(|(i, &j)| p.get(i, j)).sum::<f64>();
            let best = perms
                .iter()
                .max_by(|a, b| score(a).total_cmp(&score(b)))
                .unwrap();
            let rounded = round_to_permutation(&p).unwrap();
            assert!(score(rounded.as_slice()) >= score(best) - 1e-12);
            if rounded.as_slice() == best.as_slice() {
                agree += 1;
            }
        }
        let rate = agree as f64 / trials as f64;
        assert!(rate >= 0.95, "rounding matched brute force on {rate}");
    }

    #[test]
    fn large_rounding_admits_no_improving_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let p = sinkhorn_array(&random_logits(&mut rng, n), cfg(3.0, 20)).unwrap();
        let m = round_to_permutation(&p).unwrap();
        let m = m.as_slice();
        for a in 0..n {
            for b in a + 1..n {
                let now = p.get(a, m[a]) + p.get(b, m[b]);
                let swapped = p.get(a, m[b]) + p.get(b, m[a]);
                assert!(swapped <= now + 1e-12, "swap {a},{b} improves");
            }
        }
    }

    #[test]
    fn gradient_through_sinkhorn() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let id = store.insert("logits", random_logits(&mut rng, 4));
        let weights = random_logits(&mut rng, 4);
        let build = |t: &mut Tape, s: &ParamStore| {
            let l = t.param(s, id);
            let w = t.constant(weights.clone());
            let p = sinkhorn(t, l, cfg(3.0, 6)).unwrap();
            let wp = t.mul(p, w).unwrap();
            let sq = t.mul(wp, wp).unwrap();
            t.sum_all(sq).unwrap()
        };
        let mut t = Tape::new();
        let loss = build(&mut t, &store);
        let g = t.backward(loss).unwrap().param_grads(&store);
        let num = numeric_gradient(&store, id, 1e-5, |s| {
            let mut t = Tape::new();
            let loss = build(&mut t, s);
            t.value(loss).item().unwrap()
        });
        assert!(max_relative_error(g.get(id), &num, 1e-6) < 1e-4);
    }

    proptest! {
        #[test]
        fn shift_invariance(seed in 0u64..1000, shift in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let logits = random_logits(&mut rng, 6);
            let a = sinkhorn_array(&logits, cfg(5.0, 10)).unwrap();
            let b = sinkhorn_array(&logits.map(|x| x + shift), cfg(5.0, 10)).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn rounding_is_a_bijection(seed in 0u64..1000, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_logits(&mut rng, n).map(f64::abs);
            let perm = round_to_permutation(&p).unwrap();
            prop_assert!(Permutation::from_map(perm.as_slice().to_vec()).is_ok());
        }
    }
}
