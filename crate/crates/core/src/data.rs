//! Response logs: CSV ingestion, skill indexing, and a planted-DAG simulator.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;

pub const RESPONSES_FILE: &str = "responses.csv";
pub const SKILL_INDEX_FILE: &str = "skill_index.json";
pub const WORLD_FILE: &str = "world.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseEvent {
    pub user_id: String,
    pub sequence_position: u64,
    pub skill_id: String,
    pub is_correct: bool,
}

/// One student's events in increasing position order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseSequence {
    pub user_id: String,
    pub events: Vec<ResponseEvent>,
}

/// Dense `0..C` indexing of skill identifiers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, usize>", into = "BTreeMap<String, usize>")]
pub struct SkillIndex {
    ids: Vec<String>,
}

impl From<BTreeMap<String, usize>> for SkillIndex {
    fn from(map: BTreeMap<String, usize>) -> Self {
        let mut pairs: Vec<(String, usize)> = map.into_iter().collect();
        pairs.sort_by_key(|(_, i)| *i);
        SkillIndex {
            ids: pairs.into_iter().map(|(s, _)| s).collect(),
        }
    }
}

impl From<SkillIndex> for BTreeMap<String, usize> {
    fn from(index: SkillIndex) -> Self {
        index.ids.into_iter().enumerate().map(|(i, s)| (s, i)).collect()
    }
}

fn id_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        _ => a.cmp(b),
    }
}

impl SkillIndex {
    /// Indexes distinct ids, numeric ids first in numeric order, then the rest
    /// lexicographically.
    pub fn from_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> Self {
        let mut uniq: Vec<String> = ids
            .into_iter()
            .collect::<HashSet<_>>()
            .into_iter()
            .map(str::to_string)
            .collect();
        uniq.sort_by(|a, b| id_order(a, b));
        SkillIndex { ids: uniq }
    }

    /// Ids `"0"`, `"1"`, … for synthetic worlds.
    pub fn numeric(n: usize) -> Self {
        SkillIndex {
            ids: (0..n).map(|i| i.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, skill_id: &str) -> Result<usize> {
        self.ids
            .iter()
            .position(|s| s == skill_id)
            .ok_or_else(|| Error::UnknownSkill(skill_id.to_string()))
    }

    pub fn id_of(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Adds ids not yet present, keeping existing indices stable.
    pub fn extend<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>) {
        let mut known: HashSet<String> = self.ids.iter().cloned().collect();
        let mut fresh: Vec<String> = ids
            .into_iter()
            .filter(|s| known.insert(s.to_string()))
            .map(str::to_string)
            .collect();
        fresh.sort_by(|a, b| id_order(a, b));
        self.ids.extend(fresh);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: SkillIndex = serde_json::from_str(&text)?;
        let map: BTreeMap<String, usize> = index.clone().into();
        let mut seen: Vec<usize> = map.values().copied().collect();
        seen.sort_unstable();
        if seen.iter().enumerate().any(|(i, &v)| i != v) {
            return Err(Error::Config(format!(
                "{}: skill indices must be dense 0..{}",
                path.display(),
                map.len()
            )));
        }
        Ok(index)
    }
}

/// A single interaction over dense skill indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub skill: usize,
    pub correct: bool,
}

/// A student's interactions over dense skill indices; model input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedSequence {
    pub user_id: String,
    pub steps: Vec<Interaction>,
}

impl EncodedSequence {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

pub fn encode(sequences: &[ResponseSequence], index: &SkillIndex) -> Result<Vec<EncodedSequence>> {
    sequences
        .iter()
        .map(|s| {
            let steps = s
                .events
                .iter()
                .map(|e| {
                    Ok(Interaction {
                        skill: index.index_of(&e.skill_id)?,
                        correct: e.is_correct,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(EncodedSequence {
                user_id: s.user_id.clone(),
                steps,
            })
        })
        .collect()
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    user_id: String,
    sequence: String,
    skill_id: String,
    is_correct: String,
}

/// Reads `user_id,sequence,skill_id,is_correct`, grouping by user (in order
/// of first appearance) and sorting each user's events by position.
pub fn load_responses(path: &Path) -> Result<Vec<ResponseSequence>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let expected = ["user_id", "sequence", "skill_id", "is_correct"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            reason: format!("expected header {}, got {:?}", expected.join(","), headers),
        });
    }

    let mut order: Vec<String> = Vec::new();
    let mut by_user: BTreeMap<String, Vec<ResponseEvent>> = BTreeMap::new();
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    for record in reader.records() {
        let parse_err = |line: u64, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                return Err(parse_err(line, e.to_string()));
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let row: CsvRow = record
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let position: u64 = row
            .sequence
            .parse()
            .map_err(|_| parse_err(line, format!("bad sequence position {:?}", row.sequence)))?;
        if position < 1 {
            return Err(parse_err(line, "sequence positions start at 1".into()));
        }
        let is_correct = match row.is_correct.as_str() {
            "1" => true,
            "0" => false,
            other => return Err(parse_err(line, format!("is_correct must be 0 or 1, got {other:?}"))),
        };
        if row.user_id.is_empty() || row.skill_id.is_empty() {
            return Err(parse_err(line, "empty user_id or skill_id".into()));
        }
        if !seen.insert((row.user_id.clone(), position)) {
            return Err(parse_err(
                line,
                format!("duplicate position {position} for user {}", row.user_id),
            ));
        }
        if !by_user.contains_key(&row.user_id) {
            order.push(row.user_id.clone());
        }
        by_user.entry(row.user_id.clone()).or_default().push(ResponseEvent {
            user_id: row.user_id,
            sequence_position: position,
            skill_id: row.skill_id,
            is_correct,
        });
    }

    Ok(order
        .into_iter()
        .map(|user| {
            let mut events = by_user.remove(&user).unwrap_or_default();
            events.sort_by_key(|e| e.sequence_position);
            ResponseSequence {
                user_id: user,
                events,
            }
        })
        .collect())
}

pub fn write_responses(path: &Path, sequences: &[ResponseSequence]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["user_id", "sequence", "skill_id", "is_correct"])?;
    for seq in sequences {
        for e in &seq.events {
            w.write_record([
                e.user_id.as_str(),
                &e.sequence_position.to_string(),
                e.skill_id.as_str(),
                if e.is_correct { "1" } else { "0" },
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A synthetic ground truth: a prerequisite DAG plus simulator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedWorld {
    pub num_skills: usize,
    /// `[src, dst, weight]`: `src` is a prerequisite of `dst`.
    pub edges: Vec<(usize, usize, f64)>,
    pub noise_scale: f64,
    pub mastery_gain: f64,
    pub guess: f64,
    pub slip: f64,
    pub seed: u64,
}

impl PlantedWorld {
    pub fn adjacency(&self) -> AdjacencyMatrix {
        AdjacencyMatrix::from_edges(self.num_skills, self.edges.iter().map(|&(s, d, _)| (s, d)))
            .expect("world edges are validated on construction")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_skills == 0 {
            return Err(Error::Config("world needs at least one skill".into()));
        }
        for &(s, d, w) in &self.edges {
            if s >= self.num_skills || d >= self.num_skills || s == d || !w.is_finite() {
                return Err(Error::Config(format!("invalid world edge [{s}, {d}, {w}]")));
            }
        }
        if !(0.0..0.5).contains(&self.guess) || !(0.0..0.5).contains(&self.slip) {
            return Err(Error::Config("guess and slip must lie in [0, 0.5)".into()));
        }
        if !(self.noise_scale >= 0.0) || !self.mastery_gain.is_finite() {
            return Err(Error::Config("noise_scale must be >= 0 and mastery_gain finite".into()));
        }
        let adj = AdjacencyMatrix::from_edges(self.num_skills, self.edges.iter().map(|&(s, d, _)| (s, d)))?;
        if !adj.is_dag() {
            return Err(Error::Config("world graph is not acyclic".into()));
        }
        Ok(())
    }

    /// A chain `0 → 1 → … → n−1` with unit weights.
    pub fn chain(num_skills: usize, seed: u64) -> Self {
        PlantedWorld {
            num_skills,
            edges: (1..num_skills).map(|i| (i - 1, i, 1.0)).collect(),
            seed,
            ..Self::empty(num_skills)
        }
    }

    fn empty(num_skills: usize) -> Self {
        PlantedWorld {
            num_skills,
            edges: Vec::new(),
            noise_scale: 0.1,
            mastery_gain: 1.0,
            guess: 0.1,
            slip: 0.1,
            seed: 0,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let world: PlantedWorld = serde_json::from_str(&text)?;
        world.validate()?;
        Ok(world)
    }

    /// Parent lists with weights, indexed by dependent skill.
    fn parents(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.num_skills];
        for &(s, d, w) in &self.edges {
            out[d].push((s, w));
        }
        out
    }
}

/// Random DAG: a uniform random topological order, each forward pair kept
/// with probability `density`, weights uniform in `[0.5, 1.5]`.
pub fn sample_dag<R: Rng + ?Sized>(num_skills: usize, density: f64, rng: &mut R) -> Result<PlantedWorld> {
    if num_skills < 2 {
        return Err(Error::Config(format!("need at least 2 skills, got {num_skills}")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("density must lie in (0, 1], got {density}")));
    }
    let mut order: Vec<usize> = (0..num_skills).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for a in 0..num_skills {
        for b in a + 1..num_skills {
            if rng.random_bool(density) {
                edges.push((order[a], order[b], rng.random_range(0.5..=1.5)));
            }
        }
    }
    edges.sort_by_key(|&(s, d, _)| (s, d));
    Ok(PlantedWorld {
        edges,
        ..PlantedWorld::empty(num_skills)
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Simulates students practicing uniformly random skills.
///
/// Each student has a latent mastery per skill drawn from `N(0, 1)`. A
/// response is correct with probability `sigmoid(mastery)` clamped to
/// `[guess, 1 − slip]`. Practicing skill `i` then adds
/// `mastery_gain · gate + N(0, noise_scale)`, where the gate is
/// `sigmoid(mean over parents j of w_ij · m_j)`, or 1 without parents.
///
/// Student `k` draws from stream `k` of a ChaCha generator keyed by
/// `world.seed`, so any student can be regenerated independently.
pub fn simulate_students(world: &PlantedWorld, n_students: usize, steps: usize) -> Result<Vec<ResponseSequence>> {
    world.validate()?;
    if n_students == 0 || steps < 2 {
        return Err(Error::Config(format!(
            "need at least 1 student and 2 steps, got {n_students} and {steps}"
        )));
    }
    let parents = world.parents();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let c = world.num_skills;
    let mut out = Vec::with_capacity(n_students);
    for student in 0..n_students {
        let mut rng = ChaCha8Rng::seed_from_u64(world.seed);
        rng.set_stream(student as u64);
        let mut mastery: Vec<f64> = (0..c).map(|_| std_normal.sample(&mut rng)).collect();
        let user_id = format!("u{student}");
        let mut events = Vec::with_capacity(steps);
        for t in 0..steps {
            let skill = rng.random_range(0..c);
            let p = sigmoid(mastery[skill]).clamp(world.guess, 1.0 - world.slip);
            let is_correct = rng.random_bool(p);
            events.push(ResponseEvent {
                user_id: user_id.clone(),
                sequence_position: t as u64 + 1,
                skill_id: skill.to_string(),
                is_correct,
            });
            let gate = if parents[skill].is_empty() {
                1.0
            } else {
                let drive: f64 = parents[skill].iter().map(|&(j, w)| w * mastery[j]).sum();
                sigmoid(drive / parents[skill].len() as f64)
            };
            let noise = world.noise_scale * std_normal.sample(&mut rng);
            mastery[skill] += world.mastery_gain * gate + noise;
        }
        out.push(ResponseSequence { user_id, events });
    }
    Ok(out)
}

/// Deterministic split by student: every `1/fraction`-th shuffled student goes
/// to the held-out set.
pub fn split_by_student<T: Clone>(items: &[T], heldout_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_held = ((items.len() as f64) * heldout_fraction).round() as usize;
    let n_held = n_held.min(items.len());
    let (held, train) = idx.split_at(n_held);
    let mut train: Vec<usize> = train.to_vec();
    let mut held: Vec<usize> = held.to_vec();
    train.sort_unstable();
    held.sort_unstable();
    (
        train.into_iter().map(|i| items[i].clone()).collect(),
        held.into_iter().map(|i| items[i].clone()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write_file(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(dir.path(), "r.csv", "user_id,sequence,skill_id,is_correct\n");
        assert!(load_responses(&p).unwrap().is_empty());
    }

    #[test]
    fn groups_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        let body = "user_id,sequence,skill_id,is_correct\n\
                    b,2,7,1\na,1,3,0\nb,1,5,0\na,3,7,1\na,2,5,1\nb,3,3,1\n";
        let p = write_file(dir.path(), "r.csv", body);
        let seqs = load_responses(&p).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].user_id, "b");
        let positions: Vec<u64> = seqs[1].events.iter().map(|e| e.sequence_position).collect();
        assert_eq!(positions, vec![1, 2, 3]);
        let skills: Vec<&str> = seqs[1].events.iter().map(|e| e.skill_id.as_str()).collect();
        assert_eq!(skills, vec!["3", "5", "7"]);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("user_id,sequence,skill_id,is_correct\na,1,3,0\na,x,3,1\n", 3),
            ("user_id,sequence,skill_id,is_correct\na,1,3,0\na,1,4,1\n", 3),
            ("user_id,sequence,skill_id,is_correct\na,1,3,yes\n", 2),
            ("user_id,sequence,skill_id,is_correct\na,1,3\n", 2),
        ];
        for (body, line) in cases {
            let p = write_file(dir.path(), "bad.csv", body);
            match load_responses(&p) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{body}"),
                other => panic!("expected parse error for {body:?}, got {other:?}"),
            }
        }
        let p = write_file(dir.path(), "hdr.csv", "user,seq,skill,ok\n");
        assert!(matches!(load_responses(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn skill_index_orders_numeric_ids() {
        let idx = SkillIndex::from_ids(["10", "2", "abc", "2", "1"]);
        assert_eq!(idx.ids(), &["1", "2", "10", "abc"]);
        assert_eq!(idx.index_of("10").unwrap(), 2);
        assert!(matches!(idx.index_of("zz"), Err(Error::UnknownSkill(_))));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("idx.json");
        idx.save(&p).unwrap();
        assert_eq!(SkillIndex::load(&p).unwrap(), idx);
    }

    #[test]
    fn dense_chain_has_full_order_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = sample_dag(3, 1.0, &mut rng).unwrap();
        assert_eq!(w.edges.len(), 3);
        assert!(w.adjacency().is_dag());
        for &(_, _, weight) in &w.edges {
            assert!((0.5..=1.5).contains(&weight));
        }
    }

    #[test]
    fn sparse_density_gives_few_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = sample_dag(20, 1e-9, &mut rng).unwrap();
        assert!(w.edges.is_empty());
        assert!(sample_dag(1, 0.5, &mut rng).is_err());
        assert!(sample_dag(5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn sampled_dags_are_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(2..30);
            let d = rng.random_range(0.01..=1.0);
            assert!(sample_dag(n, d, &mut rng).unwrap().adjacency().is_dag());
        }
    }

    #[test]
    fn frozen_dynamics_match_initial_mastery() {
        // With no gain and no noise, skill 0's correctness rate across a
        // student's long history estimates clamp(sigmoid(m_0)).
        let world = PlantedWorld {
            noise_scale: 0.0,
            mastery_gain: 0.0,
            guess: 0.0,
            slip: 0.0,
            ..PlantedWorld::chain(2, 17)
        };
        let seqs = simulate_students(&world, 3, 4000).unwrap();
        for (k, seq) in seqs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            rng.set_stream(k as u64);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let m0: f64 = normal.sample(&mut rng);
            let p = sigmoid(m0);
            let (hits, n) = seq
                .events
                .iter()
                .filter(|e| e.skill_id == "0")
                .fold((0.0, 0.0), |(h, n), e| (h + f64::from(u8::from(e.is_correct)), n + 1.0));
            let rate = hits / n;
            let se = (p * (1.0 - p) / n).sqrt();
            assert!((rate - p).abs() < 4.0 * se + 1e-9, "student {k}: {rate} vs {p}");
        }
    }

    #[test]
    fn simulation_is_deterministic_and_round_trips() {
        let world = PlantedWorld::chain(4, 9);
        let a = simulate_students(&world, 5, 12).unwrap();
        let b = simulate_students(&world, 5, 12).unwrap();
        assert_eq!(a, b);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(RESPONSES_FILE);
        write_responses(&p, &a).unwrap();
        assert_eq!(load_responses(&p).unwrap(), a);

        assert!(simulate_students(&world, 0, 10).is_err());
        assert!(simulate_students(&world, 3, 1).is_err());
    }

    #[test]
    fn world_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = sample_dag(6, 0.4, &mut rng).unwrap();
        w.seed = 44;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(WORLD_FILE);
        w.save(&p).unwrap();
        assert_eq!(PlantedWorld::load(&p).unwrap(), w);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"num_skills\""));
        assert!(text.contains("\"edges\""));
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let items: Vec<usize> = (0..100).collect();
        let (tr, ho) = split_by_student(&items, 0.1, 5);
        assert_eq!(ho.len(), 10);
        assert_eq!(tr.len(), 90);
        let (tr2, ho2) = split_by_student(&items, 0.1, 5);
        assert_eq!((&tr, &ho), (&tr2, &ho2));
        let mut all: Vec<usize> = tr.iter().chain(&ho).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }
}
