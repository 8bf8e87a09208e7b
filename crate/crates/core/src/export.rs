//! Edge lists, DOT, ordering files and labeled-graph loading.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{PlantedWorld, SkillIndex};
use crate::error::{Error, Result};
use crate::graph::AdjacencyMatrix;
use crate::sinkhorn::Permutation;

pub const EDGES_FILE: &str = "edges.csv";
pub const DOT_FILE: &str = "graph.dot";
pub const ORDERING_FILE: &str = "ordering.json";

/// `src_skill_id,dst_skill_id` rows sorted by dense source then destination.
pub fn edge_list_csv(adj: &AdjacencyMatrix, index: &SkillIndex) -> String {
    let mut out = String::from("src_skill_id,dst_skill_id\n");
    for (src, dst) in adj.edges() {
        let _ = writeln!(out, "{},{}", index.id_of(src), index.id_of(dst));
    }
    out
}

/// Prerequisite → dependent arrows labeled by original skill ids.
pub fn to_dot(adj: &AdjacencyMatrix, index: &SkillIndex) -> String {
    let mut out = String::from("digraph prerequisites {\n  rankdir=LR;\n");
    for i in 0..adj.size() {
        let _ = writeln!(out, "  \"{}\";", escape(index.id_of(i)));
    }
    for (src, dst) in adj.edges() {
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\";",
            escape(index.id_of(src)),
            escape(index.id_of(dst))
        );
    }
    out.push_str("}\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Hard causal ordering: skills from most to least foundational.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingFile {
    pub order: Vec<String>,
    pub position: BTreeMap<String, usize>,
}

impl OrderingFile {
    /// `perm[i]` is the ordering position of skill `i`.
    pub fn new(perm: &Permutation, index: &SkillIndex) -> Self {
        let inv = perm.inverse();
        OrderingFile {
            order: (0..perm.len()).map(|p| index.id_of(inv.apply(p)).to_string()).collect(),
            position: (0..perm.len())
                .map(|i| (index.id_of(i).to_string(), perm.apply(i)))
                .collect(),
        }
    }
}

/// A graph over original skill ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabeledGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

impl LabeledGraph {
    pub fn from_adjacency(adj: &AdjacencyMatrix, index: &SkillIndex) -> Self {
        LabeledGraph {
            nodes: index.ids().to_vec(),
            edges: adj
                .edges()
                .into_iter()
                .map(|(s, d)| (index.id_of(s).to_string(), index.id_of(d).to_string()))
                .collect(),
        }
    }

    pub fn from_world(world: &PlantedWorld) -> Self {
        LabeledGraph {
            nodes: (0..world.num_skills).map(|i| i.to_string()).collect(),
            edges: world
                .edges
                .iter()
                .map(|&(s, d, _)| (s.to_string(), d.to_string()))
                .collect(),
        }
    }

    /// Reads a world JSON (`.json`) or an edge-list CSV (anything else).
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "json") {
            return Ok(Self::from_world(&PlantedWorld::load(path)?));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["src_skill_id", "dst_skill_id"] {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: "expected header src_skill_id,dst_skill_id".into(),
            });
        }
        let mut g = LabeledGraph::default();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 2 || record[0].is_empty() || record[1].is_empty() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    reason: "expected two skill ids".into(),
                });
            }
            g.edges.push((record[0].to_string(), record[1].to_string()));
        }
        let mut nodes: Vec<String> = g.edges.iter().flat_map(|(s, d)| [s.clone(), d.clone()]).collect();
        nodes.sort();
        nodes.dedup();
        g.nodes = nodes;
        Ok(g)
    }

    pub fn to_adjacency(&self, index: &SkillIndex) -> Result<AdjacencyMatrix> {
        let mut adj = AdjacencyMatrix::empty(index.len());
        for (s, d) in &self.edges {
            adj.add_edge(index.index_of(s)?, index.index_of(d)?);
        }
        Ok(adj)
    }
}

/// Puts two labeled graphs on a shared skill index.
pub fn align(a: &LabeledGraph, b: &LabeledGraph) -> Result<(AdjacencyMatrix, AdjacencyMatrix)> {
    let index = SkillIndex::from_ids(a.nodes.iter().chain(&b.nodes).map(String::as_str));
    Ok((a.to_adjacency(&index)?, b.to_adjacency(&index)?))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
