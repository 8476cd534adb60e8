//! User-content bipartite graph and the samplers the embedding trainer draws
//! from.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;

use crate::corpus::{csv_err, csv_writer, WatchedHistory};
use crate::{Error, Result};

/// Unweighted bipartite graph with nodes indexed by sorted external id.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    users: Vec<String>,
    contents: Vec<String>,
    /// Sorted `(user, content)` pairs, no duplicates.
    edges: Vec<(u32, u32)>,
    user_degrees: Vec<u32>,
    content_degrees: Vec<u32>,
}

impl BipartiteGraph {
    /// Builds the graph from explicit `(user_id, content_id)` pairs.
    /// Duplicate pairs collapse into one edge.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let pairs: BTreeSet<(&str, &str)> = pairs.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let users: Vec<String> = pairs
            .iter()
            .map(|(u, _)| *u)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(String::from)
            .collect();
        let contents: Vec<String> = pairs
            .iter()
            .map(|(_, c)| *c)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(String::from)
            .collect();
        let content_index: BTreeMap<&str, u32> = contents
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i as u32))
            .collect();

        let mut user_degrees = vec![0u32; users.len()];
        let mut content_degrees = vec![0u32; contents.len()];
        let mut edges = Vec::with_capacity(pairs.len());
        let mut user_idx = 0u32;
        let mut last_user: Option<&str> = None;
        for (u, c) in pairs {
            if last_user.is_some_and(|prev| prev != u) {
                user_idx += 1;
            }
            last_user = Some(u);
            let ci = content_index[c];
            edges.push((user_idx, ci));
            user_degrees[user_idx as usize] += 1;
            content_degrees[ci as usize] += 1;
        }
        Ok(BipartiteGraph {
            users,
            contents,
            edges,
            user_degrees,
            content_degrees,
        })
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn contents(&self) -> &[String] {
        &self.contents
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn user_degrees(&self) -> &[u32] {
        &self.user_degrees
    }

    pub fn content_degrees(&self) -> &[u32] {
        &self.content_degrees
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users.binary_search_by(|u| u.as_str().cmp(id)).ok()
    }

    pub fn content_index(&self, id: &str) -> Option<usize> {
        self.contents.binary_search_by(|c| c.as_str().cmp(id)).ok()
    }

    /// Uniformly random edge. All edge weights are 1, so no weighted table is
    /// needed.
    pub fn sample_edge<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, u32) {
        self.edges[rng.random_range(0..self.edges.len())]
    }

    /// Writes the edge list as `user_id,content_id`.
    pub fn write_edges(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let err = csv_err(path);
        w.write_record(["user_id", "content_id"]).map_err(&err)?;
        for &(u, c) in &self.edges {
            w.write_record([&self.users[u as usize], &self.contents[c as usize]])
                .map_err(&err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_edges(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err(path))?;
            rows.push((rec.get(0).unwrap_or("").to_string(), rec.get(1).unwrap_or("").to_string()));
        }
        Self::from_pairs(rows.iter().map(|(u, c)| (u.as_str(), c.as_str())))
    }
}

/// Builds the graph from users who watched more than `min_programs_per_user`
/// distinct programs. Repeat views of a program give a single edge.
pub fn build_bipartite(
    histories: &BTreeMap<String, WatchedHistory>,
    min_programs_per_user: usize,
) -> Result<BipartiteGraph> {
    let mut pairs: Vec<(&str, &str)> = Vec::new();
    for h in histories.values() {
        let distinct = h.distinct_contents();
        if distinct.len() > min_programs_per_user {
            pairs.extend(distinct.into_iter().map(|c| (h.user_id.as_str(), c)));
        }
    }
    BipartiteGraph::from_pairs(pairs)
}

/// Vose alias table over a discrete distribution: O(1) draws.
#[derive(Debug, Clone)]
pub struct AliasTable {
    probabilities: Vec<f64>,
    accept: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    /// `weights` need not be normalized but must be finite, non-negative and
    /// not all zero.
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("alias table needs at least one weight".into()));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidParameter(format!("invalid sampling weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("all sampling weights are zero".into()));
        }
        let n = weights.len();
        let probabilities: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut scaled: Vec<f64> = probabilities.iter().map(|p| p * n as f64).collect();
        let mut accept = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();

        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            accept[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Leftovers are 1 up to rounding.
        for i in small.into_iter().chain(large) {
            accept[i] = 1.0;
            alias[i] = i as u32;
        }
        Ok(AliasTable {
            probabilities,
            accept,
            alias,
        })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Normalized target probabilities.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let column = rng.random_range(0..self.accept.len());
        if rng.random::<f64>() < self.accept[column] {
            column
        } else {
            self.alias[column] as usize
        }
    }
}

/// Noise distribution over user nodes, proportional to `degree^power`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    table: AliasTable,
    power: f64,
}

impl NoiseSampler {
    pub fn from_degrees(degrees: &[u32], power: f64) -> Result<Self> {
        if !(power >= 0.0) || !power.is_finite() {
            return Err(Error::InvalidParameter(format!("noise power must be >= 0, got {power}")));
        }
        // 0^0 would be 1; isolated nodes must never be drawn.
        let weights: Vec<f64> = degrees
            .iter()
            .map(|&d| if d == 0 { 0.0 } else { (d as f64).powf(power) })
            .collect();
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidParameter("noise table: every degree is zero".into()));
        }
        Ok(NoiseSampler {
            table: AliasTable::new(&weights)?,
            power,
        })
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn probabilities(&self) -> &[f64] {
        self.table.probabilities()
    }

    /// Draws a user index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }
}

/// Noise table over the graph's users with `P(u) ∝ d_u^power`.
pub fn build_noise_table(graph: &BipartiteGraph, power: f64) -> Result<NoiseSampler> {
    NoiseSampler::from_degrees(graph.user_degrees(), power)
}
