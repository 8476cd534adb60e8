//! Block diversity metrics: average pairwise cosine distance, cluster
//! diversity entropy (CDE), fuzzy-membership ambiguity and the cluster-count
//! sweep.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{Dendrogram, HardAssignment, MembershipMatrix};
use crate::corpus::{csv_err, csv_writer, Block, BlockPair, WatchedHistory};
use crate::embedding::EmbeddingMatrix;
use crate::stats::paired_t;
use crate::{Error, Result};

/// How entropies are reported.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EntropyOptions {
    /// Logarithm base; `None` means natural log.
    pub base: Option<f64>,
    /// Divide by the maximum attainable entropy (ln of the cluster count).
    pub normalize: bool,
}

impl EntropyOptions {
    /// Converts a natural-log entropy over `classes` categories.
    pub fn apply(&self, nats: f64, classes: usize) -> f64 {
        if self.normalize {
            return if classes > 1 { nats / (classes as f64).ln() } else { 0.0 };
        }
        match self.base {
            Some(b) => nats / b.ln(),
            None => nats,
        }
    }
}

/// Shannon entropy in nats of a probability vector; zero entries contribute
/// nothing.
pub fn entropy(probabilities: &[f64]) -> f64 {
    -probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(Error::ZeroVector("left operand".into()));
    }
    if nb == 0.0 {
        return Err(Error::ZeroVector("right operand".into()));
    }
    let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

fn lookup<'a>(embeddings: &'a EmbeddingMatrix, id: &str) -> Result<&'a [f64]> {
    embeddings
        .get(id)
        .ok_or_else(|| Error::UnknownContent(id.to_string()))
}

/// Mean cosine distance over all pairs of distinct positions in the block.
/// Repeated contents contribute zero-distance pairs.
pub fn avg_pairwise_distance<S: AsRef<str>>(block: &[S], embeddings: &EmbeddingMatrix) -> Result<f64> {
    if block.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "average pairwise distance needs at least 2 items, got {}",
            block.len()
        )));
    }
    let vectors = block
        .iter()
        .map(|id| lookup(embeddings, id.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            total += cosine_distance(vectors[i], vectors[j]).map_err(|_| {
                let zero = if vectors[i].iter().all(|&x| x == 0.0) { i } else { j };
                Error::ZeroVector(block[zero].as_ref().to_string())
            })?;
        }
    }
    let pairs = vectors.len() * (vectors.len() - 1) / 2;
    Ok(total / pairs as f64)
}

/// Entropy (nats) of the block's distribution over hard clusters.
pub fn cde<S: AsRef<str>>(block: &[S], assignment: &HardAssignment) -> Result<f64> {
    if block.is_empty() {
        return Err(Error::InvalidParameter("CDE of an empty block".into()));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for id in block {
        let label = assignment
            .label_of(id.as_ref())
            .ok_or_else(|| Error::UnknownContent(id.as_ref().to_string()))?;
        *counts.entry(label).or_default() += 1;
    }
    let n = block.len() as f64;
    let probs: Vec<f64> = counts.values().map(|&c| c as f64 / n).collect();
    Ok(entropy(&probs))
}

/// Entropy (nats) of a membership row, which must sum to 1 within 1e-6.
pub fn ambiguity(row: &[f64]) -> Result<f64> {
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-6 || row.iter().any(|&u| !(0.0..=1.0 + 1e-12).contains(&u)) {
        return Err(Error::Invalid(format!("membership row sums to {total}, not 1")));
    }
    Ok(entropy(row))
}

/// Ambiguity of every content in a membership matrix.
pub fn ambiguities(membership: &MembershipMatrix) -> Result<BTreeMap<String, f64>> {
    membership
        .ids()
        .iter()
        .zip(membership.rows())
        .map(|(id, row)| ambiguity(row).map(|a| (id.clone(), a)))
        .collect()
}

/// Largest ambiguity among views at history positions `< end_boundary`.
/// Contents without a score (not embedded) are skipped.
pub fn max_ambiguity(
    history: &WatchedHistory,
    end_boundary: usize,
    ambiguities: &BTreeMap<String, f64>,
) -> Result<f64> {
    history
        .events
        .iter()
        .take(end_boundary)
        .filter_map(|e| ambiguities.get(&e.content_id).copied())
        .reduce(f64::max)
        .ok_or_else(|| {
            Error::Invalid(format!(
                "user `{}` has no scored views before position {end_boundary}",
                history.user_id
            ))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Apd,
    Cde,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Apd => "apd",
            Metric::Cde => "cde",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "apd" => Ok(Metric::Apd),
            "cde" => Ok(Metric::Cde),
            other => Err(Error::InvalidParameter(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityScore {
    pub user_id: String,
    pub block: Block,
    pub metric: Metric,
    /// Cluster count for CDE rows.
    pub kd: Option<usize>,
    pub value: f64,
}

/// APD and CDE of both blocks for every pair, in user order.
pub fn score_blocks(
    pairs: &[BlockPair],
    embeddings: &EmbeddingMatrix,
    assignment: &HardAssignment,
    options: &EntropyOptions,
) -> Result<Vec<DiversityScore>> {
    let mut out = Vec::with_capacity(pairs.len() * 4);
    for pair in pairs {
        for block in [Block::Start, Block::End] {
            let items = pair.block(block);
            out.push(DiversityScore {
                user_id: pair.user_id.clone(),
                block,
                metric: Metric::Apd,
                kd: None,
                value: avg_pairwise_distance(items, embeddings)?,
            });
            out.push(DiversityScore {
                user_id: pair.user_id.clone(),
                block,
                metric: Metric::Cde,
                kd: Some(assignment.k()),
                value: options.apply(cde(items, assignment)?, assignment.k()),
            });
        }
    }
    Ok(out)
}

/// Keeps the pairs whose every block item has an embedding.
pub fn embedded_pairs(pairs: &[BlockPair], embeddings: &EmbeddingMatrix) -> (Vec<BlockPair>, Vec<String>) {
    let (kept, dropped): (Vec<&BlockPair>, Vec<&BlockPair>) = pairs.iter().partition(|p| {
        p.start_block
            .iter()
            .chain(&p.end_block)
            .all(|c| embeddings.index_of(c).is_some())
    });
    (
        kept.into_iter().cloned().collect(),
        dropped.into_iter().map(|p| p.user_id.clone()).collect(),
    )
}

/// Per-user `value(end) - value(start)` for one metric.
pub fn deltas(scores: &[DiversityScore], metric: Metric) -> Result<BTreeMap<String, f64>> {
    let mut start: HashMap<&str, f64> = HashMap::new();
    let mut end: BTreeMap<&str, f64> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.metric == metric) {
        let slot = match s.block {
            Block::Start => start.insert(&s.user_id, s.value),
            Block::End => end.insert(&s.user_id, s.value),
        };
        if slot.is_some() {
            return Err(Error::Invalid(format!(
                "duplicate {} {} score for `{}`",
                s.block.as_str(),
                metric.as_str(),
                s.user_id
            )));
        }
    }
    if start.len() != end.len() {
        return Err(Error::Invalid(format!("{} start and end scores do not pair up", metric.as_str())));
    }
    end.into_iter()
        .map(|(user, e)| {
            let s = start
                .get(user)
                .ok_or_else(|| Error::Invalid(format!("`{user}` has an end score but no start score")))?;
            Ok((user.to_string(), e - s))
        })
        .collect()
}

pub fn write_scores(path: &Path, scores: &[DiversityScore]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["user_id", "block", "metric", "kd", "value"]).map_err(&err)?;
    for s in scores {
        w.write_record([
            s.user_id.as_str(),
            s.block.as_str(),
            s.metric.as_str(),
            &s.kd.map(|k| k.to_string()).unwrap_or_default(),
            &crate::fmt_float(s.value),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<DiversityScore>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let line = idx + 2;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |m: String| Error::parse(path, line, m);
        out.push(DiversityScore {
            user_id: field(0).to_string(),
            block: field(1).parse().map_err(|e: Error| bad(e.to_string()))?,
            metric: field(2).parse().map_err(|e: Error| bad(e.to_string()))?,
            kd: match field(3) {
                "" => None,
                k => Some(k.parse().map_err(|_| bad(format!("bad kd `{k}`")))?),
            },
            value: field(4)
                .parse()
                .map_err(|_| bad(format!("bad value `{}`", field(4))))?,
        });
    }
    Ok(out)
}

/// Writes `content_id,ambiguity`.
pub fn write_ambiguities(path: &Path, values: &BTreeMap<String, f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["content_id", "ambiguity"]).map_err(&err)?;
    for (id, v) in values {
        w.write_record([id.as_str(), &crate::fmt_float(*v)]).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_ambiguities(path: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rdr.deserialize::<(String, f64)>()
        .map(|r| r.map_err(csv_err(path)))
        .collect()
}

/// One point of the cluster-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kd: usize,
    /// Mean over users of `cde(end) - cde(start)`.
    pub mean_delta: f64,
    /// Paired-test p-value; `None` when every user's change is identical.
    pub p_value: Option<f64>,
}

/// Cuts one dendrogram at each `kd` and reports the mean CDE change.
pub fn kd_sweep_with(
    pairs: &[BlockPair],
    dendrogram: &Dendrogram,
    k_list: &[usize],
    options: &EntropyOptions,
) -> Result<Vec<SweepPoint>> {
    if k_list.is_empty() {
        return Err(Error::InvalidParameter("kd list is empty".into()));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no block pairs to sweep".into()));
    }
    k_list
        .iter()
        .map(|&kd| {
            let assignment = dendrogram.cut(kd)?;
            let mut start = Vec::with_capacity(pairs.len());
            let mut end = Vec::with_capacity(pairs.len());
            for p in pairs {
                start.push(options.apply(cde(&p.start_block, &assignment)?, kd));
                end.push(options.apply(cde(&p.end_block, &assignment)?, kd));
            }
            let mean_delta = end.iter().zip(&start).map(|(e, s)| e - s).sum::<f64>() / pairs.len() as f64;
            let p_value = match paired_t(&start, &end) {
                Ok(r) => Some(r.p_value),
                Err(Error::DegenerateVariance(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(SweepPoint {
                kd,
                mean_delta,
                p_value,
            })
        })
        .collect()
}

/// [`kd_sweep_with`] on a dendrogram built from `embeddings`.
pub fn kd_sweep(
    pairs: &[BlockPair],
    embeddings: &EmbeddingMatrix,
    k_list: &[usize],
    options: &EntropyOptions,
) -> Result<Vec<SweepPoint>> {
    kd_sweep_with(pairs, &Dendrogram::build(embeddings)?, k_list, options)
}

/// Writes `kd,mean_delta,p_value`; an undefined p-value is left empty.
pub fn write_sweep(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["kd", "mean_delta", "p_value"]).map_err(&err)?;
    for p in points {
        w.write_record([
            p.kd.to_string(),
            crate::fmt_float(p.mean_delta),
            p.p_value.map(crate::fmt_float).unwrap_or_default(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
