//! Hard clustering (average-linkage agglomerative, cosine distance) and soft
//! clustering (fuzzy c-means seeded from the hard partition).

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{csv_err, csv_writer};
use crate::embedding::EmbeddingMatrix;
use crate::{Error, Result};

/// Upper triangle of a symmetric distance matrix, row-major.
#[derive(Debug, Clone)]
pub struct CondensedMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CondensedMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| ((i + 1)..n).map(|j| f(i, j)).collect())
            .collect();
        CondensedMatrix {
            n,
            data: rows.concat(),
        }
    }

    /// Pairwise cosine distances `1 - cos`; zero vectors are an error.
    pub fn cosine(embeddings: &EmbeddingMatrix) -> Result<Self> {
        let unit = embeddings.normalized()?;
        Ok(Self::from_fn(unit.len(), |i, j| {
            let cos: f64 = unit.row(i).iter().zip(unit.row(j)).map(|(a, b)| a * b).sum();
            (1.0 - cos).clamp(0.0, 2.0)
        }))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.data[self.offset(i, j)]
        }
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let o = self.offset(i, j);
        self.data[o] = v;
    }
}

/// One agglomeration step. Clusters are named by creation index: points are
/// `0..n`, the cluster made by merge `s` is `n + s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

fn pair_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// `(distance, key)` ordering: smaller distance first, then the
/// lexicographically smaller pair of creation indices.
fn precedes(d1: f64, k1: (usize, usize), d2: f64, k2: (usize, usize)) -> bool {
    d1 < d2 || (d1 == d2 && k1 < k2)
}

/// Average-linkage agglomeration over a precomputed distance matrix.
///
/// Each active cluster caches its nearest partner; a merge only forces a
/// rescan of rows whose cached partner took part in it, so the typical cost
/// is quadratic.
pub fn average_linkage(mut dist: CondensedMatrix) -> Vec<Merge> {
    let n = dist.len();
    if n < 2 {
        return Vec::new();
    }
    let mut active = vec![true; n];
    let mut label: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];

    let scan = |slot: usize, dist: &CondensedMatrix, active: &[bool], label: &[usize]| {
        let mut best: Option<(f64, usize)> = None;
        for other in (0..active.len()).filter(|&o| o != slot && active[o]) {
            let d = dist.get(slot, other);
            let better = match best {
                None => true,
                Some((bd, b)) => precedes(
                    d,
                    pair_key(label[slot], label[other]),
                    bd,
                    pair_key(label[slot], label[b]),
                ),
            };
            if better {
                best = Some((d, other));
            }
        }
        best
    };

    let mut nearest: Vec<Option<(f64, usize)>> =
        (0..n).map(|s| scan(s, &dist, &active, &label)).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut pick: Option<(f64, (usize, usize), usize, usize)> = None;
        for a in (0..n).filter(|&a| active[a]) {
            if let Some((d, b)) = nearest[a] {
                let key = pair_key(label[a], label[b]);
                if pick.is_none_or(|(pd, pk, _, _)| precedes(d, key, pd, pk)) {
                    pick = Some((d, key, a, b));
                }
            }
        }
        let (distance, (left, right), keep, gone) = pick.expect("at least two active clusters");
        let (size_keep, size_gone) = (size[keep] as f64, size[gone] as f64);
        merges.push(Merge {
            left,
            right,
            distance,
            size: size[keep] + size[gone],
        });

        active[gone] = false;
        nearest[gone] = None;
        for k in (0..n).filter(|&k| active[k] && k != keep) {
            let merged = (size_keep * dist.get(k, keep) + size_gone * dist.get(k, gone))
                / (size_keep + size_gone);
            dist.set(k, keep, merged);
        }
        size[keep] += size[gone];
        label[keep] = n + step;

        for k in (0..n).filter(|&k| active[k] && k != keep) {
            match nearest[k] {
                Some((_, p)) if p == keep || p == gone => {
                    nearest[k] = scan(k, &dist, &active, &label);
                }
                Some((bd, p)) => {
                    let d = dist.get(k, keep);
                    if precedes(d, pair_key(label[k], label[keep]), bd, pair_key(label[k], label[p])) {
                        nearest[k] = Some((d, keep));
                    }
                }
                None => nearest[k] = scan(k, &dist, &active, &label),
            }
        }
        nearest[keep] = scan(keep, &dist, &active, &label);
    }
    merges
}

/// Merge history over a fixed set of contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    ids: Vec<String>,
    merges: Vec<Merge>,
}

impl Dendrogram {
    /// Average-linkage dendrogram under cosine distance.
    pub fn build(embeddings: &EmbeddingMatrix) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::InvalidParameter("cannot cluster an empty embedding set".into()));
        }
        let dist = CondensedMatrix::cosine(embeddings)?;
        Ok(Dendrogram {
            ids: embeddings.ids().to_vec(),
            merges: average_linkage(dist),
        })
    }

    pub fn from_merges(ids: Vec<String>, merges: Vec<Merge>) -> Self {
        Dendrogram { ids, merges }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Invalid(format!("serializing dendrogram: {e}")))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let d: Dendrogram = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        let n = d.ids.len();
        if n > 0 && d.merges.len() != n - 1 {
            return Err(Error::parse(path, 1, format!("{} merges for {n} contents", d.merges.len())));
        }
        for (s, m) in d.merges.iter().enumerate() {
            if m.left >= n + s || m.right >= n + s || m.left == m.right {
                return Err(Error::parse(path, 1, format!("merge {s} references an unknown cluster")));
            }
        }
        Ok(d)
    }

    /// Flat partition with exactly `k` clusters. Labels are numbered by the
    /// first point (in id order) that belongs to each cluster.
    pub fn cut(&self, k: usize) -> Result<HardAssignment> {
        let n = self.ids.len();
        if k == 0 || k > n {
            return Err(Error::InvalidParameter(format!("cluster count must lie in [1, {n}], got {k}")));
        }
        let total = n + self.merges.len();
        let mut parent: Vec<usize> = (0..total).collect();
        for (s, m) in self.merges.iter().take(n - k).enumerate() {
            parent[m.left] = n + s;
            parent[m.right] = n + s;
        }
        fn root(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                let up = parent[x];
                parent[x] = parent[up];
                x = up;
            }
            x
        }
        let mut relabel: HashMap<usize, usize> = HashMap::new();
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                let r = root(&mut parent, i);
                let next = relabel.len();
                *relabel.entry(r).or_insert(next)
            })
            .collect();
        HardAssignment::new(self.ids.clone(), labels, k)
    }
}

/// Content → cluster label in `[0, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HardAssignment {
    ids: Vec<String>,
    labels: Vec<usize>,
    k: usize,
    index: HashMap<String, usize>,
}

impl HardAssignment {
    pub fn new(ids: Vec<String>, labels: Vec<usize>, k: usize) -> Result<Self> {
        if ids.len() != labels.len() {
            return Err(Error::Invalid("ids and labels differ in length".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Invalid(format!("label {l} outside [0, {k})")));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate assignment for `{id}`")));
            }
        }
        Ok(HardAssignment { ids, labels, k, index })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).map(|&i| self.labels[i])
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Writes `content_id,cluster`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let err = csv_err(path);
        w.write_record(["content_id", "cluster"]).map_err(&err)?;
        for (id, l) in self.ids.iter().zip(&self.labels) {
            w.write_record([id.as_str(), &l.to_string()]).map_err(&err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads `content_id,cluster`; `k` is one past the largest label.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let mut ids = Vec::new();
        let mut labels = Vec::new();
        for row in rdr.deserialize::<(String, usize)>() {
            let (id, l) = row.map_err(csv_err(path))?;
            ids.push(id);
            labels.push(l);
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(ids, labels, k)
    }
}

/// Single average-linkage cut at `k` clusters.
pub fn hac(embeddings: &EmbeddingMatrix, k: usize) -> Result<HardAssignment> {
    if k == 0 || k > embeddings.len() {
        return Err(Error::InvalidParameter(format!(
            "cluster count must lie in [1, {}], got {k}",
            embeddings.len()
        )));
    }
    Dendrogram::build(embeddings)?.cut(k)
}

/// Cuts one dendrogram at every `k` in ascending `k_list`; the resulting
/// partitions are nested.
pub fn cut_consistency(embeddings: &EmbeddingMatrix, k_list: &[usize]) -> Result<Vec<HardAssignment>> {
    if k_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter("k_list must be sorted ascending".into()));
    }
    let dendrogram = Dendrogram::build(embeddings)?;
    k_list.iter().map(|&k| dendrogram.cut(k)).collect()
}

/// Row-stochastic soft assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    ids: Vec<String>,
    k: usize,
    m: f64,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl MembershipMatrix {
    pub fn new(ids: Vec<String>, k: usize, m: f64, data: Vec<f64>) -> Result<Self> {
        if k == 0 || data.len() != ids.len() * k {
            return Err(Error::Invalid(format!(
                "membership data of length {} does not fit {} rows of {k}",
                data.len(),
                ids.len()
            )));
        }
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(MembershipMatrix { ids, k, m, data, index })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    /// Writes `content_id,u_0,…,u_{k-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv_writer(path)?;
        let err = csv_err(path);
        let mut header = vec!["content_id".to_string()];
        header.extend((0..self.k).map(|j| format!("u_{j}")));
        w.write_record(&header).map_err(&err)?;
        for (id, row) in self.ids.iter().zip(self.rows()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|&u| crate::fmt_float(u)));
            w.write_record(&rec).map_err(&err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a membership CSV. The fuzziness index is not stored in the file
    /// and is reported as NaN.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let k = rdr.headers().map_err(csv_err(path))?.len().saturating_sub(1);
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_err(path))?;
            ids.push(rec.get(0).unwrap_or("").to_string());
            for f in rec.iter().skip(1) {
                data.push(
                    f.parse::<f64>()
                        .map_err(|_| Error::parse(path, idx + 2, format!("`{f}` is not a number")))?,
                );
            }
        }
        Self::new(ids, k, f64::NAN, data).map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcmConfig {
    pub k: usize,
    /// Fuzziness index, > 1.
    pub m: f64,
    /// Stop once the largest membership change drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FcmConfig {
    fn default() -> Self {
        FcmConfig {
            k: 20,
            m: 1.15,
            tol: 1e-6,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FcmResult {
    pub membership: MembershipMatrix,
    /// Centroids in the length-normalized space, one per kept cluster.
    pub centroids: Vec<Vec<f64>>,
    /// Original hard label of each kept cluster (empty ones are dropped).
    pub kept_labels: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after every iteration.
    pub objective_history: Vec<f64>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Membership of one point given the centroids. Points coinciding with one
/// or more centroids split their membership evenly over those.
pub fn fcm_memberships(point: &[f64], centroids: &[Vec<f64>], m: f64) -> Vec<f64> {
    let mut out = vec![0.0; centroids.len()];
    fill_memberships(point, centroids, m, &mut out);
    out
}

fn fill_memberships(point: &[f64], centroids: &[Vec<f64>], m: f64, out: &mut [f64]) {
    let dists: Vec<f64> = centroids.iter().map(|c| squared_distance(point, c)).collect();
    let zeros = dists.iter().filter(|&&d| d == 0.0).count();
    if zeros > 0 {
        for (o, d) in out.iter_mut().zip(&dists) {
            *o = if *d == 0.0 { 1.0 / zeros as f64 } else { 0.0 };
        }
        return;
    }
    // u_k ∝ D_k^(-1/(m-1)); evaluated in log space since 1/(m-1) is large
    // for m near 1.
    let exponent = 1.0 / (m - 1.0);
    let logs: Vec<f64> = dists.iter().map(|d| -exponent * d.ln()).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(&logs) {
        *o = (l - top).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn fcm_centroids(points: &EmbeddingMatrix, u: &[f64], k: usize, m: f64, previous: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let dim = points.dim();
    let mut num = vec![vec![0.0; dim]; k];
    let mut den = vec![0.0; k];
    for (row, x) in u.chunks_exact(k).zip(points.rows()) {
        for j in 0..k {
            let w = row[j].powf(m);
            if w == 0.0 {
                continue;
            }
            den[j] += w;
            for (acc, xi) in num[j].iter_mut().zip(x) {
                *acc += w * xi;
            }
        }
    }
    num.into_iter()
        .zip(den)
        .enumerate()
        .map(|(j, (v, d))| {
            if d > 0.0 {
                v.into_iter().map(|x| x / d).collect()
            } else {
                previous.map_or(v, |p| p[j].clone())
            }
        })
        .collect()
}

/// `J = Σ_i Σ_k u_ik^m ‖x_i − v_k‖²` over the points as given.
pub fn fcm_objective(
    points: &EmbeddingMatrix,
    memberships: &MembershipMatrix,
    centroids: &[Vec<f64>],
    m: f64,
) -> f64 {
    objective(points, &memberships.data, centroids, m)
}

fn objective(points: &EmbeddingMatrix, u: &[f64], centroids: &[Vec<f64>], m: f64) -> f64 {
    let k = centroids.len();
    points
        .rows()
        .zip(u.chunks_exact(k))
        .map(|(x, row)| {
            row.iter()
                .zip(centroids)
                .map(|(uk, c)| if *uk == 0.0 { 0.0 } else { uk.powf(m) * squared_distance(x, c) })
                .sum::<f64>()
        })
        .sum()
}

/// Fuzzy c-means on length-normalized embeddings, started from the one-hot
/// matrix of `init`. Clusters of `init` with no members are dropped (with a
/// warning) so the effective cluster count may be smaller than `config.k`.
pub fn fcm(embeddings: &EmbeddingMatrix, config: &FcmConfig, init: &HardAssignment) -> Result<FcmResult> {
    if !(config.m > 1.0) {
        return Err(Error::InvalidParameter(format!("fuzziness m must be > 1, got {}", config.m)));
    }
    if !(config.tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be > 0".into()));
    }
    if init.k() != config.k {
        return Err(Error::InvalidParameter(format!(
            "initial assignment has {} clusters, expected {}",
            init.k(),
            config.k
        )));
    }
    let points = embeddings.normalized()?;
    let labels: Vec<usize> = points
        .ids()
        .iter()
        .map(|id| init.label_of(id).ok_or_else(|| Error::UnknownContent(id.clone())))
        .collect::<Result<_>>()?;

    let mut present = vec![false; config.k];
    labels.iter().for_each(|&l| present[l] = true);
    let kept_labels: Vec<usize> = (0..config.k).filter(|&l| present[l]).collect();
    if kept_labels.len() < config.k {
        log::warn!(
            "fuzzy c-means: {} of {} initial clusters are empty and were dropped",
            config.k - kept_labels.len(),
            config.k
        );
    }
    let remap: BTreeMap<usize, usize> = kept_labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let k = kept_labels.len();

    let mut u = vec![0.0; points.len() * k];
    for (row, l) in u.chunks_exact_mut(k).zip(&labels) {
        row[remap[l]] = 1.0;
    }
    let mut centroids = fcm_centroids(&points, &u, k, config.m, None);
    let mut history = vec![objective(&points, &u, &centroids, config.m)];
    let mut next = vec![0.0; u.len()];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iter {
        next.par_chunks_mut(k)
            .zip(points.as_flat().par_chunks_exact(points.dim()))
            .for_each(|(row, x)| fill_memberships(x, &centroids, config.m, row));
        let delta = next
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut u, &mut next);
        centroids = fcm_centroids(&points, &u, k, config.m, Some(&centroids));
        history.push(objective(&points, &u, &centroids, config.m));
        iterations += 1;
        if delta < config.tol {
            converged = true;
            break;
        }
    }

    Ok(FcmResult {
        membership: MembershipMatrix::new(points.ids().to_vec(), k, config.m, u)?,
        centroids,
        kept_labels,
        iterations,
        converged,
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use rand::Rng;

    fn emb(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows((0..rows.len()).map(|i| format!("p{i:03}")).collect(), rows).unwrap()
    }

    #[test]
    fn trivial_cuts() {
        let mut rng = seeded_rng(1);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let e = emb(&rows);
        let singletons = hac(&e, 12).unwrap();
        assert_eq!(singletons.labels(), (0..12).collect::<Vec<_>>());
        let one = hac(&e, 1).unwrap();
        assert!(one.labels().iter().all(|&l| l == 0));
        assert!(hac(&e, 0).is_err());
        assert!(hac(&e, 13).is_err());
    }

    #[test]
    fn zero_vector_rejected() {
        let e = emb(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(hac(&e, 1), Err(Error::ZeroVector(id)) if id == "p001"));
    }

    #[test]
    fn merge_distances_on_line() {
        // Distances on a line: 0, 1, 3, 7 → pairs merge nearest-first.
        let pos = [0.0f64, 1.0, 3.0, 7.0];
        let d = CondensedMatrix::from_fn(4, |i, j| (pos[i] - pos[j]).abs());
        let merges = average_linkage(d);
        assert_eq!((merges[0].left, merges[0].right, merges[0].distance), (0, 1, 1.0));
        // {0,1} to 3: mean(3, 2) = 2.5
        assert_eq!((merges[1].left, merges[1].right, merges[1].distance), (2, 4, 2.5));
        // {0,1,2} to 7: mean(7, 6, 4) = 17/3
        assert_eq!((merges[2].left, merges[2].right), (3, 5));
        assert!((merges[2].distance - 17.0 / 3.0).abs() < 1e-12);
        assert_eq!(merges[2].size, 4);
    }

    #[test]
    fn ties_prefer_smallest_creation_indices() {
        // Four points all at distance 1 from each other.
        let d = CondensedMatrix::from_fn(4, |_, _| 1.0);
        let merges = average_linkage(d);
        assert_eq!((merges[0].left, merges[0].right), (0, 1));
        assert_eq!((merges[1].left, merges[1].right), (2, 3));
        assert_eq!((merges[2].left, merges[2].right), (4, 5));
    }

    #[test]
    fn csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let a = HardAssignment::new(vec!["x".into(), "y".into()], vec![1, 0], 2).unwrap();
        let p = dir.path().join("a.csv");
        a.write_csv(&p).unwrap();
        assert_eq!(HardAssignment::read_csv(&p).unwrap(), a);

        let m = MembershipMatrix::new(vec!["x".into(), "y".into()], 2, 1.15, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        let p = dir.path().join("m.csv");
        m.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("content_id,u_0,u_1\nx,0.25,0.75\n"));
        let back = MembershipMatrix::read_csv(&p).unwrap();
        assert_eq!(back.rows().collect::<Vec<_>>(), m.rows().collect::<Vec<_>>());
    }

    #[test]
    fn dendrogram_json_round_trip() {
        let mut rng = seeded_rng(3);
        let rows: Vec<Vec<f64>> = (0..9).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let d = Dendrogram::build(&emb(&rows)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        d.write_json(&p).unwrap();
        assert_eq!(Dendrogram::read_json(&p).unwrap(), d);
        std::fs::write(&p, r#"{"ids":["a","b"],"merges":[{"left":0,"right":5,"distance":1.0,"size":2}]}"#).unwrap();
        assert!(Dendrogram::read_json(&p).is_err());
    }

    #[test]
    fn point_on_centroid_is_crisp() {
        let centroids = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        assert_eq!(fcm_memberships(&[0.0, 1.0], &centroids, 1.15), vec![0.0, 1.0, 0.0]);
        let twin = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(fcm_memberships(&[1.0, 0.0], &twin, 2.0), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn membership_formula_m2() {
        // m = 2: u_k ∝ 1/D_k.
        let centroids = vec![vec![0.0], vec![3.0]];
        let u = fcm_memberships(&[1.0], &centroids, 2.0);
        // D = [1, 4] → u ∝ [1, 1/4]
        assert!((u[0] - 0.8).abs() < 1e-15 && (u[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn objective_hand_computed() {
        // Points 0, 1, 4 on a line; centroids 0 and 4; m = 2.
        let points = emb(&[vec![0.0], vec![1.0], vec![4.0]]);
        let mem = MembershipMatrix::new(points.ids().to_vec(), 2, 2.0, vec![1.0, 0.0, 0.9, 0.1, 0.2, 0.8]).unwrap();
        let centroids = vec![vec![0.0], vec![4.0]];
        // 0 + (0.81·1 + 0.01·9) + (0.04·16 + 0.64·0) = 0.9 + 0.64
        let j = fcm_objective(&points, &mem, &centroids, 2.0);
        assert!((j - 1.54).abs() < 1e-12, "{j}");
        let at_centroids = MembershipMatrix::new(points.ids()[..1].to_vec(), 2, 2.0, vec![1.0, 0.0]).unwrap();
        assert_eq!(fcm_objective(&emb(&[vec![0.0]]), &at_centroids, &centroids, 2.0), 0.0);
    }

    #[test]
    fn fcm_validates_inputs() {
        let e = emb(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let init = HardAssignment::new(e.ids().to_vec(), vec![0, 1], 2).unwrap();
        let cfg = FcmConfig { k: 2, ..Default::default() };
        assert!(fcm(&e, &FcmConfig { m: 1.0, ..cfg }, &init).is_err());
        assert!(fcm(&e, &FcmConfig { k: 3, ..cfg }, &init).is_err());
        assert!(fcm(&e, &FcmConfig { tol: 0.0, ..cfg }, &init).is_err());
        let partial = HardAssignment::new(vec!["p000".into()], vec![0], 2).unwrap();
        assert!(matches!(fcm(&e, &cfg, &partial), Err(Error::UnknownContent(_))));
    }

    #[test]
    fn empty_initial_cluster_is_dropped() {
        let e = emb(&[vec![1.0, 0.1], vec![1.0, -0.1], vec![-0.1, 1.0]]);
        let init = HardAssignment::new(e.ids().to_vec(), vec![0, 0, 2], 3).unwrap();
        let r = fcm(&e, &FcmConfig { k: 3, ..Default::default() }, &init).unwrap();
        assert_eq!(r.membership.k(), 2);
        assert_eq!(r.kept_labels, vec![0, 2]);
        assert!(r.membership.row(0)[0] > 0.99);
        assert!(r.membership.row(2)[1] > 0.99);
    }

    #[test]
    fn unit_vector_distance_identity() {
        let mut rng = seeded_rng(77);
        for _ in 0..1000 {
            let dim = rng.random_range(2..20);
            let mut a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            for v in [&mut a, &mut b] {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= n);
            }
            let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((squared_distance(&a, &b) - 2.0 * (1.0 - cos)).abs() < 1e-12);
        }
    }
}
