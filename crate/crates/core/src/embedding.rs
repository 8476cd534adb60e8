//! Second-order proximity embedding of contents trained with negative
//! sampling.
//!
//! For an edge `(user, content)` the per-sample loss is
//! `-[ln σ(u·c) + Σ_k ln σ(-u_k·c)]` where the `u_k` are users drawn from the
//! degree^0.75 noise distribution. Content vectors are the exported
//! representation; user vectors play the role of context vectors and stay
//! internal to training.
//!
//! Parameters live in a lock-free store so several workers can update them
//! concurrently (Hogwild style). With one worker training is bit-reproducible.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{build_noise_table, BipartiteGraph, NoiseSampler};
use crate::{seeded_rng, Error, Result, SeededRng};

/// Dot products are clamped to this magnitude before the sigmoid.
pub const SCORE_CLAMP: f64 = 35.0;

/// Floor applied to the learning rate, as a fraction of `rho0`.
pub const LR_FLOOR_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    /// Negative samples per edge.
    pub negatives: usize,
    /// Total number of edge samples.
    pub total_samples: u64,
    pub rho0: f64,
    pub seed: u64,
    pub workers: usize,
    /// Keep the learning rate at or above `rho0 * 1e-4`.
    pub lr_floor: bool,
    /// Exponent of the noise distribution over user degrees.
    pub noise_power: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 100,
            negatives: 5,
            total_samples: 10_000_000,
            rho0: 0.025,
            seed: 42,
            workers: 1,
            lr_floor: true,
            noise_power: 0.75,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if !(self.rho0 > 0.0 && self.rho0 < 1.0) {
            return bad("rho0 must lie in (0, 1)");
        }
        if self.workers == 0 {
            return bad("workers must be >= 1");
        }
        Ok(())
    }
}

/// `rho0 * (1 - t/T)`, optionally floored at `rho0 * 1e-4`.
pub fn learning_rate(t: u64, total: u64, rho0: f64, floor: bool) -> f64 {
    let progress = if total == 0 { 1.0 } else { (t.min(total) as f64) / total as f64 };
    let rate = rho0 * (1.0 - progress);
    if floor {
        rate.max(rho0 * LR_FLOOR_FRACTION)
    } else {
        rate
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn clamp_score(x: f64) -> f64 {
    x.clamp(-SCORE_CLAMP, SCORE_CLAMP)
}

/// `-ln σ(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Negative-sampling loss of one edge.
pub fn edge_loss(user: &[f64], content: &[f64], negatives: &[&[f64]]) -> f64 {
    let positive = neg_log_sigmoid(clamp_score(dot(user, content)));
    let noise: f64 = negatives
        .iter()
        .map(|n| neg_log_sigmoid(-clamp_score(dot(n, content))))
        .sum();
    positive + noise
}

/// Analytic gradient of [`edge_loss`] with respect to each participating
/// vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGradient {
    pub user: Vec<f64>,
    pub content: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

pub fn edge_gradient(user: &[f64], content: &[f64], negatives: &[&[f64]]) -> EdgeGradient {
    let pos = 1.0 - sigmoid(clamp_score(dot(user, content)));
    let mut d_content: Vec<f64> = user.iter().map(|u| -pos * u).collect();
    let mut d_negatives = Vec::with_capacity(negatives.len());
    for n in negatives {
        let s = sigmoid(clamp_score(dot(n, content)));
        for (dc, x) in d_content.iter_mut().zip(n.iter()) {
            *dc += s * x;
        }
        d_negatives.push(content.iter().map(|c| s * c).collect());
    }
    EdgeGradient {
        user: content.iter().map(|c| -pos * c).collect(),
        content: d_content,
        negatives: d_negatives,
    }
}

/// Row-major matrix of `f64` stored as atomics so workers can read and write
/// rows without locks. Relaxed ordering: stale reads and lost updates are
/// tolerated by the optimizer.
struct SharedMatrix {
    dim: usize,
    cells: Vec<AtomicU64>,
}

impl SharedMatrix {
    fn new(rows: usize, dim: usize) -> Self {
        SharedMatrix {
            dim,
            cells: (0..rows * dim).map(|_| AtomicU64::new(0f64.to_bits())).collect(),
        }
    }

    fn rows(&self) -> usize {
        self.cells.len() / self.dim
    }

    fn row(&self, r: usize) -> &[AtomicU64] {
        &self.cells[r * self.dim..(r + 1) * self.dim]
    }

    fn load(&self, r: usize, out: &mut [f64]) {
        for (o, cell) in out.iter_mut().zip(self.row(r)) {
            *o = f64::from_bits(cell.load(Ordering::Relaxed));
        }
    }

    fn store(&self, r: usize, values: &[f64]) {
        for (cell, v) in self.row(r).iter().zip(values) {
            cell.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn to_vec(&self) -> Vec<f64> {
        self.cells
            .iter()
            .map(|c| f64::from_bits(c.load(Ordering::Relaxed)))
            .collect()
    }
}

/// User-side and content-side parameters.
pub struct Model {
    dim: usize,
    users: SharedMatrix,
    contents: SharedMatrix,
}

impl Model {
    pub fn zeros(n_users: usize, n_contents: usize, dim: usize) -> Self {
        Model {
            dim,
            users: SharedMatrix::new(n_users, dim),
            contents: SharedMatrix::new(n_contents, dim),
        }
    }

    /// Uniform init in `[-0.5/dim, 0.5/dim)` on both sides, users first.
    pub fn random<R: Rng + ?Sized>(n_users: usize, n_contents: usize, dim: usize, rng: &mut R) -> Self {
        let model = Model::zeros(n_users, n_contents, dim);
        let half = 0.5 / dim as f64;
        let mut row = vec![0.0; dim];
        for side in [&model.users, &model.contents] {
            for r in 0..side.rows() {
                row.iter_mut().for_each(|x| *x = rng.random_range(-half..half));
                side.store(r, &row);
            }
        }
        model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_users(&self) -> usize {
        self.users.rows()
    }

    pub fn n_contents(&self) -> usize {
        self.contents.rows()
    }

    pub fn user_vector(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.users.load(i, &mut v);
        v
    }

    pub fn content_vector(&self, j: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.contents.load(j, &mut v);
        v
    }

    pub fn set_user_vector(&self, i: usize, v: &[f64]) {
        self.users.store(i, v);
    }

    pub fn set_content_vector(&self, j: usize, v: &[f64]) {
        self.contents.store(j, v);
    }

    /// Loss of one `(user, content, negatives)` tuple at the current parameters.
    pub fn loss(&self, user: usize, content: usize, negatives: &[usize]) -> f64 {
        let u = self.user_vector(user);
        let c = self.content_vector(content);
        let negs: Vec<Vec<f64>> = negatives.iter().map(|&n| self.user_vector(n)).collect();
        let refs: Vec<&[f64]> = negs.iter().map(Vec::as_slice).collect();
        edge_loss(&u, &c, &refs)
    }

    pub fn content_data(&self) -> Vec<f64> {
        self.contents.to_vec()
    }

    pub fn user_data(&self) -> Vec<f64> {
        self.users.to_vec()
    }
}

/// Scratch buffers reused across steps.
pub struct StepBuffers {
    content: Vec<f64>,
    content_grad: Vec<f64>,
    user: Vec<f64>,
}

impl StepBuffers {
    pub fn new(dim: usize) -> Self {
        StepBuffers {
            content: vec![0.0; dim],
            content_grad: vec![0.0; dim],
            user: vec![0.0; dim],
        }
    }
}

/// A non-finite score was met during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFinite {
    pub user: usize,
    pub content: usize,
}

/// One SGD step on edge `(user, content)` with the given negative users:
/// every participating vector moves by `-lr * ∂loss/∂param`.
///
/// User rows are written as they are visited and the content row once at the
/// end, so the update equals the simultaneous gradient step whenever the
/// negatives are distinct from each other and from `user`.
pub fn sgd_step(
    model: &Model,
    user: usize,
    content: usize,
    negatives: &[usize],
    lr: f64,
    buf: &mut StepBuffers,
) -> std::result::Result<(), NonFinite> {
    model.contents.load(content, &mut buf.content);
    buf.content_grad.iter_mut().for_each(|x| *x = 0.0);
    let targets = std::iter::once((user, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    for (target, label) in targets {
        model.users.load(target, &mut buf.user);
        let score = dot(&buf.user, &buf.content);
        if !score.is_finite() {
            return Err(NonFinite { user: target, content });
        }
        let g = (label - sigmoid(clamp_score(score))) * lr;
        for ((acc, u), c) in buf.content_grad.iter_mut().zip(buf.user.iter_mut()).zip(&buf.content) {
            *acc += g * *u;
            *u += g * c;
        }
        model.users.store(target, &buf.user);
    }
    for (c, acc) in buf.content.iter_mut().zip(&buf.content_grad) {
        *c += acc;
    }
    model.contents.store(content, &buf.content);
    Ok(())
}

/// Samples between global-progress publications in multi-worker mode.
const PROGRESS_CHUNK: u64 = 10_000;

/// Stateful trainer; lets callers stop at checkpoints and inspect the model.
pub struct Trainer<'g> {
    graph: &'g BipartiteGraph,
    noise: NoiseSampler,
    config: TrainConfig,
    model: Model,
    done: u64,
    rngs: Vec<SeededRng>,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g BipartiteGraph, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if graph.edges().is_empty() {
            return Err(Error::EmptyGraph);
        }
        let noise = build_noise_table(graph, config.noise_power)?;
        let mut init_rng = seeded_rng(config.seed);
        let model = Model::random(graph.users().len(), graph.contents().len(), config.dim, &mut init_rng);
        let rngs = (0..config.workers as u64)
            .map(|w| seeded_rng(config.seed.wrapping_add(1 + w)))
            .collect();
        Ok(Trainer {
            graph,
            noise,
            config,
            model,
            done: 0,
            rngs,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn noise(&self) -> &NoiseSampler {
        &self.noise
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn samples_done(&self) -> u64 {
        self.done
    }

    /// Trains until `target` samples (capped at the configured total) have
    /// been processed.
    pub fn run_until(&mut self, target: u64) -> Result<()> {
        let target = target.min(self.config.total_samples);
        if target <= self.done {
            return Ok(());
        }
        let remaining = target - self.done;
        let result = if self.config.workers == 1 {
            self.run_single(remaining)
        } else {
            self.run_parallel(remaining)
        };
        self.done = target;
        result
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.config.total_samples)
    }

    fn divergence(&self, at: u64, nf: NonFinite) -> Error {
        Error::Divergence {
            iteration: at,
            user: self.graph.users()[nf.user].clone(),
            content: self.graph.contents()[nf.content].clone(),
        }
    }

    fn run_single(&mut self, count: u64) -> Result<()> {
        let cfg = &self.config;
        let mut buf = StepBuffers::new(cfg.dim);
        let mut negatives = vec![0usize; cfg.negatives];
        let rng = &mut self.rngs[0];
        for i in 0..count {
            let t = self.done + i;
            let lr = learning_rate(t, cfg.total_samples, cfg.rho0, cfg.lr_floor);
            let (u, c) = self.graph.sample_edge(rng);
            for n in negatives.iter_mut() {
                *n = self.noise.sample(rng);
            }
            if let Err(nf) = sgd_step(&self.model, u as usize, c as usize, &negatives, lr, &mut buf) {
                return Err(self.divergence(t, nf));
            }
        }
        Ok(())
    }

    fn run_parallel(&mut self, count: u64) -> Result<()> {
        let workers = self.config.workers as u64;
        let progress = AtomicU64::new(self.done);
        let stop = AtomicBool::new(false);
        let failure: Mutex<Option<(u64, NonFinite)>> = Mutex::new(None);
        let (graph, noise, model, cfg) = (self.graph, &self.noise, &self.model, &self.config);

        std::thread::scope(|scope| {
            for (w, rng) in self.rngs.iter_mut().enumerate() {
                let share = count / workers + u64::from((w as u64) < count % workers);
                let (progress, stop, failure) = (&progress, &stop, &failure);
                scope.spawn(move || {
                    let mut buf = StepBuffers::new(cfg.dim);
                    let mut negatives = vec![0usize; cfg.negatives];
                    let mut t = progress.load(Ordering::Relaxed);
                    let mut unpublished = 0;
                    for _ in 0..share {
                        if unpublished == PROGRESS_CHUNK {
                            t = progress.fetch_add(unpublished, Ordering::Relaxed) + unpublished;
                            unpublished = 0;
                            if stop.load(Ordering::Relaxed) {
                                return;
                            }
                        }
                        let lr = learning_rate(t + unpublished, cfg.total_samples, cfg.rho0, cfg.lr_floor);
                        let (u, c) = graph.sample_edge(rng);
                        for n in negatives.iter_mut() {
                            *n = noise.sample(rng);
                        }
                        if let Err(nf) = sgd_step(model, u as usize, c as usize, &negatives, lr, &mut buf) {
                            stop.store(true, Ordering::Relaxed);
                            failure.lock().unwrap().get_or_insert((t + unpublished, nf));
                            return;
                        }
                        unpublished += 1;
                    }
                    progress.fetch_add(unpublished, Ordering::Relaxed);
                });
            }
        });

        match failure.into_inner().unwrap() {
            Some((at, nf)) => Err(self.divergence(at, nf)),
            None => Ok(()),
        }
    }

    /// Snapshot of the content-side vectors.
    pub fn content_embeddings(&self) -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            self.graph.contents().to_vec(),
            self.config.dim,
            self.model.content_data(),
        )
        .expect("model shape matches the graph")
    }
}

/// Trains content embeddings for `graph`. `total_samples = 0` returns the
/// initialization.
pub fn train(graph: &BipartiteGraph, config: &TrainConfig) -> Result<EmbeddingMatrix> {
    let mut trainer = Trainer::new(graph, config.clone())?;
    trainer.run()?;
    let matrix = trainer.content_embeddings();
    if let Some(row) = (0..matrix.len()).find(|&r| matrix.row(r).iter().any(|x| !x.is_finite())) {
        return Err(Error::Divergence {
            iteration: config.total_samples,
            user: String::new(),
            content: matrix.ids()[row].clone(),
        });
    }
    Ok(matrix)
}

/// Immutable content vectors keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dim must be >= 1".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Invalid(format!(
                "{} values for {} ids of dim {dim}",
                data.len(),
                ids.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate embedding id `{id}`")));
            }
        }
        Ok(EmbeddingMatrix { ids, dim, data, index })
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Invalid("rows have different lengths".into()));
        }
        Self::new(ids, dim, rows.concat())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// All rows back to back.
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.row(i))
    }

    /// Largest Euclidean row norm.
    pub fn max_norm(&self) -> f64 {
        self.rows().map(|r| dot(r, r).sqrt()).fold(0.0, f64::max)
    }

    /// Copy with every row scaled to unit length. Zero rows are an error.
    pub fn normalized(&self) -> Result<Self> {
        let mut data = self.data.clone();
        for (i, row) in data.chunks_exact_mut(self.dim).enumerate() {
            let norm = dot(row, row).sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroVector(self.ids[i].clone()));
            }
            row.iter_mut().for_each(|x| *x /= norm);
        }
        Self::new(self.ids.clone(), self.dim, data)
    }
}

/// Cosine similarity, or `None` when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot(a, b) / (na * nb))
    }
}

/// Top-`k` contents by cosine similarity to `content_id`, most similar first,
/// ties by id. Zero vectors score 0.
pub fn nearest_neighbors(
    embeddings: &EmbeddingMatrix,
    content_id: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let q = embeddings
        .index_of(content_id)
        .ok_or_else(|| Error::UnknownContent(content_id.to_string()))?;
    if k == 0 || k >= embeddings.len() {
        return Err(Error::InvalidParameter(format!(
            "k must lie in [1, {}), got {k}",
            embeddings.len()
        )));
    }
    let query = embeddings.row(q);
    if query.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroVector(content_id.to_string()));
    }
    let mut scored: Vec<(usize, f64)> = (0..embeddings.len())
        .filter(|&i| i != q)
        .map(|i| (i, cosine_similarity(query, embeddings.row(i)).unwrap_or(0.0)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| embeddings.ids[a.0].cmp(&embeddings.ids[b.0]))
    });
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (embeddings.ids[i].clone(), s))
        .collect())
}

/// Writes `<count> <dim>` then one `<id> <v1> … <vdim>` line per content.
/// Values use the shortest decimal form that round-trips exactly.
pub fn save_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{} {}", matrix.len(), matrix.dim()).map_err(io)?;
    for (id, row) in matrix.ids().iter().zip(matrix.rows()) {
        if id.contains(char::is_whitespace) {
            return Err(Error::Invalid(format!("content id `{id}` contains whitespace")));
        }
        write!(w, "{id}").map_err(io)?;
        for v in row {
            write!(w, " {}", crate::fmt_float(*v)).map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing `<count> <dim>` header"))?
        .map_err(|e| Error::io(path, e))?;
    let mut parts = header.split_whitespace().map(str::parse::<usize>);
    let (count, dim) = match (parts.next(), parts.next(), parts.next()) {
        (Some(Ok(c)), Some(Ok(d)), None) if d > 0 => (c, d),
        _ => return Err(Error::parse(path, 1, format!("bad header `{header}`"))),
    };

    let mut ids = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let id = fields.next().unwrap_or_default().to_string();
        let before = data.len();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("`{f}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, line_no, format!("non-finite value `{f}`")));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != dim {
            return Err(Error::parse(
                path,
                line_no,
                format!("row `{id}` has {got} values, header says dim {dim}"),
            ));
        }
        ids.push(id);
    }
    if ids.len() != count {
        return Err(Error::parse(
            path,
            1,
            format!("header says {count} rows, found {}", ids.len()),
        ));
    }
    EmbeddingMatrix::new(ids, dim, data).map_err(|e| Error::parse(path, 0, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_schedule() {
        assert_eq!(learning_rate(0, 100, 0.025, true), 0.025);
        assert_eq!(learning_rate(100, 100, 0.025, false), 0.0);
        assert!((learning_rate(100, 100, 0.025, true) - 0.025e-4).abs() < 1e-18);
        assert!((learning_rate(50, 100, 0.025, false) - 0.0125).abs() < 1e-15);
        assert!((learning_rate(500_000, 1_000_000, 0.025, true) - 0.0125).abs() < 1e-15);
    }

    #[test]
    fn loss_values() {
        let zero = [0.0; 4];
        let u = [1.0, 0.0, 0.0, 0.0];
        assert!((edge_loss(&u, &zero, &[]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((edge_loss(&u, &zero, &[&u]) - 2.0 * std::f64::consts::LN_2).abs() < 1e-15);

        let big = [1e3, 0.0];
        let neg = [-1e3, 0.0];
        let c = [1e3, 0.0];
        assert!(edge_loss(&big, &c, &[&neg, &neg]) < 1e-14);
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut rng = seeded_rng(0);
        let model = Model::random(3, 2, 5, &mut rng);
        let before = (model.user_data(), model.content_data());
        let mut buf = StepBuffers::new(5);
        sgd_step(&model, 0, 1, &[1, 2], 0.0, &mut buf).unwrap();
        assert_eq!((model.user_data(), model.content_data()), before);
    }

    #[test]
    fn step_equals_negative_gradient() {
        let mut rng = seeded_rng(11);
        let model = Model::random(4, 2, 6, &mut rng);
        for i in 0..4 {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            model.set_user_vector(i, &v);
        }
        let (u, c, negs) = (model.user_vector(0), model.content_vector(1), [model.user_vector(2), model.user_vector(3)]);
        let grad = edge_gradient(&u, &c, &[&negs[0], &negs[1]]);
        let lr = 0.1;
        sgd_step(&model, 0, 1, &[2, 3], lr, &mut StepBuffers::new(6)).unwrap();
        let check = |after: Vec<f64>, before: &[f64], g: &[f64]| {
            for ((a, b), g) in after.iter().zip(before).zip(g) {
                assert!((a - (b - lr * g)).abs() < 1e-15);
            }
        };
        check(model.user_vector(0), &u, &grad.user);
        check(model.content_vector(1), &c, &grad.content);
        check(model.user_vector(2), &negs[0], &grad.negatives[0]);
        check(model.user_vector(3), &negs[1], &grad.negatives[1]);
    }

    #[test]
    fn repeated_positive_edge_increases_score() {
        let mut rng = seeded_rng(5);
        let model = Model::random(1, 1, 8, &mut rng);
        let mut buf = StepBuffers::new(8);
        let score = |m: &Model| dot(&m.user_vector(0), &m.content_vector(0));
        let mut last = score(&model);
        for _ in 0..1000 {
            sgd_step(&model, 0, 0, &[], 0.025, &mut buf).unwrap();
            let now = score(&model);
            assert!(now > last);
            last = now;
        }
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let model = Model::zeros(2, 1, 2);
        model.set_user_vector(1, &[f64::NAN, 0.0]);
        let err = sgd_step(&model, 0, 0, &[1], 0.1, &mut StepBuffers::new(2)).unwrap_err();
        assert_eq!(err, NonFinite { user: 1, content: 0 });
    }

    #[test]
    fn divergence_names_nodes() {
        let graph = BipartiteGraph::from_pairs([("u1", "c1")]).unwrap();
        let config = TrainConfig {
            dim: 2,
            total_samples: 10,
            ..Default::default()
        };
        let mut trainer = Trainer::new(&graph, config).unwrap();
        trainer.model().set_content_vector(0, &[f64::INFINITY, 1.0]);
        match trainer.run() {
            Err(Error::Divergence { iteration, user, content }) => {
                assert_eq!((iteration, user.as_str(), content.as_str()), (0, "u1", "c1"));
            }
            other => panic!("expected divergence, got {:?}", other.err()),
        }
    }

    #[test]
    fn zero_samples_returns_init() {
        let graph = BipartiteGraph::from_pairs([("a", "x"), ("b", "y")]).unwrap();
        let config = TrainConfig {
            dim: 4,
            total_samples: 0,
            seed: 3,
            ..Default::default()
        };
        let trained = train(&graph, &config).unwrap();
        let mut rng = seeded_rng(3);
        let init = Model::random(2, 2, 4, &mut rng);
        assert_eq!(trained.row(0), &init.content_data()[..4]);
        let half = 0.5 / 4.0;
        assert!(trained.rows().flatten().all(|x| (-half..half).contains(x)));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { dim: 0, ..ok.clone() },
            TrainConfig { negatives: 0, ..ok.clone() },
            TrainConfig { rho0: 1.0, ..ok.clone() },
            TrainConfig { workers: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn matrix(rows: &[(&str, Vec<f64>)]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(
            rows.iter().map(|(id, _)| id.to_string()).collect(),
            &rows.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn duplicate_vector_ranks_first() {
        let m = matrix(&[
            ("a", vec![1.0, 2.0, 0.5]),
            ("b", vec![0.3, -1.0, 2.0]),
            ("c", vec![1.0, 2.0, 0.5]),
            ("d", vec![-1.0, 0.0, 0.0]),
        ]);
        let nn = nearest_neighbors(&m, "a", 2).unwrap();
        assert_eq!(nn[0].0, "c");
        assert!((nn[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_corpus_orders_by_id() {
        let m = matrix(&[
            ("d", vec![0.0, 0.0, 0.0, 1.0]),
            ("a", vec![1.0, 0.0, 0.0, 0.0]),
            ("c", vec![0.0, 0.0, 1.0, 0.0]),
            ("b", vec![0.0, 1.0, 0.0, 0.0]),
        ]);
        let nn = nearest_neighbors(&m, "c", 3).unwrap();
        assert_eq!(
            nn,
            vec![("a".to_string(), 0.0), ("b".to_string(), 0.0), ("d".to_string(), 0.0)]
        );
        assert!(matches!(nearest_neighbors(&m, "zz", 1), Err(Error::UnknownContent(_))));
        assert!(nearest_neighbors(&m, "a", 4).is_err());
        assert!(nearest_neighbors(&m, "a", 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut rng = seeded_rng(8);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..7).map(|_| rng.random_range(-3.0..3.0) * 1e-3).collect())
            .collect();
        let m = EmbeddingMatrix::from_rows((0..5).map(|i| format!("c{i}")).collect(), &rows).unwrap();
        save_embeddings(&m, &path).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), m);
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("5 7\nc0 "));
    }

    #[test]
    fn load_rejects_short_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        let mut text = String::from("2 100\n");
        text.push_str(&format!("a{}\n", " 0.5".repeat(100)));
        text.push_str(&format!("b{}\n", " 0.5".repeat(99)));
        std::fs::write(&path, text).unwrap();
        match load_embeddings(&path) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("`b`"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "3 2\na 1 2\n").unwrap();
        assert!(load_embeddings(&path).is_err());
    }
}
