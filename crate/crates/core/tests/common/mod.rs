#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use divscope::clustering::HardAssignment;
use divscope::corpus;
use divscope::embedding::{self, EmbeddingMatrix, TrainConfig};
use divscope::graph;
use divscope::pipeline::PipelineConfig;
use divscope::synth::{self, Drift, SynthConfig};
use divscope::{seeded_rng, SeededRng};
use rand::Rng;

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("p{i:03}")).collect()
}

pub fn random_rows(rng: &mut SeededRng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(ids(rows.len()), rows).unwrap()
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

/// Average linkage by rescanning every cluster pair at every step, with the
/// linkage recomputed from point distances each time. Returns one cluster
/// label per point after cutting at `k`.
pub fn brute_force_average_linkage(rows: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = rows.len();
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| cosine_distance(&rows[i], &rows[j])).collect())
        .collect();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut sum = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        sum += d[i][j];
                    }
                }
                let avg = sum / (clusters[a].len() * clusters[b].len()) as f64;
                if avg < best.0 {
                    best = (avg, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
    }
    let mut labels = vec![0; n];
    for (l, members) in clusters.iter().enumerate() {
        for &i in members {
            labels[i] = l;
        }
    }
    labels
}

/// True when the two labelings induce the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd: HashMap<usize, usize> = HashMap::new();
    let mut back: HashMap<usize, usize> = HashMap::new();
    a.iter().zip(b).all(|(&x, &y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

pub fn assignment(labels: &[usize], k: usize) -> HardAssignment {
    HardAssignment::new(ids(labels.len()), labels.to_vec(), k).unwrap()
}

/// Reads `df,t,cdf` rows of the high-precision reference table.
pub fn t_cdf_fixture() -> Vec<(f64, f64, f64)> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/t_cdf.csv");
    let mut reader = csv::Reader::from_path(&path).unwrap();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            let f = |i: usize| r[i].parse::<f64>().unwrap();
            (f(0), f(1), f(2))
        })
        .collect()
}

/// Worst relative error between analytic and central-difference gradients
/// over `instances` random edges, measured per vector as
/// `|analytic - numeric| / max(|analytic|, |numeric|)`.
pub fn gradient_check(instances: usize, h: f64, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dim = rng.random_range(2..=16);
        let k = rng.random_range(1..=5);
        let mut vecs: Vec<Vec<f64>> = random_rows(&mut rng, k + 2, dim);
        let loss = |v: &[Vec<f64>]| {
            let negs: Vec<&[f64]> = v[2..].iter().map(|x| x.as_slice()).collect();
            embedding::edge_loss(&v[0], &v[1], &negs)
        };
        let negs: Vec<&[f64]> = vecs[2..].iter().map(|x| x.as_slice()).collect();
        let g = embedding::edge_gradient(&vecs[0], &vecs[1], &negs);
        let mut analytic = vec![g.user, g.content];
        analytic.extend(g.negatives);
        for (which, grad) in analytic.iter().enumerate() {
            let mut numeric = vec![0.0; dim];
            for (d, slot) in numeric.iter_mut().enumerate() {
                let x = vecs[which][d];
                vecs[which][d] = x + h;
                let up = loss(&vecs);
                vecs[which][d] = x - h;
                let down = loss(&vecs);
                vecs[which][d] = x;
                *slot = (up - down) / (2.0 * h);
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = grad.iter().zip(&numeric).map(|(a, b)| a - b).collect();
            let scale = norm(grad).max(norm(&numeric));
            if scale > 0.0 {
                worst = worst.max(norm(&diff) / scale);
            }
        }
    }
    worst
}

/// Five genres of forty contents each, a thousand users, no drift.
pub fn planted_corpus(seed: u64) -> synth::SynthOutput {
    synth::generate(&SynthConfig {
        genres: 5,
        contents_per_genre: 40,
        users: 1000,
        drift: Drift::none(),
        seed,
        ..Default::default()
    })
    .unwrap()
}

pub fn planted_graph(out: &synth::SynthOutput) -> graph::BipartiteGraph {
    let histories = corpus::derive_watched(&out.events, 300.0).unwrap();
    graph::build_bipartite(&histories, 0).unwrap()
}

pub fn recovery_config() -> TrainConfig {
    TrainConfig {
        dim: 16,
        negatives: 5,
        total_samples: 5_000_000,
        seed: 11,
        workers: 1,
        ..Default::default()
    }
}

pub struct Recovery {
    pub intra: f64,
    pub inter: f64,
    pub purity: f64,
}

/// Mean intra- and inter-genre cosine similarity and top-5 neighbour genre
/// purity, scored against the planted genres.
pub fn recovery(emb: &EmbeddingMatrix, genres: &BTreeMap<String, usize>) -> Recovery {
    let n = emb.len();
    let cos = |i: usize, j: usize| 1.0 - cosine_distance(emb.row(i), emb.row(j));
    let genre: Vec<usize> = emb.ids().iter().map(|id| genres[id]).collect();
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    let mut hits = 0usize;
    for i in 0..n {
        let mut sims: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (cos(i, j), j)).collect();
        for &(s, j) in &sims {
            if j > i {
                let acc = if genre[i] == genre[j] { &mut intra } else { &mut inter };
                acc.0 += s;
                acc.1 += 1;
            }
        }
        sims.sort_by(|a, b| b.0.total_cmp(&a.0));
        hits += sims[..5].iter().filter(|(_, j)| genre[*j] == genre[i]).count();
    }
    Recovery {
        intra: intra.0 / intra.1 as f64,
        inter: inter.0 / inter.1 as f64,
        purity: hits as f64 / (5 * n) as f64,
    }
}

/// Users broaden across genres late in their history while settling on a
/// favourite series within each genre.
pub fn drift_config(out_dir: PathBuf) -> PipelineConfig {
    let mut c = PipelineConfig {
        out_dir: out_dir.clone(),
        cache_dir: Some(out_dir.join(".cache")),
        dim: 32,
        kd: 5,
        ka: 5,
        kd_sweep: vec![2, 3, 4, 5, 6, 8, 10, 15, 20, 30, 40],
        synth_contents_per_genre: 64,
        synth_series_per_genre: 8,
        synth_drift: Drift::broaden(0.6),
        synth_micro_focus: 1.0,
        synth_ambiguity_fraction: 0.0,
        workers: 1,
        ..Default::default()
    };
    c.set_seed(7);
    c
}

/// A mild broadening trend plus extra drift for users who meet a blended
/// content.
pub fn ambiguity_config(out_dir: PathBuf) -> PipelineConfig {
    let mut c = PipelineConfig {
        out_dir: out_dir.clone(),
        cache_dir: Some(out_dir.join(".cache")),
        dim: 32,
        kd: 5,
        ka: 5,
        group_size: 300,
        synth_drift: Drift::broaden(0.3),
        synth_blend_drift_bonus: 0.6,
        synth_ambiguity_fraction: 0.05,
        synth_blend_viewer_fraction: 0.35,
        workers: 1,
        ..Default::default()
    };
    c.set_seed(7);
    c
}

/// A small corpus for exercising the stage machinery quickly.
pub fn small_config(out_dir: PathBuf) -> PipelineConfig {
    PipelineConfig {
        out_dir: out_dir.clone(),
        cache_dir: Some(out_dir.join(".cache")),
        dim: 8,
        samples: 200_000,
        kd: 4,
        ka: 4,
        kd_sweep: vec![2, 4, 8],
        group_size: 40,
        synth_genres: 4,
        synth_contents_per_genre: 15,
        synth_users: 150,
        synth_drift: Drift::broaden(0.5),
        synth_ambiguity_fraction: 0.1,
        workers: 1,
        ..Default::default()
    }
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// `(kd, mean_delta, p_value)` rows of a sweep file.
pub fn read_sweep(path: &Path) -> Vec<(usize, f64, Option<f64>)> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            let p = if r[2].is_empty() { None } else { Some(r[2].parse().unwrap()) };
            (r[0].parse().unwrap(), r[1].parse().unwrap(), p)
        })
        .collect()
}
