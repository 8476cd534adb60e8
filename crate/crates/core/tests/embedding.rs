mod common;

use std::time::{Duration, Instant};

use common::*;
use divscope::embedding::{self, EmbeddingMatrix, TrainConfig, Trainer};
use divscope::seeded_rng;
use rand::Rng;

#[test]
fn gradients_match_finite_differences() {
    let t = Instant::now();
    let worst = gradient_check(100, 1e-5, 1);
    assert!(worst < 1e-5, "worst relative error {worst:e}");
    assert!(t.elapsed() < Duration::from_secs(5));
}

#[test]
fn gradients_hold_for_large_scores() {
    // Scores near but inside the clamp keep the analytic gradient exact.
    let user = vec![3.0; 3];
    let content = vec![3.5; 3];
    let neg = vec![-3.0; 3];
    let g = embedding::edge_gradient(&user, &content, &[&neg]);
    let h = 1e-6;
    for d in 0..3 {
        let mut up = content.clone();
        up[d] += h;
        let mut down = content.clone();
        down[d] -= h;
        let numeric = (embedding::edge_loss(&user, &up, &[&neg]) - embedding::edge_loss(&user, &down, &[&neg])) / (2.0 * h);
        assert!((numeric - g.content[d]).abs() <= 1e-6 * g.content[d].abs().max(1e-9));
    }
}

#[test]
fn held_out_loss_falls_during_training() {
    let out = planted_corpus(1);
    let graph = planted_graph(&out);
    let config = TrainConfig {
        total_samples: 2_000_000,
        ..recovery_config()
    };
    let total = config.total_samples;
    let mut trainer = Trainer::new(&graph, config).unwrap();

    let mut rng = seeded_rng(404);
    let held_out: Vec<(usize, usize, Vec<usize>)> = (0..1000)
        .map(|_| {
            let (u, c) = graph.sample_edge(&mut rng);
            let negs = (0..5).map(|_| trainer.noise().sample(&mut rng)).collect();
            (u as usize, c as usize, negs)
        })
        .collect();
    let mean_loss = |trainer: &Trainer| {
        held_out.iter().map(|(u, c, n)| trainer.model().loss(*u, *c, n)).sum::<f64>() / held_out.len() as f64
    };

    let mut losses = vec![mean_loss(&trainer)];
    for step in 1..=10 {
        trainer.run_until(total * step / 10).unwrap();
        losses.push(mean_loss(&trainer));
    }
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] * 1.02, "loss rose: {losses:?}");
    }
    assert!(losses[10] <= 0.8 * losses[0], "{losses:?}");
}

#[test]
fn trained_vectors_are_finite_and_bounded() {
    let out = planted_corpus(2);
    let emb = embedding::train(&planted_graph(&out), &recovery_config()).unwrap();
    assert!(emb.as_flat().iter().all(|v| v.is_finite()));
    assert!(emb.max_norm() < 100.0, "max norm {}", emb.max_norm());
}

#[test]
fn neighbours_share_planted_genre() {
    let out = planted_corpus(4);
    let emb = embedding::train(&planted_graph(&out), &recovery_config()).unwrap();
    let genres = out.truth.genre_map();
    let r = recovery(&emb, &genres);
    assert!(r.intra - r.inter >= 0.2, "intra {} inter {}", r.intra, r.inter);
    assert!(r.purity >= 0.9, "purity {}", r.purity);

    let first = &emb.ids()[0];
    let near = embedding::nearest_neighbors(&emb, first, 5).unwrap();
    assert_eq!(near.len(), 5);
    assert!(near.iter().filter(|(id, _)| genres[id] == genres[first]).count() >= 4);
}

#[test]
fn single_worker_training_is_bit_identical() {
    let out = planted_corpus(5);
    let graph = planted_graph(&out);
    let config = TrainConfig {
        total_samples: 300_000,
        ..recovery_config()
    };
    let a = embedding::train(&graph, &config).unwrap();
    let b = embedding::train(&graph, &config).unwrap();
    assert_eq!(a, b);
    let c = embedding::train(&graph, &TrainConfig { seed: 12, ..config }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn parallel_workers_still_recover_genres() {
    let out = planted_corpus(6);
    let config = TrainConfig {
        workers: 4,
        ..recovery_config()
    };
    let emb = embedding::train(&planted_graph(&out), &config).unwrap();
    assert!(emb.as_flat().iter().all(|v| v.is_finite()));
    let r = recovery(&emb, &out.truth.genre_map());
    assert!(r.purity >= 0.9, "purity {}", r.purity);
}

#[test]
fn large_embedding_file_loads_quickly() {
    let mut rng = seeded_rng(8);
    let n = 20_878;
    let dim = 100;
    let ids: Vec<String> = (0..n).map(|i| format!("content{i:05}")).collect();
    let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let matrix = EmbeddingMatrix::new(ids, dim, data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("embeddings.txt");
    embedding::save_embeddings(&matrix, &path).unwrap();

    let t = Instant::now();
    let loaded = embedding::load_embeddings(&path).unwrap();
    let elapsed = t.elapsed();
    assert!(elapsed < Duration::from_secs(5), "load took {elapsed:?}");
    assert_eq!(loaded, matrix);
}
