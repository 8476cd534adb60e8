use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use divscope::clustering::{fcm, Dendrogram, FcmConfig, HardAssignment, MembershipMatrix};
use divscope::corpus::{
    derive_watched, extract_all_blocks, filter_eligible, load_events, load_profiles, read_blocks, read_histories,
    write_blocks, write_histories, DateWindow, EligibilityCriteria, InputFormat,
};
use divscope::diversity::{
    ambiguities, embedded_pairs, kd_sweep_with, read_ambiguities, read_scores, score_blocks, write_ambiguities,
    write_scores, write_sweep, EntropyOptions, Metric,
};
use divscope::embedding::{load_embeddings, nearest_neighbors, save_embeddings, train, TrainConfig};
use divscope::graph::{build_bipartite, BipartiteGraph};
use divscope::pipeline::{
    emit_histogram, run_pipeline, user_max_ambiguity, write_block_histogram, write_histogram, PipelineConfig,
    CACHE_DIR_ENV,
};
use divscope::stats::{ambiguity_group_report, diversity_change_report, split_by_max_ambiguity};
use divscope::synth::{generate, Drift, SynthConfig};

/// Viewing-diversity analysis: embeddings, clustering, diversity metrics and
/// significance tests over watch logs.
#[derive(Parser)]
#[command(name = "divscope", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted genres and drift.
    Synth(SynthArgs),
    /// Derive watched histories and start/end blocks from an event log.
    Ingest(IngestArgs),
    /// Build the user-content graph from histories.
    Graph(GraphArgs),
    /// Train content embeddings on the graph.
    Embed(EmbedArgs),
    /// Hard (average-linkage) or fuzzy (c-means) clustering.
    Cluster(ClusterArgs),
    /// Per-block APD and CDE scores.
    Diversity(DiversityArgs),
    /// Content ambiguity from fuzzy memberships.
    Ambiguity(AmbiguityArgs),
    /// Mean CDE change across cluster counts.
    Sweep(SweepArgs),
    /// Significance tests over diversity scores.
    Report(ReportArgs),
    /// Full pipeline from one config file, with stage caching.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    genres: usize,
    #[arg(long, default_value_t = 40)]
    contents_per_genre: usize,
    #[arg(long, default_value_t = 5)]
    series_per_genre: usize,
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 50)]
    views_min: usize,
    #[arg(long, default_value_t = 90)]
    views_max: usize,
    /// `none`, `broaden:<m>` or `narrow:<m>`.
    #[arg(long, default_value = "none")]
    drift: Drift,
    #[arg(long, default_value_t = 3)]
    late_genres: usize,
    #[arg(long, default_value_t = 0.0)]
    micro_focus: f64,
    #[arg(long, default_value_t = 0.0)]
    ambiguity_fraction: f64,
    #[arg(long, default_value_t = 0.3)]
    blend_viewer_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    blend_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    blend_drift_bonus: f64,
    #[arg(long, default_value_t = 0.05)]
    leak: f64,
    #[arg(long, default_value_t = 0.1)]
    skim_rate: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Fail on the first malformed row instead of skipping it.
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value_t = 300.0)]
    min_watch_seconds: f64,
    /// Keep users active on more than this many distinct days (0: off).
    #[arg(long, default_value_t = 0)]
    min_active_days: u32,
    #[arg(long, requires = "active_to")]
    active_from: Option<chrono::NaiveDate>,
    #[arg(long, requires = "active_from")]
    active_to: Option<chrono::NaiveDate>,
    /// Block size.
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    /// Receives histories.csv and blocks.csv.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    #[arg(long)]
    histories: PathBuf,
    /// Keep users with more than this many distinct programs.
    #[arg(long, default_value_t = 0)]
    min_programs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 10_000_000)]
    samples: u64,
    #[arg(long, default_value_t = 0.025)]
    rho0: f64,
    /// Let the learning rate decay all the way to zero.
    #[arg(long)]
    no_lr_floor: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Print the nearest neighbours of this content after training.
    #[arg(long)]
    neighbors: Option<String>,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    emb: PathBuf,
    /// Fuzzy c-means instead of hard clustering.
    #[arg(long)]
    fuzzy: bool,
    #[arg(long, default_value_t = 20)]
    kd: usize,
    /// Also save the full merge history.
    #[arg(long)]
    dendrogram: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    ka: usize,
    #[arg(long, default_value_t = 1.15)]
    m: f64,
    /// Hard assignment to start from; defaults to an average-linkage cut at `ka`.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EntropyArgs {
    /// Logarithm base for entropies (default: natural log).
    #[arg(long)]
    entropy_base: Option<f64>,
    /// Divide entropies by ln(K).
    #[arg(long)]
    normalize: bool,
}

impl EntropyArgs {
    fn options(&self) -> EntropyOptions {
        EntropyOptions {
            base: self.entropy_base,
            normalize: self.normalize,
        }
    }
}

#[derive(Args)]
struct DiversityArgs {
    #[arg(long)]
    blocks: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    clusters: PathBuf,
    #[command(flatten)]
    entropy: EntropyArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write start/end APD histograms here.
    #[arg(long)]
    hist: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args)]
struct AmbiguityArgs {
    #[arg(long)]
    membership: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    hist: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    blocks: PathBuf,
    /// Embeddings to cluster; ignored when --dendrogram is given.
    #[arg(long, required_unless_present = "dendrogram")]
    emb: Option<PathBuf>,
    #[arg(long)]
    dendrogram: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,8,10,15,20,25,30,40,50")]
    kd_list: Vec<usize>,
    #[command(flatten)]
    entropy: EntropyArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    diversity: PathBuf,
    /// Content ambiguity CSV; enables the high/low ambiguity comparison.
    #[arg(long, requires_all = ["histories", "blocks"])]
    ambiguity: Option<PathBuf>,
    #[arg(long)]
    histories: Option<PathBuf>,
    #[arg(long)]
    blocks: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 300)]
    group_size: usize,
    #[arg(long, default_value = "cde")]
    group_metric: Metric,
    #[arg(long)]
    out: PathBuf,
    /// Where the group comparison goes.
    #[arg(long, default_value = "ambiguity_report.json")]
    groups_out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed for both the generator and the embedding.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Stage cache directory (default: <out_dir>/.cache).
    #[arg(long, env = CACHE_DIR_ENV)]
    cache_dir: Option<PathBuf>,
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let config = SynthConfig {
        genres: a.genres,
        contents_per_genre: a.contents_per_genre,
        series_per_genre: a.series_per_genre,
        users: a.users,
        views_min: a.views_min,
        views_max: a.views_max,
        drift: a.drift,
        late_genres: a.late_genres,
        micro_focus: a.micro_focus,
        ambiguity_fraction: a.ambiguity_fraction,
        blend_viewer_fraction: a.blend_viewer_fraction,
        blend_rate: a.blend_rate,
        blend_drift_bonus: a.blend_drift_bonus,
        leak: a.leak,
        skim_rate: a.skim_rate,
        seed: a.seed,
        ..SynthConfig::default()
    };
    if let Some(w) = config.feasibility_warning(10, 10) {
        log::warn!("{w}");
    }
    let out = generate(&config)?;
    out.write_to(&a.out_dir)?;
    println!(
        "{} events, {} users, {} contents -> {}",
        out.events.len(),
        out.profiles.len(),
        out.truth.contents.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let log = load_events(&a.events, InputFormat::from_path(&a.events), a.strict)?;
    for row in log.malformed.iter().take(5) {
        log::warn!("line {}: {}", row.line, row.reason);
    }
    let profiles = match &a.profiles {
        Some(p) => load_profiles(p, InputFormat::from_path(p))?,
        None => BTreeMap::new(),
    };
    let criteria = EligibilityCriteria {
        min_active_days: a.min_active_days,
        strictly_more: true,
        active_in: match (a.active_from, a.active_to) {
            (Some(from), Some(to)) => Some(DateWindow { from, to }),
            _ => None,
        },
    };
    let watched = derive_watched(&log.events, a.min_watch_seconds)?;
    let eligible = filter_eligible(&watched, &criteria);
    let blocks = extract_all_blocks(&eligible, &profiles, a.n, a.warmup)?;
    write_histories(&a.out_dir.join("histories.csv"), &eligible)?;
    write_blocks(&a.out_dir.join("blocks.csv"), &blocks.pairs)?;
    println!(
        "{} events ({} malformed), {} eligible users, {} block pairs, {} excluded",
        log.len(),
        log.malformed.len(),
        eligible.len(),
        blocks.pairs.len(),
        blocks.excluded.len()
    );
    Ok(())
}

fn graph(a: GraphArgs) -> Result<()> {
    let g = build_bipartite(&read_histories(&a.histories)?, a.min_programs)?;
    g.write_edges(&a.out)?;
    println!("{} users, {} contents, {} edges", g.users().len(), g.contents().len(), g.edges().len());
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let g = BipartiteGraph::read_edges(&a.edges)?;
    let config = TrainConfig {
        dim: a.dim,
        negatives: a.negatives,
        total_samples: a.samples,
        rho0: a.rho0,
        seed: a.seed,
        workers: a.workers,
        lr_floor: !a.no_lr_floor,
        ..TrainConfig::default()
    };
    let emb = train(&g, &config)?;
    save_embeddings(&emb, &a.out)?;
    println!("{} contents x {} dims -> {}", emb.len(), emb.dim(), a.out.display());
    if let Some(id) = &a.neighbors {
        for (other, sim) in nearest_neighbors(&emb, id, a.k)? {
            println!("{other}\t{sim:.4}");
        }
    }
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let emb = load_embeddings(&a.emb)?;
    if a.fuzzy {
        let init = match &a.init {
            Some(p) => HardAssignment::read_csv(p)?,
            None => Dendrogram::build(&emb)?.cut(a.ka)?,
        };
        let config = FcmConfig {
            k: a.ka,
            m: a.m,
            tol: a.tol,
            max_iter: a.max_iter,
        };
        let r = fcm(&emb, &config, &init)?;
        if !r.converged {
            log::warn!("fuzzy c-means did not converge in {} iterations", r.iterations);
        }
        r.membership.write_csv(&a.out)?;
        println!(
            "{} contents, {} clusters, {} iterations, objective {:.6}",
            r.membership.len(),
            r.membership.k(),
            r.iterations,
            r.objective_history.last().copied().unwrap_or(f64::NAN)
        );
    } else {
        let d = Dendrogram::build(&emb)?;
        if let Some(p) = &a.dendrogram {
            d.write_json(p)?;
        }
        let hard = d.cut(a.kd)?;
        hard.write_csv(&a.out)?;
        println!("{} contents, sizes {:?}", hard.ids().len(), hard.sizes());
    }
    Ok(())
}

fn diversity(a: DiversityArgs) -> Result<()> {
    let emb = load_embeddings(&a.emb)?;
    let (pairs, dropped) = embedded_pairs(&read_blocks(&a.blocks)?, &emb);
    if !dropped.is_empty() {
        log::warn!("{} users skipped: block contents without embeddings", dropped.len());
    }
    let scores = score_blocks(&pairs, &emb, &HardAssignment::read_csv(&a.clusters)?, &a.entropy.options())?;
    write_scores(&a.out, &scores)?;
    if let Some(h) = &a.hist {
        write_block_histogram(h, &scores, Metric::Apd, a.bins)?;
    }
    println!("{} users scored", pairs.len());
    Ok(())
}

fn ambiguity(a: AmbiguityArgs) -> Result<()> {
    let amb = ambiguities(&MembershipMatrix::read_csv(&a.membership)?)?;
    write_ambiguities(&a.out, &amb)?;
    if let Some(h) = &a.hist {
        let values: Vec<f64> = amb.values().copied().collect();
        write_histogram(h, &emit_histogram(&values, a.bins)?)?;
    }
    println!("{} contents", amb.len());
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let dendrogram = match (&a.dendrogram, &a.emb) {
        (Some(d), _) => Dendrogram::read_json(d)?,
        (None, Some(e)) => Dendrogram::build(&load_embeddings(e)?)?,
        (None, None) => bail!("either --emb or --dendrogram is required"),
    };
    let pairs = read_blocks(&a.blocks)?;
    let points = kd_sweep_with(&pairs, &dendrogram, &a.kd_list, &a.entropy.options())?;
    write_sweep(&a.out, &points)?;
    for p in &points {
        let p_value = p.p_value.map_or("-".to_string(), |v| format!("{v:.3e}"));
        println!("kd={:<4} mean_delta={:+.4} p={p_value}", p.kd, p.mean_delta);
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let scores = read_scores(&a.diversity)?;
    let rows = diversity_change_report(&scores, a.alpha)?;
    write_json(&a.out, &rows)?;
    for r in &rows {
        println!(
            "{}: start {:.4} end {:.4} p {}",
            r.metric.as_str(),
            r.mean_start,
            r.mean_end,
            r.p.map_or("-".to_string(), |p| format!("{p:.3e}"))
        );
    }
    if let (Some(amb), Some(hist), Some(blocks)) = (&a.ambiguity, &a.histories, &a.blocks) {
        let amb = read_ambiguities(amb)?;
        let histories = read_histories(hist)?;
        let scored: std::collections::BTreeSet<&str> = scores.iter().map(|s| s.user_id.as_str()).collect();
        let pairs: Vec<_> = read_blocks(blocks)?
            .into_iter()
            .filter(|p| scored.contains(p.user_id.as_str()))
            .collect();
        let split = split_by_max_ambiguity(&user_max_ambiguity(&histories, &pairs, &amb)?, a.group_size)?;
        let delta = divscope::diversity::deltas(&scores, a.group_metric)?;
        let g = ambiguity_group_report(&split, &delta, a.group_metric, a.alpha)?;
        write_json(&a.groups_out, &g)?;
        println!(
            "high-ambiguity {:.4} vs low {:.4}: t {:.3} p {:.3e}",
            g.group_high_mean, g.group_low_mean, g.t, g.p
        );
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = a.out_dir {
        config.out_dir = d;
    }
    if let Some(s) = a.seed {
        config.set_seed(s);
    }
    if let Some(w) = a.workers {
        config.workers = w;
    }
    if let Some(c) = a.cache_dir {
        config.cache_dir = Some(c);
    }
    let summary = run_pipeline(&config)?;
    for s in &summary.manifest.stages {
        println!(
            "{:<10} {:<7} {}",
            s.stage,
            if s.cached { "cached" } else { "ran" },
            s.artifacts.iter().map(|x| x.path.as_str()).collect::<Vec<_>>().join(" ")
        );
    }
    println!("manifest: {}", summary.manifest_path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Graph(a) => graph(a),
        Command::Embed(a) => embed(a),
        Command::Cluster(a) => cluster(a),
        Command::Diversity(a) => diversity(a),
        Command::Ambiguity(a) => ambiguity(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
    }
}
