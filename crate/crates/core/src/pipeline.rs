//! End-to-end pipeline with content-addressed stage caching.
//!
//! Stages run in order `synth → corpus → graph → embed → cluster →
//! diversity → report`. Each stage's cache key hashes its parameters together
//! with the bytes of its input artifacts, so changing a parameter re-runs
//! that stage and everything downstream of any output that changed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::clustering::{fcm, Dendrogram, FcmConfig, HardAssignment, MembershipMatrix};
use crate::corpus::{
    self, csv_err, csv_writer, derive_watched, extract_all_blocks, filter_eligible, load_events, load_profiles,
    read_blocks, read_histories, write_blocks, write_histories, DateWindow, EligibilityCriteria, InputFormat,
};
use crate::diversity::{
    self, ambiguities, embedded_pairs, kd_sweep_with, max_ambiguity, read_ambiguities, read_scores, score_blocks,
    write_ambiguities, write_scores, write_sweep, EntropyOptions, Metric,
};
use crate::embedding::{load_embeddings, save_embeddings, train, TrainConfig};
use crate::graph::{build_bipartite, BipartiteGraph};
use crate::stats::{ambiguity_group_report, diversity_change_report, split_by_max_ambiguity};
use crate::synth::{generate, Drift, SynthConfig};
use crate::{Error, Result};

/// Overrides the stage cache location.
pub const CACHE_DIR_ENV: &str = "DIVSCOPE_CACHE_DIR";
pub const MANIFEST: &str = "manifest.json";

/// Every pipeline parameter, as one flat TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,

    /// External event log; when absent the synth stage generates one.
    pub events: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub strict: bool,

    pub min_watch_seconds: f64,
    pub min_active_days: u32,
    pub active_from: Option<NaiveDate>,
    pub active_to: Option<NaiveDate>,
    pub n: usize,
    pub warmup: usize,

    pub min_programs: usize,

    pub dim: usize,
    pub negatives: usize,
    pub samples: u64,
    pub rho0: f64,
    pub lr_floor: bool,
    pub noise_power: f64,
    pub workers: usize,
    pub embed_seed: u64,

    pub kd: usize,
    pub ka: usize,
    pub m: f64,
    pub fcm_tol: f64,
    pub fcm_max_iter: usize,

    pub kd_sweep: Vec<usize>,
    pub entropy_base: Option<f64>,
    pub entropy_normalize: bool,
    pub histogram_bins: usize,

    pub alpha: f64,
    pub group_size: usize,
    pub group_metric: Metric,

    pub synth_genres: usize,
    pub synth_contents_per_genre: usize,
    pub synth_series_per_genre: usize,
    pub synth_users: usize,
    pub synth_views_min: usize,
    pub synth_views_max: usize,
    pub synth_drift: Drift,
    pub synth_late_genres: usize,
    pub synth_micro_focus: f64,
    pub synth_ambiguity_fraction: f64,
    pub synth_blend_viewer_fraction: f64,
    pub synth_blend_rate: f64,
    pub synth_blend_drift_bonus: f64,
    pub synth_leak: f64,
    pub synth_skim_rate: f64,
    pub synth_seed: u64,
    pub synth_start_date: NaiveDate,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        let t = TrainConfig::default();
        let f = FcmConfig::default();
        PipelineConfig {
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            events: None,
            profiles: None,
            strict: false,
            min_watch_seconds: 300.0,
            min_active_days: 0,
            active_from: None,
            active_to: None,
            n: 10,
            warmup: 10,
            min_programs: 0,
            dim: t.dim,
            negatives: t.negatives,
            samples: t.total_samples,
            rho0: t.rho0,
            lr_floor: t.lr_floor,
            noise_power: t.noise_power,
            workers: t.workers,
            embed_seed: t.seed,
            kd: 20,
            ka: f.k,
            m: f.m,
            fcm_tol: f.tol,
            fcm_max_iter: f.max_iter,
            kd_sweep: vec![2, 3, 4, 5, 6, 8, 10, 15, 20, 25, 30, 40, 50],
            entropy_base: None,
            entropy_normalize: false,
            histogram_bins: 20,
            alpha: 0.01,
            group_size: 300,
            group_metric: Metric::Cde,
            synth_genres: s.genres,
            synth_contents_per_genre: s.contents_per_genre,
            synth_series_per_genre: s.series_per_genre,
            synth_users: s.users,
            synth_views_min: s.views_min,
            synth_views_max: s.views_max,
            synth_drift: s.drift,
            synth_late_genres: s.late_genres,
            synth_micro_focus: s.micro_focus,
            synth_ambiguity_fraction: s.ambiguity_fraction,
            synth_blend_viewer_fraction: s.blend_viewer_fraction,
            synth_blend_rate: s.blend_rate,
            synth_blend_drift_bonus: s.blend_drift_bonus,
            synth_leak: s.leak,
            synth_skim_rate: s.skim_rate,
            synth_seed: s.seed,
            synth_start_date: s.start_date,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::parse(path, line, e.message().to_string())
        })
    }

    /// Sets both the synthetic-data and the embedding seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth_seed = seed;
        self.embed_seed = seed;
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            genres: self.synth_genres,
            contents_per_genre: self.synth_contents_per_genre,
            series_per_genre: self.synth_series_per_genre,
            users: self.synth_users,
            views_min: self.synth_views_min,
            views_max: self.synth_views_max,
            drift: self.synth_drift,
            late_genres: self.synth_late_genres,
            micro_focus: self.synth_micro_focus,
            ambiguity_fraction: self.synth_ambiguity_fraction,
            blend_viewer_fraction: self.synth_blend_viewer_fraction,
            blend_rate: self.synth_blend_rate,
            blend_drift_bonus: self.synth_blend_drift_bonus,
            leak: self.synth_leak,
            skim_rate: self.synth_skim_rate,
            registration_views_max: SynthConfig::default().registration_views_max,
            seed: self.synth_seed,
            start_date: self.synth_start_date,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            negatives: self.negatives,
            total_samples: self.samples,
            rho0: self.rho0,
            seed: self.embed_seed,
            workers: self.workers,
            lr_floor: self.lr_floor,
            noise_power: self.noise_power,
        }
    }

    pub fn fcm_config(&self) -> FcmConfig {
        FcmConfig {
            k: self.ka,
            m: self.m,
            tol: self.fcm_tol,
            max_iter: self.fcm_max_iter,
        }
    }

    pub fn eligibility(&self) -> Result<EligibilityCriteria> {
        let active_in = match (self.active_from, self.active_to) {
            (Some(from), Some(to)) if from <= to => Some(DateWindow { from, to }),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidParameter(
                    "active_from and active_to must both be set, in order".into(),
                ))
            }
        };
        Ok(EligibilityCriteria {
            min_active_days: self.min_active_days,
            strictly_more: true,
            active_in,
        })
    }

    pub fn entropy_options(&self) -> EntropyOptions {
        EntropyOptions {
            base: self.entropy_base,
            normalize: self.entropy_normalize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.events.is_none() {
            self.synth_config().validate()?;
        }
        if self.profiles.is_some() && self.events.is_none() {
            return Err(Error::InvalidParameter("profiles given without events".into()));
        }
        if !(self.min_watch_seconds > 0.0) {
            return Err(Error::InvalidParameter("min_watch_seconds must be > 0".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("block size n must be >= 1".into()));
        }
        self.eligibility()?;
        self.train_config().validate()?;
        if self.kd == 0 || self.ka == 0 {
            return Err(Error::InvalidParameter("kd and ka must be >= 1".into()));
        }
        if !(self.m > 1.0) || !(self.fcm_tol > 0.0) {
            return Err(Error::InvalidParameter("fuzzy c-means needs m > 1 and tol > 0".into()));
        }
        if self.kd_sweep.is_empty() || self.kd_sweep.contains(&0) {
            return Err(Error::InvalidParameter("kd_sweep must list positive cluster counts".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::InvalidParameter("histogram_bins must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter("alpha must lie in (0, 1)".into()));
        }
        if self.group_size == 0 {
            return Err(Error::InvalidParameter("group_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]` of the values; the top edge is closed.
/// When every value is equal the range is widened to `value ± 0.5`.
pub fn emit_histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("histogram of no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("histogram values must be finite".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    histogram_over(values, bins, lo, hi)
}

/// Equal-width bins over a given range; values outside it are an error.
pub fn histogram_over(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one bin".into()));
    }
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("empty histogram range [{lo}, {hi}]")));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if !(lo..=hi).contains(&v) {
            return Err(Error::Invalid(format!("value {v} outside [{lo}, {hi}]")));
        }
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: lo + i as f64 * width,
            hi: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count,
        })
        .collect())
}

/// Writes `bin_lo,bin_hi,count`.
pub fn write_histogram(path: &Path, bins: &[HistogramBin]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["bin_lo", "bin_hi", "count"]).map_err(&err)?;
    for b in bins {
        w.write_record([crate::fmt_float(b.lo), crate::fmt_float(b.hi), b.count.to_string()])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Hex sha256 of a file.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub key: String,
    pub params: Value,
    pub artifacts: Vec<Artifact>,
    /// Not written to the manifest so reruns produce the same file.
    #[serde(skip)]
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Invalid(e.to_string()))?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    /// Artifact path → hash, across all stages.
    pub fn artifact_hashes(&self) -> BTreeMap<String, String> {
        self.stages
            .iter()
            .flat_map(|s| s.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

impl RunSummary {
    pub fn cached_stages(&self) -> Vec<&str> {
        self.manifest
            .stages
            .iter()
            .filter(|s| s.cached)
            .map(|s| s.stage.as_str())
            .collect()
    }
}

type StageFn<'a> = Box<dyn Fn(&Path) -> Result<()> + 'a>;

struct Stage<'a> {
    name: &'static str,
    params: Value,
    inputs: Vec<PathBuf>,
    outputs: &'static [&'static str],
    run: StageFn<'a>,
}

struct Runner {
    out_dir: PathBuf,
    cache_dir: PathBuf,
    manifest: Manifest,
}

impl Runner {
    fn manifest_path(&self) -> PathBuf {
        self.out_dir.join(MANIFEST)
    }

    fn key(&self, stage: &Stage) -> Result<String> {
        let mut h = Sha256::new();
        h.update(stage.name.as_bytes());
        h.update([0]);
        h.update(stage.params.to_string().as_bytes());
        for input in &stage.inputs {
            h.update([0]);
            h.update(file_sha256(input)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    fn execute(&mut self, stage: Stage) -> Result<()> {
        let key = self.key(&stage)?;
        let slot = self.cache_dir.join(stage.name).join(&key);
        let hit = stage.outputs.iter().all(|o| slot.join(o).is_file());
        if hit {
            log::info!("{}: cached ({})", stage.name, &key[..12]);
            for o in stage.outputs {
                let dest = self.out_dir.join(o);
                let src = slot.join(o);
                if !dest.is_file() || file_sha256(&dest)? != file_sha256(&src)? {
                    fs::copy(&src, &dest).map_err(|e| Error::io(&dest, e))?;
                }
            }
        } else {
            log::info!("{}: running", stage.name);
            (stage.run)(&self.out_dir)?;
            let staging = self.cache_dir.join(stage.name).join(format!("{key}.partial"));
            fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
            for o in stage.outputs {
                let src = self.out_dir.join(o);
                fs::copy(&src, staging.join(o)).map_err(|e| Error::io(&src, e))?;
            }
            if slot.exists() {
                fs::remove_dir_all(&slot).map_err(|e| Error::io(&slot, e))?;
            }
            fs::rename(&staging, &slot).map_err(|e| Error::io(&slot, e))?;
        }
        let artifacts = stage
            .outputs
            .iter()
            .map(|o| {
                Ok(Artifact {
                    path: o.to_string(),
                    sha256: file_sha256(&self.out_dir.join(o))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        self.manifest.stages.push(StageRecord {
            stage: stage.name.to_string(),
            key,
            params: stage.params,
            artifacts,
            cached: hit,
        });
        self.manifest.write(&self.manifest_path())
    }
}

fn jv<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("parameters serialize")
}

fn json_out<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Invalid(e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Runs every stage, reusing cached outputs whose key is unchanged. On
/// failure the manifest keeps the finished stages plus the error.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    let out_dir = config.out_dir.clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let cache_dir = std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| config.cache_dir.clone())
        .unwrap_or_else(|| out_dir.join(".cache"));
    let mut runner = Runner {
        out_dir: out_dir.clone(),
        cache_dir,
        manifest: Manifest {
            stages: Vec::new(),
            failed_stage: None,
            error: None,
        },
    };
    let stages = build_stages(config, &out_dir);
    for stage in stages {
        let name = stage.name;
        if let Err(e) = runner.execute(stage) {
            runner.manifest.failed_stage = Some(name.to_string());
            runner.manifest.error = Some(e.to_string());
            runner.manifest.write(&runner.manifest_path())?;
            return Err(Error::Stage {
                stage: name.to_string(),
                source: Box::new(e),
            });
        }
    }
    Ok(RunSummary {
        manifest_path: runner.manifest_path(),
        manifest: runner.manifest,
    })
}

fn build_stages<'a>(c: &'a PipelineConfig, out: &Path) -> Vec<Stage<'a>> {
    let p = |name: &str| out.join(name);
    let mut stages = Vec::new();
    let (events, profiles) = match &c.events {
        Some(events) => (events.clone(), c.profiles.clone()),
        None => {
            let synth = c.synth_config();
            stages.push(Stage {
                name: "synth",
                params: jv(&synth),
                inputs: vec![],
                outputs: &["events.csv", "profiles.csv", "ground_truth.json"],
                run: Box::new(move |dir| {
                    if let Some(w) = synth.feasibility_warning(c.n, c.warmup) {
                        log::warn!("synth: {w}");
                    }
                    generate(&synth)?.write_to(dir)
                }),
            });
            (p("events.csv"), Some(p("profiles.csv")))
        }
    };

    let mut corpus_inputs = vec![events.clone()];
    corpus_inputs.extend(profiles.clone());
    stages.push(Stage {
        name: "corpus",
        params: json!({
            "min_watch_seconds": c.min_watch_seconds,
            "eligibility": jv(&c.eligibility().ok()),
            "n": c.n,
            "warmup": c.warmup,
            "strict": c.strict,
        }),
        inputs: corpus_inputs,
        outputs: &["histories.csv", "blocks.csv"],
        run: Box::new(move |dir| {
            let log = load_events(&events, InputFormat::from_path(&events), c.strict)?;
            if !log.malformed.is_empty() {
                log::warn!("corpus: skipped {} malformed rows", log.malformed.len());
            }
            let profiles = match &profiles {
                Some(path) => load_profiles(path, InputFormat::from_path(path))?,
                None => BTreeMap::new(),
            };
            let watched = derive_watched(&log.events, c.min_watch_seconds)?;
            let eligible = filter_eligible(&watched, &c.eligibility()?);
            let blocks = extract_all_blocks(&eligible, &profiles, c.n, c.warmup)?;
            log::info!(
                "corpus: {} events, {} users eligible, {} with blocks, {} excluded",
                log.len(),
                eligible.len(),
                blocks.pairs.len(),
                blocks.excluded.len()
            );
            write_histories(&dir.join("histories.csv"), &eligible)?;
            write_blocks(&dir.join("blocks.csv"), &blocks.pairs)
        }),
    });

    stages.push(Stage {
        name: "graph",
        params: json!({ "min_programs": c.min_programs }),
        inputs: vec![p("histories.csv")],
        outputs: &["edges.csv"],
        run: Box::new(move |dir| {
            let histories = read_histories(&dir.join("histories.csv"))?;
            build_bipartite(&histories, c.min_programs)?.write_edges(&dir.join("edges.csv"))
        }),
    });

    let train_cfg = c.train_config();
    stages.push(Stage {
        name: "embed",
        params: jv(&train_cfg),
        inputs: vec![p("edges.csv")],
        outputs: &["embeddings.txt"],
        run: Box::new(move |dir| {
            let graph = BipartiteGraph::read_edges(&dir.join("edges.csv"))?;
            log::info!(
                "embed: {} users, {} contents, {} edges",
                graph.users().len(),
                graph.contents().len(),
                graph.edges().len()
            );
            save_embeddings(&train(&graph, &train_cfg)?, &dir.join("embeddings.txt"))
        }),
    });

    let fcm_cfg = c.fcm_config();
    stages.push(Stage {
        name: "cluster",
        params: json!({ "kd": c.kd, "fcm": jv(&fcm_cfg) }),
        inputs: vec![p("embeddings.txt")],
        outputs: &["dendrogram.json", "clusters.csv", "membership.csv"],
        run: Box::new(move |dir| {
            let emb = load_embeddings(&dir.join("embeddings.txt"))?;
            let dendrogram = Dendrogram::build(&emb)?;
            dendrogram.write_json(&dir.join("dendrogram.json"))?;
            dendrogram.cut(c.kd)?.write_csv(&dir.join("clusters.csv"))?;
            let result = fcm(&emb, &fcm_cfg, &dendrogram.cut(fcm_cfg.k)?)?;
            if !result.converged {
                log::warn!("cluster: fuzzy c-means stopped after {} iterations", result.iterations);
            }
            result.membership.write_csv(&dir.join("membership.csv"))
        }),
    });

    stages.push(Stage {
        name: "diversity",
        params: json!({
            "kd_sweep": c.kd_sweep,
            "entropy": jv(&c.entropy_options()),
            "histogram_bins": c.histogram_bins,
        }),
        inputs: vec![
            p("blocks.csv"),
            p("embeddings.txt"),
            p("dendrogram.json"),
            p("clusters.csv"),
            p("membership.csv"),
        ],
        outputs: &[
            "diversity.csv",
            "ambiguity.csv",
            "kd_sweep.csv",
            "apd_hist.csv",
            "ambiguity_hist.csv",
        ],
        run: Box::new(move |dir| diversity_stage(c, dir)),
    });

    stages.push(Stage {
        name: "report",
        params: json!({
            "alpha": c.alpha,
            "group_size": c.group_size,
            "group_metric": c.group_metric,
        }),
        inputs: vec![
            p("diversity.csv"),
            p("ambiguity.csv"),
            p("histories.csv"),
            p("blocks.csv"),
        ],
        outputs: &["report.json", "ambiguity_report.json"],
        run: Box::new(move |dir| report_stage(c, dir)),
    });
    stages
}

fn diversity_stage(c: &PipelineConfig, dir: &Path) -> Result<()> {
    let emb = load_embeddings(&dir.join("embeddings.txt"))?;
    let (pairs, dropped) = embedded_pairs(&read_blocks(&dir.join("blocks.csv"))?, &emb);
    if !dropped.is_empty() {
        log::warn!("diversity: {} users have blocks with unembedded contents and were skipped", dropped.len());
    }
    if pairs.is_empty() {
        return Err(Error::Invalid("no users with fully embedded blocks".into()));
    }
    let assignment = HardAssignment::read_csv(&dir.join("clusters.csv"))?;
    let options = c.entropy_options();
    let scores = score_blocks(&pairs, &emb, &assignment, &options)?;
    write_scores(&dir.join("diversity.csv"), &scores)?;

    let dendrogram = Dendrogram::read_json(&dir.join("dendrogram.json"))?;
    let ks: Vec<usize> = c
        .kd_sweep
        .iter()
        .copied()
        .filter(|&k| k <= dendrogram.ids().len())
        .collect();
    if ks.len() < c.kd_sweep.len() {
        log::warn!("diversity: sweep values above {} contents were skipped", dendrogram.ids().len());
    }
    write_sweep(&dir.join("kd_sweep.csv"), &kd_sweep_with(&pairs, &dendrogram, &ks, &options)?)?;

    let amb = ambiguities(&MembershipMatrix::read_csv(&dir.join("membership.csv"))?)?;
    write_ambiguities(&dir.join("ambiguity.csv"), &amb)?;
    let values: Vec<f64> = amb.values().copied().collect();
    write_histogram(&dir.join("ambiguity_hist.csv"), &emit_histogram(&values, c.histogram_bins)?)?;
    write_block_histogram(&dir.join("apd_hist.csv"), &scores, Metric::Apd, c.histogram_bins)
}

/// Start- and end-block histograms of one metric over shared bin edges, as
/// `block,bin_lo,bin_hi,count`.
pub fn write_block_histogram(
    path: &Path,
    scores: &[diversity::DiversityScore],
    metric: Metric,
    bins: usize,
) -> Result<()> {
    let all: Vec<f64> = scores.iter().filter(|s| s.metric == metric).map(|s| s.value).collect();
    let edges = emit_histogram(&all, bins)?;
    let (lo, hi) = (edges[0].lo, edges[edges.len() - 1].hi);
    let mut w = csv_writer(path)?;
    let err = csv_err(path);
    w.write_record(["block", "bin_lo", "bin_hi", "count"]).map_err(&err)?;
    for block in [corpus::Block::Start, corpus::Block::End] {
        let values: Vec<f64> = scores
            .iter()
            .filter(|s| s.metric == metric && s.block == block)
            .map(|s| s.value)
            .collect();
        for b in histogram_over(&values, bins, lo, hi)? {
            w.write_record([block.as_str(), &crate::fmt_float(b.lo), &crate::fmt_float(b.hi), &b.count.to_string()])
                .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-user maximum ambiguity of views before the end block.
pub fn user_max_ambiguity(
    histories: &BTreeMap<String, corpus::WatchedHistory>,
    pairs: &[corpus::BlockPair],
    ambiguity: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    pairs
        .iter()
        .map(|p| {
            let h = histories
                .get(&p.user_id)
                .ok_or_else(|| Error::Invalid(format!("no history for `{}`", p.user_id)))?;
            Ok((p.user_id.clone(), max_ambiguity(h, p.end_boundary(), ambiguity)?))
        })
        .collect()
}

fn report_stage(c: &PipelineConfig, dir: &Path) -> Result<()> {
    let scores = read_scores(&dir.join("diversity.csv"))?;
    json_out(&dir.join("report.json"), &diversity_change_report(&scores, c.alpha)?)?;

    let amb = read_ambiguities(&dir.join("ambiguity.csv"))?;
    let histories = read_histories(&dir.join("histories.csv"))?;
    let scored: std::collections::BTreeSet<&str> = scores.iter().map(|s| s.user_id.as_str()).collect();
    let pairs: Vec<corpus::BlockPair> = read_blocks(&dir.join("blocks.csv"))?
        .into_iter()
        .filter(|p| scored.contains(p.user_id.as_str()))
        .collect();
    let max_amb = user_max_ambiguity(&histories, &pairs, &amb)?;
    let split = split_by_max_ambiguity(&max_amb, c.group_size)?;
    let delta = diversity::deltas(&scores, c.group_metric)?;
    json_out(
        &dir.join("ambiguity_report.json"),
        &ambiguity_group_report(&split, &delta, c.group_metric, c.alpha)?,
    )
}
