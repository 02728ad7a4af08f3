//! File-based stage runner behind the command-line tool.
//!
//! Every stage reads its inputs from the output directory (plus any
//! external files named in the config), writes its artifacts into
//! `<out>/<stage>/` and records a `manifest.json` next to them.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bicm::{fit_bicm, BicmModel, FitOptions, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::community::{
    label_propagation, louvain_with_restarts, read_partition_csv, Partition, PartitionSummary, DEFAULT_MAX_SWEEPS,
    DEFAULT_RESOLUTION, DEFAULT_RESTARTS,
};
use crate::error::{Error, Result};
use crate::graph::{build_bipartite, build_retweet_network};
use crate::pipeline::{
    aggregate_reports, bipartite_records, compute_stats, decile_bot_classification, filter_tweets,
    read_bot_scores_csv, read_edges_csv, read_labels_csv, read_states_csv, read_tweets_jsonl, read_url_map_csv,
    retweet_edges, retweet_records, select_population, BotClass, BotPopulation, BotScoreRecord,
    DecileClassification, FilterCounts, FilterOrder, KeptTweet, ReportContext, StateSpec, UrlMap,
};
use crate::projection::{validate_projection_with, Correction, ValidatedProjection, ValidationOptions};

pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Fit,
    Project,
    Communities,
    Propagate,
    Classify,
    Report,
    Stats,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Fit,
        Stage::Project,
        Stage::Communities,
        Stage::Propagate,
        Stage::Classify,
        Stage::Report,
        Stage::Stats,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Fit => "fit",
            Stage::Project => "project",
            Stage::Communities => "communities",
            Stage::Propagate => "propagate",
            Stage::Classify => "classify",
            Stage::Report => "report",
            Stage::Stats => "stats",
        }
    }

    /// Stages whose artifacts this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Fit => &[Stage::Ingest],
            Stage::Project => &[Stage::Fit],
            Stage::Communities => &[Stage::Project],
            Stage::Propagate => &[Stage::Ingest, Stage::Project, Stage::Communities],
            Stage::Classify => &[Stage::Propagate],
            Stage::Report | Stage::Stats => &[Stage::Ingest, Stage::Propagate, Stage::Classify],
        }
    }
}

/// Which Louvain labels seed the propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedScope {
    /// Verified users with at least one validated link.
    #[default]
    Linked,
    /// Every verified user of the projection, isolated ones as singletons.
    All,
}

impl std::str::FromStr for SeedScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linked" => Ok(SeedScope::Linked),
            "all" => Ok(SeedScope::All),
            _ => Err(Error::invalid(format!("unknown seed scope {s:?} (expected linked or all)"))),
        }
    }
}

/// Every setting a stage can depend on. The whole struct is snapshotted into
/// each manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub out: PathBuf,
    pub tweets: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub states: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub bot_scores: Option<PathBuf>,
    pub url_map: Option<PathBuf>,
    pub lang: String,
    pub filter_order: FilterOrder,
    pub tol: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub correction: Correction,
    pub resolution: f64,
    pub restarts: usize,
    pub seed: u64,
    pub seed_scope: SeedScope,
    pub min_component_size: usize,
    pub max_sweeps: usize,
    pub bot_population: BotPopulation,
    /// Largest communities (by tweets) compared in the stats stage.
    pub top_communities: usize,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunConfig {
            out: out.into(),
            tweets: None,
            edges: None,
            states: None,
            labels: None,
            bot_scores: None,
            url_map: None,
            lang: "en".into(),
            filter_order: FilterOrder::LanguageFirst,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            alpha: crate::projection::DEFAULT_ALPHA,
            correction: Correction::Fdr,
            resolution: DEFAULT_RESOLUTION,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
            seed_scope: SeedScope::Linked,
            min_component_size: 2,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            bot_population: BotPopulation::Validated,
            top_communities: 2,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: Stage,
    pub library_version: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub timings_ms: BTreeMap<String, f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

/// Exclusive claim on an output directory, released on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::invalid(format!(
                "{} is locked by another run (delete {} if that run is gone)",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Bookkeeping for one stage run.
struct StageRun<'a> {
    cfg: &'a RunConfig,
    stage: Stage,
    dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<(String, Vec<u8>)>,
    seeds: BTreeMap<String, u64>,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl<'a> StageRun<'a> {
    fn new(cfg: &'a RunConfig, stage: Stage) -> Self {
        StageRun {
            cfg,
            stage,
            dir: cfg.out.join(stage.name()),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            timings: BTreeMap::new(),
            clock: Instant::now(),
        }
    }

    fn lap(&mut self, step: &str) {
        self.timings.insert(step.to_owned(), self.clock.elapsed().as_secs_f64() * 1e3);
        self.clock = Instant::now();
    }

    fn read_bytes(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    /// Reads an artifact produced by `from`.
    fn artifact(&mut self, from: Stage, name: &str) -> Result<(Vec<u8>, String)> {
        let path = self.cfg.out.join(from.name()).join(name);
        if !path.is_file() {
            return Err(Error::MissingArtifact { path: path.display().to_string(), stage: from.name().into() });
        }
        let bytes = self.read_bytes(&path)?;
        Ok((bytes, path.display().to_string()))
    }

    fn external(&mut self, path: &Option<PathBuf>, flag: &str) -> Result<(Vec<u8>, String)> {
        let Some(path) = path else {
            return Err(Error::invalid(format!("the {} stage needs --{flag}", self.stage.name())));
        };
        let bytes = self.read_bytes(path)?;
        Ok((bytes, path.display().to_string()))
    }

    fn emit(&mut self, name: &str, bytes: Vec<u8>) {
        self.outputs.push((name.to_owned(), bytes));
    }

    fn emit_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        let b = to_json(v)?;
        self.emit(name, b);
        Ok(())
    }

    /// Replaces the stage directory contents with the collected outputs and
    /// the manifest.
    fn commit(mut self) -> Result<RunManifest> {
        self.lap("compute");
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let keep: Vec<&str> = self.outputs.iter().map(|o| o.0.as_str()).chain([MANIFEST]).collect();
        for entry in fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.path().is_file() && !keep.contains(&name.as_str()) {
                fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            }
        }
        let mut outputs = Vec::new();
        for (name, bytes) in &self.outputs {
            write_atomic(&self.dir.join(name), bytes)?;
            outputs.push(FileDigest { path: name.clone(), sha256: sha256_hex(bytes) });
        }
        self.lap("write");
        let manifest = RunManifest {
            stage: self.stage,
            library_version: env!("CARGO_PKG_VERSION").into(),
            config: self.cfg.clone(),
            seeds: self.seeds,
            inputs: self.inputs,
            outputs,
            timings_ms: self.timings,
        };
        write_atomic(&self.dir.join(MANIFEST), &to_json(&manifest)?)?;
        Ok(manifest)
    }
}

fn schema_at(path: &str, e: Error) -> Error {
    match e {
        Error::Csv(c) => {
            let row = c.position().map_or(0, |p| p.record() as usize);
            Error::Schema { path: path.into(), row, message: c.to_string() }
        }
        Error::Json(j) => Error::Schema { path: path.into(), row: j.line(), message: j.to_string() },
        Error::Schema { row, message, .. } => Error::Schema { path: path.into(), row, message },
        other => other,
    }
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut b = Vec::new();
    f(&mut b)?;
    Ok(b)
}

fn read_kept_tweets(bytes: &[u8], path: &str) -> Result<Vec<KeptTweet>> {
    let mut out = Vec::new();
    for (k, line) in bytes.split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        out.push(serde_json::from_slice(line).map_err(|e| Error::Schema {
            path: path.into(),
            row: k + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn read_bipartite_csv(bytes: &[u8], path: &str) -> Result<Vec<(String, String)>> {
    #[derive(Deserialize)]
    struct Row {
        verified_id: String,
        unverified_id: String,
    }
    let mut out = Vec::new();
    for (k, r) in csv::Reader::from_reader(bytes).deserialize::<Row>().enumerate() {
        let r = r.map_err(|e| Error::Schema { path: path.into(), row: k + 1, message: e.to_string() })?;
        out.push((r.verified_id, r.unverified_id));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IngestSummary {
    filtering: FilterCounts,
    retweet_edges: usize,
    edges_source: String,
}

fn ingest(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = StageRun::new(cfg, Stage::Ingest);
    if cfg.tweets.is_none() && cfg.edges.is_none() {
        return Err(Error::invalid("the ingest stage needs --tweets, --edges or both"));
    }
    let (kept, filtering, states) = match &cfg.tweets {
        Some(_) => {
            let (sb, sp) = run.external(&cfg.states, "states")?;
            let states = read_states_csv(&sb[..], &sp)?;
            let (tb, tp) = run.external(&cfg.tweets, "tweets")?;
            let tweets = read_tweets_jsonl(BufReader::new(&tb[..]), &tp)?;
            let (kept, counts) = filter_tweets(tweets, &states, &cfg.lang, cfg.filter_order)?;
            (kept, counts, states)
        }
        None => (
            Vec::new(),
            FilterCounts { language: cfg.lang.clone(), order: cfg.filter_order, ..Default::default() },
            Vec::new(),
        ),
    };
    let (edges, source) = match &cfg.edges {
        Some(_) => {
            let (eb, ep) = run.external(&cfg.edges, "edges")?;
            (read_edges_csv(&eb[..], &ep)?, ep)
        }
        None => {
            let plain: Vec<_> = kept.iter().map(|k| k.tweet.clone()).collect();
            (retweet_edges(&plain), "kept tweets".to_owned())
        }
    };
    log::info!(
        "ingest: {} of {} tweets kept, {} retweet edges",
        filtering.kept,
        filtering.input,
        edges.len()
    );

    let mut tweets_jsonl = Vec::new();
    for k in &kept {
        serde_json::to_writer(&mut tweets_jsonl, k)?;
        tweets_jsonl.push(b'\n');
    }
    run.emit("tweets.jsonl", tweets_jsonl);
    run.emit("edges.csv", csv_bytes(|b| crate::pipeline::write_edges_csv(b, &edges))?);
    run.emit_json("states.json", &states)?;
    run.emit_json("summary.json", &IngestSummary { filtering, retweet_edges: edges.len(), edges_source: source })?;
    run.commit()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitSummary {
    verified: usize,
    unverified: usize,
    edges: usize,
    fit_residual: f64,
}

fn fit(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = StageRun::new(cfg, Stage::Fit);
    let (eb, ep) = run.artifact(Stage::Ingest, "edges.csv")?;
    let edges = read_edges_csv(&eb[..], &ep)?;
    let pairs = bipartite_records(&edges);
    let g = build_bipartite(pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())))?;
    run.lap("load");
    let model = fit_bicm(&g.degree_sequence(), FitOptions { tol: cfg.tol, max_iter: cfg.max_iter, group_degrees: true })?;
    log::info!(
        "fit: {}x{} bipartite graph, {} edges, residual {:.3e}",
        g.top_len(),
        g.bottom_len(),
        g.edge_count(),
        model.fit_residual()
    );
    let bip = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["verified_id", "unverified_id"])?;
        for (a, c) in &pairs {
            w.write_record([a, c])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    })?;
    run.emit("bipartite.csv", bip);
    run.emit_json("model.json", &model)?;
    run.emit_json(
        "summary.json",
        &FitSummary {
            verified: g.top_len(),
            unverified: g.bottom_len(),
            edges: g.edge_count(),
            fit_residual: model.fit_residual(),
        },
    )?;
    run.commit()
}

fn project(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = StageRun::new(cfg, Stage::Project);
    let (bb, bp) = run.artifact(Stage::Fit, "bipartite.csv")?;
    let g = build_bipartite(read_bipartite_csv(&bb, &bp)?)?;
    let (mb, mp) = run.artifact(Stage::Fit, "model.json")?;
    let model: BicmModel = serde_json::from_slice(&mb).map_err(|e| schema_at(&mp, e.into()))?;
    run.lap("load");
    let opts = ValidationOptions { alpha: cfg.alpha, correction: cfg.correction, ..Default::default() };
    let proj = validate_projection_with(&g, &model, &opts)?;
    log::info!(
        "project: {} of {} tested pairs validated",
        proj.edges.len(),
        proj.significance.hypotheses
    );
    run.emit("projection.csv", csv_bytes(|b| proj.write_csv(b))?);
    run.emit_json("projection.json", &proj)?;
    run.commit()
}

fn communities(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = StageRun::new(cfg, Stage::Communities);
    let (pb, pp) = run.artifact(Stage::Project, "projection.json")?;
    let proj: ValidatedProjection = serde_json::from_slice(&pb).map_err(|e| schema_at(&pp, e.into()))?;
    run.lap("load");
    let part = louvain_with_restarts(&proj.to_graph(), cfg.resolution, cfg.seed, cfg.restarts)?;
    run.seeds.insert("louvain".into(), cfg.seed);
    log::info!(
        "communities: {} communities, modularity {:.4}",
        part.summary().communities.len(),
        part.modularity().unwrap_or(0.0)
    );
    run.emit("partition.csv", csv_bytes(|b| part.write_csv(b))?);
    run.emit_json("summary.json", &part.summary())?;
    run.commit()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PropagateSummary {
    partition: PartitionSummary,
    seed_scope: SeedScope,
    seeds: usize,
    /// Seeds outside the retained components, left out of the propagation.
    seeds_dropped: Vec<String>,
    min_component_size: usize,
    /// Sizes of the weakly connected components before filtering.
    component_sizes: Vec<usize>,
    nodes_removed: usize,
    dropped_self_loops: usize,
    rejected_rows: usize,
}

fn propagate(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = StageRun::new(cfg, Stage::Propagate);
    let (cb, _) = run.artifact(Stage::Communities, "partition.csv")?;
    let louvain = read_partition_csv(&cb[..])?;
    let (eb, ep) = run.artifact(Stage::Ingest, "edges.csv")?;
    let edges = read_edges_csv(&eb[..], &ep)?;
    let seeds_all: BTreeMap<String, u32> = match cfg.seed_scope {
        SeedScope::All => louvain.assignments(),
        SeedScope::Linked => {
            let (pb, pp) = run.artifact(Stage::Project, "projection.json")?;
            let proj: ValidatedProjection = serde_json::from_slice(&pb).map_err(|e| schema_at(&pp, e.into()))?;
            let g = proj.to_graph();
            (0..g.node_count())
                .filter(|&u| g.degree(u) > 0)
                .filter_map(|u| louvain.label_of(&g.nodes()[u]).map(|l| (g.nodes()[u].clone(), l)))
                .collect()
        }
    };
    let full = build_retweet_network(retweet_records(&edges));
    let (_, component_sizes) = full.components();
    let net = full.retain_components(cfg.min_component_size);
    run.lap("load");
    let (seeds, dropped): (BTreeMap<String, u32>, BTreeMap<String, u32>) =
        seeds_all.into_iter().partition(|(id, _)| net.index_of(id).is_some());
    if !dropped.is_empty() {
        log::warn!("{} seed(s) fall outside the retained components", dropped.len());
    }
    if seeds.is_empty() {
        return Err(Error::invalid(format!(
            "no community seeds to propagate (seed scope {:?}); the validated projection may have no links, \
             try --seed-scope all",
            cfg.seed_scope
        )));
    }
    let part: Partition = label_propagation(&net, &seeds, cfg.seed, cfg.max_sweeps)?;
    run.seeds.insert("propagation".into(), cfg.seed);
    let summary = PropagateSummary {
        partition: part.summary(),
        seed_scope: cfg.seed_scope,
        seeds: seeds.len(),
        seeds_dropped: dropped.into_keys().collect(),
        min_component_size: cfg.min_component_size,
        nodes_removed: full.node_count() - net.node_count(),
        component_sizes,
        dropped_self_loops: net.dropped_self_loops(),
        rejected_rows: net.rejected_rows(),
    };
    log::info!(
        "propagate: {} of {} users labelled",
        summary.partition.nodes - summary.partition.unassigned,
        summary.partition.nodes
    );
    run.emit("partition.csv", csv_bytes(|b| part.write_csv(b))?);
    run.emit_json("summary.json", &summary)?;
    run.commit()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Classification {
    population: BotPopulation,
    #[serde(flatten)]
    deciles: DecileClassification,
}

fn classify(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = StageRun::new(cfg, Stage::Classify);
    let (pb, _) = run.artifact(Stage::Propagate, "partition.csv")?;
    let part = read_partition_csv(&pb[..])?;
    let (sb, sp) = run.external(&cfg.bot_scores, "bot-scores")?;
    let scores = read_bot_scores_csv(&sb[..], &sp)?;
    let population = select_population(&scores, cfg.bot_population, &part.assignments());
    let deciles = decile_bot_classification(&population)?;
    log::info!(
        "classify: {} users, {} human, {} bot",
        deciles.users,
        deciles.humans,
        deciles.bots
    );
    let table = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(["user_id", "score", "class"])?;
        for r in &population {
            w.write_record([r.user_id.as_str(), &r.score.to_string(), deciles.class_of(&r.user_id).as_str()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    })?;
    run.emit("bot_scores.csv", table);
    run.emit_json("classification.json", &Classification { population: cfg.bot_population, deciles })?;
    run.commit()
}

/// Inputs shared by the report and stats stages.
struct Analysis {
    tweets: Vec<KeptTweet>,
    filtering: FilterCounts,
    states: Vec<StateSpec>,
    communities: BTreeMap<String, u32>,
    labels: crate::pipeline::DomainLabels,
    url_map: UrlMap,
    bots: DecileClassification,
    scores: Vec<BotScoreRecord>,
}

fn load_analysis(run: &mut StageRun) -> Result<Analysis> {
    let cfg = run.cfg;
    let (tb, tp) = run.artifact(Stage::Ingest, "tweets.jsonl")?;
    let tweets = read_kept_tweets(&tb, &tp)?;
    let (sb, sp) = run.artifact(Stage::Ingest, "summary.json")?;
    let summary: IngestSummary = serde_json::from_slice(&sb).map_err(|e| schema_at(&sp, e.into()))?;
    let (stb, stp) = run.artifact(Stage::Ingest, "states.json")?;
    let states: Vec<StateSpec> = serde_json::from_slice(&stb).map_err(|e| schema_at(&stp, e.into()))?;
    let (pb, _) = run.artifact(Stage::Propagate, "partition.csv")?;
    let communities = read_partition_csv(&pb[..])?.assignments();
    let (cb, cp) = run.artifact(Stage::Classify, "classification.json")?;
    let class: Classification = serde_json::from_slice(&cb).map_err(|e| schema_at(&cp, e.into()))?;
    let (bb, bp) = run.artifact(Stage::Classify, "bot_scores.csv")?;
    let scores = read_scored_classes(&bb, &bp)?;
    let (lb, lp) = run.external(&cfg.labels, "labels")?;
    let labels = read_labels_csv(&lb[..], &lp)?;
    let url_map = match &cfg.url_map {
        Some(_) => {
            let (ub, up) = run.external(&cfg.url_map, "url-map")?;
            read_url_map_csv(&ub[..], &up)?
        }
        None => UrlMap::default(),
    };
    run.lap("load");
    Ok(Analysis {
        tweets,
        filtering: summary.filtering,
        states,
        communities,
        labels,
        url_map,
        bots: class.deciles,
        scores,
    })
}

fn read_scored_classes(bytes: &[u8], path: &str) -> Result<Vec<BotScoreRecord>> {
    #[derive(Deserialize)]
    struct Row {
        user_id: String,
        score: f64,
        #[allow(dead_code)]
        class: BotClass,
    }
    let mut out = Vec::new();
    for (k, r) in csv::Reader::from_reader(bytes).deserialize::<Row>().enumerate() {
        let r = r.map_err(|e| Error::Schema { path: path.into(), row: k + 1, message: e.to_string() })?;
        out.push(BotScoreRecord { user_id: r.user_id, score: r.score });
    }
    Ok(out)
}

impl Analysis {
    fn context(&self) -> ReportContext<'_> {
        ReportContext {
            states: &self.states,
            communities: &self.communities,
            labels: &self.labels,
            url_map: &self.url_map,
            bots: &self.bots,
        }
    }
}

fn report(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = StageRun::new(cfg, Stage::Report);
    let a = load_analysis(&mut run)?;
    let tables = aggregate_reports(&a.tweets, &a.filtering, &a.context());
    for (name, bytes) in tables.csv_tables()? {
        run.emit(name, bytes);
    }
    run.emit_json("report.json", &tables)?;
    run.commit()
}

fn stats(cfg: &RunConfig) -> Result<RunManifest> {
    let mut run = StageRun::new(cfg, Stage::Stats);
    let a = load_analysis(&mut run)?;
    let s = compute_stats(&a.tweets, &a.context(), &a.scores, cfg.top_communities);
    for k in &s.skipped {
        log::warn!("stats: skipped {k}");
    }
    run.emit_json("stats.json", &s)?;
    run.commit()
}

fn dispatch(stage: Stage, cfg: &RunConfig) -> Result<RunManifest> {
    match stage {
        Stage::Ingest => ingest(cfg),
        Stage::Fit => fit(cfg),
        Stage::Project => project(cfg),
        Stage::Communities => communities(cfg),
        Stage::Propagate => propagate(cfg),
        Stage::Classify => classify(cfg),
        Stage::Report => report(cfg),
        Stage::Stats => stats(cfg),
    }
}

fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match cfg.threads {
        None => f(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("cannot build a {n}-thread pool: {e}")))?;
            pool.install(f)
        }
    }
}

/// Runs one stage under the output-directory lock.
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<RunManifest> {
    let _lock = DirLock::acquire(&cfg.out)?;
    with_pool(cfg, || dispatch(stage, cfg))
}

/// Runs `stages` in order under a single lock.
pub fn run_stages(stages: &[Stage], cfg: &RunConfig) -> Result<Vec<RunManifest>> {
    let _lock = DirLock::acquire(&cfg.out)?;
    with_pool(cfg, || stages.iter().map(|&s| dispatch(s, cfg)).collect())
}
