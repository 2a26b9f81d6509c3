//! Stage orchestration over on-disk artifacts: sample, detect, evolve,
//! evaluate. Every stage reads its inputs from files and records its outputs
//! in the run manifest.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::detection::{detect_block, DetectionError, Telemetry};
use crate::embedding::{CachedEmbedder, EmbeddingProvider, HashEmbedder, HttpEmbedder};
use crate::evolution::{run_evolution, EvolutionError, EvolutionTimeline};
use crate::kb::{KbError, KnowledgeBase};
use crate::llm::{ChatProvider, LlmError, MockOracle, OpenAiChat};
use crate::metrics::{
    cv_coherence, topic_diversity, AgreementScores, EvaluationReport, MetricsError, TopicScores,
    TopicSet,
};
use crate::model::{DatasetError, MessageBlock};
use crate::sampling::{sample_block, SamplingError};
use crate::synth::SynthError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
/// Offending ids listed when labels and gold disagree on the item set.
const MAX_LISTED_OFFENDERS: usize = 10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("provider: {0}")]
    Provider(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("labels and gold disagree on {count} ids, first: {}", .first.join(", "))]
    IdMismatch { count: usize, first: Vec<String> },
    #[error("block {block} failed: {quarantined} of {anchors} anchors quarantined")]
    BlockFailed {
        block: usize,
        quarantined: usize,
        anchors: usize,
    },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read_file(path)?).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Chat backend selection.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderSpec {
    /// Gold-label oracle: `mock-oracle:<seed>[:<noise>]`.
    MockOracle { seed: u64, noise: f64 },
    /// OpenAI-compatible endpoint from the chat configuration: `openai`.
    OpenAi,
}

impl FromStr for ProviderSpec {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |m: &str| PipelineError::Provider(format!("`{s}`: {m}"));
        if s == "openai" {
            return Ok(ProviderSpec::OpenAi);
        }
        let rest = s
            .strip_prefix("mock-oracle:")
            .ok_or_else(|| bad("expected `openai` or `mock-oracle:<seed>[:<noise>]`"))?;
        let (seed, noise) = match rest.split_once(':') {
            Some((seed, noise)) => (
                seed,
                noise.parse::<f64>().map_err(|_| bad("bad noise rate"))?,
            ),
            None => (rest, 0.0),
        };
        let seed = seed.parse::<u64>().map_err(|_| bad("bad seed"))?;
        if !(0.0..=1.0).contains(&noise) {
            return Err(bad("noise rate must lie in [0, 1]"));
        }
        Ok(ProviderSpec::MockOracle { seed, noise })
    }
}

impl std::fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProviderSpec::MockOracle { seed, noise } => write!(f, "mock-oracle:{seed}:{noise}"),
            ProviderSpec::OpenAi => f.write_str("openai"),
        }
    }
}

/// Embedder named by the configuration (`hash` or `http`).
pub fn build_embedder(
    config: &PipelineConfig,
) -> Result<Box<dyn EmbeddingProvider>, PipelineError> {
    match config.embedding.provider.as_str() {
        "hash" => Ok(Box::new(HashEmbedder::new(config.embedding.hash_dim))),
        "http" => Ok(Box::new(CachedEmbedder::new(HttpEmbedder::from_config(
            &config.embedding,
        )))),
        other => Err(PipelineError::Provider(format!(
            "unknown embedding provider `{other}` (expected hash or http)"
        ))),
    }
}

/// Chat provider for `spec`. The oracle needs gold labels in the dataset.
pub fn build_chat(
    spec: &ProviderSpec,
    config: &PipelineConfig,
    blocks: &[MessageBlock],
) -> Result<Box<dyn ChatProvider>, PipelineError> {
    match spec {
        ProviderSpec::MockOracle { seed, noise } => {
            let gold: HashMap<String, String> = blocks
                .iter()
                .flat_map(|b| &b.messages)
                .filter_map(|m| Some((m.id.clone(), m.gold_label.clone()?)))
                .collect();
            if gold.is_empty() {
                return Err(PipelineError::Provider(
                    "mock oracle needs gold labels and the dataset has none".into(),
                ));
            }
            Ok(Box::new(MockOracle::new(gold, *noise, *seed)?))
        }
        ProviderSpec::OpenAi => {
            if config.chat.base_url.trim().is_empty() || config.chat.model.trim().is_empty() {
                return Err(PipelineError::Provider(
                    "chat base_url and model must be set".into(),
                ));
            }
            Ok(Box::new(OpenAiChat::from_config(&config.chat)))
        }
    }
}

/// SHA-256 prefix of the dataset bytes plus its file name.
pub fn dataset_id(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let digest = Sha256::digest(&bytes);
    let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
    let name = path
        .file_name()
        .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    Ok(format!("{name}@{hex}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    pub telemetry: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub dataset: Option<String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl RunManifest {
    pub fn load_or_new(dir: &Path, config: &PipelineConfig) -> Result<Self, PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let fresh = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            config_hash: config.hash(),
            config: config.clone(),
            dataset: None,
            stages: BTreeMap::new(),
        };
        if !path.exists() {
            return Ok(fresh);
        }
        let existing: RunManifest = read_json(&path)?;
        if existing.config_hash != fresh.config_hash {
            log::info!("configuration changed; starting a new manifest");
            return Ok(fresh);
        }
        Ok(existing)
    }

    /// Record a stage after checking that every listed output exists.
    pub fn record(
        &mut self,
        dir: &Path,
        stage: &str,
        outputs: Vec<String>,
        telemetry: serde_json::Value,
    ) -> Result<(), PipelineError> {
        if let Some(missing) = outputs.iter().find(|o| !dir.join(o).exists()) {
            return Err(PipelineError::MissingArtifact(missing.clone()));
        }
        self.stages
            .insert(stage.to_string(), StageRecord { outputs, telemetry });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        write_file(&dir.join(MANIFEST_FILE), &to_json_pretty(self))
    }
}

pub fn anchors_file(block: usize) -> String {
    format!("block-{block:04}.anchors.jsonl")
}

pub fn labels_file(block: usize) -> String {
    format!("block-{block:04}.labels.jsonl")
}

pub fn snapshot_file(block: usize) -> String {
    format!("block-{block:04}.kb.json")
}

pub fn telemetry_file(block: usize) -> String {
    format!("block-{block:04}.telemetry.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub block: usize,
    pub messages: usize,
    pub anchors: usize,
    pub compression_ratio: f64,
}

/// Write anchor and key-sample dumps for every block into `dir/sample`.
pub fn run_sample(
    blocks: &[MessageBlock],
    config: &PipelineConfig,
    embedder: &dyn EmbeddingProvider,
    dir: &Path,
) -> Result<Vec<SampleSummary>, PipelineError> {
    let mut summaries = Vec::new();
    let mut outputs = Vec::new();
    for block in blocks {
        let sampled = sample_block(block, embedder, config)?;
        let rel = format!("sample/{}", anchors_file(block.index));
        write_file(&dir.join(&rel), &sampled.dump_jsonl())?;
        outputs.push(rel);
        summaries.push(SampleSummary {
            block: block.index,
            messages: block.len(),
            anchors: sampled.anchors.len(),
            compression_ratio: sampled.compression_ratio(),
        });
    }
    let mut manifest = RunManifest::load_or_new(dir, config)?;
    let telemetry = serde_json::json!({ "tau": config.tau, "blocks": summaries });
    manifest.record(dir, "sample", outputs, telemetry)?;
    manifest.write(dir)?;
    Ok(summaries)
}

#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    /// Skip blocks whose outputs exist and were produced under the same
    /// configuration and provider.
    pub resume: bool,
    /// Worker threads; blocks are independent since each day starts with an
    /// empty knowledge base.
    pub parallel_days: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTelemetry {
    pub block: usize,
    pub config_hash: String,
    pub provider: String,
    pub messages: usize,
    pub failed: bool,
    #[serde(flatten)]
    pub telemetry: Telemetry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub blocks: Vec<BlockTelemetry>,
    pub skipped: Vec<usize>,
    pub messages: usize,
    pub detector_calls: usize,
    pub evaluator_calls: usize,
}

fn can_resume(out: &Path, block: usize, hash: &str, provider: &str) -> Option<BlockTelemetry> {
    let needed = [
        labels_file(block),
        snapshot_file(block),
        anchors_file(block),
    ];
    if !needed.iter().all(|f| out.join(f).exists()) {
        return None;
    }
    let t: BlockTelemetry = read_json(&out.join(telemetry_file(block))).ok()?;
    (t.config_hash == hash && t.provider == provider).then_some(t)
}

fn detect_one(
    block: &MessageBlock,
    config: &PipelineConfig,
    embedder: &dyn EmbeddingProvider,
    chat: &dyn ChatProvider,
    out: &Path,
    provider: &str,
) -> Result<BlockTelemetry, PipelineError> {
    let sampled = sample_block(block, embedder, config)?;
    let outcome = detect_block(block, &sampled, config, embedder, chat)?;
    write_file(&out.join(anchors_file(block.index)), &sampled.dump_jsonl())?;
    write_file(&out.join(labels_file(block.index)), &outcome.labels_jsonl())?;
    outcome.kb.snapshot(&out.join(snapshot_file(block.index)))?;
    let t = BlockTelemetry {
        block: block.index,
        config_hash: config.hash(),
        provider: provider.to_string(),
        messages: block.len(),
        failed: outcome.failed,
        telemetry: outcome.telemetry,
    };
    write_file(&out.join(telemetry_file(block.index)), &to_json_pretty(&t))?;
    Ok(t)
}

/// Sample and detect every block, writing labels, snapshots and telemetry
/// into `dir/detect`. A block marked failed still has its outputs written.
pub fn run_detect(
    blocks: &[MessageBlock],
    config: &PipelineConfig,
    embedder: &dyn EmbeddingProvider,
    chat: &dyn ChatProvider,
    provider: &ProviderSpec,
    dir: &Path,
    options: &DetectOptions,
) -> Result<DetectSummary, PipelineError> {
    let out = dir.join("detect");
    let hash = config.hash();
    let provider = provider.to_string();
    let mut results: Vec<Option<Result<BlockTelemetry, PipelineError>>> = Vec::new();
    let mut skipped = Vec::new();
    let mut pending = Vec::new();
    for (i, block) in blocks.iter().enumerate() {
        match options
            .resume
            .then(|| can_resume(&out, block.index, &hash, &provider))
            .flatten()
        {
            Some(t) => {
                skipped.push(block.index);
                results.push(Some(Ok(t)));
            }
            None => {
                pending.push(i);
                results.push(None);
            }
        }
    }

    let workers = options.parallel_days.max(1).min(pending.len().max(1));
    if workers <= 1 {
        for &i in &pending {
            results[i] = Some(detect_one(
                &blocks[i], config, embedder, chat, &out, &provider,
            ));
        }
    } else {
        let next = AtomicUsize::new(0);
        let slots = Mutex::new(&mut results);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(k) else { break };
                    let r = detect_one(&blocks[i], config, embedder, chat, &out, &provider);
                    slots.lock().expect("result slots")[i] = Some(r);
                });
            }
        });
    }

    let mut done = Vec::with_capacity(blocks.len());
    for r in results {
        done.push(r.expect("every block processed")?);
    }
    let mut outputs = Vec::new();
    for t in &done {
        for f in [
            labels_file(t.block),
            snapshot_file(t.block),
            anchors_file(t.block),
            telemetry_file(t.block),
        ] {
            outputs.push(format!("detect/{f}"));
        }
    }
    let summary = DetectSummary {
        skipped,
        messages: done.iter().map(|t| t.messages).sum(),
        detector_calls: done.iter().map(|t| t.telemetry.detector_calls).sum(),
        evaluator_calls: done.iter().map(|t| t.telemetry.evaluator_calls).sum(),
        blocks: done,
    };
    let mut manifest = RunManifest::load_or_new(dir, config)?;
    manifest.record(
        dir,
        "detect",
        outputs,
        serde_json::to_value(&summary).expect("summary serializes"),
    )?;
    manifest.write(dir)?;
    if let Some(t) = summary.blocks.iter().find(|t| t.failed) {
        return Err(PipelineError::BlockFailed {
            block: t.block,
            quarantined: t.telemetry.quarantined,
            anchors: t.telemetry.anchors,
        });
    }
    Ok(summary)
}

/// Files in `dir` named `block-NNNN<suffix>`, keyed by block number.
fn block_files(dir: &Path, suffix: &str) -> Result<BTreeMap<usize, PathBuf>, PipelineError> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(num) = name
            .strip_prefix("block-")
            .and_then(|r| r.strip_suffix(suffix))
        else {
            continue;
        };
        if let Ok(n) = num.parse::<usize>() {
            out.insert(n, path);
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct LabelRow {
    id: String,
    event: String,
}

/// `(message id, event)` pairs from a label file.
pub fn read_labels(path: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in read_file(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: LabelRow = serde_json::from_str(line).map_err(|e| PipelineError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((row.id, row.event));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub days: usize,
    pub aligned_ids: usize,
    pub forgotten: usize,
}

/// Align the snapshots in `snapshot_dir` across days and write the timeline
/// and stream-graph CSV into `dir/evolve`. On a failing day the partial
/// timeline is written before the error is returned.
pub fn run_evolve(
    snapshot_dir: &Path,
    config: &PipelineConfig,
    embedder: &dyn EmbeddingProvider,
    top_n: usize,
    dir: &Path,
) -> Result<EvolveSummary, PipelineError> {
    let files = block_files(snapshot_dir, ".kb.json")?;
    if files.is_empty() {
        return Err(PipelineError::MissingArtifact(format!(
            "no block-NNNN.kb.json snapshots in {}",
            snapshot_dir.display()
        )));
    }
    let snapshots = files
        .values()
        .map(|p| KnowledgeBase::load_snapshot(p))
        .collect::<Result<Vec<_>, _>>()?;
    let out = dir.join("evolve");
    let timeline: EvolutionTimeline = match run_evolution(&snapshots, embedder) {
        Ok(t) => t,
        Err(EvolutionError::Day {
            day,
            message,
            partial,
        }) => {
            write_file(&out.join("timeline.partial.json"), &partial.to_json())?;
            return Err(EvolutionError::Day {
                day,
                message,
                partial,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };

    let mut counts: BTreeMap<usize, HashMap<String, usize>> = BTreeMap::new();
    for (block, path) in block_files(snapshot_dir, ".labels.jsonl")? {
        let day = counts.entry(block).or_default();
        for (_, event) in read_labels(&path)? {
            *day.entry(event).or_insert(0) += 1;
        }
    }
    write_file(&out.join("timeline.json"), &timeline.to_json())?;
    write_file(
        &out.join("stream.csv"),
        &timeline.stream_graph_csv(&counts, top_n),
    )?;
    let summary = EvolveSummary {
        days: timeline.days.len(),
        aligned_ids: timeline.lifespans.len(),
        forgotten: timeline
            .lifespans
            .values()
            .filter(|s| s.end.is_some())
            .count(),
    };
    let mut manifest = RunManifest::load_or_new(dir, config)?;
    manifest.record(
        dir,
        "evolve",
        vec!["evolve/timeline.json".into(), "evolve/stream.csv".into()],
        serde_json::json!({ "summary": summary, "top_n": top_n }),
    )?;
    manifest.write(dir)?;
    Ok(summary)
}

/// Agreement per block from label files in `labels_dir` against the gold
/// labels of `blocks`; topic scores per day when a timeline is given.
pub fn evaluate(
    blocks: &[MessageBlock],
    labels_dir: &Path,
    timeline: Option<&Path>,
    cv_window: usize,
) -> Result<EvaluationReport, PipelineError> {
    let label_files = block_files(labels_dir, ".labels.jsonl")?;
    if label_files.is_empty() {
        return Err(PipelineError::MissingArtifact(format!(
            "no block-NNNN.labels.jsonl files in {}",
            labels_dir.display()
        )));
    }
    let by_index: HashMap<usize, &MessageBlock> = blocks.iter().map(|b| (b.index, b)).collect();
    let mut agreement = Vec::new();
    let mut offenders = Vec::new();
    for (&index, path) in &label_files {
        let labels = read_labels(path)?;
        let Some(block) = by_index.get(&index) else {
            offenders.extend(labels.into_iter().map(|(id, _)| id));
            continue;
        };
        let predicted: HashMap<&str, &str> = labels
            .iter()
            .map(|(i, e)| (i.as_str(), e.as_str()))
            .collect();
        let known: HashSet<&str> = block.messages.iter().map(|m| m.id.as_str()).collect();
        offenders.extend(
            labels
                .iter()
                .filter(|(id, _)| !known.contains(id.as_str()))
                .map(|(id, _)| id.clone()),
        );
        offenders.extend(
            block
                .messages
                .iter()
                .filter(|m| !predicted.contains_key(m.id.as_str()))
                .map(|m| m.id.clone()),
        );
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        let mut excluded = 0;
        for m in &block.messages {
            let (Some(p), Some(g)) = (predicted.get(m.id.as_str()), m.gold_label.as_ref()) else {
                excluded += usize::from(m.gold_label.is_none());
                continue;
            };
            pred.push(p.to_string());
            gold.push(g.clone());
        }
        if offenders.is_empty() && !pred.is_empty() {
            agreement.push(AgreementScores::compute(index, &pred, &gold, excluded)?);
        }
    }
    if !offenders.is_empty() {
        return Err(PipelineError::IdMismatch {
            count: offenders.len(),
            first: offenders.into_iter().take(MAX_LISTED_OFFENDERS).collect(),
        });
    }

    let mut topics = Vec::new();
    if let Some(path) = timeline {
        #[derive(Deserialize)]
        struct Doc {
            days: Vec<crate::evolution::DayRecord>,
        }
        let doc: Doc = read_json(path)?;
        for day in doc.days {
            let lists: Vec<Vec<String>> = day.events.iter().map(|e| e.keywords.clone()).collect();
            let Ok(set) = TopicSet::new(lists) else {
                continue;
            };
            let corpus: Vec<String> = by_index
                .get(&day.day)
                .map(|b| b.messages.iter().map(|m| m.text.clone()).collect())
                .unwrap_or_default();
            topics.push(TopicScores {
                day: day.day,
                topics: set.topics().len(),
                cv: cv_coherence(&set, &corpus, cv_window)?,
                td: topic_diversity(&set),
            });
        }
    }
    Ok(EvaluationReport::new(agreement, topics))
}

/// Evaluate and write `report.json` and `report.txt` into `dir`.
pub fn run_evaluate(
    blocks: &[MessageBlock],
    labels_dir: &Path,
    timeline: Option<&Path>,
    config: &PipelineConfig,
    dir: &Path,
) -> Result<EvaluationReport, PipelineError> {
    let report = evaluate(blocks, labels_dir, timeline, config.cv_window)?;
    write_file(&dir.join("report.json"), &to_json_pretty(&report))?;
    write_file(&dir.join("report.txt"), &report.to_table())?;
    let mut manifest = RunManifest::load_or_new(dir, config)?;
    manifest.record(
        dir,
        "evaluate",
        vec!["report.json".into(), "report.txt".into()],
        serde_json::to_value(&report.averages).expect("averages serialize"),
    )?;
    manifest.write(dir)?;
    Ok(report)
}

/// Human-readable summary of a run directory.
pub fn render_report(dir: &Path) -> Result<String, PipelineError> {
    let manifest: RunManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut out = format!(
        "run {}\nconfig {}\n",
        dir.display(),
        &manifest.config_hash[..16.min(manifest.config_hash.len())]
    );
    if let Some(d) = &manifest.dataset {
        out.push_str(&format!("dataset {d}\n"));
    }
    for (stage, record) in &manifest.stages {
        out.push_str(&format!(
            "stage {stage}: {} outputs\n",
            record.outputs.len()
        ));
    }
    if let Some(detect) = manifest.stages.get("detect") {
        if let Ok(s) = serde_json::from_value::<DetectSummary>(detect.telemetry.clone()) {
            out.push_str(&format!(
                "detection: {} messages, {} detector calls, {} evaluator calls\n",
                s.messages, s.detector_calls, s.evaluator_calls
            ));
        }
    }
    let report = dir.join("report.txt");
    if report.exists() {
        out.push_str(&read_file(&report)?);
    }
    Ok(out)
}
