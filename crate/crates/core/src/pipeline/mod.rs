//! The staged annotation pipeline: ingest, render, prompt, annotate, encode,
//! propagate and evaluate. Every stage writes into its own directory under
//! the output root together with a `.stage.json` manifest holding a hash of
//! its inputs; a stage whose inputs and outputs are unchanged is skipped.

mod config;
mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{EvaluationSection, LlmSection, MockSection, PipelineConfig, PromptSection, PropagationSection};
pub use stages::{
    annotate_dir, encode_dir, evaluate_records, file_stem, ingest, load_contexts, load_dataset, load_selected,
    prompt_scenarios, propagate_dataset, render_scenarios, AnnotateSummary, Annotator, DatasetIndex, IndexEntry,
};

use crate::llm::{LlmClient, ResponseCache, UreqTransport};

pub const STAGES: [&str; 7] = ["ingest", "render", "prompt", "annotate", "encode", "propagate", "evaluate"];
const MANIFEST: &str = ".stage.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {key}: {message}")]
    Config { key: String, message: String },
    #[error("{stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("{stage}: budget exceeded: {message}")]
    Budget { stage: String, message: String },
}

impl PipelineError {
    pub fn stage(stage: &str, message: impl std::fmt::Display) -> Self {
        PipelineError::Stage { stage: stage.to_string(), message: message.to_string() }
    }

    /// Process exit code: 1 for bad configuration or input, 2 for a failed
    /// stage, 3 when the LLM budget ran out.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 1,
            PipelineError::Stage { .. } => 2,
            PipelineError::Budget { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub input_hash: String,
    /// Relative path to SHA-256 of every output file.
    pub files: BTreeMap<String, String>,
}

/// Length-framed SHA-256 over labelled inputs.
pub struct InputHasher(Sha256);

impl InputHasher {
    pub fn new(stage: &str) -> Self {
        let mut h = InputHasher(Sha256::new());
        h.bytes("stage", stage.as_bytes());
        h
    }

    pub fn bytes(&mut self, label: &str, b: &[u8]) -> &mut Self {
        for part in [label.as_bytes(), b] {
            self.0.update((part.len() as u64).to_le_bytes());
            self.0.update(part);
        }
        self
    }

    pub fn value<T: Serialize>(&mut self, label: &str, v: &T) -> &mut Self {
        let json = serde_json::to_vec(v).expect("hash input serializes");
        self.bytes(label, &json)
    }

    /// Hashes the manifest of an upstream stage directory.
    pub fn tree(&mut self, label: &str, dir: &Path) -> Result<&mut Self, PipelineError> {
        let files = hash_tree(dir).map_err(|e| PipelineError::stage(label, e))?;
        Ok(self.value(label, &files))
    }

    pub fn finish(&self) -> String {
        hex::encode(self.0.clone().finalize())
    }
}

fn sha256_hex(b: &[u8]) -> String {
    hex::encode(Sha256::digest(b))
}

/// SHA-256 of every regular file below `dir`, keyed by `/`-separated
/// relative path. Stage manifests are left out.
pub fn hash_tree(dir: &Path) -> std::io::Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            let ty = entry.file_type()?;
            if ty.is_dir() {
                walk(root, &path, out)?;
            } else if ty.is_file() && entry.file_name() != MANIFEST {
                let rel = path.strip_prefix(root).expect("walk stays below root");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(key, sha256_hex(&std::fs::read(&path)?));
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn read_manifest(dir: &Path) -> Option<StageManifest> {
    serde_json::from_slice(&std::fs::read(dir.join(MANIFEST)).ok()?).ok()
}

/// Runs `body` into a fresh `root/name` unless the recorded manifest already
/// matches `input_hash` and the files on disk. A failed stage leaves no
/// manifest behind, so the next run retries it.
pub fn run_stage(
    root: &Path,
    name: &str,
    input_hash: &str,
    body: impl FnOnce(&Path) -> Result<(), PipelineError>,
) -> Result<StageStatus, PipelineError> {
    let dir = root.join(name);
    if let Some(m) = read_manifest(&dir) {
        if m.input_hash == input_hash && hash_tree(&dir).ok().as_ref() == Some(&m.files) {
            return Ok(StageStatus::Skipped);
        }
    }
    let io = |e: std::io::Error| PipelineError::stage(name, e);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io)?;
    }
    std::fs::create_dir_all(&dir).map_err(io)?;
    body(&dir)?;
    let manifest = StageManifest { stage: name.to_string(), input_hash: input_hash.to_string(), files: hash_tree(&dir).map_err(io)? };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    std::fs::write(dir.join(MANIFEST), json).map_err(io)?;
    Ok(StageStatus::Ran)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub stages: Vec<(String, StageStatus)>,
}

/// Runs all stages in order.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    run_until(cfg, "evaluate")
}

/// Runs the stages up to and including `last`.
pub fn run_until(cfg: &PipelineConfig, last: &str) -> Result<RunSummary, PipelineError> {
    let stop = STAGES
        .iter()
        .position(|s| *s == last)
        .ok_or_else(|| PipelineError::Config { key: "stage".into(), message: format!("unknown stage '{last}'") })?;
    cfg.validate()?;
    let root = cfg.output_dir.clone();
    std::fs::create_dir_all(&root).map_err(|e| PipelineError::Config { key: "output_dir".into(), message: e.to_string() })?;
    let tmpl = cfg.template()?;
    let mut summary = RunSummary { output_dir: root.clone(), stages: Vec::new() };

    // ingest
    let files = stages::dataset_files(&cfg.dataset_dir).map_err(|e| PipelineError::stage("ingest", e))?;
    let mut h = InputHasher::new("ingest");
    h.value("thresholds", &cfg.evaluation.thresholds).value(
        "split",
        &(cfg.propagation.fraction, cfg.propagation.seed, cfg.propagation.stratified, cfg.propagation.type_ratio),
    );
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| PipelineError::stage("ingest", e))?;
        h.bytes(&f.file_name().unwrap_or_default().to_string_lossy(), &bytes);
    }
    let st = run_stage(&root, "ingest", &h.finish(), |dir| {
        let index = ingest(&cfg.dataset_dir, &cfg.evaluation.thresholds, &cfg.propagation)?;
        stages::write_json(&dir.join("index.json"), &index.entries, "ingest")?;
        stages::write_json(&dir.join("split.json"), &index.split, "ingest")
    })?;
    summary.stages.push(("ingest".into(), st));
    if stop == 0 {
        return Ok(summary);
    }

    let index = stages::read_index(&root.join("ingest"))?;
    let t2_ids: Vec<String> = index.split.t2.iter().map(|k| k.scenario_id.clone()).collect();
    let ingest_hash = |h: &mut InputHasher| h.tree("ingest", &root.join("ingest")).map(|_| ());

    // render
    let mut h = InputHasher::new("render");
    ingest_hash(&mut h)?;
    h.value("render", &cfg.render);
    let st = run_stage(&root, "render", &h.finish(), |dir| {
        let t2 = load_selected(&cfg.dataset_dir, &index, &t2_ids, "render")?;
        render_scenarios(&t2, &cfg.render, dir).map(|_| ())
    })?;
    summary.stages.push(("render".into(), st));
    if stop == 1 {
        return Ok(summary);
    }

    // prompt
    let mut h = InputHasher::new("prompt");
    ingest_hash(&mut h)?;
    h.value("render", &cfg.render).value("prompt", &cfg.prompt.max_neighbors).value("lane", &cfg.prompt.lane).value("vocab", &cfg.vocab);
    h.bytes("template", format!("{tmpl:?}").as_bytes());
    let st = run_stage(&root, "prompt", &h.finish(), |dir| {
        let t2 = load_selected(&cfg.dataset_dir, &index, &t2_ids, "prompt")?;
        prompt_scenarios(&t2, &tmpl, &cfg.render, dir).map(|_| ())
    })?;
    summary.stages.push(("prompt".into(), st));
    if stop == 2 {
        return Ok(summary);
    }

    // annotate
    let mut h = InputHasher::new("annotate");
    h.tree("render", &root.join("render"))?.tree("prompt", &root.join("prompt"))?;
    h.value("vocab", &cfg.vocab).value("endpoint", &cfg.llm.endpoint).value("mock", &cfg.mock.enabled);
    if cfg.mock.enabled {
        ingest_hash(&mut h)?;
        h.value("noise", &cfg.noise()).value("render_cfg", &cfg.render);
    }
    let st = run_stage(&root, "annotate", &h.finish(), |dir| {
        let t2 = load_selected(&cfg.dataset_dir, &index, &t2_ids, "annotate")?;
        let client;
        let annotator = if cfg.mock.enabled {
            Annotator::Mock { scenarios: &t2, noise: cfg.noise(), render: &cfg.render }
        } else {
            client = LlmClient::new(cfg.llm.endpoint.clone(), cfg.vocab.clone(), Box::new(UreqTransport::new()))
                .with_cache(ResponseCache::new(cfg.cache_dir()));
            Annotator::Live(&client)
        };
        annotate_dir(&t2_ids, &root.join("prompt"), &root.join("render"), dir, &annotator, &cfg.llm.endpoint, &cfg.vocab)
            .map(|_| ())
    })?;
    summary.stages.push(("annotate".into(), st));
    if stop == 3 {
        return Ok(summary);
    }

    // encode
    let mut h = InputHasher::new("encode");
    h.tree("annotate", &root.join("annotate"))?.value("vocab", &cfg.vocab);
    let st = run_stage(&root, "encode", &h.finish(), |dir| encode_dir(&root.join("annotate"), dir, &cfg.vocab).map(|_| ()))?;
    summary.stages.push(("encode".into(), st));
    if stop == 4 {
        return Ok(summary);
    }

    // propagate
    let mut h = InputHasher::new("propagate");
    ingest_hash(&mut h)?;
    h.tree("annotate", &root.join("annotate"))?.value("method", &cfg.propagation.method).value("features", &cfg.propagation.features);
    let st = run_stage(&root, "propagate", &h.finish(), |dir| {
        let all = load_dataset(&cfg.dataset_dir).map_err(|e| PipelineError::stage("propagate", e))?;
        let contexts = load_contexts(&root.join("annotate"))?;
        let records = propagate_dataset(&all, &index.split, &contexts, &cfg.propagation)?;
        crate::propagation::write_jsonl(&dir.join("augmented.jsonl"), &records).map_err(|e| PipelineError::stage("propagate", e))
    })?;
    summary.stages.push(("propagate".into(), st));
    if stop == 5 {
        return Ok(summary);
    }

    // evaluate
    let mut h = InputHasher::new("evaluate");
    ingest_hash(&mut h)?;
    h.tree("propagate", &root.join("propagate"))?.value("evaluation", &cfg.evaluation);
    let st = run_stage(&root, "evaluate", &h.finish(), |dir| {
        let all = load_dataset(&cfg.dataset_dir).map_err(|e| PipelineError::stage("evaluate", e))?;
        let records = crate::propagation::read_jsonl(&root.join("propagate/augmented.jsonl"))
            .map_err(|e| PipelineError::stage("evaluate", e))?;
        evaluate_records(&records, &all, &cfg.evaluation, dir).map(|_| ())
    })?;
    summary.stages.push(("evaluate".into(), st));
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_skips_when_unchanged_and_reruns_when_touched() {
        let root = tempfile::tempdir().unwrap();
        let mut calls = 0;
        let mut go = |hash: &str| {
            run_stage(root.path(), "s", hash, |d| {
                calls += 1;
                std::fs::write(d.join("a.txt"), b"x").map_err(|e| PipelineError::stage("s", e))
            })
            .unwrap()
        };
        assert_eq!(go("h1"), StageStatus::Ran);
        assert_eq!(go("h1"), StageStatus::Skipped);
        assert_eq!(go("h2"), StageStatus::Ran);
        std::fs::write(root.path().join("s/a.txt"), b"y").unwrap();
        assert_eq!(go("h2"), StageStatus::Ran);
        drop(go);
        assert_eq!(calls, 3);
    }

    #[test]
    fn failed_stage_leaves_no_manifest() {
        let root = tempfile::tempdir().unwrap();
        let r = run_stage(root.path(), "s", "h", |_| Err(PipelineError::stage("s", "boom")));
        assert_eq!(r.unwrap_err().exit_code(), 2);
        assert!(!root.path().join("s").join(MANIFEST).exists());
    }

    #[test]
    fn hasher_frames_inputs() {
        let mut a = InputHasher::new("x");
        a.bytes("ab", b"c");
        let mut b = InputHasher::new("x");
        b.bytes("a", b"bc");
        assert_ne!(a.finish(), b.finish());
    }
}
