//! Stage bodies. Each one reads and writes plain directories so it can also
//! be driven on its own.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::{encode_context, ContextVocabulary, EncodedContextRecord, TransportationContext};
use crate::evaluation::{
    confusion_heatmap, intention_accuracy, kinematic_candidates, report_json, report_text, trajectory_metrics,
    AgentPrediction, EvaluationReport, IntentionEvalResult,
};
use crate::llm::{
    mock_oracle, request_body, request_hash, Cost, EndpointConfig, LlmClient, LlmError, NoiseConfig, PromptPayload,
    QueryRecord, QueryStatus,
};
use crate::propagation::{
    encode_features, propagate, split_dataset, AgentKey, AugmentedRecord, ContextSource, DatasetItem, DatasetSplit,
    FeatureVector,
};
use crate::prompt::{compose_prompt, PromptTemplate};
use crate::raster::encode_png;
use crate::render::{render, RenderConfig};
use crate::scenario::{
    label_gt_intention, parse_scenario, AgentType, IntentionLabel, IntentionThresholds, Scenario, ScenarioError,
};

use super::config::{EvaluationSection, PropagationSection};
use super::PipelineError;

/// One ingested scenario; the ego agent is the unit of annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub scenario_id: String,
    pub file: String,
    pub sha256: String,
    pub agent_id: String,
    pub agent_type: AgentType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_intention: Option<IntentionLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub entries: Vec<IndexEntry>,
    pub split: DatasetSplit,
}

/// `*.json` files in `dir` other than dotfiles, sorted by name.
pub fn dataset_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .filter(|p| !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    files.sort();
    Ok(files)
}

fn load_file(path: &Path) -> Result<(Scenario, String), String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let s = parse_scenario(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok((s, hex::encode(Sha256::digest(&bytes))))
}

/// Parses and validates every scenario file in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Vec<Scenario>, String> {
    let files = dataset_files(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    files.par_iter().map(|f| load_file(f).map(|(s, _)| s)).collect()
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, v: &T, stage: &str) -> Result<(), PipelineError> {
    let mut json = serde_json::to_vec_pretty(v).expect("stage output serializes");
    json.push(b'\n');
    std::fs::write(path, json).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> Result<T, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", path.display())))
}

/// File name used for a scenario's artifacts.
pub fn file_stem(scenario_id: &str) -> String {
    scenario_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

/// Reads the dataset, labels each ego and splits off the annotated part.
pub fn ingest(
    dataset_dir: &Path,
    thresholds: &IntentionThresholds,
    prop: &PropagationSection,
) -> Result<DatasetIndex, PipelineError> {
    let fail = |m: String| PipelineError::stage("ingest", m);
    let files = dataset_files(dataset_dir).map_err(|e| fail(format!("{}: {e}", dataset_dir.display())))?;
    if files.is_empty() {
        return Err(fail(format!("no scenario files in {}", dataset_dir.display())));
    }
    let loaded: Vec<(Scenario, String)> = files.par_iter().map(|f| load_file(f)).collect::<Result<_, _>>().map_err(fail)?;

    let mut entries = Vec::with_capacity(loaded.len());
    let mut seen: HashMap<String, &Path> = HashMap::new();
    for ((s, sha), file) in loaded.iter().zip(&files) {
        if let Some(prev) = seen.insert(s.scenario_id.clone(), file) {
            return Err(fail(format!("scenario id '{}' appears in {} and {}", s.scenario_id, prev.display(), file.display())));
        }
        let gt_intention = match label_gt_intention(s, &s.ego_agent_id, thresholds) {
            Ok(l) => Some(l),
            Err(ScenarioError::MissingFuture(_)) => None,
            Err(e) => return Err(fail(format!("{}: {e}", file.display()))),
        };
        entries.push(IndexEntry {
            scenario_id: s.scenario_id.clone(),
            file: file.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            sha256: sha.clone(),
            agent_id: s.ego_agent_id.clone(),
            agent_type: s.ego().agent_type,
            gt_intention,
        });
    }
    let items: Vec<DatasetItem> = entries
        .iter()
        .map(|e| DatasetItem { key: AgentKey::new(&e.scenario_id, &e.agent_id), agent_type: e.agent_type })
        .collect();
    let ratio = prop.stratified.then_some(prop.type_ratio);
    let split = split_dataset(&items, prop.fraction, prop.seed, ratio).map_err(|e| fail(e.to_string()))?;
    Ok(DatasetIndex { entries, split })
}

pub(crate) fn read_index(ingest_dir: &Path) -> Result<DatasetIndex, PipelineError> {
    Ok(DatasetIndex {
        entries: read_json(&ingest_dir.join("index.json"), "ingest")?,
        split: read_json(&ingest_dir.join("split.json"), "ingest")?,
    })
}

/// Loads the scenarios named by `ids`, checking they still match the index.
pub fn load_selected(
    dataset_dir: &Path,
    index: &DatasetIndex,
    ids: &[String],
    stage: &str,
) -> Result<Vec<Scenario>, PipelineError> {
    let by_id: HashMap<&str, &IndexEntry> = index.entries.iter().map(|e| (e.scenario_id.as_str(), e)).collect();
    ids.par_iter()
        .map(|id| {
            let e = by_id.get(id.as_str()).ok_or_else(|| PipelineError::stage(stage, format!("'{id}' is not in the index")))?;
            let (s, sha) = load_file(&dataset_dir.join(&e.file)).map_err(|m| PipelineError::stage(stage, m))?;
            if sha != e.sha256 {
                return Err(PipelineError::stage(stage, format!("{} changed since ingest", e.file)));
            }
            Ok(s)
        })
        .collect()
}

/// Writes `<id>.png` for every scenario.
pub fn render_scenarios(scenarios: &[Scenario], cfg: &RenderConfig, out: &Path) -> Result<usize, PipelineError> {
    let fail = |id: &str, e: &dyn std::fmt::Display| PipelineError::stage("render", format!("{id}: {e}"));
    let pngs: Vec<(String, Vec<u8>)> = scenarios
        .par_iter()
        .map(|s| {
            let img = render(s, cfg).map_err(|e| fail(&s.scenario_id, &e))?;
            let png = encode_png(&img).map_err(|e| fail(&s.scenario_id, &e))?;
            Ok((file_stem(&s.scenario_id), png))
        })
        .collect::<Result<_, PipelineError>>()?;
    for (stem, png) in &pngs {
        let path = out.join(format!("{stem}.png"));
        std::fs::write(&path, png).map_err(|e| fail(stem, &e))?;
    }
    Ok(pngs.len())
}

/// Writes `<id>.txt` for every scenario.
pub fn prompt_scenarios(
    scenarios: &[Scenario],
    tmpl: &PromptTemplate,
    render_cfg: &RenderConfig,
    out: &Path,
) -> Result<usize, PipelineError> {
    let fail = |id: &str, e: &dyn std::fmt::Display| PipelineError::stage("prompt", format!("{id}: {e}"));
    let texts: Vec<(String, String)> = scenarios
        .par_iter()
        .map(|s| {
            let p = compose_prompt(s, tmpl, render_cfg).map_err(|e| fail(&s.scenario_id, &e))?;
            Ok((file_stem(&s.scenario_id), p.text))
        })
        .collect::<Result<_, PipelineError>>()?;
    for (stem, text) in &texts {
        std::fs::write(out.join(format!("{stem}.txt")), text).map_err(|e| fail(stem, &e))?;
    }
    Ok(texts.len())
}

pub enum Annotator<'a> {
    /// Answers from ground truth without any network traffic.
    Mock { scenarios: &'a [Scenario], noise: NoiseConfig, render: &'a RenderConfig },
    Live(&'a LlmClient),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotateSummary {
    pub ok: usize,
    pub parse_failed: usize,
    pub api_error: usize,
    pub budget_skipped: usize,
    pub total_cost: Cost,
}

#[derive(Serialize)]
struct LedgerFile {
    cap: Cost,
    total: Cost,
    entries: Vec<crate::llm::ledger::LedgerEntry>,
}

/// Annotates each scenario in `ids` from `<id>.txt` and `<id>.png` and
/// writes one query record per scenario plus `ledger.json`. Records are
/// written even when the budget runs out, but the stage then fails.
pub fn annotate_dir(
    ids: &[String],
    prompt_dir: &Path,
    image_dir: &Path,
    out: &Path,
    annotator: &Annotator<'_>,
    endpoint: &EndpointConfig,
    vocab: &ContextVocabulary,
) -> Result<AnnotateSummary, PipelineError> {
    let fail = |m: String| PipelineError::stage("annotate", m);
    let mut items = Vec::with_capacity(ids.len());
    for id in ids {
        let stem = file_stem(id);
        let text_path = prompt_dir.join(format!("{stem}.txt"));
        let png_path = image_dir.join(format!("{stem}.png"));
        let text = std::fs::read_to_string(&text_path).map_err(|e| fail(format!("{}: {e}", text_path.display())))?;
        let png = std::fs::read(&png_path).map_err(|e| fail(format!("{}: {e}", png_path.display())))?;
        items.push((id.clone(), png, text));
    }

    let (results, ledger) = match annotator {
        Annotator::Mock { scenarios, noise, render } => {
            let by_id: HashMap<&str, &Scenario> = scenarios.iter().map(|s| (s.scenario_id.as_str(), s)).collect();
            let results: Vec<Result<QueryRecord, LlmError>> = items
                .par_iter()
                .map(|(id, png, text)| {
                    let hash = request_hash(&request_body(endpoint, PromptPayload { text, png }));
                    let answer = by_id
                        .get(id.as_str())
                        .ok_or_else(|| format!("no scenario for '{id}'"))
                        .and_then(|s| mock_oracle(s, noise, vocab, render).map_err(|e| e.to_string()));
                    Ok(match answer {
                        Ok(ctx) => QueryRecord::offline(id, &hash, ctx),
                        Err(message) => QueryRecord::failed(id, &hash, &LlmError::Transport { attempts: 1, message }),
                    })
                })
                .collect();
            (results, LedgerFile { cap: Cost::from_units(endpoint.budget_cap), total: Cost::ZERO, entries: Vec::new() })
        }
        Annotator::Live(client) => {
            let results = client.query_batch(&items);
            let l = client.ledger();
            (results, LedgerFile { cap: l.cap(), total: l.total(), entries: l.entries() })
        }
    };

    let mut summary = AnnotateSummary { total_cost: ledger.total, ..AnnotateSummary::default() };
    let mut budget_error = None;
    for ((id, png, text), r) in items.iter().zip(results) {
        let record = match r {
            Ok(rec) => rec,
            Err(LlmError::BudgetExceeded(e)) => {
                summary.budget_skipped += 1;
                budget_error.get_or_insert(e.to_string());
                continue;
            }
            Err(e) => {
                let hash = request_hash(&request_body(endpoint, PromptPayload { text, png }));
                QueryRecord::failed(id, &hash, &e)
            }
        };
        match record.status {
            QueryStatus::Ok => summary.ok += 1,
            QueryStatus::ParseFailed => summary.parse_failed += 1,
            QueryStatus::ApiError => summary.api_error += 1,
        }
        write_json(&out.join(format!("{}.json", file_stem(id))), &record, "annotate")?;
    }
    write_json(&out.join("ledger.json"), &ledger, "annotate")?;
    match budget_error {
        Some(message) => Err(PipelineError::Budget { stage: "annotate".into(), message }),
        None => Ok(summary),
    }
}

fn query_records(annotate_dir: &Path) -> Result<Vec<QueryRecord>, PipelineError> {
    let mut records = Vec::new();
    for path in dataset_files(annotate_dir).map_err(|e| PipelineError::stage("annotate", e))? {
        if path.file_name().is_some_and(|n| n == "ledger.json") {
            continue;
        }
        records.push(read_json::<QueryRecord>(&path, "annotate")?);
    }
    Ok(records)
}

/// Successfully parsed contexts by scenario id.
pub fn load_contexts(annotate_dir: &Path) -> Result<BTreeMap<String, TransportationContext>, PipelineError> {
    Ok(query_records(annotate_dir)?
        .into_iter()
        .filter(|r| r.status == QueryStatus::Ok)
        .filter_map(|r| r.parsed.map(|c| (r.scenario_id, c)))
        .collect())
}

/// Writes one encoded record per parsed context. Encoding warnings go to
/// `warnings.txt`.
pub fn encode_dir(annotate_dir: &Path, out: &Path, vocab: &ContextVocabulary) -> Result<usize, PipelineError> {
    let contexts = load_contexts(annotate_dir)?;
    let mut warnings = Vec::new();
    for (id, ctx) in &contexts {
        let (encoded, w) = encode_context(ctx, vocab).map_err(|e| PipelineError::stage("encode", format!("{id}: {e}")))?;
        warnings.extend(w.into_iter().map(|w| format!("{id}: {w}")));
        let rec = EncodedContextRecord { scenario_id: id.clone(), encoded };
        write_json(&out.join(format!("{}.json", file_stem(id))), &rec, "encode")?;
    }
    if !warnings.is_empty() {
        std::fs::write(out.join("warnings.txt"), warnings.join("\n") + "\n").map_err(|e| PipelineError::stage("encode", e))?;
    }
    Ok(contexts.len())
}

/// Propagates annotated contexts to every other ego agent. Members of the
/// annotated split without a usable answer are treated like the rest of the
/// dataset and receive a propagated context.
pub fn propagate_dataset(
    all: &[Scenario],
    split: &DatasetSplit,
    contexts: &BTreeMap<String, TransportationContext>,
    prop: &PropagationSection,
) -> Result<Vec<AugmentedRecord>, PipelineError> {
    let fail = |m: String| PipelineError::stage("propagate", m);
    let by_id: HashMap<&str, &Scenario> = all.iter().map(|s| (s.scenario_id.as_str(), s)).collect();
    let order: HashMap<&AgentKey, usize> = split.t1.iter().chain(&split.t2).enumerate().map(|(i, k)| (k, i)).collect();
    let annotated: Vec<&AgentKey> = split.t2.iter().filter(|k| contexts.contains_key(&k.scenario_id)).collect();
    let mut rest: Vec<&AgentKey> =
        split.t1.iter().chain(split.t2.iter().filter(|k| !contexts.contains_key(&k.scenario_id))).collect();
    if annotated.is_empty() {
        return Err(fail("no annotated scenario has a parsed context".into()));
    }
    // Keep dataset order: the index lists scenarios in file order, and the
    // split preserves it within each part.
    let file_pos: HashMap<&str, usize> = all.iter().enumerate().map(|(i, s)| (s.scenario_id.as_str(), i)).collect();
    rest.sort_by_key(|k| (file_pos.get(k.scenario_id.as_str()).copied().unwrap_or(usize::MAX), order[k]));

    let features = |keys: &[&AgentKey]| -> Result<Vec<(AgentKey, FeatureVector)>, PipelineError> {
        keys.par_iter()
            .map(|k| {
                let s = by_id.get(k.scenario_id.as_str()).ok_or_else(|| fail(format!("{k}: scenario not in dataset")))?;
                let f = encode_features(s, &k.agent_id, &prop.features).map_err(|e| fail(format!("{k}: {e}")))?;
                Ok(((*k).clone(), f))
            })
            .collect()
    };
    let t1 = features(&rest)?;
    let t2 = features(&annotated)?;
    let tc2: Vec<TransportationContext> = annotated.iter().map(|k| contexts[&k.scenario_id].clone()).collect();
    propagate(&t1, &t2, &tc2, prop.method).map_err(|e| fail(e.to_string()))
}

fn intention_block(rows: &[(&AugmentedRecord, IntentionLabel)]) -> Result<IntentionEvalResult, PipelineError> {
    if rows.is_empty() {
        return Ok(IntentionEvalResult::empty());
    }
    let preds: Vec<Vec<IntentionLabel>> = rows.iter().map(|(r, _)| r.context.intentions.clone()).collect();
    let gts: Vec<IntentionLabel> = rows.iter().map(|(_, g)| *g).collect();
    intention_accuracy(&preds, &gts).map_err(|e| PipelineError::stage("evaluate", e))
}

/// Scores intentions against ground truth and runs the kinematic baseline
/// with and without the contexts. Writes `metrics.json`, `report.txt` and
/// confusion heatmaps.
pub fn evaluate_records(
    records: &[AugmentedRecord],
    all: &[Scenario],
    eval: &EvaluationSection,
    out: &Path,
) -> Result<EvaluationReport, PipelineError> {
    let fail = |m: String| PipelineError::stage("evaluate", m);
    let by_id: HashMap<&str, &Scenario> = all.iter().map(|s| (s.scenario_id.as_str(), s)).collect();
    let scenario = |id: &str| by_id.get(id).copied().ok_or_else(|| fail(format!("{id}: scenario not in dataset")));
    let gt = |id: &str, agent: &str| -> Result<Option<IntentionLabel>, PipelineError> {
        match label_gt_intention(scenario(id)?, agent, &eval.thresholds) {
            Ok(l) => Ok(Some(l)),
            Err(ScenarioError::MissingFuture(_)) => Ok(None),
            Err(e) => Err(fail(format!("{id}/{agent}: {e}"))),
        }
    };

    let mut labelled = Vec::new();
    let mut agree = (0usize, 0usize);
    for r in records {
        let Some(g) = gt(&r.scenario_id, &r.agent_id)? else { continue };
        labelled.push((r, g));
        if let Some(n) = &r.neighbor_id {
            let (sid, aid) = n.rsplit_once('/').ok_or_else(|| fail(format!("bad neighbor id '{n}'")))?;
            if let Some(ng) = gt(sid, aid)? {
                agree.1 += 1;
                if ng == g {
                    agree.0 += 1;
                }
            }
        }
    }

    let mut report = EvaluationReport::default();
    let subset = |src: Option<ContextSource>| -> Vec<(&AugmentedRecord, IntentionLabel)> {
        labelled.iter().filter(|(r, _)| src.is_none_or(|s| r.source == s)).map(|(r, g)| (*r, *g)).collect()
    };
    report.intention.insert("llm".into(), intention_block(&subset(Some(ContextSource::Llm)))?);
    report.intention.insert("propagated".into(), intention_block(&subset(Some(ContextSource::Propagated)))?);
    report.intention.insert("all".into(), intention_block(&subset(None))?);
    report.propagation_agreement = (agree.1 > 0).then(|| agree.0 as f64 / agree.1 as f64);

    let mut with_ctx = Vec::new();
    let mut without_ctx = Vec::new();
    for (r, g) in &labelled {
        let s = scenario(&r.scenario_id)?;
        let track = s.agent(&r.agent_id).ok_or_else(|| fail(format!("{}: unknown agent", r.key())))?;
        let Some(future) = &track.future else { continue };
        if !future.iter().any(|st| st.valid) {
            continue;
        }
        let gt_pts: Vec<[f64; 2]> = future.iter().map(|st| [st.x, st.y]).collect();
        let valid: Vec<bool> = future.iter().map(|st| st.valid).collect();
        let pred = |cands| AgentPrediction {
            scenario_id: r.scenario_id.clone(),
            agent_id: r.agent_id.clone(),
            agent_type: track.agent_type,
            gt_intention: *g,
            candidates: cands,
            gt: gt_pts.clone(),
            valid: valid.clone(),
        };
        with_ctx.push(pred(kinematic_candidates(track, Some(&r.context), eval.candidates)));
        without_ctx.push(pred(kinematic_candidates(track, None, eval.candidates)));
    }
    if !with_ctx.is_empty() {
        let m = |p: &[AgentPrediction]| trajectory_metrics(p, eval.miss_threshold_m).map_err(|e| fail(e.to_string()));
        report.trajectory = Some(m(&with_ctx)?);
        report.trajectory_without_context = Some(m(&without_ctx)?);
    }

    std::fs::write(out.join("metrics.json"), report_json(&report)).map_err(|e| fail(e.to_string()))?;
    std::fs::write(out.join("report.txt"), report_text(&report)).map_err(|e| fail(e.to_string()))?;
    for (name, block) in &report.intention {
        let file = if name == "all" { "confusion.png".to_string() } else { format!("confusion_{name}.png") };
        let png = encode_png(&confusion_heatmap(block)).map_err(|e| fail(e.to_string()))?;
        std::fs::write(out.join(file), png).map_err(|e| fail(e.to_string()))?;
    }
    Ok(report)
}
