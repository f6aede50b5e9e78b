use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use motion_context::llm::{LlmClient, ResponseCache, UreqTransport};
use motion_context::pipeline::{
    self, annotate_dir, encode_dir, evaluate_records, file_stem, ingest, load_contexts, load_dataset, prompt_scenarios,
    propagate_dataset, render_scenarios, Annotator, PipelineConfig, PipelineError, STAGES,
};
use motion_context::propagation::{read_jsonl, write_jsonl, SearchMethod};
use motion_context::synth::{synth_fixtures, write_dataset};

#[derive(Parser)]
#[command(name = "motion-context", version, about = "Transportation-context annotation pipeline for motion prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        match &self.config {
            Some(p) => PipelineConfig::load(p),
            None => Ok(PipelineConfig::default()),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset, label ground-truth intentions and split it.
    Ingest {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Render a map image for every scenario.
    Render {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Write the image and prompt text for every scenario.
    Prompt {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Caption template; its `.toml` manifest must sit beside it.
        #[arg(long)]
        template: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Query the model (or the mock oracle) for each prompt.
    Annotate {
        /// Directory holding `<id>.txt` and `<id>.png` pairs.
        #[arg(long)]
        tcgp: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mock: bool,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario files; required with --mock.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Turn parsed answers into context vectors.
    Encode {
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Copy annotated contexts to the rest of the dataset.
    Propagate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
        /// Brute-force search instead of the k-d tree.
        #[arg(long)]
        exact: bool,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Score augmented records against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Run every stage, skipping those whose inputs are unchanged.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        mock: bool,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop after this stage.
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(STAGES))]
        until: Option<String>,
    },
    /// Generate synthetic intersection scenarios.
    Synth {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print or check a configuration file.
    Config {
        #[arg(long)]
        print_defaults: bool,
        /// Validate this file and print it with defaults filled in.
        #[arg(long)]
        check: Option<PathBuf>,
    },
}

fn mkdir(dir: &Path, stage: &str) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::stage(stage, format!("{}: {e}", dir.display())))
}

fn dataset(dir: &Path, stage: &str) -> Result<Vec<motion_context::scenario::Scenario>, PipelineError> {
    load_dataset(dir).map_err(|e| PipelineError::stage(stage, e))
}

fn execute(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::Ingest { dataset, out, cfg } => {
            let cfg = cfg.load()?;
            mkdir(&out, "ingest")?;
            let index = ingest(&dataset, &cfg.evaluation.thresholds, &cfg.propagation)?;
            write(&out.join("index.json"), &index.entries)?;
            write(&out.join("split.json"), &index.split)?;
            eprintln!("ingested {} scenarios, {} to annotate", index.entries.len(), index.split.t2.len());
        }
        Command::Render { dataset: dir, out, cfg } => {
            let cfg = cfg.load()?;
            mkdir(&out, "render")?;
            let n = render_scenarios(&dataset(&dir, "render")?, &cfg.render, &out)?;
            eprintln!("rendered {n} images");
        }
        Command::Prompt { dataset: dir, out, template, cfg } => {
            let mut cfg = cfg.load()?;
            if template.is_some() {
                cfg.prompt.template = template;
            }
            let tmpl = cfg.template()?;
            mkdir(&out, "prompt")?;
            let scenarios = dataset(&dir, "prompt")?;
            render_scenarios(&scenarios, &cfg.render, &out)?;
            let n = prompt_scenarios(&scenarios, &tmpl, &cfg.render, &out)?;
            eprintln!("wrote {n} prompts");
        }
        Command::Annotate { tcgp, out, mock, noise, seed, dataset: dir, cfg } => {
            let mut cfg = cfg.load()?;
            cfg.mock.enabled |= mock;
            cfg.mock.noise = noise.unwrap_or(cfg.mock.noise);
            cfg.mock.seed = seed.unwrap_or(cfg.mock.seed);
            let scenarios = match &dir {
                Some(d) => dataset(d, "annotate")?,
                None if cfg.mock.enabled => {
                    return Err(PipelineError::Config { key: "dataset".into(), message: "--mock needs --dataset".into() })
                }
                None => Vec::new(),
            };
            let ids: Vec<String> = if scenarios.is_empty() {
                prompt_stems(&tcgp)?
            } else {
                scenarios
                    .iter()
                    .map(|s| s.scenario_id.clone())
                    .filter(|id| tcgp.join(format!("{}.txt", file_stem(id))).is_file())
                    .collect()
            };
            mkdir(&out, "annotate")?;
            let client;
            let annotator = if cfg.mock.enabled {
                Annotator::Mock { scenarios: &scenarios, noise: cfg.noise(), render: &cfg.render }
            } else {
                client = LlmClient::new(cfg.llm.endpoint.clone(), cfg.vocab.clone(), Box::new(UreqTransport::new()))
                    .with_cache(ResponseCache::new(cfg.cache_dir()));
                Annotator::Live(&client)
            };
            let s = annotate_dir(&ids, &tcgp, &tcgp, &out, &annotator, &cfg.llm.endpoint, &cfg.vocab)?;
            eprintln!(
                "annotated {}: {} ok, {} parse failures, {} API errors, cost {}",
                ids.len(),
                s.ok,
                s.parse_failed,
                s.api_error,
                s.total_cost
            );
        }
        Command::Encode { contexts, out, cfg } => {
            let cfg = cfg.load()?;
            mkdir(&out, "encode")?;
            let n = encode_dir(&contexts, &out, &cfg.vocab)?;
            eprintln!("encoded {n} contexts");
        }
        Command::Propagate { dataset: dir, contexts, fraction, seed, out, exact, cfg } => {
            let mut cfg = cfg.load()?;
            cfg.propagation.fraction = fraction.unwrap_or(cfg.propagation.fraction);
            cfg.propagation.seed = seed.unwrap_or(cfg.propagation.seed);
            if exact {
                cfg.propagation.method = SearchMethod::Exact;
            }
            let index = ingest(&dir, &cfg.evaluation.thresholds, &cfg.propagation)?;
            let all = dataset(&dir, "propagate")?;
            let records = propagate_dataset(&all, &index.split, &load_contexts(&contexts)?, &cfg.propagation)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                mkdir(parent, "propagate")?;
            }
            write_jsonl(&out, &records).map_err(|e| PipelineError::stage("propagate", e))?;
            eprintln!("wrote {} records", records.len());
        }
        Command::Evaluate { pred, gt, out, cfg } => {
            let cfg = cfg.load()?;
            let records = read_jsonl(&pred).map_err(|e| PipelineError::stage("evaluate", e))?;
            mkdir(&out, "evaluate")?;
            evaluate_records(&records, &dataset(&gt, "evaluate")?, &cfg.evaluation, &out)?;
            print!("{}", std::fs::read_to_string(out.join("report.txt")).unwrap_or_default());
        }
        Command::Run { cfg, mock, noise, seed, fraction, dataset, out, until } => {
            let mut cfg = cfg.load()?;
            cfg.mock.enabled |= mock;
            cfg.mock.noise = noise.unwrap_or(cfg.mock.noise);
            cfg.mock.seed = seed.unwrap_or(cfg.mock.seed);
            cfg.propagation.fraction = fraction.unwrap_or(cfg.propagation.fraction);
            cfg.dataset_dir = dataset.unwrap_or(cfg.dataset_dir);
            cfg.output_dir = out.unwrap_or(cfg.output_dir);
            let summary = pipeline::run_until(&cfg, until.as_deref().unwrap_or("evaluate"))?;
            for (stage, status) in &summary.stages {
                eprintln!("{stage:<10} {status:?}");
            }
        }
        Command::Synth { n, seed, out } => {
            let scenarios = synth_fixtures(n, seed).map_err(|e| PipelineError::stage("synth", e))?;
            write_dataset(&out, &scenarios).map_err(|e| PipelineError::stage("synth", e))?;
            eprintln!("wrote {n} scenarios to {}", out.display());
        }
        Command::Config { print_defaults, check } => {
            if let Some(p) = check {
                let cfg = PipelineConfig::load(&p)?;
                cfg.validate()?;
                print!("{}", cfg.to_toml());
            } else if print_defaults {
                print!("{}", PipelineConfig::default().to_toml());
            } else {
                return Err(PipelineError::Config { key: "config".into(), message: "pass --print-defaults or --check".into() });
            }
        }
    }
    Ok(())
}

fn write<T: serde::Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let mut json = serde_json::to_vec_pretty(v).expect("output serializes");
    json.push(b'\n');
    std::fs::write(path, json).map_err(|e| PipelineError::stage("ingest", format!("{}: {e}", path.display())))
}

fn prompt_stems(dir: &Path) -> Result<Vec<String>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::stage("annotate", format!("{}: {e}", dir.display())))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    Ok(stems)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
