//! Command-line interface. Each stage reads its predecessors' artifacts, so
//! any stage can be rerun on its own; `run` chains them all.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bank::{build_bank, ExampleBank};
use crate::corpus::{
    corpus_domains, load_corpus, load_ontology, make_split, write_corpus, Dialogue, Fraction, SplitMode, SplitSpec,
};
use crate::embedding::{EmbeddingProvider, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::evaluation::{joint_goal_accuracy, selection_analysis, Axis};
use crate::generation::{
    gold_states, predict_states, remote_finetune, Generator, MockOracle, PairsSource, PredictConfig, RemoteGenerator,
    RetrievalLog, TurnState, DEFAULT_BATCH_SIZE,
};
use crate::http::{JsonClient, RetryPolicy};
use crate::io::{read_jsonl, write_json, write_jsonl};
use crate::pipeline::{run_experiment, EmbedderChoice, GeneratorChoice, RunConfig};
use crate::prompting::{export_training_pairs, ExportConfig, PromptInstance};
use crate::retriever::{DenseIndex, QueryMode, Retriever, Strategy, DEFAULT_K};

#[derive(Debug, Parser)]
#[command(name = "ictdst", version, about = "In-context dialogue state tracking toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus against an ontology and print a summary.
    Ingest(IngestArgs),
    /// Partition a corpus into training and held-out dialogues.
    Split(SplitArgs),
    /// Build the single-turn example bank from training dialogues.
    Bank(BankArgs),
    /// Embed a bank into a dense index.
    Index(IndexArgs),
    /// Write (input, target) training pairs.
    ExportTrain(ExportArgs),
    /// Predict dialogue states.
    Predict(PredictArgs),
    /// Score predictions against gold states.
    Eval(EvalArgs),
    /// Selection matrices over a retrieval log.
    Analyze(AnalyzeArgs),
    /// Run the whole pipeline for one or more seeds.
    Run(RunArgs),
    /// Fine-tune the remote model on exported pairs.
    Finetune(FinetuneArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    /// Write the validated, normalized corpus here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub mode: SplitMode,
    #[arg(long)]
    pub target_domain: Option<String>,
    #[arg(long, default_value = "1")]
    pub fraction: Fraction,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for train.json, heldout.json and split.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BankArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedderArgs {
    #[arg(long, default_value = "lexical")]
    pub embedder: EmbedderChoice,
    #[arg(long = "embed-dim", default_value_t = DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long)]
    pub endpoint: Option<String>,
}

impl EmbedderArgs {
    fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let mut c = RunConfig::new(PathBuf::new(), PathBuf::new(), PathBuf::new());
        c.embedder = self.embedder;
        c.embed_dim = self.dim;
        c.endpoint = self.endpoint.clone();
        c.embedding_provider()
    }
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RetrieverArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, default_value = "dense")]
    pub retriever: Strategy,
    /// Prebuilt dense index; built in memory when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[command(flatten)]
    pub embedder: EmbedderArgs,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value = "whole")]
    pub query_mode: QueryMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

impl RetrieverArgs {
    fn with_retriever<T>(&self, f: impl FnOnce(&Retriever<'_>) -> Result<T>) -> Result<T> {
        let bank = ExampleBank::load(&self.bank)?;
        match self.retriever {
            Strategy::Bm25 => f(&Retriever::bm25(&bank)),
            Strategy::Random => f(&Retriever::random(&bank, self.seed)),
            Strategy::Dense => {
                let provider = self.embedder.provider()?;
                let index = match &self.index {
                    Some(p) => {
                        let index = DenseIndex::load(p)?;
                        if index.provider_name() != provider.name() {
                            return Err(Error::Config(format!(
                                "index was built with {} but the embedder is {}",
                                index.provider_name(),
                                provider.name()
                            )));
                        }
                        index
                    }
                    None => DenseIndex::build(&bank, provider.as_ref())?,
                };
                f(&Retriever::dense(&bank, index, provider.as_ref())?)
            }
        }
    }
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[command(flatten)]
    pub retrieval: RetrieverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Dialogues to predict; their gold states also feed the mock oracle.
    #[arg(long)]
    pub dialogues: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[command(flatten)]
    pub retrieval: RetrieverArgs,
    #[arg(long, default_value = "mock")]
    pub generator: GeneratorChoice,
    #[arg(long, default_value_t = 1.0)]
    pub oracle_accuracy: f64,
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    /// Only query this domain's slots.
    #[arg(long)]
    pub domain_filter: Option<String>,
    /// Never retrieve examples of this domain (repeatable).
    #[arg(long)]
    pub exclude_domain: Vec<String>,
    /// Never retrieve examples taken from the queried turn.
    #[arg(long)]
    pub exclude_self: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Retrieval log (JSON lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dialogues holding the gold states.
    #[arg(long)]
    pub dialogues: PathBuf,
    #[arg(long)]
    pub ontology: PathBuf,
    #[arg(long)]
    pub slot_scope: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Directory for selection_{domain,slot}.{json,csv}.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub endpoint: String,
    #[arg(long, default_value_t = 3)]
    pub epochs: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Send the pairs in the request body instead of by path.
    #[arg(long)]
    pub inline: bool,
}

/// Every field is optional so a config file and flags can be layered.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Evaluate on this corpus instead of the held-out split
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
    /// zero_shot | cross_domain_few_shot | multi_domain_few_shot | full_shot [default: full_shot]
    #[arg(long)]
    pub split: Option<SplitMode>,
    /// Unseen or few-shot domain for zero_shot and cross_domain_few_shot
    #[arg(long)]
    pub target_domain: Option<String>,
    /// Share of the sampled pool, e.g. 0.01 or 1/100 [default: 1]
    #[arg(long)]
    pub fraction: Option<Fraction>,
    /// dense | bm25 | random [default: dense]
    #[arg(long)]
    pub retriever: Option<Strategy>,
    /// whole | single [default: whole]
    #[arg(long)]
    pub query_mode: Option<QueryMode>,
    /// In-context examples per prompt [default: 3]
    #[arg(long)]
    pub k: Option<usize>,
    /// lexical | remote [default: lexical]
    #[arg(long)]
    pub embedder: Option<EmbedderChoice>,
    /// Lexical embedding dimension [default: 384]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// mock | remote [default: mock]
    #[arg(long)]
    pub generator: Option<GeneratorChoice>,
    /// Probability that the mock generator answers correctly [default: 1.0]
    #[arg(long)]
    pub oracle_accuracy: Option<f64>,
    /// Model server base URL, for remote embedder or generator
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Fine-tune the remote model before predicting
    #[arg(long)]
    pub finetune_epochs: Option<u32>,
    /// One run per seed [default: 0]
    #[arg(long = "seed", num_args = 1..)]
    pub seeds: Option<Vec<u64>>,
    /// Prompts per generate request [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Worker threads; 0 uses every core [default: 0]
    #[arg(long)]
    pub workers: Option<usize>,
    /// Directory for all artifacts
    #[arg(long)]
    pub output: Option<PathBuf>,
}

macro_rules! layer {
    ($hi:expr, $lo:expr, $($f:ident),+) => {
        RunOptions { $($f: $hi.$f.or($lo.$f),)+ }
    };
}

impl RunOptions {
    /// Fields set in `self` win over `lower`.
    pub fn over(self, lower: RunOptions) -> RunOptions {
        layer!(
            self, lower, corpus, ontology, test_corpus, split, target_domain, fraction, retriever, query_mode, k,
            embedder, embed_dim, generator, oracle_accuracy, endpoint, finetune_epochs, seeds, batch_size, workers,
            output
        )
    }

    /// Parse a TOML config; relative paths resolve against its directory.
    pub fn from_toml_file(path: &Path) -> Result<RunOptions> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut opts: RunOptions =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut opts.corpus, &mut opts.ontology, &mut opts.test_corpus, &mut opts.output]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(opts)
    }

    pub fn into_config(self) -> Result<RunConfig> {
        let missing = |f: &str| Error::Config(format!("missing required setting `{f}`"));
        let mut c = RunConfig::new(
            self.corpus.ok_or_else(|| missing("corpus"))?,
            self.ontology.ok_or_else(|| missing("ontology"))?,
            self.output.ok_or_else(|| missing("output"))?,
        );
        c.test_corpus = self.test_corpus;
        c.target_domain = self.target_domain;
        c.endpoint = self.endpoint;
        c.finetune_epochs = self.finetune_epochs;
        macro_rules! set {
            ($($f:ident),+) => { $(if let Some(v) = self.$f { c.$f = v; })+ };
        }
        set!(
            split, fraction, retriever, query_mode, k, embedder, embed_dim, generator, oracle_accuracy, seeds,
            batch_size, workers
        );
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML file with the same keys as the flags (snake_case); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: RunOptions,
}

fn load_dialogues(path: &Path, ontology: &Path) -> Result<Vec<Dialogue>> {
    load_corpus(path, &load_ontology(ontology)?)
}

fn write_dialogues(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    fs::write(path, write_corpus(dialogues)?).map_err(|e| Error::io(path, e))
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Protocol(e.to_string()))?;
    println!("{s}");
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let ontology = load_ontology(&a.ontology)?;
            let dialogues = load_corpus(&a.corpus, &ontology)?;
            let turns: usize = dialogues.iter().map(|d| d.turns().len()).sum();
            println!(
                "{} dialogues, {turns} turns, {} slots, domains: {}",
                dialogues.len(),
                ontology.len(),
                corpus_domains(&dialogues).into_iter().collect::<Vec<_>>().join(",")
            );
            if let Some(out) = a.out {
                write_dialogues(&out, &dialogues)?;
            }
            Ok(())
        }
        Command::Split(a) => {
            let dialogues = load_dialogues(&a.corpus, &a.ontology)?;
            let spec = SplitSpec {
                mode: a.mode,
                target_domain: a.target_domain,
                fraction: a.fraction,
                seed: a.seed,
            };
            let split = make_split(&dialogues, &spec)?;
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            write_dialogues(&a.out.join("train.json"), &split.train)?;
            write_dialogues(&a.out.join("heldout.json"), &split.heldout)?;
            write_json(&a.out.join("split.json"), &split.info)?;
            println!("train {} / heldout {}", split.train.len(), split.heldout.len());
            Ok(())
        }
        Command::Bank(a) => {
            let bank = build_bank(&load_dialogues(&a.train, &a.ontology)?)?;
            bank.save(&a.out)?;
            println!("{} examples", bank.len());
            Ok(())
        }
        Command::Index(a) => {
            let bank = ExampleBank::load(&a.bank)?;
            let provider = a.embedder.provider()?;
            let index = DenseIndex::build(&bank, provider.as_ref())?;
            index.save(&a.out)?;
            println!("{} rows, dim {}, {}", index.len(), index.dim(), index.provider_name());
            Ok(())
        }
        Command::ExportTrain(a) => {
            let ontology = load_ontology(&a.ontology)?;
            let train = load_corpus(&a.train, &ontology)?;
            let config = ExportConfig {
                k: a.retrieval.k,
                query_mode: a.retrieval.query_mode,
                workers: a.retrieval.workers,
            };
            let pairs = a
                .retrieval
                .with_retriever(|r| export_training_pairs(&train, r.bank(), r, &ontology, &config))?;
            write_jsonl(&a.out, &pairs)?;
            println!("{} pairs", pairs.len());
            Ok(())
        }
        Command::Predict(a) => {
            let ontology = load_ontology(&a.ontology)?;
            let dialogues = load_corpus(&a.dialogues, &ontology)?;
            let generator: Box<dyn Generator> = match a.generator {
                GeneratorChoice::Mock => Box::new(MockOracle::new(&dialogues, a.oracle_accuracy, a.retrieval.seed)?),
                GeneratorChoice::Remote => {
                    let endpoint = a
                        .retrieval
                        .embedder
                        .endpoint
                        .as_deref()
                        .ok_or_else(|| Error::Config("the remote generator needs --endpoint".into()))?;
                    Box::new(RemoteGenerator::new(endpoint, RetryPolicy::default()))
                }
            };
            let config = PredictConfig {
                k: a.retrieval.k,
                query_mode: a.retrieval.query_mode,
                batch_size: a.batch_size,
                domain_filter: a.domain_filter,
                exclude_domains: a.exclude_domain,
                exclude_self: a.exclude_self,
                workers: a.retrieval.workers,
            };
            let prediction = a
                .retrieval
                .with_retriever(|r| predict_states(&dialogues, &ontology, r, generator.as_ref(), &config))?;
            write_jsonl(&a.out, &prediction.states)?;
            if let Some(log) = a.log {
                write_jsonl(&log, &prediction.log)?;
            }
            println!("{} turns, {} queries", prediction.states.len(), prediction.queries);
            Ok(())
        }
        Command::Eval(a) => {
            let dialogues = load_dialogues(&a.dialogues, &a.ontology)?;
            let preds: Vec<TurnState> = read_jsonl(&a.predictions)?;
            let report = joint_goal_accuracy(&preds, &gold_states(&dialogues), a.slot_scope.as_deref())?;
            if let Some(out) = a.out {
                write_json(&out, &report)?;
            }
            print_json(&report)
        }
        Command::Analyze(a) => {
            let logs: Vec<RetrievalLog> = read_jsonl(&a.log)?;
            fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            for axis in [Axis::Domain, Axis::Slot] {
                let analysis = selection_analysis(&logs, axis)?;
                write_json(&a.out.join(format!("selection_{axis}.json")), &analysis)?;
                let csv_path = a.out.join(format!("selection_{axis}.csv"));
                fs::write(&csv_path, analysis.matrix.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
                println!(
                    "{axis}: same_slot {:.4}, same_domain {:.4}",
                    analysis.summary.same_slot_fraction, analysis.summary.same_domain_fraction
                );
            }
            Ok(())
        }
        Command::Run(a) => {
            let file = match &a.config {
                Some(p) => RunOptions::from_toml_file(p)?,
                None => RunOptions::default(),
            };
            let config = a.options.over(file).into_config()?;
            let outcome = run_experiment(&config)?;
            for (seed, r) in &outcome.per_seed {
                println!("seed {seed}: jga {:.4} ({}/{})", r.jga, r.correct, r.turn_count);
            }
            println!(
                "jga {:.4} mean {:.4} std {:.4} over {} seed(s)",
                outcome.report.jga,
                outcome.report.mean,
                outcome.report.std,
                outcome.report.seed_runs.len()
            );
            Ok(())
        }
        Command::Finetune(a) => {
            let client = JsonClient::new(&a.endpoint, RetryPolicy::default());
            let source = if a.inline {
                PairsSource::Inline(read_jsonl::<PromptInstance>(&a.pairs)?)
            } else {
                let abs = fs::canonicalize(&a.pairs).map_err(|e| Error::io(&a.pairs, e))?;
                PairsSource::Path(abs.to_string_lossy().into_owned())
            };
            let loss = remote_finetune(&client, source, a.epochs, a.seed)?;
            println!("final_loss {loss}");
            Ok(())
        }
    }
}
