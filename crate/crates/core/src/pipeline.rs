//! End-to-end experiment runs: split, bank, index, training pairs,
//! prediction, evaluation and analysis, once per seed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bank::build_bank;
use crate::corpus::{load_corpus, load_ontology, make_split, Dialogue, Fraction, Ontology, SplitMode, SplitSpec};
use crate::embedding::{EmbeddingProvider, LexicalEmbedder, RemoteEmbedder, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::evaluation::{combine_reports, joint_goal_accuracy, selection_analysis, Axis, EvalReport};
use crate::generation::{
    gold_states, predict_states, remote_finetune, Generator, MockOracle, PairsSource, PredictConfig,
    RemoteGenerator, DEFAULT_BATCH_SIZE,
};
use crate::http::{JsonClient, RetryPolicy};
use crate::io::{sha256_file, write_json, write_jsonl};
use crate::prompting::{export_training_pairs, ExportConfig};
use crate::retriever::{DenseIndex, QueryMode, Retriever, Strategy, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderChoice {
    #[default]
    Lexical,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorChoice {
    #[default]
    Mock,
    Remote,
}

macro_rules! choice_str {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(<$t>::$v),)+
                    _ => Err(Error::InvalidArgument(format!(
                        concat!("unknown ", stringify!($t), " {:?}"), s
                    ))),
                }
            }
        }

        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $(<$t>::$v => $s,)+
                })
            }
        }
    };
}

choice_str!(EmbedderChoice, Lexical => "lexical", Remote => "remote");
choice_str!(GeneratorChoice, Mock => "mock", Remote => "remote");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub ontology: PathBuf,
    /// Evaluate on this corpus instead of the split's held-out dialogues.
    pub test_corpus: Option<PathBuf>,
    pub split: SplitMode,
    pub target_domain: Option<String>,
    pub fraction: Fraction,
    pub retriever: Strategy,
    pub query_mode: QueryMode,
    pub k: usize,
    pub embedder: EmbedderChoice,
    pub embed_dim: usize,
    pub generator: GeneratorChoice,
    pub oracle_accuracy: f64,
    pub endpoint: Option<String>,
    /// Fine-tune the remote model on each seed's pairs before predicting.
    pub finetune_epochs: Option<u32>,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub workers: usize,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn new(corpus: PathBuf, ontology: PathBuf, output: PathBuf) -> Self {
        RunConfig {
            corpus,
            ontology,
            test_corpus: None,
            split: SplitMode::FullShot,
            target_domain: None,
            fraction: Fraction::ONE,
            retriever: Strategy::Dense,
            query_mode: QueryMode::Whole,
            k: DEFAULT_K,
            embedder: EmbedderChoice::Lexical,
            embed_dim: DEFAULT_DIM,
            generator: GeneratorChoice::Mock,
            oracle_accuracy: 1.0,
            endpoint: None,
            finetune_epochs: None,
            seeds: vec![0],
            batch_size: DEFAULT_BATCH_SIZE,
            workers: 0,
            output,
        }
    }

    pub fn split_spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            mode: self.split,
            target_domain: self.target_domain.clone(),
            fraction: self.fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut unique = self.seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let needs_endpoint = self.generator == GeneratorChoice::Remote
            || (self.retriever == Strategy::Dense && self.embedder == EmbedderChoice::Remote);
        if needs_endpoint && self.endpoint.is_none() {
            return Err(Error::Config("a remote embedder or generator needs --endpoint".into()));
        }
        if self.finetune_epochs.is_some() && self.generator != GeneratorChoice::Remote {
            return Err(Error::Config("finetune_epochs only applies to the remote generator".into()));
        }
        if !(0.0..=1.0).contains(&self.oracle_accuracy) {
            return Err(Error::Config(format!(
                "oracle_accuracy {} is outside [0, 1]",
                self.oracle_accuracy
            )));
        }
        self.split_spec(0).validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Slots scored and queried: the target domain's for zero-shot and
    /// cross-domain runs, all otherwise.
    pub fn domain_filter(&self) -> Option<&str> {
        match self.split {
            SplitMode::ZeroShot | SplitMode::CrossDomainFewShot => self.target_domain.as_deref(),
            _ => None,
        }
    }

    pub fn exclude_domains(&self) -> Vec<String> {
        match (self.split, &self.target_domain) {
            (SplitMode::ZeroShot, Some(d)) => vec![d.clone()],
            _ => Vec::new(),
        }
    }

    fn policy(&self) -> RetryPolicy {
        RetryPolicy::default()
    }

    pub fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match self.embedder {
            EmbedderChoice::Lexical => Box::new(LexicalEmbedder::new(self.embed_dim)?),
            EmbedderChoice::Remote => Box::new(RemoteEmbedder::connect(self.endpoint()?, self.policy())?),
        })
    }

    fn endpoint(&self) -> Result<&str> {
        self.endpoint
            .as_deref()
            .ok_or_else(|| Error::Config("no endpoint configured".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Artifact path (relative to the output directory) to content hash.
    pub artifacts: BTreeMap<String, String>,
    pub finetune_losses: BTreeMap<u64, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub per_seed: Vec<(u64, EvalReport)>,
    pub manifest: Manifest,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(Error::in_stage(name))
}

/// Held-out dialogues, or the training dialogues when nothing is held out.
fn eval_set<'d>(split: &'d crate::corpus::Split, test: Option<&'d [Dialogue]>) -> (&'d [Dialogue], bool) {
    match test {
        Some(t) => (t, false),
        None if split.heldout.is_empty() => (&split.train, true),
        None => (&split.heldout, false),
    }
}

struct SeedOutput {
    report: EvalReport,
    finetune_loss: Option<f64>,
}

fn run_seed(
    config: &RunConfig,
    dialogues: &[Dialogue],
    test: Option<&[Dialogue]>,
    ontology: &Ontology,
    provider: Option<&dyn EmbeddingProvider>,
    seed: u64,
    dir: &Path,
) -> Result<SeedOutput> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let split = stage("split", make_split(dialogues, &config.split_spec(seed)))?;
    stage("split", write_json(&dir.join("split.json"), &split.info))?;

    let bank = stage("bank", build_bank(&split.train))?;
    stage("bank", bank.save(&dir.join("bank.jsonl")))?;

    let retriever = match (config.retriever, provider) {
        (Strategy::Dense, Some(p)) => {
            let index = stage("index", DenseIndex::build(&bank, p))?;
            stage("index", index.save(&dir.join("index.bin")))?;
            stage("index", Retriever::dense(&bank, index, p))?
        }
        (Strategy::Dense, None) => return Err(Error::Config("dense retrieval needs an embedder".into())),
        (Strategy::Bm25, _) => Retriever::bm25(&bank),
        (Strategy::Random, _) => Retriever::random(&bank, seed),
    };

    let pairs = stage(
        "export-train",
        export_training_pairs(
            &split.train,
            &bank,
            &retriever,
            ontology,
            &ExportConfig {
                k: config.k,
                query_mode: config.query_mode,
                workers: config.workers,
            },
        ),
    )?;
    let pairs_path = dir.join("train_pairs.jsonl");
    stage("export-train", write_jsonl(&pairs_path, &pairs))?;

    let (eval, on_train) = eval_set(&split, test);
    let generator: Box<dyn Generator> = match config.generator {
        GeneratorChoice::Mock => Box::new(stage(
            "predict",
            MockOracle::new(eval, config.oracle_accuracy, seed),
        )?),
        GeneratorChoice::Remote => Box::new(RemoteGenerator::new(config.endpoint()?, config.policy())),
    };
    let finetune_loss = match config.finetune_epochs {
        Some(epochs) => {
            let abs = fs::canonicalize(&pairs_path).map_err(|e| Error::io(&pairs_path, e))?;
            let client = JsonClient::new(config.endpoint()?, config.policy());
            let source = PairsSource::Path(abs.to_string_lossy().into_owned());
            Some(stage("finetune", remote_finetune(&client, source, epochs, seed))?)
        }
        None => None,
    };

    let predict_config = PredictConfig {
        k: config.k,
        query_mode: config.query_mode,
        batch_size: config.batch_size,
        domain_filter: config.domain_filter().map(str::to_string),
        exclude_domains: config.exclude_domains(),
        exclude_self: on_train,
        workers: config.workers,
    };
    let prediction = stage(
        "predict",
        predict_states(eval, ontology, &retriever, generator.as_ref(), &predict_config),
    )?;
    stage("predict", write_jsonl(&dir.join("predictions.jsonl"), &prediction.states))?;
    stage("predict", write_jsonl(&dir.join("retrievals.jsonl"), &prediction.log))?;

    let report = stage(
        "eval",
        joint_goal_accuracy(&prediction.states, &gold_states(eval), config.domain_filter()),
    )?;
    stage("eval", write_json(&dir.join(REPORT_FILE), &report))?;

    for axis in [Axis::Domain, Axis::Slot] {
        let analysis = stage("analyze", selection_analysis(&prediction.log, axis))?;
        let stem = dir.join(format!("selection_{axis}"));
        stage("analyze", write_json(&stem.with_extension("json"), &analysis))?;
        let csv = stage("analyze", analysis.matrix.to_csv())?;
        let csv_path = stem.with_extension("csv");
        fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    }
    Ok(SeedOutput { report, finetune_loss })
}

fn hash_tree(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            hash_tree(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("walked path is under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            if rel != MANIFEST_FILE {
                out.insert(rel, sha256_file(&path)?);
            }
        }
    }
    Ok(())
}

pub fn seed_dir(output: &Path, seed: u64) -> PathBuf {
    output.join(format!("seed-{seed}"))
}

/// Run every seed, write the pooled report and a manifest of config, input
/// hashes and artifact hashes.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let ontology = stage("ingest", load_ontology(&config.ontology))?;
    let dialogues = stage("ingest", load_corpus(&config.corpus, &ontology))?;
    let test = match &config.test_corpus {
        Some(p) => Some(stage("ingest", load_corpus(p, &ontology))?),
        None => None,
    };
    let provider = match config.retriever {
        Strategy::Dense => Some(stage("index", config.embedding_provider())?),
        _ => None,
    };
    fs::create_dir_all(&config.output).map_err(|e| Error::io(&config.output, e))?;

    let mut per_seed = Vec::with_capacity(config.seeds.len());
    let mut finetune_losses = BTreeMap::new();
    for &seed in &config.seeds {
        let out = run_seed(
            config,
            &dialogues,
            test.as_deref(),
            &ontology,
            provider.as_deref(),
            seed,
            &seed_dir(&config.output, seed),
        )?;
        if let Some(loss) = out.finetune_loss {
            finetune_losses.insert(seed, loss);
        }
        per_seed.push((seed, out.report));
    }
    let reports: Vec<EvalReport> = per_seed.iter().map(|(_, r)| r.clone()).collect();
    let report = stage("eval", combine_reports(&reports))?;
    stage("eval", write_json(&config.output.join(REPORT_FILE), &report))?;

    let mut inputs = BTreeMap::new();
    for p in std::iter::once(&config.corpus)
        .chain([&config.ontology])
        .chain(config.test_corpus.as_ref())
    {
        inputs.insert(p.to_string_lossy().into_owned(), sha256_file(p)?);
    }
    let mut artifacts = BTreeMap::new();
    hash_tree(&config.output, &config.output, &mut artifacts)?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        inputs,
        artifacts,
        finetune_losses,
    };
    write_json(&config.output.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutcome {
        report,
        per_seed,
        manifest,
    })
}
