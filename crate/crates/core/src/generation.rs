//! Slot-value generation: the generator contract, a seeded mock oracle, the
//! `/generate` and `/finetune` clients, and per-turn state prediction.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{enumerate_queries, normalize_value, Dialogue, DialogueState, Ontology, QueryKey, SlotId};
use crate::embedding::{splitmix64, stable_hash};
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::prompting::{parse_prompt, prompt_for, with_workers, PromptInstance};
use crate::retriever::{QueryMode, Retriever};

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const WRONG_VALUE: &str = "__wrong__";

/// Maps a batch of prompts to one output string each, in order.
/// Implementations must tolerate concurrent calls.
pub trait Generator: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, inputs: &[String]) -> Result<Vec<String>>;
}

/// The state of one turn, gold or predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnState {
    pub dialogue_id: String,
    pub turn: usize,
    pub state: DialogueState,
}

pub type PredictedState = TurnState;

pub fn gold_states(dialogues: &[Dialogue]) -> Vec<TurnState> {
    dialogues
        .iter()
        .flat_map(|d| {
            d.turns().iter().map(move |t| TurnState {
                dialogue_id: d.id().to_string(),
                turn: t.index(),
                state: t.gold_state().clone(),
            })
        })
        .collect()
}

/// Answers from the gold states of a corpus: the gold value with probability
/// `accuracy`, otherwise [`WRONG_VALUE`]. The coin for each prompt depends
/// only on (seed, context, slot), so batching and threading cannot change it.
#[derive(Debug, Clone)]
pub struct MockOracle {
    /// Whole-context rendering to gold state; `None` when two turns share a
    /// context but disagree on the state.
    gold: HashMap<String, Option<DialogueState>>,
    accuracy: f64,
    seed: u64,
    name: String,
}

impl MockOracle {
    pub fn new(dialogues: &[Dialogue], accuracy: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::InvalidArgument(format!(
                "oracle accuracy {accuracy} is outside [0, 1]"
            )));
        }
        let mut gold: HashMap<String, Option<DialogueState>> = HashMap::new();
        for d in dialogues {
            for t in d.turns() {
                let ctx = crate::retriever::render_context(d, t.index())?;
                gold.entry(ctx)
                    .and_modify(|s| {
                        if s.as_ref() != Some(t.gold_state()) {
                            *s = None;
                        }
                    })
                    .or_insert_with(|| Some(t.gold_state().clone()));
            }
        }
        Ok(MockOracle {
            gold,
            accuracy,
            seed,
            name: format!("mock-oracle(p={accuracy},seed={seed})"),
        })
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    /// Uniform draw in [0, 1) for one (context, slot) pair.
    fn coin(&self, context: &str, slot: &SlotId) -> f64 {
        let key = format!("{context}\u{0}{slot}");
        let bits = splitmix64(self.seed ^ stable_hash(&key));
        (bits >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn answer(&self, input: &str) -> Result<String> {
        let parts = parse_prompt(input)?;
        let context = parts.context_text();
        let state = match self.gold.get(&context) {
            Some(Some(s)) => s,
            Some(None) => {
                return Err(Error::Prompt(
                    "context is shared by turns with different gold states".into(),
                ))
            }
            None => return Err(Error::Prompt("context not found in the oracle corpus".into())),
        };
        if self.coin(&context, &parts.slot) < self.accuracy {
            Ok(state
                .get(&parts.slot)
                .unwrap_or(crate::corpus::NONE_VALUE)
                .to_string())
        } else {
            Ok(WRONG_VALUE.to_string())
        }
    }
}

impl Generator for MockOracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, inputs: &[String]) -> Result<Vec<String>> {
        inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                self.answer(x)
                    .map_err(|e| Error::Prompt(format!("batch item {i}: {e}")))
            })
            .collect()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub inputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub outputs: Vec<String>,
}

/// Call `/generate`. An empty batch returns immediately without a request.
pub fn remote_generate(client: &JsonClient, inputs: &[String]) -> Result<Vec<String>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let resp: GenerateResponse = client.post(
        "/generate",
        &GenerateRequest {
            inputs: inputs.to_vec(),
        },
    )?;
    if resp.outputs.len() != inputs.len() {
        return Err(Error::Protocol(format!(
            "/generate returned {} outputs for {} inputs",
            resp.outputs.len(),
            inputs.len()
        )));
    }
    Ok(resp.outputs)
}

#[derive(Debug, Clone)]
pub struct RemoteGenerator {
    client: JsonClient,
    name: String,
}

impl RemoteGenerator {
    pub fn new(endpoint: &str, policy: RetryPolicy) -> Self {
        let client = JsonClient::new(endpoint, policy);
        RemoteGenerator {
            name: format!("remote:{}", client.endpoint()),
            client,
        }
    }
}

impl Generator for RemoteGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, inputs: &[String]) -> Result<Vec<String>> {
        remote_generate(&self.client, inputs)
    }
}

/// Training pairs for `/finetune`: a path the server can read, or the pairs
/// themselves.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairsSource {
    Path(String),
    Inline(Vec<PromptInstance>),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub pairs_path_or_inline: PairsSource,
    pub epochs: u32,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FinetuneResponse {
    pub final_loss: f64,
}

pub fn remote_finetune(client: &JsonClient, pairs: PairsSource, epochs: u32, seed: u64) -> Result<f64> {
    let resp: FinetuneResponse = client.post(
        "/finetune",
        &FinetuneRequest {
            pairs_path_or_inline: pairs,
            epochs,
            seed,
        },
    )?;
    if !resp.final_loss.is_finite() {
        return Err(Error::Protocol(format!(
            "/finetune returned a non-finite loss {}",
            resp.final_loss
        )));
    }
    Ok(resp.final_loss)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictConfig {
    pub k: usize,
    pub query_mode: QueryMode,
    pub batch_size: usize,
    /// Only query this domain's slots.
    pub domain_filter: Option<String>,
    /// Never retrieve examples from these domains.
    pub exclude_domains: Vec<String>,
    /// Skip examples taken from the queried turn itself (for evaluating on
    /// training dialogues).
    pub exclude_self: bool,
    /// 0 means rayon's default.
    pub workers: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            k: crate::retriever::DEFAULT_K,
            query_mode: QueryMode::Whole,
            batch_size: DEFAULT_BATCH_SIZE,
            domain_filter: None,
            exclude_domains: Vec::new(),
            exclude_self: false,
            workers: 0,
        }
    }
}

/// What was retrieved for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalLog {
    pub dialogue_id: String,
    pub turn: usize,
    pub slot: SlotId,
    pub retrieved_ids: Vec<String>,
    pub retrieved_slots: Vec<SlotId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    /// One entry per turn, corpus order.
    pub states: Vec<PredictedState>,
    /// One entry per query, corpus then turn then slot order.
    pub log: Vec<RetrievalLog>,
    /// Number of generator inputs issued.
    pub queries: usize,
}

fn provenance(key: &QueryKey) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Query {
        dialogue_id: key.dialogue_id.clone(),
        turn: key.turn,
        slot: key.slot.to_string(),
        source: Box::new(e),
    }
}

/// Retrieve, assemble and generate for every (turn, slot) query, then fold
/// the normalized answers into per-turn states. Answers that normalize to
/// "none" (or empty) leave the slot out.
pub fn predict_states(
    dialogues: &[Dialogue],
    ontology: &Ontology,
    retriever: &Retriever<'_>,
    generator: &dyn Generator,
    config: &PredictConfig,
) -> Result<Prediction> {
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let by_id: HashMap<&str, &Dialogue> = dialogues.iter().map(|d| (d.id(), d)).collect();
    let keys = enumerate_queries(dialogues, ontology, config.domain_filter.as_deref());

    let prompts: Vec<(String, Vec<String>)> = with_workers(config.workers, || {
        keys.par_iter()
            .map(|key| {
                prompt_for(
                    by_id[key.dialogue_id.as_str()],
                    key,
                    retriever,
                    config.k,
                    config.query_mode,
                    &config.exclude_domains,
                    config.exclude_self,
                )
                .map_err(provenance(key))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let inputs: Vec<String> = prompts.iter().map(|(p, _)| p.clone()).collect();
    let outputs: Vec<Vec<String>> = with_workers(config.workers, || {
        inputs
            .par_chunks(config.batch_size)
            .zip(keys.par_chunks(config.batch_size))
            .map(|(batch, batch_keys)| {
                let out = generator.generate(batch).map_err(provenance(&batch_keys[0]))?;
                if out.len() != batch.len() {
                    return Err(provenance(&batch_keys[0])(Error::Protocol(format!(
                        "generator {} returned {} outputs for {} inputs",
                        generator.name(),
                        out.len(),
                        batch.len()
                    ))));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut per_turn: HashMap<(&str, usize), DialogueState> = HashMap::new();
    let bank = retriever.bank();
    let mut log = Vec::with_capacity(keys.len());
    for ((key, output), (_, retrieved)) in keys.iter().zip(outputs.into_iter().flatten()).zip(prompts) {
        if let Some(value) = normalize_value(&output) {
            per_turn
                .entry((key.dialogue_id.as_str(), key.turn))
                .or_default()
                .insert(key.slot.clone(), value);
        }
        let retrieved_slots = retrieved
            .iter()
            .map(|id| {
                bank.get(id)
                    .map(|e| e.slot.clone())
                    .ok_or_else(|| Error::Retrieval(format!("retrieved id {id} is not in the bank")))
            })
            .collect::<Result<Vec<_>>>()
            .map_err(provenance(key))?;
        log.push(RetrievalLog {
            dialogue_id: key.dialogue_id.clone(),
            turn: key.turn,
            slot: key.slot.clone(),
            retrieved_ids: retrieved,
            retrieved_slots,
        });
    }

    let states = dialogues
        .iter()
        .flat_map(|d| d.turns().iter().map(move |t| (d.id(), t.index())))
        .map(|(id, turn)| TurnState {
            dialogue_id: id.to_string(),
            turn,
            state: per_turn.remove(&(id, turn)).unwrap_or_default(),
        })
        .collect();
    Ok(Prediction {
        states,
        log,
        queries: keys.len(),
    })
}
