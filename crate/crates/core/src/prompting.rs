//! Model inputs: retrieved examples, dialogue context and query slot joined
//! under prefix markers.
//!
//! Grammar (tokens separated by single spaces):
//!
//! ```text
//! prompt  := example* context slot
//! example := "[example]" "[system]" TEXT "[user]" TEXT "[slot]" SLOT "[value]" TEXT
//! context := "[context]" ("[system]" TEXT "[user]" TEXT)+
//! slot    := "[slot]" SLOT
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::{parse_example_blocks, render_example, ExampleBank, ExampleFields, SingleTurnExample};
use crate::corpus::{enumerate_queries, Dialogue, Ontology, QueryKey, SlotId, NONE_VALUE};
use crate::error::{Error, Result};
use crate::retriever::{build_query, render_context, QueryMode, Retriever};
use crate::text::{render_turn, split_blocks, system_from_rendered, Block, Marker};

/// Parsed form of a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptParts {
    pub examples: Vec<ExampleFields>,
    /// (system, user) per context turn; empty system at the opening turn.
    pub context: Vec<(String, String)>,
    pub slot: SlotId,
}

impl PromptParts {
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = self
            .examples
            .iter()
            .map(|e| {
                format!(
                    "{} {}",
                    Marker::Example,
                    render_example(&e.system_text, &e.user_text, &e.slot, &e.value)
                )
            })
            .collect();
        let context: Vec<String> = self.context.iter().map(|(s, u)| render_turn(s, u)).collect();
        parts.push(format!("{} {}", Marker::Context, context.join(" ")));
        parts.push(format!("{} {}", Marker::Slot, self.slot));
        parts.join(" ")
    }

    /// The rendered context alone, as produced by [`render_context`].
    pub fn context_text(&self) -> String {
        self.context
            .iter()
            .map(|(s, u)| render_turn(s, u))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn assemble_prompt(
    examples: &[&SingleTurnExample],
    dialogue: &Dialogue,
    turn_index: usize,
    slot: &SlotId,
) -> Result<String> {
    let mut out = String::new();
    for e in examples {
        out.push_str(Marker::Example.token());
        out.push(' ');
        out.push_str(&e.rendered_text);
        out.push(' ');
    }
    out.push_str(Marker::Context.token());
    out.push(' ');
    out.push_str(&render_context(dialogue, turn_index)?);
    out.push(' ');
    out.push_str(Marker::Slot.token());
    out.push(' ');
    out.push_str(&slot.to_string());
    Ok(out)
}

fn expect<'a>(blocks: &[Block<'a>], i: usize, marker: Marker) -> Result<&'a str> {
    match blocks.get(i) {
        Some(b) if b.marker == marker => Ok(b.content),
        Some(b) => Err(Error::Prompt(format!(
            "expected {marker} at block {i}, found {}",
            b.marker
        ))),
        None => Err(Error::Prompt(format!("missing {marker} at block {i}"))),
    }
}

pub fn parse_prompt(input: &str) -> Result<PromptParts> {
    let blocks = split_blocks(input)?;
    let mut i = 0;
    let mut examples = Vec::new();
    while blocks.get(i).map(|b| b.marker) == Some(Marker::Example) {
        if !blocks[i].content.is_empty() {
            return Err(Error::Prompt("text directly after [example]".into()));
        }
        let end = (i + 5).min(blocks.len());
        examples.push(parse_example_blocks(&blocks[i + 1..end])?);
        i = end;
    }
    if !expect(&blocks, i, Marker::Context)?.is_empty() {
        return Err(Error::Prompt("text directly after [context]".into()));
    }
    i += 1;
    let mut context = Vec::new();
    while blocks.get(i).map(|b| b.marker) == Some(Marker::System) {
        let system = system_from_rendered(blocks[i].content);
        let user = expect(&blocks, i + 1, Marker::User)?;
        context.push((system, user.to_string()));
        i += 2;
    }
    if context.is_empty() {
        return Err(Error::Prompt("context block has no turns".into()));
    }
    let slot_text = expect(&blocks, i, Marker::Slot)?;
    if i + 1 != blocks.len() {
        return Err(Error::Prompt("unexpected blocks after the query slot".into()));
    }
    let slot = slot_text
        .parse()
        .map_err(|e| Error::Prompt(format!("bad query slot: {e}")))?;
    Ok(PromptParts {
        examples,
        context,
        slot,
    })
}

/// Gold value of `slot` at the turn, or `none`.
pub fn target_for(dialogue: &Dialogue, turn_index: usize, slot: &SlotId) -> Result<String> {
    let turn = dialogue.turn(turn_index)?;
    Ok(turn
        .gold_state()
        .get(slot)
        .unwrap_or(NONE_VALUE)
        .to_string())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMeta {
    pub dialogue_id: String,
    pub turn: usize,
    pub slot: SlotId,
    pub retrieved: Vec<String>,
}

/// One line of a training-pair file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub input: String,
    pub target: String,
    pub meta: PromptMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportConfig {
    pub k: usize,
    pub query_mode: QueryMode,
    /// 0 means rayon's default.
    pub workers: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            k: crate::retriever::DEFAULT_K,
            query_mode: QueryMode::Whole,
            workers: 0,
        }
    }
}

pub(crate) fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Build the prompt for one query: retrieve (unless k = 0) and assemble.
pub(crate) fn prompt_for(
    dialogue: &Dialogue,
    key: &QueryKey,
    retriever: &Retriever<'_>,
    k: usize,
    mode: QueryMode,
    exclude_domains: &[String],
    exclude_self: bool,
) -> Result<(String, Vec<String>)> {
    if k == 0 {
        return Ok((assemble_prompt(&[], dialogue, key.turn, &key.slot)?, Vec::new()));
    }
    let mut query = build_query(dialogue, key.turn, &key.slot, mode)?;
    for d in exclude_domains {
        query = query.excluding_domain(d.clone());
    }
    if exclude_self {
        query = query.excluding_source(dialogue.id(), key.turn);
    }
    let set = retriever.retrieve(&query, k)?;
    let examples = set.resolve(retriever.bank())?;
    let input = assemble_prompt(&examples, dialogue, key.turn, &key.slot)?;
    Ok((input, set.ids().map(str::to_string).collect()))
}

fn wrap(key: &QueryKey) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Query {
        dialogue_id: key.dialogue_id.clone(),
        turn: key.turn,
        slot: key.slot.to_string(),
        source: Box::new(e),
    }
}

/// One (input, target) pair per (dialogue, turn, slot) of the training split,
/// ordered by dialogue id, turn, slot. Examples from the query's own turn are
/// never retrieved.
pub fn export_training_pairs(
    train: &[Dialogue],
    bank: &ExampleBank,
    retriever: &Retriever<'_>,
    ontology: &Ontology,
    config: &ExportConfig,
) -> Result<Vec<PromptInstance>> {
    if !std::ptr::eq(bank, retriever.bank()) {
        return Err(Error::InvalidArgument(
            "retriever must be bound to the training bank".into(),
        ));
    }
    let mut sorted: Vec<&Dialogue> = train.iter().collect();
    sorted.sort_by(|a, b| a.id().cmp(b.id()));
    let work: Vec<(&Dialogue, QueryKey)> = sorted
        .iter()
        .flat_map(|d| {
            enumerate_queries(std::slice::from_ref(*d), ontology, None)
                .into_iter()
                .map(move |q| (*d, q))
        })
        .collect();
    with_workers(config.workers, || {
        work.par_iter()
            .map(|(d, key)| {
                let (input, retrieved) =
                    prompt_for(d, key, retriever, config.k, config.query_mode, &[], true)
                        .map_err(wrap(key))?;
                Ok(PromptInstance {
                    input,
                    target: target_for(d, key.turn, &key.slot).map_err(wrap(key))?,
                    meta: PromptMeta {
                        dialogue_id: key.dialogue_id.clone(),
                        turn: key.turn,
                        slot: key.slot.clone(),
                        retrieved,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()
    })?
}
