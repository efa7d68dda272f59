//! Dialogue corpora, ontologies, value normalization and experimental splits.

mod normalize;
mod parse;
mod split;
mod types;

pub use normalize::{normalize_value, DONTCARE, NONE_VALUE};
pub use parse::{parse_corpus, parse_ontology, write_corpus, write_ontology};
pub use split::{make_split, sample_prefix, Fraction, Split, SplitInfo, SplitMode, SplitSpec};
pub use types::{
    Dialogue, DialogueState, Ontology, SlotDef, SlotId, SlotKind, Speaker, Turn, Utterance,
};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One (dialogue, turn, slot) prediction target.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct QueryKey {
    pub dialogue_id: String,
    pub turn: usize,
    pub slot: SlotId,
}

/// Every (turn, slot) pair, in corpus order then slot order. With a domain
/// filter only that domain's slots are queried.
pub fn enumerate_queries(
    dialogues: &[Dialogue],
    ontology: &Ontology,
    domain_filter: Option<&str>,
) -> Vec<QueryKey> {
    let slots: Vec<&SlotId> = ontology
        .slot_ids()
        .filter(|s| domain_filter.is_none_or(|d| s.domain() == d))
        .collect();
    let mut out = Vec::new();
    for d in dialogues {
        for t in d.turns() {
            for slot in &slots {
                out.push(QueryKey {
                    dialogue_id: d.id().to_string(),
                    turn: t.index(),
                    slot: (*slot).clone(),
                });
            }
        }
    }
    out
}

/// Union of the domains touched by `dialogues`.
pub fn corpus_domains(dialogues: &[Dialogue]) -> BTreeSet<String> {
    dialogues
        .iter()
        .flat_map(|d| d.domains().iter().cloned())
        .collect()
}

pub fn load_ontology(path: &Path) -> Result<Ontology> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ontology(&bytes)
}

pub fn load_corpus(path: &Path, ontology: &Ontology) -> Result<Vec<Dialogue>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&bytes, ontology)
}
