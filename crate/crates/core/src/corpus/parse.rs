//! Readers and writers for the corpus and ontology JSON files.
//!
//! Corpus: `[{"id": str, "turns": [{"system": str, "user": str, "state": {"domain-slot": value}}]}]`
//!
//! Ontology: `{"slots": [{"domain": str, "name": str, "kind": "categorical"|"span", "values": [str]}]}`

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::normalize::normalize_value;
use super::types::{Dialogue, DialogueState, Ontology, SlotDef, SlotId, SlotKind, Turn};
use crate::error::{Error, Result};
use crate::text::contains_marker;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDialogue {
    id: String,
    turns: Vec<RawTurn>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTurn {
    system: String,
    user: String,
    #[serde(default)]
    state: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOntology {
    slots: Vec<RawSlot>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlot {
    domain: String,
    name: String,
    kind: SlotKind,
    #[serde(default)]
    values: Vec<String>,
}

fn decode_utf8(bytes: &[u8]) -> Result<&str> {
    std::str::from_utf8(bytes).map_err(|e| Error::Encoding {
        offset: e.valid_up_to(),
    })
}

/// serde_json reports 1-based line/column; turn that into a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn from_json<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })
}

pub fn parse_ontology(bytes: &[u8]) -> Result<Ontology> {
    let raw: RawOntology = from_json(decode_utf8(bytes)?)?;
    let slots = raw
        .slots
        .into_iter()
        .map(|s| {
            Ok(SlotDef {
                id: SlotId::new(&s.domain, &s.name)?,
                kind: s.kind,
                candidate_values: s.values.iter().filter_map(|v| normalize_value(v)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ontology::new(slots)
}

fn check_free_text(dialogue: &str, what: &str, text: &str) -> Result<()> {
    if contains_marker(text) {
        return Err(Error::Schema(format!(
            "dialogue {dialogue}: {what} contains a reserved marker token: {text:?}"
        )));
    }
    Ok(())
}

/// Parse a corpus, validating every state key against `ontology` and
/// normalizing every value. Entries that normalize to "absent" are dropped.
pub fn parse_corpus(bytes: &[u8], ontology: &Ontology) -> Result<Vec<Dialogue>> {
    let raw: Vec<RawDialogue> = from_json(decode_utf8(bytes)?)?;
    let mut seen = HashSet::new();
    let mut dialogues = Vec::with_capacity(raw.len());
    for d in raw {
        if !seen.insert(d.id.clone()) {
            return Err(Error::Schema(format!("duplicate dialogue id {:?}", d.id)));
        }
        let mut turns = Vec::with_capacity(d.turns.len());
        for (index, t) in d.turns.into_iter().enumerate() {
            check_free_text(&d.id, "system utterance", &t.system)?;
            check_free_text(&d.id, "user utterance", &t.user)?;
            let mut state = DialogueState::new();
            for (key, value) in &t.state {
                let slot: SlotId = key.parse().map_err(|_| {
                    Error::Schema(format!("malformed slot {key:?} in dialogue {}", d.id))
                })?;
                if !ontology.contains(&slot) {
                    return Err(Error::Schema(format!(
                        "unknown slot {key:?} in dialogue {}",
                        d.id
                    )));
                }
                if let Some(v) = normalize_value(value) {
                    check_free_text(&d.id, "slot value", &v)?;
                    state.insert(slot, v);
                }
            }
            let turn = Turn::new(index, &t.system, &t.user, state)
                .map_err(|e| Error::Schema(format!("dialogue {}: {e}", d.id)))?;
            turns.push(turn);
        }
        dialogues.push(Dialogue::new(d.id, turns)?);
    }
    Ok(dialogues)
}

/// Serialize dialogues back into the corpus format (normalized form).
pub fn write_corpus(dialogues: &[Dialogue]) -> Result<Vec<u8>> {
    let raw: Vec<RawDialogue> = dialogues
        .iter()
        .map(|d| RawDialogue {
            id: d.id().to_string(),
            turns: d
                .turns()
                .iter()
                .map(|t| RawTurn {
                    system: t.system().text().to_string(),
                    user: t.user().text().to_string(),
                    state: t
                        .gold_state()
                        .iter()
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .collect(),
                })
                .collect(),
        })
        .collect();
    let mut out = serde_json::to_vec_pretty(&raw).map_err(|e| Error::Protocol(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn write_ontology(ontology: &Ontology) -> Result<Vec<u8>> {
    let raw = RawOntology {
        slots: ontology
            .slots()
            .iter()
            .map(|s| RawSlot {
                domain: s.id.domain().to_string(),
                name: s.id.name().to_string(),
                kind: s.kind,
                values: s.candidate_values.clone(),
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&raw).map_err(|e| Error::Protocol(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}
