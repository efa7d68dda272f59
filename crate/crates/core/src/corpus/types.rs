use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::collapse_whitespace;

/// A domain-qualified slot name, rendered as `domain-name`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SlotId {
    domain: String,
    name: String,
}

impl SlotId {
    pub fn new(domain: &str, name: &str) -> Result<Self> {
        let domain = collapse_whitespace(&domain.to_lowercase());
        let name = collapse_whitespace(&name.to_lowercase());
        if domain.is_empty() || name.is_empty() {
            return Err(Error::Schema(format!(
                "slot needs a non-empty domain and name (got {domain:?}, {name:?})"
            )));
        }
        if domain.contains('-') {
            return Err(Error::Schema(format!(
                "domain {domain:?} must not contain '-'"
            )));
        }
        Ok(SlotId { domain, name })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl fmt::Display for SlotId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.domain, self.name)
    }
}

impl FromStr for SlotId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once('-') {
            Some((domain, name)) => SlotId::new(domain, name),
            None => Err(Error::Schema(format!(
                "slot {s:?} is not of the form domain-name"
            ))),
        }
    }
}

impl TryFrom<String> for SlotId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SlotId> for String {
    fn from(slot: SlotId) -> String {
        slot.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    speaker: Speaker,
    text: String,
}

impl Utterance {
    /// User utterances must be non-empty; the system side may be empty only
    /// as the opening sentinel, which [`Turn::new`] checks.
    pub fn new(speaker: Speaker, text: &str) -> Result<Self> {
        let text = collapse_whitespace(text);
        if text.is_empty() && speaker == Speaker::User {
            return Err(Error::Schema("user utterance is empty".into()));
        }
        Ok(Utterance { speaker, text })
    }

    pub fn speaker(&self) -> Speaker {
        self.speaker
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Gold or predicted slot values at one turn. Absent slots have no key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueState(BTreeMap<SlotId, String>);

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, slot: SlotId, value: String) -> Option<String> {
        self.0.insert(slot, value)
    }

    pub fn get(&self, slot: &SlotId) -> Option<&str> {
        self.0.get(slot).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SlotId, &str)> {
        self.0.iter().map(|(k, v)| (k, v.as_str()))
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(SlotId::domain)
    }

    /// Entries whose slot belongs to `domain`.
    pub fn restricted_to(&self, domain: &str) -> DialogueState {
        DialogueState(
            self.0
                .iter()
                .filter(|(k, _)| k.domain() == domain)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }
}

impl FromIterator<(SlotId, String)> for DialogueState {
    fn from_iter<I: IntoIterator<Item = (SlotId, String)>>(iter: I) -> Self {
        DialogueState(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    index: usize,
    system: Utterance,
    user: Utterance,
    gold_state: DialogueState,
}

impl Turn {
    pub fn new(index: usize, system: &str, user: &str, gold_state: DialogueState) -> Result<Self> {
        let mut system = Utterance::new(Speaker::System, system)?;
        // The rendered form of an absent system turn; keep the grammar unambiguous.
        if system.text == crate::text::EMPTY_SYSTEM {
            system.text.clear();
        }
        if system.text().is_empty() && index != 0 {
            return Err(Error::Schema(format!(
                "system utterance at turn {index} is empty (only the opening turn may omit it)"
            )));
        }
        Ok(Turn {
            index,
            system,
            user: Utterance::new(Speaker::User, user)?,
            gold_state,
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn system(&self) -> &Utterance {
        &self.system
    }

    pub fn user(&self) -> &Utterance {
        &self.user
    }

    pub fn gold_state(&self) -> &DialogueState {
        &self.gold_state
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dialogue {
    id: String,
    domains: BTreeSet<String>,
    turns: Vec<Turn>,
}

impl Dialogue {
    /// Turns are re-indexed 0..T-1; the domain set is derived from the gold states.
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(Error::Schema("dialogue id is empty".into()));
        }
        for (i, t) in turns.iter().enumerate() {
            if t.index != i {
                return Err(Error::Schema(format!(
                    "dialogue {id}: turn indices must be 0..T-1, found {} at position {i}",
                    t.index
                )));
            }
        }
        let domains = turns
            .iter()
            .flat_map(|t| t.gold_state.domains().map(str::to_string))
            .collect();
        Ok(Dialogue { id, domains, turns })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn domains(&self) -> &BTreeSet<String> {
        &self.domains
    }

    pub fn touches(&self, domain: &str) -> bool {
        self.domains.contains(domain)
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn turn(&self, index: usize) -> Result<&Turn> {
        self.turns.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "turn {index} out of range for dialogue {} with {} turns",
                self.id,
                self.turns.len()
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Categorical,
    Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotDef {
    pub id: SlotId,
    pub kind: SlotKind,
    pub candidate_values: Vec<String>,
}

/// The slot schema. Slots are kept sorted by [`SlotId`], which fixes the
/// order queries are enumerated in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    slots: Vec<SlotDef>,
    domains: BTreeSet<String>,
}

impl Ontology {
    pub fn new(mut slots: Vec<SlotDef>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::Schema("ontology has no slots".into()));
        }
        slots.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in slots.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Schema(format!("duplicate slot {}", pair[0].id)));
            }
        }
        for def in &mut slots {
            match def.kind {
                SlotKind::Categorical => {
                    let mut seen = BTreeSet::new();
                    def.candidate_values.retain(|v| seen.insert(v.clone()));
                    if def.candidate_values.is_empty() {
                        return Err(Error::Schema(format!(
                            "categorical slot {} has no candidate values",
                            def.id
                        )));
                    }
                }
                SlotKind::Span => {
                    if !def.candidate_values.is_empty() {
                        return Err(Error::Schema(format!(
                            "span slot {} must not list candidate values",
                            def.id
                        )));
                    }
                }
            }
        }
        let domains = slots.iter().map(|s| s.id.domain().to_string()).collect();
        Ok(Ontology { slots, domains })
    }

    pub fn slots(&self) -> &[SlotDef] {
        &self.slots
    }

    pub fn slot_ids(&self) -> impl Iterator<Item = &SlotId> {
        self.slots.iter().map(|s| &s.id)
    }

    pub fn domains(&self) -> &BTreeSet<String> {
        &self.domains
    }

    pub fn contains(&self, slot: &SlotId) -> bool {
        self.get(slot).is_some()
    }

    pub fn get(&self, slot: &SlotId) -> Option<&SlotDef> {
        self.slots
            .binary_search_by(|s| s.id.cmp(slot))
            .ok()
            .map(|i| &self.slots[i])
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_id_is_canonicalised() {
        let s = SlotId::new(" Hotel ", "Price   Range").unwrap();
        assert_eq!(s.to_string(), "hotel-price range");
        assert_eq!("hotel-price range".parse::<SlotId>().unwrap(), s);
    }

    #[test]
    fn slot_id_splits_on_first_hyphen() {
        let s: SlotId = "train-leave-at".parse().unwrap();
        assert_eq!(s.domain(), "train");
        assert_eq!(s.name(), "leave-at");
    }

    #[test]
    fn slot_id_rejects_malformed() {
        assert!("hotel".parse::<SlotId>().is_err());
        assert!("-area".parse::<SlotId>().is_err());
        assert!("hotel-".parse::<SlotId>().is_err());
    }

    #[test]
    fn slot_id_serde_as_string() {
        let s: SlotId = "hotel-area".parse().unwrap();
        assert_eq!(serde_json::to_string(&s).unwrap(), "\"hotel-area\"");
        let mut st = DialogueState::new();
        st.insert(s, "centre".into());
        let json = serde_json::to_string(&st).unwrap();
        assert_eq!(json, r#"{"hotel-area":"centre"}"#);
        assert_eq!(serde_json::from_str::<DialogueState>(&json).unwrap(), st);
    }

    #[test]
    fn later_turns_need_a_system_utterance() {
        assert!(Turn::new(0, "", "hi", DialogueState::new()).is_ok());
        assert!(Turn::new(1, "  ", "hi", DialogueState::new()).is_err());
        assert!(Turn::new(0, "", "   ", DialogueState::new()).is_err());
    }

    #[test]
    fn sentinel_system_text_means_absent() {
        let t = Turn::new(0, "none", "hi", DialogueState::new()).unwrap();
        assert_eq!(t.system().text(), "");
        assert!(Turn::new(2, "none", "hi", DialogueState::new()).is_err());
        assert_eq!(Turn::new(2, "none left", "hi", DialogueState::new()).unwrap().system().text(), "none left");
    }

    #[test]
    fn ontology_rejects_duplicates_and_empty_categoricals() {
        let slot = |n: &str| SlotDef {
            id: SlotId::new("hotel", n).unwrap(),
            kind: SlotKind::Span,
            candidate_values: vec![],
        };
        assert!(Ontology::new(vec![slot("area"), slot("area")]).is_err());
        assert!(Ontology::new(vec![]).is_err());
        let cat = SlotDef {
            id: SlotId::new("hotel", "stars").unwrap(),
            kind: SlotKind::Categorical,
            candidate_values: vec![],
        };
        assert!(Ontology::new(vec![cat]).is_err());
    }

    #[test]
    fn ontology_dedups_candidates() {
        let cat = SlotDef {
            id: SlotId::new("hotel", "stars").unwrap(),
            kind: SlotKind::Categorical,
            candidate_values: vec!["1".into(), "2".into(), "1".into()],
        };
        let o = Ontology::new(vec![cat]).unwrap();
        assert_eq!(o.slots()[0].candidate_values, vec!["1", "2"]);
    }
}
