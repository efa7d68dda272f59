use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bank::SingleTurnExample;
use crate::corpus::{Dialogue, SlotId};
use crate::error::{Error, Result};
use crate::text::{render_turn, Marker};

/// How much of the dialogue goes into the retrieval query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    #[default]
    Whole,
    Single,
}

impl FromStr for QueryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whole" | "whole_context" => Ok(QueryMode::Whole),
            "single" | "single_turn" => Ok(QueryMode::Single),
            _ => Err(Error::InvalidArgument(format!(
                "unknown query mode {s:?} (expected whole|single)"
            ))),
        }
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryMode::Whole => "whole",
            QueryMode::Single => "single",
        })
    }
}

/// Render turns `0..=turn_index` as consecutive `[system] .. [user] ..` segments.
pub fn render_context(dialogue: &Dialogue, turn_index: usize) -> Result<String> {
    dialogue.turn(turn_index)?;
    Ok(dialogue.turns()[..=turn_index]
        .iter()
        .map(|t| render_turn(t.system().text(), t.user().text()))
        .collect::<Vec<_>>()
        .join(" "))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalQuery {
    pub context_text: String,
    pub slot: SlotId,
    pub mode: QueryMode,
    pub exclude_domains: BTreeSet<String>,
    /// Examples taken from this (dialogue id, turn) are ineligible.
    pub exclude_source: Option<(String, usize)>,
}

impl RetrievalQuery {
    /// `<context> [slot] <domain-name>`: the string that gets embedded or scored.
    pub fn text(&self) -> String {
        format!("{} {} {}", self.context_text, Marker::Slot, self.slot)
    }

    pub fn excluding_domain(mut self, domain: impl Into<String>) -> Self {
        self.exclude_domains.insert(domain.into());
        self
    }

    pub fn excluding_source(mut self, dialogue_id: impl Into<String>, turn: usize) -> Self {
        self.exclude_source = Some((dialogue_id.into(), turn));
        self
    }

    pub fn admits(&self, example: &SingleTurnExample) -> bool {
        if self.exclude_domains.contains(&example.domain) {
            return false;
        }
        match &self.exclude_source {
            Some((d, t)) => !(example.dialogue_id == *d && example.turn_index == *t),
            None => true,
        }
    }

    pub(crate) fn describe_filters(&self) -> String {
        let domains: Vec<&str> = self.exclude_domains.iter().map(String::as_str).collect();
        match &self.exclude_source {
            Some((d, t)) => format!("excluded domains {domains:?}, excluded source {d}#{t}"),
            None => format!("excluded domains {domains:?}"),
        }
    }
}

pub fn build_query(
    dialogue: &Dialogue,
    turn_index: usize,
    slot: &SlotId,
    mode: QueryMode,
) -> Result<RetrievalQuery> {
    let context_text = match mode {
        QueryMode::Whole => render_context(dialogue, turn_index)?,
        QueryMode::Single => {
            let t = dialogue.turn(turn_index)?;
            render_turn(t.system().text(), t.user().text())
        }
    };
    Ok(RetrievalQuery {
        context_text,
        slot: slot.clone(),
        mode,
        exclude_domains: BTreeSet::new(),
        exclude_source: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DialogueState, Turn};

    fn dialogue() -> Dialogue {
        Dialogue::new(
            "d",
            vec![
                Turn::new(0, "s0", "u0", DialogueState::new()).unwrap(),
                Turn::new(1, "s1", "u1", DialogueState::new()).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn whole_and_single() {
        let d = dialogue();
        let slot: SlotId = "hotel-area".parse().unwrap();
        let q = build_query(&d, 1, &slot, QueryMode::Whole).unwrap();
        assert_eq!(q.text(), "[system] s0 [user] u0 [system] s1 [user] u1 [slot] hotel-area");
        let q = build_query(&d, 1, &slot, QueryMode::Single).unwrap();
        assert_eq!(q.text(), "[system] s1 [user] u1 [slot] hotel-area");
    }

    #[test]
    fn turn_out_of_range() {
        let slot: SlotId = "hotel-area".parse().unwrap();
        assert!(matches!(
            build_query(&dialogue(), 5, &slot, QueryMode::Whole),
            Err(Error::InvalidArgument(_))
        ));
    }
}
