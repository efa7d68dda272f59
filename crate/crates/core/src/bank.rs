//! The retrieval dataset: one single-turn example per slot value that a turn
//! introduces or changes.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, DialogueState, SlotId};
use crate::error::{Error, Result};
use crate::io;
use crate::text::{render_turn, split_blocks, system_from_rendered, Marker};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SingleTurnExample {
    pub id: String,
    pub dialogue_id: String,
    pub turn_index: usize,
    pub domain: String,
    pub system_text: String,
    pub user_text: String,
    pub slot: SlotId,
    pub value: String,
    pub rendered_text: String,
}

impl SingleTurnExample {
    pub fn new(
        dialogue_id: &str,
        turn_index: usize,
        system_text: &str,
        user_text: &str,
        slot: SlotId,
        value: &str,
    ) -> Self {
        SingleTurnExample {
            id: example_id(dialogue_id, turn_index, &slot),
            dialogue_id: dialogue_id.to_string(),
            turn_index,
            domain: slot.domain().to_string(),
            system_text: system_text.to_string(),
            user_text: user_text.to_string(),
            rendered_text: render_example(system_text, user_text, &slot, value),
            slot,
            value: value.to_string(),
        }
    }

    pub fn fields(&self) -> ExampleFields {
        ExampleFields {
            system_text: self.system_text.clone(),
            user_text: self.user_text.clone(),
            slot: self.slot.clone(),
            value: self.value.clone(),
        }
    }
}

pub fn example_id(dialogue_id: &str, turn_index: usize, slot: &SlotId) -> String {
    format!("{dialogue_id}#{turn_index}#{slot}")
}

/// The four fields an example is rendered from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExampleFields {
    pub system_text: String,
    pub user_text: String,
    pub slot: SlotId,
    pub value: String,
}

/// `[system] <sys> [user] <user> [slot] <domain-name> [value] <value>`.
/// An empty system utterance renders as `none`.
pub fn render_example(system_text: &str, user_text: &str, slot: &SlotId, value: &str) -> String {
    format!(
        "{} {} {} {} {}",
        render_turn(system_text, user_text),
        Marker::Slot,
        slot,
        Marker::Value,
        value
    )
}

/// Inverse of [`render_example`].
pub fn parse_example(rendered: &str) -> Result<ExampleFields> {
    let blocks = split_blocks(rendered)?;
    parse_example_blocks(&blocks)
}

pub(crate) fn parse_example_blocks(blocks: &[crate::text::Block<'_>]) -> Result<ExampleFields> {
    let markers: Vec<Marker> = blocks.iter().map(|b| b.marker).collect();
    if markers != [Marker::System, Marker::User, Marker::Slot, Marker::Value] {
        return Err(Error::Prompt(format!(
            "example must be [system] [user] [slot] [value], got {markers:?}"
        )));
    }
    Ok(ExampleFields {
        system_text: system_from_rendered(blocks[0].content),
        user_text: blocks[1].content.to_string(),
        slot: blocks[2]
            .content
            .parse()
            .map_err(|e| Error::Prompt(format!("bad slot in example: {e}")))?,
        value: blocks[3].content.to_string(),
    })
}

/// Examples keyed by id, in build order.
#[derive(Debug, Clone, Default)]
pub struct ExampleBank {
    examples: Vec<SingleTurnExample>,
    by_id: HashMap<String, usize>,
}

impl ExampleBank {
    pub fn from_examples(examples: Vec<SingleTurnExample>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(examples.len());
        for (i, e) in examples.iter().enumerate() {
            if e.value.is_empty() || e.value == crate::corpus::NONE_VALUE {
                return Err(Error::Schema(format!("example {} has no value", e.id)));
            }
            let expected = render_example(&e.system_text, &e.user_text, &e.slot, &e.value);
            if e.rendered_text != expected {
                return Err(Error::Schema(format!(
                    "example {} rendered_text does not match its fields",
                    e.id
                )));
            }
            if e.domain != e.slot.domain() {
                return Err(Error::Schema(format!(
                    "example {} domain {} disagrees with slot {}",
                    e.id, e.domain, e.slot
                )));
            }
            if by_id.insert(e.id.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate example id {}", e.id)));
            }
        }
        Ok(ExampleBank { examples, by_id })
    }

    pub fn examples(&self) -> &[SingleTurnExample] {
        &self.examples
    }

    pub fn get(&self, id: &str) -> Option<&SingleTurnExample> {
        self.by_id.get(id).map(|&i| &self.examples[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_jsonl(path, &self.examples)
    }

    pub fn load(path: &Path) -> Result<Self> {
        ExampleBank::from_examples(io::read_jsonl(path)?)
    }
}

/// Emit one example for every slot whose value at turn t is new or differs
/// from turn t−1. Deleted slots emit nothing.
pub fn build_bank(train: &[Dialogue]) -> Result<ExampleBank> {
    let empty = DialogueState::new();
    let mut examples = Vec::new();
    for d in train {
        let mut prev = &empty;
        for turn in d.turns() {
            for (slot, value) in turn.gold_state().iter() {
                if prev.get(slot) != Some(value) {
                    examples.push(SingleTurnExample::new(
                        d.id(),
                        turn.index(),
                        turn.system().text(),
                        turn.user().text(),
                        slot.clone(),
                        value,
                    ));
                }
            }
            prev = turn.gold_state();
        }
    }
    ExampleBank::from_examples(examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Turn;
    use proptest::prelude::*;

    fn state(pairs: &[(&str, &str)]) -> DialogueState {
        pairs
            .iter()
            .map(|(k, v)| (k.parse().unwrap(), v.to_string()))
            .collect()
    }

    fn dialogue(states: Vec<DialogueState>) -> Dialogue {
        let turns = states
            .into_iter()
            .enumerate()
            .map(|(i, s)| Turn::new(i, if i == 0 { "" } else { "sys" }, &format!("u{i}"), s).unwrap())
            .collect();
        Dialogue::new("d1", turns).unwrap()
    }

    #[test]
    fn emits_state_deltas() {
        let d = dialogue(vec![
            state(&[("hotel-area", "centre")]),
            state(&[("hotel-area", "centre"), ("hotel-stars", "4")]),
        ]);
        let bank = build_bank(&[d]).unwrap();
        let got: Vec<(usize, String, &str)> = bank
            .examples()
            .iter()
            .map(|e| (e.turn_index, e.slot.to_string(), e.value.as_str()))
            .collect();
        assert_eq!(
            got,
            vec![(0, "hotel-area".into(), "centre"), (1, "hotel-stars".into(), "4")]
        );
    }

    #[test]
    fn changed_value_is_a_delta_and_deletion_is_not() {
        let d = dialogue(vec![
            state(&[("hotel-area", "centre")]),
            state(&[("hotel-area", "north")]),
            state(&[]),
        ]);
        let bank = build_bank(&[d]).unwrap();
        assert_eq!(bank.len(), 2);
        assert_eq!(bank.examples()[1].value, "north");
        assert_eq!(bank.examples()[1].turn_index, 1);
    }

    #[test]
    fn render_format() {
        let slot: SlotId = "restaurant-people".parse().unwrap();
        assert_eq!(
            render_example("how many people?", "8 please", &slot, "8"),
            "[system] how many people? [user] 8 please [slot] restaurant-people [value] 8"
        );
        assert_eq!(
            render_example("", "8 please", &slot, "8"),
            "[system] none [user] 8 please [slot] restaurant-people [value] 8"
        );
    }

    #[test]
    fn rejects_inconsistent_rendered_text() {
        let mut e = SingleTurnExample::new("d", 0, "", "hi", "hotel-area".parse().unwrap(), "north");
        e.rendered_text.push('x');
        assert!(ExampleBank::from_examples(vec![e]).is_err());
    }

    fn clean_text() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-z0-9?!.,']{1,8}", 1..6)
            .prop_map(|w| w.join(" "))
            .prop_filter("sentinel", |s| s != "none")
    }

    fn slot_id() -> impl Strategy<Value = SlotId> {
        ("[a-z]{1,8}", prop::collection::vec("[a-z]{1,6}", 1..3))
            .prop_map(|(d, n)| SlotId::new(&d, &n.join(" ")).unwrap())
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            sys in prop_oneof![Just(String::new()), clean_text()],
            user in clean_text(),
            slot in slot_id(),
            value in clean_text(),
        ) {
            let rendered = render_example(&sys, &user, &slot, &value);
            let parsed = parse_example(&rendered).unwrap();
            prop_assert_eq!(parsed, ExampleFields { system_text: sys, user_text: user, slot, value });
        }
    }
}
