#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ictdst::corpus::{write_corpus, write_ontology, Dialogue, DialogueState, Ontology, SlotDef, SlotId, SlotKind, Turn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SLOT_NAMES: [&str; 4] = ["area", "price", "day", "people"];
pub const VALUES: [&str; 6] = ["north", "cheap", "monday", "2", "centre", "friday"];

pub fn slot(s: &str) -> SlotId {
    s.parse().unwrap()
}

pub fn ontology(domains: &[&str]) -> Ontology {
    Ontology::new(
        domains
            .iter()
            .flat_map(|d| {
                SLOT_NAMES.iter().map(move |n| SlotDef {
                    id: SlotId::new(d, n).unwrap(),
                    kind: SlotKind::Span,
                    candidate_values: vec![],
                })
            })
            .collect(),
    )
    .unwrap()
}

/// Dialogues over one or two of `domains`. Every turn sets one slot; the
/// opening user turn names the dialogue so that contexts never repeat.
pub fn corpus(domains: &[&str], n: usize, max_turns: usize, seed: u64) -> Vec<Dialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let count = rng.gen_range(1..=2);
            let mut ds: Vec<&str> = domains.choose_multiple(&mut rng, count).copied().collect();
            ds.sort();
            let turns = rng.gen_range(1..=max_turns);
            let mut state = DialogueState::new();
            let mut out = Vec::with_capacity(turns);
            for t in 0..turns {
                let d = ds[rng.gen_range(0..ds.len())];
                let name = SLOT_NAMES[rng.gen_range(0..SLOT_NAMES.len())];
                let value = VALUES[rng.gen_range(0..VALUES.len())];
                state.insert(SlotId::new(d, name).unwrap(), value.to_string());
                let system = if t == 0 {
                    String::new()
                } else {
                    format!("which {name} for the {d} ?")
                };
                let user = if t == 0 {
                    format!("hello i am caller {i} and need a {d} with {name} {value}")
                } else {
                    format!("{value} {name} please")
                };
                out.push(Turn::new(t, &system, &user, state.clone()).unwrap());
            }
            Dialogue::new(format!("d{i:05}"), out).unwrap()
        })
        .collect()
}

pub struct Files {
    pub dir: tempfile::TempDir,
    pub corpus: PathBuf,
    pub ontology: PathBuf,
}

pub fn write_files(dialogues: &[Dialogue], ontology: &Ontology) -> Files {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.json");
    let ont = dir.path().join("ontology.json");
    std::fs::write(&corpus, write_corpus(dialogues).unwrap()).unwrap();
    std::fs::write(&ont, write_ontology(ontology).unwrap()).unwrap();
    Files {
        dir,
        corpus,
        ontology: ont,
    }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
