//! Top-k example retrieval: exact dense cosine, Okapi BM25, and uniform random.
//!
//! All strategies honour the query's domain and source exclusions and break
//! score ties by ascending example id.

mod bm25;
mod dense;
mod query;

pub use bm25::{bm25_retrieve, idf as bm25_idf, term_score as bm25_term_score, tokenize, Bm25Index, B, K1};
pub use dense::{dense_retrieve, DenseIndex};
pub use query::{build_query, render_context, QueryMode, RetrievalQuery};

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{ExampleBank, SingleTurnExample};
use crate::embedding::{splitmix64, stable_hash, EmbeddingProvider};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredId {
    pub id: String,
    pub score: f64,
}

/// Retrieved examples, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub items: Vec<ScoredId>,
    pub k: usize,
}

impl RetrievedSet {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|s| s.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Look the ids up in `bank`, preserving order.
    pub fn resolve<'b>(&self, bank: &'b ExampleBank) -> Result<Vec<&'b SingleTurnExample>> {
        self.ids()
            .map(|id| {
                bank.get(id)
                    .ok_or_else(|| Error::Retrieval(format!("retrieved id {id} is not in the bank")))
            })
            .collect()
    }
}

// Heap entry ordered so that the *worse* candidate compares greater.
struct Ranked<'a> {
    score: f64,
    id: &'a str,
}

impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked<'_> {}

/// Bounded-heap partial selection of the best `k` (score desc, id asc).
pub fn top_k<'s>(candidates: impl IntoIterator<Item = (f64, &'s str)>, k: usize) -> RetrievedSet {
    let mut heap: BinaryHeap<Ranked<'_>> = BinaryHeap::with_capacity(k + 1);
    for (score, id) in candidates {
        let entry = Ranked { score, id };
        if heap.len() < k {
            heap.push(entry);
        } else if heap.peek().is_some_and(|worst| entry < *worst) {
            heap.pop();
            heap.push(entry);
        }
    }
    RetrievedSet {
        items: heap
            .into_sorted_vec()
            .into_iter()
            .map(|r| ScoredId {
                id: r.id.to_string(),
                score: r.score,
            })
            .collect(),
        k,
    }
}

/// Shared tail of the scored strategies: validate k, reject an empty pool.
pub(crate) fn rank(candidates: Vec<(f64, &str)>, k: usize, query: &RetrievalQuery) -> Result<RetrievedSet> {
    check_k(k)?;
    if candidates.is_empty() {
        return Err(empty_pool(query));
    }
    Ok(top_k(candidates, k))
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("retrieval needs k >= 1".into()));
    }
    Ok(())
}

fn empty_pool(query: &RetrievalQuery) -> Error {
    Error::Retrieval(format!(
        "no eligible examples for slot {} ({})",
        query.slot,
        query.describe_filters()
    ))
}

/// Uniform sample without replacement from the eligible pool. The generator
/// is seeded from `seed` and the query text, so each query draws
/// independently but reproducibly. All scores are 0.
pub fn random_retrieve(bank: &ExampleBank, query: &RetrievalQuery, k: usize, seed: u64) -> Result<RetrievedSet> {
    check_k(k)?;
    let mut pool: Vec<&str> = bank
        .examples()
        .iter()
        .filter(|e| query.admits(e))
        .map(|e| e.id.as_str())
        .collect();
    if pool.is_empty() {
        return Err(empty_pool(query));
    }
    pool.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ stable_hash(&query.text())));
    let picked = rand::seq::index::sample(&mut rng, pool.len(), k.min(pool.len()));
    Ok(RetrievedSet {
        items: picked
            .into_iter()
            .map(|i| ScoredId {
                id: pool[i].to_string(),
                score: 0.0,
            })
            .collect(),
        k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Dense,
    Bm25,
    Random,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Strategy::Dense),
            "bm25" => Ok(Strategy::Bm25),
            "random" => Ok(Strategy::Random),
            _ => Err(Error::InvalidArgument(format!(
                "unknown retriever {s:?} (expected dense|bm25|random)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Dense => "dense",
            Strategy::Bm25 => "bm25",
            Strategy::Random => "random",
        })
    }
}

enum Backend<'a> {
    Dense {
        index: DenseIndex,
        provider: &'a dyn EmbeddingProvider,
        // index row -> bank position
        positions: Vec<usize>,
    },
    Bm25(Bm25Index),
    Random { seed: u64 },
}

/// A retrieval strategy bound to one example bank.
pub struct Retriever<'a> {
    bank: &'a ExampleBank,
    backend: Backend<'a>,
}

impl<'a> Retriever<'a> {
    pub fn dense(bank: &'a ExampleBank, index: DenseIndex, provider: &'a dyn EmbeddingProvider) -> Result<Self> {
        if provider.dim() != index.dim() {
            return Err(Error::Dimension {
                expected: index.dim(),
                actual: provider.dim(),
            });
        }
        let positions = index
            .ids()
            .iter()
            .map(|id| {
                bank.position(id)
                    .ok_or_else(|| Error::Retrieval(format!("indexed example {id} is not in the bank")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Retriever {
            bank,
            backend: Backend::Dense {
                index,
                provider,
                positions,
            },
        })
    }

    pub fn bm25(bank: &'a ExampleBank) -> Self {
        Retriever {
            bank,
            backend: Backend::Bm25(Bm25Index::build(bank)),
        }
    }

    pub fn random(bank: &'a ExampleBank, seed: u64) -> Self {
        Retriever {
            bank,
            backend: Backend::Random { seed },
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self.backend {
            Backend::Dense { .. } => Strategy::Dense,
            Backend::Bm25(_) => Strategy::Bm25,
            Backend::Random { .. } => Strategy::Random,
        }
    }

    pub fn bank(&self) -> &'a ExampleBank {
        self.bank
    }

    pub fn retrieve(&self, query: &RetrievalQuery, k: usize) -> Result<RetrievedSet> {
        match &self.backend {
            Backend::Dense {
                index,
                provider,
                positions,
            } => {
                check_k(k)?;
                let q = dense::embed_query(*provider, query)?;
                let examples = self.bank.examples();
                let candidates = index
                    .rows()
                    .zip(positions)
                    .filter(|(_, &p)| query.admits(&examples[p]))
                    .map(|(row, &p)| (dense::row_score(row, q.values()), examples[p].id.as_str()))
                    .collect();
                rank(candidates, k, query)
            }
            Backend::Bm25(index) => bm25_retrieve(index, self.bank, query, k),
            Backend::Random { seed } => random_retrieve(self.bank, query, k, *seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::SingleTurnExample;
    use crate::corpus::SlotId;
    use crate::embedding::LexicalEmbedder;
    use std::collections::BTreeSet;

    fn example(d: &str, turn: usize, slot: &str, user: &str) -> SingleTurnExample {
        SingleTurnExample::new(d, turn, "sys", user, slot.parse().unwrap(), "x")
    }

    fn query(text: &str, slot: &str) -> RetrievalQuery {
        RetrievalQuery {
            context_text: text.to_string(),
            slot: slot.parse::<SlotId>().unwrap(),
            mode: QueryMode::Whole,
            exclude_domains: BTreeSet::new(),
            exclude_source: None,
        }
    }

    fn bank() -> ExampleBank {
        ExampleBank::from_examples(vec![
            example("a", 0, "hotel-area", "a hotel in the north"),
            example("b", 0, "train-day", "a train on monday"),
            example("c", 0, "restaurant-food", "cheap indian food"),
            example("c", 1, "restaurant-area", "in the centre please"),
        ])
        .unwrap()
    }

    #[test]
    fn self_similarity_ranks_first() {
        let bank = bank();
        let emb = LexicalEmbedder::new(256).unwrap();
        let index = DenseIndex::build(&bank, &emb).unwrap();
        let target = &bank.examples()[2];
        let q = emb.embed(&target.rendered_text).unwrap();
        let set = index.search(&q, 2, |_| true).unwrap();
        assert_eq!(set.items[0].id, target.id);
        assert!((set.items[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn retriever_matches_free_function() {
        let bank = bank();
        let emb = LexicalEmbedder::new(256).unwrap();
        let index = DenseIndex::build(&bank, &emb).unwrap();
        let q = query("[system] sys [user] cheap food in the centre", "restaurant-area");
        let r = Retriever::dense(&bank, index.clone(), &emb).unwrap();
        assert_eq!(r.retrieve(&q, 3).unwrap(), dense_retrieve(&index, &bank, &q, 3, &emb).unwrap());
    }

    #[test]
    fn exclusions_and_empty_pool() {
        let bank = ExampleBank::from_examples(vec![
            example("a", 0, "restaurant-food", "indian"),
            example("b", 0, "restaurant-area", "north"),
        ])
        .unwrap();
        let q = query("[system] x [user] y", "restaurant-food").excluding_domain("restaurant");
        let emb = LexicalEmbedder::new(64).unwrap();
        let index = DenseIndex::build(&bank, &emb).unwrap();
        for r in [
            Retriever::dense(&bank, index, &emb).unwrap(),
            Retriever::bm25(&bank),
            Retriever::random(&bank, 1),
        ] {
            match r.retrieve(&q, 3) {
                Err(Error::Retrieval(msg)) => assert!(msg.contains("restaurant"), "{msg}"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn source_exclusion() {
        let bank = bank();
        let q = query("[system] sys [user] in the centre please", "restaurant-area").excluding_source("c", 1);
        let set = Retriever::bm25(&bank).retrieve(&q, 4).unwrap();
        assert_eq!(set.len(), 3);
        assert!(set.ids().all(|id| id != "c#1#restaurant-area"));
    }

    #[test]
    fn k_zero_rejected() {
        let bank = bank();
        assert!(matches!(
            Retriever::bm25(&bank).retrieve(&query("[system] a [user] b", "hotel-area"), 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn bm25_no_overlap_falls_back_to_id_order() {
        let bank = ExampleBank::from_examples(vec![
            example("z", 0, "hotel-area", "alpha"),
            example("m", 0, "hotel-area", "beta"),
            example("a", 0, "hotel-area", "gamma"),
        ])
        .unwrap();
        let index = Bm25Index::build(&bank);
        let mut q = query("", "hotel-area");
        q.context_text = "qqq".into();
        // The query text still contains "[slot]" and the slot name, which every
        // document shares, so compare against a query with no shared token.
        let terms = vec!["qqq".to_string()];
        for i in 0..bank.len() {
            assert_eq!(index.score(i, &terms), 0.0);
        }
        let none_shared: Vec<(f64, &str)> = bank.examples().iter().map(|e| (0.0, e.id.as_str())).collect();
        let set = rank(none_shared, 2, &q).unwrap();
        assert_eq!(set.ids().collect::<Vec<_>>(), vec!["a#0#hotel-area", "m#0#hotel-area"]);
    }

    #[test]
    fn bm25_identical_documents_tie_by_id() {
        let bank = ExampleBank::from_examples(vec![
            example("b", 0, "hotel-area", "same words"),
            example("a", 0, "hotel-area", "same words"),
        ])
        .unwrap();
        let set = Retriever::bm25(&bank)
            .retrieve(&query("[system] same [user] words", "hotel-area"), 2)
            .unwrap();
        assert_eq!(set.items[0].score, set.items[1].score);
        assert_eq!(set.items[0].id, "a#0#hotel-area");
    }

    #[test]
    fn random_is_deterministic_and_exhaustive() {
        let bank = bank();
        let q = query("[system] a [user] b", "hotel-area");
        let a = random_retrieve(&bank, &q, 2, 9).unwrap();
        let b = random_retrieve(&bank, &q, 2, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.items.iter().all(|s| s.score == 0.0));
        let all = random_retrieve(&bank, &q, 10, 9).unwrap();
        let mut ids: Vec<&str> = all.ids().collect();
        ids.sort();
        let mut expected: Vec<&str> = bank.examples().iter().map(|e| e.id.as_str()).collect();
        expected.sort();
        assert_eq!(ids, expected);
    }

    #[test]
    fn strategy_parse() {
        assert_eq!("bm25".parse::<Strategy>().unwrap(), Strategy::Bm25);
        assert!("faiss".parse::<Strategy>().is_err());
        assert_eq!("single".parse::<QueryMode>().unwrap(), QueryMode::Single);
    }
}
