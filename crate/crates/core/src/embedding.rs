//! Text embeddings and cosine similarity.
//!
//! The built-in [`LexicalEmbedder`] is a signed feature-hashing embedder. For
//! a lowercased, whitespace-tokenized text it collects three feature families:
//!
//! * word unigrams, keyed `w:<tok>`
//! * word bigrams, keyed `b:<tok1> <tok2>`
//! * character trigrams of each token padded as `<tok>`, keyed `c:<tri>`
//!
//! Each distinct feature with count `c` contributes `1 + ln c` (character
//! trigrams are scaled by 0.5) to bucket `h mod dim` with sign taken from bit
//! 63 of `mix(h)`, where `h` is 64-bit FNV-1a over the seed bytes
//! `b"ictdst-lexical-v1"` followed by the feature key, and `mix` is the
//! SplitMix64 finalizer. The accumulated vector is L2-normalized; an all-zero
//! result becomes the unit vector e₀.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};

pub const DEFAULT_DIM: usize = 384;
pub const MIN_LEXICAL_DIM: usize = 64;

const HASH_SEED: &[u8] = b"ictdst-lexical-v1";
const TRIGRAM_WEIGHT: f64 = 0.5;

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("vector has no components".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "vector component {i} is not finite"
            )));
        }
        Ok(Vector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Vector> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Vector(self.0.iter().map(|v| v / n).collect()))
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }
}

/// dot(a, b) / (‖a‖‖b‖), clamped to [-1, 1].
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    let dot = a.dot(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Anything that maps text to fixed-dimension vectors.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vector>;

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

pub(crate) fn stable_hash(key: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    HASH_SEED
        .iter()
        .chain(key.as_bytes())
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LexicalEmbedder {
    dim: usize,
}

impl LexicalEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < MIN_LEXICAL_DIM {
            return Err(Error::InvalidArgument(format!(
                "lexical embedder needs dim >= {MIN_LEXICAL_DIM}, got {dim}"
            )));
        }
        Ok(LexicalEmbedder { dim })
    }

    fn features(text: &str) -> BTreeMap<String, (u32, f64)> {
        let lower = text.to_lowercase();
        let tokens: Vec<&str> = lower.split_whitespace().collect();
        let mut feats: BTreeMap<String, (u32, f64)> = BTreeMap::new();
        let mut add = |key: String, weight: f64| {
            feats.entry(key).or_insert((0, weight)).0 += 1;
        };
        for tok in &tokens {
            add(format!("w:{tok}"), 1.0);
            let padded: Vec<char> = format!("<{tok}>").chars().collect();
            for tri in padded.windows(3) {
                add(format!("c:{}", tri.iter().collect::<String>()), TRIGRAM_WEIGHT);
            }
        }
        for pair in tokens.windows(2) {
            add(format!("b:{} {}", pair[0], pair[1]), 1.0);
        }
        feats
    }
}

/// Free-function form of [`LexicalEmbedder::embed`].
pub fn lexical_embed(text: &str, dim: usize) -> Result<Vector> {
    LexicalEmbedder::new(dim)?.embed(text)
}

impl EmbeddingProvider for LexicalEmbedder {
    fn name(&self) -> &str {
        "lexical-fh-v1"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        let mut acc = vec![0.0f64; self.dim];
        for (key, (count, weight)) in Self::features(text) {
            let h = stable_hash(&key);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if splitmix64(h) >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign * weight * (1.0 + (count as f64).ln());
        }
        let v = Vector(acc);
        match v.normalized() {
            Ok(n) => Ok(n),
            Err(_) => {
                let mut e0 = vec![0.0; self.dim];
                e0[0] = 1.0;
                Ok(Vector(e0))
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
}

/// Call `/embed` for a batch; vectors come back L2-normalized, in input order.
pub fn remote_embed(client: &JsonClient, texts: &[String]) -> Result<Vec<Vector>> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("embed batch is empty".into()));
    }
    let resp: EmbedResponse = client.post(
        "/embed",
        &EmbedRequest {
            texts: texts.to_vec(),
        },
    )?;
    if resp.vectors.len() != texts.len() {
        return Err(Error::Protocol(format!(
            "/embed returned {} vectors for {} texts",
            resp.vectors.len(),
            texts.len()
        )));
    }
    resp.vectors
        .into_iter()
        .map(|v| {
            if v.len() != resp.dim {
                return Err(Error::Protocol(format!(
                    "/embed vector has dim {} but response declares {}",
                    v.len(),
                    resp.dim
                )));
            }
            Vector::new(v)
                .and_then(|v| v.normalized())
                .map_err(|e| Error::Protocol(format!("/embed returned a bad vector: {e}")))
        })
        .collect()
}

/// Embedding provider backed by the model server's `/embed`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: JsonClient,
    dim: usize,
    name: String,
}

impl RemoteEmbedder {
    /// Connects and learns the dimension with a one-text probe.
    pub fn connect(endpoint: &str, policy: RetryPolicy) -> Result<Self> {
        let client = JsonClient::new(endpoint, policy);
        let probe = remote_embed(&client, &["probe".to_string()])?;
        Ok(RemoteEmbedder {
            dim: probe[0].dim(),
            name: format!("remote:{}", client.endpoint()),
            client,
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        Ok(self.embed_batch(&[text.to_string()])?.remove(0))
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>> {
        let vectors = remote_embed(&self.client, texts)?;
        if let Some(v) = vectors.iter().find(|v| v.dim() != self.dim) {
            return Err(Error::Protocol(format!(
                "/embed dim changed from {} to {}",
                self.dim,
                v.dim()
            )));
        }
        Ok(vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_closed_forms() {
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let s = 2f64.sqrt();
        let c = cosine(&v(&[1.0, 0.0]), &v(&[1.0 / s, 1.0 / s])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((cosine(&v(&[3.0, -4.0]), &v(&[3.0, -4.0])).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(Error::ZeroVector)));
        assert!(Vector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn lexical_min_dim() {
        assert!(LexicalEmbedder::new(63).is_err());
        assert!(LexicalEmbedder::new(64).is_ok());
    }

    #[test]
    fn lexical_identity_and_empty() {
        let a = lexical_embed("book a hotel", DEFAULT_DIM).unwrap();
        let b = lexical_embed("book a hotel", DEFAULT_DIM).unwrap();
        assert_eq!(a, b);
        assert!((cosine(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let e = lexical_embed("   ", DEFAULT_DIM).unwrap();
        assert_eq!(e.values()[0], 1.0);
        assert_eq!(e.norm(), 1.0);
    }

    #[test]
    fn lexical_case_insensitive() {
        assert_eq!(
            lexical_embed("Book A Hotel", 128).unwrap(),
            lexical_embed("book a hotel", 128).unwrap()
        );
    }

    #[test]
    fn lexical_similarity_ordering() {
        let q = lexical_embed("reserve a table for 8", DEFAULT_DIM).unwrap();
        let near = lexical_embed("reserve a table for eight", DEFAULT_DIM).unwrap();
        let far = lexical_embed("what time does the train leave", DEFAULT_DIM).unwrap();
        let c_near = cosine(&q, &near).unwrap();
        let c_far = cosine(&q, &far).unwrap();
        assert!(c_near > c_far, "{c_near} vs {c_far}");
    }

    #[test]
    fn hash_is_pinned() {
        // Changing the hash or seed silently invalidates persisted indices.
        assert_eq!(stable_hash(""), 0xdb0d_6710_651d_2cb3);
        assert_eq!(stable_hash("w:hotel"), 0xae76_8ebe_3efd_35d4);
        let e = lexical_embed("hotel", 64).unwrap();
        let third = 1.0 / 3.0;
        let expected = [(16, -third), (20, 2.0 * third), (23, third), (31, third), (43, third), (57, -third)];
        let nonzero: Vec<(usize, f64)> = e
            .values()
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, *x))
            .collect();
        assert_eq!(nonzero.len(), expected.len());
        for ((i, x), (j, y)) in nonzero.into_iter().zip(expected) {
            assert_eq!(i, j);
            assert!((x - y).abs() < 1e-12, "{i}: {x} vs {y}");
        }
    }

    proptest! {
        #[test]
        fn symmetric(a in prop::collection::vec(-10.0f64..10.0, 8), b in prop::collection::vec(-10.0f64..10.0, 8)) {
            let (a, b) = (v(&a), v(&b));
            if a.norm() > 1e-9 && b.norm() > 1e-9 {
                prop_assert_eq!(cosine(&a, &b).unwrap(), cosine(&b, &a).unwrap());
            }
        }

        #[test]
        fn scale_invariant(a in prop::collection::vec(-10.0f64..10.0, 8), b in prop::collection::vec(-10.0f64..10.0, 8), lambda in 0.01f64..100.0) {
            let (va, vb) = (v(&a), v(&b));
            if va.norm() > 1e-6 && vb.norm() > 1e-6 {
                let scaled = v(&a.iter().map(|x| x * lambda).collect::<Vec<_>>());
                let d = (cosine(&scaled, &vb).unwrap() - cosine(&va, &vb).unwrap()).abs();
                prop_assert!(d < 1e-12, "{}", d);
            }
        }

        #[test]
        fn lexical_unit_norm(words in prop::collection::vec("[a-z0-9]{1,10}", 1..12)) {
            let e = lexical_embed(&words.join(" "), DEFAULT_DIM).unwrap();
            prop_assert!((e.norm() - 1.0).abs() < 1e-9);
            prop_assert_eq!(e.dim(), DEFAULT_DIM);
        }
    }
}
