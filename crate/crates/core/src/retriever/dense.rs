//! Exact dense index over example embeddings.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! offset  size        field
//! 0       8           magic b"ICTDSTIX"
//! 8       4           u32 format version (1)
//! 12      4           u32 provider name length L
//! 16      L           provider name, UTF-8
//! 16+L    4           u32 dim
//! 20+L    8           u64 row count N
//! 28+L    8*N*dim     f64 matrix, row-major
//! ```
//!
//! Row ids live next to it in `<stem>.ids.jsonl`, one JSON string per line,
//! row order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::query::RetrievalQuery;
use super::{rank, top_k, RetrievedSet};
use crate::bank::ExampleBank;
use crate::embedding::{EmbeddingProvider, Vector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"ICTDSTIX";
const VERSION: u32 = 1;
const EMBED_CHUNK: usize = 64;
const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    provider_name: String,
    dim: usize,
    ids: Vec<String>,
    data: Vec<f64>,
}

impl DenseIndex {
    /// Embed every example's rendered text, in bank order.
    pub fn build(bank: &ExampleBank, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let dim = provider.dim();
        let mut data = Vec::with_capacity(bank.len() * dim);
        let mut ids = Vec::with_capacity(bank.len());
        for chunk in bank.examples().chunks(EMBED_CHUNK) {
            let texts: Vec<String> = chunk.iter().map(|e| e.rendered_text.clone()).collect();
            let vectors = provider.embed_batch(&texts)?;
            if vectors.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "provider returned {} vectors for {} texts",
                    vectors.len(),
                    chunk.len()
                )));
            }
            for (e, v) in chunk.iter().zip(vectors) {
                if v.dim() != dim {
                    return Err(Error::Dimension {
                        expected: dim,
                        actual: v.dim(),
                    });
                }
                data.extend_from_slice(v.normalized()?.values());
                ids.push(e.id.clone());
            }
        }
        DenseIndex::from_parts(provider.name().to_string(), dim, ids, data)
    }

    pub fn from_parts(provider_name: String, dim: usize, ids: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("index dim must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::Schema(format!(
                "index has {} ids but {} floats for dim {dim}",
                ids.len(),
                data.len()
            )));
        }
        let index = DenseIndex {
            provider_name,
            dim,
            ids,
            data,
        };
        for (i, row) in index.rows().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Schema(format!("index row {i} is not finite")));
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Schema(format!(
                    "index row {i} has norm {norm}, expected unit length"
                )));
            }
        }
        Ok(index)
    }

    pub fn provider_name(&self) -> &str {
        &self.provider_name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Top `k` rows by cosine to `query` among ids accepted by `eligible`.
    /// Returns `None` when no row is eligible.
    pub fn search(&self, query: &Vector, k: usize, eligible: impl Fn(&str) -> bool) -> Option<RetrievedSet> {
        let q = query.normalized().ok()?;
        if q.dim() != self.dim || k == 0 {
            return None;
        }
        let mut any = false;
        let set = top_k(
            self.ids
                .iter()
                .zip(self.rows())
                .filter(|(id, _)| eligible(id))
                .inspect(|_| any = true)
                .map(|(id, row)| (row_score(row, q.values()), id.as_str())),
            k,
        );
        any.then_some(set)
    }

    pub fn ids_path(path: &Path) -> PathBuf {
        path.with_extension("ids.jsonl")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let name = self.provider_name.as_bytes();
        let mut out = Vec::with_capacity(28 + name.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Parse the binary matrix file; `ids` supplies the row ids.
    pub fn from_bytes(bytes: &[u8], ids: Vec<String>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Schema("not an index file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Schema(format!("unsupported index version {version}")));
        }
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Schema("provider name is not UTF-8".into()))?
            .to_string();
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        if count != ids.len() {
            return Err(Error::Schema(format!(
                "index header says {count} rows but id list has {}",
                ids.len()
            )));
        }
        let floats = count
            .checked_mul(dim)
            .ok_or_else(|| Error::Schema("index size overflows".into()))?;
        let body = r.take(floats.checked_mul(8).ok_or_else(|| Error::Schema("index size overflows".into()))?)?;
        if r.pos != bytes.len() {
            return Err(Error::Schema("trailing bytes after index matrix".into()));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        DenseIndex::from_parts(name, dim, ids, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let ids_path = Self::ids_path(path);
        let mut f = fs::File::create(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        for id in &self.ids {
            let line = serde_json::to_string(id).map_err(|e| Error::Protocol(e.to_string()))?;
            writeln!(f, "{line}").map_err(|e| Error::io(&ids_path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let ids_path = Self::ids_path(path);
        let f = fs::File::open(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
        let mut ids = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&ids_path, e))?;
            if line.is_empty() {
                continue;
            }
            ids.push(serde_json::from_str(&line).map_err(|e| {
                Error::Schema(format!("{}:{}: {e}", ids_path.display(), n + 1))
            })?);
        }
        DenseIndex::from_bytes(&bytes, ids)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Schema(format!("index file truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
}

/// Score of a unit query against an indexed (unit) row.
pub(crate) fn row_score(row: &[f64], query: &[f64]) -> f64 {
    row.iter().zip(query).map(|(r, q)| r * q).sum()
}

/// Embed the query once and return the top `k` eligible rows by cosine,
/// ties broken by ascending example id.
pub fn dense_retrieve(
    index: &DenseIndex,
    bank: &ExampleBank,
    query: &RetrievalQuery,
    k: usize,
    provider: &dyn EmbeddingProvider,
) -> Result<RetrievedSet> {
    if provider.dim() != index.dim() {
        return Err(Error::Dimension {
            expected: index.dim(),
            actual: provider.dim(),
        });
    }
    let q = embed_query(provider, query)?;
    let mut candidates = Vec::with_capacity(index.len());
    for (id, row) in index.ids().iter().zip(index.rows()) {
        let example = bank
            .get(id)
            .ok_or_else(|| Error::Retrieval(format!("indexed example {id} is not in the bank")))?;
        if query.admits(example) {
            candidates.push((row_score(row, q.values()), id.as_str()));
        }
    }
    rank(candidates, k, query)
}

pub(crate) fn embed_query(provider: &dyn EmbeddingProvider, query: &RetrievalQuery) -> Result<Vector> {
    provider.embed(&query.text())?.normalized()
}
