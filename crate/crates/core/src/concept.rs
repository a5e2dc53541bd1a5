//! Token embeddings and the continuous concept space.
//!
//! A concept token is mapped to `sum_i w_i * E[id_i]`, a point in the convex
//! hull of the embedding rows. The ablation mixers (unweighted mean, hidden
//! state feedback) produce the same [`MixedEmbedding`] type so the model only
//! ever sees vectors.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::ConceptToken;
use crate::TokenId;

/// Weight-sum deviation that is silently renormalized.
const RENORMALIZE_TOLERANCE: f64 = 1e-9;
/// Weight-sum deviation beyond which mixing is refused.
const MAX_WEIGHT_DEVIATION: f64 = 1e-3;

/// Magic bytes of the raw embedding file (little-endian f32 payload).
pub const RAW_MAGIC: [u8; 8] = *b"SOFTEMB1";
pub const RAW_HEADER_LEN: usize = 16;

/// Row-major `|V| x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    vocab_size: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(vocab_size: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "embedding shape {vocab_size}x{dim} has a zero dimension"
            )));
        }
        if data.len() != vocab_size * dim {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {vocab_size}x{dim} matrix, got {}",
                vocab_size * dim,
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("embedding entries must be finite".into()));
        }
        Ok(Self {
            vocab_size,
            dim,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("ragged embedding rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::new(n, n, data)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, id: TokenId) -> Result<&[f64]> {
        if id >= self.vocab_size {
            return Err(Error::VocabMismatch {
                id,
                vocab_size: self.vocab_size,
            });
        }
        Ok(&self.data[id * self.dim..(id + 1) * self.dim])
    }

    pub fn read_raw(mut reader: impl Read) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            context: "raw embedding matrix".into(),
            message,
        };
        let mut header = [0u8; RAW_HEADER_LEN];
        reader
            .read_exact(&mut header)
            .map_err(|e| parse_err(format!("short header: {e}")))?;
        if header[..8] != RAW_MAGIC {
            return Err(parse_err("bad magic".into()));
        }
        let vocab_size = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        let mut payload = Vec::new();
        reader
            .read_to_end(&mut payload)
            .map_err(|e| parse_err(e.to_string()))?;
        if payload.len() != vocab_size * dim * 4 {
            return Err(parse_err(format!(
                "payload is {} bytes, header promises {vocab_size}x{dim} f32",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Self::new(vocab_size, dim, data)
    }

    /// Writes the raw format; entries are narrowed to f32.
    pub fn write_raw(&self, mut writer: impl Write) -> std::io::Result<()> {
        writer.write_all(&RAW_MAGIC)?;
        writer.write_all(&(self.vocab_size as u32).to_le_bytes())?;
        writer.write_all(&(self.dim as u32).to_le_bytes())?;
        for &x in &self.data {
            writer.write_all(&(x as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_raw(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_raw(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    OneHot,
    ProbabilityWeighted,
    Average,
    HiddenStateFeedback,
}

/// A model input vector of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedEmbedding {
    pub vector: Vec<f64>,
    pub provenance: Provenance,
}

impl MixedEmbedding {
    pub fn hidden_state(vector: Vec<f64>) -> Self {
        Self {
            vector,
            provenance: Provenance::HiddenStateFeedback,
        }
    }
}

pub fn lookup(id: TokenId, embeddings: &EmbeddingMatrix) -> Result<MixedEmbedding> {
    Ok(MixedEmbedding {
        vector: embeddings.row(id)?.to_vec(),
        provenance: Provenance::OneHot,
    })
}

/// Probability-weighted sum of embedding rows, `O(n * d)`.
///
/// Weights off the simplex by more than 1e-9 are renormalized, by more than
/// 1e-3 rejected.
pub fn mix_embeddings(ct: &ConceptToken, embeddings: &EmbeddingMatrix) -> Result<MixedEmbedding> {
    let entries = ct.entries();
    if entries.is_empty() {
        return Err(Error::InvalidInput("empty concept token".into()));
    }
    let total: f64 = entries.iter().map(|e| e.weight).sum();
    let deviation = (total - 1.0).abs();
    if deviation > MAX_WEIGHT_DEVIATION {
        return Err(Error::InvalidInput(format!(
            "concept weights sum to {total}"
        )));
    }
    let scale = if deviation > RENORMALIZE_TOLERANCE {
        1.0 / total
    } else {
        1.0
    };
    // Seeding with the first term keeps a one-hot mix bit-identical to lookup.
    let first = &entries[0];
    let w0 = first.weight * scale;
    let mut vector: Vec<f64> = embeddings.row(first.id)?.iter().map(|x| w0 * x).collect();
    for e in &entries[1..] {
        let w = e.weight * scale;
        for (acc, x) in vector.iter_mut().zip(embeddings.row(e.id)?) {
            *acc += w * x;
        }
    }
    Ok(MixedEmbedding {
        vector,
        provenance: Provenance::ProbabilityWeighted,
    })
}

/// Unweighted mean of the selected rows.
pub fn average_embeddings(ids: &[TokenId], embeddings: &EmbeddingMatrix) -> Result<MixedEmbedding> {
    if ids.is_empty() {
        return Err(Error::InvalidInput("cannot average zero embeddings".into()));
    }
    if ids.len() > embeddings.vocab_size() {
        return Err(Error::InvalidInput(format!(
            "{} ids exceed vocabulary size {}",
            ids.len(),
            embeddings.vocab_size()
        )));
    }
    let mut vector = embeddings.row(ids[0])?.to_vec();
    for &id in &ids[1..] {
        for (acc, x) in vector.iter_mut().zip(embeddings.row(id)?) {
            *acc += x;
        }
    }
    if ids.len() > 1 {
        let n = ids.len() as f64;
        for v in &mut vector {
            *v /= n;
        }
    }
    Ok(MixedEmbedding {
        vector,
        provenance: Provenance::Average,
    })
}
