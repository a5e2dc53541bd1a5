//! The language-model contract and the two reference models.
//!
//! Models consume embedding vectors, never token ids, so one decode loop
//! serves discrete lookups, concept-token mixtures and hidden-state feedback.

mod markov;
mod transformer;
mod vocab;

pub use markov::{MarkovLm, MarkovLmSpec, MarkovSession};
pub use transformer::{ReferenceTransformer, ReferenceTransformerSpec, TransformerSession};
pub use vocab::{SpecialTokens, Vocabulary};

use crate::concept::{lookup, EmbeddingMatrix, MixedEmbedding};
use crate::error::{Error, Result};
use crate::TokenId;

/// Output of one incremental model step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Unnormalized next-token scores, length `|V|`.
    pub logits: Vec<f64>,
    /// Final post-norm hidden state at the last position, length `d`.
    pub hidden: Vec<f64>,
}

/// Incremental decoding state owned by a single decode.
pub trait DecodeSession: Clone + Send + Sync {
    /// Number of inputs consumed so far (prompt included).
    fn consumed(&self) -> usize;
}

pub trait LanguageModel: Send + Sync {
    type Session: DecodeSession;

    fn vocab_size(&self) -> usize;

    fn embedding_dim(&self) -> usize;

    fn embeddings(&self) -> &EmbeddingMatrix;

    /// Maximum number of inputs a session can consume, if bounded.
    fn context_capacity(&self) -> Option<usize> {
        None
    }

    /// Consumes the prompt and returns the output predicting the first new token.
    fn fresh_session(&self, prompt: &[TokenId]) -> Result<(Self::Session, StepOutput)>;

    fn step(&self, session: &mut Self::Session, input: &MixedEmbedding) -> Result<StepOutput>;

    /// Consumes the end-of-thinking marker and returns the first answer-position output.
    fn end_thinking(&self, session: &mut Self::Session, think_end: TokenId) -> Result<StepOutput> {
        let input = lookup(think_end, self.embeddings())?;
        self.step(session, &input)
    }
}

pub(crate) fn check_prompt(prompt: &[TokenId], vocab_size: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(Error::InvalidInput("prompt must not be empty".into()));
    }
    if let Some(&id) = prompt.iter().find(|&&id| id >= vocab_size) {
        return Err(Error::VocabMismatch { id, vocab_size });
    }
    Ok(())
}

/// Either reference model, chosen at runtime.
#[derive(Debug, Clone)]
pub enum ReferenceModel {
    Transformer(ReferenceTransformer),
    Markov(MarkovLm),
}

#[derive(Debug, Clone)]
pub enum ReferenceSession {
    Transformer(TransformerSession),
    Markov(MarkovSession),
}

impl DecodeSession for ReferenceSession {
    fn consumed(&self) -> usize {
        match self {
            ReferenceSession::Transformer(s) => s.consumed(),
            ReferenceSession::Markov(s) => s.consumed(),
        }
    }
}

fn mismatched() -> Error {
    Error::InvalidInput("session belongs to a different model kind".into())
}

impl LanguageModel for ReferenceModel {
    type Session = ReferenceSession;

    fn vocab_size(&self) -> usize {
        match self {
            ReferenceModel::Transformer(m) => m.vocab_size(),
            ReferenceModel::Markov(m) => m.vocab_size(),
        }
    }

    fn embedding_dim(&self) -> usize {
        match self {
            ReferenceModel::Transformer(m) => m.embedding_dim(),
            ReferenceModel::Markov(m) => m.embedding_dim(),
        }
    }

    fn embeddings(&self) -> &EmbeddingMatrix {
        match self {
            ReferenceModel::Transformer(m) => m.embeddings(),
            ReferenceModel::Markov(m) => m.embeddings(),
        }
    }

    fn context_capacity(&self) -> Option<usize> {
        match self {
            ReferenceModel::Transformer(m) => m.context_capacity(),
            ReferenceModel::Markov(m) => m.context_capacity(),
        }
    }

    fn fresh_session(&self, prompt: &[TokenId]) -> Result<(Self::Session, StepOutput)> {
        Ok(match self {
            ReferenceModel::Transformer(m) => {
                let (s, out) = m.fresh_session(prompt)?;
                (ReferenceSession::Transformer(s), out)
            }
            ReferenceModel::Markov(m) => {
                let (s, out) = m.fresh_session(prompt)?;
                (ReferenceSession::Markov(s), out)
            }
        })
    }

    fn step(&self, session: &mut Self::Session, input: &MixedEmbedding) -> Result<StepOutput> {
        match (self, session) {
            (ReferenceModel::Transformer(m), ReferenceSession::Transformer(s)) => m.step(s, input),
            (ReferenceModel::Markov(m), ReferenceSession::Markov(s)) => m.step(s, input),
            _ => Err(mismatched()),
        }
    }

    fn end_thinking(&self, session: &mut Self::Session, think_end: TokenId) -> Result<StepOutput> {
        match (self, session) {
            (ReferenceModel::Transformer(m), ReferenceSession::Transformer(s)) => {
                m.end_thinking(s, think_end)
            }
            (ReferenceModel::Markov(m), ReferenceSession::Markov(s)) => m.end_thinking(s, think_end),
            _ => Err(mismatched()),
        }
    }
}
