//! First-order Markov chain LM with identity embeddings.
//!
//! The next-token distribution after input `v` is `sum_k v[k] * T[k, :]`,
//! affine in the input, so feeding a concept token computes the exact
//! expectation over the next discrete token. Ending the thinking phase reads
//! the answer head on the last thought input instead of the chain row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use super::{check_prompt, DecodeSession, LanguageModel, StepOutput};
use crate::concept::{lookup, EmbeddingMatrix, MixedEmbedding};
use crate::error::{Error, Result};
use crate::TokenId;

const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovLmSpec {
    /// Row `i` is the next-token distribution after token `i`.
    pub transition: Vec<Vec<f64>>,
    /// Row `i` is the answer distribution when thinking ends on token `i`.
    pub answer_head: Vec<Vec<f64>>,
}

impl MarkovLmSpec {
    /// Uses the transition matrix as the answer head.
    pub fn chain(transition: Vec<Vec<f64>>) -> Self {
        Self {
            answer_head: transition.clone(),
            transition,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::chain(
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// Deterministic chain `i -> perm[i]`.
    pub fn permutation(perm: &[TokenId]) -> Self {
        let n = perm.len();
        Self::chain(
            perm.iter()
                .map(|&j| (0..n).map(|k| if k == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// Rows drawn uniformly from the simplex (flat Dirichlet).
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let matrix = |rng: &mut ChaCha20Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    let row: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                    let total: f64 = row.iter().sum();
                    row.into_iter().map(|x| x / total).collect()
                })
                .collect()
        };
        let transition = matrix(&mut rng);
        let answer_head = matrix(&mut rng);
        Self {
            transition,
            answer_head,
        }
    }

    /// A small reasoning task over `n >= 7` tokens with specials at 0, 1, 2.
    ///
    /// Content ids split into thought tokens and answer tokens. Thought rows
    /// are sparse Dirichlet draws over thought tokens plus a little
    /// `think_end` mass; answer tokens and `eos` always lead to `eos`, so a
    /// decoded answer is one answer token followed by `eos`.
    pub fn reasoning_task(n: usize, seed: u64) -> Result<Self> {
        const SPECIALS: usize = 3;
        const THINK_END_MASS: f64 = 0.02;
        if n < 7 {
            return Err(Error::InvalidConfig(format!(
                "reasoning task needs at least 7 tokens, got {n}"
            )));
        }
        let thought_count = (n - SPECIALS).div_ceil(2);
        let thoughts = SPECIALS..SPECIALS + thought_count;
        let answers = SPECIALS + thought_count..n;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let gamma = Gamma::new(0.3, 1.0).expect("valid shape");
        let sparse_row = |support: std::ops::Range<usize>, rng: &mut ChaCha20Rng| {
            let mut row = vec![0.0; n];
            for id in support {
                row[id] = gamma.sample(rng) + 1e-6;
            }
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
            row
        };
        let to_eos = {
            let mut row = vec![0.0; n];
            row[2] = 1.0;
            row
        };
        let mut transition = Vec::with_capacity(n);
        let mut answer_head = Vec::with_capacity(n);
        for id in 0..n {
            let row = if id == 0 || id == 1 || thoughts.contains(&id) {
                let mut row: Vec<f64> = sparse_row(thoughts.clone(), &mut rng)
                    .into_iter()
                    .map(|x| x * (1.0 - THINK_END_MASS))
                    .collect();
                row[1] = THINK_END_MASS;
                row
            } else {
                to_eos.clone()
            };
            transition.push(row);
            answer_head.push(if answers.contains(&id) || id == 2 {
                to_eos.clone()
            } else {
                sparse_row(answers.clone(), &mut rng)
            });
        }
        let spec = Self {
            transition,
            answer_head,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn vocab_size(&self) -> usize {
        self.transition.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.transition.len();
        if n == 0 {
            return Err(Error::InvalidConfig("empty transition matrix".into()));
        }
        for (name, m) in [("transition", &self.transition), ("answer_head", &self.answer_head)] {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(Error::InvalidConfig(format!("{name} must be {n}x{n}")));
            }
            for (i, row) in m.iter().enumerate() {
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "{name} row {i} has a negative or non-finite entry"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > ROW_TOLERANCE {
                    return Err(Error::InvalidConfig(format!(
                        "{name} row {i} sums to {total}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MarkovLm {
    n: usize,
    transition: Vec<f64>,
    answer_head: Vec<f64>,
    embeddings: EmbeddingMatrix,
}

#[derive(Debug, Clone)]
pub struct MarkovSession {
    consumed: usize,
    last_input: Vec<f64>,
}

impl DecodeSession for MarkovSession {
    fn consumed(&self) -> usize {
        self.consumed
    }
}

impl MarkovLm {
    pub fn new(spec: &MarkovLmSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.vocab_size();
        Ok(Self {
            n,
            transition: spec.transition.concat(),
            answer_head: spec.answer_head.concat(),
            embeddings: EmbeddingMatrix::identity(n)?,
        })
    }

    fn apply(&self, matrix: &[f64], input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (k, &w) in input.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(&matrix[k * self.n..(k + 1) * self.n]) {
                *o += w * p;
            }
        }
        out
    }

    /// Exact next-token probabilities after `input`.
    pub fn next_distribution(&self, input: &[f64]) -> Vec<f64> {
        self.apply(&self.transition, input)
    }

    /// Exact answer probabilities when thinking ends after `input`.
    pub fn answer_distribution(&self, input: &[f64]) -> Vec<f64> {
        self.apply(&self.answer_head, input)
    }

    fn output(probs: Vec<f64>) -> StepOutput {
        // Zero mass maps to the most negative finite log rather than -inf.
        let logits = probs
            .iter()
            .map(|&p| p.max(f64::MIN_POSITIVE).ln())
            .collect();
        StepOutput {
            logits,
            hidden: probs,
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.n {
            return Err(Error::InvalidInput(format!(
                "input has dimension {}, model expects {}",
                input.len(),
                self.n
            )));
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("input embedding is not finite".into()));
        }
        Ok(())
    }
}

impl LanguageModel for MarkovLm {
    type Session = MarkovSession;

    fn vocab_size(&self) -> usize {
        self.n
    }

    fn embedding_dim(&self) -> usize {
        self.n
    }

    fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    fn fresh_session(&self, prompt: &[TokenId]) -> Result<(Self::Session, StepOutput)> {
        check_prompt(prompt, self.n)?;
        let mut session = MarkovSession {
            consumed: 0,
            last_input: vec![0.0; self.n],
        };
        let mut out = None;
        for &id in prompt {
            out = Some(self.step(&mut session, &lookup(id, &self.embeddings)?)?);
        }
        Ok((session, out.expect("prompt is non-empty")))
    }

    fn step(&self, session: &mut Self::Session, input: &MixedEmbedding) -> Result<StepOutput> {
        self.check_input(&input.vector)?;
        session.consumed += 1;
        session.last_input.clone_from(&input.vector);
        Ok(Self::output(self.next_distribution(&input.vector)))
    }

    fn end_thinking(&self, session: &mut Self::Session, think_end: TokenId) -> Result<StepOutput> {
        let marker = lookup(think_end, &self.embeddings)?;
        let probs = self.answer_distribution(&session.last_input);
        session.consumed += 1;
        session.last_input = marker.vector;
        Ok(Self::output(probs))
    }
}
