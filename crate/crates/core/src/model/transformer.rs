//! Seeded pre-norm decoder-only transformer operating on embedding inputs.
//!
//! Weights are drawn from ChaCha20 with one stream per parameter tensor, so
//! a spec always yields the same weights regardless of construction order.
//! The input embedding matrix and the output projection are separate tensors.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_prompt, DecodeSession, LanguageModel, SpecialTokens, StepOutput};
use crate::concept::{lookup, EmbeddingMatrix, MixedEmbedding};
use crate::error::{Error, Result};
use crate::TokenId;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceTransformerSpec {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_multiplier: usize,
    /// Length of the learned absolute position table.
    pub max_positions: usize,
    pub weight_seed: u64,
    pub special: SpecialTokens,
}

impl Default for ReferenceTransformerSpec {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            dim: 32,
            layers: 2,
            heads: 2,
            ffn_multiplier: 4,
            max_positions: 512,
            weight_seed: 0,
            special: SpecialTokens::default(),
        }
    }
}

impl ReferenceTransformerSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("dim", self.dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_multiplier", self.ffn_multiplier),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "heads ({}) must divide dim ({})",
                self.heads, self.dim
            )));
        }
        self.special.validate(self.vocab_size)
    }
}

/// `in_dim x out_dim` row-major weight applied as `x * W + b`.
#[derive(Debug, Clone)]
struct Linear {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Linear {
    fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weight[i * self.out_dim..(i + 1) * self.out_dim];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gain: Vec<f64>,
    bias: Vec<f64>,
}

impl LayerNorm {
    fn unit(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    attn_norm: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ffn_norm: LayerNorm,
    up: Linear,
    down: Linear,
}

/// Draws parameter tensors, one ChaCha20 stream per tensor.
struct Initializer {
    seed: u64,
    scale: f64,
    next_stream: u64,
}

impl Initializer {
    fn normal(&mut self, len: usize) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.next_stream);
        self.next_stream += 1;
        (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * self.scale
            })
            .collect()
    }

    fn linear(&mut self, in_dim: usize, out_dim: usize) -> Linear {
        Linear {
            in_dim,
            out_dim,
            weight: self.normal(in_dim * out_dim),
            bias: vec![0.0; out_dim],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceTransformer {
    spec: ReferenceTransformerSpec,
    embeddings: EmbeddingMatrix,
    positions: Vec<f64>,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    output: Linear,
}

/// Per-layer key/value cache.
#[derive(Debug, Clone)]
pub struct TransformerSession {
    len: usize,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl DecodeSession for TransformerSession {
    fn consumed(&self) -> usize {
        self.len
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn add_assign(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

impl ReferenceTransformer {
    pub fn new(spec: ReferenceTransformerSpec) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        let ffn = spec.ffn_multiplier * d;
        let mut init = Initializer {
            seed: spec.weight_seed,
            scale: 1.0 / (d as f64).sqrt(),
            next_stream: 0,
        };
        let embeddings = EmbeddingMatrix::new(spec.vocab_size, d, init.normal(spec.vocab_size * d))?;
        let positions = init.normal(spec.max_positions * d);
        let blocks = (0..spec.layers)
            .map(|_| Block {
                attn_norm: LayerNorm::unit(d),
                wq: init.linear(d, d),
                wk: init.linear(d, d),
                wv: init.linear(d, d),
                wo: init.linear(d, d),
                ffn_norm: LayerNorm::unit(d),
                up: init.linear(d, ffn),
                down: init.linear(ffn, d),
            })
            .collect();
        let output = init.linear(d, spec.vocab_size);
        Ok(Self {
            spec,
            embeddings,
            positions,
            blocks,
            final_norm: LayerNorm::unit(d),
            output,
        })
    }

    pub fn spec(&self) -> &ReferenceTransformerSpec {
        &self.spec
    }

    pub fn special(&self) -> SpecialTokens {
        self.spec.special
    }

    fn head_dim(&self) -> usize {
        self.spec.dim / self.spec.heads
    }

    fn empty_session(&self) -> TransformerSession {
        TransformerSession {
            len: 0,
            keys: vec![Vec::new(); self.blocks.len()],
            values: vec![Vec::new(); self.blocks.len()],
        }
    }

    fn check_input(&self, input: &[f64], position: usize) -> Result<()> {
        if input.len() != self.spec.dim {
            return Err(Error::InvalidInput(format!(
                "input has dimension {}, model expects {}",
                input.len(),
                self.spec.dim
            )));
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("input embedding is not finite".into()));
        }
        if position >= self.spec.max_positions {
            return Err(Error::ContextOverflow {
                capacity: self.spec.max_positions,
            });
        }
        Ok(())
    }

    fn position_row(&self, position: usize) -> &[f64] {
        let d = self.spec.dim;
        &self.positions[position * d..(position + 1) * d]
    }

    /// Attention of one query against `len` cached keys/values (rows of `d`).
    fn attend(&self, query: &[f64], keys: &[f64], values: &[f64], len: usize) -> Vec<f64> {
        let d = self.spec.dim;
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = vec![0.0; d];
        let mut scores = vec![0.0; len];
        for h in 0..self.spec.heads {
            let span = h * hd..(h + 1) * hd;
            let q = &query[span.clone()];
            for (t, s) in scores.iter_mut().enumerate() {
                let k = &keys[t * d + span.start..t * d + span.end];
                *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in &mut scores {
                *s = (*s - max).exp();
                total += *s;
            }
            for (t, s) in scores.iter().enumerate() {
                let w = s / total;
                let v = &values[t * d + span.start..t * d + span.end];
                for (o, x) in out[span.clone()].iter_mut().zip(v) {
                    *o += w * x;
                }
            }
        }
        out
    }

    fn ffn(block: &Block, x: &[f64]) -> Vec<f64> {
        let h = block.ffn_norm.forward(x);
        let up: Vec<f64> = block.up.forward(&h).into_iter().map(gelu).collect();
        block.down.forward(&up)
    }

    fn head(&self, x: &[f64]) -> StepOutput {
        let hidden = self.final_norm.forward(x);
        StepOutput {
            logits: self.output.forward(&hidden),
            hidden,
        }
    }

    /// Runs a whole input sequence without a cache, layer by layer.
    ///
    /// Returns one output per position; used to cross-check incremental decoding.
    pub fn forward_sequence(&self, inputs: &[Vec<f64>]) -> Result<Vec<StepOutput>> {
        for (t, x) in inputs.iter().enumerate() {
            self.check_input(x, t)?;
        }
        let d = self.spec.dim;
        let mut xs: Vec<Vec<f64>> = inputs
            .iter()
            .enumerate()
            .map(|(t, x)| x.iter().zip(self.position_row(t)).map(|(a, b)| a + b).collect())
            .collect();
        for block in &self.blocks {
            let normed: Vec<Vec<f64>> = xs.iter().map(|x| block.attn_norm.forward(x)).collect();
            let queries: Vec<Vec<f64>> = normed.iter().map(|h| block.wq.forward(h)).collect();
            let keys: Vec<f64> = normed.iter().flat_map(|h| block.wk.forward(h)).collect();
            let values: Vec<f64> = normed.iter().flat_map(|h| block.wv.forward(h)).collect();
            for (t, x) in xs.iter_mut().enumerate() {
                let len = t + 1;
                let attn = self.attend(&queries[t], &keys[..len * d], &values[..len * d], len);
                add_assign(x, &block.wo.forward(&attn));
            }
            for x in &mut xs {
                let f = Self::ffn(block, x);
                add_assign(x, &f);
            }
        }
        Ok(xs.iter().map(|x| self.head(x)).collect())
    }
}

impl LanguageModel for ReferenceTransformer {
    type Session = TransformerSession;

    fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    fn embedding_dim(&self) -> usize {
        self.spec.dim
    }

    fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    fn context_capacity(&self) -> Option<usize> {
        Some(self.spec.max_positions)
    }

    fn fresh_session(&self, prompt: &[TokenId]) -> Result<(Self::Session, StepOutput)> {
        check_prompt(prompt, self.spec.vocab_size)?;
        let mut session = self.empty_session();
        let mut out = None;
        for &id in prompt {
            out = Some(self.step(&mut session, &lookup(id, &self.embeddings)?)?);
        }
        Ok((session, out.expect("prompt is non-empty")))
    }

    fn step(&self, session: &mut Self::Session, input: &MixedEmbedding) -> Result<StepOutput> {
        let t = session.len;
        self.check_input(&input.vector, t)?;
        let mut x: Vec<f64> = input
            .vector
            .iter()
            .zip(self.position_row(t))
            .map(|(a, b)| a + b)
            .collect();
        for (l, block) in self.blocks.iter().enumerate() {
            let h = block.attn_norm.forward(&x);
            let q = block.wq.forward(&h);
            session.keys[l].extend(block.wk.forward(&h));
            session.values[l].extend(block.wv.forward(&h));
            let attn = self.attend(&q, &session.keys[l], &session.values[l], t + 1);
            add_assign(&mut x, &block.wo.forward(&attn));
            let f = Self::ffn(block, &x);
            add_assign(&mut x, &f);
        }
        session.len += 1;
        Ok(self.head(&x))
    }
}
