//! The two-phase decode loop.
//!
//! All strategies share one loop: the thinking phase differs only in what is
//! fed back to the model (a sampled or argmax token, a concept-token mixture,
//! an unweighted mean, or the last hidden state); the answer phase always
//! emits discrete tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{average_embeddings, lookup, mix_embeddings, MixedEmbedding};
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::prob::{
    argmax, entropy, filter_top_k_top_p, make_concept_token, ranked_ids, sample_entries,
    softmax_with_temperature, ConceptEntry, EntropyScope, ProbabilityDistribution,
    SamplingConfig,
};
use crate::{rng_from_seed, DecodeRng, TokenId};

/// Answer budget reserved when `max_thinking_tokens` is left unset.
pub const DEFAULT_ANSWER_RESERVE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    CotSampled,
    CotGreedy,
    SoftThinking,
    SoftThinkingNoColdstop,
    AverageEmbedding,
    CoconutTf,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::CotSampled,
        Strategy::CotGreedy,
        Strategy::SoftThinking,
        Strategy::SoftThinkingNoColdstop,
        Strategy::AverageEmbedding,
        Strategy::CoconutTf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::CotSampled => "cot_sampled",
            Strategy::CotGreedy => "cot_greedy",
            Strategy::SoftThinking => "soft_thinking",
            Strategy::SoftThinkingNoColdstop => "soft_thinking_no_coldstop",
            Strategy::AverageEmbedding => "average_embedding",
            Strategy::CoconutTf => "coconut_tf",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Thinking steps commit to discrete tokens.
    pub fn is_discrete(self) -> bool {
        matches!(self, Strategy::CotSampled | Strategy::CotGreedy)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColdStopConfig {
    /// Entropy threshold in nats.
    pub tau: f64,
    /// Consecutive low-entropy steps needed to stop.
    pub k_consecutive: usize,
    pub enabled: bool,
}

impl Default for ColdStopConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            k_consecutive: 256,
            enabled: true,
        }
    }
}

impl ColdStopConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "cold stop tau must be positive, got {}",
                self.tau
            )));
        }
        if self.k_consecutive == 0 {
            return Err(Error::InvalidConfig(
                "cold stop k_consecutive must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ColdStopState {
    pub low_entropy_counter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColdStopDecision {
    Continue,
    Stop,
}

/// Counts consecutive steps with entropy below `tau`; stops once `k` are seen.
pub fn cold_stop_update(
    state: ColdStopState,
    entropy: f64,
    config: &ColdStopConfig,
) -> (ColdStopState, ColdStopDecision) {
    let counter = if entropy < config.tau {
        (state.low_entropy_counter + 1).min(config.k_consecutive)
    } else {
        0
    };
    let decision = if counter >= config.k_consecutive {
        ColdStopDecision::Stop
    } else {
        ColdStopDecision::Continue
    };
    (
        ColdStopState {
            low_entropy_counter: counter,
        },
        decision,
    )
}

/// Which distribution the natural end-of-thinking test reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopScope {
    /// Argmax of the full distribution.
    #[default]
    Full,
    /// Top entry of the filtered concept token.
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub sampling: SamplingConfig,
    pub cold_stop: ColdStopConfig,
    pub strategy: Strategy,
    pub max_total_tokens: usize,
    /// Defaults to `max_total_tokens` minus an answer reserve.
    pub max_thinking_tokens: Option<usize>,
    pub think_end_id: TokenId,
    pub eos_id: TokenId,
    pub natural_stop_scope: StopScope,
    /// Entries kept per recorded step.
    pub trace_top: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            cold_stop: ColdStopConfig::default(),
            strategy: Strategy::SoftThinking,
            max_total_tokens: 32_768,
            max_thinking_tokens: None,
            think_end_id: 1,
            eos_id: 2,
            natural_stop_scope: StopScope::Full,
            trace_top: 10,
        }
    }
}

impl DecodeConfig {
    pub fn max_thinking(&self) -> usize {
        self.max_thinking_tokens.unwrap_or_else(|| {
            let reserve = DEFAULT_ANSWER_RESERVE.min(self.max_total_tokens / 2);
            self.max_total_tokens - reserve
        })
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        self.sampling.validate()?;
        self.cold_stop.validate()?;
        for id in [self.think_end_id, self.eos_id] {
            if id >= vocab_size {
                return Err(Error::VocabMismatch { id, vocab_size });
            }
        }
        if self.max_total_tokens == 0 {
            return Err(Error::InvalidConfig("max_total_tokens must be positive".into()));
        }
        let thinking = self.max_thinking();
        if thinking == 0 {
            return Err(Error::InvalidConfig(
                "max_thinking_tokens must leave room for the end-of-thinking token".into(),
            ));
        }
        if thinking > self.max_total_tokens {
            return Err(Error::InvalidConfig(format!(
                "max_thinking_tokens ({thinking}) exceeds max_total_tokens ({})",
                self.max_total_tokens
            )));
        }
        if self.trace_top == 0 {
            return Err(Error::InvalidConfig("trace_top must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether Cold Stop is active for the configured strategy.
    pub fn cold_stop_active(&self) -> bool {
        match self.strategy {
            Strategy::CotSampled | Strategy::CotGreedy | Strategy::SoftThinkingNoColdstop => false,
            Strategy::SoftThinking | Strategy::AverageEmbedding | Strategy::CoconutTf => {
                self.cold_stop.enabled
            }
        }
    }

    pub fn is_greedy(&self) -> bool {
        self.strategy == Strategy::CotGreedy || self.sampling.greedy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Thinking,
    Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NaturalThinkEnd,
    ColdStop,
    MaxThinkingBudget,
    MaxTotalBudget,
    Eos,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::NaturalThinkEnd => "natural_think_end",
            StopReason::ColdStop => "cold_stop",
            StopReason::MaxThinkingBudget => "max_thinking_budget",
            StopReason::MaxTotalBudget => "max_total_budget",
            StopReason::Eos => "eos",
        }
    }
}

/// One recorded decode step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub step_index: usize,
    pub phase: Phase,
    /// Concept-token weights for soft steps, distribution head for discrete
    /// steps; descending, truncated to `trace_top`.
    pub top_entries: Vec<ConceptEntry>,
    pub entropy: f64,
    pub cold_stop_counter: usize,
    /// Set only on end-of-thinking records inserted by Cold Stop.
    pub injected: bool,
    /// Emitted id for discrete steps.
    pub chosen_id: Option<TokenId>,
}

impl StepTrace {
    /// The token this step stands for: the emitted id, else the top concept entry.
    pub fn token(&self) -> TokenId {
        self.chosen_id.unwrap_or(self.top_entries[0].id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub strategy: Strategy,
    pub thought_trace: Vec<StepTrace>,
    pub answer_trace: Vec<StepTrace>,
    pub answer_ids: Vec<TokenId>,
    pub thinking_length: usize,
    pub answer_length: usize,
    /// How the thinking phase ended.
    pub stop_reason: StopReason,
    /// How the answer phase ended (`eos` or `max_total_budget`).
    pub finish_reason: StopReason,
}

impl DecodeResult {
    pub fn total_length(&self) -> usize {
        self.thinking_length + self.answer_length
    }

    /// One token per thinking step (top-1 for concept steps).
    pub fn thinking_tokens(&self) -> Vec<TokenId> {
        self.thought_trace.iter().map(StepTrace::token).collect()
    }

    /// Thinking tokens followed by the answer.
    pub fn flattened_tokens(&self) -> Vec<TokenId> {
        let mut out = self.thinking_tokens();
        out.extend(&self.answer_ids);
        out
    }

    /// Answer up to, not including, the first `eos`.
    pub fn answer_before(&self, eos: TokenId) -> &[TokenId] {
        let end = self
            .answer_ids
            .iter()
            .position(|&id| id == eos)
            .unwrap_or(self.answer_ids.len());
        &self.answer_ids[..end]
    }
}

fn head_entries(dist: &ProbabilityDistribution, n: usize) -> Vec<ConceptEntry> {
    let probs = dist.probs();
    ranked_ids(probs)
        .into_iter()
        .take(n)
        .filter(|&id| probs[id] > 0.0)
        .map(|id| ConceptEntry {
            id,
            weight: probs[id],
        })
        .collect()
}

fn step_distribution(logits: &[f64], greedy: bool, sampling: &SamplingConfig) -> Result<ProbabilityDistribution> {
    let temperature = if greedy { 1.0 } else { sampling.temperature };
    softmax_with_temperature(logits, temperature)
}

fn pick_discrete<R: rand::Rng + ?Sized>(
    dist: &ProbabilityDistribution,
    greedy: bool,
    sampling: &SamplingConfig,
    rng: &mut R,
) -> Result<TokenId> {
    if greedy {
        return Ok(argmax(dist));
    }
    let support = filter_top_k_top_p(dist, sampling.top_k, sampling.top_p, usize::MAX)?;
    Ok(sample_entries(&support, rng))
}

/// Runs the configured strategy.
pub fn decode<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    config: &DecodeConfig,
    rng: &mut DecodeRng,
) -> Result<DecodeResult> {
    config.validate(model.vocab_size())?;
    let (mut session, mut out) = model.fresh_session(prompt)?;

    let room = match model.context_capacity() {
        Some(capacity) => capacity.checked_sub(prompt.len()).filter(|r| *r > 0).ok_or(
            Error::ContextOverflow { capacity },
        )?,
        None => usize::MAX,
    };
    let max_total = config.max_total_tokens.min(room);
    let max_thinking = config.max_thinking().min(max_total);
    let greedy = config.is_greedy();
    let sampling = &config.sampling;
    let think_end = config.think_end_id;
    let cold_stop_active = config.cold_stop_active();
    let trace_top = config.trace_top;

    let mut thought = Vec::new();
    let mut cold = ColdStopState::default();
    let stop_reason = loop {
        let step_index = thought.len();
        let dist = step_distribution(&out.logits, greedy, sampling)?;
        let last_slot = step_index + 1 >= max_thinking;

        let forced = |entropy: f64, counter: usize, injected: bool| StepTrace {
            step_index,
            phase: Phase::Thinking,
            top_entries: vec![ConceptEntry {
                id: think_end,
                weight: 1.0,
            }],
            entropy,
            cold_stop_counter: counter,
            injected,
            chosen_id: Some(think_end),
        };

        if config.strategy.is_discrete() {
            let chosen = pick_discrete(&dist, greedy, sampling, rng)?;
            let h = match sampling.entropy_scope {
                EntropyScope::Full => entropy(&dist),
                EntropyScope::Filtered => make_concept_token(&dist, sampling)?.filtered_entropy(),
            };
            if chosen == think_end {
                thought.push(StepTrace {
                    step_index,
                    phase: Phase::Thinking,
                    top_entries: head_entries(&dist, trace_top),
                    entropy: h,
                    cold_stop_counter: 0,
                    injected: false,
                    chosen_id: Some(chosen),
                });
                break StopReason::NaturalThinkEnd;
            }
            if last_slot {
                thought.push(forced(h, 0, false));
                break StopReason::MaxThinkingBudget;
            }
            thought.push(StepTrace {
                step_index,
                phase: Phase::Thinking,
                top_entries: head_entries(&dist, trace_top),
                entropy: h,
                cold_stop_counter: 0,
                injected: false,
                chosen_id: Some(chosen),
            });
            out = model.step(&mut session, &lookup(chosen, model.embeddings())?)?;
            continue;
        }

        let ct = make_concept_token(&dist, sampling)?;
        let h = match sampling.entropy_scope {
            EntropyScope::Full => ct.origin_entropy(),
            EntropyScope::Filtered => ct.filtered_entropy(),
        };
        let top = match config.natural_stop_scope {
            StopScope::Full => argmax(&dist),
            StopScope::Filtered => ct.top(),
        };
        if top == think_end {
            thought.push(StepTrace {
                step_index,
                phase: Phase::Thinking,
                top_entries: ct.entries().iter().take(trace_top).copied().collect(),
                entropy: h,
                cold_stop_counter: cold.low_entropy_counter,
                injected: false,
                chosen_id: Some(think_end),
            });
            break StopReason::NaturalThinkEnd;
        }
        if cold_stop_active {
            let (next, decision) = cold_stop_update(cold, h, &config.cold_stop);
            cold = next;
            if decision == ColdStopDecision::Stop {
                thought.push(forced(h, cold.low_entropy_counter, true));
                break StopReason::ColdStop;
            }
        }
        if last_slot {
            thought.push(forced(h, cold.low_entropy_counter, false));
            break StopReason::MaxThinkingBudget;
        }
        let input = match config.strategy {
            Strategy::SoftThinking | Strategy::SoftThinkingNoColdstop => {
                mix_embeddings(&ct, model.embeddings())?
            }
            Strategy::AverageEmbedding => {
                let ids: Vec<TokenId> = ct.ids().collect();
                average_embeddings(&ids, model.embeddings())?
            }
            Strategy::CoconutTf => MixedEmbedding::hidden_state(out.hidden.clone()),
            Strategy::CotSampled | Strategy::CotGreedy => unreachable!("handled above"),
        };
        thought.push(StepTrace {
            step_index,
            phase: Phase::Thinking,
            top_entries: ct.entries().iter().take(trace_top).copied().collect(),
            entropy: h,
            cold_stop_counter: cold.low_entropy_counter,
            injected: false,
            chosen_id: None,
        });
        out = model.step(&mut session, &input)?;
    };

    let thinking_length = thought.len();
    out = model.end_thinking(&mut session, think_end)?;

    let mut answer_trace = Vec::new();
    let mut answer_ids = Vec::new();
    let finish_reason = loop {
        if thinking_length + answer_ids.len() >= max_total {
            break StopReason::MaxTotalBudget;
        }
        let dist = step_distribution(&out.logits, greedy, sampling)?;
        let chosen = pick_discrete(&dist, greedy, sampling, rng)?;
        answer_trace.push(StepTrace {
            step_index: answer_ids.len(),
            phase: Phase::Answer,
            top_entries: head_entries(&dist, trace_top),
            entropy: entropy(&dist),
            cold_stop_counter: 0,
            injected: false,
            chosen_id: Some(chosen),
        });
        answer_ids.push(chosen);
        if chosen == config.eos_id {
            break StopReason::Eos;
        }
        if thinking_length + answer_ids.len() >= max_total {
            break StopReason::MaxTotalBudget;
        }
        out = model.step(&mut session, &lookup(chosen, model.embeddings())?)?;
    };

    Ok(DecodeResult {
        strategy: config.strategy,
        answer_length: answer_ids.len(),
        thought_trace: thought,
        answer_trace,
        answer_ids,
        thinking_length,
        stop_reason,
        finish_reason,
    })
}

fn require(config: &DecodeConfig, allowed: &[Strategy]) -> Result<()> {
    if allowed.contains(&config.strategy) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "strategy {} not accepted here",
            config.strategy
        )))
    }
}

pub fn decode_soft_thinking<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    config: &DecodeConfig,
    rng: &mut DecodeRng,
) -> Result<DecodeResult> {
    require(
        config,
        &[Strategy::SoftThinking, Strategy::SoftThinkingNoColdstop],
    )?;
    decode(model, prompt, config, rng)
}

pub fn decode_standard_cot<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    config: &DecodeConfig,
    rng: &mut DecodeRng,
) -> Result<DecodeResult> {
    require(config, &[Strategy::CotSampled])?;
    decode(model, prompt, config, rng)
}

pub fn decode_greedy_cot<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    config: &DecodeConfig,
) -> Result<DecodeResult> {
    require(config, &[Strategy::CotGreedy])?;
    // Greedy decoding never draws from the stream.
    decode(model, prompt, config, &mut rng_from_seed(0))
}

pub fn decode_ablation<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    config: &DecodeConfig,
    rng: &mut DecodeRng,
) -> Result<DecodeResult> {
    require(config, &[Strategy::AverageEmbedding, Strategy::CoconutTf])?;
    decode(model, prompt, config, rng)
}

#[derive(Debug, Clone)]
pub struct DecodeRequest {
    pub prompt: Vec<TokenId>,
    pub config: DecodeConfig,
}

/// Runs independent decodes in parallel; results keep request order.
///
/// Each request draws from its own stream seeded by `config.sampling.seed`.
pub fn decode_batch<M: LanguageModel>(model: &M, requests: &[DecodeRequest]) -> Vec<Result<DecodeResult>> {
    requests
        .par_iter()
        .map(|req| {
            let mut rng = rng_from_seed(req.config.sampling.seed);
            decode(model, &req.prompt, &req.config, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarkovLm, MarkovLmSpec, ReferenceTransformer, ReferenceTransformerSpec};

    fn cs(tau: f64, k: usize) -> ColdStopConfig {
        ColdStopConfig {
            tau,
            k_consecutive: k,
            enabled: true,
        }
    }

    #[test]
    fn cold_stop_stream_example() {
        let config = cs(0.1, 3);
        let mut state = ColdStopState::default();
        let mut counters = Vec::new();
        let mut stop_at = None;
        for (i, h) in [0.05, 0.2, 0.05, 0.05, 0.05].into_iter().enumerate() {
            let (next, decision) = cold_stop_update(state, h, &config);
            state = next;
            counters.push(state.low_entropy_counter);
            if decision == ColdStopDecision::Stop && stop_at.is_none() {
                stop_at = Some(i + 1);
            }
        }
        assert_eq!(counters, vec![1, 0, 1, 2, 3]);
        assert_eq!(stop_at, Some(5));
    }

    #[test]
    fn cold_stop_k1_and_never() {
        let (_, d) = cold_stop_update(ColdStopState::default(), 0.0, &cs(0.1, 1));
        assert_eq!(d, ColdStopDecision::Stop);
        let config = cs(0.1, 2);
        let mut state = ColdStopState::default();
        for _ in 0..10_000 {
            let (next, d) = cold_stop_update(state, 0.1, &config);
            assert_eq!(d, ColdStopDecision::Continue);
            assert_eq!(next.low_entropy_counter, 0);
            state = next;
        }
    }

    fn markov_config(strategy: Strategy) -> DecodeConfig {
        DecodeConfig {
            strategy,
            max_total_tokens: 64,
            max_thinking_tokens: Some(32),
            think_end_id: 1,
            eos_id: 2,
            sampling: SamplingConfig {
                top_k: 4,
                top_n: 4,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn identity_chain_cold_stops_after_two_steps() {
        let model = MarkovLm::new(&MarkovLmSpec::identity(4)).unwrap();
        let config = DecodeConfig {
            cold_stop: cs(0.01, 2),
            ..markov_config(Strategy::SoftThinking)
        };
        let r = decode(&model, &[3], &config, &mut rng_from_seed(1)).unwrap();
        assert_eq!(r.stop_reason, StopReason::ColdStop);
        assert_eq!(r.thinking_length, 2);
        assert!(r.thought_trace.iter().all(|s| s.entropy < 1e-12));
        assert!(!r.thought_trace[0].injected);
        assert!(r.thought_trace[1].injected);
        assert_eq!(r.thinking_tokens(), vec![3, 1]);
    }

    #[test]
    fn permutation_chain_is_seed_independent() {
        // 0 -> 3 -> 4 -> 1(think end), answers via the same chain: 1 -> 2 (eos).
        let model = MarkovLm::new(&MarkovLmSpec::permutation(&[3, 2, 0, 4, 1])).unwrap();
        let config = markov_config(Strategy::CotSampled);
        let first = decode(&model, &[0], &config, &mut rng_from_seed(0)).unwrap();
        for seed in 1..20 {
            let r = decode(&model, &[0], &config, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(r, first);
        }
        assert_eq!(first.thinking_tokens(), vec![3, 4, 1]);
        assert_eq!(first.stop_reason, StopReason::NaturalThinkEnd);
        assert_eq!(first.finish_reason, StopReason::Eos);
    }

    #[test]
    fn greedy_and_sampled_differ_on_uniform_chain() {
        // Two content tokens with uniform transitions; think end and eos never chosen.
        let row = vec![0.0, 0.0, 0.0, 0.5, 0.5];
        let spec = MarkovLmSpec::chain(vec![row.clone(); 5]);
        let model = MarkovLm::new(&spec).unwrap();
        let greedy = DecodeConfig {
            max_total_tokens: 12,
            max_thinking_tokens: Some(8),
            ..markov_config(Strategy::CotGreedy)
        };
        let sampled = DecodeConfig {
            strategy: Strategy::CotSampled,
            ..greedy.clone()
        };
        let g = decode_greedy_cot(&model, &[0], &greedy).unwrap();
        assert!(g.thinking_tokens()[..7].iter().all(|&t| t == 3));
        let differs = (0..10u64).any(|seed| {
            decode_standard_cot(&model, &[0], &sampled, &mut rng_from_seed(seed))
                .unwrap()
                .flattened_tokens()
                != g.flattened_tokens()
        });
        assert!(differs);
    }

    #[test]
    fn budgets_are_respected() {
        let spec = MarkovLmSpec::chain(vec![vec![0.0, 0.0, 0.0, 0.5, 0.5]; 5]);
        let model = MarkovLm::new(&spec).unwrap();
        let config = DecodeConfig {
            max_total_tokens: 10,
            max_thinking_tokens: Some(6),
            ..markov_config(Strategy::SoftThinkingNoColdstop)
        };
        let r = decode(&model, &[0], &config, &mut rng_from_seed(0)).unwrap();
        assert_eq!(r.thinking_length, 6);
        assert_eq!(r.stop_reason, StopReason::MaxThinkingBudget);
        assert_eq!(r.thought_trace.last().unwrap().token(), 1);
        assert_eq!(r.total_length(), 10);
        assert_eq!(r.finish_reason, StopReason::MaxTotalBudget);
    }

    #[test]
    fn zero_answer_budget() {
        let spec = MarkovLmSpec::chain(vec![vec![0.0, 0.0, 0.0, 0.5, 0.5]; 5]);
        let model = MarkovLm::new(&spec).unwrap();
        let config = DecodeConfig {
            max_total_tokens: 4,
            max_thinking_tokens: Some(4),
            ..markov_config(Strategy::CotGreedy)
        };
        let r = decode(&model, &[0], &config, &mut rng_from_seed(0)).unwrap();
        assert_eq!(r.thinking_length, 4);
        assert!(r.answer_ids.is_empty());
        assert_eq!(r.finish_reason, StopReason::MaxTotalBudget);
    }

    #[test]
    fn strategy_guards() {
        let model = MarkovLm::new(&MarkovLmSpec::identity(4)).unwrap();
        let config = markov_config(Strategy::SoftThinking);
        assert!(decode_greedy_cot(&model, &[0], &config).is_err());
        assert!(decode_ablation(&model, &[0], &config, &mut rng_from_seed(0)).is_err());
        assert!(decode_soft_thinking(&model, &[0], &config, &mut rng_from_seed(0)).is_ok());
    }

    #[test]
    fn config_validation() {
        let bad = DecodeConfig {
            max_total_tokens: 10,
            max_thinking_tokens: Some(11),
            ..Default::default()
        };
        assert!(matches!(bad.validate(16), Err(Error::InvalidConfig(_))));
        assert!(DecodeConfig::default().validate(16).is_ok());
        assert_eq!(DecodeConfig::default().max_thinking(), 32_768 - 512);
        let small = DecodeConfig {
            max_total_tokens: 100,
            ..Default::default()
        };
        assert_eq!(small.max_thinking(), 50);
        assert!(matches!(
            DecodeConfig::default().validate(2),
            Err(Error::VocabMismatch { .. })
        ));
    }

    #[test]
    fn average_with_one_entry_is_greedy() {
        let model = ReferenceTransformer::new(ReferenceTransformerSpec::default()).unwrap();
        let base = DecodeConfig {
            max_total_tokens: 48,
            max_thinking_tokens: Some(40),
            sampling: SamplingConfig {
                top_n: 1,
                greedy: true,
                ..Default::default()
            },
            cold_stop: ColdStopConfig {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        };
        for prompt in [[0usize, 5, 9], [0, 3, 3], [0, 12, 7]] {
            let g = decode_greedy_cot(
                &model,
                &prompt,
                &DecodeConfig {
                    strategy: Strategy::CotGreedy,
                    ..base.clone()
                },
            )
            .unwrap();
            let a = decode(
                &model,
                &prompt,
                &DecodeConfig {
                    strategy: Strategy::AverageEmbedding,
                    ..base.clone()
                },
                &mut rng_from_seed(0),
            )
            .unwrap();
            assert_eq!(a.flattened_tokens(), g.flattened_tokens());
        }
    }

    #[test]
    fn context_capacity_caps_budget() {
        let model = ReferenceTransformer::new(ReferenceTransformerSpec {
            max_positions: 20,
            ..Default::default()
        })
        .unwrap();
        let config = DecodeConfig {
            strategy: Strategy::CotGreedy,
            cold_stop: ColdStopConfig {
                enabled: false,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = decode_greedy_cot(&model, &[0, 4], &config).unwrap();
        assert!(r.total_length() <= 18);
    }
}
