//! Exact path summation over all discrete thought trajectories, compared
//! with the single concept-token rollout and the single greedy path.
//!
//! The answer is read as one next-token distribution after the model ends
//! thinking following `thought_length` thought steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{lookup, mix_embeddings};
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::prob::{argmax, make_concept_token, softmax_with_temperature, ProbabilityDistribution, SamplingConfig};
use crate::TokenId;

pub const DEFAULT_PATH_BUDGET: u128 = 1_000_000;

/// Mass drift absorbed by the final renormalization of the exact marginal.
const CONSERVATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleProblem {
    pub prompt: Vec<TokenId>,
    pub thought_length: usize,
    pub think_end_id: TokenId,
    pub path_budget: u128,
}

impl OracleProblem {
    pub fn new(prompt: Vec<TokenId>, thought_length: usize, think_end_id: TokenId) -> Self {
        Self {
            prompt,
            thought_length,
            think_end_id,
            path_budget: DEFAULT_PATH_BUDGET,
        }
    }

    /// `|V|^m`, checked against the budget.
    pub fn path_count(&self, vocab_size: usize) -> Result<u128> {
        let required = (vocab_size as u128)
            .checked_pow(self.thought_length as u32)
            .unwrap_or(u128::MAX);
        if required > self.path_budget {
            return Err(Error::BudgetExceeded {
                required,
                budget: self.path_budget,
            });
        }
        Ok(required)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub exact: ProbabilityDistribution,
    pub soft: ProbabilityDistribution,
    pub greedy_path: ProbabilityDistribution,
    pub tv_exact_soft: f64,
    pub tv_exact_greedy: f64,
    pub paths_enumerated: u128,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

fn probs(logits: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax_with_temperature(logits, 1.0)?.into_inner())
}

fn answer_probs<M: LanguageModel>(model: &M, session: &M::Session, think_end: TokenId) -> Result<Vec<f64>> {
    let mut s = session.clone();
    probs(&model.end_thinking(&mut s, think_end)?.logits)
}

/// Depth-first, lexicographic accumulation of `weight * p(path) * p(y | path)`.
fn accumulate<M: LanguageModel>(
    model: &M,
    session: &M::Session,
    next: &[f64],
    weight: f64,
    remaining: usize,
    think_end: TokenId,
    acc: &mut [CompensatedSum],
) -> Result<()> {
    if remaining == 0 {
        for (a, p) in acc.iter_mut().zip(answer_probs(model, session, think_end)?) {
            a.add(weight * p);
        }
        return Ok(());
    }
    for (token, &p) in next.iter().enumerate() {
        let w = weight * p;
        if w == 0.0 {
            continue;
        }
        let mut child = session.clone();
        let out = model.step(&mut child, &lookup(token, model.embeddings())?)?;
        let child_next = probs(&out.logits)?;
        accumulate(model, &child, &child_next, w, remaining - 1, think_end, acc)?;
    }
    Ok(())
}

fn check_problem<M: LanguageModel>(model: &M, problem: &OracleProblem) -> Result<()> {
    if problem.think_end_id >= model.vocab_size() {
        return Err(Error::VocabMismatch {
            id: problem.think_end_id,
            vocab_size: model.vocab_size(),
        });
    }
    Ok(())
}

/// Answer distribution marginalized over every thought sequence of length `m`.
///
/// Branches on the first thought token run in parallel; their accumulators
/// are merged in token order so the result does not depend on scheduling.
pub fn exact_marginal<M: LanguageModel>(model: &M, problem: &OracleProblem) -> Result<ProbabilityDistribution> {
    check_problem(model, problem)?;
    problem.path_count(model.vocab_size())?;
    let v = model.vocab_size();
    let te = problem.think_end_id;
    let (session, out) = model.fresh_session(&problem.prompt)?;
    if problem.thought_length == 0 {
        return ProbabilityDistribution::new(answer_probs(model, &session, te)?);
    }
    let first = probs(&out.logits)?;
    let branches: Vec<Vec<CompensatedSum>> = (0..v)
        .into_par_iter()
        .map(|token| -> Result<Vec<CompensatedSum>> {
            let mut acc = vec![CompensatedSum::default(); v];
            if first[token] == 0.0 {
                return Ok(acc);
            }
            let mut child = session.clone();
            let child_out = model.step(&mut child, &lookup(token, model.embeddings())?)?;
            let next = probs(&child_out.logits)?;
            accumulate(model, &child, &next, first[token], problem.thought_length - 1, te, &mut acc)?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![CompensatedSum::default(); v];
    for branch in &branches {
        for (t, b) in total.iter_mut().zip(branch) {
            t.add(b.sum);
            t.add(b.compensation);
        }
    }
    let values: Vec<f64> = total.iter().map(CompensatedSum::value).collect();
    let mass: f64 = values.iter().sum();
    if (mass - 1.0).abs() > CONSERVATION_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "path masses sum to {mass}; model distributions are not normalized"
        )));
    }
    ProbabilityDistribution::new(values.into_iter().map(|x| x / mass).collect())
}

/// Answer distribution after `m` concept-token steps at temperature 1 with
/// no top-k / top-p truncation and support `top_n`.
pub fn soft_marginal<M: LanguageModel>(
    model: &M,
    problem: &OracleProblem,
    top_n: usize,
) -> Result<ProbabilityDistribution> {
    check_problem(model, problem)?;
    let v = model.vocab_size();
    if top_n == 0 || top_n > v {
        return Err(Error::InvalidConfig(format!(
            "top_n must lie in 1..={v}, got {top_n}"
        )));
    }
    let sampling = SamplingConfig {
        temperature: 1.0,
        top_k: v,
        top_p: 1.0,
        top_n,
        ..Default::default()
    };
    let (mut session, mut out) = model.fresh_session(&problem.prompt)?;
    for _ in 0..problem.thought_length {
        let dist = softmax_with_temperature(&out.logits, 1.0)?;
        let ct = make_concept_token(&dist, &sampling)?;
        out = model.step(&mut session, &mix_embeddings(&ct, model.embeddings())?)?;
    }
    ProbabilityDistribution::new(answer_probs(model, &session, problem.think_end_id)?)
}

/// Answer distribution conditioned on the argmax thought path.
pub fn greedy_path_marginal<M: LanguageModel>(
    model: &M,
    problem: &OracleProblem,
) -> Result<ProbabilityDistribution> {
    check_problem(model, problem)?;
    let (mut session, mut out) = model.fresh_session(&problem.prompt)?;
    for _ in 0..problem.thought_length {
        let token = argmax(&softmax_with_temperature(&out.logits, 1.0)?);
        out = model.step(&mut session, &lookup(token, model.embeddings())?)?;
    }
    ProbabilityDistribution::new(answer_probs(model, &session, problem.think_end_id)?)
}

pub fn compare<M: LanguageModel>(model: &M, problem: &OracleProblem, top_n: usize) -> Result<OracleReport> {
    let paths_enumerated = problem.path_count(model.vocab_size())?;
    let exact = exact_marginal(model, problem)?;
    let soft = soft_marginal(model, problem, top_n)?;
    let greedy_path = greedy_path_marginal(model, problem)?;
    Ok(OracleReport {
        tv_exact_soft: exact.total_variation(&soft)?,
        tv_exact_greedy: exact.total_variation(&greedy_path)?,
        exact,
        soft,
        greedy_path,
        paths_enumerated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MarkovLm, MarkovLmSpec};

    fn assert_close(a: &ProbabilityDistribution, b: &ProbabilityDistribution, tol: f64) {
        let tv = a.total_variation(b).unwrap();
        assert!(tv <= tol, "tv {tv} > {tol}");
    }

    #[test]
    fn zero_length_thought_is_direct_answer() {
        let spec = MarkovLmSpec::random(4, 3);
        let m = MarkovLm::new(&spec).unwrap();
        let problem = OracleProblem::new(vec![2], 0, 1);
        let exact = exact_marginal(&m, &problem).unwrap();
        for (a, b) in exact.probs().iter().zip(&spec.answer_head[2]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(soft_marginal(&m, &problem, 4).unwrap(), exact);
    }

    #[test]
    fn permutation_chain_single_path() {
        let perm = [2, 0, 3, 1];
        let spec = MarkovLmSpec::permutation(&perm);
        let m = MarkovLm::new(&spec).unwrap();
        for len in 0..5 {
            let problem = OracleProblem::new(vec![0], len, 1);
            // Prompt token 0 is fed first; the k-th successor is the last thought.
            let mut state = 0;
            for _ in 0..len {
                state = perm[state];
            }
            let exact = exact_marginal(&m, &problem).unwrap();
            assert_eq!(exact.argmax(), perm[state]);
            assert!((exact.probs()[perm[state]] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn markov_soft_equals_exact() {
        for seed in 0..5 {
            let m = MarkovLm::new(&MarkovLmSpec::random(5, seed)).unwrap();
            for len in 1..5 {
                let problem = OracleProblem::new(vec![seed as usize % 5], len, 1);
                let exact = exact_marginal(&m, &problem).unwrap();
                let soft = soft_marginal(&m, &problem, 5).unwrap();
                assert_close(&exact, &soft, 1e-9);
            }
        }
    }

    #[test]
    fn budget_is_enforced() {
        let m = MarkovLm::new(&MarkovLmSpec::random(8, 0)).unwrap();
        let mut problem = OracleProblem::new(vec![0], 7, 1);
        assert!(matches!(
            exact_marginal(&m, &problem),
            Err(Error::BudgetExceeded { required: 2_097_152, budget: 1_000_000 })
        ));
        problem.path_budget = 1 << 22;
        assert_eq!(problem.path_count(8).unwrap(), 1 << 21);
    }

    #[test]
    fn soft_top1_is_greedy_path() {
        let m = MarkovLm::new(&MarkovLmSpec::random(6, 11)).unwrap();
        let problem = OracleProblem::new(vec![3], 4, 1);
        assert_eq!(
            soft_marginal(&m, &problem, 1).unwrap(),
            greedy_path_marginal(&m, &problem).unwrap()
        );
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let mut c = CompensatedSum::default();
        let mut naive = 0.0;
        for x in [1.0, 1e-16, 1e-16, 1e-16, 1e-16, -1.0] {
            c.add(x);
            naive += x;
        }
        assert_eq!(naive, 0.0);
        assert!((c.value() - 4e-16).abs() < 1e-30);
    }
}
