//! Pass@k, generation-length accounting and hyperparameter sweeps.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{decode, DecodeConfig, StopReason};
use crate::error::{Error, Result};
use crate::model::{LanguageModel, SpecialTokens};
use crate::oracle::{exact_marginal, OracleProblem};
use crate::{rng_from_seed, TokenId};

/// `1 - C(n - c, k) / C(n, k)`.
///
/// Evaluated with exact integer binomials while they fit in 128 bits, else
/// with the telescoped product `1 - prod_{i = n-c+1}^{n} (1 - k / i)`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64> {
    if n == 0 || c > n || k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "pass@k needs 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}"
        )));
    }
    if n - c < k {
        return Ok(1.0);
    }
    if let (Some(all), Some(miss)) = (binomial(n, k), binomial(n - c, k)) {
        // (C(n,k) - C(n-c,k)) / C(n,k): one rounding per conversion.
        return Ok((all - miss) as f64 / all as f64);
    }
    let miss: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - miss)
}

fn binomial(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by (i + 1) at every step.
        acc = acc.checked_mul((n - i) as u128)? / (i + 1) as u128;
    }
    Some(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub problem_id: u64,
    pub sample_index: u64,
    pub correct: bool,
    pub thinking_length: usize,
    pub answer_length: usize,
    pub stop_reason: StopReason,
}

impl SampleOutcome {
    pub fn total_length(&self) -> usize {
        self.thinking_length + self.answer_length
    }
}

/// Mean lengths over all samples and over correct samples only.
///
/// The `*_correct` fields are `None` when no sample is correct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub mean_all: f64,
    pub mean_correct: Option<f64>,
    pub mean_thinking_all: f64,
    pub mean_thinking_correct: Option<f64>,
}

fn mean(total: u128, count: usize) -> f64 {
    total as f64 / count as f64
}

pub fn aggregate_lengths(outcomes: &[SampleOutcome]) -> Result<LengthSummary> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("no outcomes to aggregate".into()));
    }
    let sum = |f: &dyn Fn(&SampleOutcome) -> usize, only_correct: bool| -> (u128, usize) {
        outcomes
            .iter()
            .filter(|o| !only_correct || o.correct)
            .fold((0u128, 0usize), |(s, n), o| (s + f(o) as u128, n + 1))
    };
    let (all, n) = sum(&SampleOutcome::total_length, false);
    let (think_all, _) = sum(&|o| o.thinking_length, false);
    let (correct, nc) = sum(&SampleOutcome::total_length, true);
    let (think_correct, _) = sum(&|o| o.thinking_length, true);
    Ok(LengthSummary {
        mean_all: mean(all, n),
        mean_correct: (nc > 0).then(|| mean(correct, nc)),
        mean_thinking_all: mean(think_all, n),
        mean_thinking_correct: (nc > 0).then(|| mean(think_correct, nc)),
    })
}

/// A synthetic task: the answer (before `eos`) must equal `reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub id: u64,
    pub prompt: Vec<TokenId>,
    pub reference: Vec<TokenId>,
}

/// Prompts of `<bos>` plus random non-special tokens, each referenced by the
/// most likely answer under the exact marginal over `thought_length`-step thoughts.
pub fn synthetic_problems<M: LanguageModel>(
    model: &M,
    special: SpecialTokens,
    count: usize,
    prompt_len: usize,
    thought_length: usize,
    seed: u64,
) -> Result<Vec<Problem>> {
    let content: Vec<TokenId> = (0..model.vocab_size())
        .filter(|&id| id != special.bos && id != special.think_end && id != special.eos)
        .collect();
    if content.is_empty() {
        return Err(Error::InvalidConfig("vocabulary has no content tokens".into()));
    }
    let mut rng = rng_from_seed(seed);
    (0..count as u64)
        .map(|id| {
            let mut prompt = vec![special.bos];
            prompt.extend((0..prompt_len).map(|_| content[rng.random_range(0..content.len())]));
            let problem = OracleProblem::new(prompt.clone(), thought_length, special.think_end);
            let reference = vec![exact_marginal(model, &problem)?.argmax()];
            Ok(Problem {
                id,
                prompt,
                reference,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub top_n: Vec<usize>,
    pub tau: Vec<f64>,
    pub k_consecutive: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            top_n: vec![5, 10, 15, 20, 30],
            tau: vec![0.01, 0.05, 0.1, 0.2],
            k_consecutive: vec![128, 256, 512, 1024],
        }
    }
}

fn dedup_position<T: PartialEq>(axis: &[T], index: usize) -> usize {
    axis.iter().position(|x| *x == axis[index]).unwrap_or(index)
}

fn dedup_len<T: PartialEq>(axis: &[T]) -> usize {
    (0..axis.len()).filter(|&i| dedup_position(axis, i) == i).count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    /// Listed (lexicographic) position: `top_n` outermost, `k_consecutive` innermost.
    pub listed_index: usize,
    /// Position in the grid with repeated axis values removed; seeds derive from it.
    pub grid_index: u64,
    pub top_n: usize,
    pub tau: f64,
    pub k_consecutive: usize,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.top_n.is_empty() || self.tau.is_empty() || self.k_consecutive.is_empty() {
            return Err(Error::InvalidConfig("every sweep axis needs a value".into()));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<GridCell> {
        let (nt, nk) = (dedup_len(&self.tau), dedup_len(&self.k_consecutive));
        let mut cells = Vec::new();
        for (i, &top_n) in self.top_n.iter().enumerate() {
            for (j, &tau) in self.tau.iter().enumerate() {
                for (l, &k_consecutive) in self.k_consecutive.iter().enumerate() {
                    let (di, dj, dl) = (
                        dedup_rank(&self.top_n, i),
                        dedup_rank(&self.tau, j),
                        dedup_rank(&self.k_consecutive, l),
                    );
                    cells.push(GridCell {
                        listed_index: cells.len(),
                        grid_index: ((di * nt + dj) * nk + dl) as u64,
                        top_n,
                        tau,
                        k_consecutive,
                    });
                }
            }
        }
        cells
    }
}

/// Rank of `axis[index]` among the distinct values in first-seen order.
fn dedup_rank<T: PartialEq>(axis: &[T], index: usize) -> usize {
    let first = dedup_position(axis, index);
    (0..first).filter(|&i| dedup_position(axis, i) == i).count()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `h = splitmix64(base)`, then `h = splitmix64(h ^ part)` for each of
/// `grid_index`, `problem_id`, `sample_index`.
pub fn derive_seed(base_seed: u64, grid_index: u64, problem_id: u64, sample_index: u64) -> u64 {
    [grid_index, problem_id, sample_index]
        .into_iter()
        .fold(splitmix64(base_seed), |h, part| splitmix64(h ^ part))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub listed_index: usize,
    pub grid_index: u64,
    pub top_n: usize,
    pub tau: f64,
    pub k_consecutive: usize,
    pub samples: usize,
    pub correct: usize,
    pub pass_at_1: f64,
    /// `None` if every sample failed.
    pub lengths: Option<LengthSummary>,
    pub errors: Vec<String>,
}

impl SweepPoint {
    fn mean_length(&self) -> f64 {
        self.lengths.as_ref().map_or(f64::INFINITY, |l| l.mean_all)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the best cell.
    pub best: usize,
}

impl SweepReport {
    pub fn best_point(&self) -> &SweepPoint {
        &self.points[self.best]
    }
}

/// Highest pass@1, then shorter mean length, then earlier listed position.
pub fn select_best(points: &[SweepPoint]) -> Option<usize> {
    (0..points.len()).min_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pb.pass_at_1
            .total_cmp(&pa.pass_at_1)
            .then(pa.mean_length().total_cmp(&pb.mean_length()))
            .then(pa.listed_index.cmp(&pb.listed_index))
    })
}

/// Decodes every `(cell, problem, sample)` and aggregates per cell.
///
/// Per-sample failures are recorded in the point and count as incorrect.
pub fn run_sweep<M: LanguageModel>(
    model: &M,
    grid: &SweepGrid,
    problems: &[Problem],
    base: &DecodeConfig,
    samples_per_problem: usize,
) -> Result<SweepReport> {
    grid.validate()?;
    if problems.is_empty() || samples_per_problem == 0 {
        return Err(Error::InvalidConfig("sweep needs problems and samples".into()));
    }
    let cells = grid.cells();
    let tasks: Vec<(usize, usize, u64)> = (0..cells.len())
        .flat_map(|c| {
            (0..problems.len())
                .flat_map(move |p| (0..samples_per_problem as u64).map(move |s| (c, p, s)))
        })
        .collect();
    let results: Vec<Result<SampleOutcome>> = tasks
        .par_iter()
        .map(|&(c, p, s)| {
            let cell = &cells[c];
            let problem = &problems[p];
            let mut config = base.clone();
            config.sampling.top_n = cell.top_n;
            config.cold_stop.tau = cell.tau;
            config.cold_stop.k_consecutive = cell.k_consecutive;
            config.sampling.seed = derive_seed(base.sampling.seed, cell.grid_index, problem.id, s);
            let mut rng = rng_from_seed(config.sampling.seed);
            let result = decode(model, &problem.prompt, &config, &mut rng)?;
            Ok(SampleOutcome {
                problem_id: problem.id,
                sample_index: s,
                correct: result.answer_before(config.eos_id) == problem.reference.as_slice(),
                thinking_length: result.thinking_length,
                answer_length: result.answer_length,
                stop_reason: result.stop_reason,
            })
        })
        .collect();

    let per_cell = problems.len() * samples_per_problem;
    let points: Vec<SweepPoint> = cells
        .iter()
        .zip(results.chunks(per_cell))
        .map(|(cell, chunk)| {
            let mut outcomes = Vec::new();
            let mut errors = Vec::new();
            for r in chunk {
                match r {
                    Ok(o) => outcomes.push(o.clone()),
                    Err(e) => errors.push(e.to_string()),
                }
            }
            let correct = outcomes.iter().filter(|o| o.correct).count();
            SweepPoint {
                listed_index: cell.listed_index,
                grid_index: cell.grid_index,
                top_n: cell.top_n,
                tau: cell.tau,
                k_consecutive: cell.k_consecutive,
                samples: chunk.len(),
                correct,
                pass_at_1: correct as f64 / chunk.len() as f64,
                lengths: aggregate_lengths(&outcomes).ok(),
                errors,
            }
        })
        .collect();
    let best = select_best(&points).expect("grid is non-empty");
    Ok(SweepReport { points, best })
}
