//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use soft_thinking::concept::lookup;
use soft_thinking::model::LanguageModel;
use soft_thinking::prob::softmax_with_temperature;
use soft_thinking::TokenId;

const PREC: usize = 320;
const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: std::cell::RefCell<Consts> = std::cell::RefCell::new(Consts::new().expect("constants cache"));
}

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

fn to_f64(x: &BigFloat) -> f64 {
    let s = format!("{x}");
    s.parse().unwrap_or_else(|_| panic!("unparseable BigFloat {s}"))
}

/// `-sum p ln(max(p, 1e-12))` carried out at 320 bits.
pub fn hp_entropy(probs: &[f64]) -> f64 {
    CONSTS.with(|cc| hp_entropy_with(probs, &mut cc.borrow_mut()))
}

fn hp_entropy_with(probs: &[f64], cc: &mut Consts) -> f64 {
    let clamp = big(1e-12);
    let mut acc = BigFloat::from_f64(0.0, PREC);
    for &p in probs {
        if p == 0.0 {
            continue;
        }
        let bp = big(p);
        let arg = if bp.cmp(&clamp).unwrap() < 0 { clamp.clone() } else { bp.clone() };
        let term = bp.mul(&arg.ln(PREC, RM, cc), PREC, RM);
        acc = acc.sub(&term, PREC, RM);
    }
    to_f64(&acc)
}

/// `softmax(logits / t)` at 320 bits.
pub fn hp_softmax(logits: &[f64], t: f64) -> Vec<f64> {
    CONSTS.with(|cc| hp_softmax_with(logits, t, &mut cc.borrow_mut()))
}

fn hp_softmax_with(logits: &[f64], t: f64, cc: &mut Consts) -> Vec<f64> {
    let bt = big(t);
    let exps: Vec<BigFloat> = logits
        .iter()
        .map(|&l| big(l).div(&bt, PREC, RM).exp(PREC, RM, cc))
        .collect();
    let mut total = BigFloat::from_f64(0.0, PREC);
    for e in &exps {
        total = total.add(e, PREC, RM);
    }
    exps.iter().map(|e| to_f64(&e.div(&total, PREC, RM))).collect()
}

/// Pascal rows `C(i, j)` for `i <= n` as big integers.
pub fn binomial_table(n: usize) -> Vec<Vec<BigInt>> {
    let mut rows: Vec<Vec<BigInt>> = vec![vec![BigInt::one()]];
    for i in 1..=n {
        let prev = &rows[i - 1];
        let mut row = vec![BigInt::one(); i + 1];
        for j in 1..i {
            row[j] = &prev[j - 1] + &prev[j];
        }
        rows.push(row);
    }
    rows
}

fn choose(table: &[Vec<BigInt>], n: usize, k: usize) -> BigInt {
    if k > n {
        BigInt::zero()
    } else {
        table[n][k].clone()
    }
}

/// `1 - C(n-c, k) / C(n, k)` as an exact rational, rounded once to f64.
pub fn rational_pass_at_k(table: &[Vec<BigInt>], n: usize, c: usize, k: usize) -> f64 {
    let all = choose(table, n, k);
    let miss = choose(table, n - c, k);
    let r = BigRational::new(&all - &miss, all);
    r.to_f64().expect("finite ratio")
}

/// First index at which the last `k` stream entries are all `< tau`.
pub fn cold_stop_reference(stream: &[f64], tau: f64, k: usize) -> Option<usize> {
    (0..stream.len()).find(|&i| i + 1 >= k && stream[i + 1 - k..=i].iter().all(|&h| h < tau))
}

fn probs_of(logits: &[f64]) -> Vec<f64> {
    softmax_with_temperature(logits, 1.0).unwrap().into_inner()
}

/// Answer marginal over three-token thoughts written as explicit loops.
///
/// Returns the marginal and the number of `(t1, t2, t3, answer)` terms summed.
pub fn nested_loop_marginal_m3<M: LanguageModel>(
    model: &M,
    prompt: &[TokenId],
    think_end: TokenId,
) -> (Vec<f64>, usize) {
    let v = model.vocab_size();
    let e = model.embeddings();
    let (s0, o0) = model.fresh_session(prompt).unwrap();
    let p1 = probs_of(&o0.logits);
    let mut out = vec![0.0; v];
    let mut terms = 0;
    for t1 in 0..v {
        let mut s1 = s0.clone();
        let p2 = probs_of(&model.step(&mut s1, &lookup(t1, e).unwrap()).unwrap().logits);
        for t2 in 0..v {
            let mut s2 = s1.clone();
            let p3 = probs_of(&model.step(&mut s2, &lookup(t2, e).unwrap()).unwrap().logits);
            for t3 in 0..v {
                let mut s3 = s2.clone();
                model.step(&mut s3, &lookup(t3, e).unwrap()).unwrap();
                let answer = probs_of(&model.end_thinking(&mut s3, think_end).unwrap().logits);
                let w = p1[t1] * p2[t2] * p3[t3];
                for y in 0..v {
                    out[y] += w * answer[y];
                    terms += 1;
                }
            }
        }
    }
    (out, terms)
}

/// Random probability vector with occasional exact zeros and tiny masses.
pub fn random_distribution<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len)
        .map(|_| match rng.random_range(0..10) {
            0 => 0.0,
            1 => rng.random::<f64>() * 1e-14,
            2 => rng.random::<f64>() * 1e-9,
            _ => -rng.random::<f64>().max(1e-300).ln(),
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
