//! JSON-lines decode traces and heatmap export.
//!
//! One record per step, thinking steps first, then answer steps. Floats are
//! rounded to nine significant digits so that exporting, parsing and
//! exporting again yields identical bytes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::{DecodeResult, Phase, StepTrace};
use crate::error::{Error, Result};
use crate::model::Vocabulary;
use crate::TokenId;

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEntry {
    pub id: TokenId,
    pub token: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub version: u32,
    pub phase: Phase,
    pub step: usize,
    pub entropy: f64,
    pub cold_stop_counter: usize,
    pub injected: bool,
    pub chosen_id: Option<TokenId>,
    pub top: Vec<TraceEntry>,
}

/// Nearest double to `x` written with nine significant digits.
pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn record(step: &StepTrace, vocab: &Vocabulary) -> Result<TraceRecord> {
    let top = step
        .top_entries
        .iter()
        .map(|e| {
            if e.id >= vocab.len() {
                return Err(Error::VocabMismatch {
                    id: e.id,
                    vocab_size: vocab.len(),
                });
            }
            Ok(TraceEntry {
                id: e.id,
                token: vocab.token(e.id).to_owned(),
                weight: round_significant(e.weight),
            })
        })
        .collect::<Result<_>>()?;
    Ok(TraceRecord {
        version: TRACE_VERSION,
        phase: step.phase,
        step: step.step_index,
        entropy: round_significant(step.entropy),
        cold_stop_counter: step.cold_stop_counter,
        injected: step.injected,
        chosen_id: step.chosen_id,
        top,
    })
}

pub fn trace_records(result: &DecodeResult, vocab: &Vocabulary) -> Result<Vec<TraceRecord>> {
    result
        .thought_trace
        .iter()
        .chain(&result.answer_trace)
        .map(|s| record(s, vocab))
        .collect()
}

pub fn records_to_jsonl(records: &[TraceRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Parse {
            context: "trace record".into(),
            message: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn export_trace(result: &DecodeResult, vocab: &Vocabulary) -> Result<String> {
    records_to_jsonl(&trace_records(result, vocab)?)
}

/// Parses JSON lines; blank lines are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let r: TraceRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                context: format!("trace line {}", i + 1),
                message: e.to_string(),
            })?;
            if r.version != TRACE_VERSION {
                return Err(Error::Parse {
                    context: format!("trace line {}", i + 1),
                    message: format!("unsupported trace version {}", r.version),
                });
            }
            Ok(r)
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text)
}

/// Top-1 token of every thinking step followed by the emitted answer tokens.
///
/// Steps that emitted an id render that id; concept steps render their
/// heaviest entry.
pub fn project_top1(records: &[TraceRecord]) -> Vec<&str> {
    records
        .iter()
        .filter_map(|r| match r.chosen_id {
            Some(id) => r.top.iter().find(|e| e.id == id).or(r.top.first()),
            None => r.top.first(),
        })
        .map(|e| e.token.as_str())
        .collect()
}

/// [`project_top1`] straight from a decode result.
pub fn project_top1_result<'v>(result: &DecodeResult, vocab: &'v Vocabulary) -> Vec<&'v str> {
    result
        .flattened_tokens()
        .into_iter()
        .map(|id| vocab.token(id))
        .collect()
}

/// Long-format CSV: `step,phase,rank,id,token,weight`.
pub fn heatmap_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from("step,phase,rank,id,token,weight\n");
    for r in records {
        let phase = match r.phase {
            Phase::Thinking => "thinking",
            Phase::Answer => "answer",
        };
        for (rank, e) in r.top.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                phase,
                rank,
                e.id,
                csv_field(&e.token),
                e.weight
            ));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
