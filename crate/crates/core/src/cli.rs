//! Command-line surface: `decode`, `sweep`, `oracle-compare`, `export-heatmap`.
//!
//! Values are resolved flags first, then the `--config` file, then defaults.
//! Exit status is 0 on success, 1 for usage or configuration errors and 2
//! for runtime failures.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{LoadedModel, MarkovModelConfig, ModelConfig, RunConfigFile};
use crate::decode::{decode, DecodeConfig, Strategy};
use crate::error::{Error, Result};
use crate::metrics::{run_sweep, synthetic_problems, SweepReport};
use crate::model::LanguageModel;
use crate::oracle::{compare, OracleProblem};
use crate::prob::EntropyScope;
use crate::trace::{export_trace, heatmap_csv, parse_trace, project_top1_result, read_trace, write_text};
use crate::{rng_from_seed, TokenId};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "soft-think", version, about = "Concept-token decoding with Cold Stop")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode one prompt and write its step trace.
    Decode(DecodeArgs),
    /// Run a grid over top_n, tau and k_consecutive on synthetic problems.
    Sweep(SweepArgs),
    /// Compare exact path summation with the concept-token rollout.
    OracleCompare(OracleArgs),
    /// Convert a JSON-lines trace into a long-format CSV heatmap.
    ExportHeatmap(HeatmapArgs),
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `transformer` or `markov`.
    #[arg(long)]
    pub model: Option<String>,
    /// Vocabulary size of the reference model.
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Weight seed (transformer) or chain seed (markov).
    #[arg(long)]
    pub weight_seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct DecodeFlags {
    #[arg(long, conflicts_with = "enable_soft_thinking")]
    pub strategy: Option<String>,
    /// Same as `--strategy soft_thinking`.
    #[arg(long)]
    pub enable_soft_thinking: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    /// Concept-token support size.
    #[arg(long, visible_alias = "max-topk")]
    pub top_n: Option<usize>,
    /// Argmax instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub k_consecutive: Option<usize>,
    #[arg(long)]
    pub no_cold_stop: bool,
    #[arg(long)]
    pub max_total_tokens: Option<usize>,
    #[arg(long)]
    pub max_thinking_tokens: Option<usize>,
    /// End-of-thinking marker, resolved through the vocabulary.
    #[arg(long)]
    pub think_end_str: Option<String>,
    #[arg(long)]
    pub trace_top: Option<usize>,
    /// `full` or `filtered`.
    #[arg(long)]
    pub entropy_scope: Option<String>,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub decode: DecodeFlags,
    /// Whitespace-separated tokens or ids; defaults to `<bos>`.
    #[arg(long)]
    pub prompt: Option<String>,
    /// JSON-lines trace destination.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// JSON summary destination; stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub decode: DecodeFlags,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub problems: Option<usize>,
    /// CSV table destination.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON-lines per-cell records plus a summary; stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Thought length.
    #[arg(long)]
    pub m: usize,
    #[arg(long, visible_alias = "max-topk")]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub think_end_str: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn load_config(path: Option<&Path>) -> Result<RunConfigFile> {
    path.map_or_else(|| Ok(RunConfigFile::default()), RunConfigFile::load)
}

impl ModelArgs {
    fn apply(&self, model: &mut ModelConfig) -> Result<()> {
        match self.model.as_deref() {
            None => {}
            Some("transformer") if matches!(model, ModelConfig::Transformer(_)) => {}
            Some("markov") if matches!(model, ModelConfig::Markov(_)) => {}
            Some("transformer") => *model = ModelConfig::Transformer(Default::default()),
            Some("markov") => *model = ModelConfig::Markov(MarkovModelConfig::default()),
            Some(other) => return Err(invalid(format!("unknown model kind {other:?}"))),
        }
        match model {
            ModelConfig::Transformer(spec) => {
                if let Some(v) = self.vocab {
                    spec.vocab_size = v;
                }
                if let Some(s) = self.weight_seed {
                    spec.weight_seed = s;
                }
            }
            ModelConfig::Markov(cfg) => {
                if let Some(v) = self.vocab {
                    cfg.vocab_size = v;
                }
                if let Some(s) = self.weight_seed {
                    cfg.seed = s;
                }
            }
        }
        Ok(())
    }
}

impl DecodeFlags {
    fn apply(&self, cfg: &mut DecodeConfig, loaded: &LoadedModel) -> Result<()> {
        if let Some(name) = &self.strategy {
            cfg.strategy = Strategy::from_name(name).ok_or_else(|| {
                let names: Vec<&str> = Strategy::ALL.iter().map(|s| s.name()).collect();
                invalid(format!("unknown strategy {name:?}; expected one of {}", names.join(", ")))
            })?;
        }
        if self.enable_soft_thinking {
            cfg.strategy = Strategy::SoftThinking;
        }
        let s = &mut cfg.sampling;
        set(&mut s.seed, self.seed);
        set(&mut s.temperature, self.temperature);
        set(&mut s.top_k, self.top_k);
        set(&mut s.top_p, self.top_p);
        set(&mut s.top_n, self.top_n);
        if self.greedy {
            s.greedy = true;
        }
        if let Some(scope) = &self.entropy_scope {
            s.entropy_scope = match scope.as_str() {
                "full" => EntropyScope::Full,
                "filtered" => EntropyScope::Filtered,
                other => return Err(invalid(format!("unknown entropy scope {other:?}"))),
            };
        }
        set(&mut cfg.cold_stop.tau, self.tau);
        set(&mut cfg.cold_stop.k_consecutive, self.k_consecutive);
        if self.no_cold_stop {
            cfg.cold_stop.enabled = false;
        }
        set(&mut cfg.max_total_tokens, self.max_total_tokens);
        if self.max_thinking_tokens.is_some() {
            cfg.max_thinking_tokens = self.max_thinking_tokens;
        }
        set(&mut cfg.trace_top, self.trace_top);
        if let Some(text) = &self.think_end_str {
            cfg.think_end_id = loaded.vocab.resolve_single(text)?;
        }
        cfg.validate(loaded.model.vocab_size())
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve_prompt(text: Option<&str>, loaded: &LoadedModel) -> Result<Vec<TokenId>> {
    match text {
        None => Ok(vec![loaded.special.bos]),
        Some(t) => {
            let ids = loaded.vocab.parse(t)?;
            if ids.is_empty() {
                return Err(invalid("prompt is empty"));
            }
            Ok(ids)
        }
    }
}

/// Model, decode config and the file it came from, after flag overrides.
fn resolve(model_args: &ModelArgs, flags: &DecodeFlags) -> Result<(RunConfigFile, LoadedModel)> {
    let mut file = load_config(model_args.config.as_deref())?;
    model_args.apply(&mut file.model)?;
    let loaded = file.model.build()?;
    flags.apply(&mut file.decode, &loaded)?;
    Ok((file, loaded))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report types serialize")
}

fn emit(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

#[derive(Serialize)]
struct DecodeSummary<'a> {
    model: &'a ModelConfig,
    config: &'a DecodeConfig,
    prompt: Vec<&'a str>,
    strategy: &'static str,
    thinking_length: usize,
    answer_length: usize,
    stop_reason: &'static str,
    finish_reason: &'static str,
    answer: Vec<&'a str>,
    top1: String,
    trace: Option<&'a Path>,
}

fn run_decode(args: &DecodeArgs, stdout: &mut dyn Write) -> Result<()> {
    let (file, loaded) = resolve(&args.model, &args.decode)?;
    let prompt = resolve_prompt(args.prompt.as_deref(), &loaded)?;
    let cfg = &file.decode;
    let mut rng = rng_from_seed(cfg.sampling.seed);
    let result = decode(&loaded.model, &prompt, cfg, &mut rng)?;
    let trace_path = args.trace.as_deref().or(file.output.trace.as_deref());
    if let Some(path) = trace_path {
        write_text(path, &export_trace(&result, &loaded.vocab)?)?;
    }
    let summary = DecodeSummary {
        model: &file.model,
        config: cfg,
        prompt: prompt.iter().map(|&id| loaded.vocab.token(id)).collect(),
        strategy: result.strategy.name(),
        thinking_length: result.thinking_length,
        answer_length: result.answer_length,
        stop_reason: result.stop_reason.name(),
        finish_reason: result.finish_reason.name(),
        answer: result.answer_ids.iter().map(|&id| loaded.vocab.token(id)).collect(),
        top1: project_top1_result(&result, &loaded.vocab).join(" "),
        trace: trace_path,
    };
    let summary_path = args.summary.as_deref().or(file.output.summary.as_deref());
    emit(summary_path, &(to_json(&summary) + "\n"), stdout)
}

fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(
        "listed_index,grid_index,top_n,tau,k_consecutive,samples,correct,pass_at_1,mean_length_all,mean_length_correct,errors\n",
    );
    let opt = |v: Option<f64>| v.map_or_else(|| "--".to_owned(), |x| x.to_string());
    for p in &report.points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            p.listed_index,
            p.grid_index,
            p.top_n,
            p.tau,
            p.k_consecutive,
            p.samples,
            p.correct,
            p.pass_at_1,
            opt(p.lengths.as_ref().map(|l| l.mean_all)),
            opt(p.lengths.as_ref().and_then(|l| l.mean_correct)),
            p.errors.len()
        ));
    }
    out
}

fn run_sweep_cmd(args: &SweepArgs, stdout: &mut dyn Write) -> Result<()> {
    let (mut file, loaded) = resolve(&args.model, &args.decode)?;
    set(&mut file.sweep.samples_per_problem, args.samples);
    set(&mut file.sweep.synthetic_count, args.problems);
    let section = &file.sweep;
    let problems = match &section.problems {
        Some(list) => list.clone(),
        None => synthetic_problems(
            &loaded.model,
            loaded.special,
            section.synthetic_count,
            section.prompt_len,
            section.reference_thought_length,
            section.problem_seed,
        )?,
    };
    let report = run_sweep(
        &loaded.model,
        &section.grid,
        &problems,
        &file.decode,
        section.samples_per_problem,
    )?;
    if let Some(path) = &args.csv {
        write_text(path, &sweep_csv(&report))?;
    }
    let mut lines = String::new();
    for p in &report.points {
        lines.push_str(&to_json(&serde_json::json!({"record": "cell", "cell": p})));
        lines.push('\n');
    }
    let best = report.best_point();
    lines.push_str(&to_json(&serde_json::json!({
        "record": "summary",
        "config": &file,
        "problems": problems.len(),
        "best_listed_index": best.listed_index,
        "best": best,
    })));
    lines.push('\n');
    emit(args.summary.as_deref(), &lines, stdout)
}

#[derive(Serialize)]
struct OracleRecord {
    record: &'static str,
    vocab_size: usize,
    thought_length: usize,
    top_n: usize,
    prompt: Vec<TokenId>,
    paths_enumerated: u128,
    tv_exact_soft: f64,
    tv_exact_greedy: f64,
    exact: Vec<f64>,
    soft: Vec<f64>,
    greedy_path: Vec<f64>,
}

fn run_oracle(args: &OracleArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut file = load_config(args.model.config.as_deref())?;
    args.model.apply(&mut file.model)?;
    let loaded = file.model.build()?;
    let v = loaded.model.vocab_size();
    let top_n = args.top_n.unwrap_or(v);
    let prompt = resolve_prompt(args.prompt.as_deref(), &loaded)?;
    let think_end = match &args.think_end_str {
        Some(t) => loaded.vocab.resolve_single(t)?,
        None => loaded.special.think_end,
    };
    let problem = OracleProblem::new(prompt.clone(), args.m, think_end);
    if top_n == 0 || top_n > v {
        return Err(invalid(format!("top_n must lie in 1..={v}, got {top_n}")));
    }
    let report = compare(&loaded.model, &problem, top_n)?;
    let record = OracleRecord {
        record: "oracle_report",
        vocab_size: v,
        thought_length: args.m,
        top_n,
        prompt,
        paths_enumerated: report.paths_enumerated,
        tv_exact_soft: report.tv_exact_soft,
        tv_exact_greedy: report.tv_exact_greedy,
        exact: report.exact.into_inner(),
        soft: report.soft.into_inner(),
        greedy_path: report.greedy_path.into_inner(),
    };
    emit(args.output.as_deref(), &(to_json(&record) + "\n"), stdout)
}

fn run_heatmap(args: &HeatmapArgs, stdout: &mut dyn Write) -> Result<()> {
    let records = read_trace(&args.trace)?;
    emit(args.output.as_deref(), &heatmap_csv(&records), stdout)
}

/// Validates a trace file; used by tests and available to callers.
pub fn check_trace_text(text: &str) -> Result<usize> {
    parse_trace(text).map(|r| r.len())
}

pub fn run_command(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Decode(a) => run_decode(a, stdout),
        Command::Sweep(a) => run_sweep_cmd(a, stdout),
        Command::OracleCompare(a) => run_oracle(a, stdout),
        Command::ExportHeatmap(a) => run_heatmap(a, stdout),
    }
}

pub fn exit_code(error: &Error) -> i32 {
    if error.is_config_error() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Parses `argv` (including the program name), runs, and returns the exit status.
pub fn cli_main<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run_command(&cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
