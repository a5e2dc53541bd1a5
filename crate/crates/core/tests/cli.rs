use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use soft_thinking::cli::{cli_main, EXIT_CONFIG, EXIT_OK};
use soft_thinking::trace::{heatmap_csv, parse_trace};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soft-think")).args(args).output().unwrap()
}

fn in_process(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli_main(std::iter::once("soft-think").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn summary(args: &[&str]) -> serde_json::Value {
    let (code, out, err) = in_process(args);
    assert_eq!(code, EXIT_OK, "{args:?}: {err}");
    serde_json::from_str(out.trim()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn greedy_decode_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("t{run}.jsonl"));
        let out = bin(&[
            "decode", "--strategy", "cot_greedy", "--seed", "7", "--max-total-tokens", "40",
            "--trace", path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        traces.push((std::fs::read(&path).unwrap(), out.stdout));
    }
    assert_eq!(traces[0].0, traces[1].0);
    let records = parse_trace(std::str::from_utf8(&traces[0].0).unwrap()).unwrap();
    assert!(!records.is_empty());
}

#[test]
fn exit_codes() {
    let out = bin(&["decode", "--max-topk", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid config"));
    let out = bin(&["decode", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(bin(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(bin(&["decode", "--strategy", "beam"]).status.code(), Some(1));
    assert_eq!(bin(&["--version"]).status.code(), Some(0));
    assert_eq!(bin(&["export-heatmap", "--trace", "/no/such/file"]).status.code(), Some(2));
    // A prompt longer than the context is a runtime failure.
    let long = vec!["tok03"; 600].join(" ");
    assert_eq!(bin(&["decode", "--prompt", &long]).status.code(), Some(2));
}

#[test]
fn flag_precedence_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "[decode]\nmax_total_tokens = 30\nstrategy = \"cot_sampled\"\n[decode.sampling]\ntop_n = 7\ntemperature = 0.9\n[decode.cold_stop]\ntau = 0.2\n",
    );
    // (flag args, config?, field path, expected)
    let cases: Vec<(Vec<&str>, bool, &[&str], serde_json::Value)> = vec![
        (vec![], false, &["sampling", "top_n"], 15.into()),
        (vec![], true, &["sampling", "top_n"], 7.into()),
        (vec!["--max-topk", "3"], true, &["sampling", "top_n"], 3.into()),
        (vec!["--top-n", "4"], false, &["sampling", "top_n"], 4.into()),
        (vec![], false, &["sampling", "temperature"], 0.6.into()),
        (vec![], true, &["sampling", "temperature"], 0.9.into()),
        (vec!["--temperature", "1.5"], true, &["sampling", "temperature"], 1.5.into()),
        (vec![], false, &["strategy"], "soft_thinking".into()),
        (vec![], true, &["strategy"], "cot_sampled".into()),
        (vec!["--enable-soft-thinking"], true, &["strategy"], "soft_thinking".into()),
        (vec!["--strategy", "coconut_tf"], true, &["strategy"], "coconut_tf".into()),
        (vec![], true, &["cold_stop", "tau"], 0.2.into()),
        (vec!["--tau", "0.01"], true, &["cold_stop", "tau"], 0.01.into()),
        (vec![], false, &["cold_stop", "k_consecutive"], 256.into()),
        (vec!["--k-consecutive", "5"], true, &["cold_stop", "k_consecutive"], 5.into()),
        (vec!["--max-total-tokens", "12"], true, &["max_total_tokens"], 12.into()),
        (vec![], true, &["max_total_tokens"], 30.into()),
        (vec!["--think-end-str", "tok05"], false, &["think_end_id"], 5.into()),
        (vec!["--think-end-str", "9"], false, &["think_end_id"], 9.into()),
        (vec!["--no-cold-stop"], true, &["cold_stop", "enabled"], false.into()),
        (vec!["--entropy-scope", "filtered"], false, &["sampling", "entropy_scope"], "filtered".into()),
    ];
    for (flags, use_cfg, path, expected) in cases {
        let mut args = vec!["decode", "--max-total-tokens", "30"];
        if flags.contains(&"--max-total-tokens") {
            args.truncate(1);
        }
        if use_cfg {
            args.truncate(1);
            args.extend(["--config", cfg.as_str()]);
        }
        args.extend(flags.iter().copied());
        let v = summary(&args);
        let mut field = &v["config"];
        for key in path {
            field = &field[*key];
        }
        assert_eq!(field, &expected, "{args:?}");
    }
}

#[test]
fn unknown_config_keys_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[decode]\nmax_tokens = 3\n");
    let (code, _, err) = in_process(&["decode", "--config", &cfg]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("bad.toml"), "{err}");
}

#[test]
fn oracle_compare_record() {
    let start = Instant::now();
    let out = bin(&["oracle-compare", "--vocab", "8", "--m", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs() < 60);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["record"], "oracle_report");
    assert_eq!(v["paths_enumerated"], 512);
    assert_eq!(v["exact"].as_array().unwrap().len(), 8);
    let tv = v["tv_exact_soft"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&tv));

    let out = bin(&["oracle-compare", "--model", "markov", "--vocab", "7", "--m", "4", "--prompt", "<bos> tok04"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["tv_exact_soft"].as_f64().unwrap() < 1e-9);

    // 16^7 paths is over the enumeration budget.
    assert_eq!(bin(&["oracle-compare", "--m", "7"]).status.code(), Some(2));
}

#[test]
fn heatmap_from_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.jsonl");
    let csv = dir.path().join("h.csv");
    let t = trace.to_str().unwrap();
    assert!(bin(&["decode", "--seed", "1", "--max-total-tokens", "20", "--trace", t, "--trace-top", "3"]).status.success());
    let out = bin(&["export-heatmap", "--trace", t, "--output", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    let records = parse_trace(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(text, heatmap_csv(&records));
    assert!(records.iter().all(|r| r.top.len() <= 3));
    assert!(text.starts_with("step,phase,rank,id,token,weight\n"));
}

#[test]
fn sweep_outputs_cells_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.toml",
        "[model]\nkind = \"markov\"\nvocab_size = 11\nseed = 2\n\n[decode]\nmax_total_tokens = 40\n\n[sweep]\nsamples_per_problem = 2\nsynthetic_count = 3\n[sweep.grid]\ntop_n = [2, 5]\ntau = [0.1]\nk_consecutive = [4, 8]\n",
    );
    let csv = dir.path().join("s.csv");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let (code, out, err) = in_process(&["sweep", "--config", &cfg, "--csv", csv.to_str().unwrap()]);
        assert_eq!(code, EXIT_OK, "{err}");
        outputs.push((out, std::fs::read_to_string(&csv).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let lines: Vec<serde_json::Value> = outputs[0].0.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[..4].iter().all(|l| l["record"] == "cell"));
    assert_eq!(lines[4]["record"], "summary");
    assert_eq!(lines[4]["problems"], 3);
    assert_eq!(outputs[0].1.lines().count(), 5);
}
