use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_asyncall"));
    c.env_remove("ASYNCALL_CONFIG").env_remove("ASYNCALL_ENDPOINT_URL").env_remove("ASYNCALL_AUTH_TOKEN");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_stdin(args: &[&str], input: &str) -> Output {
    let mut child = bin().args(args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn corpus_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus").join(format!("{name}.json"))
}

fn without_header(v: &mut Value) -> &Value {
    v.as_object_mut().unwrap().remove("header").expect("report has a header");
    v
}

#[test]
fn parse_prints_blocks() {
    let o = run_stdin(&["parse"], "note [CALL] a [HEAD] f(1) [END]\n[TRAP][END] [INTR] a [HEAD] 2 [END]\n");
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["type"], "function_call");
    assert_eq!(lines[0]["body"], "f(1)");
    assert_eq!(lines[1]["type"], "trap");
    assert_eq!(lines[2]["value"], "2");
}

#[test]
fn parse_rejects_bad_markup() {
    let o = run_stdin(&["parse"], "[CALL] a [TRAP]");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("syntax violation"));
    let o = run_stdin(&["parse"], "[CALL] a [HEAD] f(");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_one_graph() {
    let pasta = corpus_file("mixed_pasta");
    let o = run(&["simulate", "--graph", pasta.to_str().unwrap(), "--policy", "async-lpt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let r = &v["result"]["reports"][0];
    assert_eq!(r["policy"], "async-lpt");
    assert!(r["makespan_ms"].as_f64().unwrap() > 0.0);
    assert!(r["makespan_ms"].as_f64().unwrap() < r["sync_makespan_ms"].as_f64().unwrap());
    assert_eq!(v["config"]["tpot_ms"], 5.0);
    assert!(v["header"]["generated_at_unix_ms"].is_u64());
}

#[test]
fn malformed_graph_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"tpot_ms\": 5.0,\n \"tasks\": [ {\"id\": }\n]}").unwrap();
    let o = run(&["simulate", "--graph", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");
}

#[test]
fn sweep_directory_to_csv() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["parallel_weather", "mixed_pasta"] {
        std::fs::copy(corpus_file(name), dir.path().join(format!("{name}.json"))).unwrap();
    }
    let o = run(&["simulate", "--sweep", dir.path().to_str().unwrap(), "--policies", "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "graph_id,policy,seed,makespan_ms,tokens_total,speedup_vs_sync");
    assert_eq!(rows.len(), 1 + 2 * 5);
    assert!(rows[1].starts_with("mixed_pasta,sync,"));
}

#[test]
fn empty_sweep_is_fine() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--sweep", dir.path().to_str().unwrap(), "--policies", "all"]);
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<String> = stdout(&o).lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect();
    assert_eq!(rows.len(), 1);
}

#[test]
fn reports_reproduce_from_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "ttft_ms = 59\nseed = 7\ntrap_profile = \"large\"\n").unwrap();
    let args = ["simulate", "--builtin", "multistep_office", "--policies", "all"];
    let first = run(&[&["--config", cfg.to_str().unwrap()], &args[..]].concat());
    assert!(first.status.success(), "{}", stderr(&first));
    let mut a: Value = serde_json::from_str(&stdout(&first)).unwrap();

    let embedded = dir.path().join("embedded.json");
    std::fs::write(&embedded, a["config"].to_string()).unwrap();
    let second = run(&[&["--config", embedded.to_str().unwrap()], &args[..]].concat());
    let mut b: Value = serde_json::from_str(&stdout(&second)).unwrap();
    let (a, b) = (without_header(&mut a), without_header(&mut b));
    assert_eq!(serde_json::to_string_pretty(a).unwrap(), serde_json::to_string_pretty(b).unwrap());
    assert_eq!(a["config"]["seed"], 7);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["simulate", "--nope"]).status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--builtin", "mixed_pasta", "--policies", "fast"]).status.code(), Some(2));
    assert_eq!(run(&["verify-theorems", "--theorem", "lpt-optimal", "--n", "9"]).status.code(), Some(2));
    assert_eq!(run(&["gen-train", "--count", "2"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "tpot = 3\n").unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "parse"]).status.code(), Some(2));
}

#[test]
fn verify_lpt_exhaustive() {
    let o = run(&["verify-theorems", "--theorem", "lpt-optimal", "--n", "7", "--trials", "500"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let r = &v["result"]["reports"][0];
    assert_eq!((r["theorem"].as_str(), r["trials"].as_u64(), r["holds"].as_bool()), (Some("lpt_optimal"), Some(500), Some(true)));
    assert_eq!(v["params"]["lpt_optimal"]["n_max"], 7);
}

#[test]
fn verify_flags_small_n() {
    let o = run(&["verify-theorems", "--theorem", "speedup-ratio", "--n", "100"]);
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let r = &v["result"]["reports"][0];
    assert_eq!(r["worst_case"]["below_asymptotic_regime"], true);
    assert!(r["rel_error"].is_f64());
}

#[test]
fn verify_default_covers_all_three() {
    let o = run(&["verify-theorems"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = v["result"]["reports"].as_array().unwrap().iter().map(|r| r["theorem"].as_str().unwrap()).collect();
    assert_eq!(names, ["dominance", "speedup_ratio", "lpt_optimal"]);
    assert_eq!(v["result"]["holds"], true);
}

#[test]
fn gen_train_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.jsonl");
    let o = run(&["--seed", "100", "gen-train", "--count", "24", "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["result"]["samples"], 24);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 24);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["meta"]["seed"], 100);
    assert!(first["target"][0]["role"] == "model");
}

fn florist_transcript() -> Vec<Value> {
    let o = run(&["run-live", "--mode", "scripted", "--builtin", "mixed_florist"]);
    assert!(o.status.success(), "{}", stderr(&o));
    stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn scripted_florist_matches_golden() {
    let got: String = florist_transcript().iter().map(|v| format!("{v}\n")).collect();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/florist_transcript.jsonl");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&golden, &got).unwrap();
    }
    assert_eq!(got, std::fs::read_to_string(golden).unwrap());
}

#[test]
fn scripted_florist_texts_after_both_results() {
    let t = florist_transcript();
    let time_of = |kind: &str, id: &str| {
        t.iter().find(|e| e["kind"] == kind && e["id"] == id).unwrap()["t_ms"].as_f64().unwrap()
    };
    let send = time_of("dispatch", "send");
    assert!(send >= time_of("interrupt", "florists"));
    assert!(send >= time_of("interrupt", "message"));
    // 3 calls at 5 ms per token; the last result closes the session
    assert_eq!(t.iter().filter(|e| e["kind"] == "call").count(), 3);
    assert_eq!(t.last().unwrap()["kind"], "session_end");
}

#[test]
fn naive_endpoint_pays_ttft_per_restart() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.jsonl");
    let report = dir.path().join("r.json");
    let ttft = 40.0;
    let o = run(&[
        "--ttft-ms", "40", "--tpot-ms", "1", "-o", out.to_str().unwrap(),
        "run-live", "--mode", "naive-endpoint", "--builtin", "mixed_florist", "--stub", "--report", report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t: Vec<Value> = std::fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["result"]["audit"]["ok"], true);

    // every request (start and each restart) waits TTFT before its first model token
    let mut starts: Vec<f64> = vec![t[0]["t_ms"].as_f64().unwrap()];
    starts.extend(t.iter().filter(|e| e["kind"] == "restart").map(|e| e["t_ms"].as_f64().unwrap()));
    assert!(starts.len() >= 2);
    assert_eq!(r["result"]["http_requests"].as_u64().unwrap() as usize, starts.len());
    let mut checked = 0;
    for (k, &s) in starts.iter().enumerate() {
        let until = starts.get(k + 1).copied().unwrap_or(f64::INFINITY);
        let first = t.iter().find(|e| {
            let at = e["t_ms"].as_f64().unwrap();
            e["kind"] == "token" && e["origin"] == "model" && at > s && at < until
        });
        // the last request may find nothing left to say
        if let Some(first) = first {
            let gap = first["t_ms"].as_f64().unwrap() - s;
            assert!(gap >= ttft, "first token only {gap} ms after request at {s}");
            checked += 1;
        }
    }
    assert!(checked >= 2);
}

#[test]
fn bad_auth_is_sanitized() {
    let mut server = bin()
        .args(["stub-server", "--builtin", "mixed_florist", "--bind", "127.0.0.1:0"])
        .env("ASYNCALL_AUTH_TOKEN", "right-token")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").unwrap().to_owned();

    let o = bin()
        .args(["run-live", "--mode", "naive-endpoint", "--builtin", "mixed_florist"])
        .env("ASYNCALL_ENDPOINT_URL", &url)
        .env("ASYNCALL_AUTH_TOKEN", "wrong-s3cret")
        .output()
        .unwrap();
    let good = bin()
        .args(["run-live", "--mode", "naive-endpoint", "--builtin", "mixed_florist"])
        .env("ASYNCALL_ENDPOINT_URL", &url)
        .env("ASYNCALL_AUTH_TOKEN", "right-token")
        .output()
        .unwrap();
    server.kill().unwrap();
    server.wait().unwrap();

    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("authentication failed (HTTP 401)"), "{err}");
    assert!(!err.contains("wrong-s3cret") && !stdout(&o).contains("wrong-s3cret"));
    assert!(good.status.success(), "{}", stderr(&good));
}
