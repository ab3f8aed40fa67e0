use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn tdvqa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdvqa")).args(args).output().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap()
}

#[test]
fn vcd2wave_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let o = tdvqa(&["vcd2wave", s(&fixture("minimal.vcd")), "--clock", "clk", "-o", s(&out)]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(fixture("minimal.golden.json")).unwrap());

    let svg = dir.path().join("w.svg");
    assert!(tdvqa(&["render", s(&out), "-o", s(&svg)]).status.success());
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn falling_edge_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let o = tdvqa(&["vcd2wave", s(&fixture("minimal.vcd")), "--clock", "clk", "--edge", "falling", "-o", s(&out)]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    // falling edges at 10, 20 and 30
    assert_eq!(v["signal"][0]["wave"], "n..");
}

#[test]
fn errors_are_json_with_exit_codes() {
    let o = tdvqa(&["vcd2wave", "missing.vcd", "--clock", "clk", "-o", "x.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "io");

    let o = tdvqa(&["vcd2wave", s(&fixture("minimal.vcd")), "--clock", "nope", "-o", "/tmp/unused.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "domain");

    let o = tdvqa(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "usage");

    let o = tdvqa(&["gen-reasoning", "--task", "sync_fifo", "--scenario", "success"]);
    assert_eq!(o.status.code(), Some(2));

    assert!(tdvqa(&["--help"]).status.success());
}

#[test]
fn gen_testbench_writes_module_instance() {
    let dir = tempfile::tempdir().unwrap();
    let tb = dir.path().join("tb.v");
    let o = tdvqa(&["gen-testbench", s(&fixture("counter.v")), "--cycles", "8", "--seed", "3", "-o", s(&tb)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&tb).unwrap();
    assert!(text.contains("counter"));
    assert!(text.contains("$dumpvars"));
}

#[test]
fn describe_record_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    // a transcript cannot be recorded offline, so replaying a missing one fails cleanly
    let o = tdvqa(&["describe", s(&fixture("counter.v")), "--replay", s(&dir.path().join("none.json"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = tdvqa(&["describe", s(&fixture("counter.v")), "--endpoint", "http://127.0.0.1:9/"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["error"], "domain");
}

#[test]
fn gen_reasoning_counts() {
    let o = tdvqa(&["gen-reasoning", "--task", "serial_parity_stop", "--scenario", "success", "--count", "0"]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());

    let o = tdvqa(&["gen-reasoning", "--task", "serial_parity_wait", "--scenario", "failure", "--count", "3", "--seed", "5"]);
    assert!(o.status.success());
    let lines: Vec<Value> = String::from_utf8(o.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["qa"]["template"].is_string()));
}

#[test]
fn package_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out = dir.path().join("ds");
    fs::write(&cfg, format!(r#"{{"seed": 7, "n_caption": 20, "n_reasoning": 15, "out_dir": "{}"}}"#, s(&out))).unwrap();
    // flag overrides the config count
    let o = tdvqa(&["package", "--config", s(&cfg), "--n-reasoning", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["total"], 30);

    let data = out.join("data.jsonl");
    let mut preds = String::new();
    for line in fs::read_to_string(&data).unwrap().lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        preds.push_str(&serde_json::json!({"id": r["id"], "prediction": r["conversations"][1]["value"]}).to_string());
        preds.push('\n');
    }
    let pred = dir.path().join("pred.jsonl");
    fs::write(&pred, &preds).unwrap();
    let o = tdvqa(&["eval", "--pred", s(&pred), "--data", s(&data)]);
    assert!(o.status.success());
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    for k in ["bleu4", "rouge1_f", "rouge2_f", "rougeL_f"] {
        assert!((report[k].as_f64().unwrap() - 100.0).abs() < 1e-9, "{k}");
    }
    assert!(String::from_utf8_lossy(&o.stderr).contains("BLEU-4"));

    let first_missing: String = preds.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&pred, first_missing).unwrap();
    let o = tdvqa(&["eval", "--pred", s(&pred), "--data", s(&data)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("no prediction"));
}

#[test]
fn package_is_deterministic_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let snapshot = |d: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        let mut files: Vec<_> = walk(d).into_iter().map(|p| (p.strip_prefix(d).unwrap().to_path_buf(), fs::read(&p).unwrap())).collect();
        files.sort();
        files
    };
    let mut snaps = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(name);
        let o = tdvqa(&["package", "--seed", "11", "--n-caption", "25", "--n-reasoning", "25", "--jobs", jobs, "--out", s(&out)]);
        assert!(o.status.success());
        snaps.push(snapshot(&out));
    }
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn gen_caption_writes_pool() {
    let dir = tempfile::tempdir().unwrap();
    let o = tdvqa(&["gen-caption", "--n-caption", "12", "--n-reasoning", "0", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines = fs::read_to_string(dir.path().join("caption_pool/data.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 12);
}

fn walk(d: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(d).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
