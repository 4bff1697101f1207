use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn lios(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lios")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Writes the fixture's binary and .ipa into `dir` and returns the .ipa path.
fn fixture(dir: &Path, name: &str) -> PathBuf {
    let o = lios(&["fixturegen", name, "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join(format!("{name}.ipa"))
}

fn lift(input: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["lift", input.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(extra);
    lios(&args)
}

fn findings(out: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join(format!("{name}.findings.json"))).unwrap()).unwrap()
}

#[test]
fn exit_codes_follow_findings() {
    let dir = tempfile::tempdir().unwrap();
    let vuln = fixture(dir.path(), "webview_vuln");
    let out = dir.path().join("vuln");
    let o = lift(&vuln, &out, &[]);
    assert_eq!(code(&o), 1);
    let f = findings(&out, "webview_vuln");
    assert!(f["findings"].as_array().unwrap().iter().any(|x| x["rule"] == "webview-js-bridge" && x["severity"] == "critical"));
    let stats: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(stats["nodes"].as_u64().unwrap() > 0);
    assert!(stats["timings_ms"]["build"].is_number());
    assert!(out.join("webview_vuln.stats.json").exists());

    let benign = fixture(dir.path(), "webview_sanitized");
    let out = dir.path().join("benign");
    assert_eq!(code(&lift(&benign, &out, &[])), 0);
    assert_eq!(findings(&out, "webview_sanitized")["findings"], serde_json::json!([]));

    let o = lift(&dir.path().join("missing.ipa"), &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("ingest"));
}

#[test]
fn lift_options() {
    let dir = tempfile::tempdir().unwrap();
    let vuln = fixture(dir.path(), "webview_vuln");
    // The bridge paths are longer than three def edges.
    assert_eq!(code(&lift(&vuln, dir.path(), &["--lmax", "3"])), 0);
    assert_eq!(code(&lift(&vuln, dir.path(), &["--lmax", "0"])), 2);

    let rules = dir.path().join("rules.json");
    std::fs::write(&rules, r#"{"rules": [{"id": "ats", "kind": "ats", "severity": "warning"}]}"#).unwrap();
    assert_eq!(code(&lift(&vuln, dir.path(), &["--rules", rules.to_str().unwrap()])), 0);
    std::fs::write(&rules, "{").unwrap();
    assert_eq!(code(&lift(&vuln, dir.path(), &["--rules", rules.to_str().unwrap()])), 2);

    let bin = dir.path().join("webview_vuln");
    let ents = dir.path().join("ents.plist");
    std::fs::write(&ents, "<plist><dict><key>get-task-allow</key><true/></dict></plist>").unwrap();
    let out = dir.path().join("ents");
    // Without an Info.plist ATS counts as enforced, so the bridge finding is only a warning.
    assert_eq!(code(&lift(&bin, &out, &["--entitlements", ents.to_str().unwrap(), "--depth", "0"])), 0);
    assert_eq!(findings(&out, "webview_vuln")["findings"][0]["severity"], "warning");
    let graph = std::fs::read_to_string(out.join("webview_vuln.graph.jsonl")).unwrap();
    assert!(graph.contains("get-task-allow"));
}

#[test]
fn runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let vuln = fixture(dir.path(), "webview_vuln");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    lift(&vuln, &a, &[]);
    lift(&vuln, &b, &[]);
    for file in ["webview_vuln.graph.jsonl", "webview_vuln.findings.json"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn query_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let vuln = fixture(dir.path(), "webview_vuln");
    lift(&vuln, dir.path(), &[]);
    let graph = dir.path().join("webview_vuln.graph.jsonl");
    let g = graph.to_str().unwrap();

    let o = lios(&["query", g, "-e", r#"functions().named("main")"#]);
    assert_eq!(code(&o), 0);
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0]["label"], "Function");

    let o = lios(&["query", g, "-e", r#"functions().calling("NSClassFromString")"#]);
    let line: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(line["props"]["name"], "-[WebDelegate webView:shouldStartLoadWithRequest:navigationType:]");

    assert_eq!(code(&lios(&["query", g, "-e", "bogus()"])), 2);

    let mut child = Command::new(env!("CARGO_BIN_EXE_lios"))
        .args(["query", g])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"bogus()\n:stats\nfunctions().named(\"main\")\n:quit\nfunctions()\n").unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0);
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0]["error"].as_str().unwrap().contains("bogus"));
    assert!(lines[1]["nodes"].as_u64().unwrap() > 0);
    assert_eq!(lines[2]["props"]["name"], "main");

    let o = lios(&["report", g]);
    assert_eq!(code(&o), 1);
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report, findings(dir.path(), "webview_vuln"));

    assert_eq!(code(&lios(&["report", dir.path().join("nope.jsonl").to_str().unwrap()])), 2);
}

#[test]
fn dump_objc_and_fixturegen() {
    let dir = tempfile::tempdir().unwrap();
    fixture(dir.path(), "hierarchy");
    let o = lios(&["dump-objc", dir.path().join("hierarchy").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l.starts_with("class ")));
    assert!(dir.path().join("hierarchy.expected.json").exists());

    let manifest = dir.path().join("tiny.json");
    std::fs::write(&manifest, r#"{"name": "tiny", "functions": [{"name": "_main", "exported": true, "code": ["ret"]}]}"#).unwrap();
    let o = lios(&["fixturegen", manifest.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&lift(&dir.path().join("tiny"), dir.path(), &[])), 0);
    assert_eq!(code(&lios(&["fixturegen", "no-such-manifest"])), 2);
}
