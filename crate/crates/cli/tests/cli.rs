use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn coexist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coexist")).args(args).output().unwrap()
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_variant(dir: &Path, name: &str, from: &str, to: &str) -> PathBuf {
    let text = std::fs::read_to_string(scenario("fig2.toml")).unwrap().replace(from, to);
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn allocate_prints_the_equilibrium_and_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let jsonl = dir.path().join("trace.jsonl");
    for trace in [&csv, &jsonl] {
        let config = scenario("fig2.toml");
        let out = coexist(&["allocate", "--config", config.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).contains("normalized_totals: 7.200000 10.800000"));
    }
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.contains("# defaults_applied: step,tolerance,"));
    assert!(text.contains("\nround,net1.s1,net1.s2,net2.s1,net2.s2,net2.s3,"));
    let lines: Vec<String> = std::fs::read_to_string(&jsonl).unwrap().lines().map(String::from).collect();
    assert!(lines[0].starts_with("{\"initial_requirements\":[2,3],\"metadata\":{"));
    let last: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(last["round"], 233);
}

#[test]
fn select_and_pipeline() {
    let config = scenario("hybrid.toml");
    let out = coexist(&["select", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("system_fitness: "));

    let dir = tempfile::tempdir().unwrap();
    let config = scenario("fig2.toml");
    let out = coexist(&["pipeline", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["budgets"], serde_json::json!([8, 11]));
    assert_eq!(summary["metrics"]["system_fitness"], 1.0);
    for file in ["trace.csv", "trace.jsonl", "assignment.csv", "mediator_log.jsonl"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
}

#[test]
fn experiment_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = coexist(&["experiment", "fig5", "--runs", "5", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("fig5.csv")).unwrap();
    assert!(text.contains("# master_seed: 3\n"));
    assert!(text.contains("\nn,strategy,mean_fitness,"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(coexist(&[]).status.code(), Some(1));
    assert_eq!(coexist(&["--help"]).status.code(), Some(0));
    assert_eq!(coexist(&["allocate"]).status.code(), Some(1));

    let out = coexist(&["experiment", "fig9", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("fig2, fig3, fig4, fig5, fig6"));

    let crowded = write_variant(dir.path(), "crowded.toml", "channels = 20", "channels = 1");
    let out = coexist(&["allocate", "--config", crowded.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("N < n"));

    let unstable = write_variant(dir.path(), "unstable.toml", "r = 1.95", "r = 2.5\nmax_rounds = 500");
    let out = coexist(&["allocate", "--config", unstable.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = coexist(&["pipeline", "--config", unstable.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("allocation"));

    let out = coexist(&["allocate", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = coexist(&["experiment", "fig2", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn mediator_serve_speaks_the_protocol() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_coexist"))
        .args(["mediator", "serve", "--listen", "127.0.0.1:0", "--channels", "3"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut banner = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut banner).unwrap();
    let addr = banner.split_whitespace().nth(3).unwrap().to_string();

    let stream = TcpStream::connect(&addr).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut call = |line: &str| {
        writeln!(writer, "{line}").unwrap();
        let mut reply = String::new();
        reader.read_line(&mut reply).unwrap();
        reply.trim_end().to_string()
    };
    assert_eq!(call(r#"{"seq":0,"op":"register","network":"a"}"#), r#"{"seq":0,"ok":true}"#);
    assert_eq!(call(r#"{"seq":1,"op":"select","network":"a","channel":1}"#), r#"{"seq":1,"ok":true}"#);
    assert_eq!(
        call(r#"{"seq":2,"op":"get_selectivity","network":"a"}"#),
        r#"{"seq":2,"ok":true,"selectivity":[null,1.0000000000000000e0,null]}"#
    );
    child.kill().unwrap();
    child.wait().unwrap();
}
