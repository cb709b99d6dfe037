use std::path::Path;
use std::process::{Command, Output};

use loopchat_core::llm::ScriptBuilder;
use loopchat_core::orchestrator::{Outcome, PipelineTrace};

fn loopchat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopchat"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("TPGPT_LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    assert!(output.status.success(), "failed: {}", String::from_utf8_lossy(&output.stderr));
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

const SMALL: &[&str] = &["--routes", "I-5", "--detectors", "2", "--days", "1"];

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let mut args = vec!["generate", "--seed", "1", "--out", out];
        args.extend_from_slice(SMALL);
        stdout(&loopchat(&args, dir.path()));
    }
    let a = tree(&dir.path().join("a"));
    assert!(!a.is_empty());
    assert_eq!(a, tree(&dir.path().join("b")));
}

#[test]
fn ingest_then_ask_against_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["generate", "--seed", "3", "--out", "csv"];
    args.extend_from_slice(SMALL);
    stdout(&loopchat(&args, dir.path()));
    let out = stdout(&loopchat(&["ingest", "--csv-dir", "csv", "--db", "traffic.db"], dir.path()));
    assert!(out.contains("dbo.cabinets: 2"), "{out}");
    assert!(!loopchat(&["ingest", "--csv-dir", "csv", "--db", "traffic.db"], dir.path()).status.success());

    let fixture = ScriptBuilder::new()
        .action("project_manager", "", "query_database", "count")
        .action("sql_engineer", "", "sql", "SELECT COUNT(*) AS n FROM dbo.cabinets")
        .action("data_analyst", "", "answer", "There are two detectors.")
        .build();
    std::fs::write(dir.path().join("fixture.json"), serde_json::to_string(&fixture).unwrap()).unwrap();
    let out = stdout(&loopchat(
        &["ask", "How many detectors?", "--db", "traffic.db", "--fixture", "fixture.json", "--trace-out", "t.json"],
        dir.path(),
    ));
    assert!(out.starts_with("There are two detectors.\n"), "{out}");
    assert!(out.contains("trace: t.json"));
    let trace: PipelineTrace = serde_json::from_str(&std::fs::read_to_string(dir.path().join("t.json")).unwrap()).unwrap();
    let result = trace.final_result().unwrap();
    assert_eq!(result.rows[0][0].to_string(), "2");
}

#[test]
fn ask_chat_fixture_has_no_sql() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = ScriptBuilder::new().action("project_manager", "", "chat", "I can answer traffic questions.").build();
    std::fs::write(dir.path().join("chat.json"), serde_json::to_string(&fixture).unwrap()).unwrap();
    let out = stdout(&loopchat(&["ask", "hello", "--fixture", "chat.json"], dir.path()));
    assert!(out.starts_with("I can answer traffic questions."));
    let trace: PipelineTrace =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace.outcome, Outcome::ChatOnly);
    assert!(trace.sql_attempts.is_empty());
}

#[test]
fn ask_reports_provider_failure() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.json"), "[]").unwrap();
    let output = loopchat(&["ask", "hello", "--fixture", "empty.json"], dir.path());
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("script exhausted"));
}

#[test]
fn bench_oracle_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&loopchat(&["bench", "--oracle", "--tasks-out", "tasks.jsonl", "--report", "r.json"], dir.path()));
    assert!(out.starts_with("21 tasks"), "{out}");
    let row = out.lines().find(|l| l.starts_with("full")).unwrap();
    assert!(row.trim_end().ends_with("1.00"), "{row}");
    assert_eq!(std::fs::read_to_string(dir.path().join("tasks.jsonl")).unwrap().lines().count(), 21);

    let again = stdout(&loopchat(&["bench", "--tasks", "tasks.jsonl", "--ablation"], dir.path()));
    for variant in ["full", "no_prompt", "no_fewshot", "no_multiagent"] {
        assert!(again.lines().any(|l| l.starts_with(variant)), "{variant} missing:\n{again}");
    }
}

#[test]
fn bench_missing_fixtures_grade_non_functional() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("fx")).unwrap();
    let out = stdout(&loopchat(&["bench", "--fixtures", "fx"], dir.path()));
    let row = out.lines().find(|l| l.starts_with("full")).unwrap();
    assert!(row.contains("21 (100%)") && row.trim_end().ends_with("0.00"), "{row}");
}

#[test]
fn bad_invocations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!loopchat(&["ingest", "--csv-dir", "missing", "--db", "x.db"], dir.path()).status.success());
    std::fs::write(dir.path().join("bad.toml"), "provider = \"live\"\nfixture_path = \"f.json\"\n").unwrap();
    let output = loopchat(&["serve", "--config", "bad.toml"], dir.path());
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("invalid config"));
    assert!(!loopchat(&["ask", "q"], dir.path()).status.success());
}

#[cfg(unix)]
#[test]
fn serve_answers_health_and_survives_sighup() {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::process::Stdio;

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("fixture.json"), "[]").unwrap();
    std::fs::write(dir.path().join("service.toml"), "fixture_path = \"fixture.json\"\nseed = 7\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_loopchat"))
        .args(["serve", "--config", "service.toml", "--bind", "127.0.0.1:0"])
        .current_dir(dir.path())
        .env("RUST_LOG", "info")
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = lines
        .by_ref()
        .map_while(Result::ok)
        .find_map(|l| l.split("listening on ").nth(1).map(str::to_string))
        .expect("service reports its address");
    let get = |path: &str| {
        let mut stream = std::net::TcpStream::connect(&addr).unwrap();
        write!(stream, "GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).unwrap();
        response
    };
    assert!(get("/health").starts_with("HTTP/1.1 200"));
    Command::new("kill").args(["-HUP", &child.id().to_string()]).status().unwrap();
    let reloaded = lines.map_while(Result::ok).any(|l| l.contains("reloaded on SIGHUP"));
    assert!(reloaded);
    assert!(get("/schema").starts_with("HTTP/1.1 200"));
    child.kill().unwrap();
    child.wait().unwrap();
}
