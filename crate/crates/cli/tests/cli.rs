use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cachesim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cachesim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"{
  "policies": ["gpt-4o", "claude-sonnet-4.5"],
  "modes": ["no-cache", "system-prompt"],
  "workload": {"system_prompt_tokens": 3000, "tool_calls": 3, "tool_result_tokens": 100, "sessions": 3},
  "output_dir": "out"
}"#;

#[test]
fn policies_lists_the_four_builtins() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cachesim(&["policies"], tmp.path());
    assert!(o.status.success());
    let text = stdout(&o);
    for name in ["gpt-4o", "gpt-5.2", "claude-sonnet-4.5", "gemini-2.5-pro"] {
        assert_eq!(text.lines().filter(|l| l.starts_with(name)).count(), 1, "{name} in\n{text}");
    }
    assert!(text.contains("4096"));
    assert!(text.contains("3.75"));
}

#[test]
fn simulate_then_verify() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("exp.json"), SMALL).unwrap();
    let o = cachesim(&["simulate", "exp.json", "--jobs", "2"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("system-prompt"));
    assert!(tmp.path().join("out/calls.csv").is_file());

    let o = cachesim(&["verify", "out"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("summary matches"));

    // Any edit to the summary is caught.
    let summary = tmp.path().join("out/summary.json");
    let text = fs::read_to_string(&summary).unwrap().replacen("\"sessions\": 3", "\"sessions\": 4", 1);
    fs::write(&summary, text).unwrap();
    let o = cachesim(&["verify", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
}

#[test]
fn ablate_writes_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("exp.json"), SMALL).unwrap();
    let o = cachesim(
        &["ablate", "exp.json", "--dimension", "prompt-size", "--values", "2000,4000", "--out", "grid"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("grid/ablation.csv").is_file());
    assert!(tmp.path().join("grid/prompt-size-4000/summary.json").is_file());
    // Header plus 2 values x 2 policies x 2 modes.
    assert_eq!(stdout(&o).lines().count(), 1 + 8);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();

    let o = cachesim(&["simulate", "missing.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error:"));

    fs::write(tmp.path().join("bad.json"), r#"{"alpha": "high"}"#).unwrap();
    let o = cachesim(&["simulate", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("alpha"), "{}", stderr(&o));

    fs::write(tmp.path().join("exp.json"), SMALL).unwrap();
    let o = cachesim(&["ablate", "exp.json", "--dimension", "tool-count", "--values", ""], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = cachesim(&["simulate"], tmp.path());
    assert_eq!(o.status.code(), Some(1));

    let o = cachesim(&["--help"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
}
