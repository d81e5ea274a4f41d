use std::path::Path;
use std::process::{Command, Output};

fn gustdock(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gustdock"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gustdock(dir.path(), &["fly-away"])), 1);
}

#[test]
fn unknown_dataset_kind_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gustdock(dir.path(), &["gen-data", "--kind", "stormy"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gustdock(dir.path(), &["gen-data", "--kind", "evaluation"])), 0);
    let o = gustdock(dir.path(), &["eval-tcn"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("model checkpoint"));
}

#[test]
fn report_without_a_matrix_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gustdock(dir.path(), &["report"])), 1);
}

#[test]
fn missing_config_file_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gustdock(dir.path(), &["--config", "/nonexistent/run.toml", "gen-data"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn gen_data_is_reproducible_and_seeded() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    for (dir, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        assert_eq!(code(&gustdock(dir.path(), &["--seed", seed, "gen-data", "--kind", "evaluation"])), 0);
    }
    let read = |d: &tempfile::TempDir| {
        let mut files: Vec<_> = std::fs::read_dir(d.path().join("data/evaluation"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        files.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>()
    };
    assert!(!read(&a).is_empty());
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn constant_velocity_matrix_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(code(&gustdock(out, &["gen-data", "--kind", "evaluation"])), 0);
    let o = gustdock(out, &["run-episode", "--scenario", "active-const-no_abort", "--episode", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("active-const-no_abort episode 0"));

    let o = gustdock(out, &["run-episode", "--scenario", "active-const-no_abort", "--episode", "99"]);
    assert_eq!(code(&o), 1);

    let o = gustdock(out, &["run-matrix", "--scenarios", "active-const-no_abort,inactive-const-no_abort"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = std::fs::read_to_string(out.join("matrix/report.txt")).unwrap();
    assert!(first.contains("[active-const-no_abort]"));
    std::fs::remove_file(out.join("matrix/report.txt")).unwrap();

    assert_eq!(code(&gustdock(out, &["report"])), 0);
    let rebuilt = std::fs::read_to_string(out.join("matrix/report.txt")).unwrap();
    assert_eq!(first, rebuilt);
}
