use std::process::Command;

fn imbnas() -> Command {
    Command::new(env!("CARGO_BIN_EXE_imbnas"))
}

fn example_config(dir: &std::path::Path) -> std::path::PathBuf {
    let out = imbnas().arg("example-config").output().unwrap();
    assert!(out.status.success());
    let path = dir.join("smoke.toml");
    std::fs::write(&path, out.stdout).unwrap();
    path
}

#[test]
fn staged_commands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config(dir.path());
    let staged = dir.path().join("staged");
    let step = |args: &[&str]| {
        let out = imbnas()
            .args(args)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&staged)
            .arg("--seed")
            .arg("5")
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    step(&["build-data"]);
    step(&["train-supernet"]);
    step(&["evo-search"]);
    for p in ["p0", "p1", "p2", "p3"] {
        step(&["adapt", "--procedure", p]);
    }
    step(&["rank-compare"]);
    let table = step(&["report"]);
    assert!(table.starts_with("procedure,balance,exponential(0.1)\nP0,"), "{table}");

    let whole = dir.path().join("whole");
    let out = imbnas()
        .args(["run", "--seed", "5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&whole)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(staged.join("summary.csv")).unwrap(),
        std::fs::read(whole.join("summary.csv")).unwrap()
    );
}

#[test]
fn adapt_without_source_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config(dir.path());
    let out = imbnas()
        .args(["adapt", "--procedure", "p1", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("empty"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-supernet"));
}

#[test]
fn unknown_key_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = example_config(dir.path());
    let text = std::fs::read_to_string(&cfg).unwrap().replace("[space]\n", "[space]\ndepth = 3\n");
    std::fs::write(&cfg, text).unwrap();
    let out = imbnas().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("depth"));
}

#[test]
fn bad_procedure_rejected() {
    let out = imbnas().args(["adapt", "--procedure", "p7"]).output().unwrap();
    assert!(!out.status.success());
}
