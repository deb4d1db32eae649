//! End-to-end runs of the `infoflow` binary on a generated panel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn infoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infoflow")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = infoflow(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    infoflow(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A generated panel plus a smoke config pointing at it.
fn setup(dir: &Path, extra: &str) -> PathBuf {
    let csv = dir.join("prices.csv");
    ok(&["generate", "--seed", "3", "--returns", "260", "--output", s(&csv)]);
    let config = dir.join("run.toml");
    let text = format!(
        "defaults = \"smoke\"\nseed = 5\n\n[data]\ninput = {:?}\ntarget = \"target\"\n{extra}",
        s(&csv)
    );
    std::fs::write(&config, text).unwrap();
    config
}

const STEPS: [&str; 5] = ["prep", "select", "train", "evaluate", "report"];

fn pipeline(config: &Path, out: &Path, workers: &str) -> Vec<String> {
    STEPS
        .iter()
        .map(|step| ok(&[step, "--config", s(config), "--out", s(out), "--workers", workers]))
        .collect()
}

/// Every file under `dir`, by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn without_effective_config(mut files: BTreeMap<String, Vec<u8>>) -> BTreeMap<String, Vec<u8>> {
    let cfg = files.remove("config.toml").expect("effective config written");
    let text = String::from_utf8(cfg).unwrap();
    files.insert("config.toml:header".into(), text.lines().next().unwrap().as_bytes().to_vec());
    files
}

#[test]
fn smoke_pipeline_selects_the_coupled_driver_and_writes_every_output() {
    let tmp = TempDir::new().unwrap();
    let config = setup(tmp.path(), "");
    let out = tmp.path().join("out");
    let printed = pipeline(&config, &out, "1");
    assert!(printed[1].contains("selected: coupled"), "{}", printed[1]);
    for name in [
        "panel.csv",
        "stats.csv",
        "correlation.csv",
        "heatmap.csv",
        "selection.toml",
        "local_te.csv",
        "dataset_S3.toml",
        "runs.tsv",
        "validation.csv",
        "test.csv",
        "checkpoints/index.csv",
        "evaluation_validation.csv",
        "evaluation_test.csv",
        "report.txt",
        "config.toml",
    ] {
        assert!(out.join(name).is_file(), "{name} missing");
    }
    // Retrained checkpoints score exactly what the ledger recorded.
    let read = |n: &str| std::fs::read_to_string(out.join(n)).unwrap();
    assert_eq!(read("evaluation_test.csv"), read("test.csv"));
    assert_eq!(read("evaluation_validation.csv"), read("validation.csv"));
    let header = read("config.toml").lines().next().unwrap().to_string();
    assert!(header.starts_with("# infoflow ") && header.contains("seed=5 config="));
    assert!(read("report.txt").starts_with(&header));
}

#[test]
fn outputs_do_not_depend_on_workers_or_reruns() {
    let tmp = TempDir::new().unwrap();
    let config = setup(tmp.path(), "");
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    pipeline(&config, &a, "1");
    pipeline(&config, &b, "2");
    pipeline(&config, &c, "1");
    let (a, b, c) = (
        without_effective_config(snapshot(&a)),
        without_effective_config(snapshot(&b)),
        without_effective_config(snapshot(&c)),
    );
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs between worker counts");
        assert!(bytes == &c[name], "{name} differs between reruns");
    }
}

#[test]
fn effective_config_reproduces_the_run() {
    let tmp = TempDir::new().unwrap();
    let config = setup(tmp.path(), "");
    let first = tmp.path().join("first");
    pipeline(&config, &first, "1");
    let second = tmp.path().join("second");
    pipeline(&first.join("config.toml"), &second, "1");
    let (a, b) = (without_effective_config(snapshot(&first)), without_effective_config(snapshot(&second)));
    assert_eq!(a, b);
}

#[test]
fn train_resumes_from_the_ledger() {
    let tmp = TempDir::new().unwrap();
    let config = setup(tmp.path(), "");
    let out = tmp.path().join("out");
    for step in ["prep", "select"] {
        ok(&[step, "--config", s(&config), "--out", s(&out)]);
    }
    let first = ok(&["train", "--config", s(&config), "--out", s(&out)]);
    assert!(first.starts_with("2 runs (2 trained now, 0 from the ledger)"), "{first}");
    let ledger = std::fs::read(out.join("runs.tsv")).unwrap();
    let second = ok(&["train", "--config", s(&config), "--out", s(&out)]);
    assert!(second.starts_with("2 runs (0 trained now, 2 from the ledger)"), "{second}");
    assert_eq!(std::fs::read(out.join("runs.tsv")).unwrap(), ledger);

    // A different seed is a different configuration: nothing is reused.
    let third = ok(&["train", "--config", s(&config), "--out", s(&out), "--seed", "6"]);
    assert!(third.starts_with("2 runs (2 trained now, 0 from the ledger)"), "{third}");
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    // Configuration errors.
    assert_eq!(code(&["prep", "--defaults", "smoke", "--out", s(&out)]), 2);
    assert_eq!(code(&["prep", "--defaults", "huge", "--out", s(&out)]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "defaults = \"smoke\"\n[data]\ninput = \"x.csv\"\ntarget = \"t\"\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&["prep", "--config", s(&bad), "--out", s(&out)]), 2);

    // Data errors.
    let missing = tmp.path().join("missing.toml");
    std::fs::write(&missing, "defaults = \"smoke\"\n[data]\ninput = \"/nonexistent/prices.csv\"\ntarget = \"t\"\n").unwrap();
    assert_eq!(code(&["prep", "--config", s(&missing), "--out", s(&out)]), 3);
    let config = setup(tmp.path(), "");
    assert_eq!(code(&["train", "--config", s(&config), "--out", s(&tmp.path().join("empty"))]), 3);
    let wrong_target = setup(tmp.path(), "");
    let text = std::fs::read_to_string(&wrong_target).unwrap().replace("target = \"target\"", "target = \"nope\"");
    std::fs::write(&wrong_target, text).unwrap();
    assert_eq!(code(&["prep", "--config", s(&wrong_target), "--out", s(&out)]), 3);

    // Numeric failure: a step size that overflows the weights.
    let diverge = setup(tmp.path(), "\n[experiment]\nlearning_rate = [1e300]\n");
    let dout = tmp.path().join("diverge");
    for step in ["prep", "select"] {
        ok(&[step, "--config", s(&diverge), "--out", s(&dout)]);
    }
    assert_eq!(code(&["train", "--config", s(&diverge), "--out", s(&dout)]), 4);
}
