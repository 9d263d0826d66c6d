use std::fs;
use std::process::Command;

fn polqkd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_polqkd")).args(args).output().unwrap()
}

#[test]
fn bad_key_exits_nonzero_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "clock.frequency_hz = -1\n").unwrap();
    let out = polqkd(&["--config", path.to_str().unwrap(), "key-run"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("clock.frequency_hz"), "{err}");
}

#[test]
fn seed_flag_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.toml");
    fs::write(&path, "seed = 1\nduration_s = 5\n").unwrap();
    let out = polqkd(&[
        "--config",
        path.to_str().unwrap(),
        "--seed",
        "8",
        "--out",
        dir.path().to_str().unwrap(),
        "qber-run",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("seed=8\n") && text.contains("cycles=50\n"), "{text}");
    assert!(dir.path().join("qber-run/qber.csv").exists());
}

#[test]
fn analyze_reads_gating_demo_tags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(polqkd(&["--out", d, "gating-demo"]).status.success());
    let mut seen = Vec::new();
    for name in ["tags.csv", "tags.bin"] {
        let tags = dir.path().join("gating-demo").join(name);
        let out = polqkd(&["analyze", tags.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("cycles=9\n") && text.contains("retained=9\n"), "{text}");
        seen.push(text);
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn bob_without_alice_fails() {
    // Nothing listens on port 1; Bob gives up after the timeout.
    let out = polqkd(&["peer", "bob", "--connect", "127.0.0.1:1", "--timeout-ms", "200"]);
    assert!(!out.status.success());
}
