use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[run]
seed = 4
terminals = 2
rounds = 5
verify_cadence = 5
verify_window = 100
fine_tune_steps = 10

[lightae]
HIDDEN_SIZES = [16, 8]
EPOCHS = 2
KD_EPOCHS = 1
VARIANT_FRACTIONS = [0.5]

[td3]
EPISODES = 2
STEPS_PER_EPISODE = 30
HIDDEN = 16
"#;

fn privloop(args: &[&str], out: &Path) -> Output {
    let output = Command::new(env!("CARGO_BIN_EXE_privloop"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(
        output.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

#[test]
fn help_lists_every_stage() {
    let out = Command::new(env!("CARGO_BIN_EXE_privloop")).arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for cmd in ["gen-data", "train-ae", "distill", "profile", "select", "train-agent", "run", "attack", "report"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn bad_arguments_are_rejected() {
    let bin = env!("CARGO_BIN_EXE_privloop");
    assert!(!Command::new(bin).args(["gen-data", "--profile", "xx"]).output().unwrap().status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[run]\nterminals = 0\n").unwrap();
    let out = Command::new(bin)
        .args(["gen-data", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn gen_data_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        privloop(&["gen-data", "--seed", "11", "--sensing-rows", "100"], dir.path());
    }
    for name in ["channel_train.csv", "channel_test.csv", "sensing.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn offline_pipeline_feeds_the_loop() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let cfg = out.join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();
    for stage in ["train-ae", "distill", "profile", "select", "train-agent", "run"] {
        let args: &[&str] = match stage {
            "profile" => &[stage, "--config", cfg, "--passes", "3"],
            "select" => &[stage, "--config", cfg, "--latency", "0", "--resource", "0"],
            _ => &[stage, "--config", cfg],
        };
        privloop(args, out);
    }
    privloop(&["report", "--config", cfg], out);
    let rounds = std::fs::read_to_string(out.join("rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 10);
    for name in ["plan.json", "policy_grid.csv", "training_curve.csv", "round_metrics.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let attack = privloop(&["attack", "--config", cfg, "--kind", "mia", "--eps", "2", "--rows", "100"], out);
    assert!(!attack.stdout.is_empty());
    let bin = env!("CARGO_BIN_EXE_privloop");
    let impossible = Command::new(bin)
        .args(["select", "--config", cfg, "--resource", "99.9", "--out"])
        .arg(out)
        .output()
        .unwrap();
    assert!(!impossible.status.success());
    assert_eq!(std::fs::read_to_string(out.join("attacks.jsonl")).unwrap().lines().count(), 1);
}
