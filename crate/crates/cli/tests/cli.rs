use std::path::{Path, PathBuf};
use std::process::Command;

use hidepet::config::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hidepet"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const TINY: &str = r#"
seeds = [2]
[pretrain]
epochs = 1
per_class = 20
[stream]
train_per_class = 12
test_per_class = 6
[hide]
epochs = 1
head_epochs = 2
"#;

#[test]
fn shipped_configs_match_presets() {
    assert_eq!(ExperimentConfig::load(&configs().join("quick.toml")).unwrap(), ExperimentConfig::quick());
    assert_eq!(ExperimentConfig::load(&configs().join("mixed.toml")).unwrap(), ExperimentConfig::mixed());
}

#[test]
fn rerun_gives_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let st = bin().args(["run", "--config"]).arg(&cfg).args(["--seed", "2", "--out"]).arg(&out).output().unwrap();
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        outs.push(std::fs::read(out.join("records.jsonl")).unwrap());
    }
    assert!(!outs[0].is_empty());
    assert_eq!(outs[0], outs[1]);

    let rep = bin().arg("report").arg(dir.path().join("a/records.jsonl")).output().unwrap();
    assert!(rep.status.success());
    assert!(String::from_utf8_lossy(&rep.stdout).starts_with("variant,n,faa_mean"));
}

#[test]
fn metrics_of_a_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.csv");
    std::fs::write(&p, "80,70\n,90\n").unwrap();
    let out = bin().arg("metrics").arg(&p).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["faa"].as_f64().unwrap(), 80.0);
}

#[test]
fn theory_writes_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["theory", "--theorem", "3", "--n", "200", "--out"]).arg(dir.path()).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("[pass]").count(), 2);
    assert!(dir.path().join("slack_3-tii-to-ood.csv").exists());
}

#[test]
fn unknown_theorem_fails() {
    assert!(!bin().args(["theory", "--theorem", "7"]).output().unwrap().status.success());
}

#[test]
fn aka_sweep_writes_one_curve_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny_mixed.toml");
    let mixed = format!(
        "{TINY}\n[[stream.extra_domains]]\nname = \"B\"\nseed = 29\noffset_scale = 3.0\n\n[stream.domain]\noffset_scale = 3.0\n"
    );
    std::fs::write(&cfg, mixed).unwrap();
    let out = dir.path().join("sweep");
    let st = bin().args(["aka", "--sweep", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let csv = std::fs::read_to_string(out.join("sweep_seed2.csv")).unwrap();
    let ks: Vec<usize> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ks.len(), 121);
    assert!(ks.windows(2).all(|w| w[1] <= w[0]));
}
