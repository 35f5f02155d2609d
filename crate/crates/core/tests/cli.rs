use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use msba_clip::harness::TrainConfig;
use msba_clip::model::ModelConfig;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msba-clip")).args(args).output().unwrap()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = cli(&["synth", "--seed", "7", "--groups", "6", "--out", d.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.contains_key("manifest.jsonl"));
    assert!(ta.contains_key("run_config.json"));
    assert_eq!(ta, tb);
}

#[test]
fn usage_errors_exit_one() {
    let o = cli(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = cli(&["synth", "--config", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = cli(&["synth"]);
    assert_eq!(o.status.code(), Some(1));

    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["train", "--manifest", dir.path().join("none.jsonl").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_then_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let mut config = TrainConfig::toy();
    config.model = ModelConfig::tiny();
    config.epochs = 1;
    config.batch_size = 8;
    std::fs::write(p("config.json"), config.to_json().unwrap()).unwrap();

    let run = |args: &[&str]| {
        let mut full = vec!["--config", &*p("config.json")].into_iter().map(String::from).collect::<Vec<_>>();
        full.extend(args.iter().map(|s| s.to_string()));
        let o = Command::new(env!("CARGO_BIN_EXE_msba-clip")).args(&full).output().unwrap();
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    };
    run(&["synth", "--seed", "3", "--groups", "20", "--size", "16", "--out", &p("data")]);
    run(&["train", "--manifest", &p("data"), "--out", &p("run")]);
    let ckpt = p("run/best.ckpt");
    run(&["eval", "--manifest", &p("data"), "--checkpoint", &ckpt, "--out", &p("eval")]);
    run(&["robustness", "--manifest", &p("data"), "--checkpoint", &ckpt, "--out", &p("rob")]);
    run(&["augment-preview", "--manifest", &p("data"), "--count", "2", "--out", &p("prev")]);

    let scores = std::fs::read_to_string(p("eval/scores.csv")).unwrap();
    assert!(scores.starts_with("id,group_id,label,y_hat,z_cls,s\n"));
    let first_id = scores.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    run(&["export-maps", "--manifest", &p("data"), "--checkpoint", &ckpt, "--ids", &first_id, "--out", &p("maps")]);
    assert!(Path::new(&p(&format!("maps/{first_id}_triptych.png"))).is_file());
    assert_eq!(std::fs::read_to_string(p("rob/robustness.csv")).unwrap().lines().count(), 27);
    for d in ["data", "run", "eval", "rob", "prev", "maps"] {
        let snap: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p(&format!("{d}/run_config.json"))).unwrap()).unwrap();
        assert_eq!(snap["train_config"]["epochs"], 1);
    }
}
