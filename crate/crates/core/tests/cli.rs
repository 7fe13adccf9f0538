use std::path::Path;
use std::process::Command;

use cpelab::cli::{load_config, run, ExperimentConfig, RunManifest};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpelab"))
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn construct_single(dir: &Path) -> String {
    let path = dir.join("single.json");
    let code = run(["cpelab", "construct", "single", "--target", "constant0", "-o", &s(&path)]);
    assert_eq!(code, 0);
    s(&path)
}

#[test]
fn verify_single_learner_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let model = construct_single(tmp.path());
    assert!(tmp.path().join("single.manifest.json").exists());
    let out = bin()
        .args(["verify", "--model", &model, "--spec", "constant0", "--eps", "0.8", "--n0", "1", "--N", "2000"])
        .args(["--seed", "1", "--out", &s(&tmp.path().join("out"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let summary: Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["verdict"], "learned");
    let dir = tmp.path().join("out/verify/1");
    let witness: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("witness.json")).unwrap()).unwrap();
    assert_eq!(witness["verdict"], "learned");
    assert_eq!(witness["margins"].as_array().unwrap().len(), 2000);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["nts", "--gamma-typo", "0.1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
}

#[test]
fn nts_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let family = tmp.path().join("family.json");
    assert_eq!(run(["cpelab", "construct", "family", "--periods", "2,3", "-o", &s(&family)]), 0);
    let mut csvs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("out{i}"));
        let code = run([
            "cpelab", "nts", "--model", &s(&family), "--gamma", "0.01,0.05", "--seed", "7", "--samples", "20",
            "--out", &s(&out),
        ]);
        assert_eq!(code, 0);
        let dir = out.join("nts/7");
        csvs.push(std::fs::read(dir.join("results.csv")).unwrap());
        let manifest: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest.seed, Some(7));
        assert!(manifest.outputs.contains(&"results.csv".to_string()));
        assert_eq!(manifest.config_hash.len(), 64);
        assert_eq!(manifest.tie_break, "lowest-index");
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert!(text.starts_with("gamma,count,nts,samples,base_next,next_tokens,seed\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn omitted_seed_is_generated_and_stored() {
    let tmp = tempfile::tempdir().unwrap();
    let model = construct_single(tmp.path());
    let out = tmp.path().join("out");
    let code = run(["cpelab", "nts", "--model", &model, "--gamma", "0.1", "--samples", "3", "--out", &s(&out)]);
    assert_eq!(code, 0);
    let runs: Vec<_> = std::fs::read_dir(out.join("nts")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let dir = runs[0].as_ref().unwrap().path();
    let seed: u64 = dir.file_name().unwrap().to_str().unwrap().parse().unwrap();
    let cfg = load_config(&dir.join("effective-config.json")).unwrap();
    assert_eq!(cfg.seed(), Some(seed));
}

#[test]
fn config_file_with_overrides_and_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"experiment":"nts","model":{"construct":"single","target":"constant0"}}"#).unwrap();
    let full = load_config(&cfg).unwrap();
    let ExperimentConfig::Nts(n) = &full else { panic!() };
    assert_eq!(n.gamma, vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]);

    let out = tmp.path().join("out");
    let code = run(["cpelab", "nts", "--config", &s(&cfg), "--samples", "5", "--seed", "3", "--out", &s(&out)]);
    assert_eq!(code, 0);
    let eff = load_config(&out.join("nts/3/effective-config.json")).unwrap();
    let ExperimentConfig::Nts(e) = &eff else { panic!() };
    assert_eq!(e.samples, 5);
    assert_eq!(e.seed, Some(3));
    let again = serde_json::to_value(&eff).unwrap();
    assert_eq!(cpelab::cli::parse_config(again).unwrap(), eff);
    let csv = std::fs::read_to_string(out.join("nts/3/results.csv")).unwrap();
    // content-independent learner: never sensitive
    for line in csv.lines().skip(1) {
        assert_eq!(line.split(',').nth(2), Some("0"));
    }
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"model":{"file":"x.json"}}"#).unwrap();
    let out = bin().args(["nts", "--config", &s(&cfg), "--seed", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("experiment"));
    std::fs::write(&cfg, r#"{"experiment":"periodic","model":{"file":"x.json"}}"#).unwrap();
    assert_eq!(run(["cpelab", "nts", "--config", &s(&cfg), "--seed", "1"]), 1);
    assert_eq!(run(["cpelab", "nts", "--seed", "1", "--out", &s(tmp.path())]), 1);
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(run(["cpelab", "nts", "--config", &s(&cfg)]), 1);
}

#[test]
fn missing_model_file_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let code = run(["cpelab", "periodic", "--model", &s(&missing), "--seed", "1", "--out", &s(tmp.path())]);
    assert_eq!(code, 2);
}

#[test]
fn unreachable_remote_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = tmp.path().join("c.json");
    let body = json!({
        "experiment": "nts",
        "model": {"remote": {"base_url": format!("http://127.0.0.1:{port}"), "model": "m", "max_retries": 0}},
        "samples": 2, "gamma": [0.1]
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = tmp.path().join("out");
    assert_eq!(run(["cpelab", "nts", "--config", &s(&cfg), "--seed", "2", "--out", &s(&out)]), 3);
    let manifest: RunManifest =
        serde_json::from_str(&std::fs::read_to_string(out.join("nts/2/manifest.json")).unwrap()).unwrap();
    assert!(!manifest.requests.is_empty());
    assert!(manifest.requests.iter().all(|r| !r.ok));
}

#[test]
fn construct_and_experiment_subcommands_write_their_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let single = construct_single(tmp.path());
    let family = tmp.path().join("family.json");
    assert_eq!(run(["cpelab", "construct", "family", "--periods", "2,3,5", "-o", &s(&family)]), 0);
    let family = s(&family);
    let out = s(&tmp.path().join("out"));
    let cases: Vec<(&str, Vec<&str>, &str)> = vec![
        ("periodic", vec!["--model", &family, "--periods", "2,3,4", "--repeats", "4", "--steps", "20"], "p,r,steps"),
        ("critical-period", vec!["--model", &family, "--p-max", "6", "--steps", "20"], "p,r,steps"),
        ("nts-positional", vec!["--model", &family, "--shapes", "1:1,8:1", "--samples", "5"], "u,v,gamma"),
        ("modulus", vec!["--model", &single, "--n", "16,32", "--samples", "3"], ""),
        ("collapse", vec!["--model", &family, "--spec", "periodic:00100", "--samples", "5", "--n", "60"], ""),
        ("isolation", vec!["--model", &single, "--k", "2,4", "--N", "50"], ""),
        ("verify", vec!["--model", &family, "--spec", "periodic:01", "--eps", "0.5", "--n0", "16", "--N", "100"], "n,margin"),
    ];
    for (cmd, args, header) in cases {
        let mut argv = vec!["cpelab", cmd, "--seed", "5", "--out", &out];
        argv.extend(args);
        assert_eq!(run(argv), 0, "{cmd}");
        let csv = std::fs::read_to_string(tmp.path().join(format!("out/{cmd}/5/results.csv"))).unwrap();
        assert!(csv.starts_with(header), "{cmd}: {csv}");
        assert!(csv.lines().count() >= 2, "{cmd}");
    }
}

#[test]
fn ssmax_compare_on_random_model() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    let body = json!({
        "experiment": "ssmax-compare",
        "model": {"random": {"dim": 8, "layers": 2}, "seed": 1},
        "gamma": [0.1, 0.5], "samples": 5, "length": 40
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = tmp.path().join("out");
    assert_eq!(run(["cpelab", "ssmax-compare", "--config", &s(&cfg), "--seed", "9", "--out", &s(&out)]), 0);
    assert!(out.join("ssmax-compare/9/results.csv").exists());
}

#[test]
fn train_writes_model_and_loss_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("t.json");
    let body = json!({
        "dim": 4, "layers": 1, "context": 8, "steps": 3, "batch_size": 2,
        "mixture": [{"spec": {"kind": "constant", "symbol": 0}, "weight": 1.0}]
    });
    std::fs::write(&cfg, body.to_string()).unwrap();
    let out = tmp.path().join("out");
    assert_eq!(run(["cpelab", "train", "--config", &s(&cfg), "--seed", "4", "--out", &s(&out)]), 0);
    let dir = out.join("train/4");
    let losses = std::fs::read_to_string(dir.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 4);
    assert!(losses.starts_with("step,loss\n"));
    assert!(dir.join("model.json").exists() && dir.join("manifest.json").exists());
    let model = s(&dir.join("model.json"));
    assert_eq!(run(["cpelab", "periodic", "--model", &model, "--periods", "2", "--repeats", "1", "--steps", "4", "--seed", "1", "--out", &s(&out)]), 0);
    std::fs::write(&cfg, r#"{"dim": 4}"#).unwrap();
    assert_eq!(run(["cpelab", "train", "--config", &s(&cfg), "--seed", "4", "--out", &s(&out)]), 1);
}
