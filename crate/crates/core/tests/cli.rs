use std::path::Path;
use std::process::{Command, Output};

use nrdc::config::preset;

fn nrdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nrdc")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A smoke preset cut down to a few iterations.
fn tiny_config(dir: &Path, name: &str) -> String {
    let mut cfg = preset(name, Some("smoke")).unwrap();
    cfg.train.batches = 3;
    cfg.train.batch_size = 16;
    cfg.train.eval_trajectories = 64;
    cfg.sweep.baselines.truncate(1);
    for b in &mut cfg.sweep.baselines {
        *b = nrdc::policies::PolicySpec::Gru {
            hidden: 4,
            bias_init: Default::default(),
            observe_time: true,
        };
    }
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

fn deterministic(result: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(result).unwrap();
    v.as_object_mut().unwrap().remove("wall_clock_seconds");
    v
}

#[test]
fn train_writes_artifacts_and_reruns_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["lq_fbm_markov", "lq_delay_default", "portfolio_merton"] {
        let cfg = tiny_config(dir.path(), name);
        let out = dir.path().join(name);
        let o = nrdc(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        for f in ["config.toml", "result.json", "cost_trace.csv", "policy.json"] {
            assert!(out.join(f).exists(), "{name}: missing {f}");
        }
        let trace = std::fs::read_to_string(out.join("cost_trace.csv")).unwrap();
        assert_eq!(trace.lines().count(), 4);

        let again = dir.path().join(format!("{name}-again"));
        let snap = out.join("config.toml");
        let o = nrdc(&[
            "train",
            "--config",
            snap.to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let read = |d: &Path, f: &str| std::fs::read_to_string(d.join(f)).unwrap();
        assert_eq!(
            deterministic(&read(&out, "result.json")),
            deterministic(&read(&again, "result.json"))
        );
        assert_eq!(read(&out, "policy.json"), read(&again, "policy.json"));
        assert_eq!(read(&out, "config.toml"), read(&again, "config.toml"));
    }
}

#[test]
fn evaluate_reads_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "lq_fbm_markov");
    let out = dir.path().join("run");
    assert_eq!(
        code(&nrdc(&["train", "--config", &cfg, "--out", out.to_str().unwrap()])),
        0
    );
    let o = nrdc(&["evaluate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("evaluation.json")).unwrap()).unwrap();
    let train: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("result.json")).unwrap()).unwrap();
    assert_eq!(eval["evaluation"], train["evaluation"]);
    let o = nrdc(&["evaluate", "--config", &cfg, "--checkpoint", "/nonexistent/policy.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_with_one_fraction_has_one_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "lq_fbm_default");
    let out = dir.path().join("sweep");
    let o = nrdc(&[
        "sweep",
        "--config",
        &cfg,
        "--fractions",
        "1.0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "model,100%");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("nrde,") && lines[2].starts_with("gru,"));
    assert!(out.join("sweep.json").exists() && out.join("config.toml").exists());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "name = \"x\"\n[problem]\nkind = \"lq-fbm\"\n").unwrap();
    let o = nrdc(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("policy"), "{}", stderr(&o));

    let o = nrdc(&["train", "--preset", "lq_fbm_default", "--profile", "giant"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("smoke"), "{}", stderr(&o));

    let o = nrdc(&["train", "--preset", "nope"]);
    assert_eq!(code(&o), 2);
    let o = nrdc(&["train"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = nrdc(&["gradcheck", "--trials", "20", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("gradcheck.json").exists());

    let o = nrdc(&["gradcheck", "--trials", "20", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("softplus"), "{}", stderr(&o));

    let o = nrdc(&["gradcheck", "--trials", "0"]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("no checks run"));
}

#[test]
fn sigdemo_output() {
    let one = nrdc(&["sigdemo", "--max-level", "1", "--samples", "60"]);
    assert_eq!(code(&one), 0, "{}", stderr(&one));
    let text = String::from_utf8(one.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("level,test_rmse"));

    let args = ["sigdemo", "--max-level", "3", "--samples", "100", "--seed", "5"];
    assert_eq!(nrdc(&args).stdout, nrdc(&args).stdout);

    let o = nrdc(&["sigdemo", "--max-level", "6"]);
    assert_eq!(code(&o), 2);
}
