use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn joinscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_joinscope"))
        .args(args)
        .env_remove("JOINSCOPE_SEED")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn benchmark(dir: &Path) {
    let out = joinscope(&["generate-benchmark", "--out", path(dir), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn conf_value(conf: &Path, key: &str) -> String {
    let text = fs::read_to_string(conf).unwrap();
    text.lines()
        .find_map(|l| {
            let (k, v) = l.split_once('=')?;
            (k.trim() == key).then(|| v.trim().to_string())
        })
        .unwrap()
}

#[test]
fn fabricate_writes_tables_and_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    benchmark(&bench);
    assert_eq!(fs::read_dir(bench.join("tables")).unwrap().count(), 10);
    assert!(bench.join("truth.csv").exists());

    let out_dir = tmp.path().join("out");
    let out = joinscope(&[
        "fabricate",
        "--repository",
        path(&bench.join("tables")),
        "--output-dir",
        path(&out_dir),
        "--seed",
        "9",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("fabricated 20 tables"));
    assert_eq!(fs::read_dir(out_dir.join("fabricated")).unwrap().count(), 20);
    let examples = fs::read_to_string(out_dir.join("examples.csv")).unwrap();
    assert!(examples.starts_with("table_a,column_a,table_b,column_b,label\n"));
    assert!(examples.lines().skip(1).any(|l| l.ends_with(",positive")));
    assert_eq!(conf_value(&out_dir.join("fabricate.conf"), "seed"), "9");
}

#[test]
fn single_signal_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    benchmark(&bench);
    let out_dir = tmp.path().join("out");
    let out = joinscope(&[
        "evaluate",
        "--repository",
        path(&bench.join("tables")),
        "--truth",
        path(&bench.join("truth.csv")),
        "--output-dir",
        path(&out_dir),
        "--signal",
        "max_containment",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    let signals = report["signals"].as_array().unwrap();
    assert_eq!(signals.len(), 1);
    assert_eq!(signals[0]["name"], "max_containment");
    assert!(report.get("rgcn").is_none());
    assert!(report.get("mlp").is_none());
}

#[test]
fn train_predict_evaluate_with_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    benchmark(&bench);
    let out_dir = tmp.path().join("out");
    let conf = tmp.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "# small model for a quick run\nrepository = {}\ntruth = {}\noutput_dir = {}\nepochs = 3\nhidden_dim = 16\nhead_hidden = 8\nmlp_epochs = 20\nseed = 4\n",
            bench.join("tables").display(),
            bench.join("truth.csv").display(),
            out_dir.display()
        ),
    )
    .unwrap();
    let c = path(&conf);
    for cmd in ["train", "predict", "evaluate"] {
        let out = joinscope(&[cmd, "-c", c, "--k-candidates", "1,2", "--loss-mode", "cross_entropy"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["model.ckpt", "training.json", "predictions.csv", "report.json"] {
        assert!(out_dir.join(file).exists(), "missing {file}");
    }
    let training: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("training.json")).unwrap()).unwrap();
    assert_eq!(training["history"].as_array().unwrap().len(), 3);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["signals"].as_array().unwrap().len(), 5);
    assert!(report["rgcn"]["best_f1"].as_f64().unwrap() >= 0.0);
    let resolved = out_dir.join("evaluate.conf");
    assert_eq!(conf_value(&resolved, "seed"), "4");
    assert_eq!(conf_value(&resolved, "loss_mode"), "cross_entropy");
    assert_eq!(conf_value(&resolved, "k_candidates"), "1,2");
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let bench = tmp.path().join("bench");
    benchmark(&bench);
    let out_dir = tmp.path().join("out");
    let out = Command::new(env!("CARGO_BIN_EXE_joinscope"))
        .args(["fabricate", "--repository", path(&bench.join("tables")), "--output-dir", path(&out_dir)])
        .env("JOINSCOPE_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(conf_value(&out_dir.join("fabricate.conf"), "seed"), "77");

    let out = Command::new(env!("CARGO_BIN_EXE_joinscope"))
        .args(["fabricate", "--repository", path(&bench.join("tables")), "--output-dir", path(&out_dir), "--seed", "5"])
        .env("JOINSCOPE_SEED", "77")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(conf_value(&out_dir.join("fabricate.conf"), "seed"), "5");
}

#[test]
fn bad_input_exits_with_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = joinscope(&["fabricate", "--set", "no_such_key=1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = joinscope(&["fabricate", "--set", "missing_equals"]);
    assert!(!out.status.success());

    let out = joinscope(&["fabricate", "--repository", path(&tmp.path().join("absent"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = joinscope(&["evaluate", "--signal", "bogus"]);
    assert!(!out.status.success());
}
