use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use xbar_guard::io::mnist::{write_idx_images, write_idx_labels, MnistPaths};
use xbar_guard::io::model::save_model;
use xbar_guard::nn::random_mlp;

const SIDE: usize = 8;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_xbar-guard"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn xbar-guard")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 8x8 images: class c lights row c, or column c-8 for classes 8 and 9.
fn write_synthetic(dir: &Path, train: usize, test: usize) {
    let make = |n: usize| {
        let mut pixels = Vec::with_capacity(n * SIDE * SIDE);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % 10;
            let mut img = [0u8; SIDE * SIDE];
            for t in 0..SIDE {
                let idx = if c < SIDE {
                    c * SIDE + t
                } else {
                    t * SIDE + (c - SIDE)
                };
                img[idx] = 200 + (i % 50) as u8;
            }
            pixels.extend_from_slice(&img);
            labels.push(c as u8);
        }
        (pixels, labels)
    };
    fs::create_dir_all(dir).unwrap();
    let p = MnistPaths::in_dir(dir);
    let (px, lb) = make(train);
    write_idx_images(&p.train_images, SIDE, SIDE, &px).unwrap();
    write_idx_labels(&p.train_labels, &lb).unwrap();
    let (px, lb) = make(test);
    write_idx_images(&p.test_images, SIDE, SIDE, &px).unwrap();
    write_idx_labels(&p.test_labels, &lb).unwrap();
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&dir.path().join("mnist"), 200, 40);
    let model = random_mlp(SIDE, SIDE, 16, 3).unwrap();
    save_model(&model, dir.path().join("model")).unwrap();
    dir
}

fn run_cmd(dir: &Path) -> Command {
    let mut cmd = bin();
    cmd.arg("run")
        .arg("--model")
        .arg(dir.join("model"))
        .arg("--mnist-dir")
        .arg(dir.join("mnist"))
        .args(["--xbar-size", "32", "--subset", "20", "--trials", "2"]);
    cmd
}

#[test]
fn run_requires_seed() {
    let dir = fixture();
    let out = run(&mut run_cmd(dir.path()));
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--seed"), "{}", stderr(&out));
}

#[test]
fn run_writes_results() {
    let dir = fixture();
    let results = dir.path().join("results");
    let out = run(run_cmd(dir.path())
        .args([
            "--seed",
            "7",
            "--rates",
            "0,0.1",
            "--k",
            "2,4",
            "--workers",
            "2",
        ])
        .arg("--output")
        .arg(&results)
        .arg("--audit-faults"));
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(results.join("results.csv")).unwrap();
    // header + 2 rates x 2 k x 2 trials
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(results.join("summary.json").exists());
    assert!(results.join("faults.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(results.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 7);
}

#[test]
fn flags_override_config_file() {
    let dir = fixture();
    let config = dir.path().join("campaign.toml");
    fs::write(
        &config,
        "rates = [0.05, 0.1, 0.2]\nk_values = [3]\ntrials = 5\nguard = true\n",
    )
    .unwrap();
    let results = dir.path().join("out");
    let out = run(run_cmd(dir.path())
        .arg("--config")
        .arg(&config)
        .args(["--seed", "1", "--rates", "0.1", "--no-guard"])
        .arg("--output")
        .arg(&results));
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(results.join("summary.json")).unwrap()).unwrap();
    let cfg = &summary["config"];
    assert_eq!(cfg["rates"], serde_json::json!([0.1]));
    assert_eq!(cfg["k_values"], serde_json::json!([3]));
    // --trials 2 from the command line beats trials = 5 in the file
    assert_eq!(cfg["trials"], 2);
    assert_eq!(cfg["guard"], false);

    fs::write(&config, "guard = false\nrates = [0.1]\nk_values = [4]\n").unwrap();
    let out = run(run_cmd(dir.path())
        .arg("--config")
        .arg(&config)
        .args(["--seed", "1", "--guard"])
        .arg("--output")
        .arg(&results));
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(results.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["guard"], true);
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = fixture();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "rate = 0.1\n").unwrap();
    let out = run(run_cmd(dir.path())
        .arg("--config")
        .arg(&config)
        .args(["--seed", "1"]));
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));

    let out = run(run_cmd(dir.path()).args(["--seed", "1", "--rates", "1.5"]));
    assert!(!out.status.success());
    assert!(stderr(&out).contains("rate"), "{}", stderr(&out));

    let out = run(run_cmd(dir.path()).args(["--seed", "1", "--sigma-rel", "0.3"]));
    assert!(!out.status.success());
}

#[test]
fn missing_model_exits_nonzero() {
    let dir = fixture();
    let out = run(bin()
        .args(["run", "--seed", "1", "--model"])
        .arg(dir.path().join("nope"))
        .arg("--mnist-dir")
        .arg(dir.path().join("mnist")));
    assert!(!out.status.success());
    assert!(stderr(&out).contains("nope"), "{}", stderr(&out));
}

#[test]
fn hist_prints_codes() {
    let dir = fixture();
    let out = run(bin()
        .arg("hist")
        .arg("--model")
        .arg(dir.path().join("model"))
        .arg("--mnist-dir")
        .arg(dir.path().join("mnist"))
        .args(["--samples", "10", "--xbar-size", "32", "--adc-bits", "6"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("code,pooled,layer"));
    assert_eq!(lines.count(), 64);
    assert!(stderr(&out).contains("pooled median"));
}

#[test]
fn train_saves_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&dir.path().join("mnist"), 300, 50);
    let model_dir = dir.path().join("trained");
    let out = run(bin()
        .arg("train")
        .arg("--mnist-dir")
        .arg(dir.path().join("mnist"))
        .arg("--out")
        .arg(&model_dir)
        .args(["--hidden", "8", "--epochs", "3", "--seed", "2"]));
    assert!(out.status.success(), "{}", stderr(&out));
    let graph = xbar_guard::io::load_model(&model_dir).unwrap();
    assert_eq!(graph.input_shape, vec![1, SIDE, SIDE]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("test accuracy"), "{stdout}");
}
