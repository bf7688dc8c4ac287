use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flat::checkpoint;
use flat::report::TRAINING_LOG_HEADER;

fn flat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flat")).args(args).env_remove("FLAT_NUM_THREADS").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "data": {"train": 3, "val": 2, "test": 2, "size": 16},
  "train": {"cascades": 3, "epochs": 1, "hidden": 4},
  "verify": {"instances": 2, "cascades": [6, 12, 24]}
}"#;

struct Fixture {
    root: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let root = tempfile::tempdir().unwrap();
        fs::write(root.path().join("tiny.json"), TINY).unwrap();
        Self { root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.p("tiny.json");
        let mut all = vec!["--config", path(&config)];
        all.extend_from_slice(args);
        flat(&all)
    }

    fn data(&self) -> PathBuf {
        let dir = self.p("data");
        if !dir.exists() {
            let out = self.run(&["gen-data", "--out", path(&dir)]);
            assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        }
        dir
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&flat(&[])), 2);
    assert_eq!(code(&flat(&["fly"])), 2);
    assert_eq!(code(&flat(&["train"])), 2);
    assert_eq!(code(&flat(&["--help"])), 0);
}

#[test]
fn bad_config_exits_2() {
    let fx = Fixture::new();
    let bad = fx.p("bad.json");
    fs::write(&bad, r#"{"train": {"epochz": 1}}"#).unwrap();
    let out = flat(&["--config", path(&bad), "gen-data", "--out", path(&fx.p("d"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
    assert!(!fx.p("d").exists());
    let out = flat(&["--config", path(&fx.p("missing.json")), "verify-ode"]);
    assert_eq!(code(&out), 4);
    assert_eq!(code(&fx.run(&["gen-data"])), 2);
}

#[test]
fn gen_data_refuses_nonempty_output() {
    let fx = Fixture::new();
    let data = fx.data();
    let x1 = fs::read(data.join("train/0.x1.fla")).unwrap();
    assert_eq!(code(&fx.run(&["gen-data", "--out", path(&data)])), 4);
    assert_eq!(code(&fx.run(&["gen-data", "--out", path(&data), "--force"])), 0);
    assert_eq!(fs::read(data.join("train/0.x1.fla")).unwrap(), x1);
    assert_eq!(code(&fx.run(&["check-data", "--data", path(&data)])), 0);

    let other = fx.p("seeded");
    assert_eq!(code(&fx.run(&["gen-data", "--out", path(&other), "--seed", "5"])), 0);
    assert_ne!(fs::read(other.join("train/0.x1.fla")).unwrap(), x1);

    fs::write(data.join("test/1.y.fla"), b"FLA1").unwrap();
    assert_eq!(code(&fx.run(&["check-data", "--data", path(&data)])), 4);
    assert_eq!(code(&fx.run(&["check-data", "--data", path(&fx.p("nowhere"))])), 4);
}

#[test]
fn train_eval_trajectory() {
    let fx = Fixture::new();
    let data = fx.data();
    let run = fx.p("run");
    let out = fx.run(&["train", "--data", path(&data), "--out", path(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), TRAINING_LOG_HEADER);
    assert_eq!(log.lines().count(), 2);
    let ckpt = run.join("checkpoint");
    let (model, manifest) = checkpoint::load(&ckpt).unwrap();
    assert_eq!(model.cascades(), 3);
    assert_eq!(manifest.training.unwrap().config.epochs, 1);
    assert!(run.join("config.json").exists());
    assert_eq!(code(&fx.run(&["train", "--data", path(&data), "--out", path(&run)])), 4);

    let eval = fx.p("eval");
    let out = fx.run(&["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--out", path(&eval)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(eval.join("metrics_test.csv")).unwrap();
    assert_eq!(metrics.lines().next().unwrap(), "index,psnr,ssim,zero_filled_psnr,decreasing_steps");
    assert_eq!(metrics.lines().count(), 3);
    let curve = fs::read_to_string(eval.join("stability_test.csv")).unwrap();
    assert_eq!(curve.lines().count(), 5);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("metrics_test.json")).unwrap()).unwrap();
    assert!(json["metrics"]["psnr_mean"].as_f64().unwrap().is_finite());

    let traj = fx.p("traj");
    let args = ["trajectory", "--checkpoint", path(&ckpt), "--data", path(&data), "--out", path(&traj), "--sample", "1"];
    assert_eq!(code(&fx.run(&args)), 0);
    let csv = fs::read_to_string(traj.join("trajectory_test_1.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "step,psnr,ssim");
    assert_eq!(csv.lines().count(), 5);
    let strip = image::open(traj.join("trajectory_test_1.png")).unwrap().into_luma8();
    assert_eq!(strip.dimensions(), (16 * 5, 16));
    let errors = image::open(traj.join("trajectory_test_1_error.png")).unwrap().into_luma8();
    assert_eq!(errors.dimensions(), (16 * 4, 16));

    let args = ["trajectory", "--checkpoint", path(&ckpt), "--data", path(&data), "--out", path(&traj), "--sample", "9"];
    assert_eq!(code(&fx.run(&args)), 2);
    let e2 = fx.p("e2");
    let args = ["eval", "--checkpoint", path(&data), "--data", path(&data), "--out", path(&e2)];
    assert_eq!(code(&fx.run(&args)), 4);
}

#[test]
fn eval_thread_count_does_not_change_metrics() {
    let fx = Fixture::new();
    let data = fx.data();
    let run = fx.p("run");
    assert_eq!(code(&fx.run(&["train", "--data", path(&data), "--out", path(&run)])), 0);
    let ckpt = run.join("checkpoint");
    let mut texts = Vec::new();
    for threads in ["1", "3"] {
        let dir = fx.p(&format!("eval{threads}"));
        let status = Command::new(env!("CARGO_BIN_EXE_flat"))
            .args(["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--out", path(&dir)])
            .env("FLAT_NUM_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        texts.push(fs::read(dir.join("metrics_test.json")).unwrap());
    }
    assert_eq!(texts[0], texts[1]);
    let status = Command::new(env!("CARGO_BIN_EXE_flat"))
        .args(["eval", "--checkpoint", path(&ckpt), "--data", path(&data), "--out", path(&fx.p("bad"))])
        .env("FLAT_NUM_THREADS", "zero")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn divergent_training_exits_3() {
    let fx = Fixture::new();
    let data = fx.data();
    let hot = fx.p("hot.json");
    fs::write(&hot, r#"{"train": {"cascades": 3, "epochs": 2, "hidden": 4, "lr": 1e12, "ground_parameters": false}}"#).unwrap();
    let run = fx.p("run");
    let out = flat(&["--config", path(&hot), "train", "--data", path(&data), "--out", path(&run)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("train_log.csv").exists());
}

#[test]
fn verify_ode_writes_report() {
    let fx = Fixture::new();
    let dir = fx.p("verify");
    let out = fx.run(&["verify-ode", "--out", path(&dir)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("overall"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("verification.json")).unwrap()).unwrap();
    assert_eq!(json["global_errors"].as_array().unwrap().len(), 3);
}

#[test]
fn ablate_components_grid() {
    let fx = Fixture::new();
    let data = fx.data();
    let dir = fx.p("ablate");
    let out = fx.run(&["ablate", "--data", path(&data), "--out", path(&dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for (g, i) in flat_core::train::ABLATION_ROWS {
        let label = format!("{}_seed0", flat_core::train::ablation_label(g, i));
        let (model, _) = checkpoint::load(&dir.join(&label).join("checkpoint")).unwrap();
        assert_eq!(model.is_grounded(), g);
        assert!(csv.contains(&label));
    }
}
