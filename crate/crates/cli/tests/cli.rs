use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
run_name = "smoke"
image_size = 32

[synth]
n_per_class = 15
image_size = 96

[split]
k = 3

[model]
backbone = "usf_mae"

[pretrain]
epochs = 2
batch_size = 8
learning_rate = 1e-3
grad_clip_norm = 1.0

[pretrain.vit]
image_size = 32
patch_size = 8
embed_dim = 16
depth = 1
num_heads = 2
mlp_ratio = 2.0

[pretrain.decoder]
embed_dim = 16
depth = 1
num_heads = 2
mlp_ratio = 2.0

[train]
epochs = 2
batch_size = 8
learning_rate = 1e-3

[train.augment]
enabled = false

[grid]
batch_sizes = [8]
learning_rates = [1e-3, 5e-4]
weight_decays = [0.01]
"#;

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Env {
    fn new(config: &str) -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("runs");
        let cfg = tmp.path().join("run.toml");
        std::fs::write(&cfg, config).unwrap();
        Env { root, config: cfg, _tmp: tmp }
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_ventri"))
            .arg("--quiet")
            .arg("--config")
            .arg(&self.config)
            .env("VENTRI_RUN_ROOT", &self.root)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "ventri {args:?} failed ({}):\n{}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn run_dir(&self) -> PathBuf {
        self.root.join("smoke")
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn pipeline_smoke_and_reruns_are_identical() {
    let env = Env::new(TINY);
    let run = env.run_dir();
    env.ok(&["synth", "--seed", "3"]);
    env.ok(&["scrub", "--masks"]);
    assert!(run.join("data/clean/manifest.csv").is_file());
    assert!(run.join("data/clean/masks").is_dir());
    env.ok(&["split", "--seed", "3"]);
    env.ok(&["pretrain", "--seed", "3"]);
    env.ok(&["finetune", "--seed", "3"]);
    let out = env.ok(&["evaluate"]);
    assert!(out.contains("pooled TP"), "{out}");
    let metrics = run.join("eval/metrics.csv");
    let text = String::from_utf8(read(&metrics)).unwrap();
    assert!(text.contains("config_sha256:"));
    for row in ["fold0,", "fold2,", "mean,", "std,", "pooled,"] {
        assert!(text.contains(row), "missing {row} in\n{text}");
    }
    let first = read(&metrics);
    let preds = read(&run.join("finetune/test_predictions/fold1.csv"));
    let cv = read(&run.join("finetune/cv_metrics.csv"));

    // Resumed: every fold restored from its checkpoint.
    env.ok(&["finetune", "--seed", "3"]);
    assert_eq!(read(&run.join("finetune/cv_metrics.csv")), cv);
    // Retrained from scratch into a second directory.
    let out2 = run.join("finetune_again");
    env.ok(&["finetune", "--seed", "3", "--force", "--out", out2.to_str().unwrap()]);
    assert_eq!(read(&out2.join("test_predictions/fold1.csv")), preds);
    assert_eq!(read(&out2.join("cv_metrics.csv")), cv);
    env.ok(&["evaluate", "--predictions", out2.join("test_predictions").to_str().unwrap(), "--out", run.join("eval2").to_str().unwrap()]);
    assert_eq!(read(&run.join("eval2/metrics.csv")), first);

    env.ok(&["report"]);
    for f in ["tables.md", "roc.png", "pr.png", "confusion.png", "resolved_config.toml", "version.json"] {
        assert!(run.join("report").join(f).is_file(), "missing report/{f}");
    }
    let tables = String::from_utf8(read(&run.join("report/tables.md"))).unwrap();
    assert!(tables.contains("Cross-validation") && tables.contains("pooled"));

    let image = std::fs::read_dir(run.join("data/clean/vm")).unwrap().next().unwrap().unwrap().path();
    let ck = run.join("finetune/fold0/checkpoint.json");
    let ex = run.join("explain");
    env.ok(&[
        "explain",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--image",
        image.to_str().unwrap(),
        "--layer",
        "0",
        "--alpha",
        "0.4",
        "--out",
        ex.to_str().unwrap(),
    ]);
    let stem = image.file_stem().unwrap().to_str().unwrap();
    for suffix in ["_heatmap.png", "_overlay.png", "_heatmap.json"] {
        assert!(ex.join(format!("{stem}{suffix}")).is_file(), "missing {stem}{suffix}");
    }
    let side: serde_json::Value = serde_json::from_slice(&read(&ex.join(format!("{stem}_heatmap.json")))).unwrap();
    assert_eq!(side["layer"], 0);
    assert!(side["activation_stats"]["std"].is_number());
}

#[test]
fn grid_in_process_and_subprocess_agree() {
    let env = Env::new(TINY);
    env.ok(&["synth", "--seed", "5"]);
    env.ok(&["scrub"]);
    env.ok(&["split", "--seed", "5"]);
    env.ok(&["pretrain", "--seed", "5"]);
    let out = env.ok(&["grid", "--seed", "5"]);
    assert!(out.contains("grid: best"), "{out}");
    let a = read(&env.run_dir().join("grid/grid.csv"));
    let par = env.run_dir().join("grid_par");
    env.ok(&["grid", "--seed", "5", "--max-parallel", "2", "--out", par.to_str().unwrap()]);
    assert_eq!(read(&par.join("grid.csv")), a);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().filter(|l| l.ends_with(",true")).count(), 1);
}

#[test]
fn split_reproduces_reference_counts() {
    let env = Env::new("run_name = \"smoke\"\n");
    let data = env.root.join("data");
    let png = {
        let p = env.root.join("px.png");
        std::fs::create_dir_all(&env.root).unwrap();
        ventri::UltrasoundImage::filled(2, 2, [7, 7, 7]).save_png(&p).unwrap();
        read(&p)
    };
    for (class, n) in [("normal", 680), ("vm", 143)] {
        let dir = data.join(class);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            std::fs::write(dir.join(format!("{i:04}.png")), &png).unwrap();
        }
    }
    let out = env.ok(&["split", "--seed", "1", "--manifest", data.to_str().unwrap()]);
    assert!(out.contains("train 560 / val 140 / test 123"), "{out}");
    let counts = String::from_utf8(read(&env.run_dir().join("split/split_counts.csv"))).unwrap();
    assert!(counts.contains("fold0_train,462,98,560"), "{counts}");
    assert!(counts.contains("fold0_val,116,24,140"), "{counts}");
    assert!(counts.contains("test,102,21,123"), "{counts}");
    let a = read(&env.run_dir().join("split/assignments.csv"));
    env.ok(&["split", "--seed", "1", "--manifest", data.to_str().unwrap()]);
    assert_eq!(read(&env.run_dir().join("split/assignments.csv")), a);
}

#[test]
fn exit_codes() {
    let env = Env::new(TINY);
    let code = |args: &[&str]| env.run(args).status.code();
    // Unknown field, invalid value, missing seed: configuration errors.
    let bad = env.run(&["--set", "train.epochz=3", "synth", "--seed", "1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("epochz"));
    let bad = env.run(&["--set", "train.learning_rate=-1", "synth", "--seed", "1"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("learning_rate"));
    assert_eq!(code(&["synth"]), Some(2));
    // Missing inputs: data errors.
    assert_eq!(code(&["scrub", "--in", "/nonexistent/dir"]), Some(3));
    assert_eq!(code(&["evaluate", "--predictions", "/nonexistent/dir"]), Some(3));
    // Divergence: numeric failure.
    env.ok(&["synth", "--seed", "2"]);
    env.ok(&["scrub"]);
    env.ok(&["split", "--seed", "2"]);
    let diverged = env.run(&["--set", "model.backbone=\"vit_scratch\"", "--set", "train.learning_rate=1e30", "--set", "train.grad_clip_norm=1e30", "finetune", "--seed", "2"]);
    assert_eq!(diverged.status.code(), Some(4), "{}", String::from_utf8_lossy(&diverged.stderr));
}
