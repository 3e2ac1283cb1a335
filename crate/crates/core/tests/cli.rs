use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_chartrans");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--num-layers", "1", "--num-heads", "2", "--d-model", "8", "--d-ff", "16",
    "--batch-size", "16", "--warmup-steps", "10", "--peak-lr", "0.005", "--eval-batch-size", "64",
];

fn gen_data(dir: &Path) {
    let out = run(&["gen-data", "--seed", "3", "--num-examples", "100", "--alphabet-size", "6", "--max-len", "5", "--out", p(dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn metric(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run(&["gen-data", "--seed", "7", "--out", p(d)]);
        assert_eq!(code(&out), 0);
    }
    for f in ["train.tsv", "dev.tsv", "test.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let train = fs::read_to_string(a.join("train.tsv")).unwrap();
    assert_eq!(train.lines().count(), 2000);
}

#[test]
fn custom_rule_tables() {
    let dir = tempfile::tempdir().unwrap();
    let rules = dir.path().join("rules.tsv");
    fs::write(&rules, "# plural\nN;PL\tsuffix=en\n").unwrap();
    let out = run(&["gen-data", "--rules", p(&rules), "--num-examples", "20", "--out", p(dir.path())]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("train.tsv")).unwrap();
    for line in text.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(format!("{}en", cols[0]), cols[1]);
        assert_eq!(cols[2], "N;PL");
    }
    fs::write(&rules, "N;PL\tsuffix\n").unwrap();
    let out = run(&["gen-data", "--rules", p(&rules), "--out", p(dir.path())]);
    assert_ne!(code(&out), 0);
}

#[test]
fn zero_step_training_writes_the_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    gen_data(&dir.path().join("data"));
    let run_dir = dir.path().join("run");
    let mut args = vec![
        "train", "--train", "", "--dev", "", "--out", p(&run_dir), "--steps", "0",
    ];
    let train = dir.path().join("data/train.tsv");
    let dev = dir.path().join("data/dev.tsv");
    args[2] = p(&train);
    args[4] = p(&dev);
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("checkpoints/best.ckpt").exists());
    let ckpts = fs::read_dir(run_dir.join("checkpoints")).unwrap().count();
    assert_eq!(ckpts, 1);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["train_config"]["total_steps"], 0);
    assert_eq!(manifest["train_config"]["batch_size"], 16);
    assert_eq!(manifest["model_config"]["d_model"], 8);
    assert_eq!(manifest["datasets"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn train_predict_evaluate_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data);
    let run_dir = dir.path().join("run");
    let (train, dev) = (data.join("train.tsv"), data.join("dev.tsv"));
    let mut args = vec!["train", "--train", p(&train), "--dev", p(&dev), "--out", p(&run_dir), "--steps", "40", "--eval-every", "20"];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("step")).count(), 2);
    for f in ["manifest.json", "history.tsv", "predictions.tsv", "metrics.txt", "checkpoints/best.ckpt", "checkpoints/step_000040.ckpt"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(run_dir.join("history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let best = run_dir.join("checkpoints/best.ckpt");
    let preds = dir.path().join("preds.tsv");
    let out = run(&["predict", "--checkpoint", p(&best), "--input", p(&dev), "--output", p(&preds)]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&preds).unwrap(), fs::read(run_dir.join("predictions.tsv")).unwrap());

    let out = run(&["evaluate", "--predictions", p(&preds)]);
    assert_eq!(code(&out), 0);
    let from_file = metric(&String::from_utf8_lossy(&out.stdout), "acc");
    let out = run(&["evaluate", "--checkpoint", p(&best), "--input", p(&dev)]);
    let from_ckpt = metric(&String::from_utf8_lossy(&out.stdout), "acc");
    let ck = chartrans::training::load_checkpoint(&best).unwrap();
    let recorded = ck.history.iter().find(|r| r.step == ck.step).unwrap().dev_acc;
    assert_eq!(from_file, from_ckpt);
    assert!((from_file - recorded).abs() < 1e-12);
}

#[test]
fn evaluate_scores_phonemes_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.tsv");
    // distances 0, 1 (one substitution), 2 (one deletion, one substitution)
    fs::write(&preds, "cat\tK AE T\tK AE T\ndog\tD AO G\tD AA G\nsing\tS IH NG\tS IY\n").unwrap();
    let out = run(&["evaluate", "--predictions", p(&preds), "--metrics", "per"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!((metric(&text, "acc") - 1.0 / 3.0).abs() < 1e-12);
    assert!((metric(&text, "dist") - 1.0).abs() < 1e-12);
    assert!((metric(&text, "per") - 3.0 / 9.0).abs() < 1e-12);
    assert!((metric(&text, "cer_i") - (1.0 / 3.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
    // g2p is scored in phonemes by default
    let out = run(&["evaluate", "--predictions", p(&preds), "--task", "g2p"]);
    assert!((metric(&String::from_utf8_lossy(&out.stdout), "per") - 3.0 / 9.0).abs() < 1e-12);
    // character units see the spaces and letters instead
    let out = run(&["evaluate", "--predictions", p(&preds), "--metrics", "cer"]);
    assert!((metric(&String::from_utf8_lossy(&out.stdout), "per") - 3.0 / 9.0).abs() > 1e-3);
}

#[test]
fn all_correct_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let preds = dir.path().join("p.tsv");
    fs::write(&preds, "walk V;PST\twalked\twalked\ngo V;PST\twent\twent\n").unwrap();
    let report = dir.path().join("metrics.txt");
    let out = run(&["evaluate", "--predictions", p(&preds), "--output", p(&report)]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(report).unwrap();
    assert_eq!(metric(&text, "acc"), 1.0);
    assert_eq!(metric(&text, "wer"), 0.0);
    assert_eq!(metric(&text, "cer_i"), 0.0);
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data);
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "num_layers = 1\nnum_heads = 2\nd_model = 8\nd_ff = 16\nbatch_size = 7\ntotal_steps = 0\nlabel_smoothing = 0.0\n").unwrap();
    let run_dir = dir.path().join("run");
    let (train, dev) = (data.join("train.tsv"), data.join("dev.tsv"));
    let out = run(&["train", "--train", p(&train), "--dev", p(&dev), "--out", p(&run_dir), "--config", p(&cfg), "--batch-size", "9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["train_config"]["batch_size"], 9);
    assert_eq!(manifest["train_config"]["label_smoothing"], 0.0);
    assert_eq!(manifest["model_config"]["num_layers"], 1);

    fs::write(&cfg, "batch_sise = 7\n").unwrap();
    let out = run(&["train", "--train", p(&train), "--dev", p(&dev), "--out", p(&run_dir), "--config", p(&cfg)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data);
    let (train, dev) = (data.join("train.tsv"), data.join("dev.tsv"));
    let out_dir = dir.path().join("run");
    assert_eq!(code(&run(&["train", "--bogus"])), 2);
    assert_eq!(code(&run(&["train", "--train", p(&train), "--dev", p(&dev), "--steps", "100", "--eval-every", "30"])), 2);
    assert_eq!(code(&run(&["train", "--train", "/nonexistent.tsv", "--dev", p(&dev), "--out", p(&out_dir)])), 1);
    let broken = dir.path().join("broken.tsv");
    fs::write(&broken, "abc\tabcd\n").unwrap();
    assert_eq!(code(&run(&["train", "--train", p(&broken), "--dev", p(&dev), "--out", p(&out_dir)])), 1);
    let args = [
        "train", "--train", p(&train), "--dev", p(&dev), "--out", p(&out_dir), "--steps", "20",
        "--eval-every", "20", "--num-layers", "1", "--num-heads", "2", "--d-model", "8", "--d-ff", "16",
        "--batch-size", "16", "--warmup-steps", "1", "--peak-lr", "1e300",
    ];
    let out = run(&args);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("step"));
}

#[test]
fn sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    gen_data(&data);
    let (train, dev) = (data.join("train.tsv"), data.join("dev.tsv"));
    let out_dir = dir.path().join("sweep");
    let mut args = vec![
        "sweep", "--train", p(&train), "--dev", p(&dev), "--out", p(&out_dir),
        "--batch-sizes", "4,8,16", "--modes", "vanilla,feature_invariant", "--permute-dev", "5",
        "--steps", "20", "--eval-every", "10",
    ];
    args.extend_from_slice(TINY);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    let header = report.lines().next().unwrap();
    assert!(header.contains("vanilla") && header.contains("feature_invariant"));
    let rows: Vec<&str> = report.lines().skip(1).filter(|l| !l.starts_with("warning")).collect();
    assert_eq!(rows.len(), 3);
    let curve = fs::read_to_string(out_dir.join("curve.tsv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 2 * 3 * 2);

    let mut single = vec!["sweep", "--train", p(&train), "--dev", p(&dev), "--out", p(&out_dir), "--batch-sizes", "8", "--steps", "10", "--eval-every", "10"];
    single.extend_from_slice(TINY);
    let out = run(&single);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);
    assert_eq!(code(&run(&["sweep", "--train", p(&train), "--dev", p(&dev), "--batch-sizes", "8,x"])), 2);
}
