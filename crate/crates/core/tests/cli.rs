use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use seqpl::pseudolabel::predict;
use seqpl::recognizer::checkpoint;
use seqpl::synthdata::{self, Dataset};

const BIN: &str = env!("CARGO_BIN_EXE_seqpl");

// Small and quick; still exercises every stage.
const SMALL: &str = "seed = 5
[data]
pool = 120
val = 30
test = 40
label_fraction = 0.25
[self_train]
rounds = 1
[self_train.train]
iterations = 150
";

fn seqpl(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Command {
    let mut c = Command::new(BIN);
    c.env_remove("SEQPL_SEED");
    for a in args {
        c.arg(a);
    }
    c
}

fn ok(mut c: Command) -> String {
    let out = c.output().unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails(mut c: Command) -> Output {
    let out = c.output().unwrap();
    assert!(
        !out.status.success(),
        "unexpected success: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p
}

fn gen(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let cfg = small_config(dir);
    let out = dir.join(name);
    let mut c = seqpl(&[&"gen-data", &"--out", &out, &"--config", &cfg]);
    c.args(extra);
    ok(c);
    out
}

/// Data plus a one-round run, shared by the report subcommands.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let data = gen(dir, "data", &[]);
    let run = dir.join("run");
    ok(seqpl(&[&"self-train", &"--data", &data, &"--out", &run]));
    (data, run.join("best.ckpt"))
}

#[test]
fn gen_data_counts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let stdout = ok(seqpl(&[&"gen-data", &"--out", &a, &"--config", &cfg]));
    assert_eq!(stdout.trim(), "labeled 30 unlabeled 90 val 30 test 40");
    let b = gen(dir.path(), "b", &[]);
    for f in [
        "labeled.jsonl",
        "unlabeled.jsonl",
        "unlabeled_oracle.jsonl",
        "val.jsonl",
        "test.jsonl",
        "config.toml",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = gen(dir.path(), "c", &["--seed", "6"]);
    assert_ne!(
        std::fs::read(a.join("labeled.jsonl")).unwrap(),
        std::fs::read(c.join("labeled.jsonl")).unwrap()
    );
}

#[test]
fn label_fraction_rounds_on_default_pool() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let stdout = ok(seqpl(&[&"gen-data", &"--out", &out, &"--label-fraction", &"0.05"]));
    assert!(stdout.starts_with("labeled 50 unlabeled 950 "), "{stdout}");
}

#[test]
fn seed_environment_variable_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let flag = gen(dir.path(), "flag", &["--seed", "9"]);
    let env = dir.path().join("env");
    let mut c = seqpl(&[&"gen-data", &"--out", &env, &"--config", &cfg]);
    c.env("SEQPL_SEED", "9");
    ok(c);
    assert_eq!(
        std::fs::read(flag.join("test.jsonl")).unwrap(),
        std::fs::read(env.join("test.jsonl")).unwrap()
    );
    assert!(std::fs::read_to_string(env.join("config.toml"))
        .unwrap()
        .contains("seed = 9"));
}

#[test]
fn self_train_writes_history_and_refuses_reuse() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "data", &[]);
    let run = dir.path().join("run");
    ok(seqpl(&[
        &"self-train",
        &"--data",
        &data,
        &"--out",
        &run,
        &"--rounds",
        &"2",
    ]));
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "round,selected,val_accuracy,val_cer");
    assert_eq!(lines.len(), 1 + 3);
    for r in 0..3 {
        assert!(run.join(format!("round-{r:02}/model.ckpt")).exists());
    }
    assert!(run.join("round-01/selection.csv").exists());
    assert!(!run.join("round-00/selection.csv").exists());
    assert!(!run.join(".lock").exists());
    let manifest = std::fs::read_to_string(run.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 3 + 1);

    let again = fails(seqpl(&[&"self-train", &"--data", &data, &"--out", &run]));
    assert!(stderr(&again).starts_with("invalid-argument:"), "{}", stderr(&again));
}

#[test]
fn fully_labeled_pool_yields_baseline_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "data", &["--label-fraction", "1.0"]);
    let run = dir.path().join("run");
    ok(seqpl(&[
        &"self-train",
        &"--data",
        &data,
        &"--out",
        &run,
        &"--rounds",
        &"3",
    ]));
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(history.lines().nth(1).unwrap().starts_with("0,0,"));
}

#[test]
fn locked_run_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "data", &[]);
    let run = dir.path().join("run");
    std::fs::create_dir(&run).unwrap();
    std::fs::write(run.join(".lock"), "").unwrap();
    let o = fails(seqpl(&[&"self-train", &"--data", &data, &"--out", &run]));
    assert!(stderr(&o).starts_with("locked:"), "{}", stderr(&o));
}

#[test]
fn eval_reports_and_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    let report: serde_json::Value = serde_json::from_str(&ok(seqpl(&[
        &"eval",
        &"--checkpoint",
        &ckpt,
        &"--dataset",
        &data.join("test.jsonl"),
    ])))
    .unwrap();
    let acc = report["word_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(report["count"].as_u64(), Some(40));

    // Same data written under a larger alphabet.
    let ds = synthdata::load(&data.join("test.jsonl")).unwrap();
    let other = Dataset::from_labeled(
        seqpl::recognizer::Vocabulary::alphabetic(ds.vocab.symbols().chars().count() + 1).unwrap(),
        ds.channels,
        &ds.labeled().unwrap(),
    );
    let path = dir.path().join("other.jsonl");
    synthdata::save(&other, &path).unwrap();
    let o = fails(seqpl(&[&"eval", &"--checkpoint", &ckpt, &"--dataset", &path]));
    assert!(stderr(&o).starts_with("vocabulary-mismatch:"), "{}", stderr(&o));

    let empty = Dataset::from_labeled(ds.vocab.clone(), ds.channels, &[]);
    let path = dir.path().join("empty.jsonl");
    synthdata::save(&empty, &path).unwrap();
    let o = fails(seqpl(&[&"eval", &"--checkpoint", &ckpt, &"--dataset", &path]));
    assert!(stderr(&o).starts_with("empty-input:"), "{}", stderr(&o));

    let o = fails(seqpl(&[
        &"eval",
        &"--checkpoint",
        &dir.path().join("missing.ckpt"),
        &"--dataset",
        &path,
    ]));
    assert!(stderr(&o).starts_with("io:"), "{}", stderr(&o));
}

#[test]
fn rejection_tables_oracle_scores_and_zero_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    let test = data.join("test.jsonl");
    let params = checkpoint::load(&ckpt).unwrap();
    let ds = synthdata::load(&test).unwrap();
    let samples = ds.labeled().unwrap();
    let preds = predict(&params, &samples, 5, params.dims.max_len).unwrap();

    // Oracle: score 1 exactly on the errors.
    let oracle: String = preds
        .iter()
        .zip(&samples)
        .map(|(h, s)| if h.tokens == s.label { "0\n" } else { "1\n" })
        .collect();
    let scores = dir.path().join("scores.txt");
    std::fs::write(&scores, oracle).unwrap();
    let out = dir.path().join("rej");
    let stdout = ok(seqpl(&[
        &"rejection",
        &"--checkpoint",
        &ckpt,
        &"--dataset",
        &test,
        &"--out",
        &out,
        &"--svg",
        &"--scores",
        &scores,
    ]));
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 3, "{stdout}");
    assert!(lines[0].starts_with("prr uncertainty "));
    assert!(lines[1].starts_with("prr confidence "));
    let errors = preds.iter().zip(&samples).filter(|(h, s)| h.tokens != s.label).count();
    if errors > 0 && errors < samples.len() {
        assert_eq!(lines[2], "prr scores 1.000000");
    }
    let table = std::fs::read_to_string(out.join("rejection-uncertainty.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap().split(',').count(), 2);
    assert_eq!(table.lines().count(), 1 + samples.len() + 1);
    assert!(std::fs::read_to_string(out.join("rejection.svg"))
        .unwrap()
        .starts_with("<svg"));
    let prr: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("prr.json")).unwrap()).unwrap();
    assert_eq!(prr["errors"].as_u64(), Some(errors as u64));

    // Relabel with the model's own predictions: nothing is wrong.
    let mut perfect = samples.clone();
    for (s, h) in perfect.iter_mut().zip(&preds) {
        s.label = h.tokens.clone();
    }
    let path = dir.path().join("perfect.jsonl");
    synthdata::save(&Dataset::from_labeled(ds.vocab.clone(), ds.channels, &perfect), &path).unwrap();
    let stdout = ok(seqpl(&[
        &"rejection",
        &"--checkpoint",
        &ckpt,
        &"--dataset",
        &path,
        &"--out",
        &dir.path().join("rej2"),
        &"--measure",
        &"uncertainty",
    ]));
    assert_eq!(stdout.trim(), "prr uncertainty no-errors");
}

#[test]
fn calibrate_and_tau_sweep_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = trained(dir.path());
    let test = data.join("test.jsonl");

    let csv = dir.path().join("cal.csv");
    ok(seqpl(&[
        &"calibrate",
        &"--checkpoint",
        &ckpt,
        &"--dataset",
        &test,
        &"--out",
        &csv,
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "p,k,ece,subset_ece_0.25,subset_ece_0.5,subset_ece_1"
    );
    assert_eq!(text.lines().count(), 1 + 5);

    let csv = dir.path().join("cal0.csv");
    ok(seqpl(&[
        &"calibrate",
        &"--checkpoint",
        &ckpt,
        &"--dataset",
        &test,
        &"--out",
        &csv,
        &"--p-grid",
        &"0",
        &"--ensembles",
        &"1",
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().starts_with("0,1,"));

    let csv = dir.path().join("tau.csv");
    let oracle = data.join("unlabeled_oracle.jsonl");
    ok(seqpl(&[
        &"tau-sweep",
        &"--checkpoint",
        &ckpt,
        &"--dataset",
        &oracle,
        &"--out",
        &csv,
        &"--taus",
        &"0,0.01,inf",
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "tau,selected,fraction,pseudo_label_accuracy");
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("inf,90,1,"), "{}", rows[3]);
}
