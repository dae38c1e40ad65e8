use std::path::{Path, PathBuf};

use serde_json::json;

use super::config::RunConfig;
use super::rundir::{ensure_dir, Manifest, RunLock};
use super::{Cli, Command, ConfigArgs, MeasureArg, ScoringArgs};
use crate::diagnostics::{calibration_row, rejection, score_labeled, tau_sweep, Measure, RejectionResult};
use crate::error::{Error, Result};
use crate::metrics::{prr, rejection_curve, rejection_svg, write_csv, write_rejection_csv, PrrOutcome, RejectionOrder};
use crate::pseudolabel::{evaluate_model, self_train, RoundArtifacts, ScoringConfig};
use crate::recognizer::{checkpoint, LabeledSample, ModelParams, Vocabulary};
use crate::synthdata::{self, Dataset};
use crate::uncertainty::EnsembleSpec;

pub const LABELED_FILE: &str = "labeled.jsonl";
pub const UNLABELED_FILE: &str = "unlabeled.jsonl";
pub const ORACLE_FILE: &str = "unlabeled_oracle.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const HISTORY_FILE: &str = "history.csv";

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { out, config } => gen_data(&out, &config),
        Command::SelfTrain { data, out, config } => cmd_self_train(&data, &out, &config),
        Command::Eval {
            checkpoint,
            dataset,
            beam_width,
            out,
        } => eval(&checkpoint, &dataset, beam_width, out.as_deref()),
        Command::Rejection {
            checkpoint,
            dataset,
            measure,
            out,
            svg,
            scoring,
            scores,
        } => cmd_rejection(&checkpoint, &dataset, measure, &out, svg, &scoring, scores.as_deref()),
        Command::Calibrate {
            checkpoint,
            dataset,
            p_grid,
            subsets,
            bins,
            out,
            scoring,
        } => calibrate(&checkpoint, &dataset, &p_grid, &subsets, bins, &out, &scoring),
        Command::TauSweep {
            checkpoint,
            dataset,
            taus,
            out,
            scoring,
        } => cmd_tau_sweep(&checkpoint, &dataset, &taus, &out, &scoring),
    }
}

fn build_config(args: &ConfigArgs, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut c = match (&args.config, fallback) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(p)) if p.exists() => RunConfig::load(p)?,
        _ => RunConfig::default(),
    };
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.label_fraction {
        c.data.label_fraction = v;
    }
    let st = &mut c.self_train;
    if let Some(v) = args.tau {
        st.tau = v;
    }
    if let Some(v) = args.beam_width {
        st.beam_width = v;
    }
    if let Some(v) = args.ensembles {
        st.ensembles = v;
    }
    if let Some(v) = args.temperature {
        st.temperature = v;
    }
    if let Some(v) = args.dropout {
        st.dropout = v;
    }
    if let Some(v) = args.rounds {
        st.rounds = v;
    }
    c.resolve()
}

fn gen_data(out: &Path, args: &ConfigArgs) -> Result<()> {
    let config = build_config(args, None)?;
    ensure_dir(out)?;
    let _lock = RunLock::acquire(out)?;
    let (synth, d) = (&config.synth, &config.data);
    let vocab = synth.vocabulary()?;
    let exp = config.experiment()?;
    let oracle = exp.unlabeled_oracle()?;
    let (s, val, test) = (&exp.split, &exp.val, &exp.test);

    let ch = synth.channels;
    synthdata::save(
        &Dataset::from_labeled(vocab.clone(), ch, &s.labeled),
        &out.join(LABELED_FILE),
    )?;
    synthdata::save(
        &Dataset::from_unlabeled(vocab.clone(), ch, &s.unlabeled),
        &out.join(UNLABELED_FILE),
    )?;
    synthdata::save(
        &Dataset::from_labeled(vocab.clone(), ch, &oracle),
        &out.join(ORACLE_FILE),
    )?;
    synthdata::save(&Dataset::from_labeled(vocab.clone(), ch, val), &out.join(VAL_FILE))?;
    synthdata::save(&Dataset::from_labeled(vocab, ch, test), &out.join(TEST_FILE))?;
    config.save(&out.join(CONFIG_FILE))?;
    let summary = json!({
        "labeled": s.labeled.len(),
        "unlabeled": s.unlabeled.len(),
        "val": val.len(),
        "test": test.len(),
        "label_fraction": d.label_fraction,
        "seed": config.seed,
        "files": {
            "labeled": LABELED_FILE,
            "unlabeled": UNLABELED_FILE,
            "unlabeled_oracle": ORACLE_FILE,
            "val": VAL_FILE,
            "test": TEST_FILE,
            "config": CONFIG_FILE,
        },
    });
    write_json(&out.join("split.json"), &summary)?;
    println!(
        "labeled {} unlabeled {} val {} test {}",
        s.labeled.len(),
        s.unlabeled.len(),
        val.len(),
        test.len()
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn same_vocab(expected: &Vocabulary, found: &Vocabulary, what: &str) -> Result<()> {
    if expected != found {
        return Err(Error::VocabularyMismatch {
            checkpoint: format!("{what}: {}", expected.symbols()),
            dataset: found.symbols(),
        });
    }
    Ok(())
}

fn cmd_self_train(data: &Path, out: &Path, args: &ConfigArgs) -> Result<()> {
    let config = build_config(args, Some(&data.join(CONFIG_FILE)))?;
    let labeled_ds = synthdata::load(&data.join(LABELED_FILE))?;
    let unlabeled_ds = synthdata::load(&data.join(UNLABELED_FILE))?;
    let val_ds = synthdata::load(&data.join(VAL_FILE))?;
    let vocab = labeled_ds.vocab.clone();
    same_vocab(&vocab, &unlabeled_ds.vocab, "labeled pool")?;
    same_vocab(&vocab, &val_ds.vocab, "labeled pool")?;
    let d_l = labeled_ds.labeled()?;
    let d_u = unlabeled_ds.unlabeled();
    let val = val_ds.labeled()?;

    ensure_dir(out)?;
    let _lock = RunLock::acquire(out)?;
    let manifest = Manifest::create(out)?;
    config.save(&out.join(CONFIG_FILE))?;
    manifest.append(&json!({
        "event": "start",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config": CONFIG_FILE,
        "data": data.display().to_string(),
        "labeled": d_l.len(),
        "unlabeled": d_u.len(),
        "val": val.len(),
    }))?;

    let mut hook = |a: &RoundArtifacts| -> Result<Option<String>> { persist_round(out, &manifest, &vocab, a) };
    let outcome = self_train(&d_l, &d_u, &val, &vocab, &config.self_train, &mut hook)?;

    write_csv(
        &out.join(HISTORY_FILE),
        &["round", "selected", "val_accuracy", "val_cer"],
        outcome.history.iter().map(|r| {
            [
                r.round.to_string(),
                r.selected.to_string(),
                r.val_accuracy.to_string(),
                r.val_cer.to_string(),
            ]
        }),
    )?;
    let best = out.join("best.ckpt");
    checkpoint::save(&outcome.best, &best)?;
    manifest.append(&json!({
        "event": "finish",
        "best_round": outcome.best_round,
        "best_checkpoint": "best.ckpt",
        "history": HISTORY_FILE,
    }))?;
    for r in &outcome.history {
        println!(
            "round {} selected {} val_accuracy {:.4} val_cer {:.4}",
            r.round, r.selected, r.val_accuracy, r.val_cer
        );
    }
    println!("best round {}", outcome.best_round);
    Ok(())
}

fn persist_round(out: &Path, manifest: &Manifest, vocab: &Vocabulary, a: &RoundArtifacts) -> Result<Option<String>> {
    let name = format!("round-{:02}", a.round);
    let dir = out.join(&name);
    ensure_dir(&dir)?;
    let ckpt = format!("{name}/model.ckpt");
    checkpoint::save(a.params, &out.join(&ckpt))?;
    let selected = a.selection.map_or(0, |s| s.mask.count());
    let metrics = format!("{name}/metrics.json");
    write_json(
        &out.join(&metrics),
        &json!({
            "round": a.round,
            "train_size": a.train_size,
            "selected": selected,
            "validation": a.validation,
        }),
    )?;
    let mut entry = json!({
        "event": "round",
        "round": a.round,
        "checkpoint": ckpt,
        "metrics": metrics,
    });
    if let Some(sel) = a.selection {
        let file = format!("{name}/selection.csv");
        write_csv(
            &out.join(&file),
            &["id", "uncertainty", "label", "selected"],
            sel.scored.iter().zip(sel.mask.as_slice()).map(|(s, &q)| {
                [
                    s.id.to_string(),
                    s.uncertainty.total.to_string(),
                    vocab.decode(&s.prediction.tokens),
                    u8::from(q).to_string(),
                ]
            }),
        )?;
        entry["selection"] = json!(file);
    }
    manifest.append(&entry)?;
    Ok(Some(ckpt))
}

fn load_model_and_data(ckpt: &Path, dataset: &Path) -> Result<(ModelParams, Vec<LabeledSample>)> {
    let params = checkpoint::load(ckpt)?;
    let ds = synthdata::load(dataset)?;
    if params.vocab != ds.vocab {
        return Err(Error::VocabularyMismatch {
            checkpoint: params.vocab.symbols(),
            dataset: ds.vocab.symbols(),
        });
    }
    if ds.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let samples = ds.labeled()?;
    Ok((params, samples))
}

fn eval(ckpt: &Path, dataset: &Path, beam_width: usize, out: Option<&Path>) -> Result<()> {
    let (params, samples) = load_model_and_data(ckpt, dataset)?;
    let report = evaluate_model(&params, &samples, beam_width)?;
    let text = serde_json::to_string(&report).map_err(|e| Error::invalid(e.to_string()))?;
    if let Some(p) = out {
        write_json(p, &report)?;
    }
    println!("{text}");
    Ok(())
}

fn scoring_setup(params: &ModelParams, args: &ScoringArgs) -> Result<(ScoringConfig, EnsembleSpec)> {
    let scoring = ScoringConfig {
        beam_width: args.beam_width,
        temperature: args.temperature,
        s_max: params.dims.max_len,
    };
    let ens = if args.dropout == 0.0 {
        EnsembleSpec::deterministic(params.dims.hidden)
    } else {
        EnsembleSpec::sample(args.dropout, args.ensembles, params.dims.hidden, args.seed, 0)?
    };
    Ok((scoring, ens))
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn prr_json(p: PrrOutcome) -> serde_json::Value {
    json!({ "prr": p.value(), "outcome": p.to_string() })
}

#[allow(clippy::too_many_arguments)]
fn cmd_rejection(
    ckpt: &Path,
    dataset: &Path,
    measure: MeasureArg,
    out: &Path,
    svg: bool,
    args: &ScoringArgs,
    scores: Option<&Path>,
) -> Result<()> {
    let (params, samples) = load_model_and_data(ckpt, dataset)?;
    let (scoring, ens) = scoring_setup(&params, args)?;
    let (scored, correct) = score_labeled(&params, &samples, &scoring, &ens)?;
    ensure_dir(out)?;

    let measures: &[Measure] = match measure {
        MeasureArg::Uncertainty => &[Measure::Uncertainty],
        MeasureArg::Confidence => &[Measure::Confidence],
        MeasureArg::Both => &[Measure::Uncertainty, Measure::Confidence],
    };
    let results: Vec<RejectionResult> = measures
        .iter()
        .map(|&m| rejection(&scored, &correct, m))
        .collect::<Result<_>>()?;
    let mut summary = serde_json::Map::new();
    let mut curves: Vec<(String, PathBuf, crate::metrics::RejectionCurve)> = Vec::new();
    for r in results {
        let file = out.join(format!("rejection-{}.csv", r.measure.name()));
        curves.push((r.measure.name().to_string(), file, r.curve));
        summary.insert(r.measure.name().into(), prr_json(r.prr));
    }
    if let Some(path) = scores {
        let s = read_scores(path)?;
        let wrong: Vec<bool> = correct.iter().map(|c| !c).collect();
        let curve = rejection_curve(&s, &wrong, RejectionOrder::UncertaintyDescending)?;
        summary.insert("scores".into(), prr_json(prr(&curve)));
        curves.push(("scores".into(), out.join("rejection-scores.csv"), curve));
    }
    for (name, file, curve) in &curves {
        write_rejection_csv(file, curve)?;
        println!("prr {name} {}", summary[name]["outcome"].as_str().unwrap_or_default());
    }
    summary.insert("n".into(), json!(correct.len()));
    summary.insert("errors".into(), json!(correct.iter().filter(|c| !**c).count()));
    write_json(&out.join("prr.json"), &summary)?;
    if svg {
        let named: Vec<(&str, &crate::metrics::RejectionCurve)> =
            curves.iter().map(|(n, _, c)| (n.as_str(), c)).collect();
        let path = out.join("rejection.svg");
        std::fs::write(&path, rejection_svg(&named)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn calibrate(
    ckpt: &Path,
    dataset: &Path,
    p_grid: &[f64],
    subsets: &[f64],
    bins: usize,
    out: &Path,
    args: &ScoringArgs,
) -> Result<()> {
    if p_grid.is_empty() {
        return Err(Error::invalid("p-grid is empty"));
    }
    let (params, samples) = load_model_and_data(ckpt, dataset)?;
    let (scoring, _) = scoring_setup(&params, args)?;
    let rows = p_grid
        .iter()
        .map(|&p| calibration_row(&params, &samples, &scoring, p, args.ensembles, args.seed, subsets, bins))
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec!["p".to_string(), "k".into(), "ece".into()];
    header.extend(subsets.iter().map(|f| format!("subset_ece_{f}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        out,
        &header_refs,
        rows.iter().map(|r| {
            let mut row = vec![r.p.to_string(), r.k.to_string(), r.ece.to_string()];
            row.extend(r.subsets.iter().map(|(_, e)| e.to_string()));
            row
        }),
    )?;
    for r in &rows {
        let subs: Vec<String> = r.subsets.iter().map(|(f, e)| format!("{f}:{e:.4}")).collect();
        println!("p {} k {} ece {:.4} subsets {}", r.p, r.k, r.ece, subs.join(" "));
    }
    Ok(())
}

fn cmd_tau_sweep(ckpt: &Path, dataset: &Path, taus: &[f64], out: &Path, args: &ScoringArgs) -> Result<()> {
    let (params, samples) = load_model_and_data(ckpt, dataset)?;
    let (scoring, ens) = scoring_setup(&params, args)?;
    let (scored, correct) = score_labeled(&params, &samples, &scoring, &ens)?;
    let points = tau_sweep(&scored, &correct, taus)?;
    write_csv(
        out,
        &["tau", "selected", "fraction", "pseudo_label_accuracy"],
        points.iter().map(|p| {
            [
                p.tau.to_string(),
                p.selected.to_string(),
                p.fraction.to_string(),
                p.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            ]
        }),
    )?;
    for p in &points {
        let acc = p.accuracy.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!("tau {} selected {} accuracy {acc}", p.tau, p.selected);
    }
    Ok(())
}
