use serde::{Deserialize, Serialize};

use super::score::{score_all, ScoredSample, ScoringConfig};
use super::select::{select, SelectionMask};
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::numkit::{derive_seed, Rng};
use crate::recognizer::{train, Architecture, FeatureSequence, LabeledSample, ModelParams, TrainConfig, Vocabulary};
use crate::synthdata::UnlabeledSample;
use crate::uncertainty::EnsembleSpec;

use super::score::evaluate_model;

const INIT_STREAM: u64 = 0x696e6974;
const TRAIN_STREAM: u64 = 0x7472616e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfTrainConfig {
    /// Selection threshold on total uncertainty; `inf` selects everything.
    pub tau: f64,
    /// Pseudo-labeling rounds after the supervised round 0.
    pub rounds: usize,
    pub beam_width: usize,
    /// Ensemble size `K`.
    pub ensembles: usize,
    pub temperature: f64,
    /// Ensemble dropout rate `p` (training dropout lives in `train`).
    pub dropout: f64,
    /// Decode budget, including the stop token.
    pub max_len: usize,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.01,
            rounds: 5,
            beam_width: 5,
            ensembles: 5,
            temperature: 0.01,
            dropout: 0.1,
            max_len: 5,
            arch: Architecture::default(),
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.tau >= 0.0) {
            return bad(format!("tau {} must be >= 0", self.tau));
        }
        if self.rounds == 0 {
            return bad("rounds must be >= 1".into());
        }
        if self.beam_width == 0 || self.ensembles == 0 {
            return bad("beam_width and ensembles must be >= 1".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be > 0", self.temperature));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_len == 0 {
            return bad("max_len must be >= 1".into());
        }
        self.train.validate()
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            beam_width: self.beam_width,
            temperature: self.temperature,
            s_max: self.max_len,
        }
    }

    /// The round's fixed virtual ensemble.
    pub fn ensemble(&self, units: usize, round: usize) -> Result<EnsembleSpec> {
        EnsembleSpec::sample(self.dropout, self.ensembles, units, self.seed, round as u64)
    }
}

/// A pseudo-labeled sample admitted to the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoEntry {
    pub id: u64,
    pub features: FeatureSequence,
    pub label: Vec<usize>,
    pub uncertainty: f64,
    pub round: usize,
}

impl PseudoEntry {
    pub fn to_sample(&self) -> LabeledSample {
        LabeledSample {
            id: self.id,
            features: self.features.clone(),
            label: self.label.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundSelection {
    /// Labeled pool followed by the selected entries, in pool order.
    pub train_set: Vec<LabeledSample>,
    pub entries: Vec<PseudoEntry>,
    /// Every unlabeled sample, selected or not.
    pub scored: Vec<ScoredSample>,
    pub mask: SelectionMask,
}

/// Scores all of `d_u` with `params`, keeps samples with `U ≤ τ` and
/// appends them to `d_l`.
pub fn pseudo_label_round(
    params: &ModelParams,
    d_l: &[LabeledSample],
    d_u: &[UnlabeledSample],
    config: &SelfTrainConfig,
    round: usize,
) -> Result<RoundSelection> {
    let ens = config.ensemble(params.dims.hidden, round)?;
    let scored = score_all(params, d_u.iter().map(|s| (s.id, &s.features)), &config.scoring(), &ens)?;
    let us: Vec<f64> = scored.iter().map(|s| s.uncertainty.total).collect();
    let mask = select(&us, config.tau)?;
    let entries: Vec<PseudoEntry> = mask
        .indices()
        .map(|i| PseudoEntry {
            id: d_u[i].id,
            features: d_u[i].features.clone(),
            label: scored[i].prediction.tokens.clone(),
            uncertainty: us[i],
            round,
        })
        .collect();
    let mut train_set = d_l.to_vec();
    train_set.extend(entries.iter().map(PseudoEntry::to_sample));
    Ok(RoundSelection {
        train_set,
        entries,
        scored,
        mask,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub selected: usize,
    pub train_size: usize,
    pub val_accuracy: f64,
    pub val_cer: f64,
    pub checkpoint: Option<String>,
}

/// What a finished round exposes to the persistence hook.
pub struct RoundArtifacts<'a> {
    pub round: usize,
    pub params: &'a ModelParams,
    pub validation: &'a EvalReport,
    /// `None` for the supervised round.
    pub selection: Option<&'a RoundSelection>,
    pub train_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfTrainOutcome {
    pub best: ModelParams,
    pub best_round: usize,
    pub history: Vec<RoundRecord>,
}

/// Called after each round; may return a checkpoint reference for the history.
pub type RoundHook<'h> = dyn FnMut(&RoundArtifacts) -> Result<Option<String>> + 'h;

/// A trained round-0 model and its history entry.
#[derive(Clone, Debug, PartialEq)]
pub struct Baseline {
    pub params: ModelParams,
    pub record: RoundRecord,
}

fn fresh_params(
    d_l: &[LabeledSample],
    vocab: &Vocabulary,
    config: &SelfTrainConfig,
    round: usize,
) -> Result<ModelParams> {
    let first = d_l.first().ok_or(Error::Empty("labeled pool"))?;
    let dims = config
        .arch
        .dims(first.features.channels(), vocab.size(), config.max_len);
    let mut rng = Rng::derive(config.seed, &[INIT_STREAM, round as u64]);
    ModelParams::init(dims, vocab.clone(), &mut rng)
}

fn train_round(
    d_train: &[LabeledSample],
    d_l: &[LabeledSample],
    vocab: &Vocabulary,
    config: &SelfTrainConfig,
    round: usize,
) -> Result<ModelParams> {
    let init = fresh_params(d_l, vocab, config, round)?;
    let seed = derive_seed(config.seed, &[TRAIN_STREAM, round as u64]);
    Ok(train(init, d_train, &config.train, seed)?.0)
}

/// Round 0: supervised training on the labeled pool alone.
pub fn train_baseline(
    d_l: &[LabeledSample],
    val: &[LabeledSample],
    vocab: &Vocabulary,
    config: &SelfTrainConfig,
    hook: &mut RoundHook,
) -> Result<Baseline> {
    config.validate()?;
    if d_l.is_empty() {
        return Err(Error::Empty("labeled pool"));
    }
    let params = train_round(d_l, d_l, vocab, config, 0)?;
    let validation = evaluate_model(&params, val, config.beam_width)?;
    let checkpoint = hook(&RoundArtifacts {
        round: 0,
        params: &params,
        validation: &validation,
        selection: None,
        train_size: d_l.len(),
    })?;
    let record = RoundRecord {
        round: 0,
        selected: 0,
        train_size: d_l.len(),
        val_accuracy: validation.word_accuracy,
        val_cer: validation.cer,
        checkpoint,
    };
    Ok(Baseline { params, record })
}

/// Rounds `1..=rounds` starting from a trained baseline. Each round
/// re-labels the whole unlabeled pool with the previous model and retrains
/// from a fresh initialization.
pub fn self_train_from(
    baseline: Baseline,
    d_l: &[LabeledSample],
    d_u: &[UnlabeledSample],
    val: &[LabeledSample],
    config: &SelfTrainConfig,
    hook: &mut RoundHook,
) -> Result<SelfTrainOutcome> {
    config.validate()?;
    let vocab = baseline.params.vocab.clone();
    let mut history = vec![baseline.record];
    if d_u.is_empty() {
        return Ok(SelfTrainOutcome {
            best: baseline.params,
            best_round: 0,
            history,
        });
    }
    let mut current = baseline.params;
    let mut best: Option<(ModelParams, usize, f64, f64)> = None;
    for round in 1..=config.rounds {
        let selection = pseudo_label_round(&current, d_l, d_u, config, round)?;
        let params = train_round(&selection.train_set, d_l, &vocab, config, round)?;
        let validation = evaluate_model(&params, val, config.beam_width)?;
        let checkpoint = hook(&RoundArtifacts {
            round,
            params: &params,
            validation: &validation,
            selection: Some(&selection),
            train_size: selection.train_set.len(),
        })?;
        history.push(RoundRecord {
            round,
            selected: selection.mask.count(),
            train_size: selection.train_set.len(),
            val_accuracy: validation.word_accuracy,
            val_cer: validation.cer,
            checkpoint,
        });
        let better = match &best {
            None => true,
            Some((_, _, acc, cer)) => {
                validation.word_accuracy > *acc || (validation.word_accuracy == *acc && validation.cer < *cer)
            }
        };
        if better {
            best = Some((params.clone(), round, validation.word_accuracy, validation.cer));
        }
        current = params;
    }
    let (best, best_round, _, _) = best.expect("rounds >= 1");
    Ok(SelfTrainOutcome {
        best,
        best_round,
        history,
    })
}

/// Supervised round 0 followed by `config.rounds` pseudo-labeling rounds.
/// Returns the best round after the first by validation word accuracy
/// (ties: lower CER, then earlier round), or round 0 when `d_u` is empty.
pub fn self_train(
    d_l: &[LabeledSample],
    d_u: &[UnlabeledSample],
    val: &[LabeledSample],
    vocab: &Vocabulary,
    config: &SelfTrainConfig,
    hook: &mut RoundHook,
) -> Result<SelfTrainOutcome> {
    let baseline = train_baseline(d_l, val, vocab, config, hook)?;
    self_train_from(baseline, d_l, d_u, val, config, hook)
}

/// Hook that persists nothing.
pub fn no_hook(_: &RoundArtifacts) -> Result<Option<String>> {
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recognizer::TrainConfig;
    use crate::synthdata::{generate, split, SynthConfig};
    use crate::uncertainty::{read_diagnostics, write_diagnostics, DiagnosticRecord};

    fn tiny() -> (SynthConfig, SelfTrainConfig) {
        let synth = SynthConfig {
            symbols: 4,
            min_len: 2,
            max_len: 3,
            channels: 4,
            confusable: vec![(0, 1)],
            ..SynthConfig::default()
        };
        let config = SelfTrainConfig {
            tau: 0.2,
            rounds: 2,
            beam_width: 3,
            ensembles: 3,
            max_len: synth.s_max(),
            arch: Architecture {
                hidden: 6,
                embed: 4,
                attention: 6,
            },
            train: TrainConfig {
                iterations: 40,
                batch_size: 4,
                ..TrainConfig::default()
            },
            seed: 5,
            ..SelfTrainConfig::default()
        };
        (synth, config)
    }

    fn data(synth: &SynthConfig) -> (Vec<LabeledSample>, Vec<UnlabeledSample>, Vec<LabeledSample>) {
        let all = generate(synth, 40).unwrap();
        let val = all[30..].to_vec();
        let s = split(all[..30].to_vec(), 0.3, 1).unwrap();
        (s.labeled, s.unlabeled, val)
    }

    #[test]
    fn round_matches_recount_of_diagnostic_dump() {
        let (synth, config) = tiny();
        let (d_l, d_u, val) = data(&synth);
        let vocab = synth.vocabulary().unwrap();
        let base = train_baseline(&d_l, &val, &vocab, &config, &mut no_hook).unwrap();
        let sel = pseudo_label_round(&base.params, &d_l, &d_u, &config, 1).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diag.jsonl");
        let records: Vec<DiagnosticRecord> = sel
            .scored
            .iter()
            .map(|s| DiagnosticRecord::new(s.id, &s.uncertainty))
            .collect();
        write_diagnostics(&path, &records).unwrap();
        let dumped = read_diagnostics(&path).unwrap();
        let recount = dumped.iter().filter(|r| r.uncertainty <= config.tau).count();
        assert_eq!(sel.mask.count(), recount);
        assert_eq!(sel.mask.len(), d_u.len());

        assert_eq!(sel.entries.len(), recount);
        assert!(sel.entries.iter().all(|e| e.uncertainty <= config.tau && e.round == 1));
        assert_eq!(&sel.train_set[..d_l.len()], &d_l[..]);
        assert_eq!(sel.train_set.len(), d_l.len() + recount);
        for e in &sel.entries {
            let s = sel.scored.iter().find(|s| s.id == e.id).unwrap();
            assert_eq!(e.label, s.hypotheses.best().unwrap().tokens);
        }
    }

    #[test]
    fn selection_grows_with_tau() {
        let (synth, config) = tiny();
        let (d_l, d_u, val) = data(&synth);
        let vocab = synth.vocabulary().unwrap();
        let base = train_baseline(&d_l, &val, &vocab, &config, &mut no_hook).unwrap();
        let mut prev = 0;
        for tau in [0.0, 0.05, 0.3, 1.0, f64::INFINITY] {
            let c = SelfTrainConfig { tau, ..config.clone() };
            let n = pseudo_label_round(&base.params, &d_l, &d_u, &c, 1)
                .unwrap()
                .mask
                .count();
            assert!(n >= prev);
            prev = n;
        }
        assert_eq!(prev, d_u.len());
        let none = pseudo_label_round(&base.params, &d_l, &[], &config, 1).unwrap();
        assert_eq!(none.train_set, d_l);
        assert!(none.mask.is_empty());
    }

    #[test]
    fn history_shape_and_determinism() {
        let (synth, config) = tiny();
        let (d_l, d_u, val) = data(&synth);
        let vocab = synth.vocabulary().unwrap();
        let mut seen = Vec::new();
        let mut hook = |a: &RoundArtifacts| {
            seen.push((a.round, a.selection.is_some()));
            Ok(Some(format!("round-{}", a.round)))
        };
        let a = self_train(&d_l, &d_u, &val, &vocab, &config, &mut hook).unwrap();
        assert_eq!(seen, vec![(0, false), (1, true), (2, true)]);
        assert_eq!(a.history.len(), config.rounds + 1);
        assert!(a.best_round >= 1);
        assert_eq!(a.history[2].checkpoint.as_deref(), Some("round-2"));
        let best_acc = a.history[1..].iter().map(|r| r.val_accuracy).fold(f64::MIN, f64::max);
        assert_eq!(a.history[a.best_round].val_accuracy, best_acc);
        for r in &a.history {
            assert_eq!(r.train_size, d_l.len() + r.selected);
        }
        let b = self_train(&d_l, &d_u, &val, &vocab, &config, &mut no_hook).unwrap();
        assert_eq!(a.best, b.best);
        let strip = |h: &[RoundRecord]| {
            h.iter()
                .map(|r| (r.selected, r.val_accuracy, r.val_cer))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.history), strip(&b.history));
    }

    #[test]
    fn empty_unlabeled_pool_is_the_supervised_baseline() {
        let (synth, config) = tiny();
        let (d_l, _, val) = data(&synth);
        let vocab = synth.vocabulary().unwrap();
        let out = self_train(&d_l, &[], &val, &vocab, &config, &mut no_hook).unwrap();
        let base = train_baseline(&d_l, &val, &vocab, &config, &mut no_hook).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_round, 0);
        assert_eq!(out.best, base.params);
    }

    #[test]
    fn rejects_empty_labeled_pool_and_bad_config() {
        let (synth, config) = tiny();
        let (_, d_u, val) = data(&synth);
        let vocab = synth.vocabulary().unwrap();
        assert!(self_train(&[], &d_u, &val, &vocab, &config, &mut no_hook).is_err());
        let bad = SelfTrainConfig {
            rounds: 0,
            ..config.clone()
        };
        assert!(bad.validate().is_err());
        let bad = SelfTrainConfig { tau: -1.0, ..config };
        assert!(bad.validate().is_err());
    }
}
