//! Stochastic inference: MC-Dropout ensemble posteriors under teacher forcing,
//! per-step entropy and the temperature-weighted total uncertainty `U`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::{Hypothesis, HypothesisSet};
use crate::error::{Error, Result};
use crate::numkit::{log_sum_exp, sample_masks, DropoutMask, Rng};
use crate::recognizer::{Encoded, FeatureSequence, Model, ModelParams};

/// Tolerance on `Σp = 1` when validating a distribution.
const SIMPLEX_TOL: f64 = 1e-9;

/// A fixed virtual ensemble: `K` dropout masks shared by every sample scored
/// in one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    p: f64,
    masks: Vec<DropoutMask>,
    seed: u64,
}

impl EnsembleSpec {
    /// Samples `k` masks over `units` encoder outputs from `(seed, round)`.
    pub fn sample(p: f64, k: usize, units: usize, seed: u64, round: u64) -> Result<Self> {
        let mut rng = Rng::derive(seed, &[0x656e73, round]);
        Ok(Self {
            p,
            masks: sample_masks(p, k, units, &mut rng)?,
            seed,
        })
    }

    /// Single member without dropout: the deterministic model.
    pub fn deterministic(units: usize) -> Self {
        Self {
            p: 0.0,
            masks: vec![DropoutMask::identity(units)],
            seed: 0,
        }
    }

    pub fn from_masks(p: f64, masks: Vec<DropoutMask>, seed: u64) -> Result<Self> {
        if masks.is_empty() {
            return Err(Error::invalid("ensemble needs K >= 1 masks"));
        }
        Ok(Self { p, masks, seed })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn k(&self) -> usize {
        self.masks.len()
    }

    pub fn masks(&self) -> &[DropoutMask] {
        &self.masks
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The encodings seen by each member (mask `k` applied to `enc`).
    pub fn member_encodings(&self, model: &Model, enc: &Encoded) -> Result<Vec<Encoded>> {
        self.masks
            .iter()
            .map(|m| {
                if m.p() == 0.0 {
                    model.remask(enc, None)
                } else {
                    model.remask(enc, Some(m))
                }
            })
            .collect()
    }
}

/// Per-member teacher-forced step distributions, indexed `[k][t][token]`.
pub fn member_distributions(model: &Model, members: &[Encoded], hyp: &Hypothesis) -> Result<Vec<Vec<Vec<f64>>>> {
    if hyp.tokens.is_empty() {
        return Err(Error::Empty("hypothesis tokens"));
    }
    members
        .iter()
        .map(|enc| model.teacher_forced_dists(enc, &hyp.tokens))
        .collect()
}

/// Elementwise mean over members of `[k][t][token]` distributions.
pub fn average_members(per_member: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let first = per_member.first().ok_or(Error::Empty("ensemble members"))?;
    let k = per_member.len() as f64;
    let mut mean: Vec<Vec<f64>> = first.iter().map(|d| vec![0.0; d.len()]).collect();
    for member in per_member {
        if member.len() != mean.len() {
            return Err(Error::invalid("ensemble members disagree on step count"));
        }
        for (acc, d) in mean.iter_mut().zip(member) {
            for (a, x) in acc.iter_mut().zip(d) {
                *a += x;
            }
        }
    }
    for row in &mut mean {
        row.iter_mut().for_each(|a| *a /= k);
    }
    Ok(mean)
}

/// Ensemble-mean predictive distribution at every step of `hyp`, each member
/// teacher-forced on the same tokens with its own encoder mask.
pub fn stochastic_inference(
    params: &ModelParams,
    v: &FeatureSequence,
    hyp: &Hypothesis,
    ens: &EnsembleSpec,
) -> Result<Vec<Vec<f64>>> {
    let model = Model::new(params);
    let enc = model.encode(v, None)?;
    let members = ens.member_encodings(&model, &enc)?;
    average_members(&member_distributions(&model, &members, hyp)?)
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn step_entropy(dist: &[f64]) -> Result<f64> {
    if dist.is_empty() {
        return Err(Error::Empty("distribution"));
    }
    let mut sum = 0.0;
    for &p in dist {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidDistribution(format!("component {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    let h: f64 = dist.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    Ok(h.clamp(0.0, (dist.len() as f64).ln()))
}

/// `ω_b = softmax_b(ln P_b / T)`.
pub fn hypothesis_weights(log_probs: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature {temperature} must be > 0")));
    }
    if log_probs.is_empty() {
        return Err(Error::Empty("hypothesis set"));
    }
    if log_probs.iter().any(|lp| lp.is_nan() || *lp == f64::INFINITY) {
        return Err(Error::invalid("hypothesis log-probabilities must be finite or -inf"));
    }
    let scaled: Vec<f64> = log_probs.iter().map(|lp| lp / temperature).collect();
    let lse = log_sum_exp(&scaled);
    if !lse.is_finite() {
        return Err(Error::invalid("every hypothesis has zero probability"));
    }
    Ok(scaled.iter().map(|s| (s - lse).exp()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisUncertainty {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub weight: f64,
    pub entropies: Vec<f64>,
}

impl HypothesisUncertainty {
    pub fn length(&self) -> usize {
        self.entropies.len()
    }

    pub fn mean_entropy(&self) -> f64 {
        self.entropies.iter().sum::<f64>() / self.entropies.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub hypotheses: Vec<HypothesisUncertainty>,
    /// `U = Σ_b ω_b · (1/L_b) Σ_t H_t`.
    pub total: f64,
    pub temperature: f64,
}

/// Combines per-hypothesis ensemble posteriors (`posteriors[b][t]`) into `U`.
pub fn uncertainty_from_posteriors(
    hyps: &HypothesisSet,
    posteriors: &[Vec<Vec<f64>>],
    temperature: f64,
) -> Result<UncertaintyReport> {
    if posteriors.len() != hyps.len() {
        return Err(Error::invalid("one posterior sequence per hypothesis required"));
    }
    let weights = hypothesis_weights(&hyps.log_probs(), temperature)?;
    let mut total = 0.0;
    let mut out = Vec::with_capacity(hyps.len());
    let mut max_entropy = 0.0f64;
    for ((h, post), w) in hyps.hypotheses().iter().zip(posteriors).zip(weights) {
        if post.len() != h.len() {
            return Err(Error::invalid("posterior length differs from hypothesis length"));
        }
        let entropies = post.iter().map(|d| step_entropy(d)).collect::<Result<Vec<_>>>()?;
        if let Some(d) = post.first() {
            max_entropy = max_entropy.max((d.len() as f64).ln());
        }
        let hu = HypothesisUncertainty {
            tokens: h.tokens.clone(),
            log_prob: h.log_prob,
            weight: w,
            entropies,
        };
        total += w * hu.mean_entropy();
        out.push(hu);
    }
    Ok(UncertaintyReport {
        hypotheses: out,
        total: total.clamp(0.0, max_entropy),
        temperature,
    })
}

/// Total uncertainty of `v` given its deterministic hypothesis set.
pub fn total_uncertainty(
    params: &ModelParams,
    v: &FeatureSequence,
    hyps: &HypothesisSet,
    ens: &EnsembleSpec,
    temperature: f64,
) -> Result<UncertaintyReport> {
    let model = Model::new(params);
    let enc = model.encode(v, None)?;
    let members = ens.member_encodings(&model, &enc)?;
    total_uncertainty_encoded(&model, &members, hyps, temperature)
}

/// As [`total_uncertainty`], reusing member encodings.
pub fn total_uncertainty_encoded(
    model: &Model,
    members: &[Encoded],
    hyps: &HypothesisSet,
    temperature: f64,
) -> Result<UncertaintyReport> {
    if hyps.is_empty() {
        return Err(Error::Empty("hypothesis set"));
    }
    let posteriors = hyps
        .hypotheses()
        .iter()
        .map(|h| average_members(&member_distributions(model, members, h)?))
        .collect::<Result<Vec<_>>>()?;
    uncertainty_from_posteriors(hyps, &posteriors, temperature)
}

/// Ensemble confidence `(1/K) Σ_k P(tokens | X, θᵏ)`.
pub fn ensemble_confidence(model: &Model, members: &[Encoded], tokens: &[usize]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Empty("ensemble members"));
    }
    let mut sum = 0.0;
    for enc in members {
        sum += model.sequence_log_prob(enc, tokens)?.exp();
    }
    Ok(sum / members.len() as f64)
}

/// One line of the per-sample diagnostic dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub id: u64,
    pub hypotheses: Vec<HypothesisUncertainty>,
    pub uncertainty: f64,
}

impl DiagnosticRecord {
    pub fn new(id: u64, report: &UncertaintyReport) -> Self {
        Self {
            id,
            hypotheses: report.hypotheses.clone(),
            uncertainty: report.total,
        }
    }
}

pub fn write_diagnostics(path: &Path, records: &[DiagnosticRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::decode::beam_search;
    use crate::numkit::{Matrix, Rng};
    use crate::recognizer::{Dims, Vocabulary, EOS, FIRST_SYMBOL};

    fn setup(seed: u64) -> (ModelParams, FeatureSequence) {
        let dims = Dims {
            input: 2,
            hidden: 6,
            embed: 3,
            attention: 3,
            vocab: 3 + FIRST_SYMBOL,
            max_len: 4,
        };
        let mut rng = Rng::new(seed);
        let p = ModelParams::init(dims, Vocabulary::alphabetic(3).unwrap(), &mut rng).unwrap();
        let frames = (0..8).map(|_| rng.normal()).collect();
        (
            p,
            FeatureSequence::new(Matrix::from_vec(4, 2, frames).unwrap()).unwrap(),
        )
    }

    fn hyp(tokens: Vec<usize>, lp: f64) -> Hypothesis {
        Hypothesis {
            tokens,
            log_prob: lp,
            truncated: false,
        }
    }

    #[test]
    fn entropy_closed_forms() {
        assert_eq!(step_entropy(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((step_entropy(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert!((step_entropy(&[0.5, 0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(step_entropy(&[0.6, 0.6]).is_err());
        assert!(step_entropy(&[-0.1, 1.1]).is_err());
        assert!(step_entropy(&[]).is_err());
    }

    #[test]
    fn weights_closed_forms() {
        assert_eq!(hypothesis_weights(&[-3.0], 0.01).unwrap(), vec![1.0]);
        let w = hypothesis_weights(&[-1.0, -2.0], 1.0).unwrap();
        assert!((w[0] - 0.7311).abs() < 5e-5 && (w[1] - 0.2689).abs() < 5e-5);
        assert!((w[0] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-15);
        let w = hypothesis_weights(&[-1.0, -2.0], 0.01).unwrap();
        // 1 - ω₁ = ω₂ = e^-100 < 1e-40; ω₁ itself rounds to 1 in f64.
        assert!(w[1] < 1e-40 && w[1] > 0.0);
        assert!(((w[1] - (-100f64).exp()) / w[1]).abs() < 1e-12);
        assert_eq!(w[0], 1.0);
        let w = hypothesis_weights(&[-4.0, -4.0, -4.0], 0.3).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        assert!(hypothesis_weights(&[-1.0], 0.0).is_err());
        assert!(hypothesis_weights(&[-1.0], -1.0).is_err());
    }

    #[test]
    fn single_identity_member_equals_deterministic_model() {
        let (p, v) = setup(1);
        let set = beam_search(&p, &v, 3, 4).unwrap();
        let h = &set.hypotheses()[0];
        let ens = EnsembleSpec::deterministic(p.dims.hidden);
        let got = stochastic_inference(&p, &v, h, &ens).unwrap();
        let model = Model::new(&p);
        let enc = model.encode(&v, None).unwrap();
        assert_eq!(got, model.teacher_forced_dists(&enc, &h.tokens).unwrap());
        let zero_p = EnsembleSpec::sample(0.0, 1, p.dims.hidden, 5, 0).unwrap();
        assert_eq!(stochastic_inference(&p, &v, h, &zero_p).unwrap(), got);
    }

    #[test]
    fn average_matches_store_then_average() {
        let (p, v) = setup(2);
        let ens = EnsembleSpec::sample(0.3, 4, p.dims.hidden, 9, 1).unwrap();
        let h = hyp(vec![4, 3, EOS], 0.0);
        let got = stochastic_inference(&p, &v, &h, &ens).unwrap();
        let model = Model::new(&p);
        let captured: Vec<Vec<Vec<f64>>> = ens
            .masks()
            .iter()
            .map(|m| {
                let enc = model.encode(&v, Some(m)).unwrap();
                model.teacher_forced_dists(&enc, &h.tokens).unwrap()
            })
            .collect();
        for t in 0..3 {
            let row_sum: f64 = got[t].iter().sum();
            assert!((row_sum - 1.0).abs() < 1e-10);
            for e in 0..p.dims.vocab {
                let mean = captured.iter().map(|c| c[t][e]).sum::<f64>() / 4.0;
                assert!((got[t][e] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_and_uniform_anchors() {
        let set = HypothesisSet::new(vec![hyp(vec![3, EOS], -0.2), hyp(vec![4, 5, 3, EOS], -1.7)], 2).unwrap();
        let mut one_hot = vec![0.0; 6];
        one_hot[3] = 1.0;
        let posts: Vec<Vec<Vec<f64>>> = set
            .hypotheses()
            .iter()
            .map(|h| vec![one_hot.clone(); h.len()])
            .collect();
        assert_eq!(uncertainty_from_posteriors(&set, &posts, 0.01).unwrap().total, 0.0);
        let posts: Vec<Vec<Vec<f64>>> = set
            .hypotheses()
            .iter()
            .map(|h| vec![vec![1.0 / 6.0; 6]; h.len()])
            .collect();
        for t in [0.01, 1.0, 10.0] {
            let u = uncertainty_from_posteriors(&set, &posts, t).unwrap().total;
            assert!((u - 6f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn diagnostics_round_trip() {
        let (p, v) = setup(3);
        let set = beam_search(&p, &v, 2, 4).unwrap();
        let ens = EnsembleSpec::sample(0.1, 2, p.dims.hidden, 1, 0).unwrap();
        let report = total_uncertainty(&p, &v, &set, &ens, 0.5).unwrap();
        let records = vec![DiagnosticRecord::new(7, &report)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("diag.jsonl");
        write_diagnostics(&path, &records).unwrap();
        assert_eq!(read_diagnostics(&path).unwrap(), records);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]

        #[test]
        fn bounded_order_free_and_shift_invariant(seed in 0u64..500, k in 1usize..4, t in 0.01f64..5.0, c in -5.0f64..0.0) {
            let (p, v) = setup(seed);
            let set = beam_search(&p, &v, 3, 4).unwrap();
            let ens = EnsembleSpec::sample(0.2, k, p.dims.hidden, seed, 0).unwrap();
            let r = total_uncertainty(&p, &v, &set, &ens, t).unwrap();
            prop_assert!(r.total >= 0.0 && r.total <= (p.dims.vocab as f64).ln());
            let wsum: f64 = r.hypotheses.iter().map(|h| h.weight).sum();
            prop_assert!((wsum - 1.0).abs() < 1e-10);

            // Reversed order and a common log-prob shift leave U unchanged.
            let shifted: Vec<Hypothesis> = set.hypotheses().iter().rev()
                .map(|h| hyp(h.tokens.clone(), h.log_prob + c)).collect();
            let shifted = HypothesisSet::new(shifted, set.beam_width()).unwrap();
            let r2 = total_uncertainty(&p, &v, &shifted, &ens, t).unwrap();
            prop_assert!((r.total - r2.total).abs() < 1e-10);
        }
    }
}
