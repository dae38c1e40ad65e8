use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Rng};
use crate::recognizer::{FeatureSequence, LabeledSample, Vocabulary, EOS, FIRST_SYMBOL};

/// Stream tag for per-sample generators.
const SAMPLE_STREAM: u64 = 0x73616d70;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Real symbols in the alphabet.
    pub symbols: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Feature channels per frame.
    pub channels: usize,
    /// Standard deviation of the per-channel Gaussian frame noise.
    pub sigma: f64,
    /// Symbol index pairs (0-based) whose embeddings are pulled together.
    pub confusable: Vec<(usize, usize)>,
    /// Interpolation weight toward the partner embedding.
    pub mix: f64,
    pub embedding_seed: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            symbols: 6,
            min_len: 4,
            max_len: 4,
            min_frames: 2,
            max_frames: 4,
            channels: 8,
            sigma: 0.15,
            confusable: vec![(0, 1), (2, 3)],
            mix: 0.35,
            embedding_seed: 17,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.symbols < 2 {
            return bad(format!("need at least 2 symbols, got {}", self.symbols));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad(format!(
                "length range [{}, {}] is empty or starts at 0",
                self.min_len, self.max_len
            ));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad(format!(
                "frame range [{}, {}] is empty or starts at 0",
                self.min_frames, self.max_frames
            ));
        }
        if self.channels == 0 {
            return bad("channels must be >= 1".into());
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad(format!("sigma {} must be finite and >= 0", self.sigma));
        }
        if !(0.0..=0.5).contains(&self.mix) {
            return bad(format!("mix {} outside [0, 0.5]", self.mix));
        }
        for &(a, b) in &self.confusable {
            if a >= self.symbols || b >= self.symbols || a == b {
                return bad(format!(
                    "confusable pair ({a}, {b}) invalid for {} symbols",
                    self.symbols
                ));
            }
        }
        Ok(())
    }

    /// Checks that labels plus EOS fit in `s_max` decode steps.
    pub fn validate_for(&self, s_max: usize) -> Result<()> {
        self.validate()?;
        if self.max_len + 1 > s_max {
            return Err(Error::Config(format!(
                "max_len {} leaves no room for EOS within s_max {s_max}",
                self.max_len
            )));
        }
        Ok(())
    }

    /// Decode budget that fits every label and its EOS.
    pub fn s_max(&self) -> usize {
        self.max_len + 1
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::alphabetic(self.symbols)
    }

    /// Per-symbol frame prototypes: random unit vectors, with each confusable
    /// pair interpolated toward each other by `mix`.
    pub fn embeddings(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let mut rng = Rng::new(self.embedding_seed);
        let base: Vec<Vec<f64>> = (0..self.symbols)
            .map(|_| {
                let v: Vec<f64> = (0..self.channels).map(|_| rng.normal()).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let mut out = base.clone();
        for &(a, b) in &self.confusable {
            for c in 0..self.channels {
                out[a][c] = (1.0 - self.mix) * base[a][c] + self.mix * base[b][c];
                out[b][c] = (1.0 - self.mix) * base[b][c] + self.mix * base[a][c];
            }
        }
        Ok(out)
    }
}

fn make_sample(config: &SynthConfig, emb: &[Vec<f64>], index: u64) -> Result<LabeledSample> {
    let mut rng = Rng::derive(config.seed, &[SAMPLE_STREAM, index]);
    let len = rng.range_inclusive(config.min_len, config.max_len);
    let mut symbols: Vec<usize> = Vec::with_capacity(len);
    for _ in 0..len {
        let s = match symbols.last() {
            // Draw from the other symbols so runs stay separable.
            Some(&prev) => {
                let r = rng.below(config.symbols - 1);
                if r >= prev {
                    r + 1
                } else {
                    r
                }
            }
            None => rng.below(config.symbols),
        };
        symbols.push(s);
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for &s in &symbols {
        let run = rng.range_inclusive(config.min_frames, config.max_frames);
        for _ in 0..run {
            data.extend(emb[s].iter().map(|&e| e + config.sigma * rng.normal()));
            rows += 1;
        }
    }
    let mut label: Vec<usize> = symbols.iter().map(|s| s + FIRST_SYMBOL).collect();
    label.push(EOS);
    Ok(LabeledSample {
        id: index,
        features: FeatureSequence::new(Matrix::from_vec(rows, config.channels, data)?)?,
        label,
    })
}

/// Samples with ids `start..start + n`; each is a pure function of
/// `(config, id)`.
pub fn generate_range(config: &SynthConfig, start: u64, n: usize) -> Result<Vec<LabeledSample>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let emb = config.embeddings()?;
    (start..start + n as u64)
        .map(|i| make_sample(config, &emb, i))
        .collect()
}

pub fn generate(config: &SynthConfig, n: usize) -> Result<Vec<LabeledSample>> {
    generate_range(config, 0, n)
}

/// Labels each frame with its nearest prototype and collapses repeats;
/// returns label tokens (EOS-terminated).
pub fn nearest_embedding_decode(embeddings: &[Vec<f64>], features: &FeatureSequence) -> Vec<usize> {
    let frames = features.frames();
    let mut out: Vec<usize> = Vec::new();
    for t in 0..frames.rows() {
        let row = frames.row(t);
        let best = embeddings
            .iter()
            .enumerate()
            .map(|(s, e)| (s, e.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(s, _)| s + FIRST_SYMBOL)
            .expect("at least one symbol");
        if out.last() != Some(&best) {
            out.push(best);
        }
    }
    out.push(EOS);
    out
}

/// Sequence error rate of [`nearest_embedding_decode`] on `n` fresh samples.
pub fn analytic_error_rate(config: &SynthConfig, n: usize) -> Result<f64> {
    let emb = config.embeddings()?;
    let data = generate(config, n)?;
    let wrong = data
        .iter()
        .filter(|s| nearest_embedding_decode(&emb, &s.features) != s.label)
        .count();
    Ok(wrong as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_index_addressable() {
        let c = SynthConfig::default();
        let a = generate(&c, 20).unwrap();
        assert_eq!(a, generate(&c, 20).unwrap());
        let tail = generate_range(&c, 15, 5).unwrap();
        assert_eq!(&a[15..], &tail[..]);
        let other = generate(&SynthConfig { seed: 1, ..c }, 20).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn labels_respect_contract() {
        let c = SynthConfig::default();
        for s in generate(&c, 200).unwrap() {
            let body = &s.label[..s.label.len() - 1];
            assert_eq!(s.label.last(), Some(&EOS));
            assert!((c.min_len..=c.max_len).contains(&body.len()));
            assert!(body
                .iter()
                .all(|&t| (FIRST_SYMBOL..FIRST_SYMBOL + c.symbols).contains(&t)));
            assert!(body.windows(2).all(|w| w[0] != w[1]));
            let frames = s.features.len();
            assert!(frames >= body.len() * c.min_frames && frames <= body.len() * c.max_frames);
            assert_eq!(s.features.channels(), c.channels);
        }
    }

    #[test]
    fn noiseless_data_is_recovered_exactly() {
        let c = SynthConfig {
            sigma: 0.0,
            confusable: vec![],
            ..SynthConfig::default()
        };
        assert_eq!(analytic_error_rate(&c, 300).unwrap(), 0.0);
    }

    #[test]
    fn confusable_pairs_are_pulled_together() {
        let c = SynthConfig::default();
        let plain = SynthConfig {
            confusable: vec![],
            ..c.clone()
        }
        .embeddings()
        .unwrap();
        let mixed = c.embeddings().unwrap();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let before = dist(&plain[0], &plain[1]);
        let after = dist(&mixed[0], &mixed[1]);
        assert!((after - (1.0 - 2.0 * c.mix) * before).abs() < 1e-12);
        assert_eq!(plain[5], mixed[5]);
    }

    #[test]
    fn difficulty_is_monotone_in_noise() {
        let mut prev = 0.0;
        for sigma in [0.0, 0.2, 0.4, 0.6, 0.8] {
            let c = SynthConfig {
                sigma,
                ..SynthConfig::default()
            };
            let e = analytic_error_rate(&c, 400).unwrap();
            assert!(e >= prev, "sigma {sigma}: {e} < {prev}");
            prev = e;
        }
        let fewer = SynthConfig {
            confusable: vec![],
            ..SynthConfig::default()
        };
        assert!(
            analytic_error_rate(&fewer, 400).unwrap() <= analytic_error_rate(&SynthConfig::default(), 400).unwrap()
        );
    }

    #[test]
    fn rejects_invalid_configs() {
        let d = SynthConfig::default();
        assert!(SynthConfig {
            min_len: 0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            sigma: -1.0,
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            confusable: vec![(1, 1)],
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            confusable: vec![(0, 6)],
            ..d.clone()
        }
        .validate()
        .is_err());
        assert!(d.validate_for(4).is_err());
        assert!(d.validate_for(5).is_ok());
        assert!(generate(&d, 0).is_err());
    }
}
