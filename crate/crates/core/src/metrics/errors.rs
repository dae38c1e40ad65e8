use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unit-cost edit distance (insertions, deletions, substitutions).
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return levenshtein(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn check_pairs<T>(preds: &[T], refs: &[T]) -> Result<()> {
    if preds.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} references",
            preds.len(),
            refs.len()
        )));
    }
    if refs.is_empty() {
        return Err(Error::Empty("reference list"));
    }
    Ok(())
}

/// Character error rate: total edits over total reference length.
pub fn cer<T: PartialEq, S: AsRef<[T]>>(preds: &[S], refs: &[S]) -> Result<f64> {
    check_pairs(preds, refs)?;
    let chars: usize = refs.iter().map(|r| r.as_ref().len()).sum();
    if chars == 0 {
        return Err(Error::Empty("reference characters"));
    }
    let edits: usize = preds
        .iter()
        .zip(refs)
        .map(|(p, r)| levenshtein(p.as_ref(), r.as_ref()))
        .sum();
    Ok(edits as f64 / chars as f64)
}

/// Fraction of predictions that differ from their reference.
pub fn wer<T: PartialEq, S: AsRef<[T]>>(preds: &[S], refs: &[S]) -> Result<f64> {
    check_pairs(preds, refs)?;
    let wrong = preds.iter().zip(refs).filter(|(p, r)| p.as_ref() != r.as_ref()).count();
    Ok(wrong as f64 / refs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub word_accuracy: f64,
    pub wer: f64,
    pub cer: f64,
    pub count: usize,
}

pub fn evaluate<T: PartialEq, S: AsRef<[T]>>(preds: &[S], refs: &[S]) -> Result<EvalReport> {
    let wer = wer(preds, refs)?;
    Ok(EvalReport {
        word_accuracy: 1.0 - wer,
        wer,
        cer: cer(preds, refs)?,
        count: refs.len(),
    })
}
