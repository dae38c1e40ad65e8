use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::recognizer::{FeatureSequence, LabeledSample};

const SPLIT_STREAM: u64 = 0x73706c74;

/// An input whose label is not available to training or selection code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSample {
    pub id: u64,
    pub features: FeatureSequence,
}

/// Withheld labels of the unlabeled pool, for evaluation oracles only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HeldOutLabels(BTreeMap<u64, Vec<usize>>);

impl HeldOutLabels {
    pub fn get(&self, id: u64) -> Option<&[usize]> {
        self.0.get(&id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Re-attaches labels to unlabeled samples.
    pub fn attach(&self, samples: &[UnlabeledSample]) -> Result<Vec<LabeledSample>> {
        samples
            .iter()
            .map(|s| {
                let label = self
                    .get(s.id)
                    .ok_or_else(|| Error::invalid(format!("no held-out label for sample {}", s.id)))?;
                Ok(LabeledSample {
                    id: s.id,
                    features: s.features.clone(),
                    label: label.to_vec(),
                })
            })
            .collect()
    }
}

impl FromIterator<(u64, Vec<usize>)> for HeldOutLabels {
    fn from_iter<I: IntoIterator<Item = (u64, Vec<usize>)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledSample>,
    heldout: HeldOutLabels,
    pub fraction: f64,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn heldout(&self) -> &HeldOutLabels {
        &self.heldout
    }

    pub fn from_parts(
        labeled: Vec<LabeledSample>,
        unlabeled: Vec<UnlabeledSample>,
        heldout: HeldOutLabels,
        fraction: f64,
        seed: u64,
    ) -> Self {
        Self {
            labeled,
            unlabeled,
            heldout,
            fraction,
            seed,
        }
    }
}

/// Seeded shuffle, then the first `round(fraction · N)` samples keep their
/// labels. Both pools are returned in id order.
pub fn split(dataset: Vec<LabeledSample>, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("label fraction {fraction} outside (0, 1]")));
    }
    let n = dataset.len();
    let n_labeled = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive(seed, &[SPLIT_STREAM]).shuffle(&mut order);
    let mut is_labeled = vec![false; n];
    for &i in &order[..n_labeled] {
        is_labeled[i] = true;
    }
    let mut labeled = Vec::with_capacity(n_labeled);
    let mut unlabeled = Vec::with_capacity(n - n_labeled);
    let mut heldout = BTreeMap::new();
    for (sample, keep) in dataset.into_iter().zip(is_labeled) {
        if keep {
            labeled.push(sample);
        } else {
            heldout.insert(sample.id, sample.label);
            unlabeled.push(UnlabeledSample {
                id: sample.id,
                features: sample.features,
            });
        }
    }
    labeled.sort_by_key(|s| s.id);
    unlabeled.sort_by_key(|s| s.id);
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        heldout: HeldOutLabels(heldout),
        fraction,
        seed,
    })
}
