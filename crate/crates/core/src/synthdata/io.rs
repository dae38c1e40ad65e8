//! Line-delimited JSON dataset files.
//!
//! The first line is a header
//! `{"format":"seqpl-dataset","version":1,"symbols":"abcdef","channels":8,"count":N}`;
//! each following line is one sample
//! `{"id":7,"label":"bad","frames":[[0.1,...],...]}` with `label` null for
//! unlabeled samples. Floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every feature bit-for-bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::split::UnlabeledSample;
use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::recognizer::{FeatureSequence, LabeledSample, Vocabulary};

pub const FORMAT_NAME: &str = "seqpl-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    symbols: String,
    channels: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: u64,
    label: Option<String>,
    frames: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: u64,
    /// EOS-terminated tokens, or `None` when unlabeled.
    pub label: Option<Vec<usize>>,
    pub features: FeatureSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub channels: usize,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn from_labeled(vocab: Vocabulary, channels: usize, samples: &[LabeledSample]) -> Self {
        Self {
            vocab,
            channels,
            records: samples
                .iter()
                .map(|s| Record {
                    id: s.id,
                    label: Some(s.label.clone()),
                    features: s.features.clone(),
                })
                .collect(),
        }
    }

    pub fn from_unlabeled(vocab: Vocabulary, channels: usize, samples: &[UnlabeledSample]) -> Self {
        Self {
            vocab,
            channels,
            records: samples
                .iter()
                .map(|s| Record {
                    id: s.id,
                    label: None,
                    features: s.features.clone(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// All records as labeled samples; fails on any unlabeled record.
    pub fn labeled(&self) -> Result<Vec<LabeledSample>> {
        self.records
            .iter()
            .map(|r| {
                Ok(LabeledSample {
                    id: r.id,
                    features: r.features.clone(),
                    label: r
                        .label
                        .clone()
                        .ok_or_else(|| Error::invalid(format!("sample {} has no label", r.id)))?,
                })
            })
            .collect()
    }

    /// All records with any labels dropped.
    pub fn unlabeled(&self) -> Vec<UnlabeledSample> {
        self.records
            .iter()
            .map(|r| UnlabeledSample {
                id: r.id,
                features: r.features.clone(),
            })
            .collect()
    }
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        symbols: dataset.vocab.symbols(),
        channels: dataset.channels,
        count: dataset.records.len(),
    };
    writeln!(w, "{}", to_line(&header)?).map_err(io)?;
    for r in &dataset.records {
        let frames = r.features.frames();
        let line = Line {
            id: r.id,
            label: r.label.as_ref().map(|l| dataset.vocab.decode(l)),
            frames: (0..frames.rows()).map(|t| frames.row(t).to_vec()).collect(),
        };
        writeln!(w, "{}", to_line(&line)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn to_line<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::invalid(e.to_string()))
}

pub fn load(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = BufReader::new(file).lines();
    let header_text = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header line".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&header_text).map_err(|e| parse_err(1, format!("header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(parse_err(1, format!("unknown format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(parse_err(
            1,
            format!("unsupported version {} (expected {FORMAT_VERSION})", header.version),
        ));
    }
    let vocab = Vocabulary::new(&header.symbols).map_err(|e| parse_err(1, e.to_string()))?;

    let mut records = Vec::with_capacity(header.count);
    for (i, text) in lines.enumerate() {
        let lineno = i + 2;
        let text = text.map_err(|e| Error::io(path, e))?;
        if text.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(&text).map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.frames.iter().any(|f| f.len() != header.channels) {
            return Err(parse_err(
                lineno,
                format!("frame width differs from {} channels", header.channels),
            ));
        }
        let m = Matrix::from_rows(&line.frames).map_err(|e| parse_err(lineno, e.to_string()))?;
        let features = FeatureSequence::new(m).map_err(|e| parse_err(lineno, e.to_string()))?;
        let label = match line.label {
            Some(text) => Some(
                vocab
                    .encode_label(&text)
                    .map_err(|e| parse_err(lineno, e.to_string()))?,
            ),
            None => None,
        };
        records.push(Record {
            id: line.id,
            label,
            features,
        });
    }
    if records.len() != header.count {
        return Err(parse_err(
            records.len() + 2,
            format!("header declares {} samples, found {}", header.count, records.len()),
        ));
    }
    Ok(Dataset {
        vocab,
        channels: header.channels,
        records,
    })
}
