use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
/// Index of the first real symbol.
pub const FIRST_SYMBOL: usize = 3;

/// Reserved tokens occupy indices `0..3`; real symbols follow in order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Vocabulary {
    symbols: Vec<char>,
}

impl Vocabulary {
    pub fn new(symbols: &str) -> Result<Self> {
        let symbols: Vec<char> = symbols.chars().collect();
        if symbols.is_empty() {
            return Err(Error::invalid("vocabulary needs at least one real symbol"));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::invalid(format!("duplicate vocabulary symbol {c:?}")));
            }
        }
        Ok(Self { symbols })
    }

    /// The first `n` lowercase letters (then further printable characters).
    pub fn alphabetic(n: usize) -> Result<Self> {
        let s: String = ('a'..='z').chain('A'..='Z').chain('0'..='9').take(n).collect();
        if s.chars().count() < n {
            return Err(Error::invalid(format!("at most 62 generated symbols, asked for {n}")));
        }
        Self::new(&s)
    }

    /// Total size `E`, reserved tokens included.
    pub fn size(&self) -> usize {
        self.symbols.len() + FIRST_SYMBOL
    }

    pub fn symbol_count(&self) -> usize {
        self.symbols.len()
    }

    pub fn symbols(&self) -> String {
        self.symbols.iter().collect()
    }

    pub fn is_real(&self, token: usize) -> bool {
        (FIRST_SYMBOL..self.size()).contains(&token)
    }

    pub fn token_of(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c).map(|i| i + FIRST_SYMBOL)
    }

    pub fn symbol_of(&self, token: usize) -> Option<char> {
        token
            .checked_sub(FIRST_SYMBOL)
            .and_then(|i| self.symbols.get(i))
            .copied()
    }

    /// Encodes text as a label: symbol tokens followed by EOS.
    pub fn encode_label(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = text
            .chars()
            .map(|c| {
                self.token_of(c)
                    .ok_or_else(|| Error::invalid(format!("symbol {c:?} not in vocabulary {:?}", self.symbols())))
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(EOS);
        Ok(out)
    }

    /// Renders tokens up to the first EOS, skipping reserved tokens.
    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .take_while(|&&t| t != EOS)
            .filter_map(|&t| self.symbol_of(t))
            .collect()
    }
}

impl TryFrom<String> for Vocabulary {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Self::new(&s)
    }
}

impl From<Vocabulary> for String {
    fn from(v: Vocabulary) -> String {
        v.symbols()
    }
}
