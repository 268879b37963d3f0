//! Ordered class sets with the blank label pinned at index 0.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Index of the blank (null emission) class in every alphabet.
pub const BLANK: usize = 0;

/// Display label used for the blank class.
pub const BLANK_LABEL: &str = "<blank>";

/// Character-level class set `{blank} ∪ symbols`.
///
/// Class `0` is always the blank; symbol `i` of the constructor input maps to
/// class `i + 1`. Annotations are strings whose `char`s are the symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Alphabet {
    symbols: Vec<char>,
    #[serde(skip)]
    lookup: HashMap<char, usize>,
}

impl Alphabet {
    pub fn new<I: IntoIterator<Item = char>>(symbols: I) -> Result<Self> {
        let symbols: Vec<char> = symbols.into_iter().collect();
        if symbols.is_empty() {
            return Err(invalid("alphabet needs at least one non-blank symbol"));
        }
        let mut lookup = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if lookup.insert(c, i + 1).is_some() {
                return Err(invalid(format!("duplicate symbol {c:?}")));
            }
        }
        Ok(Self { symbols, lookup })
    }

    /// `0`-`9` plus blank (11 classes).
    pub fn digits() -> Self {
        Self::new('0'..='9').expect("digits are unique")
    }

    /// `0`-`9`, `a`-`z` plus blank (37 classes), the usual scene-text set.
    pub fn alphanumeric() -> Self {
        Self::new(('0'..='9').chain('a'..='z')).expect("alphanumerics are unique")
    }

    /// `n` symbols drawn from the CJK unified ideograph block, plus blank.
    ///
    /// Used for large-vocabulary experiments (e.g. `n = 1000` gives 1001 classes).
    pub fn large(n: usize) -> Result<Self> {
        if n == 0 || n > 20_000 {
            return Err(invalid(format!("large alphabet size {n} outside 1..=20000")));
        }
        Self::new((0..n as u32).map(|i| char::from_u32(0x4E00 + i).expect("CJK block")))
    }

    /// Number of classes including the blank.
    pub fn len(&self) -> usize {
        self.symbols.len() + 1
    }

    /// Always false: an alphabet holds the blank plus at least one symbol.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: char) -> Option<usize> {
        self.lookup.get(&symbol).copied()
    }

    /// Symbol for a class index; `None` for the blank or out of range.
    pub fn symbol(&self, index: usize) -> Option<char> {
        index.checked_sub(1).and_then(|i| self.symbols.get(i)).copied()
    }

    pub fn label(&self, index: usize) -> String {
        match self.symbol(index) {
            Some(c) => c.to_string(),
            None if index == BLANK => BLANK_LABEL.to_string(),
            None => format!("<{index}?>"),
        }
    }

    /// Class indices of an annotation string. Never yields the blank.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.index_of(c).ok_or_else(|| Error::Vocabulary(c.to_string())))
            .collect()
    }

    /// Inverse of [`encode`](Self::encode); blanks and unknown indices are skipped.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices.iter().filter_map(|&i| self.symbol(i)).collect()
    }
}

impl TryFrom<Vec<String>> for Alphabet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        let mut chars = Vec::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if i == 0 {
                if label != BLANK_LABEL {
                    return Err(Error::Format(format!(
                        "first alphabet label must be {BLANK_LABEL:?}, found {label:?}"
                    )));
                }
                continue;
            }
            let mut it = label.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(Error::Format(format!("alphabet label {label:?} is not one char"))),
            }
        }
        Self::new(chars)
    }
}

impl From<Alphabet> for Vec<String> {
    fn from(a: Alphabet) -> Self {
        (0..a.len()).map(|i| a.label(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_is_index_zero() {
        let a = Alphabet::digits();
        assert_eq!(a.len(), 11);
        assert_eq!(a.index_of('0'), Some(1));
        assert_eq!(a.symbol(BLANK), None);
        assert_eq!(a.label(BLANK), BLANK_LABEL);
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(Alphabet::new("aba".chars()).is_err());
        assert!(Alphabet::new(std::iter::empty()).is_err());
    }

    #[test]
    fn encode_unknown_symbol_is_vocabulary_error() {
        let a = Alphabet::digits();
        assert_eq!(a.encode("0912").unwrap(), vec![1, 10, 2, 3]);
        assert!(matches!(a.encode("12x"), Err(Error::Vocabulary(s)) if s == "x"));
    }

    #[test]
    fn serde_round_trip() {
        let a = Alphabet::large(5).unwrap();
        let json = serde_json::to_string(&a).unwrap();
        let back: Alphabet = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
        assert_eq!(back.index_of(a.symbols()[4]), Some(5));
    }
}
