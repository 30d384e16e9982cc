use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Category string -> integer id. Ids follow sorted order of the corpus
/// vocabulary, so re-encoding the same corpus reproduces them; id 0 is
/// reserved for missing or unseen values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    entries: BTreeMap<String, u32>,
}

impl Codebook {
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut vocab: Vec<&str> = corpus.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect();
        vocab.sort_unstable();
        vocab.dedup();
        let entries = vocab
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.to_string(), i as u32 + 1))
            .collect();
        Codebook { entries }
    }

    pub fn encode(&self, value: &str) -> u32 {
        self.entries.get(value.trim()).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.entries {
            h.update(k.as_bytes());
            h.update([0u8]);
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Two-digit NAICS sector from a code of any length.
pub fn naics2(code: &str) -> String {
    code.trim().chars().filter(|c| c.is_ascii_digit()).take(2).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_across_orderings() {
        let a = Codebook::build(["grocery", "cafe", "gym", "cafe"]);
        let b = Codebook::build(["gym", "grocery", "cafe"]);
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.encode("cafe"), 1);
        assert_eq!(a.encode("unknown"), 0);
        assert_eq!(a.encode(""), 0);
        assert_eq!(naics2("722511"), "72");
    }
}
