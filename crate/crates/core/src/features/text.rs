use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TEXT_DIM: usize = 768;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMode {
    /// Vectors supplied with the input rows.
    Precomputed,
    /// Signed character-trigram hashing, L2-normalized.
    HashStub,
}

impl TextMode {
    pub fn name(self) -> &'static str {
        match self {
            TextMode::Precomputed => "precomputed",
            TextMode::HashStub => "hash_stub",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextFields<'a> {
    pub name: &'a str,
    pub brand: &'a str,
    pub categories: &'a str,
    pub region: &'a str,
    pub website_tags: &'a str,
}

/// Lowercased, alphanumeric tokens joined by single spaces.
pub fn clean_text(fields: &TextFields<'_>) -> String {
    let joined = [fields.name, fields.brand, fields.categories, fields.region, fields.website_tags].join(" ");
    let mapped: String = joined
        .chars()
        .map(|c| if c.is_alphanumeric() { c.to_ascii_lowercase() } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn hash_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; TEXT_DIM];
    let chars: Vec<char> = text.chars().collect();
    for w in chars.windows(3) {
        let s: String = w.iter().collect();
        let h = fnv1a(s.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % TEXT_DIM as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn embed_text(fields: &TextFields<'_>, mode: TextMode, precomputed: Option<&[f64]>) -> Result<Vec<f64>> {
    match mode {
        TextMode::Precomputed => {
            let v = precomputed.ok_or_else(|| Error::validation("precomputed text mode needs a vector"))?;
            if v.len() != TEXT_DIM {
                return Err(Error::validation(format!(
                    "text embedding has width {}, expected {TEXT_DIM}",
                    v.len()
                )));
            }
            Ok(v.to_vec())
        }
        TextMode::HashStub => Ok(hash_embedding(&clean_text(fields))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_hashes_to_zero() {
        let v = embed_text(&TextFields::default(), TextMode::HashStub, None).unwrap();
        assert_eq!(v.len(), TEXT_DIM);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let f = TextFields {
            name: "Corner Cafe",
            brand: "Acme",
            categories: "Restaurants",
            region: "GA",
            website_tags: "coffee,breakfast",
        };
        let a = embed_text(&f, TextMode::HashStub, None).unwrap();
        let b = embed_text(&f, TextMode::HashStub, None).unwrap();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        assert_eq!(clean_text(&f), "corner cafe acme restaurants ga coffee breakfast");
    }

    #[test]
    fn precomputed_passthrough() {
        let v: Vec<f64> = (0..TEXT_DIM).map(|i| i as f64).collect();
        assert_eq!(embed_text(&TextFields::default(), TextMode::Precomputed, Some(&v)).unwrap(), v);
        assert!(embed_text(&TextFields::default(), TextMode::Precomputed, Some(&v[..10])).is_err());
        assert!(embed_text(&TextFields::default(), TextMode::Precomputed, None).is_err());
    }
}
