use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Train,
    Val,
    Test,
}

impl SplitLabel {
    pub fn name(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Val => "val",
            SplitLabel::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitLabel::Train),
            "val" => Ok(SplitLabel::Val),
            "test" => Ok(SplitLabel::Test),
            _ => Err(Error::validation(format!("unknown split `{s}` (expected train, val or test)"))),
        }
    }
}

/// Per-POI train/val/test labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub labels: Vec<SplitLabel>,
}

impl SplitAssignment {
    pub fn indices(&self, which: SplitLabel) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == which)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for l in &self.labels {
            c[*l as usize] += 1;
        }
        c
    }
}

/// Shuffled 70/15/15 assignment; val and test get the floor, train the remainder.
pub fn make_split(n: usize, seed: u64) -> Result<SplitAssignment> {
    if n < 3 {
        return Err(Error::param("n_poi", format!("need at least 3 POIs to split, got {n}")));
    }
    let n_val = n * 15 / 100;
    let n_test = n * 15 / 100;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![SplitLabel::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_val {
            labels[i] = SplitLabel::Val;
        } else if rank < n_val + n_test {
            labels[i] = SplitLabel::Test;
        }
    }
    Ok(SplitAssignment { seed, labels })
}
