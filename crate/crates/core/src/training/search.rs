use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::tensor::ReduceMode;

/// Discrete and log-uniform ranges sampled independently per trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub k: Vec<usize>,
    pub log10_lr: (f64, f64),
    /// Shared width for the CBG, POI and hidden embeddings.
    pub width: Vec<usize>,
    pub dropout: Vec<f64>,
    pub agg_pp: Vec<ReduceMode>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            k: (10..=50).step_by(2).collect(),
            log10_lr: (-3.5, -2.0),
            width: vec![32, 64],
            dropout: vec![0.0, 0.1, 0.2],
            agg_pp: vec![ReduceMode::Mean, ReduceMode::Sum, ReduceMode::Max],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.width.is_empty() || self.dropout.is_empty() || self.agg_pp.is_empty() {
            return Err(Error::param("search space", "every axis needs at least one value"));
        }
        if !(self.log10_lr.0 <= self.log10_lr.1) {
            return Err(Error::param("log10_lr", "lower bound above upper bound"));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.model.k = *self.k.choose(rng).expect("non-empty");
        let (lo, hi) = self.log10_lr;
        c.lr = 10f64.powf(if hi > lo { rng.gen_range(lo..hi) } else { lo });
        let w = *self.width.choose(rng).expect("non-empty");
        c.model.d_cbg = w;
        c.model.d_poi = w;
        c.model.d_hid = w;
        c.model.dropout = *self.dropout.choose(rng).expect("non-empty");
        c.model.agg_pp = *self.agg_pp.choose(rng).expect("non-empty");
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: TrainConfig,
    pub val_kl: f64,
}

/// Trials sorted by validation KL, ties by trial index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub seed: u64,
    pub trials: Vec<Trial>,
}

impl Leaderboard {
    pub fn best(&self) -> &Trial {
        &self.trials[0]
    }
}

/// `budget` independent trials drawn from `space` around `base`.
pub fn random_search<F>(space: &SearchSpace, base: &TrainConfig, budget: usize, seed: u64, mut objective: F) -> Result<Leaderboard>
where
    F: FnMut(usize, &TrainConfig) -> Result<f64>,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::param("budget", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trials = Vec::with_capacity(budget);
    for index in 0..budget {
        let mut config = space.sample(&mut rng, base);
        config.seed = base.seed.wrapping_add(index as u64);
        let val_kl = objective(index, &config)?;
        trials.push(Trial { index, config, val_kl });
    }
    trials.sort_by(|a, b| a.val_kl.total_cmp(&b.val_kl).then(a.index.cmp(&b.index)));
    Ok(Leaderboard { seed, trials })
}
