//! Transductive split, candidate truncation, masked-KL optimization with
//! early stopping, and seeded random hyperparameter search.

pub mod candidates;
pub mod config;
pub mod loss;
pub mod optim;
pub mod search;
pub mod split;
pub mod trainer;

pub use candidates::truncate_candidates;
pub use config::TrainConfig;
pub use loss::{is_supervised, masked_kl_loss, supervised_rows, LossMode};
pub use optim::Adam;
pub use search::{random_search, Leaderboard, SearchSpace, Trial};
pub use split::{make_split, SplitAssignment, SplitLabel};
pub use trainer::{loss_and_grads, predict_rows, train, train_from, EpochRecord, TrainOutcome, TrainReport};

#[cfg(test)]
mod tests;
