//! Viterbi and n-best decoding over phone graphs, and n-best rescoring.

mod lm;
mod nbest;
mod pipeline;
mod rescore;
mod viterbi;

pub use lm::{perplexity, train_tiny_rnnlm, LmScorer, NGramLm, OracleLm, RnnLmConfig, RnnParams, TinyRnnLm};
pub use nbest::{nbest, nbest_with_limit, DEFAULT_MAX_QUEUE};
pub use pipeline::{
    decode_nbest, lmwt_sweep, nbest_oracle_accuracy, oracle_phone_error, rescore_all, rescore_with_oracle, top1_accuracy,
    top1_phone_error, PhoneErrorCount, SweepPoint, UtteranceNbest,
};
pub use rescore::{lmwt_grid, rescore};
pub use viterbi::{viterbi, viterbi_path, BestPath, Hypothesis};
