//! Synthetic corpora, the training loop and evaluation metrics.

mod corpus;
mod metrics;
mod trainer;

pub use corpus::{
    generate_corpus, load_corpus, read_corpus, save_corpus, standard_corpus, write_corpus, GeneratorSpec, Utterance,
    CORPUS_MAGIC,
};
pub use metrics::{edit_distance, evaluate, DenominatorGraphs, Metrics};
pub use trainer::{
    history_ndjson, length_buckets, parse_history, train, train_network, EpochRecord, TrainConfig, TrainOutcome,
};
