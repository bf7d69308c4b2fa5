//! Shared fixtures for the criterion benches.

use pfsmn::graph::{build_denominator_graph, build_numerator_graph_with_lm, Graph, PhoneLm, DEFAULT_ADD_K};
use pfsmn::net::{Network, NetworkConfig};
use pfsmn::train::{generate_corpus, GeneratorSpec, Utterance};

/// One desk-scale utterance with its graphs and an untrained desk network.
pub struct DeskFixture {
    pub network: Network,
    pub utterance: Utterance,
    pub numerator: Graph,
    pub denominator: Graph,
    pub lm: PhoneLm,
}

pub fn desk_fixture(seed: u64) -> DeskFixture {
    let utts = generate_corpus(&GeneratorSpec::desk(seed), 50).expect("desk spec is valid");
    let transcripts: Vec<Vec<u32>> = utts.iter().map(|u| u.phones.clone()).collect();
    let lm = PhoneLm::estimate(&transcripts, 5, 4, DEFAULT_ADD_K).expect("valid transcripts");
    // a typical length: the median utterance
    let mut by_len: Vec<&Utterance> = utts.iter().collect();
    by_len.sort_by_key(|u| u.frames());
    let utterance = by_len[by_len.len() / 2].clone();
    DeskFixture {
        network: Network::new(&NetworkConfig::desk(8, 10), seed).expect("desk config is valid"),
        numerator: build_numerator_graph_with_lm(&utterance.phones, utterance.frames(), &lm).expect("feasible"),
        denominator: build_denominator_graph(&lm, utterance.frames()).expect("feasible"),
        utterance,
        lm,
    }
}
