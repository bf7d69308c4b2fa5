//! Finite-state acceptors over pdf-ids: the phone HMM topology, numerator
//! and denominator graphs, and the phone language model behind them.

mod fsa;
mod hmm;
mod lm;

pub use fsa::{Arc, Graph, Layering, Path};
pub use hmm::{
    a_option, b_option, build_denominator_graph, build_lm_acceptor, build_numerator_graph,
    build_numerator_graph_with_lm, build_phone_hmm, num_pdfs, pdf_a, pdf_b, phone_of_pdf, PDFS_PER_PHONE,
};
pub use lm::{PhoneLm, DEFAULT_ADD_K};
