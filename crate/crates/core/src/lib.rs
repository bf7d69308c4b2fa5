//! Desk-scale toolkit for a CNN + pyramidal-FSMN acoustic model trained
//! with lattice-free MMI and cross-entropy regularization.
//!
//! * [`tensor`], [`ops`], [`gradcheck`], [`rng`]: dense kernels with
//!   hand-derived backward passes and a finite-difference checker.
//! * [`net`]: residual CNN front end and pyramidal FSMN block stack.
//! * [`graph`]: phone HMM topology, numerator/denominator acceptors, n-gram
//!   phone LM.
//! * [`loss`]: log-domain forward-backward, LF-MMI, CE, joint loss, L2.
//! * [`train`]: synthetic corpora, the training loop, evaluation.
//! * [`decode`]: Viterbi, n-best, LM rescoring.

pub mod decode;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub mod graph;
pub mod loss;
pub mod net;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
