//! Simulation of amplitude-controlled holographic surfaces for multi-user
//! beam training in the hybrid near/far field.

pub mod beamformer;
pub mod codebook;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod model;
pub mod optimizer;
pub mod training;

pub use error::{Error, Result};

// The guide's snippets run as doc-tests through these modules.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/array-model.md")]
    mod array_model {}
    #[doc = include_str!("../../../book/src/codeword-synthesis.md")]
    mod codeword_synthesis {}
    #[doc = include_str!("../../../book/src/codebooks.md")]
    mod codebooks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/beamforming.md")]
    mod beamforming {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
