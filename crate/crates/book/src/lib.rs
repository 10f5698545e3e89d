//! The guide in `book/`, compiled so its snippets run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/formulation.md")]
pub mod formulation {}

#[doc = include_str!("../../../book/src/pair-scoring.md")]
pub mod pair_scoring {}

#[doc = include_str!("../../../book/src/dataset.md")]
pub mod dataset {}

#[doc = include_str!("../../../book/src/encoder.md")]
pub mod encoder {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
