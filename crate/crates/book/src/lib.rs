//! The guide under `book/src`, included chapter by chapter so that
//! `cargo test` runs its snippets.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/encoding.md")]
pub mod encoding {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/attribution.md")]
pub mod attribution {}

#[doc = include_str!("../../../book/src/fidelity.md")]
pub mod fidelity {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
