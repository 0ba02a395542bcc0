//! The chapters of `book/` as modules, so `cargo test` runs their samples.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/boundaries.md")]
pub mod boundaries {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/adaptation.md")]
pub mod adaptation {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
