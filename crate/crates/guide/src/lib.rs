//! The guide in `book/`, compiled so its snippets run as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/multinary-units.md")]
pub mod multinary_units {}

#[doc = include_str!("../../../book/src/contrastive-loss.md")]
pub mod contrastive_loss {}

#[doc = include_str!("../../../book/src/sampling.md")]
pub mod sampling {}

#[doc = include_str!("../../../book/src/stacks.md")]
pub mod stacks {}

#[doc = include_str!("../../../book/src/data-and-checkpoints.md")]
pub mod data_and_checkpoints {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
