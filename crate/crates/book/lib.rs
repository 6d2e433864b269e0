//! Runs the code listings of the guide in `book/src` as doc-tests.

#[doc = include_str!("../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../book/src/membership.md")]
pub mod membership {}

#[doc = include_str!("../../book/src/detector.md")]
pub mod detector {}

#[doc = include_str!("../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../book/src/acceptance.md")]
pub mod acceptance {}
