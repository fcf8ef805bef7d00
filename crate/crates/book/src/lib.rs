//! Runs every Rust listing in `book/src` as a doc-test. One module per
//! chapter, so a failing listing names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/graphs.md")]
pub mod graphs {}

#[doc = include_str!("../../../book/src/paths.md")]
pub mod paths {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/baselines.md")]
pub mod baselines {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/reproducing.md")]
pub mod reproducing {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
