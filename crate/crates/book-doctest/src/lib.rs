//! Each chapter of the guide is attached to an item below, so `cargo test`
//! runs its code blocks as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub struct Introduction;

#[doc = include_str!("../../../book/src/data.md")]
pub struct Data;

#[doc = include_str!("../../../book/src/preprocessing.md")]
pub struct Preprocessing;

#[doc = include_str!("../../../book/src/model.md")]
pub struct Model;

#[doc = include_str!("../../../book/src/training.md")]
pub struct Training;

#[doc = include_str!("../../../book/src/evaluation.md")]
pub struct Evaluation;

#[doc = include_str!("../../../book/src/cli.md")]
pub struct Cli;
