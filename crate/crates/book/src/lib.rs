//! Guide listings are included here as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/houses.md")]
pub mod houses {}

#[doc = include_str!("../../../book/src/spatial.md")]
pub mod spatial {}

#[doc = include_str!("../../../book/src/rendering.md")]
pub mod rendering {}

#[doc = include_str!("../../../book/src/environment.md")]
pub mod environment {}

#[doc = include_str!("../../../book/src/nn.md")]
pub mod nn {}

#[doc = include_str!("../../../book/src/agents.md")]
pub mod agents {}

#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
