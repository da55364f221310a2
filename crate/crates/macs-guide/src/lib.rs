//! The book under `book/` rendered as rustdoc modules.
//!
//! mdBook does not compile Rust code fences; rustdoc does. Including each
//! chapter as a module's documentation makes `cargo test --doc` build and
//! run every example in the guide, so the book cannot drift from the
//! library's actual API or numerical behavior. One module per chapter
//! keeps doc-test failures attributable to their chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}

#[doc = include_str!("../../../book/src/value-cones.md")]
pub mod value_cones {}

#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}

#[doc = include_str!("../../../book/src/expansion.md")]
pub mod expansion {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/oracles.md")]
pub mod oracles {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
