//! Geometric-algebra equivariant radiance fields for wireless channel
//! prediction.
//!
//! The crate bundles everything needed to train and evaluate the model on a
//! desk: an exact Clifford-algebra kernel ([`ga`]), an equivariant
//! transformer encoder ([`equi`]), a multi-view tokenizer ([`tokenizer`]),
//! the ray-in-ray-out field networks ([`radiance`]), classic and
//! attention-based rendering heads ([`render`]), a synthetic indoor RF
//! simulator that generates ground truth ([`sim`]), and a training pipeline
//! with a property-tested reverse-mode gradient engine ([`tape`],
//! [`pipeline`]).
//!
//! The accompanying guide in `book/` walks through each concept with
//! runnable snippets; those snippets double as doc-tests (see the `book`
//! module below).

pub mod c64;
pub mod cli;
pub mod equi;
pub mod error;
pub mod ga;
pub mod pipeline;
pub mod radiance;
pub mod render;
pub mod rng;
pub mod sim;
pub mod tape;
pub mod tokenizer;

pub use error::{Error, Result};

// Book chapters contain runnable snippets; compiling them as doc-tests keeps
// the guide in sync with the library (`cargo test --doc`).
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometric-algebra.md")]
    mod geometric_algebra {}
    #[doc = include_str!("../../../book/src/equivariant-encoder.md")]
    mod equivariant_encoder {}
    #[doc = include_str!("../../../book/src/tokenizer.md")]
    mod tokenizer {}
    #[doc = include_str!("../../../book/src/ray-model.md")]
    mod ray_model {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
