//! Identifiability analysis for bilinear inverse problems through the lifted
//! rank-one matrix formulation.

pub mod bounds;
pub mod ensembles;
pub mod error;
pub mod experiments;
pub mod identifiability;
pub mod linalg;
pub mod null_space;
pub mod operator;
pub mod solver;

pub use error::{Error, Result};

/// Book chapters, compiled as doctests so their snippets stay in sync.
#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/lifting.md")]
    pub mod lifting {}
    #[doc = include_str!("../../../book/src/null_spaces.md")]
    pub mod null_spaces {}
    #[doc = include_str!("../../../book/src/ensembles.md")]
    pub mod ensembles {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    pub mod bounds {}
    #[doc = include_str!("../../../book/src/solver.md")]
    pub mod solver {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
