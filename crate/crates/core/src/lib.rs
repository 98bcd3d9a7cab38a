//! Short-answer grading: answer preprocessing, bag-of-words clustering,
//! keyword Hamming scoring and a fitted mark model compared against the
//! teachers' own agreement.

pub mod cluster;
pub mod corpus;
pub mod error;
pub mod grade;
pub mod pipeline;
pub mod raw;
pub mod report;
pub mod store;
pub mod text;
pub mod vectorize;

pub use error::{Error, Result};

/// The guide's chapters, compiled so their listings run as doc-tests.
#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/preprocessing.md")]
    pub mod preprocessing {}
    #[doc = include_str!("../../../book/src/vectors.md")]
    pub mod vectors {}
    #[doc = include_str!("../../../book/src/clustering.md")]
    pub mod clustering {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    pub mod scoring {}
    #[doc = include_str!("../../../book/src/mark-model.md")]
    pub mod mark_model {}
    #[doc = include_str!("../../../book/src/runs.md")]
    pub mod runs {}
    #[doc = include_str!("../../../book/src/review.md")]
    pub mod review {}
}
