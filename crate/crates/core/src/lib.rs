//! Ordinal pooling for convolutional networks.
//!
//! An ordinal pooling layer sorts each pooling region in descending order
//! and takes a weighted sum with one learned weight per rank and channel.
//! The crate implements it next to max, average and location-weighted
//! pooling, with exact backward passes, a finite-difference checker and a
//! small MNIST training harness.
//!
//! ```
//! use ordpool::pooling::{opn_forward, PoolSpec, RankWeights};
//! use ordpool::Tensor4;
//!
//! let x = Tensor4::from_vec((1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0])?;
//! let w = RankWeights::from_row(1, &[0.4, 0.3, 0.2, 0.1])?;
//! let (y, _perm) = opn_forward(&x, &PoolSpec::default(), &w)?;
//! assert_eq!(y.as_slice(), &[3.0]);
//! # Ok::<(), ordpool::Error>(())
//! ```

pub mod data;
mod error;
pub mod export;
pub mod gradcheck;
pub mod layers;
mod linalg;
pub mod pooling;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use pooling::{LocationWeights, PoolSpec, PoolingKind, RankWeights};
pub use tensor::{Dims, Tensor4};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pooling.md")]
    mod pooling {}
    #[doc = include_str!("../../../book/src/ordinal.md")]
    mod ordinal {}
    #[doc = include_str!("../../../book/src/gradients.md")]
    mod gradients {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
}
