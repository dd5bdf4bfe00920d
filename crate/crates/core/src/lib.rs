//! Core algorithms for auditing what separates two groups of images in the
//! latent space of an unconditional generator.
//!
//! The pipeline is: render or load a cohort, train a generator and a binary
//! attribute classifier, project real images to latent codes, keep the
//! projections whose reconstructions the classifier labels correctly, fit a
//! maximum-margin hyperplane between the two classes, and walk along its
//! normal to produce counterfactual image sequences.
//!
//! This crate is `no_std` (it needs `alloc`). Everything that touches the
//! file system lives in the `latentaudit` crate. Enable the `std` feature to
//! let the matrix kernels pick SIMD paths at runtime.
#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > eps)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod auroc;
pub mod classifier;
pub mod direction;
pub mod error;
pub mod gan;
pub mod image;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod projection;
pub mod rng;
pub mod svm;
pub mod synth;
pub mod traverse;

pub use error::{Error, Result};
pub use image::ImageTensor;

#[inline]
pub(crate) fn sq(x: f64) -> f64 {
    x * x
}
