//! Numerical core for unsupervised object-part discovery.
//!
//! A single trainable part layer sits on top of frozen backbone feature
//! maps. Training supervises it with pseudo labels obtained by aligning the
//! part-response maps of visually similar images onto each training image
//! and reading off their coherent peaks. This crate holds every numerical
//! stage of that loop and is `no_std` (it only needs `alloc`):
//!
//! - [`tensor`]: the [`FeatureMap`] container, bilinear resizing and
//!   spatial max-normalization.
//! - [`similarity`]: Jensen-Shannon divergence between maps and top-k pool
//!   retrieval.
//! - [`alignment`]: cosine matching, RANSAC transform estimation and
//!   inverse warping.
//! - [`pseudo_gt`]: masked averaging and iterative peak labelling.
//! - [`part_layer`]: cluster initialization, forward pass, NLL loss and
//!   Adagrad.
//! - [`pipeline`]: one training step end to end, including the backward
//!   pass through averaging and warping.
//! - [`detect`] and [`eval`]: peak anchors, NMS, AP and landmark regression.
//! - [`synth`]: deterministic synthetic scenes and reference oracles.
//!
//! File formats, orchestration over a dataset and the command line live in
//! the companion `partdisc` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod alignment;
pub mod config;
pub mod detect;
mod error;
pub mod eval;
pub mod linalg;
mod math;
pub mod part_layer;
pub mod pipeline;
pub mod pseudo_gt;
pub mod similarity;
pub mod synth;
pub mod tensor;

pub use config::{TrainConfig, TransformFamily};
pub use error::{Error, Result};
pub use tensor::FeatureMap;

/// Mixes a base seed with a stream of indices into an independent seed.
///
/// Used wherever randomness is split per (epoch, image, pool member) so that
/// results do not depend on evaluation order.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        state = splitmix64(state ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
