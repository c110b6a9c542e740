// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffcore;
pub mod dsp;
pub mod harness;
pub mod model;
pub mod saliency;
pub mod signalio;
