//! Semi-supervised classification with deterministic labeling: build a
//! leading forest over the data, pick the most representative and most
//! divergent samples to annotate, learn a kernelized large-margin
//! projection from just those samples, and classify the rest by nearest
//! neighbor in the projected space. A non-iterative label-propagation
//! baseline over the same forest and a benchmark harness are included.

// numeric kernels index parallel arrays and symmetric halves directly, and
// `!(x > 0.0)` rejects NaN where `x <= 0.0` would let it through
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod forest;
pub mod klmca;
pub mod labeling;
pub mod lapoleaf;
pub mod linalg;
pub mod multimetric;
pub mod bench;
pub mod pipeline;
