//! Tokenized graph learning at desk scale.
//!
//! A graph node is summarized as a short list of tokens that an attention
//! layer then mixes into a single representation. This crate provides:
//!
//! * fixed, parameter-free token templates — a hop-overview list (iterated
//!   neighborhood means) and a neighborhood-detail list (a sampled,
//!   fixed-shape computational tree), plus a raw single-token baseline
//!   ([`templates`]);
//! * exact arbitrary-precision hop-contribution tables describing how those
//!   templates mix hop neighborhoods, with closed-form spot values, parity /
//!   decay / growth structure checks, and effective-attention decompositions
//!   ([`hopmatrix`]);
//! * a scaled-dot-product attention layer and smoothness bounds that predict
//!   how far a node's mixed representation can drift from its own features
//!   ([`attention`], [`bounds`]);
//! * a learnable tokenizer — a gate scoring hop distances and a selection
//!   module scoring sampled hop members — together with exact specializations
//!   that reproduce both fixed templates, cluster-token extension via
//!   personalized PageRank, and a frozen-backbone variant ([`lgtl`]);
//! * full-batch gradient-descent training with hand-derived reverse-mode
//!   gradients, finite-difference verification, ablations, and F1 metrics
//!   ([`train`]);
//! * deterministic experiment suites over synthetic block-model families
//!   with CSV reports ([`experiments`]).
//!
//! Everything stochastic draws from explicitly seeded counter-based
//! generators ([`rng`]); repeated runs reproduce results byte-for-byte.

pub mod error;
pub mod rng;
pub mod parallel;
pub mod graph;
pub mod synth;
pub mod io;
pub mod hopmatrix;
pub mod templates;
pub mod attention;
pub mod bounds;
pub mod lgtl;
pub mod train;
pub mod experiments;

pub use error::{Error, Result};
