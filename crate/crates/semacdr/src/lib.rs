//! Cross-domain sequential recommendation with LLM-derived multi-view item
//! semantics.
//!
//! The pipeline: ingest two domains of interaction logs ([`corpus`]), extract
//! per-item semantic profiles through an LLM client and encode free-text
//! summaries ([`semantics`]), maintain multi-view item/user embeddings with
//! contrastive alignment ([`representation`]), propagate them over
//! co-interaction and bipartite graphs ([`graph`]), encode source/target/mixed
//! behavior sequences with causal Transformers fused by cross-attention
//! ([`sequence`]), train the assembled scorer with a pairwise ranking loss
//! ([`model`]), and evaluate with the leave-one-out sampled-negative protocol
//! ([`eval`]). [`pipeline`] wires these behind the CLI commands.
//!
//! All numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the CLI and the type aliases below use `f64`.

pub mod autodiff;
pub mod corpus;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod params;
pub mod rng;
pub mod representation;
pub mod semantics;
pub mod sequence;
pub mod scalar;

pub use linalg::Matrix;
pub use scalar::Scalar;
