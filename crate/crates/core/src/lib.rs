//! Formula embedding benchmark core.
//!
//! Expressions are parsed from s-expressions ([`sexpr`]), turned into shared
//! DAGs ([`graph`]) or token sequences ([`vocab`]), and embedded by the
//! architectures in [`models`], which run on the small reverse-mode engine in
//! [`tensor`]. [`data`] builds supervised datasets from synthetic corpora and
//! [`prover`] hosts the proving environment, search drivers and RL loop.

pub mod data;
pub mod graph;
pub mod models;
pub mod prover;
pub mod sexpr;
pub mod tensor;
pub mod vocab;
