//! Comparative-judgment evaluation of teacher replies in educational
//! dialogues: item preparation, candidate reply generation, pairwise survey
//! logic, Bayesian Bradley-Terry inference and summary statistics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod bt;
pub mod corpus;
pub mod generation;
pub mod pipeline;
pub mod records;
pub mod report;
pub mod screening;
pub mod seed;
pub mod simulate;
pub mod stats;
pub mod survey;
pub mod tokenize;
