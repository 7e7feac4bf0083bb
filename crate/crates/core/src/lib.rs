//! Toolkit for working with LaTeX math formulas: lexing and parsing,
//! structural statistics, sub-formula decomposition and crop planning,
//! equivalence-aware recognition metrics, corpus handling with a
//! constructive synthesizer, and a small numerical core for feature
//! fusion experiments.

pub mod ast;
pub mod corpus;
pub mod eval;
pub mod fusion;
pub mod lexer;
pub mod subformula;
