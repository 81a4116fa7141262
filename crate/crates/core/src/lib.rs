//! Treebank tooling and small neural baselines for tagging, parsing and
//! lemmatizing Ancient Greek, plus corpus curation and knowledge probes.

pub mod cli;
pub mod config;
pub mod conllu;
pub mod encoder;
pub mod error;
pub mod forge;
pub mod lemma;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod parser;
pub mod probing;
pub mod subword;
pub mod tagging;
pub mod train;

pub use error::{Error, Result};
