//! Alignment-aware RNN transducer toolkit for nested named-entity recognition.
//!
//! The crate is organised bottom-up:
//!
//! - [`lattice`]: log-space alignment lattice, forward-backward, and the
//!   unconstrained, fixed and constrained alignment losses with their gradients.
//! - [`decoder`]: frame-synchronous beam search and span reconstruction from
//!   begin labels and end markers.
//! - [`model`]: desk-scale transcription, prediction and joint networks with
//!   hand-written reverse-mode gradients, plus the hard-attention seq-to-seq
//!   variant.
//! - [`corpus`]: synthetic nested-NER corpora, gold alignments and random
//!   segment cutting.
//! - [`metrics`]: local (position-aware) and global span F1.
//! - [`trainer`]: training loop, pseudo-labeling and the scripted experiments.
//! - [`verify`]: brute-force and finite-difference self-checks.

pub mod corpus;
pub mod decoder;
pub mod error;
pub mod lattice;
pub mod logspace;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
