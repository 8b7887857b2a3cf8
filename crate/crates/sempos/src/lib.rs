//! Part-of-speech supervised video captioning, end to end and from scratch:
//! a reverse-mode autodiff engine, recurrent/attention layers, POS-guided
//! encoder blocks with global-local fusion, visual feature masking, caption
//! quality metrics, and a deterministic training harness.
//!
//! Start with the runnable programs under `examples/` — each one exercises a
//! major capability top to bottom — or with the `sempos` command-line tool
//! for the file-based workflow (synthesize a corpus, train, evaluate,
//! caption, ablate).

pub mod autodiff;
pub mod data;
pub mod layers;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod train;
pub mod rng;
pub mod vocab;
