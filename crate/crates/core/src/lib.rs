//! Transfer-entropy driver selection and direction classification of a
//! target series.
//!
//! The pipeline: clean a price panel ([`prep`]), estimate transfer entropy
//! from candidate drivers with the KSG estimator ([`ksg`]), keep the drivers
//! whose flow survives a permutation test ([`sig`], [`select`]), assemble
//! windowed feature sets ([`dataset`]), and train/evaluate small recurrent and
//! convolutional classifiers ([`net`], [`metrics`]).

pub mod config;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod knn;
pub mod net;
pub mod ksg;
pub mod metrics;
pub mod oracle;
pub mod panel;
pub mod pipeline;
pub mod prep;
pub mod seed;
pub mod select;
pub mod sig;

pub use error::{Error, Result};
pub use panel::Panel;
