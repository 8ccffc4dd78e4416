//! Human-in-the-loop active learning for flow-record intrusion detection.
//!
//! The loop trains a learner on the labels gathered so far, asks a query
//! strategy which unlabeled flows the annotator should label next, folds the
//! answers back in and stops once precision and recall on a held-out split
//! both clear their thresholds.

pub mod bench;
pub mod dataset;
pub mod error;
pub mod learner;
pub mod outlier;
pub mod query;
pub mod session;
pub mod synth;

pub use error::{Error, Result};
