//! Disease-onset prediction from quarterly EHR code counts with a
//! self-attentive Bi-GRU network, plus the surrounding pipeline: synthetic
//! cohort construction, baseline models, threshold-free evaluation and
//! attention-derived feature importance.

pub mod error;
pub mod interpret;
pub mod baselines;
pub mod cohort;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod par;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
