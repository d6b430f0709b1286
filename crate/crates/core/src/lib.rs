//! Full-body pedestrian de-identification and its evaluation suite.

pub mod assign;
pub mod baselines;
pub mod checkpoint;
pub mod deid;
pub mod dettrack;
pub mod downstream;
pub mod error;
pub mod experiment;
pub mod ident;
pub mod image;
pub mod losses;
pub mod manifest;
pub mod person2scene;
pub mod pose2person;
pub mod privacy;
pub mod pyramid;
pub mod rng;
pub mod scene;

pub use error::{Error, Result};
